//! Nearest-neighbour estimators of conditional means and variances.
//!
//! Conditional variance uses a leave-one-out local-linear fit: for point `i`
//! the response is regressed on `[1, x − xᵢ]` over its `k` nearest other
//! points, and the squared residual `‖yᵢ − â‖²` is divided by `1 + ℓᵢ`, where
//! `ℓᵢ = ((XᵀX)⁻¹)₀₀` is the variance factor of the intercept. Under locally
//! homoscedastic noise this is unbiased for `tr Var(Y | X = xᵢ)` up to the
//! curvature of the mean within the neighbourhood.

use kdtree::distance::squared_euclidean;
use kdtree::KdTree;
use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, invalid, Result};

/// `k = ⌈√n⌉`.
pub fn default_k(n: usize) -> usize {
    (n as f64).sqrt().ceil() as usize
}

fn check(x: &[f64], y: &[f64], dx: usize, dy: usize, k: usize) -> Result<usize> {
    if dx == 0 || dy == 0 || !x.len().is_multiple_of(dx) || !y.len().is_multiple_of(dy) {
        return Err(dim_err("flat arrays must be multiples of their dimensions"));
    }
    let n = x.len() / dx;
    if y.len() / dy != n {
        return Err(dim_err("inputs and responses differ in count"));
    }
    if k == 0 || k >= n {
        return Err(invalid(format!("k = {k} must lie in 1..{n}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(invalid("non-finite sample"));
    }
    Ok(n)
}

/// Local-linear fit over `nbrs` centred at `center`. Returns the intercept
/// and its variance factor, falling back to the neighbour mean (factor
/// `1/k`) when the design is singular.
fn local_linear(x: &[f64], y: &[f64], dx: usize, dy: usize, center: &[f64], nbrs: &[usize]) -> (DVector<f64>, f64) {
    let p = dx + 1;
    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut xty = DMatrix::<f64>::zeros(p, dy);
    let mut row = vec![0.0; p];
    row[0] = 1.0;
    for &j in nbrs {
        for a in 0..dx {
            row[a + 1] = x[j * dx + a] - center[a];
        }
        for a in 0..p {
            for b in 0..p {
                xtx[(a, b)] += row[a] * row[b];
            }
            for c in 0..dy {
                xty[(a, c)] += row[a] * y[j * dy + c];
            }
        }
    }
    if let Some(ch) = xtx.clone().cholesky() {
        let beta = ch.solve(&xty);
        let inv = ch.inverse();
        if inv[(0, 0)].is_finite() && inv[(0, 0)] > 0.0 {
            return (beta.row(0).transpose(), inv[(0, 0)]);
        }
    }
    let k = nbrs.len() as f64;
    (xty.row(0).transpose() / k, 1.0 / k)
}

fn residual_q(y: &[f64], dy: usize, i: usize, fit: &(DVector<f64>, f64)) -> f64 {
    let r2: f64 = (0..dy).map(|c| (y[i * dy + c] - fit.0[c]).powi(2)).sum();
    r2 / (1.0 + fit.1)
}

/// Per-point estimates of `tr Var(Y | X = xᵢ)`; their mean estimates
/// `E[tr Var(Y | X)]`. `x` is `n × dx` and `y` is `n × dy`, row-major.
pub fn knn_condvar(x: &[f64], y: &[f64], dx: usize, dy: usize, k: usize) -> Result<Vec<f64>> {
    let n = check(x, y, dx, dy, k)?;
    if dx == 1 {
        return Ok(condvar_1d(x, y, dy, k));
    }
    let mut tree = KdTree::with_capacity(dx, n);
    for i in 0..n {
        tree.add(x[i * dx..(i + 1) * dx].to_vec(), i)
            .map_err(|e| invalid(format!("k-d tree: {e:?}")))?;
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let c = &x[i * dx..(i + 1) * dx];
        let found = tree
            .nearest(c, k + 1, &squared_euclidean)
            .map_err(|e| invalid(format!("k-d tree: {e:?}")))?;
        let nbrs: Vec<usize> = found.iter().map(|(_, &j)| j).filter(|&j| j != i).take(k).collect();
        let fit = local_linear(x, y, dx, dy, c, &nbrs);
        out.push(residual_q(y, dy, i, &fit));
    }
    Ok(out)
}

/// One-dimensional inputs: the `k + 1` nearest points of a sorted sample form
/// a contiguous window whose start never decreases, so windows are found by
/// a sliding pointer.
fn condvar_1d(x: &[f64], y: &[f64], dy: usize, k: usize) -> Vec<f64> {
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let xs: Vec<f64> = order.iter().map(|&i| x[i]).collect();
    let ys: Vec<f64> = order
        .iter()
        .flat_map(|&i| y[i * dy..(i + 1) * dy].iter().copied())
        .collect();
    let mut out = vec![0.0; n];
    let mut l = 0usize;
    let mut w = Window::new(&xs, &ys, dy, 0, k + 1, xs[0]);
    let mut since_rebuild = 0;
    for s in 0..n {
        let before = l;
        l = l.max(s.saturating_sub(k)).min(n - k - 1);
        while l < s && l + k + 1 < n && xs[l + k + 1] - xs[s] < xs[s] - xs[l] {
            l += 1;
        }
        since_rebuild += l - before;
        if since_rebuild >= k {
            // Re-anchor to bound rounding drift from the running sums.
            w = Window::new(&xs, &ys, dy, l, l + k + 1, xs[s]);
            since_rebuild = 0;
        } else {
            for j in before..l {
                w.update(&xs, &ys, j, -1.0);
                w.update(&xs, &ys, j + k + 1, 1.0);
            }
        }
        out[order[s]] = w.loo_residual(&xs, &ys, s);
    }
    out
}

/// Running sums over a sorted window, with `x` measured from `anchor`.
struct Window {
    dy: usize,
    anchor: f64,
    count: f64,
    sx: f64,
    sxx: f64,
    sy: Vec<f64>,
    sxy: Vec<f64>,
}

impl Window {
    fn new(xs: &[f64], ys: &[f64], dy: usize, lo: usize, hi: usize, anchor: f64) -> Self {
        let mut w = Self {
            dy,
            anchor,
            count: 0.0,
            sx: 0.0,
            sxx: 0.0,
            sy: vec![0.0; dy],
            sxy: vec![0.0; dy],
        };
        for j in lo..hi {
            w.update(xs, ys, j, 1.0);
        }
        w
    }

    fn update(&mut self, xs: &[f64], ys: &[f64], j: usize, sign: f64) {
        let v = xs[j] - self.anchor;
        self.count += sign;
        self.sx += sign * v;
        self.sxx += sign * v * v;
        for c in 0..self.dy {
            let yv = ys[j * self.dy + c];
            self.sy[c] += sign * yv;
            self.sxy[c] += sign * v * yv;
        }
    }

    /// Leave-one-out local-linear residual of point `i` from the sums.
    fn loo_residual(&self, xs: &[f64], ys: &[f64], i: usize) -> f64 {
        let dy = self.dy;
        let vi = xs[i] - self.anchor;
        let k = self.count - 1.0;
        // Sums without point i, then shifted so that x_i sits at zero.
        let sx = self.sx - vi;
        let sxx = self.sxx - vi * vi;
        let s1 = sx - k * vi;
        let s2 = (sxx - 2.0 * vi * sx + k * vi * vi).max(0.0);
        let det = k * s2 - s1 * s1;
        let singular = !(det > 1e-12 * k * s2);
        let mut r2 = 0.0;
        for c in 0..dy {
            let yi = ys[i * dy + c];
            let sy = self.sy[c] - yi;
            let suy = (self.sxy[c] - vi * yi) - vi * sy;
            let a = if singular { sy / k } else { (s2 * sy - s1 * suy) / det };
            r2 += (yi - a).powi(2);
        }
        let lev = if singular { 1.0 / k } else { s2 / det };
        r2 / (1.0 + lev)
    }
}

/// Scalar form of [`local_linear`] followed by [`residual_q`] over the
/// sorted window `lo..hi` without point `i`.
#[cfg(test)]
fn local_linear_1d(xs: &[f64], ys: &[f64], dy: usize, i: usize, lo: usize, hi: usize) -> f64 {
    let k = (hi - lo - 1) as f64;
    let xi = xs[i];
    let (mut s1, mut s2) = (0.0, 0.0);
    for j in (lo..hi).filter(|&j| j != i) {
        let u = xs[j] - xi;
        s1 += u;
        s2 += u * u;
    }
    let det = k * s2 - s1 * s1;
    // Coincident neighbours leave the slope unidentified.
    let singular = !(det > 1e-12 * k * s2);
    let mut r2 = 0.0;
    for c in 0..dy {
        let (mut sy, mut suy) = (0.0, 0.0);
        for j in (lo..hi).filter(|&j| j != i) {
            let v = ys[j * dy + c];
            sy += v;
            suy += (xs[j] - xi) * v;
        }
        let a = if singular { sy / k } else { (s2 * sy - s1 * suy) / det };
        r2 += (ys[i * dy + c] - a).powi(2);
    }
    let lev = if singular { 1.0 / k } else { s2 / det };
    r2 / (1.0 + lev)
}

/// k-NN average of `y` around `query` with the standard error of each
/// component, `sd/√k`.
pub struct KnnMean {
    pub mean: DVector<f64>,
    pub stderr: DVector<f64>,
}

/// Indexes `x` once and answers local-average queries.
pub struct KnnRegressor<'a> {
    tree: KdTree<f64, usize, Vec<f64>>,
    y: &'a [f64],
    dy: usize,
    k: usize,
}

impl<'a> KnnRegressor<'a> {
    pub fn new(x: &[f64], y: &'a [f64], dx: usize, dy: usize, k: usize) -> Result<Self> {
        let n = check(x, y, dx, dy, k)?;
        let mut tree = KdTree::with_capacity(dx, n);
        for i in 0..n {
            tree.add(x[i * dx..(i + 1) * dx].to_vec(), i)
                .map_err(|e| invalid(format!("k-d tree: {e:?}")))?;
        }
        Ok(Self { tree, y, dy, k })
    }

    pub fn mean_at(&self, query: &[f64]) -> Result<KnnMean> {
        let found = self
            .tree
            .nearest(query, self.k, &squared_euclidean)
            .map_err(|e| invalid(format!("k-d tree: {e:?}")))?;
        let k = found.len() as f64;
        let mut mean = DVector::<f64>::zeros(self.dy);
        let mut sq = DVector::<f64>::zeros(self.dy);
        for (_, &j) in &found {
            for c in 0..self.dy {
                let v = self.y[j * self.dy + c];
                mean[c] += v;
                sq[c] += v * v;
            }
        }
        mean /= k;
        let stderr = DVector::from_fn(self.dy, |c, _| {
            let var = (sq[c] / k - mean[c] * mean[c]).max(0.0) * k / (k - 1.0).max(1.0);
            (var / k).sqrt()
        });
        Ok(KnnMean { mean, stderr })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn running_sums_match_direct_fits() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 3000;
        // Offset far from zero to exercise the re-anchoring.
        let x: Vec<f64> = (0..n).map(|_| 50.0 + rng.sample::<f64, _>(StandardNormal)).collect();
        let y: Vec<f64> = x
            .iter()
            .flat_map(|&v| [v.sin() + rng.random_range(-0.3..0.3), v * v * 0.01])
            .collect();
        let k = default_k(n);
        let fast = knn_condvar(&x, &y, 1, 2, k).unwrap();

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
        let xs: Vec<f64> = order.iter().map(|&i| x[i]).collect();
        let ys: Vec<f64> = order
            .iter()
            .flat_map(|&i| y[2 * i..2 * i + 2].iter().copied())
            .collect();
        let mut l = 0usize;
        for s in 0..n {
            l = l.max(s.saturating_sub(k)).min(n - k - 1);
            while l < s && l + k + 1 < n && xs[l + k + 1] - xs[s] < xs[s] - xs[l] {
                l += 1;
            }
            let direct = local_linear_1d(&xs, &ys, 2, s, l, l + k + 1);
            let got = fast[order[s]];
            assert!(
                (got - direct).abs() <= 1e-8 * (1.0 + direct.abs()),
                "{s}: {got} vs {direct}"
            );
        }
    }

    #[test]
    fn heteroscedastic_1d() {
        // y = sin(x) + (0.5 + x²/4)·ε, x ~ U(−2, 2): E Var = E[(0.5 + x²/4)²].
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = 100_000;
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&v| v.sin() + (0.5 + v * v / 4.0) * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let q = knn_condvar(&x, &y, 1, 1, default_k(n)).unwrap();
        let truth = stats::simpson(|v| (0.5 + v * v / 4.0f64).powi(2) / 4.0, -2.0, 2.0, 200);
        let se = (stats::variance(&q) / n as f64).sqrt();
        assert!(
            (stats::mean(&q) - truth).abs() < 3.0 * se,
            "{} vs {truth} ± {se}",
            stats::mean(&q)
        );
    }

    #[test]
    fn deterministic_response_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 2000;
        let x: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|i| 3.0 * x[2 * i] - x[2 * i + 1] + 1.0).collect();
        let q = knn_condvar(&x, &y, 2, 1, default_k(n)).unwrap();
        assert!(q.iter().all(|v| *v < 1e-18));
    }

    #[test]
    fn two_dim_constant_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 20_000;
        let x: Vec<f64> = (0..2 * n).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<f64> = (0..n)
            .flat_map(|i| {
                let e: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
                [x[2 * i] + 0.3 * e[0], x[2 * i + 1] * x[2 * i] + 0.4 * e[1]]
            })
            .collect();
        let q = knn_condvar(&x, &y, 2, 2, default_k(n)).unwrap();
        let se = (stats::variance(&q) / n as f64).sqrt();
        let truth = 0.09 + 0.16;
        // Curvature of x₀x₁ biases upwards slightly; allow a small margin.
        assert!((stats::mean(&q) - truth).abs() < 3.0 * se + 0.01, "{}", stats::mean(&q));
    }

    #[test]
    fn regressor_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 10_000;
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|v| 2.0 * v + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let r = KnnRegressor::new(&x, &y, 1, 1, 100).unwrap();
        let m = r.mean_at(&[0.5]).unwrap();
        assert!((m.mean[0] - 1.0).abs() < 4.0 * m.stderr[0] + 0.02);
        assert!((m.stderr[0] - 0.1).abs() < 0.02);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(knn_condvar(&[0.0, 1.0], &[1.0], 1, 1, 1).is_err());
        assert!(knn_condvar(&[0.0, 1.0], &[1.0, 2.0], 1, 1, 2).is_err());
    }
}
