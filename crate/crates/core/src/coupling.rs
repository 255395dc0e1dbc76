//! Pairings of data and noise samples within a batch.
//!
//! * [`product_pair`] keeps the independent coupling.
//! * [`ot_pair`] minimizes total squared distance, exactly (Hungarian) or
//!   approximately (log-domain Sinkhorn rounded to a permutation).
//! * [`kabsch_align`] rigidly aligns point clouds before pairing.
//! * [`group_aligned_lift`] applies one shared random group element to both
//!   ends of each slice pair.

use std::io::Write;

use nalgebra::{DMatrix, Matrix2, Matrix3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, invalid, Result};
use crate::symgroup::{haar_rotation, FiniteGroupSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingMode {
    Product,
    OtExact,
    OtSinkhorn,
}

impl CouplingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Product => "product",
            Self::OtExact => "ot_exact",
            Self::OtSinkhorn => "ot_sinkhorn",
        }
    }
}

/// `pairs[k] = (data index, noise index)`; a bijection on the batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingPlan {
    pub pairs: Vec<(usize, usize)>,
    pub mode: CouplingMode,
    /// Total squared cost of the pairing.
    pub cost: f64,
}

impl CouplingPlan {
    /// `noise_for[i]` is the noise index paired with data item `i`.
    pub fn noise_for(&self) -> Vec<usize> {
        let mut out = vec![0; self.pairs.len()];
        for &(i, j) in &self.pairs {
            out[i] = j;
        }
        out
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Squared Euclidean cost matrix, checking sizes and finiteness.
pub fn cost_matrix(data: &[Vec<f64>], noise: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if data.len() != noise.len() {
        return Err(dim_err(format!(
            "{} data items vs {} noise items",
            data.len(),
            noise.len()
        )));
    }
    let d = data.first().map_or(0, Vec::len);
    if data.iter().chain(noise).any(|v| v.len() != d) {
        return Err(dim_err("items of different dimension"));
    }
    let n = data.len();
    let c = DMatrix::from_fn(n, n, |i, j| sq_dist(&data[i], &noise[j]));
    if c.iter().any(|v| !v.is_finite()) {
        return Err(invalid("non-finite cost"));
    }
    Ok(c)
}

/// The identity pairing.
pub fn product_pair(n: usize) -> CouplingPlan {
    CouplingPlan {
        pairs: (0..n).map(|i| (i, i)).collect(),
        mode: CouplingMode::Product,
        cost: 0.0,
    }
}

/// [`product_pair`] with its cost filled in.
pub fn product_pair_with_cost(data: &[Vec<f64>], noise: &[Vec<f64>]) -> Result<CouplingPlan> {
    let c = cost_matrix(data, noise)?;
    let mut plan = product_pair(data.len());
    plan.cost = (0..data.len()).map(|i| c[(i, i)]).sum();
    Ok(plan)
}

/// Largest batch accepted by the exact solver.
pub const MAX_EXACT: usize = 4096;

/// Optimal-transport pairing of two equal-size batches.
pub fn ot_pair(data: &[Vec<f64>], noise: &[Vec<f64>], mode: CouplingMode) -> Result<CouplingPlan> {
    let c = cost_matrix(data, noise)?;
    plan_from_cost(&c, mode)
}

/// Pairing for a precomputed cost matrix.
pub fn plan_from_cost(c: &DMatrix<f64>, mode: CouplingMode) -> Result<CouplingPlan> {
    let n = c.nrows();
    let assign = match mode {
        CouplingMode::Product => (0..n).collect(),
        CouplingMode::OtExact => {
            if n > MAX_EXACT {
                return Err(invalid(format!("exact OT supports at most {MAX_EXACT} items, got {n}")));
            }
            hungarian(c)
        }
        CouplingMode::OtSinkhorn => {
            // Rounding can lose to the identity; never return a worse plan.
            let a = sinkhorn_assignment(c, None, 200);
            let rounded: f64 = a.iter().enumerate().map(|(i, &j)| c[(i, j)]).sum();
            if rounded <= c.trace() {
                a
            } else {
                (0..n).collect()
            }
        }
    };
    let cost = assign.iter().enumerate().map(|(i, &j)| c[(i, j)]).sum();
    Ok(CouplingPlan {
        pairs: assign.into_iter().enumerate().collect(),
        mode,
        cost,
    })
}

/// Minimum-cost perfect assignment (`row i → column out[i]`) by successive
/// shortest augmenting paths with potentials, `O(n³)`.
pub fn hungarian(c: &DMatrix<f64>) -> Vec<usize> {
    let n = c.nrows();
    assert_eq!(n, c.ncols(), "square cost matrix required");
    if n == 0 {
        return Vec::new();
    }
    // 1-based arrays; column 0 is the virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = c[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=n {
        out[p[j] - 1] = j - 1;
    }
    out
}

fn logsumexp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Entropic OT plan with uniform marginals in the log domain. `reg` defaults
/// to `0.05 · median(cost)`.
pub fn sinkhorn_plan(c: &DMatrix<f64>, reg: Option<f64>, iters: usize) -> DMatrix<f64> {
    let n = c.nrows();
    let reg = reg.unwrap_or_else(|| {
        let mut v: Vec<f64> = c.iter().copied().collect();
        v.sort_by(f64::total_cmp);
        (0.05 * v[v.len() / 2]).max(1e-12)
    });
    let log_mu = -(n as f64).ln();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n];
    for _ in 0..iters {
        for i in 0..n {
            f[i] = reg * (log_mu - logsumexp((0..n).map(|j| (g[j] - c[(i, j)]) / reg)));
        }
        for j in 0..n {
            g[j] = reg * (log_mu - logsumexp((0..n).map(|i| (f[i] - c[(i, j)]) / reg)));
        }
    }
    DMatrix::from_fn(n, n, |i, j| ((f[i] + g[j] - c[(i, j)]) / reg).exp())
}

/// Rounds a Sinkhorn plan to a permutation: rows are visited in order of
/// their peak mass and take their best still-free column.
pub fn sinkhorn_assignment(c: &DMatrix<f64>, reg: Option<f64>, iters: usize) -> Vec<usize> {
    let n = c.nrows();
    if n == 0 {
        return Vec::new();
    }
    let plan = sinkhorn_plan(c, reg, iters);
    let peak: Vec<f64> = (0..n).map(|i| plan.row(i).max()).collect();
    let mut rows: Vec<usize> = (0..n).collect();
    rows.sort_by(|&a, &b| peak[b].total_cmp(&peak[a]).then(a.cmp(&b)));
    let mut taken = vec![false; n];
    let mut out = vec![0; n];
    for i in rows {
        let j = (0..n)
            .filter(|&j| !taken[j])
            .max_by(|&a, &b| plan[(i, a)].total_cmp(&plan[(i, b)]).then(b.cmp(&a)))
            .expect("a free column remains");
        taken[j] = true;
        out[i] = j;
    }
    out
}

/// Rotation `R ∈ SO(3)` minimizing `Σ‖targetᵢ − R·sourceᵢ‖²` (both clouds
/// centered), and the rotated source.
pub fn kabsch_align(target: &[[f64; 3]], source: &[[f64; 3]]) -> Result<(Matrix3<f64>, Vec<[f64; 3]>)> {
    if target.len() != source.len() {
        return Err(dim_err(format!(
            "{} target points vs {} source points",
            target.len(),
            source.len()
        )));
    }
    let mut h = Matrix3::zeros();
    for (t, s) in target.iter().zip(source) {
        h += Vector3::from(*s) * Vector3::from(*t).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let v = vt.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let aligned = source
        .iter()
        .map(|s| {
            let y = r * Vector3::from(*s);
            [y[0], y[1], y[2]]
        })
        .collect();
    Ok((r, aligned))
}

pub fn rmsd(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| crate::molecule::dist(x, y).powi(2)).sum();
    (s / a.len().max(1) as f64).sqrt()
}

/// OT pairing of coordinate clouds with equal atom counts. With `kabsch`,
/// each noise cloud is rotated onto its data cloud before costing, and the
/// rotated noise is returned.
pub fn ot_pair_clouds(
    data: &[Vec<[f64; 3]>],
    noise: &[Vec<[f64; 3]>],
    mode: CouplingMode,
    kabsch: bool,
) -> Result<(CouplingPlan, Vec<Vec<[f64; 3]>>)> {
    let n = data.len();
    if noise.len() != n {
        return Err(dim_err(format!("{n} data clouds vs {} noise clouds", noise.len())));
    }
    let mut aligned = vec![vec![Vec::new(); n]; n];
    let mut c = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if data[i].len() != noise[j].len() {
                return Err(dim_err("clouds of different sizes"));
            }
            let nz = if kabsch {
                kabsch_align(&data[i], &noise[j])?.1
            } else {
                noise[j].clone()
            };
            c[(i, j)] = data[i]
                .iter()
                .zip(&nz)
                .map(|(a, b)| crate::molecule::dist(a, b).powi(2))
                .sum();
            aligned[i][j] = nz;
        }
    }
    if c.iter().any(|v| !v.is_finite()) {
        return Err(invalid("non-finite cost"));
    }
    let plan = plan_from_cost(&c, mode)?;
    let noise_out = plan
        .pairs
        .iter()
        .map(|&(i, j)| std::mem::take(&mut aligned[i][j]))
        .collect();
    Ok((plan, noise_out))
}

/// Linear OT annealing: `p_OT(epoch) = max(0, 1 − epoch / max_epochs)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub max_epochs: usize,
}

impl AnnealSchedule {
    pub fn new(max_epochs: usize) -> Result<Self> {
        if max_epochs == 0 {
            return Err(invalid("max_epochs must be at least 1"));
        }
        Ok(Self { max_epochs })
    }
}

pub fn ot_probability(epoch: usize, sched: &AnnealSchedule) -> f64 {
    (1.0 - epoch as f64 / sched.max_epochs as f64).max(0.0)
}

/// Groups available to [`group_aligned_lift`].
#[derive(Debug, Clone)]
pub enum LiftGroup {
    Finite(FiniteGroupSpec),
    /// Uniform planar rotations.
    So2,
    /// Uniform spatial rotations.
    So3,
}

impl LiftGroup {
    pub fn dim(&self) -> usize {
        match self {
            Self::Finite(g) => g.dim(),
            Self::So2 => 2,
            Self::So3 => 3,
        }
    }

    /// Draws a uniform element as a `d × d` matrix.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        match self {
            Self::Finite(g) => g.elements[rng.random_range(0..g.order())].clone(),
            Self::So2 => {
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                let (s, c) = a.sin_cos();
                let m = Matrix2::new(c, -s, s, c);
                DMatrix::from_fn(2, 2, |i, j| m[(i, j)])
            }
            Self::So3 => {
                let m = haar_rotation(rng);
                DMatrix::from_fn(3, 3, |i, j| m[(i, j)])
            }
        }
    }
}

/// Maps each slice pair `(z̃₀, z̃₁)` to `(g·z̃₀, g·z̃₁)` with one uniform `g`
/// per pair.
pub fn group_aligned_lift<R: Rng + ?Sized>(
    pairs: &[(Vec<f64>, Vec<f64>)],
    group: &LiftGroup,
    rng: &mut R,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let d = group.dim();
    pairs
        .iter()
        .map(|(a, b)| {
            if a.len() != d || b.len() != d {
                return Err(dim_err(format!("pair entries must have dimension {d}")));
            }
            let g = group.sample(rng);
            let ga = &g * nalgebra::DVector::from_column_slice(a);
            let gb = &g * nalgebra::DVector::from_column_slice(b);
            Ok((ga.as_slice().to_vec(), gb.as_slice().to_vec()))
        })
        .collect()
}

/// One CSV row per coupling: `epoch,mode,cost`.
pub fn write_coupling_log<W: Write>(mut w: W, rows: &[(usize, CouplingMode, f64)]) -> std::io::Result<()> {
    writeln!(w, "epoch,mode,cost")?;
    for (epoch, mode, cost) in rows {
        writeln!(w, "{epoch},{},{cost}", mode.as_str())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn brute_force(c: &DMatrix<f64>) -> f64 {
        fn rec(c: &DMatrix<f64>, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            let n = c.nrows();
            if row == n {
                *best = best.min(acc);
                return;
            }
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    rec(c, row + 1, used, acc + c[(row, j)], best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(c, 0, &mut vec![false; c.nrows()], 0.0, &mut best);
        best
    }

    fn random_batch(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
            .collect()
    }

    #[test]
    fn product_examples() {
        assert_eq!(product_pair(3).pairs, vec![(0, 0), (1, 1), (2, 2)]);
        assert_eq!(product_pair(1).pairs, vec![(0, 0)]);
        let p = product_pair_with_cost(&[vec![0.0], vec![1.0]], &[vec![2.0], vec![1.0]]).unwrap();
        assert_eq!(p.cost, 4.0);
    }

    #[test]
    fn ot_two_point_example() {
        let p = ot_pair(&[vec![0.0], vec![10.0]], &[vec![9.0], vec![1.0]], CouplingMode::OtExact).unwrap();
        assert_eq!(p.pairs, vec![(0, 1), (1, 0)]);
        assert_eq!(p.cost, 2.0);
        let x = vec![vec![1.0, 2.0], vec![-3.0, 0.5], vec![0.0, 0.0]];
        let p = ot_pair(&x, &x, CouplingMode::OtExact).unwrap();
        assert_eq!(p.pairs, vec![(0, 0), (1, 1), (2, 2)]);
        assert_eq!(p.cost, 0.0);
    }

    #[test]
    fn hungarian_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for n in 1..=7 {
            for _ in 0..50 {
                let (a, b) = (random_batch(n, 3, &mut rng), random_batch(n, 3, &mut rng));
                let c = cost_matrix(&a, &b).unwrap();
                let plan = plan_from_cost(&c, CouplingMode::OtExact).unwrap();
                assert!((plan.cost - brute_force(&c)).abs() < 1e-9);
                let mut cols: Vec<usize> = plan.pairs.iter().map(|p| p.1).collect();
                cols.sort();
                assert_eq!(cols, (0..n).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn errors() {
        assert!(ot_pair(&[vec![0.0]], &[], CouplingMode::OtExact).is_err());
        assert!(ot_pair(&[vec![f64::NAN]], &[vec![0.0]], CouplingMode::OtExact).is_err());
        assert!(AnnealSchedule::new(0).is_err());
    }

    #[test]
    fn sinkhorn_is_a_bijection_and_near_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let (a, b) = (random_batch(30, 2, &mut rng), random_batch(30, 2, &mut rng));
            let exact = ot_pair(&a, &b, CouplingMode::OtExact).unwrap();
            let approx = ot_pair(&a, &b, CouplingMode::OtSinkhorn).unwrap();
            let ident = product_pair_with_cost(&a, &b).unwrap();
            let mut cols: Vec<usize> = approx.pairs.iter().map(|p| p.1).collect();
            cols.sort();
            assert_eq!(cols, (0..30).collect::<Vec<_>>());
            assert!(approx.cost >= exact.cost - 1e-9);
            assert!(approx.cost <= ident.cost);
            assert!(exact.cost <= ident.cost);
        }
    }

    #[test]
    fn sinkhorn_plan_marginals() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (a, b) = (random_batch(12, 2, &mut rng), random_batch(12, 2, &mut rng));
        let plan = sinkhorn_plan(&cost_matrix(&a, &b).unwrap(), None, 200);
        for i in 0..12 {
            assert!((plan.row(i).sum() - 1.0 / 12.0).abs() < 1e-6);
            assert!((plan.column(i).sum() - 1.0 / 12.0).abs() < 1e-9);
        }
    }

    #[test]
    fn kabsch_recovers_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = crate::toy::random_molecule(10, &mut rng);
        let r0 = haar_rotation(&mut rng);
        let target: Vec<[f64; 3]> = m
            .coords
            .iter()
            .map(|x| {
                let y = r0 * Vector3::from(*x);
                [y[0], y[1], y[2]]
            })
            .collect();
        let (r, aligned) = kabsch_align(&target, &m.coords).unwrap();
        assert!((r - r0).abs().max() < 1e-8);
        assert!(rmsd(&aligned, &target) < 1e-8);
        assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-10);
        assert!((r.determinant() - 1.0).abs() < 1e-10);
        let (ri, _) = kabsch_align(&m.coords, &m.coords).unwrap();
        assert!((ri - Matrix3::identity()).abs().max() < 1e-10);
    }

    #[test]
    fn kabsch_never_increases_rmsd() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let a = crate::toy::random_molecule(8, &mut rng);
            let b = crate::toy::random_molecule(8, &mut rng);
            let (r, aligned) = kabsch_align(&a.coords, &b.coords).unwrap();
            assert!(rmsd(&aligned, &a.coords) <= rmsd(&b.coords, &a.coords) + 1e-12);
            assert!((r.determinant() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn cloud_pairing_with_kabsch() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<_> = (0..4)
            .map(|_| crate::toy::random_molecule(6, &mut rng).coords)
            .collect();
        let noise: Vec<_> = data
            .iter()
            .rev()
            .map(|c| {
                let r = haar_rotation(&mut rng);
                c.iter()
                    .map(|x| {
                        let y = r * Vector3::from(*x);
                        [y[0], y[1], y[2]]
                    })
                    .collect()
            })
            .collect();
        let (plan, aligned) = ot_pair_clouds(&data, &noise, CouplingMode::OtExact, true).unwrap();
        assert_eq!(plan.pairs, vec![(0, 3), (1, 2), (2, 1), (3, 0)]);
        assert!(plan.cost < 1e-12);
        for (i, c) in aligned.iter().enumerate() {
            assert!(rmsd(c, &data[i]) < 1e-8);
        }
    }

    #[test]
    fn anneal_examples() {
        let s = AnnealSchedule::new(10).unwrap();
        assert_eq!(ot_probability(0, &s), 1.0);
        assert_eq!(ot_probability(10, &s), 0.0);
        assert_eq!(ot_probability(5, &s), 0.5);
        assert_eq!(ot_probability(50, &s), 0.0);
    }

    #[test]
    fn lift_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pairs = vec![(vec![1.0, 2.0], vec![3.0, 4.0])];
        let out = group_aligned_lift(&pairs, &LiftGroup::Finite(FiniteGroupSpec::trivial(2)), &mut rng).unwrap();
        assert_eq!(out, pairs);

        let n = 100_000;
        let pairs = vec![(vec![1.0], vec![0.0]); n];
        let out = group_aligned_lift(&pairs, &LiftGroup::Finite(FiniteGroupSpec::sign_flip()), &mut rng).unwrap();
        let plus = out.iter().filter(|p| p.0[0] == 1.0).count();
        assert!(out.iter().all(|p| p.0[0].abs() == 1.0 && p.1[0] == 0.0));
        let sd = (n as f64 * 0.25).sqrt();
        assert!((plus as f64 - n as f64 / 2.0).abs() < 4.0 * sd);
    }

    #[test]
    fn lift_isotropic_independence() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let pairs: Vec<_> = (0..n)
            .map(|_| {
                let z1: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
                (vec![2.0, 0.5], z1)
            })
            .collect();
        let out = group_aligned_lift(&pairs, &LiftGroup::So2, &mut rng).unwrap();
        let tol = 4.0 / (n as f64).sqrt();
        for a in 0..2 {
            for b in 0..2 {
                let x: Vec<f64> = out.iter().map(|p| p.0[a]).collect();
                let y: Vec<f64> = out.iter().map(|p| p.1[b]).collect();
                assert!(crate::stats::pearson(&x, &y).abs() < tol);
            }
            let y: Vec<f64> = out.iter().map(|p| p.1[a]).collect();
            let ks = crate::stats::ks_standard_normal(&y).unwrap();
            assert!(ks.statistic < 1.949 / (n as f64).sqrt());
        }
    }

    #[test]
    fn csv_log() {
        let mut buf = Vec::new();
        write_coupling_log(&mut buf, &[(0, CouplingMode::OtExact, 1.5)]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epoch,mode,cost\n0,ot_exact,1.5\n");
    }
}
