//! A reverse-mode gradient tape over dense matrices.
//!
//! Every operation appends a node holding its value and enough information to
//! push an adjoint back to its inputs. [`Tape::backward`] walks the nodes in
//! reverse and returns gradients for every node that the loss depends on.

use nalgebra::DMatrix;

pub type Tensor = DMatrix<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Silu(Var),
    Tanh(Var),
    GatherRows(Var, Vec<usize>),
    SegmentMean(Var, Vec<usize>, Vec<f64>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    SumAll(Var),
    SoftmaxCe(Var, Vec<usize>),
    Mse(Var, Tensor),
    MinMaxNorm(Var, f64),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// The recorded computation.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints indexed by [`Var`]; `None` where the loss does not depend on it.
#[derive(Debug)]
pub struct Gradients(Vec<Option<Tensor>>);

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.0[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.0[v.0].take()
    }
}

/// `1 × c` column sums.
fn col_sums(m: &Tensor) -> Tensor {
    let s = m.row_sum();
    Tensor::from_row_slice(1, m.ncols(), s.as_slice())
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// A leaf (parameter or constant input).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).component_mul(self.value(b));
        self.push(v, Op::Mul(a, b))
    }

    /// `a + 1·row` for a `1 × c` row.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.nrows(), 1, "add_row expects a single row");
        let mut v = self.value(a).clone();
        for mut x in v.row_iter_mut() {
            x += r;
        }
        self.push(v, Op::AddRow(a, row))
    }

    /// `a ⊙ 1·row` for a `1 × c` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.nrows(), 1, "mul_row expects a single row");
        let mut v = self.value(a).clone();
        for mut x in v.row_iter_mut() {
            x.component_mul_assign(r);
        }
        self.push(v, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a) * s;
        self.push(v, Op::Scale(a, s))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(silu);
        self.push(v, Op::Silu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    /// Rows `a[idx[0]], a[idx[1]], …`.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let src = self.value(a);
        let v = Tensor::from_fn(idx.len(), src.ncols(), |i, j| src[(idx[i], j)]);
        self.push(v, Op::GatherRows(a, idx.to_vec()))
    }

    /// Row `s` of the output is the mean of rows `i` of `a` with
    /// `seg[i] == s`; empty segments give zeros.
    pub fn segment_mean(&mut self, a: Var, seg: &[usize], n_seg: usize) -> Var {
        let src = self.value(a);
        let mut count = vec![0usize; n_seg];
        for &s in seg {
            count[s] += 1;
        }
        let inv: Vec<f64> = count
            .iter()
            .map(|&c| if c == 0 { 0.0 } else { 1.0 / c as f64 })
            .collect();
        let mut v = Tensor::zeros(n_seg, src.ncols());
        for (i, &s) in seg.iter().enumerate() {
            for j in 0..src.ncols() {
                v[(s, j)] += src[(i, j)] * inv[s];
            }
        }
        self.push(v, Op::SegmentMean(a, seg.to_vec(), inv))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).nrows();
        let cols: usize = parts.iter().map(|&p| self.value(p).ncols()).sum();
        let mut v = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let x = self.value(p);
            assert_eq!(x.nrows(), rows, "concat_cols row mismatch");
            v.view_mut((0, off), (rows, x.ncols())).copy_from(x);
            off += x.ncols();
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let v = self.value(a).columns(start, width).into_owned();
        self.push(v, Op::SliceCols(a, start))
    }

    /// `1 × 1` sum of all entries.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Tensor::from_element(1, 1, self.value(a).sum());
        self.push(v, Op::SumAll(a))
    }

    /// Mean cross-entropy of row-wise softmax against class targets; `0` for
    /// zero rows.
    pub fn softmax_ce(&mut self, logits: Var, targets: &[usize]) -> Var {
        let z = self.value(logits);
        assert_eq!(z.nrows(), targets.len(), "one target per row");
        let n = targets.len().max(1) as f64;
        let mut loss = 0.0;
        for (i, &y) in targets.iter().enumerate() {
            let row = z.row(i);
            let m = row.max();
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss += lse - z[(i, y)];
        }
        self.push(
            Tensor::from_element(1, 1, loss / n),
            Op::SoftmaxCe(logits, targets.to_vec()),
        )
    }

    /// Mean squared error against a constant target; `0` for empty input.
    pub fn mse(&mut self, a: Var, target: Tensor) -> Var {
        let x = self.value(a);
        assert_eq!(x.shape(), target.shape(), "mse shape mismatch");
        let m = x.len().max(1) as f64;
        let v = (x - &target).norm_squared() / m;
        self.push(Tensor::from_element(1, 1, v), Op::Mse(a, target))
    }

    /// Min–max normalization of an `n × 1` column: `(s − min)/(max − min + ε)`.
    pub fn min_max_norm(&mut self, a: Var, eps: f64) -> Var {
        let s = self.value(a);
        assert_eq!(s.ncols(), 1, "min_max_norm expects a column");
        let (lo, hi) = (s.min(), s.max());
        let v = s.map(|x| (x - lo) / (hi - lo + eps));
        self.push(v, Op::MinMaxNorm(a, eps))
    }

    /// Reverse sweep from a `1 × 1` loss.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).shape(), (1, 1), "loss must be a scalar");
        let mut g: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        g[loss.0] = Some(Tensor::from_element(1, 1, 1.0));
        fn acc(g: &mut [Option<Tensor>], v: Var, d: Tensor) {
            match &mut g[v.0] {
                Some(x) => *x += d,
                slot => *slot = Some(d),
            }
        }
        for idx in (0..=loss.0).rev() {
            let Some(go) = g[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = &go * self.value(*b).transpose();
                    let db = self.value(*a).transpose() * &go;
                    acc(&mut g, *a, da);
                    acc(&mut g, *b, db);
                }
                Op::Add(a, b) => {
                    acc(&mut g, *a, go.clone());
                    acc(&mut g, *b, go.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut g, *a, go.clone());
                    acc(&mut g, *b, -go.clone());
                }
                Op::Mul(a, b) => {
                    acc(&mut g, *a, go.component_mul(self.value(*b)));
                    acc(&mut g, *b, go.component_mul(self.value(*a)));
                }
                Op::AddRow(a, r) => {
                    acc(&mut g, *r, col_sums(&go));
                    acc(&mut g, *a, go.clone());
                }
                Op::MulRow(a, r) => {
                    let row = self.value(*r);
                    let mut da = go.clone();
                    for mut x in da.row_iter_mut() {
                        x.component_mul_assign(row);
                    }
                    let dr = col_sums(&go.component_mul(self.value(*a)));
                    acc(&mut g, *a, da);
                    acc(&mut g, *r, dr);
                }
                Op::Scale(a, s) => acc(&mut g, *a, &go * *s),
                Op::Silu(a) => {
                    let d = self.value(*a).map(silu_grad).component_mul(&go);
                    acc(&mut g, *a, d);
                }
                Op::Tanh(a) => {
                    let d = node.value.map(|y| 1.0 - y * y).component_mul(&go);
                    acc(&mut g, *a, d);
                }
                Op::GatherRows(a, idx) => {
                    let src = self.value(*a);
                    let mut d = Tensor::zeros(src.nrows(), src.ncols());
                    for (i, &r) in idx.iter().enumerate() {
                        for j in 0..src.ncols() {
                            d[(r, j)] += go[(i, j)];
                        }
                    }
                    acc(&mut g, *a, d);
                }
                Op::SegmentMean(a, seg, inv) => {
                    let src = self.value(*a);
                    let d = Tensor::from_fn(src.nrows(), src.ncols(), |i, j| go[(seg[i], j)] * inv[seg[i]]);
                    acc(&mut g, *a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        acc(&mut g, p, go.columns(off, w).into_owned());
                        off += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let src = self.value(*a);
                    let mut d = Tensor::zeros(src.nrows(), src.ncols());
                    d.columns_mut(*start, go.ncols()).copy_from(&go);
                    acc(&mut g, *a, d);
                }
                Op::SumAll(a) => {
                    let s = self.value(*a);
                    acc(&mut g, *a, Tensor::from_element(s.nrows(), s.ncols(), go[(0, 0)]));
                }
                Op::SoftmaxCe(a, targets) => {
                    let z = self.value(*a);
                    let n = targets.len().max(1) as f64;
                    let mut d = Tensor::zeros(z.nrows(), z.ncols());
                    for (i, &y) in targets.iter().enumerate() {
                        let row = z.row(i);
                        let m = row.max();
                        let denom: f64 = row.iter().map(|v| (v - m).exp()).sum();
                        for j in 0..z.ncols() {
                            let p = (z[(i, j)] - m).exp() / denom;
                            d[(i, j)] = (p - if j == y { 1.0 } else { 0.0 }) * go[(0, 0)] / n;
                        }
                    }
                    acc(&mut g, *a, d);
                }
                Op::Mse(a, target) => {
                    let x = self.value(*a);
                    let m = x.len().max(1) as f64;
                    acc(&mut g, *a, (x - target) * (2.0 * go[(0, 0)] / m));
                }
                Op::MinMaxNorm(a, eps) => {
                    let s = self.value(*a);
                    let n = s.nrows();
                    let (mut ia, mut ib) = (0, 0);
                    for i in 0..n {
                        if s[i] < s[ia] {
                            ia = i;
                        }
                        if s[i] > s[ib] {
                            ib = i;
                        }
                    }
                    let (lo, hi) = (s[ia], s[ib]);
                    let den = hi - lo + eps;
                    let sum_g: f64 = go.iter().sum();
                    let sum_gy: f64 = (0..n).map(|i| go[i] * (s[i] - lo)).sum::<f64>() / (den * den);
                    let mut d = go.map(|x| x / den);
                    d[ia] += -sum_g / den + sum_gy;
                    d[ib] -= sum_gy;
                    acc(&mut g, *a, d);
                }
            }
            g[idx] = Some(go);
        }
        Gradients(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_t(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Checks d(loss)/d(input) against central differences, where `build`
    /// records a scalar loss from the given leaf values.
    fn check(inputs: Vec<Tensor>, build: impl Fn(&mut Tape, &[Var]) -> Var) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
        let loss = build(&mut tape, &vars);
        let grads = tape.backward(loss);
        let eval = |xs: &[Tensor]| {
            let mut t = Tape::new();
            let v: Vec<Var> = xs.iter().map(|x| t.leaf(x.clone())).collect();
            let l = build(&mut t, &v);
            t.value(l)[(0, 0)]
        };
        let h = 1e-6;
        for (k, x) in inputs.iter().enumerate() {
            let analytic = grads.get(vars[k]).cloned().unwrap_or_else(|| x * 0.0);
            for e in 0..x.len() {
                let mut plus = inputs.clone();
                plus[k][e] += h;
                let mut minus = inputs.clone();
                minus[k][e] -= h;
                let num = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let a = analytic[e];
                assert!(
                    (a - num).abs() <= 1e-6 * (1.0 + a.abs().max(num.abs())),
                    "input {k} entry {e}: analytic {a} numeric {num}"
                );
            }
        }
    }

    #[test]
    fn matmul_add_silu() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (a, b, c) = (rand_t(3, 4, &mut rng), rand_t(4, 2, &mut rng), rand_t(3, 2, &mut rng));
        check(vec![a, b, c], |t, v| {
            let m = t.matmul(v[0], v[1]);
            let s = t.add(m, v[2]);
            let y = t.silu(s);
            let y = t.tanh(y);
            let z = t.mul(y, s);
            let w = t.sub(z, v[2]);
            t.sum_all(w)
        });
    }

    #[test]
    fn row_broadcasts_and_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, r1, r2) = (rand_t(4, 3, &mut rng), rand_t(1, 3, &mut rng), rand_t(1, 3, &mut rng));
        check(vec![a, r1, r2], |t, v| {
            let x = t.add_row(v[0], v[1]);
            let y = t.mul_row(x, v[2]);
            let z = t.scale(y, -1.7);
            let q = t.mul(z, z);
            t.sum_all(q)
        });
    }

    #[test]
    fn gather_segment_concat_slice() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (a, b) = (rand_t(3, 2, &mut rng), rand_t(5, 3, &mut rng));
        check(vec![a, b], |t, v| {
            let g = t.gather_rows(v[0], &[2, 0, 0, 1, 2]);
            let c = t.concat_cols(&[g, v[1]]);
            let s = t.slice_cols(c, 1, 3);
            let m = t.segment_mean(s, &[0, 0, 1, 3, 1], 4);
            let q = t.mul(m, m);
            t.sum_all(q)
        });
    }

    #[test]
    fn losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (z, x) = (rand_t(4, 5, &mut rng), rand_t(3, 2, &mut rng));
        let target = rand_t(3, 2, &mut rng);
        check(vec![z, x], move |t, v| {
            let ce = t.softmax_ce(v[0], &[0, 4, 2, 2]);
            let m = t.mse(v[1], target.clone());
            t.add(ce, m)
        });
    }

    #[test]
    fn min_max() {
        let s = Tensor::from_column_slice(5, 1, &[0.3, -0.8, 1.2, 0.1, 0.5]);
        let w = Tensor::from_column_slice(5, 1, &[1.0, -2.0, 0.5, 3.0, -1.0]);
        check(vec![s, w], |t, v| {
            let y = t.min_max_norm(v[0], 1e-6);
            let p = t.mul(y, v[1]);
            t.sum_all(p)
        });
    }

    #[test]
    fn cross_entropy_values() {
        let mut t = Tape::new();
        let z = t.leaf(Tensor::from_row_slice(1, 2, &[0.0, 0.0]));
        let l = t.softmax_ce(z, &[1]);
        assert!((t.value(l)[(0, 0)] - 2f64.ln()).abs() < 1e-15);
        let z = t.leaf(Tensor::from_row_slice(1, 2, &[-40.0, 40.0]));
        let l = t.softmax_ce(z, &[1]);
        assert!(t.value(l)[(0, 0)] < 1e-30);
    }

    #[test]
    fn empty_segments_and_rows() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::zeros(0, 3));
        let m = t.segment_mean(a, &[], 2);
        assert_eq!(t.value(m), &Tensor::zeros(2, 3));
        let l = t.mse(a, Tensor::zeros(0, 3));
        assert_eq!(t.value(l)[(0, 0)], 0.0);
    }
}
