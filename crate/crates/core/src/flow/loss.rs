//! The flow-matching objective and a finite-difference gradient check.

use serde::{Deserialize, Serialize};

use super::net::{CanonLite, ForwardVars, NetInput};
use super::path::PathSample;
use super::tape::{Tape, Tensor, Var};
use crate::error::{dim_err, invalid, Result};

/// Weights of the loss terms; the coordinate term has weight 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub type_: f64,
    pub bond: f64,
    pub charge: f64,
    pub rank: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            type_: 0.2,
            bond: 1.0,
            charge: 1.0,
            rank: 0.1,
        }
    }
}

impl LossWeights {
    pub fn coord_only() -> Self {
        Self {
            type_: 0.0,
            bond: 0.0,
            charge: 0.0,
            rank: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = [self.type_, self.bond, self.charge, self.rank];
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(invalid("loss weights must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Loss nodes on the tape.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub coord: Var,
    pub type_: Var,
    pub charge: Var,
    pub bond: Var,
    pub rank: Var,
}

/// Scalar values of the loss terms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub total: f64,
    pub coord: f64,
    pub type_: f64,
    pub charge: f64,
    pub bond: f64,
    pub rank: f64,
}

impl LossValues {
    pub fn read(tape: &Tape, l: &LossVars) -> Self {
        let v = |x: Var| tape.value(x)[(0, 0)];
        Self {
            total: v(l.total),
            coord: v(l.coord),
            type_: v(l.type_),
            charge: v(l.charge),
            bond: v(l.bond),
            rank: v(l.rank),
        }
    }

    pub fn add_scaled(&mut self, o: &Self, s: f64) {
        self.total += s * o.total;
        self.coord += s * o.coord;
        self.type_ += s * o.type_;
        self.charge += s * o.charge;
        self.bond += s * o.bond;
        self.rank += s * o.rank;
    }

    pub fn is_finite(&self) -> bool {
        [self.total, self.coord, self.type_, self.charge, self.bond, self.rank]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Rank target matching the min–max normalized head: `i/(N−1)`, or `0` when
/// `N = 1`.
pub fn rank_targets(n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![0.0; n];
    }
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

/// Records the weighted loss. `rank_target` is indexed like the atoms.
pub fn fm_loss(
    tape: &mut Tape,
    pred: &ForwardVars,
    sample: &PathSample,
    rank_target: &[f64],
    w: &LossWeights,
) -> Result<LossVars> {
    let n = sample.target_velocity.len();
    if rank_target.len() != n || tape.value(pred.velocity).nrows() != n {
        return Err(dim_err("loss targets do not match the prediction"));
    }
    let vt = Tensor::from_fn(n, 3, |i, k| sample.target_velocity[i][k]);
    let coord = tape.mse(pred.velocity, vt);
    let type_ = tape.softmax_ce(pred.type_logits, &sample.target_types);
    let charge = tape.softmax_ce(pred.charge_logits, &sample.target_charges);
    let bond = tape.softmax_ce(pred.bond_logits, &sample.target_bonds);
    let rank = tape.mse(pred.rank, Tensor::from_column_slice(n, 1, rank_target));
    let mut total = coord;
    for (v, wv) in [(type_, w.type_), (bond, w.bond), (charge, w.charge), (rank, w.rank)] {
        if wv != 0.0 {
            let s = tape.scale(v, wv);
            total = tape.add(total, s);
        }
    }
    Ok(LossVars {
        total,
        coord,
        type_,
        charge,
        bond,
        rank,
    })
}

/// Total loss and parameter gradients for one sample.
pub fn loss_and_grads(
    net: &CanonLite,
    input: &NetInput,
    sample: &PathSample,
    rank_target: &[f64],
    w: &LossWeights,
) -> Result<(LossValues, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let p = net.leaves(&mut tape);
    let f = net.forward(&mut tape, &p, input)?;
    let l = fm_loss(&mut tape, &f, sample, rank_target, w)?;
    let values = LossValues::read(&tape, &l);
    let mut g = tape.backward(l.total);
    let grads = p
        .iter()
        .zip(&net.params.tensors)
        .map(|(&v, t)| g.take(v).unwrap_or_else(|| Tensor::zeros(t.nrows(), t.ncols())))
        .collect();
    Ok((values, grads))
}

/// Result of a finite-difference gradient check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub n_checked: usize,
}

/// Absolute scale below which gradient errors are measured absolutely.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Compares every parameter gradient with central differences of step
/// `eps`. The error of a scalar is `|a − n| / max(|a|, |n|, floor)`.
pub fn gradient_check(
    net: &CanonLite,
    input: &NetInput,
    sample: &PathSample,
    rank_target: &[f64],
    w: &LossWeights,
    eps: f64,
) -> Result<GradCheck> {
    let (_, grads) = loss_and_grads(net, input, sample, rank_target, w)?;
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    let mut count = 0;
    let eval = |m: &CanonLite| -> Result<f64> {
        let mut tape = Tape::new();
        let p = m.leaves(&mut tape);
        let f = m.forward(&mut tape, &p, input)?;
        let l = fm_loss(&mut tape, &f, sample, rank_target, w)?;
        Ok(tape.value(l.total)[(0, 0)])
    };
    for k in 0..net.params.len() {
        for i in 0..net.params.tensors[k].len() {
            let x = net.params.tensors[k][i];
            probe.params.tensors[k][i] = x + eps;
            let up = eval(&probe)?;
            probe.params.tensors[k][i] = x - eps;
            let down = eval(&probe)?;
            probe.params.tensors[k][i] = x;
            let num = (up - down) / (2.0 * eps);
            let a = grads[k][i];
            let err = (a - num).abs() / a.abs().max(num.abs()).max(GRAD_CHECK_FLOOR);
            worst = worst.max(err);
            count += 1;
        }
    }
    Ok(GradCheck {
        max_rel_error: worst,
        n_checked: count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::net::{upper_pairs, CanonLiteConfig, NetInput};
    use crate::flow::path::interpolate;
    use crate::molecule::Encoded;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_encoded(n: usize, cfg: &CanonLiteConfig, rng: &mut ChaCha8Rng) -> Encoded {
        let mut bonds = vec![0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let b = rng.random_range(0..5);
                bonds[i * n + j] = b;
                bonds[j * n + i] = b;
            }
        }
        Encoded {
            coords: (0..n).map(|_| [0; 3].map(|_| rng.random_range(-1.0..1.0))).collect(),
            types: (0..n).map(|_| rng.random_range(0..cfg.n_types)).collect(),
            charges: (0..n).map(|_| rng.random_range(0..cfg.n_charges)).collect(),
            bonds,
        }
    }

    fn setup(n: usize, seed: u64) -> (CanonLite, NetInput, PathSample) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = CanonLiteConfig::tiny(3, 2);
        let net = CanonLite::new(cfg.clone(), &mut rng).unwrap();
        let z0 = random_encoded(n, &cfg, &mut rng);
        let z1 = random_encoded(n, &cfg, &mut rng);
        let s = interpolate(&z0, &z1, 0.4, 0.1, &mut rng).unwrap();
        let input = NetInput {
            coords: s.z_t.coords.clone(),
            types: s.z_t.types.clone(),
            charges: s.z_t.charges.clone(),
            bonds: s.z_t.bonds.clone(),
            t: s.t,
            ranks: (0..n).map(|i| i as f64 / n as f64).collect(),
            pe_dropped: false,
        };
        (net, input, s)
    }

    #[test]
    fn two_atom_gradient_check() {
        let (net, input, s) = setup(2, 0);
        let g = gradient_check(&net, &input, &s, &rank_targets(2), &LossWeights::default(), 1e-4).unwrap();
        assert_eq!(g.n_checked, net.params.n_scalars());
        assert!(g.max_rel_error < 1e-4, "{g:?}");
    }

    #[test]
    fn coord_only_is_plain_mse() {
        let (net, input, s) = setup(4, 1);
        let pred = net.predict(&input).unwrap();
        let mut mse = 0.0;
        for i in 0..4 {
            for k in 0..3 {
                mse += (pred.velocity[(i, k)] - s.target_velocity[i][k]).powi(2);
            }
        }
        mse /= 12.0;
        let (v, _) = loss_and_grads(&net, &input, &s, &rank_targets(4), &LossWeights::coord_only()).unwrap();
        assert!((v.total - mse).abs() < 1e-12);
        assert_eq!(v.total, v.coord);
        assert!(v.type_ >= 0.0 && v.bond >= 0.0 && v.charge >= 0.0 && v.rank >= 0.0);
    }

    #[test]
    fn exact_predictions_give_zero_loss() {
        let mut tape = Tape::new();
        let n = 3;
        let vel = Tensor::from_fn(n, 3, |i, k| (i + k) as f64);
        let sample = PathSample {
            t: 0.5,
            z_t: Encoded {
                coords: vec![[0.0; 3]; n],
                types: vec![0; n],
                charges: vec![0; n],
                bonds: vec![0; n * n],
            },
            target_velocity: (0..n).map(|i| [0, 1, 2].map(|k| (i + k) as f64)).collect(),
            target_types: vec![1, 0, 1],
            target_charges: vec![0, 0, 0],
            target_bonds: vec![2; upper_pairs(n).len()],
        };
        let gap = 60.0;
        let onehot = |rows: usize, cols: usize, y: &[usize]| {
            Tensor::from_fn(rows, cols, |i, c| if c == y[i] { gap } else { 0.0 })
        };
        let f = ForwardVars {
            velocity: tape.leaf(vel),
            type_logits: tape.leaf(onehot(n, 2, &sample.target_types)),
            charge_logits: tape.leaf(onehot(n, 2, &sample.target_charges)),
            bond_logits: tape.leaf(onehot(3, 5, &sample.target_bonds)),
            rank: tape.leaf(Tensor::from_column_slice(n, 1, &rank_targets(n))),
        };
        let l = fm_loss(&mut tape, &f, &sample, &rank_targets(n), &LossWeights::default()).unwrap();
        let v = LossValues::read(&tape, &l);
        assert_eq!(v.coord, 0.0);
        assert_eq!(v.rank, 0.0);
        assert!(v.total < 1e-20, "{v:?}");
    }
}
