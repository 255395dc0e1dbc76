//! A small MLP vector field for 2-D point targets and the C₄ benchmark.
//!
//! The benchmark trains the same field twice with equal budgets: once on the
//! canonical slice of a C₄-symmetric four-blob target (one blob), once on the
//! full target. Both use an `N(0, I)` prior. Canonical samples are mapped
//! back to the full target by a uniformly random quarter turn.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::params::{clip_global_norm, warmup_lr, Adam, Ema, FlatParam, ParamStore};
use super::path::{sample_time, TimeDist};
use super::tape::{Tape, Tensor, Var};
use super::train::CHECKPOINT_VERSION;
use crate::error::{invalid, Error, Result};
use crate::stats::energy_distance;
use crate::toy::{rotate_quarter, FourBlobs};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyConfig {
    pub hidden: usize,
    pub steps: usize,
    /// Steps per trace row.
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: u64,
    pub ema_decay: f64,
    pub grad_clip: f64,
    pub time_dist: TimeDist,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            steps: 1500,
            steps_per_epoch: 50,
            batch_size: 128,
            lr: 3e-3,
            warmup_steps: 50,
            ema_decay: 0.99,
            grad_clip: 1.0,
            time_dist: TimeDist::Uniform,
            seed: 0,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.batch_size == 0 || self.steps_per_epoch == 0 {
            return Err(invalid("hidden, batch_size and steps_per_epoch must be positive"));
        }
        if !(self.lr > 0.0 && self.grad_clip > 0.0) || !(0.0..=1.0).contains(&self.ema_decay) {
            return Err(invalid("bad optimizer settings"));
        }
        Ok(())
    }
}

pub const TOY_CHECKPOINT_FORMAT: &str = "symcanon-toy-checkpoint";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ToyCheckpoint {
    format: String,
    version: u32,
    canonical_slice: bool,
    config: ToyConfig,
    params: Vec<FlatParam>,
}

/// `[x, t] → hidden → hidden → 2` with SiLU activations.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyField {
    pub params: ParamStore,
}

impl ToyField {
    pub fn new<R: Rng + ?Sized>(hidden: usize, rng: &mut R) -> Self {
        let mut p = ParamStore::new();
        p.add_weight("l0.w", 3, hidden, rng);
        p.add_zeros("l0.b", 1, hidden);
        p.add_weight("l1.w", hidden, hidden, rng);
        p.add_zeros("l1.b", 1, hidden);
        p.add_weight("l2.w", hidden, 2, rng);
        p.add_zeros("l2.b", 1, 2);
        Self { params: p }
    }

    /// `xt` is `B × 3` with time in the last column.
    pub fn forward(&self, tape: &mut Tape, p: &[Var], xt: Var) -> Var {
        let mut h = xt;
        for l in 0..3 {
            let m = tape.matmul(h, p[2 * l]);
            h = tape.add_row(m, p[2 * l + 1]);
            if l < 2 {
                h = tape.silu(h);
            }
        }
        h
    }

    pub fn to_json(&self, cfg: &ToyConfig, slice: bool) -> Result<String> {
        Ok(serde_json::to_string(&ToyCheckpoint {
            format: TOY_CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            canonical_slice: slice,
            config: cfg.clone(),
            params: self.params.to_flat(),
        })?)
    }

    /// Returns the field, its training config and whether it was trained on
    /// the canonical slice.
    pub fn from_json(s: &str) -> Result<(Self, ToyConfig, bool)> {
        let c: ToyCheckpoint = serde_json::from_str(s)?;
        if c.format != TOY_CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(invalid(format!("unsupported checkpoint {} v{}", c.format, c.version)));
        }
        c.config.validate()?;
        let mut field = Self::new(c.config.hidden, &mut ChaCha8Rng::seed_from_u64(0));
        field.params.load_flat(&c.params)?;
        if field.params.tensors.iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(invalid("checkpoint contains non-finite parameters"));
        }
        Ok((field, c.config, c.canonical_slice))
    }

    pub fn velocity(&self, x: &[[f64; 2]], t: f64) -> Vec<[f64; 2]> {
        let mut tape = Tape::new();
        let p: Vec<Var> = self.params.tensors.iter().map(|w| tape.leaf(w.clone())).collect();
        let inp = tape.leaf(Tensor::from_fn(x.len(), 3, |i, c| if c < 2 { x[i][c] } else { t }));
        let v = self.forward(&mut tape, &p, inp);
        let v = tape.value(v);
        (0..x.len()).map(|i| [v[(i, 0)], v[(i, 1)]]).collect()
    }
}

fn normal2<R: Rng + ?Sized>(rng: &mut R) -> [f64; 2] {
    [rng.sample(StandardNormal), rng.sample(StandardNormal)]
}

/// A fixed evaluation set of `(x₀, x₁, t)` triples.
pub struct ValSet {
    pub x0: Vec<[f64; 2]>,
    pub x1: Vec<[f64; 2]>,
    pub t: Vec<f64>,
}

impl ValSet {
    pub fn draw<R: Rng + ?Sized>(
        n: usize,
        mut data: impl FnMut(&mut R) -> [f64; 2],
        time: TimeDist,
        rng: &mut R,
    ) -> Self {
        let x0 = (0..n).map(|_| data(rng)).collect();
        let x1 = (0..n).map(|_| normal2(rng)).collect();
        let t = (0..n).map(|_| sample_time(time, rng)).collect();
        Self { x0, x1, t }
    }
}

fn batch_loss(field: &ToyField, x0: &[[f64; 2]], x1: &[[f64; 2]], t: &[f64], with_grad: bool) -> (f64, Vec<Tensor>) {
    let b = x0.len();
    let mut tape = Tape::new();
    let p: Vec<Var> = field.params.tensors.iter().map(|w| tape.leaf(w.clone())).collect();
    let inp = Tensor::from_fn(b, 3, |i, c| {
        if c < 2 {
            (1.0 - t[i]) * x0[i][c] + t[i] * x1[i][c]
        } else {
            t[i]
        }
    });
    let target = Tensor::from_fn(b, 2, |i, c| x1[i][c] - x0[i][c]);
    let inp = tape.leaf(inp);
    let v = field.forward(&mut tape, &p, inp);
    // Per-point squared error summed over both axes.
    let l = tape.mse(v, target);
    let l = tape.scale(l, 2.0);
    let loss = tape.value(l)[(0, 0)];
    if !with_grad {
        return (loss, Vec::new());
    }
    let mut g = tape.backward(l);
    let grads = p
        .iter()
        .zip(&field.params.tensors)
        .map(|(&v, w)| g.take(v).unwrap_or_else(|| w * 0.0))
        .collect();
    (loss, grads)
}

/// Flow-matching loss on a validation set.
pub fn toy_loss(field: &ToyField, val: &ValSet) -> f64 {
    batch_loss(field, &val.x0, &val.x1, &val.t, false).0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyTraceRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Trains a field on samples from `data` paired independently with `N(0, I)`.
/// Returns the EMA field and one trace row per `steps_per_epoch` steps.
pub fn train_toy(
    mut data: impl FnMut(&mut ChaCha8Rng) -> [f64; 2],
    val: &ValSet,
    cfg: &ToyConfig,
) -> Result<(ToyField, Vec<ToyTraceRow>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut field = ToyField::new(cfg.hidden, &mut rng);
    let mut opt = Adam::new(&field.params);
    let mut ema = Ema::new(&field.params, cfg.ema_decay);
    let mut trace = Vec::new();
    let mut acc = 0.0;
    for step in 0..cfg.steps {
        let x0: Vec<_> = (0..cfg.batch_size).map(|_| data(&mut rng)).collect();
        let x1: Vec<_> = (0..cfg.batch_size).map(|_| normal2(&mut rng)).collect();
        let t: Vec<_> = (0..cfg.batch_size)
            .map(|_| sample_time(cfg.time_dist, &mut rng))
            .collect();
        let (loss, mut grads) = batch_loss(&field, &x0, &x1, &t, true);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                detail: "toy field".into(),
            });
        }
        clip_global_norm(&mut grads, cfg.grad_clip);
        opt.update(
            &mut field.params,
            &grads,
            warmup_lr(cfg.lr, cfg.warmup_steps, step as u64),
        );
        ema.update(&field.params);
        acc += loss;
        if (step + 1) % cfg.steps_per_epoch == 0 {
            let shadow = ToyField {
                params: ema.shadow.clone(),
            };
            trace.push(ToyTraceRow {
                epoch: trace.len(),
                train_loss: acc / cfg.steps_per_epoch as f64,
                val_loss: toy_loss(&shadow, val),
            });
            acc = 0.0;
        }
    }
    Ok((ToyField { params: ema.shadow }, trace))
}

/// Euler integration from `N(0, I)` at `t = 1` to `t = 0` on a uniform grid.
pub fn sample_toy<R: Rng + ?Sized>(field: &ToyField, n: usize, steps: usize, rng: &mut R) -> Result<Vec<[f64; 2]>> {
    if steps == 0 {
        return Err(invalid("at least one integration step is required"));
    }
    let mut x: Vec<[f64; 2]> = (0..n).map(|_| normal2(rng)).collect();
    for k in (1..=steps).rev() {
        let (t_from, t_to) = (k as f64 / steps as f64, (k - 1) as f64 / steps as f64);
        let v = field.velocity(&x, t_from);
        for (xi, vi) in x.iter_mut().zip(v) {
            for c in 0..2 {
                xi[c] += (t_to - t_from) * vi[c];
            }
        }
    }
    Ok(x)
}

/// Outcome of one seed of the C₄ benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct C4BenchResult {
    pub seed: u64,
    pub canonical_val_loss: f64,
    pub baseline_val_loss: f64,
    pub canonical_energy: f64,
    pub baseline_energy: f64,
}

/// Sizes of the benchmark's evaluation sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct C4BenchSizes {
    pub n_val: usize,
    pub n_samples: usize,
    pub euler_steps: usize,
}

impl Default for C4BenchSizes {
    fn default() -> Self {
        Self {
            n_val: 4096,
            n_samples: 1500,
            euler_steps: 10,
        }
    }
}

pub fn c4_benchmark(cfg: &ToyConfig, sizes: C4BenchSizes) -> Result<C4BenchResult> {
    let blobs = FourBlobs::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xc4c4);
    let val_canon = ValSet::draw(sizes.n_val, |r| blobs.sample_slice(r), cfg.time_dist, &mut rng);
    let val_base = ValSet::draw(sizes.n_val, |r| blobs.sample(r), cfg.time_dist, &mut rng);
    let (canon, _) = train_toy(|r| blobs.sample_slice(r), &val_canon, cfg)?;
    let (base, _) = train_toy(|r| blobs.sample(r), &val_base, cfg)?;

    let target: Vec<Vec<f64>> = (0..sizes.n_samples).map(|_| blobs.sample(&mut rng).to_vec()).collect();
    let canon_samples: Vec<Vec<f64>> = sample_toy(&canon, sizes.n_samples, sizes.euler_steps, &mut rng)?
        .into_iter()
        .map(|p| rotate_quarter(p, rng.random_range(0..4)).to_vec())
        .collect();
    let base_samples: Vec<Vec<f64>> = sample_toy(&base, sizes.n_samples, sizes.euler_steps, &mut rng)?
        .into_iter()
        .map(|p| p.to_vec())
        .collect();
    Ok(C4BenchResult {
        seed: cfg.seed,
        canonical_val_loss: toy_loss(&canon, &val_canon),
        baseline_val_loss: toy_loss(&base, &val_base),
        canonical_energy: energy_distance(&canon_samples, &target)?,
        baseline_energy: energy_distance(&base_samples, &target)?,
    })
}
