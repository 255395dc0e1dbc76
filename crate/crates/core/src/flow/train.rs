//! Training loop, trace and checkpoints for the molecular flow.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{loss_and_grads, rank_targets, LossValues, LossWeights};
use super::net::{CanonLite, CanonLiteConfig, NetInput};
use super::params::{clip_global_norm, warmup_lr, Adam, Ema, FlatParam};
use super::path::{interpolate, rank_noise, sample_time, TimeDist};
use super::tape::Tensor;
use crate::coupling::{ot_pair_clouds, CouplingMode};
use crate::error::{invalid, Error, Result};
use crate::molecule::{Encoded, Vocab};
use crate::priors::MolecularPrior;

/// How noise is paired with data inside a minibatch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum OtPolicy {
    /// Independent pairing.
    Off,
    /// Exact OT on every batch.
    Always,
    /// OT with probability `max(0, 1 − epoch / max_epochs)`.
    Anneal { max_epochs: usize },
}

impl OtPolicy {
    pub fn probability(&self, epoch: usize) -> f64 {
        match *self {
            OtPolicy::Off => 0.0,
            OtPolicy::Always => 1.0,
            OtPolicy::Anneal { max_epochs } => (1.0 - epoch as f64 / max_epochs.max(1) as f64).max(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub warmup_steps: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub time_dist: TimeDist,
    /// Std of the additive coordinate path noise.
    pub coord_noise: f64,
    /// Std of the rank noise at the noise end.
    pub rank_noise: f64,
    /// Probability of replacing the positional encoding by the fake one.
    pub pe_drop: f64,
    pub weights: LossWeights,
    pub ema_decay: f64,
    pub grad_clip: f64,
    pub ot: OtPolicy,
    /// Rotate noise onto data before OT costing. Off by default because the
    /// rotation gauge already fixes the frame of canonical data.
    pub kabsch: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            warmup_steps: 100,
            epochs: 10,
            batch_size: 8,
            time_dist: TimeDist::Beta21,
            coord_noise: 0.2,
            rank_noise: 0.05,
            pe_drop: 0.1,
            weights: LossWeights::default(),
            ema_decay: 0.999,
            grad_clip: 1.0,
            ot: OtPolicy::Off,
            kabsch: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [self.lr, self.grad_clip];
        if pos.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(invalid("lr and grad_clip must be positive"));
        }
        if !(self.coord_noise >= 0.0 && self.rank_noise >= 0.0) {
            return Err(invalid("noise scales must be non-negative"));
        }
        for (name, p) in [("pe_drop", self.pe_drop), ("ema_decay", self.ema_decay)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be positive"));
        }
        if let OtPolicy::Anneal { max_epochs: 0 } = self.ot {
            return Err(invalid("OT annealing needs max_epochs > 0"));
        }
        self.weights.validate()
    }
}

/// One trace row per epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub train: LossValues,
    /// Total loss of the EMA model on the validation set (NaN without one).
    pub val_loss: f64,
    pub p_ot: f64,
}

pub const TRACE_HEADER: &str = "epoch,loss,coord,type,charge,bond,rank,val_loss,p_ot";

pub fn write_trace<W: Write>(rows: &[TraceRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for r in rows {
        let t = &r.train;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.epoch, t.total, t.coord, t.type_, t.charge, t.bond, t.rank, r.val_loss, r.p_ot
        )?;
    }
    Ok(())
}

/// A trained model with everything needed to sample from it.
#[derive(Debug, Clone)]
pub struct FlowModel {
    /// Network holding the EMA parameters.
    pub net: CanonLite,
    pub vocab: Vocab,
    pub prior: MolecularPrior,
    pub train: TrainConfig,
    /// `(atom count, frequency)` over the training set, ascending by count.
    pub size_hist: Vec<(usize, usize)>,
}

pub const CHECKPOINT_FORMAT: &str = "symcanon-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    format: String,
    version: u32,
    net: CanonLiteConfig,
    vocab: Vocab,
    prior: MolecularPrior,
    train: TrainConfig,
    size_hist: Vec<(usize, usize)>,
    params: Vec<FlatParam>,
}

impl FlowModel {
    pub fn to_json(&self) -> Result<String> {
        let c = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            net: self.net.config.clone(),
            vocab: self.vocab.clone(),
            prior: self.prior.clone(),
            train: self.train.clone(),
            size_hist: self.size_hist.clone(),
            params: self.net.params.to_flat(),
        };
        Ok(serde_json::to_string(&c)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(s)?;
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(invalid(format!("unsupported checkpoint {} v{}", c.format, c.version)));
        }
        // Parameter values are overwritten, so the init seed is irrelevant.
        let mut net = CanonLite::new(c.net, &mut ChaCha8Rng::seed_from_u64(0))?;
        net.params.load_flat(&c.params)?;
        if net.params.tensors.iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(invalid("checkpoint contains non-finite parameters"));
        }
        check_compat(&net.config, &c.vocab)?;
        Ok(Self {
            net,
            vocab: c.vocab,
            prior: c.prior,
            train: c.train,
            size_hist: c.size_hist,
        })
    }
}

fn check_compat(cfg: &CanonLiteConfig, vocab: &Vocab) -> Result<()> {
    if cfg.n_types != vocab.n_types() || cfg.n_charges != vocab.n_charges() {
        return Err(invalid("network heads do not match the vocabulary"));
    }
    Ok(())
}

fn check_data(data: &[Encoded], cfg: &CanonLiteConfig) -> Result<()> {
    for (k, e) in data.iter().enumerate() {
        let n = e.n_atoms();
        if n == 0 || n > cfg.max_atoms {
            return Err(invalid(format!(
                "molecule {k}: {n} atoms outside 1..={}",
                cfg.max_atoms
            )));
        }
    }
    Ok(())
}

fn net_input(s: &Encoded, t: f64, ranks: Vec<f64>, pe_dropped: bool) -> NetInput {
    NetInput {
        coords: s.coords.clone(),
        types: s.types.clone(),
        charges: s.charges.clone(),
        bonds: s.bonds.clone(),
        t,
        ranks,
        pe_dropped,
    }
}

/// Draws one noise state per data state; with `use_ot`, noise is matched to
/// data by exact OT within each group of equal atom count.
fn draw_noise<R: Rng + ?Sized>(
    batch: &[&Encoded],
    prior: &MolecularPrior,
    use_ot: bool,
    kabsch: bool,
    rng: &mut R,
) -> Result<Vec<Encoded>> {
    let mut noise: Vec<Encoded> = batch.iter().map(|d| prior.sample(d.n_atoms(), rng)).collect();
    if !use_ot {
        return Ok(noise);
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (k, d) in batch.iter().enumerate() {
        groups.entry(d.n_atoms()).or_default().push(k);
    }
    for idx in groups.values().filter(|g| g.len() > 1) {
        let data: Vec<_> = idx.iter().map(|&k| batch[k].coords.clone()).collect();
        let nz: Vec<_> = idx.iter().map(|&k| noise[k].coords.clone()).collect();
        let (plan, aligned) = ot_pair_clouds(&data, &nz, CouplingMode::OtExact, kabsch)?;
        let old: Vec<Encoded> = idx.iter().map(|&k| noise[k].clone()).collect();
        for (&(i, j), coords) in plan.pairs.iter().zip(aligned) {
            let mut e = old[j].clone();
            e.coords = coords;
            noise[idx[i]] = e;
        }
    }
    Ok(noise)
}

/// Mean loss of `net` on `data` with a fixed seed, no PE drop and no rank noise.
pub fn evaluate(
    net: &CanonLite,
    data: &[Encoded],
    prior: &MolecularPrior,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<LossValues> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = LossValues::default();
    for d in data {
        let n = d.n_atoms();
        let z1 = prior.sample(n, &mut rng);
        let t = sample_time(cfg.time_dist, &mut rng);
        let s = interpolate(d, &z1, t, cfg.coord_noise, &mut rng)?;
        let ranks = (0..n).map(|i| i as f64 / n as f64).collect();
        let input = net_input(&s.z_t, t, ranks, false);
        let (v, _) = loss_and_grads(net, &input, &s, &rank_targets(n), &cfg.weights)?;
        acc.add_scaled(&v, 1.0 / data.len() as f64);
    }
    Ok(acc)
}

/// Trains on canonical states (atom `i` has rank `i/N`). Returns the EMA
/// model and one trace row per epoch.
pub fn train(
    data: &[Encoded],
    val: &[Encoded],
    net_cfg: CanonLiteConfig,
    prior: &MolecularPrior,
    vocab: &Vocab,
    cfg: &TrainConfig,
) -> Result<(FlowModel, Vec<TraceRow>)> {
    cfg.validate()?;
    check_compat(&net_cfg, vocab)?;
    check_data(data, &net_cfg)?;
    check_data(val, &net_cfg)?;
    if cfg.epochs > 0 && data.is_empty() {
        return Err(invalid("no training data"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = CanonLite::new(net_cfg, &mut rng)?;
    let mut opt = Adam::new(&net.params);
    let mut ema = Ema::new(&net.params, cfg.ema_decay);
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0usize;
    let val_seed = cfg.seed ^ 0x5eed_0f_7a1;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let p_ot = cfg.ot.probability(epoch);
        let mut epoch_loss = LossValues::default();
        let n_batches = order.len().div_ceil(cfg.batch_size);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Encoded> = chunk.iter().map(|&k| &data[k]).collect();
            let use_ot = rng.random::<f64>() < p_ot;
            let noise = draw_noise(&batch, prior, use_ot, cfg.kabsch, &mut rng)?;
            let mut grads: Vec<Tensor> = net.params.zeros_like();
            let mut batch_loss = LossValues::default();
            let scale = 1.0 / batch.len() as f64;
            for (d, z1) in batch.iter().zip(&noise) {
                let n = d.n_atoms();
                let t = sample_time(cfg.time_dist, &mut rng);
                let s = interpolate(d, z1, t, cfg.coord_noise, &mut rng)?;
                let ranks = (0..n)
                    .map(|i| rank_noise(i as f64 / n as f64, 1.0 - t, cfg.rank_noise, &mut rng))
                    .collect::<Result<Vec<_>>>()?;
                let dropped = rng.random::<f64>() < cfg.pe_drop;
                let input = net_input(&s.z_t, t, ranks, dropped);
                let (v, g) = loss_and_grads(&net, &input, &s, &rank_targets(n), &cfg.weights)?;
                batch_loss.add_scaled(&v, scale);
                for (acc, gi) in grads.iter_mut().zip(g) {
                    *acc += gi * scale;
                }
            }
            if !batch_loss.is_finite() || grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
                return Err(Error::NonFiniteLoss {
                    step,
                    detail: format!("epoch {epoch}: {batch_loss:?}"),
                });
            }
            clip_global_norm(&mut grads, cfg.grad_clip);
            opt.update(
                &mut net.params,
                &grads,
                warmup_lr(cfg.lr, cfg.warmup_steps, step as u64),
            );
            ema.update(&net.params);
            epoch_loss.add_scaled(&batch_loss, 1.0 / n_batches as f64);
            step += 1;
        }
        let mut ema_net = net.clone();
        ema_net.params = ema.shadow.clone();
        let val_loss = if val.is_empty() {
            f64::NAN
        } else {
            evaluate(&ema_net, val, prior, cfg, val_seed)?.total
        };
        trace.push(TraceRow {
            epoch,
            train: epoch_loss,
            val_loss,
            p_ot,
        });
    }
    net.params = ema.shadow;
    let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
    for d in data {
        *hist.entry(d.n_atoms()).or_default() += 1;
    }
    Ok((
        FlowModel {
            net,
            vocab: vocab.clone(),
            prior: prior.clone(),
            train: cfg.clone(),
            size_hist: hist.into_iter().collect(),
        },
        trace,
    ))
}
