//! Few-step generation on the canonical slice.
//!
//! Sampling starts from the prior at `t = 1` and takes `K` Euler steps to
//! `t = 0`. In Regime A the ranks stay at their index values `i/N` for the
//! whole trajectory and the canonicalizer is never called. In Regime B the
//! ranks are refreshed after every step, by default from the model's rank
//! head ("predict" mode) and optionally by re-canonicalizing the state
//! ("canonicalize" mode, projected canonical sampling). A final Haar-random
//! group element restores invariance of the sample distribution.
//!
//! Categorical features follow a discrete Euler analog: over a step from
//! `t_from` to `t_to` each entry is redrawn from the predicted distribution
//! with probability `(t_from − t_to)/t_from`, else kept.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::canonicalizer::{canonicalize, ranks as index_ranks, GroupChoice};
use crate::error::{dim_err, invalid, Result};
use crate::flow::net::{upper_pairs, CanonLite, NetInput, Predictions};
use crate::flow::tape::Tensor;
use crate::flow::train::FlowModel;
use crate::molecule::{bond, Encoded, MoleculeState, Vocab};
use crate::priors::{CoordPrior, MolecularPrior};
use crate::symgroup::{act, haar_permutation, haar_rotation, GroupElement};

/// Anything that maps a noisy state to velocity and class logits.
pub trait VelocityField {
    fn n_types(&self) -> usize;
    fn n_charges(&self) -> usize;
    fn predict(&self, x: &NetInput) -> Result<Predictions>;
}

impl VelocityField for CanonLite {
    fn n_types(&self) -> usize {
        self.config.n_types
    }

    fn n_charges(&self) -> usize {
        self.config.n_charges
    }

    fn predict(&self, x: &NetInput) -> Result<Predictions> {
        CanonLite::predict(self, x)
    }
}

/// The zero vector field with uniform class logits and a constant rank head.
#[derive(Debug, Clone, Copy)]
pub struct ZeroField {
    pub n_types: usize,
    pub n_charges: usize,
}

impl VelocityField for ZeroField {
    fn n_types(&self) -> usize {
        self.n_types
    }

    fn n_charges(&self) -> usize {
        self.n_charges
    }

    fn predict(&self, x: &NetInput) -> Result<Predictions> {
        let n = x.n_atoms();
        Ok(Predictions {
            velocity: Tensor::zeros(n, 3),
            type_logits: Tensor::zeros(n, self.n_types),
            charge_logits: Tensor::zeros(n, self.n_charges),
            bond_logits: Tensor::zeros(upper_pairs(n).len(), bond::N_CLASSES),
            rank: vec![0.0; n],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Index ranks held fixed; no canonicalizer calls.
    A,
    /// Ranks refreshed after every step.
    B,
}

/// How Regime B refreshes ranks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankMode {
    Predict,
    Canonicalize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleGroup {
    None,
    Perm,
    PermSo3,
}

impl SampleGroup {
    fn choice(self) -> GroupChoice {
        match self {
            SampleGroup::PermSo3 => GroupChoice::PermSo3,
            _ => GroupChoice::Perm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorChoice {
    /// Centered `N(0, I)` coordinates.
    Isotropic,
    /// The coordinate prior stored with the model.
    Aligned,
}

/// Placement of the integration times `t_K = 1 > … > t_0 = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeGrid {
    /// `t_k = k/K`.
    Uniform,
    /// `t_k = (k/K)²`, denser near the data end.
    Quadratic,
}

impl TimeGrid {
    /// Times from `1` down to `0`, `steps + 1` entries.
    pub fn times(self, steps: usize) -> Vec<f64> {
        (0..=steps)
            .rev()
            .map(|k| {
                let u = k as f64 / steps as f64;
                match self {
                    TimeGrid::Uniform => u,
                    TimeGrid::Quadratic => u * u,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleConfig {
    pub steps: usize,
    pub regime: Regime,
    pub rank_mode: RankMode,
    pub cfg_scale: f64,
    pub prior: PriorChoice,
    pub group: SampleGroup,
    /// Apply a Haar-random group element to each finished sample.
    pub haar: bool,
    pub grid: TimeGrid,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            steps: 20,
            regime: Regime::A,
            rank_mode: RankMode::Predict,
            cfg_scale: 1.0,
            prior: PriorChoice::Aligned,
            group: SampleGroup::PermSo3,
            haar: true,
            grid: TimeGrid::Uniform,
            seed: 0,
        }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(invalid("at least one integration step is required"));
        }
        if !(self.cfg_scale >= 0.0 && self.cfg_scale.is_finite()) {
            return Err(invalid("cfg_scale must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Instrumentation of one sampling run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleStats {
    /// Network evaluations.
    pub nfe: usize,
    /// Canonicalizer calls made during integration.
    pub canonicalizer_calls: usize,
    /// Rank-head outputs that fell back to index ranks.
    pub rank_fallbacks: usize,
}

fn input(z: &Encoded, t: f64, ranks: &[f64], pe_dropped: bool) -> NetInput {
    NetInput {
        coords: z.coords.clone(),
        types: z.types.clone(),
        charges: z.charges.clone(),
        bonds: z.bonds.clone(),
        t,
        ranks: ranks.to_vec(),
        pe_dropped,
    }
}

fn combine(u: &Tensor, c: &Tensor, w: f64) -> Tensor {
    u + (c - u) * w
}

/// Guided predictions: `u + w(c − u)` for velocity and logits. `w = 1`
/// evaluates only the conditional model and `w = 0` only the unconditional.
pub fn guided_predict<F: VelocityField + ?Sized>(
    model: &F,
    z: &Encoded,
    t: f64,
    ranks: &[f64],
    cfg_scale: f64,
    stats: &mut SampleStats,
) -> Result<Predictions> {
    if cfg_scale == 1.0 {
        stats.nfe += 1;
        return model.predict(&input(z, t, ranks, false));
    }
    stats.nfe += 1;
    let u = model.predict(&input(z, t, ranks, true))?;
    if cfg_scale == 0.0 {
        return Ok(u);
    }
    stats.nfe += 1;
    let c = model.predict(&input(z, t, ranks, false))?;
    Ok(Predictions {
        velocity: combine(&u.velocity, &c.velocity, cfg_scale),
        type_logits: combine(&u.type_logits, &c.type_logits, cfg_scale),
        charge_logits: combine(&u.charge_logits, &c.charge_logits, cfg_scale),
        bond_logits: combine(&u.bond_logits, &c.bond_logits, cfg_scale),
        rank: c.rank,
    })
}

fn draw_class<R: Rng + ?Sized>(logits: &Tensor, row: usize, rng: &mut R) -> usize {
    let r = logits.row(row);
    let m = r.max();
    let w: Vec<f64> = r.iter().map(|v| (v - m).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, wk) in w.iter().enumerate() {
        if u < *wk {
            return k;
        }
        u -= wk;
    }
    w.len() - 1
}

/// Applies one Euler step given predictions made at `t_from`.
pub fn apply_step<R: Rng + ?Sized>(
    z: &Encoded,
    pred: &Predictions,
    t_from: f64,
    t_to: f64,
    rng: &mut R,
) -> Result<Encoded> {
    let n = z.n_atoms();
    if pred.velocity.shape() != (n, 3) {
        return Err(dim_err("velocity shape does not match the state"));
    }
    let dt = t_to - t_from;
    let mut out = z.clone();
    for (i, x) in out.coords.iter_mut().enumerate() {
        for k in 0..3 {
            x[k] += dt * pred.velocity[(i, k)];
        }
    }
    let p = if t_from > 0.0 {
        ((t_from - t_to) / t_from).clamp(0.0, 1.0)
    } else {
        0.0
    };
    for i in 0..n {
        if rng.random::<f64>() < p {
            out.types[i] = draw_class(&pred.type_logits, i, rng);
        }
        if rng.random::<f64>() < p {
            out.charges[i] = draw_class(&pred.charge_logits, i, rng);
        }
    }
    for (e, (i, j)) in upper_pairs(n).into_iter().enumerate() {
        if rng.random::<f64>() < p {
            let b = draw_class(&pred.bond_logits, e, rng);
            out.bonds[i * n + j] = b;
            out.bonds[j * n + i] = b;
        }
    }
    Ok(out)
}

/// One guided Euler step `z + (t_to − t_from)·v`.
#[allow(clippy::too_many_arguments)]
pub fn euler_step<F: VelocityField + ?Sized, R: Rng + ?Sized>(
    model: &F,
    z: &Encoded,
    t_from: f64,
    t_to: f64,
    ranks: &[f64],
    cfg_scale: f64,
    stats: &mut SampleStats,
    rng: &mut R,
) -> Result<Encoded> {
    let pred = guided_predict(model, z, t_from, ranks, cfg_scale, stats)?;
    apply_step(z, &pred, t_from, t_to, rng)
}

/// Ranks from the model's rank head, evaluated without positional encoding.
/// Head outputs span `[0, 1]` with target `i/(N−1)`; they are rescaled to the
/// `i/N` grid of the encoding. A head range below `1e-6` falls back to index
/// ranks (second return value `true`).
pub fn rank_estimate<F: VelocityField + ?Sized>(model: &F, z: &Encoded, t: f64) -> Result<(Vec<f64>, bool)> {
    let n = z.n_atoms();
    let placeholder = index_ranks(n);
    let pred = model.predict(&input(z, t, &placeholder, true))?;
    let lo = pred.rank.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = pred.rank.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if n < 2 || !(hi - lo >= 1e-6) {
        return Ok((placeholder, true));
    }
    let scale = (n - 1) as f64 / n as f64;
    Ok((pred.rank.iter().map(|r| (r - lo) / (hi - lo) * scale).collect(), false))
}

/// Projects a state onto the canonical slice: canonicalizes it and returns
/// the reordered state with index ranks.
pub fn pcs_step(z: &Encoded, vocab: &Vocab, group: GroupChoice) -> Result<(Encoded, Vec<f64>)> {
    let m = vocab.decode(z)?;
    let c = canonicalize(&m, group)?;
    let e = vocab.encode(&c.representative)?;
    Ok((e, c.ranks))
}

/// Applies an independent Haar-random group element to every sample.
pub fn haar_randomize<R: Rng + ?Sized>(
    samples: &[MoleculeState],
    group: SampleGroup,
    rng: &mut R,
) -> Result<Vec<MoleculeState>> {
    samples
        .iter()
        .map(|m| {
            let n = m.n_atoms();
            let g = match group {
                SampleGroup::None => return Ok(m.clone()),
                SampleGroup::Perm => GroupElement::from_perm(haar_permutation(n, rng)),
                SampleGroup::PermSo3 => {
                    let mut g = GroupElement::from_perm(haar_permutation(n, rng));
                    g.rot = haar_rotation(rng);
                    g
                }
            };
            act(&g, m)
        })
        .collect()
}

fn with_prior(prior: &MolecularPrior, choice: PriorChoice) -> MolecularPrior {
    let mut p = prior.clone();
    if choice == PriorChoice::Isotropic {
        p.coords = CoordPrior::Isotropic;
    }
    p
}

/// Generates one slice sample per entry of `sizes`, each with its own RNG
/// stream. No Haar randomization is applied here.
pub fn sample_encoded<F: VelocityField + ?Sized>(
    model: &F,
    prior: &MolecularPrior,
    vocab: Option<&Vocab>,
    sizes: &[usize],
    cfg: &SampleConfig,
) -> Result<(Vec<Encoded>, SampleStats)> {
    cfg.validate()?;
    if prior.atom_types.n_classes() != model.n_types() || prior.charges.n_classes() != model.n_charges() {
        return Err(dim_err("prior and model disagree on class counts"));
    }
    if cfg.regime == Regime::B && cfg.rank_mode == RankMode::Canonicalize && vocab.is_none() {
        return Err(invalid("canonicalize mode needs a vocabulary"));
    }
    let prior = with_prior(prior, cfg.prior);
    let times = cfg.grid.times(cfg.steps);
    let mut stats = SampleStats::default();
    let calls_before = crate::canonicalizer::calls_on_this_thread();
    let mut out = Vec::with_capacity(sizes.len());
    for (k, &n) in sizes.iter().enumerate() {
        if n == 0 {
            return Err(invalid("samples need at least one atom"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(k as u64);
        let mut z = prior.sample(n, &mut rng);
        let mut ranks = index_ranks(n);
        for w in times.windows(2) {
            z = euler_step(model, &z, w[0], w[1], &ranks, cfg.cfg_scale, &mut stats, &mut rng)?;
            if cfg.regime == Regime::B && w[1] > 0.0 {
                match cfg.rank_mode {
                    RankMode::Predict => {
                        let (r, fell_back) = rank_estimate(model, &z, w[1])?;
                        stats.nfe += 1;
                        stats.rank_fallbacks += usize::from(fell_back);
                        ranks = r;
                    }
                    RankMode::Canonicalize => {
                        let vocab = vocab.expect("checked above");
                        (z, ranks) = pcs_step(&z, vocab, cfg.group.choice())?;
                    }
                }
            }
        }
        out.push(z);
    }
    stats.canonicalizer_calls = crate::canonicalizer::calls_on_this_thread() - calls_before;
    Ok((out, stats))
}

/// Draws atom counts from the model's training size histogram.
pub fn draw_sizes<R: Rng + ?Sized>(model: &FlowModel, n: usize, rng: &mut R) -> Result<Vec<usize>> {
    let total: usize = model.size_hist.iter().map(|(_, c)| c).sum();
    if total == 0 {
        return Err(invalid("model has no size histogram; pass the atom count explicitly"));
    }
    Ok((0..n)
        .map(|_| {
            let mut u = rng.random_range(0..total);
            for &(size, c) in &model.size_hist {
                if u < c {
                    return size;
                }
                u -= c;
            }
            unreachable!("u < total")
        })
        .collect())
}

/// Full sampling from a trained model: slice samples, decoded, then Haar
/// randomized when `cfg.haar` is set.
pub fn sample(model: &FlowModel, sizes: &[usize], cfg: &SampleConfig) -> Result<(Vec<MoleculeState>, SampleStats)> {
    let (enc, stats) = sample_encoded(&model.net, &model.prior, Some(&model.vocab), sizes, cfg)?;
    let mols = enc.iter().map(|e| model.vocab.decode(e)).collect::<Result<Vec<_>>>()?;
    if !cfg.haar {
        return Ok((mols, stats));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(u64::MAX);
    Ok((haar_randomize(&mols, cfg.group, &mut rng)?, stats))
}
