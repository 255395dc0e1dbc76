//! Monte Carlo and closed-form checks of the variance arguments behind
//! canonical training, on small synthetic systems.
//!
//! A [`MixtureSystem`] is a slice coupling lifted by a finite group: draw
//! `Z̃₀ ~ q₀` and `Z̃₁ ~ N(μ₁, Σ₁)` independently, draw `g` from the group
//! (uniformly unless weights are given) and set `Zᵢ = g·Z̃ᵢ`. With
//! `Z_t = (1 − t)Z₀ + tZ₁` and target `U = Z₁ − Z₀`, the slice marginal of
//! `Z̃_t` is Gaussian with mean `m_t = (1 − t)μ₀ + tμ₁` and covariance
//! `C_t = (1 − t)²Σ₀ + t²Σ₁`, so the ambient density of `Z_t` is the group
//! mixture `Σ π_g N(g⁻¹z; m_t, C_t)` and every posterior over `g` is exact.
//!
//! Within one component the regression is linear: `E[Δ | Z̃_t = y] = (μ₁ − μ₀)
//! + K C_t⁻¹(y − m_t)` with `K = tΣ₁ − (1 − t)Σ₀`, and the residual covariance
//! is [`gaussian_condvar`]. The ambient conditional variance of `U` then splits
//! into that within-slice term and the spread of the component drifts
//! `m_g(z) = g·m(g⁻¹z)` under the posterior, the symmetry ambiguity.
//!
//! Only outer expectations are Monte Carlo. Conditional variances that are
//! estimated rather than computed use the leave-one-out local-linear k-NN
//! estimator in [`knn`].

pub mod knn;
pub mod suite;

pub use suite::{run_suites, CheckResult, Relation, SuiteOptions, SuiteSystem, TheoryReport};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::coupling::LiftGroup;
use crate::error::{dim_err, invalid, Result};
use crate::stats;
use crate::symgroup::FiniteGroupSpec;

/// Smallest Monte Carlo sample accepted by the estimators.
pub const MIN_MC: usize = 1000;

/// k-NN conditional variances in more than one dimension run on at most this
/// many samples; the per-point neighbourhood fits dominate the cost.
pub const KNN_MAX_N_MULTIDIM: usize = 50_000;

/// Slice data density `q₀`.
#[derive(Debug, Clone, PartialEq)]
pub enum SliceDensity {
    PointMass(DVector<f64>),
    Gaussian { mean: DVector<f64>, cov: DMatrix<f64> },
}

impl SliceDensity {
    pub fn dim(&self) -> usize {
        self.mean().len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        match self {
            Self::PointMass(m) => m,
            Self::Gaussian { mean, .. } => mean,
        }
    }

    /// Zero for a point mass.
    pub fn cov(&self) -> DMatrix<f64> {
        match self {
            Self::PointMass(m) => DMatrix::zeros(m.len(), m.len()),
            Self::Gaussian { cov, .. } => cov.clone(),
        }
    }
}

/// A slice coupling lifted by a finite orthogonal group.
#[derive(Debug, Clone)]
pub struct MixtureSystem {
    pub group: FiniteGroupSpec,
    pub q0: SliceDensity,
    pub q1_mean: DVector<f64>,
    pub q1_cov: DMatrix<f64>,
    /// In `(0, 1]`.
    pub t: f64,
    /// Probabilities of the group elements; `None` is uniform. Non-uniform
    /// weights make the lifted coupling non-invariant.
    pub weights: Option<Vec<f64>>,
}

fn check_psd(m: &DMatrix<f64>, what: &str, strict: bool) -> Result<()> {
    if (m - m.transpose()).abs().max() > 1e-10 * (1.0 + m.abs().max()) {
        return Err(invalid(format!("{what} is not symmetric")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(invalid(format!("{what} has non-finite entries")));
    }
    let min = m.clone().symmetric_eigen().eigenvalues.min();
    let floor = -1e-12 * (1.0 + m.abs().max());
    if min < floor || (strict && min <= 0.0) {
        return Err(invalid(format!(
            "{what} is not positive {}definite",
            if strict { "" } else { "semi" }
        )));
    }
    Ok(())
}

/// `V diag(√λ⁺)` for a symmetric positive semidefinite matrix.
fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = m.clone().symmetric_eigen();
    let mut l = e.eigenvectors.clone();
    for (j, lam) in e.eigenvalues.iter().enumerate() {
        let s = lam.max(0.0).sqrt();
        l.column_mut(j).scale_mut(s);
    }
    l
}

fn gaussian_draw<R: Rng + ?Sized>(mean: &DVector<f64>, sqrt: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let e = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    mean + sqrt * e
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl MixtureSystem {
    /// Validates and builds a system with uniform group weights.
    pub fn new(
        group: FiniteGroupSpec,
        q0: SliceDensity,
        q1_mean: DVector<f64>,
        q1_cov: DMatrix<f64>,
        t: f64,
    ) -> Result<Self> {
        let sys = Self {
            group,
            q0,
            q1_mean,
            q1_cov,
            t,
            weights: None,
        };
        sys.validate()?;
        Ok(sys)
    }

    /// Sign flip on `ℝ`, `q₀ = δ₁`, `q₁ = N(0, 1)`, `t = 0.5`.
    pub fn signflip_reference() -> Self {
        Self {
            group: FiniteGroupSpec::sign_flip(),
            q0: SliceDensity::PointMass(DVector::from_element(1, 1.0)),
            q1_mean: DVector::zeros(1),
            q1_cov: DMatrix::identity(1, 1),
            t: 0.5,
            weights: None,
        }
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        self.weights = Some(weights);
        self.validate()?;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.q1_mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.group.validate()?;
        let d = self.group.dim();
        if self.q0.dim() != d || self.q1_mean.len() != d || self.q1_cov.shape() != (d, d) {
            return Err(dim_err(format!("system densities must live in dimension {d}")));
        }
        if let SliceDensity::Gaussian { cov, .. } = &self.q0 {
            if cov.shape() != (d, d) {
                return Err(dim_err("slice data covariance has the wrong shape"));
            }
            check_psd(cov, "slice data covariance", false)?;
        }
        if self.q0.mean().iter().chain(self.q1_mean.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("non-finite mean"));
        }
        check_psd(&self.q1_cov, "slice prior covariance", true)?;
        if !(self.t > 0.0 && self.t <= 1.0) {
            return Err(invalid(format!("time {} outside (0, 1]", self.t)));
        }
        if let Some(w) = &self.weights {
            if w.len() != self.group.order() {
                return Err(dim_err("one weight per group element required"));
            }
            if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
                return Err(invalid("group weights must be non-negative with positive sum"));
            }
        }
        Ok(())
    }

    pub(crate) fn prepare(&self) -> Result<Prepared<'_>> {
        self.validate()?;
        let t = self.t;
        let s0 = self.q0.cov();
        let mu0 = self.q0.mean().clone();
        let c = &s0 * (1.0 - t).powi(2) + &self.q1_cov * (t * t);
        let ch = c
            .clone()
            .cholesky()
            .ok_or_else(|| invalid("slice marginal covariance is singular"))?;
        let c_inv = ch.inverse();
        let d = self.dim() as f64;
        let log_det: f64 = ch.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        let log_norm = -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + log_det);
        let k = &self.q1_cov * t - &s0 * (1.0 - t);
        let m = self.group.order();
        let w: Vec<f64> = match &self.weights {
            Some(w) => {
                let s: f64 = w.iter().sum();
                w.iter().map(|v| v / s).collect()
            }
            None => vec![1.0 / m as f64; m],
        };
        Ok(Prepared {
            sys: self,
            log_pi: w.iter().map(|v| v.ln()).collect(),
            cum_pi: w
                .iter()
                .scan(0.0, |acc, v| {
                    *acc += v;
                    Some(*acc)
                })
                .collect(),
            m_t: &mu0 * (1.0 - t) + &self.q1_mean * t,
            dmu: &self.q1_mean - &mu0,
            gain: k * &c_inv,
            c_inv,
            log_norm,
            sqrt0: psd_sqrt(&s0),
            sqrt1: psd_sqrt(&self.q1_cov),
            mu0,
            within_cov: gaussian_condvar(&s0, &self.q1_cov, t)?,
        })
    }
}

/// Per-system quantities shared by every evaluation.
pub(crate) struct Prepared<'a> {
    sys: &'a MixtureSystem,
    log_pi: Vec<f64>,
    cum_pi: Vec<f64>,
    m_t: DVector<f64>,
    dmu: DVector<f64>,
    gain: DMatrix<f64>,
    c_inv: DMatrix<f64>,
    log_norm: f64,
    sqrt0: DMatrix<f64>,
    sqrt1: DMatrix<f64>,
    mu0: DVector<f64>,
    within_cov: DMatrix<f64>,
}

/// One lifted draw: the ambient pair `(Z_t, U)` and its slice pair `(Z̃_t, Δ)`.
pub(crate) struct Draw {
    z_t: DVector<f64>,
    u: DVector<f64>,
    slice_t: DVector<f64>,
    delta: DVector<f64>,
}

impl Prepared<'_> {
    fn elements(&self) -> &[DMatrix<f64>] {
        &self.sys.group.elements
    }

    fn check_point(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.sys.dim() {
            return Err(dim_err(format!("point must have dimension {}", self.sys.dim())));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite point"));
        }
        Ok(())
    }

    /// Component log densities `log π_g + log N(g⁻¹z; m_t, C_t)`.
    fn component_logs(&self, z: &DVector<f64>) -> Vec<f64> {
        self.elements()
            .iter()
            .zip(&self.log_pi)
            .map(|(g, lp)| {
                let r = g.tr_mul(z) - &self.m_t;
                lp + self.log_norm - 0.5 * r.dot(&(&self.c_inv * &r))
            })
            .collect()
    }

    fn log_density(&self, z: &DVector<f64>) -> f64 {
        log_sum_exp(&self.component_logs(z))
    }

    fn posterior(&self, z: &DVector<f64>) -> Vec<f64> {
        let logs = self.component_logs(z);
        let lse = log_sum_exp(&logs);
        logs.iter().map(|l| (l - lse).exp()).collect()
    }

    fn score(&self, z: &DVector<f64>) -> DVector<f64> {
        let w = self.posterior(z);
        let mut s = DVector::zeros(z.len());
        for (g, wg) in self.elements().iter().zip(&w) {
            let r = g.tr_mul(z) - &self.m_t;
            s -= g * (&self.c_inv * r) * *wg;
        }
        s
    }

    /// Conditional drift of component `g` at `z`: `g·m(g⁻¹z)`.
    fn drifts(&self, z: &DVector<f64>) -> Vec<DVector<f64>> {
        self.elements()
            .iter()
            .map(|g| g * (&self.dmu + &self.gain * (g.tr_mul(z) - &self.m_t)))
            .collect()
    }

    /// `(ambiguity, collision bound)` at `z`.
    fn ambiguity(&self, z: &DVector<f64>) -> (f64, f64) {
        let w = self.posterior(z);
        let m = self.drifts(z);
        let mut mean = DVector::zeros(z.len());
        for (mg, wg) in m.iter().zip(&w) {
            mean += mg * *wg;
        }
        let amb = m.iter().zip(&w).map(|(mg, wg)| wg * (mg - &mean).norm_squared()).sum();
        let mut sep = f64::INFINITY;
        for a in 0..m.len() {
            for b in a + 1..m.len() {
                sep = sep.min((&m[a] - &m[b]).norm_squared());
            }
        }
        let bound = if sep.is_finite() {
            0.5 * sep * (1.0 - w.iter().map(|v| v * v).sum::<f64>()).max(0.0)
        } else {
            0.0
        };
        (amb, bound)
    }

    fn bayes_velocity(&self, z: &DVector<f64>) -> DVector<f64> {
        let w = self.posterior(z);
        let mut v = DVector::zeros(z.len());
        for (mg, wg) in self.drifts(z).iter().zip(&w) {
            v += mg * *wg;
        }
        v
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Draw {
        let t = self.sys.t;
        let u: f64 = rng.random();
        let gi = self.cum_pi.iter().position(|c| u < *c).unwrap_or(self.cum_pi.len() - 1);
        let z0 = gaussian_draw(&self.mu0, &self.sqrt0, rng);
        let z1 = gaussian_draw(&self.sys.q1_mean, &self.sqrt1, rng);
        let slice_t = &z0 * (1.0 - t) + &z1 * t;
        let delta = z1 - z0;
        let g = &self.elements()[gi];
        Draw {
            z_t: g * &slice_t,
            u: g * &delta,
            slice_t,
            delta,
        }
    }
}

pub fn mixture_log_density(sys: &MixtureSystem, z: &[f64]) -> Result<f64> {
    let p = sys.prepare()?;
    p.check_point(z)?;
    Ok(p.log_density(&DVector::from_column_slice(z)))
}

/// Posterior probabilities of the group elements given `Z_t = z`.
pub fn posterior(sys: &MixtureSystem, z: &[f64]) -> Result<Vec<f64>> {
    let p = sys.prepare()?;
    p.check_point(z)?;
    Ok(p.posterior(&DVector::from_column_slice(z)))
}

/// `∇ log p(z) = Σ w_g(z) g·∇log q(g⁻¹z)`, evaluated through log-sum-exp so
/// that far-out points do not underflow.
pub fn mixture_score(sys: &MixtureSystem, z: &[f64]) -> Result<DVector<f64>> {
    let p = sys.prepare()?;
    p.check_point(z)?;
    Ok(p.score(&DVector::from_column_slice(z)))
}

/// The regression target `E[U | Z_t = z]` in closed form.
pub fn bayes_velocity(sys: &MixtureSystem, z: &[f64]) -> Result<DVector<f64>> {
    let p = sys.prepare()?;
    p.check_point(z)?;
    Ok(p.bayes_velocity(&DVector::from_column_slice(z)))
}

/// Pointwise symmetry ambiguity and its collision lower bound
/// `Δ(z)²/2 · (1 − Σ ϱ(g|z)²)`, with `Δ(z)` the smallest separation between
/// two component drifts.
pub fn ambiguity_at(sys: &MixtureSystem, z: &[f64]) -> Result<(f64, f64)> {
    let p = sys.prepare()?;
    p.check_point(z)?;
    Ok(p.ambiguity(&DVector::from_column_slice(z)))
}

/// `Cov(Δ | Z̃_t) = t⁻²[Σ₀ − (1 − t)²Σ₀((1 − t)²Σ₀ + t²Σ₁)⁻¹Σ₀]` for
/// independent Gaussian endpoints, using `Δ = (Z̃_t − Z̃₀)/t`.
pub fn gaussian_condvar(s0: &DMatrix<f64>, s1: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    let d = s0.nrows();
    if s0.shape() != (d, d) || s1.shape() != (d, d) {
        return Err(dim_err("covariances must be square and of equal size"));
    }
    if !(t > 0.0 && t <= 1.0) {
        return Err(invalid(format!("time {t} outside (0, 1]")));
    }
    let a = (1.0 - t).powi(2);
    let c = s0 * a + s1 * (t * t);
    let c_inv = c
        .cholesky()
        .ok_or_else(|| invalid("(1 − t)²Σ₀ + t²Σ₁ is not positive definite"))?
        .inverse();
    let inner = s0 - s0 * &c_inv * s0 * a;
    let out = inner / (t * t);
    Ok((&out + out.transpose()) * 0.5)
}

/// The same conditional covariance from the joint Gaussian of `(Δ, Z̃_t)`:
/// `Cov Δ − Cov(Δ, Z̃_t) Cov(Z̃_t)⁻¹ Cov(Z̃_t, Δ)`.
pub fn joint_gaussian_condvar(s0: &DMatrix<f64>, s1: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    if s0.shape() != s1.shape() || s0.nrows() != s0.ncols() {
        return Err(dim_err("covariances must be square and of equal size"));
    }
    let cov_d = s0 + s1;
    let cross = s1 * t - s0 * (1.0 - t);
    let cov_z = s0 * (1.0 - t).powi(2) + s1 * (t * t);
    let inv = cov_z
        .cholesky()
        .ok_or_else(|| invalid("marginal covariance is not positive definite"))?
        .inverse();
    Ok(cov_d - &cross * inv * cross.transpose())
}

/// A Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn of(x: &[f64]) -> Self {
        Self {
            value: stats::mean(x),
            stderr: (stats::variance(x) / x.len() as f64).sqrt(),
        }
    }
}

/// Lifted samples stored row-major.
pub struct LiftSamples {
    pub dim: usize,
    pub z_t: Vec<f64>,
    pub u: Vec<f64>,
    pub slice_t: Vec<f64>,
    pub delta: Vec<f64>,
}

pub fn simulate_lift<R: Rng + ?Sized>(sys: &MixtureSystem, n: usize, rng: &mut R) -> Result<LiftSamples> {
    let p = sys.prepare()?;
    Ok(simulate(&p, n, rng))
}

fn simulate<R: Rng + ?Sized>(p: &Prepared, n: usize, rng: &mut R) -> LiftSamples {
    let d = p.sys.dim();
    let mut s = LiftSamples {
        dim: d,
        z_t: Vec::with_capacity(n * d),
        u: Vec::with_capacity(n * d),
        slice_t: Vec::with_capacity(n * d),
        delta: Vec::with_capacity(n * d),
    };
    for _ in 0..n {
        let dr = p.draw(rng);
        s.z_t.extend(dr.z_t.iter());
        s.u.extend(dr.u.iter());
        s.slice_t.extend(dr.slice_t.iter());
        s.delta.extend(dr.delta.iter());
    }
    s
}

fn check_mc(n: usize) -> Result<()> {
    if n < MIN_MC {
        return Err(invalid(format!("n_mc = {n} is below the minimum of {MIN_MC}")));
    }
    Ok(())
}

/// Number of samples the k-NN estimators use for a requested `n`.
pub fn knn_sample_size(n: usize, dim: usize) -> usize {
    if dim > 1 {
        n.min(KNN_MAX_N_MULTIDIM)
    } else {
        n
    }
}

/// Estimates of `E tr Var(U | Z_t)` (lhs), `E tr Var(Δ | Z̃_t)` (within) and
/// the expected ambiguity, plus the paired residual `lhs − within −
/// ambiguity`.
#[derive(Debug, Clone, Serialize)]
pub struct Decomposition {
    pub n: usize,
    pub lhs: Estimate,
    pub within: Estimate,
    pub ambiguity: Estimate,
    pub residual: Estimate,
    /// `lhs − within`, paired.
    pub excess: Estimate,
    /// Trace of [`gaussian_condvar`] for the system.
    pub within_closed_form: f64,
}

pub fn variance_decomposition<R: Rng + ?Sized>(sys: &MixtureSystem, n_mc: usize, rng: &mut R) -> Result<Decomposition> {
    check_mc(n_mc)?;
    let p = sys.prepare()?;
    let d = sys.dim();
    let n = knn_sample_size(n_mc, d);
    let s = simulate(&p, n, rng);
    let k = knn::default_k(n);
    let q_lhs = knn::knn_condvar(&s.z_t, &s.u, d, d, k)?;
    let q_within = knn::knn_condvar(&s.slice_t, &s.delta, d, d, k)?;
    let amb: Vec<f64> = (0..n)
        .map(|i| p.ambiguity(&DVector::from_column_slice(&s.z_t[i * d..(i + 1) * d])).0)
        .collect();
    let resid: Vec<f64> = (0..n).map(|i| q_lhs[i] - q_within[i] - amb[i]).collect();
    let excess: Vec<f64> = (0..n).map(|i| q_lhs[i] - q_within[i]).collect();
    Ok(Decomposition {
        n,
        lhs: Estimate::of(&q_lhs),
        within: Estimate::of(&q_within),
        ambiguity: Estimate::of(&amb),
        residual: Estimate::of(&resid),
        excess: Estimate::of(&excess),
        within_closed_form: p.within_cov.trace(),
    })
}

/// `E tr Var(U | Z_t)` for a one-dimensional system by quadrature:
/// `tr Cov(Δ | Z̃_t) + ∫ ambiguity(z) p(z) dz`.
pub fn lhs_quadrature_1d(sys: &MixtureSystem) -> Result<f64> {
    if sys.dim() != 1 {
        return Err(dim_err("quadrature reference needs a one-dimensional system"));
    }
    let p = sys.prepare()?;
    let sd = (1.0 / p.c_inv[(0, 0)]).sqrt();
    let r = p.m_t[0].abs() + 12.0 * sd;
    let f = |z: f64| {
        let v = DVector::from_element(1, z);
        p.ambiguity(&v).0 * p.log_density(&v).exp()
    };
    Ok(p.within_cov.trace() + stats::simpson(f, -r, r, 20_000))
}

#[derive(Debug, Clone, Serialize)]
pub struct Collision {
    pub n: usize,
    pub ambiguity: Estimate,
    pub bound: Estimate,
    /// `ambiguity − bound`, paired.
    pub gap: Estimate,
    pub min_pointwise_gap: f64,
}

pub fn collision_bound<R: Rng + ?Sized>(sys: &MixtureSystem, n_mc: usize, rng: &mut R) -> Result<Collision> {
    check_mc(n_mc)?;
    let p = sys.prepare()?;
    let mut amb = Vec::with_capacity(n_mc);
    let mut bound = Vec::with_capacity(n_mc);
    for _ in 0..n_mc {
        let (a, b) = p.ambiguity(&p.draw(rng).z_t);
        amb.push(a);
        bound.push(b);
    }
    let gap: Vec<f64> = amb.iter().zip(&bound).map(|(a, b)| a - b).collect();
    Ok(Collision {
        n: n_mc,
        ambiguity: Estimate::of(&amb),
        bound: Estimate::of(&bound),
        min_pointwise_gap: gap.iter().copied().fold(f64::INFINITY, f64::min),
        gap: Estimate::of(&gap),
    })
}

/// Dependence diagnostics between the lifted endpoints.
#[derive(Debug, Clone, Serialize)]
pub struct LiftIndependence {
    pub n: usize,
    /// Largest absolute Pearson correlation between linear and quadratic
    /// features of `Z₀` and of `Z₁`.
    pub max_abs_corr: f64,
    /// `4/√n`.
    pub threshold: f64,
    /// Largest KS statistic of a `Z₁` coordinate against `N(0, 1)`.
    pub ks_statistic: f64,
    /// Smallest KS p-value over coordinates.
    pub ks_p_value: f64,
    pub dependent: bool,
}

/// Coordinates and their pairwise products.
fn features(x: &DVector<f64>) -> Vec<f64> {
    let d = x.len();
    let mut f: Vec<f64> = x.iter().copied().collect();
    for i in 0..d {
        for j in i..d {
            f.push(x[i] * x[j]);
        }
    }
    f
}

/// Lifts independent slice pairs `(q₀, N(0, Σ₁))` with a uniform group
/// element and measures the dependence of the ambient endpoints.
pub fn lift_independence<R: Rng + ?Sized>(
    q0: &SliceDensity,
    q1_cov: &DMatrix<f64>,
    group: &LiftGroup,
    n: usize,
    rng: &mut R,
) -> Result<LiftIndependence> {
    check_mc(n)?;
    let d = group.dim();
    if q0.dim() != d || q1_cov.shape() != (d, d) {
        return Err(dim_err(format!("densities must live in dimension {d}")));
    }
    check_psd(q1_cov, "slice prior covariance", true)?;
    let (sqrt0, sqrt1) = (psd_sqrt(&q0.cov()), psd_sqrt(q1_cov));
    let zero = DVector::zeros(d);
    let nf = d + d * (d + 1) / 2;
    let mut f0 = vec![Vec::with_capacity(n); nf];
    let mut f1 = vec![Vec::with_capacity(n); nf];
    let mut coords = vec![Vec::with_capacity(n); d];
    for _ in 0..n {
        let g = group.sample(rng);
        let z0 = &g * gaussian_draw(q0.mean(), &sqrt0, rng);
        let z1 = &g * gaussian_draw(&zero, &sqrt1, rng);
        for (col, v) in f0.iter_mut().zip(features(&z0)) {
            col.push(v);
        }
        for (col, v) in f1.iter_mut().zip(features(&z1)) {
            col.push(v);
        }
        for (col, v) in coords.iter_mut().zip(z1.iter()) {
            col.push(*v);
        }
    }
    let mut max_abs_corr: f64 = 0.0;
    for a in &f0 {
        for b in &f1 {
            max_abs_corr = max_abs_corr.max(stats::pearson(a, b).abs());
        }
    }
    let mut ks_statistic: f64 = 0.0;
    let mut ks_p_value: f64 = 1.0;
    for c in &coords {
        let r = stats::ks_standard_normal(c)?;
        ks_statistic = ks_statistic.max(r.statistic);
        ks_p_value = ks_p_value.min(r.p_value);
    }
    let threshold = 4.0 / (n as f64).sqrt();
    Ok(LiftIndependence {
        n,
        max_abs_corr,
        threshold,
        ks_statistic,
        ks_p_value,
        dependent: max_abs_corr >= threshold,
    })
}

/// Worst equivariance violation of a k-NN estimate of `E[U | Z_t]`.
#[derive(Debug, Clone, Serialize)]
pub struct Equivariance {
    pub n: usize,
    pub k: usize,
    /// `‖v̂(g·z) − g·v̂(z)‖` at the grid point and element with the largest
    /// ratio to its envelope.
    pub violation: f64,
    /// Five combined standard errors at that point.
    pub envelope: f64,
    /// Largest `violation / envelope` over the grid and the group.
    pub max_ratio: f64,
}

pub fn bayes_equivariance_check<R: Rng + ?Sized>(
    sys: &MixtureSystem,
    n_mc: usize,
    grid: &[DVector<f64>],
    rng: &mut R,
) -> Result<Equivariance> {
    check_mc(n_mc)?;
    if grid.is_empty() {
        return Err(invalid("empty evaluation grid"));
    }
    let p = sys.prepare()?;
    let d = sys.dim();
    for z in grid {
        p.check_point(z.as_slice())?;
    }
    let s = simulate(&p, n_mc, rng);
    let k = knn::default_k(n_mc);
    let reg = knn::KnnRegressor::new(&s.z_t, &s.u, d, d, k)?;
    let mut best = (0.0, 1.0, 0.0);
    for z in grid {
        let base = reg.mean_at(z.as_slice())?;
        for g in sys.group.elements.iter().skip(1) {
            let gz = g * z;
            let moved = reg.mean_at(gz.as_slice())?;
            let viol = (&moved.mean - g * &base.mean).norm();
            let env = 5.0 * (moved.stderr.norm_squared() + base.stderr.norm_squared()).sqrt();
            let ratio = viol / env;
            if ratio > best.2 {
                best = (viol, env, ratio);
            }
        }
    }
    Ok(Equivariance {
        n: n_mc,
        k,
        violation: best.0,
        envelope: best.1,
        max_ratio: best.2,
    })
}

/// OLS of `y` on `[1, x]` and the residual covariance with the standard
/// error of each entry.
pub fn condvar_regression(x: &[f64], y: &[f64], dx: usize, dy: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if dx == 0 || dy == 0 || !x.len().is_multiple_of(dx) || !y.len().is_multiple_of(dy) || x.len() / dx != y.len() / dy {
        return Err(dim_err("regression inputs of inconsistent shape"));
    }
    let n = x.len() / dx;
    let p = dx + 1;
    if n <= p + 1 {
        return Err(invalid("too few samples for the regression"));
    }
    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut xty = DMatrix::<f64>::zeros(p, dy);
    let mut row = vec![1.0; p];
    for i in 0..n {
        row[1..].copy_from_slice(&x[i * dx..(i + 1) * dx]);
        for a in 0..p {
            for b in 0..p {
                xtx[(a, b)] += row[a] * row[b];
            }
            for c in 0..dy {
                xty[(a, c)] += row[a] * y[i * dy + c];
            }
        }
    }
    let beta = xtx
        .cholesky()
        .ok_or_else(|| invalid("regression design is singular"))?
        .solve(&xty);
    let mut prods = vec![Vec::with_capacity(n); dy * dy];
    let mut r = vec![0.0; dy];
    for i in 0..n {
        row[1..].copy_from_slice(&x[i * dx..(i + 1) * dx]);
        for c in 0..dy {
            let fit: f64 = (0..p).map(|a| row[a] * beta[(a, c)]).sum();
            r[c] = y[i * dy + c] - fit;
        }
        for a in 0..dy {
            for b in 0..dy {
                prods[a * dy + b].push(r[a] * r[b]);
            }
        }
    }
    let scale = n as f64 / (n - p) as f64;
    let cov = DMatrix::from_fn(dy, dy, |a, b| stats::mean(&prods[a * dy + b]) * scale);
    let se = DMatrix::from_fn(dy, dy, |a, b| {
        (stats::variance(&prods[a * dy + b]) / n as f64).sqrt() * scale
    });
    Ok((cov, se))
}

/// Traces of [`gaussian_condvar`] for the aligned prior `Σ₁ = Σ₀` and the
/// isotropic prior `Σ₁ = I` at each time: `(t, aligned, isotropic)`.
pub fn aligned_prior_traces(s0: &DMatrix<f64>, times: &[f64]) -> Result<Vec<(f64, f64, f64)>> {
    let eye = DMatrix::identity(s0.nrows(), s0.ncols());
    times
        .iter()
        .map(|&t| {
            Ok((
                t,
                gaussian_condvar(s0, s0, t)?.trace(),
                gaussian_condvar(s0, &eye, t)?.trace(),
            ))
        })
        .collect()
}
