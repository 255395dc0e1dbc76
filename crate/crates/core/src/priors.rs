//! Priors aligned with the canonical slice.
//!
//! A generator trained on canonical representatives starts from noise that
//! should look like the slice. For continuous features this is the
//! moment-matched Gaussian (the KL-optimal Gaussian approximation of the
//! data); for categorical features it is a mixture of a base distribution and
//! empirical class frequencies binned by canonical rank.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, invalid, Result};
use crate::molecule::{bond, Encoded, MoleculeState, Vocab};

/// Eigenvalue floor applied to fitted covariances.
pub const EIGEN_FLOOR: f64 = 1e-8;

/// A multivariate Gaussian stored with its principal square root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrior {
    pub mean: Vec<f64>,
    /// Row-major `d × d`.
    pub cov: Vec<f64>,
    /// Row-major symmetric square root of `cov`.
    pub sqrt: Vec<f64>,
    pub isotropic: bool,
}

impl GaussianPrior {
    /// `N(0, I_d)`.
    pub fn standard(d: usize) -> Self {
        let eye = DMatrix::<f64>::identity(d, d);
        Self {
            mean: vec![0.0; d],
            cov: eye.transpose().as_slice().to_vec(),
            sqrt: eye.as_slice().to_vec(),
            isotropic: true,
        }
    }

    /// Builds a prior from a mean and a symmetric PSD covariance; eigenvalues
    /// are clamped to [`EIGEN_FLOOR`].
    pub fn new(mean: Vec<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(dim_err(format!(
                "mean has dimension {d}, covariance is {}×{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if (cov - cov.transpose()).abs().max() > 1e-10 {
            return Err(invalid("covariance is not symmetric"));
        }
        if cov.iter().chain(&mean).any(|v| !v.is_finite()) {
            return Err(invalid("non-finite prior parameter"));
        }
        let eig = cov.clone().symmetric_eigen();
        if eig.eigenvalues.iter().any(|&l| l < -1e-10) {
            return Err(invalid("covariance is not positive semidefinite"));
        }
        let vals = eig.eigenvalues.map(|l| l.max(EIGEN_FLOOR));
        let q = &eig.eigenvectors;
        let clamped = q * DMatrix::from_diagonal(&vals) * q.transpose();
        let root = q * DMatrix::from_diagonal(&vals.map(f64::sqrt)) * q.transpose();
        let isotropic = {
            let s = clamped[(0, 0)];
            (&clamped - DMatrix::identity(d, d) * s).abs().max() < 1e-12
        };
        Ok(Self {
            mean,
            cov: row_major(&clamped),
            sqrt: row_major(&root),
            isotropic,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn cov_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_row_slice(d, d, &self.cov)
    }

    pub fn sqrt_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_row_slice(d, d, &self.sqrt)
    }

    /// One draw `μ + Σ^{1/2} ε`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.dim();
        let eps = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = self.sqrt_matrix() * eps;
        (0..d).map(|i| self.mean[i] + x[i]).collect()
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// Empirical mean and covariance (denominator `n`) of the samples.
pub fn fit_gaussian(samples: &[Vec<f64>]) -> Result<GaussianPrior> {
    if samples.len() < 2 {
        return Err(invalid("fit_gaussian needs at least two samples"));
    }
    let d = samples[0].len();
    if d == 0 || samples.iter().any(|s| s.len() != d) {
        return Err(dim_err("samples of inconsistent or zero dimension"));
    }
    let n = samples.len() as f64;
    let mut mean = vec![0.0; d];
    for s in samples {
        for k in 0..d {
            mean[k] += s[k] / n;
        }
    }
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for s in samples {
        let c = DVector::from_fn(d, |k, _| s[k] - mean[k]);
        cov += &c * c.transpose() / n;
    }
    cov = (&cov + cov.transpose()) * 0.5;
    GaussianPrior::new(mean, &cov)
}

pub fn sample_gaussian<R: Rng + ?Sized>(p: &GaussianPrior, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..n).map(|_| p.draw(rng)).collect()
}

/// Class distributions binned by canonical rank, mixed with a base
/// distribution at weight `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionalCategoricalPrior {
    pub n_bins: usize,
    /// `bins[k][c] = P(c | B_k)`.
    pub bins: Vec<Vec<f64>>,
    pub beta: f64,
    pub base: Vec<f64>,
}

/// Default mixing weight with the base distribution.
pub const DEFAULT_BETA: f64 = 0.1;
/// Default Laplace smoothing.
pub const DEFAULT_SMOOTHING: f64 = 1.0;

fn rank_bin(r: f64, k: usize) -> usize {
    ((r * k as f64).floor().max(0.0) as usize).min(k - 1)
}

/// Counts `(rank, class)` observations into `n_bins` bins with smoothing `eps`.
/// The base distribution is uniform and `beta` is [`DEFAULT_BETA`].
pub fn fit_positional(
    observations: &[(f64, usize)],
    n_classes: usize,
    n_bins: usize,
    eps: f64,
) -> Result<PositionalCategoricalPrior> {
    if n_bins == 0 || n_classes == 0 {
        return Err(invalid("need at least one bin and one class"));
    }
    if !(eps >= 0.0) {
        return Err(invalid("smoothing must be non-negative"));
    }
    let mut counts = vec![vec![eps; n_classes]; n_bins];
    for &(r, c) in observations {
        if !(0.0..=1.0).contains(&r) {
            return Err(invalid(format!("rank {r} outside [0, 1]")));
        }
        if c >= n_classes {
            return Err(invalid(format!("class {c} out of range {n_classes}")));
        }
        counts[rank_bin(r, n_bins)][c] += 1.0;
    }
    let uniform = vec![1.0 / n_classes as f64; n_classes];
    let bins = counts
        .into_iter()
        .map(|row| {
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                row.iter().map(|c| c / s).collect()
            } else {
                uniform.clone()
            }
        })
        .collect();
    Ok(PositionalCategoricalPrior {
        n_bins,
        bins,
        beta: DEFAULT_BETA,
        base: uniform,
    })
}

impl PositionalCategoricalPrior {
    pub fn n_classes(&self) -> usize {
        self.base.len()
    }

    pub fn with_beta(mut self, beta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(invalid(format!("beta {beta} outside [0, 1]")));
        }
        self.beta = beta;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bins.len() != self.n_bins || self.n_bins == 0 {
            return Err(dim_err("bin table does not match n_bins"));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(invalid("beta outside [0, 1]"));
        }
        for row in self.bins.iter().chain(std::iter::once(&self.base)) {
            if row.len() != self.n_classes() {
                return Err(dim_err("bin distributions of different lengths"));
            }
            if row.iter().any(|&p| !(p >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(invalid("bin distribution does not sum to one"));
            }
        }
        Ok(())
    }

    /// Class sampling distribution at rank `r`.
    pub fn sample_class<R: Rng + ?Sized>(&self, r: f64, rng: &mut R) -> usize {
        let p = eval_positional(self, r);
        WeightedIndex::new(&p).map(|w| w.sample(rng)).unwrap_or(0)
    }
}

/// `β·p_base + (1−β)·p_r(·|r)`, with `p_r` interpolated linearly between bin
/// `⌊rK⌋` and the next one.
pub fn eval_positional(p: &PositionalCategoricalPrior, r: f64) -> Vec<f64> {
    let k = p.n_bins;
    let r = r.clamp(0.0, 1.0);
    let k0 = rank_bin(r, k);
    let k1 = (k0 + 1).min(k - 1);
    let delta = (r * k as f64 - k0 as f64).clamp(0.0, 1.0);
    (0..p.n_classes())
        .map(|c| {
            let pr = (1.0 - delta) * p.bins[k0][c] + delta * p.bins[k1][c];
            p.beta * p.base[c] + (1.0 - p.beta) * pr
        })
        .collect()
}

/// Diagonal Gaussians over canonical coordinates, binned by rank; with
/// probability `beta` a coordinate is drawn from `N(0, I)` instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankGaussianPrior {
    pub n_bins: usize,
    pub mean: Vec<[f64; 3]>,
    pub var: Vec<[f64; 3]>,
    pub beta: f64,
}

impl RankGaussianPrior {
    /// Fits per-bin means and variances from canonical representatives.
    /// Empty bins fall back to the pooled statistics.
    pub fn fit(reps: &[MoleculeState], n_bins: usize) -> Result<Self> {
        if reps.is_empty() || n_bins == 0 {
            return Err(invalid("need at least one molecule and one bin"));
        }
        let mut sum = vec![[0.0; 3]; n_bins];
        let mut sq = vec![[0.0; 3]; n_bins];
        let mut cnt = vec![0usize; n_bins];
        let mut pooled = ([0.0; 3], [0.0; 3], 0usize);
        for m in reps {
            let n = m.n_atoms();
            for (i, x) in m.coords.iter().enumerate() {
                let b = rank_bin(i as f64 / n as f64, n_bins);
                cnt[b] += 1;
                pooled.2 += 1;
                for a in 0..3 {
                    sum[b][a] += x[a];
                    sq[b][a] += x[a] * x[a];
                    pooled.0[a] += x[a];
                    pooled.1[a] += x[a] * x[a];
                }
            }
        }
        let stats = |s: [f64; 3], q: [f64; 3], c: usize| {
            let c = c as f64;
            let mu = s.map(|v| v / c);
            let var = [0, 1, 2].map(|a| (q[a] / c - mu[a] * mu[a]).max(EIGEN_FLOOR));
            (mu, var)
        };
        let pooled_stats = stats(pooled.0, pooled.1, pooled.2);
        let (mean, var) = (0..n_bins)
            .map(|b| {
                if cnt[b] >= 2 {
                    stats(sum[b], sq[b], cnt[b])
                } else {
                    pooled_stats
                }
            })
            .unzip();
        Ok(Self {
            n_bins,
            mean,
            var,
            beta: 0.0,
        })
    }

    pub fn draw<R: Rng + ?Sized>(&self, r: f64, rng: &mut R) -> [f64; 3] {
        let eps: [f64; 3] = [0; 3].map(|_| rng.sample(StandardNormal));
        if self.beta > 0.0 && rng.random::<f64>() < self.beta {
            return eps;
        }
        let b = rank_bin(r, self.n_bins);
        [0, 1, 2].map(|a| self.mean[b][a] + self.var[b][a].sqrt() * eps[a])
    }
}

/// How coordinate noise is drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoordPrior {
    /// Centered `N(0, I)` per atom.
    Isotropic,
    /// Per-rank moment-matched diagonal Gaussians.
    Rank(RankGaussianPrior),
}

/// All priors needed to sample noise for a molecular flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MolecularPrior {
    pub coords: CoordPrior,
    pub atom_types: PositionalCategoricalPrior,
    pub charges: PositionalCategoricalPrior,
    /// Single bin: the empirical bond-class frequencies.
    pub bonds: PositionalCategoricalPrior,
}

impl MolecularPrior {
    /// Uniform categorical priors and isotropic coordinates.
    pub fn uninformative(vocab: &Vocab) -> Self {
        let uni = |c: usize| fit_positional(&[], c, 1, DEFAULT_SMOOTHING).expect("valid sizes");
        Self {
            coords: CoordPrior::Isotropic,
            atom_types: uni(vocab.n_types()),
            charges: uni(vocab.n_charges()),
            bonds: uni(bond::N_CLASSES),
        }
    }

    /// Fits rank-binned priors on canonical representatives.
    pub fn fit(reps: &[MoleculeState], vocab: &Vocab, n_bins: usize) -> Result<Self> {
        let mut types = Vec::new();
        let mut charges = Vec::new();
        let mut bonds = Vec::new();
        for m in reps {
            let e = vocab.encode(m)?;
            let n = e.n_atoms();
            for i in 0..n {
                let r = i as f64 / n as f64;
                types.push((r, e.types[i]));
                charges.push((r, e.charges[i]));
                for j in i + 1..n {
                    bonds.push((0.0, e.bonds[i * n + j]));
                }
            }
        }
        Ok(Self {
            coords: CoordPrior::Rank(RankGaussianPrior::fit(reps, n_bins)?),
            atom_types: fit_positional(&types, vocab.n_types(), n_bins, DEFAULT_SMOOTHING)?,
            charges: fit_positional(&charges, vocab.n_charges(), n_bins, DEFAULT_SMOOTHING)?,
            bonds: fit_positional(&bonds, bond::N_CLASSES, 1, DEFAULT_SMOOTHING)?.with_beta(0.0)?,
        })
    }

    /// Draws a noise state with `n` atoms in canonical order.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Encoded {
        let mut coords = Vec::with_capacity(n);
        let mut types = Vec::with_capacity(n);
        let mut charges = Vec::with_capacity(n);
        for i in 0..n {
            let r = i as f64 / n as f64;
            coords.push(match &self.coords {
                CoordPrior::Isotropic => [0; 3].map(|_| rng.sample(StandardNormal)),
                CoordPrior::Rank(p) => p.draw(r, rng),
            });
            types.push(self.atom_types.sample_class(r, rng));
            charges.push(self.charges.sample_class(r, rng));
        }
        if matches!(self.coords, CoordPrior::Isotropic) && n > 0 {
            let c = [0, 1, 2].map(|a| coords.iter().map(|x| x[a]).sum::<f64>() / n as f64);
            for x in &mut coords {
                for a in 0..3 {
                    x[a] -= c[a];
                }
            }
        }
        let mut bonds = vec![0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let b = self.bonds.sample_class(0.0, rng);
                bonds[i * n + j] = b;
                bonds[j * n + i] = b;
            }
        }
        Encoded {
            coords,
            types,
            charges,
            bonds,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(s)?;
        p.atom_types.validate()?;
        p.charges.validate()?;
        p.bonds.validate()?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::simpson;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_point_moments() {
        let p = fit_gaussian(&[vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap();
        assert_eq!(p.mean, vec![1.0, 0.0]);
        assert!((p.cov[0] - 1.0).abs() < 1e-12);
        assert!((p.cov[3] - EIGEN_FLOOR).abs() < 1e-15);
        assert!(p.cov[1].abs() < 1e-15);
        assert!(fit_gaussian(&[vec![1.0]]).is_err());
    }

    #[test]
    fn clt_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = 100_000;
        let xs = sample_gaussian(&GaussianPrior::standard(2), n, &mut rng);
        let p = fit_gaussian(&xs).unwrap();
        let tol = 4.0 / (n as f64).sqrt();
        assert!(p.mean.iter().all(|m| m.abs() < tol));
        for (k, &c) in p.cov.iter().enumerate() {
            let target = if k == 0 || k == 3 { 1.0 } else { 0.0 };
            assert!((c - target).abs() < 5.0 / (n as f64).sqrt(), "{k}: {c}");
        }
    }

    #[test]
    fn scalar_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = GaussianPrior::new(vec![3.0], &DMatrix::from_element(1, 1, 4.0)).unwrap();
        let n = 20_000;
        let xs = sample_gaussian(&p, n, &mut rng);
        let m = xs.iter().map(|x| x[0]).sum::<f64>() / n as f64;
        assert!((m - 3.0).abs() < 4.0 * 2.0 / (n as f64).sqrt());
        let zero = GaussianPrior::new(vec![1.0, -1.0], &DMatrix::zeros(2, 2)).unwrap();
        for x in sample_gaussian(&zero, 10, &mut rng) {
            assert!((x[0] - 1.0).abs() < 1e-3 && (x[1] + 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn rejects_bad_covariance() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(GaussianPrior::new(vec![0.0; 2], &asym).is_err());
        let neg = DMatrix::from_row_slice(1, 1, &[-1.0]);
        assert!(GaussianPrior::new(vec![0.0], &neg).is_err());
    }

    #[test]
    fn kl_minimized_at_moment_match() {
        // q₀ = ½N(−1, 0.5²) + ½N(2, 1): μ* = 0.5, σ*² = ½(0.25+1) + ½(1+4) − 0.25.
        let npdf = |x: f64, m: f64, s: f64| {
            (-(x - m).powi(2) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
        };
        let q0 = |x: f64| 0.5 * npdf(x, -1.0, 0.5) + 0.5 * npdf(x, 2.0, 1.0);
        let mu_star = 0.5;
        let sigma_star = (0.5 * 1.25 + 0.5 * 5.0 - 0.25f64).sqrt();
        let kl = |mu: f64, s: f64| {
            simpson(
                |x| {
                    let q = q0(x);
                    if q < 1e-300 {
                        0.0
                    } else {
                        q * (q.ln() - npdf(x, mu, s).ln())
                    }
                },
                -15.0,
                15.0,
                4000,
            )
        };
        let h = 0.01;
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in -20..=20 {
            for j in -20..=20 {
                let (mu, s) = (mu_star + i as f64 * h, sigma_star + j as f64 * h);
                let v = kl(mu, s);
                if v < best.0 {
                    best = (v, mu, s);
                }
            }
        }
        assert!((best.1 - mu_star).abs() <= h / 2.0 + 1e-12);
        assert!((best.2 - sigma_star).abs() <= h / 2.0 + 1e-12);
        // The data-fitted prior reproduces the same moments.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xs: Vec<Vec<f64>> = (0..50_000)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                vec![if rng.random::<bool>() { -1.0 + 0.5 * z } else { 2.0 + z }]
            })
            .collect();
        let p = fit_gaussian(&xs).unwrap();
        assert!((p.mean[0] - mu_star).abs() < 0.03);
        assert!((p.cov[0].sqrt() - sigma_star).abs() < 0.03);
    }

    #[test]
    fn moments_are_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<Vec<f64>> = (0..500)
            .map(|_| {
                (0..3)
                    .map(|k| rng.sample::<f64, _>(StandardNormal) * (k + 1) as f64)
                    .collect()
            })
            .collect();
        let q = crate::symgroup::haar_rotation(&mut rng);
        let qx: Vec<Vec<f64>> = xs
            .iter()
            .map(|x| {
                let v = q * nalgebra::Vector3::new(x[0], x[1], x[2]);
                vec![v[0], v[1], v[2]]
            })
            .collect();
        let (p, pq) = (fit_gaussian(&xs).unwrap(), fit_gaussian(&qx).unwrap());
        let qd = DMatrix::from_fn(3, 3, |i, j| q[(i, j)]);
        let mu = &qd * DVector::from_vec(p.mean.clone());
        for k in 0..3 {
            assert!((mu[k] - pq.mean[k]).abs() < 1e-9);
        }
        let c = &qd * p.cov_matrix() * qd.transpose();
        assert!((c - pq.cov_matrix()).abs().max() < 1e-9);
    }

    #[test]
    fn sqrt_squares_to_cov() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let p = GaussianPrior::new(vec![0.0; 2], &a).unwrap();
        let s = p.sqrt_matrix();
        assert!((&s * &s - a).abs().max() < 1e-12);
        assert!(!p.isotropic);
        assert!(GaussianPrior::standard(3).isotropic);
    }

    #[test]
    fn positional_examples() {
        let p = fit_positional(&[(0.1, 0)], 2, 1, 1.0).unwrap();
        assert!((p.bins[0][0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p.bins[0][1] - 1.0 / 3.0).abs() < 1e-15);

        let empty = fit_positional(&[], 3, 4, 1.0).unwrap();
        for row in &empty.bins {
            assert!(row.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        }

        let base_only = p.clone().with_beta(1.0).unwrap();
        for r in [0.0, 0.3, 0.99] {
            assert_eq!(eval_positional(&base_only, r), base_only.base);
        }
    }

    #[test]
    fn positional_interpolation_by_hand() {
        let p = PositionalCategoricalPrior {
            n_bins: 2,
            bins: vec![vec![0.9, 0.1], vec![0.2, 0.8]],
            beta: 0.1,
            base: vec![0.5, 0.5],
        };
        p.validate().unwrap();
        // r = 0.5: k₀ = 1, δ = 0 → bin 1 mixed with base.
        let v = eval_positional(&p, 0.5);
        assert!((v[0] - (0.1 * 0.5 + 0.9 * 0.2)).abs() < 1e-15);
        // r = 0.25: k₀ = 0, δ = 0.5.
        let v = eval_positional(&p, 0.25);
        assert!((v[0] - (0.05 + 0.9 * 0.55)).abs() < 1e-15);
    }

    #[test]
    fn positional_recovers_deterministic_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = 5;
        let obs: Vec<(f64, usize)> = (0..10_000)
            .map(|_| {
                let r: f64 = rng.random();
                (r, (r * k as f64) as usize % 3)
            })
            .collect();
        let p = fit_positional(&obs, 3, k, 0.01).unwrap();
        for (b, row) in p.bins.iter().enumerate() {
            let argmax = (0..3).max_by(|&a, &c| row[a].total_cmp(&row[c])).unwrap();
            assert_eq!(argmax, b % 3);
        }
    }

    #[test]
    fn positional_outputs_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let obs: Vec<(f64, usize)> = (0..200).map(|_| (rng.random(), rng.random_range(0..4))).collect();
        let p = fit_positional(&obs, 4, 7, 0.5).unwrap();
        for i in 0..1000 {
            let v = eval_positional(&p, i as f64 / 1000.0);
            assert!(v.iter().all(|&x| x >= 0.0));
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn molecular_prior_round_trips_json() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let reps: Vec<_> = (0..20)
            .map(|_| {
                let m = crate::toy::random_alkane(2, &mut rng);
                crate::canonicalizer::canonicalize(&m, crate::canonicalizer::GroupChoice::PermSo3)
                    .unwrap()
                    .representative
            })
            .collect();
        let vocab = Vocab::default();
        let p = MolecularPrior::fit(&reps, &vocab, 4).unwrap();
        let back = MolecularPrior::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(p, back);
        let e = p.sample(8, &mut rng);
        assert_eq!(e.n_atoms(), 8);
        vocab.decode(&e).unwrap();
    }
}
