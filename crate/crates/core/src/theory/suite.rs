//! Named check suites over the default systems, and the JSON report.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::*;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    /// `|estimate − reference| ≤ tolerance`.
    Eq,
    /// `estimate ≥ reference − tolerance`.
    Ge,
    /// `estimate ≤ reference + tolerance`.
    Le,
}

/// One verified quantity. Monte Carlo tolerances are multiples of `stderr`;
/// closed-form checks have `stderr = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckResult {
    pub name: String,
    pub estimate: f64,
    pub reference: f64,
    pub stderr: f64,
    pub tolerance: f64,
    pub relation: Relation,
    pub pass: bool,
    pub n_samples: usize,
    pub seed: u64,
}

impl CheckResult {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        estimate: f64,
        reference: f64,
        stderr: f64,
        tolerance: f64,
        relation: Relation,
        n_samples: usize,
        seed: u64,
    ) -> Self {
        let mut c = Self {
            name: name.into(),
            estimate,
            reference,
            stderr,
            tolerance,
            relation,
            pass: false,
            n_samples,
            seed,
        };
        c.pass = c.evaluate();
        c
    }

    /// Recomputes the verdict from the numbers; non-finite values fail.
    pub fn evaluate(&self) -> bool {
        if !(self.estimate.is_finite() && self.reference.is_finite() && self.tolerance.is_finite()) {
            return false;
        }
        match self.relation {
            Relation::Eq => (self.estimate - self.reference).abs() <= self.tolerance,
            Relation::Ge => self.estimate >= self.reference - self.tolerance,
            Relation::Le => self.estimate <= self.reference + self.tolerance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SuiteSystem {
    /// Sign flip on `ℝ`.
    Signflip,
    /// Quarter turns of the plane.
    C4,
    /// Coordinate permutations of `ℝ³`.
    S3,
}

impl SuiteSystem {
    pub const ALL: [SuiteSystem; 3] = [Self::Signflip, Self::C4, Self::S3];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Signflip => "signflip",
            Self::C4 => "c4",
            Self::S3 => "s3",
        }
    }

    /// The reference mixture the suite is built around.
    pub fn mixture(self) -> Result<MixtureSystem> {
        match self {
            Self::Signflip => Ok(MixtureSystem::signflip_reference()),
            Self::C4 => c4_system(),
            Self::S3 => s3_system(),
        }
    }
}

impl fmt::Display for SuiteSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SuiteSystem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| invalid(format!("unknown system {s:?}")))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteOptions {
    pub n_mc: usize,
    pub seed: u64,
    /// Test hook: corrupts the reference of the first check so the report
    /// fails.
    pub inject_wrong_reference: bool,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            n_mc: 1_000_000,
            seed: 0,
            inject_wrong_reference: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryReport {
    /// Comma-separated suite names.
    pub system: String,
    pub seed: u64,
    pub n_mc: usize,
    pub checks: Vec<CheckResult>,
    pub all_pass: bool,
}

impl TheoryReport {
    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

/// Largest relative gap `‖a − n‖ / max(‖a‖, ‖n‖, floor)` between the
/// analytic score and a five-point difference of `log p`, over points drawn
/// from the mixture.
pub const SCORE_REL_FLOOR: f64 = 1e-3;

pub fn score_fd_error<R: Rng + ?Sized>(sys: &MixtureSystem, n_points: usize, rng: &mut R) -> Result<f64> {
    let p = sys.prepare()?;
    let sd = (1.0 / p.c_inv.clone().symmetric_eigen().eigenvalues.max()).sqrt();
    let h = 1e-3 * sd.max(1e-3);
    let mut worst: f64 = 0.0;
    for _ in 0..n_points {
        let z = p.draw(rng).z_t;
        let a = p.score(&z);
        let fd = DVector::from_fn(z.len(), |i, _| {
            let f = |s: f64| {
                let mut q = z.clone();
                q[i] += s;
                p.log_density(&q)
            };
            (f(-2.0 * h) - 8.0 * f(-h) + 8.0 * f(h) - f(2.0 * h)) / (12.0 * h)
        });
        let rel = (&a - &fd).norm() / a.norm().max(fd.norm()).max(SCORE_REL_FLOOR);
        worst = worst.max(rel);
    }
    Ok(worst)
}

fn dv(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

fn random_spd<R: Rng + ?Sized>(d: usize, scale: f64, rng: &mut R) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    (&a * a.transpose() / d as f64 + DMatrix::identity(d, d) * 0.1) * scale
}

fn signflip_gaussian(mean: f64, var: f64, prior_var: f64, t: f64) -> Result<MixtureSystem> {
    MixtureSystem::new(
        FiniteGroupSpec::sign_flip(),
        SliceDensity::Gaussian {
            mean: dv(&[mean]),
            cov: DMatrix::from_element(1, 1, var),
        },
        DVector::zeros(1),
        DMatrix::from_element(1, 1, prior_var),
        t,
    )
}

fn c4_system() -> Result<MixtureSystem> {
    MixtureSystem::new(
        FiniteGroupSpec::cyclic(4),
        SliceDensity::Gaussian {
            mean: dv(&[1.5, 0.5]),
            cov: DMatrix::identity(2, 2) * 0.05,
        },
        DVector::zeros(2),
        DMatrix::identity(2, 2),
        0.5,
    )
}

fn s3_system() -> Result<MixtureSystem> {
    MixtureSystem::new(
        FiniteGroupSpec::s3(),
        SliceDensity::Gaussian {
            mean: dv(&[1.0, 0.2, -0.7]),
            cov: DMatrix::from_row_slice(3, 3, &[0.10, 0.02, 0.0, 0.02, 0.08, -0.01, 0.0, -0.01, 0.12]),
        },
        DVector::zeros(3),
        DMatrix::identity(3, 3),
        0.4,
    )
}

/// Ten random systems for the inequality check: six sign-flip systems on `ℝ`
/// and four quarter-turn systems on `ℝ²`.
pub fn random_inequality_systems<R: Rng + ?Sized>(rng: &mut R) -> Result<Vec<MixtureSystem>> {
    let mut out = Vec::with_capacity(10);
    for _ in 0..6 {
        out.push(signflip_gaussian(
            rng.random_range(0.3..2.0),
            rng.random_range(0.01..0.5),
            rng.random_range(0.5..2.0),
            rng.random_range(0.2..0.8),
        )?);
    }
    for _ in 0..4 {
        let mean = dv(&[rng.random_range(0.5..2.0), rng.random_range(-1.0..1.0)]);
        let cov = random_spd(2, rng.random_range(0.02..0.3), rng);
        let prior = random_spd(2, rng.random_range(0.5..1.5), rng);
        out.push(MixtureSystem::new(
            FiniteGroupSpec::cyclic(4),
            SliceDensity::Gaussian { mean, cov },
            DVector::zeros(2),
            prior,
            rng.random_range(0.2..0.8),
        )?);
    }
    Ok(out)
}

/// Checks produced by one independent task.
type Task<'a> = Box<dyn FnOnce(&mut ChaCha8Rng) -> Result<Vec<CheckResult>> + Send + 'a>;

struct Ctx {
    prefix: &'static str,
    n: usize,
    seed: u64,
}

impl Ctx {
    fn name(&self, s: &str) -> String {
        format!("{}.{s}", self.prefix)
    }

    fn score(&self, sys: &MixtureSystem, rng: &mut ChaCha8Rng) -> Result<Vec<CheckResult>> {
        let e = score_fd_error(sys, 100, rng)?;
        Ok(vec![CheckResult::new(
            self.name("score_fd"),
            e,
            0.0,
            0.0,
            1e-5,
            Relation::Le,
            100,
            self.seed,
        )])
    }

    fn decomposition(&self, sys: &MixtureSystem, rng: &mut ChaCha8Rng) -> Result<(Decomposition, Vec<CheckResult>)> {
        let d = variance_decomposition(sys, self.n, rng)?;
        let s = self.seed;
        let checks = vec![
            CheckResult::new(
                self.name("decomposition_identity"),
                d.residual.value,
                0.0,
                d.residual.stderr,
                3.0 * d.residual.stderr,
                Relation::Eq,
                d.n,
                s,
            ),
            CheckResult::new(
                self.name("ambiguity_nonnegative"),
                d.ambiguity.value,
                0.0,
                d.ambiguity.stderr,
                3.0 * d.ambiguity.stderr,
                Relation::Ge,
                d.n,
                s,
            ),
            CheckResult::new(
                self.name("lhs_dominates_within"),
                d.excess.value,
                0.0,
                d.excess.stderr,
                3.0 * d.excess.stderr,
                Relation::Ge,
                d.n,
                s,
            ),
            // Rounding floor for systems whose within-slice term is exactly 0.
            CheckResult::new(
                self.name("within_matches_closed_form"),
                d.within.value,
                d.within_closed_form,
                d.within.stderr,
                3.0 * d.within.stderr + 1e-12,
                Relation::Eq,
                d.n,
                s,
            ),
        ];
        Ok((d, checks))
    }

    fn collision(&self, sys: &MixtureSystem, rng: &mut ChaCha8Rng) -> Result<Vec<CheckResult>> {
        let c = collision_bound(sys, self.n, rng)?;
        Ok(vec![
            CheckResult::new(
                self.name("collision_bound"),
                c.gap.value,
                0.0,
                c.gap.stderr,
                3.0 * c.gap.stderr,
                Relation::Ge,
                c.n,
                self.seed,
            ),
            CheckResult::new(
                self.name("collision_bound_pointwise"),
                c.min_pointwise_gap,
                0.0,
                0.0,
                1e-12,
                Relation::Ge,
                c.n,
                self.seed,
            ),
        ])
    }

    fn bayes(
        &self,
        name: &str,
        sys: &MixtureSystem,
        grid: &[DVector<f64>],
        rng: &mut ChaCha8Rng,
    ) -> Result<CheckResult> {
        let e = bayes_equivariance_check(sys, self.n, grid, rng)?;
        Ok(CheckResult::new(
            self.name(name),
            e.violation,
            0.0,
            e.envelope / 5.0,
            e.envelope,
            Relation::Eq,
            e.n,
            self.seed,
        ))
    }

    fn lift(
        &self,
        name: &str,
        q0: &SliceDensity,
        q1_cov: &DMatrix<f64>,
        group: &LiftGroup,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<CheckResult>> {
        let r = lift_independence(q0, q1_cov, group, self.n, rng)?;
        Ok(vec![
            CheckResult::new(
                self.name(&format!("{name}_max_corr")),
                r.max_abs_corr,
                0.0,
                1.0 / (r.n as f64).sqrt(),
                r.threshold,
                Relation::Eq,
                r.n,
                self.seed,
            ),
            CheckResult::new(
                self.name(&format!("{name}_ks_p_value")),
                r.ks_p_value,
                1e-3,
                0.0,
                0.0,
                Relation::Ge,
                r.n,
                self.seed,
            ),
        ])
    }
}

fn grid(points: &[&[f64]]) -> Vec<DVector<f64>> {
    points.iter().map(|p| dv(p)).collect()
}

fn signflip_tasks(ctx: &Ctx) -> Vec<Task<'_>> {
    vec![
        Box::new(move |rng| ctx.score(&MixtureSystem::signflip_reference(), rng)),
        Box::new(move |rng| {
            let sys = MixtureSystem::signflip_reference();
            let (d, mut checks) = ctx.decomposition(&sys, rng)?;
            checks.push(CheckResult::new(
                ctx.name("lhs_matches_quadrature"),
                d.lhs.value,
                lhs_quadrature_1d(&sys)?,
                d.lhs.stderr,
                3.0 * d.lhs.stderr,
                Relation::Eq,
                d.n,
                ctx.seed,
            ));
            Ok(checks)
        }),
        Box::new(move |rng| ctx.collision(&MixtureSystem::signflip_reference(), rng)),
        Box::new(move |rng| {
            let g = grid(&[&[0.1], &[0.4], &[0.8], &[1.2]]);
            let sys = MixtureSystem::signflip_reference();
            let ok = ctx.bayes("bayes_equivariance", &sys, &g, rng)?;
            let skewed = sys.with_weights(vec![0.8, 0.2])?;
            let e = bayes_equivariance_check(&skewed, ctx.n, &g, rng)?;
            let control = CheckResult::new(
                ctx.name("bayes_negative_control_detected"),
                e.violation,
                e.envelope,
                e.envelope / 5.0,
                0.0,
                Relation::Ge,
                e.n,
                ctx.seed,
            );
            Ok(vec![ok, control])
        }),
        Box::new(move |rng| {
            let one = DMatrix::identity(1, 1);
            let exact = gaussian_condvar(&one, &one, 0.5)?[(0, 0)];
            let sys = MixtureSystem::new(
                FiniteGroupSpec::trivial(1),
                SliceDensity::Gaussian {
                    mean: DVector::zeros(1),
                    cov: one.clone(),
                },
                DVector::zeros(1),
                one,
                0.5,
            )?;
            let s = simulate_lift(&sys, ctx.n, rng)?;
            let (cov, se) = condvar_regression(&s.slice_t, &s.delta, 1, 1)?;
            Ok(vec![
                CheckResult::new(
                    ctx.name("gaussian_condvar_scalar"),
                    exact,
                    2.0,
                    0.0,
                    0.0,
                    Relation::Eq,
                    0,
                    ctx.seed,
                ),
                CheckResult::new(
                    ctx.name("gaussian_condvar_scalar_mc"),
                    cov[(0, 0)],
                    exact,
                    se[(0, 0)],
                    3.0 * se[(0, 0)],
                    Relation::Eq,
                    ctx.n,
                    ctx.seed,
                ),
            ])
        }),
        Box::new(move |rng| {
            let sys = MixtureSystem::new(
                FiniteGroupSpec::trivial(1),
                SliceDensity::Gaussian {
                    mean: dv(&[1.0]),
                    cov: DMatrix::from_element(1, 1, 0.5),
                },
                DVector::zeros(1),
                DMatrix::identity(1, 1),
                0.5,
            )?;
            let d = variance_decomposition(&sys, ctx.n, rng)?;
            Ok(vec![
                CheckResult::new(
                    ctx.name("trivial_group_ambiguity"),
                    d.ambiguity.value,
                    0.0,
                    d.ambiguity.stderr,
                    3.0 * d.ambiguity.stderr,
                    Relation::Eq,
                    d.n,
                    ctx.seed,
                ),
                CheckResult::new(
                    ctx.name("trivial_group_within"),
                    d.within.value,
                    d.within_closed_form,
                    d.within.stderr,
                    3.0 * d.within.stderr,
                    Relation::Eq,
                    d.n,
                    ctx.seed,
                ),
            ])
        }),
    ]
}

fn c4_tasks(ctx: &Ctx) -> Vec<Task<'_>> {
    vec![
        Box::new(move |rng| ctx.score(&c4_system()?, rng)),
        Box::new(move |rng| Ok(ctx.decomposition(&c4_system()?, rng)?.1)),
        Box::new(move |rng| ctx.collision(&c4_system()?, rng)),
        Box::new(move |rng| {
            let sys = c4_system()?;
            let eye = DMatrix::identity(2, 2);
            let mut out = ctx.lift("lift_c4", &sys.q0, &eye, &LiftGroup::Finite(sys.group.clone()), rng)?;
            out.extend(ctx.lift("lift_so2", &sys.q0, &eye, &LiftGroup::So2, rng)?);
            let q0 = SliceDensity::PointMass(dv(&[2.0, 0.0]));
            let aniso = DMatrix::from_diagonal(&dv(&[9.0, 1.0]));
            let r = lift_independence(&q0, &aniso, &LiftGroup::So2, ctx.n, rng)?;
            out.push(CheckResult::new(
                ctx.name("lift_anisotropic_flagged"),
                r.max_abs_corr,
                r.threshold,
                1.0 / (r.n as f64).sqrt(),
                0.0,
                Relation::Ge,
                r.n,
                ctx.seed,
            ));
            Ok(out)
        }),
        Box::new(move |_| {
            // Two algebraic routes to the within-slice covariance.
            let s0 = DMatrix::from_diagonal(&dv(&[25.0, 1.0]));
            let eye = DMatrix::identity(2, 2);
            let mut worst: f64 = 0.0;
            for k in 1..=9 {
                let t = k as f64 / 10.0;
                for s1 in [&s0, &eye] {
                    let a = gaussian_condvar(&s0, s1, t)?;
                    let b = joint_gaussian_condvar(&s0, s1, t)?;
                    worst = worst.max((a - b).abs().max());
                }
            }
            Ok(vec![CheckResult::new(
                ctx.name("prior_condvar_routes_agree"),
                worst,
                0.0,
                0.0,
                1e-9,
                Relation::Eq,
                0,
                ctx.seed,
            )])
        }),
        Box::new(move |rng| {
            let g = grid(&[&[1.5, 0.5], &[0.5, 1.0], &[2.0, -0.3]]);
            Ok(vec![ctx.bayes("bayes_equivariance", &c4_system()?, &g, rng)?])
        }),
    ]
}

fn s3_tasks(ctx: &Ctx) -> Vec<Task<'_>> {
    let mut tasks: Vec<Task<'_>> = vec![
        Box::new(move |rng| ctx.score(&s3_system()?, rng)),
        Box::new(move |rng| Ok(ctx.decomposition(&s3_system()?, rng)?.1)),
        Box::new(move |rng| ctx.collision(&s3_system()?, rng)),
        Box::new(move |rng| {
            let g = grid(&[&[1.0, 0.2, -0.7], &[0.5, 0.5, 0.0], &[-0.3, 1.1, 0.4]]);
            Ok(vec![ctx.bayes("bayes_equivariance", &s3_system()?, &g, rng)?])
        }),
        Box::new(move |rng| {
            let s0 = random_spd(3, 1.0, rng);
            let s1 = random_spd(3, 1.0, rng);
            let t = 0.3;
            let exact = gaussian_condvar(&s0, &s1, t)?;
            let joint = joint_gaussian_condvar(&s0, &s1, t)?;
            let sys = MixtureSystem::new(
                FiniteGroupSpec::trivial(3),
                SliceDensity::Gaussian {
                    mean: dv(&[0.5, -0.2, 1.0]),
                    cov: s0,
                },
                DVector::zeros(3),
                s1,
                t,
            )?;
            let s = simulate_lift(&sys, ctx.n, rng)?;
            let (cov, se) = condvar_regression(&s.slice_t, &s.delta, 3, 3)?;
            // Entry with the largest standardized deviation.
            let (mut worst, mut at) = (-1.0, (0, 0));
            for a in 0..3 {
                for b in a..3 {
                    let z = (cov[(a, b)] - exact[(a, b)]).abs() / se[(a, b)];
                    if z > worst {
                        worst = z;
                        at = (a, b);
                    }
                }
            }
            Ok(vec![
                CheckResult::new(
                    ctx.name("gaussian_condvar_spd_mc"),
                    cov[at],
                    exact[at],
                    se[at],
                    3.0 * se[at],
                    Relation::Eq,
                    ctx.n,
                    ctx.seed,
                ),
                CheckResult::new(
                    ctx.name("gaussian_condvar_joint_conditioning"),
                    (&exact - &joint).abs().max(),
                    0.0,
                    0.0,
                    1e-10 * (1.0 + exact.abs().max()),
                    Relation::Eq,
                    0,
                    ctx.seed,
                ),
            ])
        }),
    ];
    for k in 0..10 {
        tasks.push(Box::new(move |rng| {
            // Every task draws the same ten systems and evaluates one.
            let mut sys_rng = ChaCha8Rng::seed_from_u64(ctx.seed);
            sys_rng.set_stream(u64::MAX);
            let sys = random_inequality_systems(&mut sys_rng)?.swap_remove(k);
            let d = variance_decomposition(&sys, ctx.n, rng)?;
            Ok(vec![CheckResult::new(
                ctx.name(&format!("inequality_random_{k}")),
                d.excess.value,
                0.0,
                d.excess.stderr,
                3.0 * d.excess.stderr,
                Relation::Ge,
                d.n,
                ctx.seed,
            )])
        }));
    }
    tasks
}

/// Runs the suites of `systems` and assembles one report. Tasks run on a
/// pool of worker threads; task `i` of suite `s` draws from stream
/// `(s << 16) | i` of a ChaCha8 generator seeded with `opts.seed`, so the
/// report does not depend on scheduling.
pub fn run_suites(systems: &[SuiteSystem], opts: &SuiteOptions) -> Result<TheoryReport> {
    if systems.is_empty() {
        return Err(invalid("no systems requested"));
    }
    if opts.n_mc < MIN_MC {
        return Err(invalid(format!(
            "n_mc = {} is below the minimum of {MIN_MC}",
            opts.n_mc
        )));
    }
    let ctxs: Vec<(SuiteSystem, Ctx)> = systems
        .iter()
        .map(|&s| {
            (
                s,
                Ctx {
                    prefix: s.as_str(),
                    n: opts.n_mc,
                    seed: opts.seed,
                },
            )
        })
        .collect();
    let mut jobs: Vec<(u64, Task<'_>)> = Vec::new();
    for (s, ctx) in &ctxs {
        let tasks = match s {
            SuiteSystem::Signflip => signflip_tasks(ctx),
            SuiteSystem::C4 => c4_tasks(ctx),
            SuiteSystem::S3 => s3_tasks(ctx),
        };
        let sid = SuiteSystem::ALL.iter().position(|v| v == s).unwrap_or(0) as u64;
        jobs.extend(tasks.into_iter().enumerate().map(|(i, t)| ((sid << 16) | i as u64, t)));
    }
    let n_jobs = jobs.len();
    let queue: Vec<Mutex<Option<(u64, Task<'_>)>>> = jobs.into_iter().map(|j| Mutex::new(Some(j))).collect();
    let results: Vec<Mutex<Option<Result<Vec<CheckResult>>>>> = (0..n_jobs).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(n_jobs);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n_jobs {
                    break;
                }
                let Some((stream, task)) = queue[i].lock().ok().and_then(|mut q| q.take()) else {
                    continue;
                };
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                rng.set_stream(stream);
                let r = task(&mut rng);
                if let Ok(mut slot) = results[i].lock() {
                    *slot = Some(r);
                }
            });
        }
    });
    let mut checks = Vec::new();
    for slot in results {
        let r = slot
            .into_inner()
            .map_err(|_| invalid("a check panicked"))?
            .ok_or_else(|| invalid("a check did not run"))?;
        checks.extend(r?);
    }
    if opts.inject_wrong_reference {
        if let Some(c) = checks.first_mut() {
            let shift = 10.0 * (c.tolerance + c.reference.abs() + c.estimate.abs() + 1.0);
            c.reference += if c.relation == Relation::Le { -shift } else { shift };
            c.pass = c.evaluate();
        }
    }
    let all_pass = checks.iter().all(|c| c.pass);
    Ok(TheoryReport {
        system: systems.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(","),
        seed: opts.seed,
        n_mc: opts.n_mc,
        checks,
        all_pass,
    })
}
