//! Interpolation paths between data (`t = 0`) and noise (`t = 1`).

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, invalid, Result};
use crate::molecule::Encoded;

/// Distribution of the interpolation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeDist {
    Uniform,
    /// Beta(2, 1) placed so its mass concentrates at the data end: `t = 1 − u`
    /// with `u ~ Beta(2, 1)`, i.e. density `2(1 − t)`.
    Beta21,
}

pub fn sample_time<R: Rng + ?Sized>(dist: TimeDist, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    match dist {
        TimeDist::Uniform => u,
        // √U ~ Beta(2, 1).
        TimeDist::Beta21 => 1.0 - u.sqrt(),
    }
}

/// A point on the path with its regression targets.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub t: f64,
    pub z_t: Encoded,
    /// `z₁ − z₀` per atom.
    pub target_velocity: Vec<[f64; 3]>,
    pub target_types: Vec<usize>,
    pub target_charges: Vec<usize>,
    /// Data bond classes over pairs `i < j` in row-major order.
    pub target_bonds: Vec<usize>,
}

fn check_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(invalid(format!("time {t} outside [0, 1]")));
    }
    Ok(())
}

/// Interpolates data `z0` and noise `z1` at time `t`.
///
/// Coordinates follow `(1 − t)z₀ + t z₁ + σε`; each categorical entry keeps
/// its data class with probability `1 − t` and otherwise takes the noise
/// class. Bonds are drawn per unordered pair and mirrored.
pub fn interpolate<R: Rng + ?Sized>(z0: &Encoded, z1: &Encoded, t: f64, sigma: f64, rng: &mut R) -> Result<PathSample> {
    check_time(t)?;
    if sigma < 0.0 || !sigma.is_finite() {
        return Err(invalid("path noise must be finite and non-negative"));
    }
    let n = z0.n_atoms();
    if z1.n_atoms() != n
        || z0.types.len() != n
        || z1.types.len() != n
        || z0.charges.len() != n
        || z1.charges.len() != n
        || z0.bonds.len() != n * n
        || z1.bonds.len() != n * n
    {
        return Err(dim_err("data and noise states differ in shape"));
    }
    let mut coords = Vec::with_capacity(n);
    let mut vel = Vec::with_capacity(n);
    for (a, b) in z0.coords.iter().zip(&z1.coords) {
        let mut x = [0.0; 3];
        let mut v = [0.0; 3];
        for k in 0..3 {
            let eps: f64 = if sigma > 0.0 { rng.sample(StandardNormal) } else { 0.0 };
            x[k] = (1.0 - t) * a[k] + t * b[k] + sigma * eps;
            v[k] = b[k] - a[k];
        }
        coords.push(x);
        vel.push(v);
    }
    let mut pick = |d: usize, noise: usize| if rng.random::<f64>() < t { noise } else { d };
    let types = (0..n).map(|i| pick(z0.types[i], z1.types[i])).collect();
    let charges = (0..n).map(|i| pick(z0.charges[i], z1.charges[i])).collect();
    let mut bonds = vec![0; n * n];
    let mut target_bonds = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let b = pick(z0.bonds[i * n + j], z1.bonds[i * n + j]);
            bonds[i * n + j] = b;
            bonds[j * n + i] = b;
            target_bonds.push(z0.bonds[i * n + j]);
        }
    }
    Ok(PathSample {
        t,
        z_t: Encoded {
            coords,
            types,
            charges,
            bonds,
        },
        target_velocity: vel,
        target_types: z0.types.clone(),
        target_charges: z0.charges.clone(),
        target_bonds,
    })
}

/// Interpolation of plain vectors: returns `(x_t, x₁ − x₀)`.
pub fn interpolate_vec<R: Rng + ?Sized>(
    x0: &[f64],
    x1: &[f64],
    t: f64,
    sigma: f64,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_time(t)?;
    if x0.len() != x1.len() {
        return Err(dim_err("endpoint lengths differ"));
    }
    let xt = x0
        .iter()
        .zip(x1)
        .map(|(a, b)| {
            let eps: f64 = if sigma > 0.0 { rng.sample(StandardNormal) } else { 0.0 };
            (1.0 - t) * a + t * b + sigma * eps
        })
        .collect();
    let v = x0.iter().zip(x1).map(|(a, b)| b - a).collect();
    Ok((xt, v))
}

/// `r + N(0, σ_r²)·(1 − s)`, where `s ∈ [0, 1]` is how close the state is to
/// data (`s = 1` is clean). With this crate's time convention pass `s = 1 − t`.
pub fn rank_noise<R: Rng + ?Sized>(r: f64, s: f64, sigma_r: f64, rng: &mut R) -> Result<f64> {
    check_time(s)?;
    if sigma_r < 0.0 || !sigma_r.is_finite() {
        return Err(invalid("rank noise must be finite and non-negative"));
    }
    if sigma_r == 0.0 || s == 1.0 {
        return Ok(r);
    }
    let e = Normal::new(0.0, sigma_r)
        .map_err(|e| invalid(e.to_string()))?
        .sample(rng);
    Ok(r + e * (1.0 - s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn state(x: f64, class: usize, n: usize) -> Encoded {
        Encoded {
            coords: vec![[x; 3]; n],
            types: vec![class; n],
            charges: vec![class; n],
            bonds: (0..n * n).map(|k| if k / n == k % n { 0 } else { class }).collect(),
        }
    }

    #[test]
    fn endpoints_and_midpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (a, b) = (state(0.0, 0, 2), state(2.0, 1, 2));
        let s0 = interpolate(&a, &b, 0.0, 0.0, &mut rng).unwrap();
        assert_eq!(s0.z_t, a);
        assert_eq!(s0.target_velocity, vec![[2.0; 3]; 2]);
        let s1 = interpolate(&a, &b, 1.0, 0.0, &mut rng).unwrap();
        assert_eq!(s1.z_t, b);
        let sm = interpolate(&a, &b, 0.5, 0.0, &mut rng).unwrap();
        assert_eq!(sm.z_t.coords, vec![[1.0; 3]; 2]);
        assert_eq!(sm.target_types, vec![0, 0]);
        assert_eq!(sm.target_bonds, vec![0]);
        assert!(interpolate(&a, &b, 1.5, 0.0, &mut rng).is_err());
        assert!(interpolate(&a, &state(0.0, 0, 3), 0.5, 0.0, &mut rng).is_err());
    }

    #[test]
    fn categorical_keep_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, b) = (state(0.0, 0, 40), state(0.0, 1, 40));
        let t = 0.3;
        let mut kept = 0usize;
        let mut total = 0usize;
        for _ in 0..500 {
            let s = interpolate(&a, &b, t, 0.0, &mut rng).unwrap();
            kept += s.z_t.types.iter().filter(|&&c| c == 0).count();
            total += 40;
            // Bond matrix stays symmetric.
            for i in 0..40 {
                for j in 0..40 {
                    assert_eq!(s.z_t.bonds[i * 40 + j], s.z_t.bonds[j * 40 + i]);
                }
            }
        }
        let p = kept as f64 / total as f64;
        let se = (0.7 * 0.3 / total as f64).sqrt();
        assert!((p - 0.7).abs() < 5.0 * se, "{p}");
    }

    #[test]
    fn path_noise_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<f64> = (0..20000)
            .map(|_| interpolate_vec(&[1.0], &[3.0], 0.5, 0.2, &mut rng).unwrap().0[0])
            .collect();
        assert!((stats::mean(&xs) - 2.0).abs() < 0.01);
        assert!((stats::variance(&xs).sqrt() - 0.2).abs() < 0.01);
    }

    #[test]
    fn beta21_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ts: Vec<f64> = (0..100_000).map(|_| sample_time(TimeDist::Beta21, &mut rng)).collect();
        // 1 − Beta(2,1) is Beta(1,2): mean 1/3, variance 1/18.
        assert!((stats::mean(&ts) - 1.0 / 3.0).abs() < 0.005);
        assert!((stats::variance(&ts) - 1.0 / 18.0).abs() < 0.002);
    }

    #[test]
    fn rank_noise_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(rank_noise(0.3, 1.0, 0.5, &mut rng).unwrap(), 0.3);
        assert_eq!(rank_noise(0.3, 0.2, 0.0, &mut rng).unwrap(), 0.3);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| rank_noise(0.0, 0.0, 0.1, &mut rng).unwrap())
            .collect();
        let sd = stats::variance(&xs).sqrt();
        assert!((sd - 0.1).abs() < 0.005, "{sd}");
        assert!(rank_noise(0.0, -0.1, 0.1, &mut rng).is_err());
    }
}
