//! Canonical representatives of molecular states.
//!
//! The permutation step orders atoms by the Fiedler vector of a normalized
//! Gaussian-kernel graph Laplacian; the rotation step builds an orthonormal
//! frame from the head, tail and an anchor atom of that ordering. Both steps
//! return a gauge `κ` with `κ · representative = input`.
//!
//! Inputs whose stabilizer is non-trivial (or whose Fiedler vector is not
//! determined up to sign) are flagged `degenerate`; the outputs are still
//! deterministic but only invariant up to the tie-break rule.

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::molecule::MoleculeState;
use crate::symgroup::{act, compose, GroupElement};

/// Values closer than this are treated as ties.
pub const TIE_TOL: f64 = 1e-9;

/// Which group the canonicalizer quotients out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupChoice {
    /// Permutations and translations.
    Perm,
    /// Permutations, rotations and translations.
    PermSo3,
}

/// A canonical representative with its gauge and per-atom ranks.
#[derive(Debug, Clone)]
pub struct CanonicalResult {
    /// Centered state in canonical atom order (and frame, for `PermSo3`).
    pub representative: MoleculeState,
    /// `act(gauge, representative)` reproduces the input.
    pub gauge: GroupElement,
    /// `r_i = i / N` in representative order.
    pub ranks: Vec<f64>,
    /// Signed Fiedler vector in representative order (ascending).
    pub fiedler: Vec<f64>,
    pub degenerate: bool,
}

/// The Fiedler vector of a molecule in input atom order.
#[derive(Debug, Clone)]
pub struct Fiedler {
    /// Unit-norm, sign-fixed `u₂ = D^{-1/2} v₂` (normalized).
    pub vector: Vec<f64>,
    pub lambda2: f64,
    /// `λ₃ − λ₂`, or `∞` for two atoms.
    pub gap: f64,
    /// The sign statistic `Σ uᵢ(‖xᵢ − x̄‖ − d̄)` before sign fixing.
    pub sign_statistic: f64,
    pub degenerate: bool,
}

/// Kernel bandwidth `σ² = 4·(mean bond length)²`, falling back to the mean
/// pairwise distance when there are no bonds.
pub fn kernel_sigma2(m: &MoleculeState) -> f64 {
    let bonds = m.bond_list();
    let mean = if bonds.is_empty() {
        let n = m.n_atoms();
        let mut s = 0.0;
        let mut c = 0usize;
        for i in 0..n {
            for j in i + 1..n {
                s += m.distance(i, j);
                c += 1;
            }
        }
        s / c.max(1) as f64
    } else {
        bonds.iter().map(|&(i, j, _)| m.distance(i, j)).sum::<f64>() / bonds.len() as f64
    };
    4.0 * mean * mean
}

/// Computes the sign-fixed Fiedler vector of the normalized Laplacian
/// `S = I − D^{-1/2} W D^{-1/2}` with `W_ij = exp(−‖xᵢ−xⱼ‖² / 2σ²)`.
pub fn fiedler_vector(m: &MoleculeState) -> Result<Fiedler> {
    m.validate()?;
    let n = m.n_atoms();
    if n < 2 {
        return Err(invalid("the Fiedler vector needs at least two atoms"));
    }
    let sigma2 = kernel_sigma2(m);
    if !(sigma2 > 0.0) {
        return Err(invalid("all atoms coincide"));
    }
    let w = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            (-m.distance(i, j).powi(2) / (2.0 * sigma2)).exp()
        }
    });
    let deg: Vec<f64> = (0..n).map(|i| w.row(i).sum()).collect();
    if deg.iter().any(|&d| d < 1e-300) {
        return Err(invalid("kernel graph has an isolated atom"));
    }
    let dinv: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
    let s = DMatrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - dinv[i] * w[(i, j)] * dinv[j]
    });
    let eig = s.symmetric_eigen();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let lambda2 = eig.eigenvalues[idx[1]];
    let gap = if n >= 3 {
        eig.eigenvalues[idx[2]] - lambda2
    } else {
        f64::INFINITY
    };
    if !lambda2.is_finite() {
        return Err(Error::Eigen("non-finite eigenvalue".into()));
    }
    let v = eig.eigenvectors.column(idx[1]);
    let mut u: Vec<f64> = (0..n).map(|i| v[i] * dinv[i]).collect();
    let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(Error::Eigen("zero Fiedler vector".into()));
    }
    u.iter_mut().for_each(|x| *x /= norm);

    let c = m.centroid();
    let radii: Vec<f64> = m.coords.iter().map(|x| crate::molecule::dist(x, &c)).collect();
    let mean_r = radii.iter().sum::<f64>() / n as f64;
    let stat: f64 = u.iter().zip(&radii).map(|(ui, r)| ui * (r - mean_r)).sum();

    let mut degenerate = gap < TIE_TOL;
    if stat.abs() < TIE_TOL {
        degenerate = true;
        if fallback_sign(&u, &m.atom_types) < 0.0 {
            u.iter_mut().for_each(|x| *x = -*x);
        }
    } else if stat < 0.0 {
        u.iter_mut().for_each(|x| *x = -*x);
    }
    Ok(Fiedler {
        vector: u,
        lambda2,
        gap,
        sign_statistic: stat,
        degenerate,
    })
}

/// Sign used when the radial statistic vanishes: `Σ uᵢ Zᵢ`, then the largest
/// entry by magnitude.
fn fallback_sign(u: &[f64], types: &[u8]) -> f64 {
    let s: f64 = u.iter().zip(types).map(|(x, &z)| x * z as f64).sum();
    if s.abs() >= TIE_TOL {
        return s.signum();
    }
    let mut best = 0;
    for (i, x) in u.iter().enumerate() {
        if x.abs() > u[best].abs() + TIE_TOL {
            best = i;
        }
    }
    if u[best] < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Atom order by ascending `u`; runs of values within [`TIE_TOL`] are broken
/// by atomic number (descending) then input index. Returns `(order, tied)`.
fn spectral_order(u: &[f64], types: &[u8]) -> (Vec<usize>, bool) {
    let mut order: Vec<usize> = (0..u.len()).collect();
    order.sort_by(|&a, &b| u[a].total_cmp(&u[b]).then(a.cmp(&b)));
    let mut tied = false;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && u[order[end]] - u[order[end - 1]] < TIE_TOL {
            end += 1;
        }
        if end - start > 1 {
            tied = true;
            order[start..end].sort_by(|&a, &b| types[b].cmp(&types[a]).then(a.cmp(&b)));
        }
        start = end;
    }
    (order, tied)
}

/// Builds the result for a given atom order (`order[k]` is the input index
/// placed at rank `k`) with the centroid as translation gauge.
pub fn canonicalize_with_order(
    m: &MoleculeState,
    order: &[usize],
    fiedler: Vec<f64>,
    degenerate: bool,
) -> Result<CanonicalResult> {
    m.validate()?;
    let n = m.n_atoms();
    if order.len() != n || !crate::symgroup::is_permutation(order) {
        return Err(invalid("order is not a permutation of the atoms"));
    }
    let c = m.centroid();
    let mut dest = vec![0; n];
    for (k, &i) in order.iter().enumerate() {
        dest[i] = k;
    }
    let p = GroupElement {
        perm: dest,
        rot: Matrix3::identity(),
        trans: -Vector3::from(c),
    };
    let representative = act(&p, m)?;
    Ok(CanonicalResult {
        representative,
        gauge: p.inverse(),
        ranks: ranks(n),
        fiedler,
        degenerate,
    })
}

/// `rᵢ = i / N`.
pub fn ranks(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 / n as f64).collect()
}

/// Permutation (and translation) canonicalization by the Fiedler ordering.
pub fn canonicalize_perm(m: &MoleculeState) -> Result<CanonicalResult> {
    m.validate()?;
    if m.n_atoms() == 1 {
        return canonicalize_with_order(m, &[0], vec![0.0], false);
    }
    let f = fiedler_vector(m)?;
    let (order, tied) = spectral_order(&f.vector, &m.atom_types);
    let fiedler = order.iter().map(|&i| f.vector[i]).collect();
    canonicalize_with_order(m, &order, fiedler, f.degenerate || tied)
}

/// Rotation canonicalization of an already ordered state with Fiedler values
/// `u2` in the same order.
///
/// If `Σ u³ < 0` the order is reversed (and `u` negated) first, so that the
/// head/tail choice does not depend on the eigenvector sign convention. The
/// frame is `e₁ ∝ x_tail − x_head`, `e₃ ∝ e₁ × (x_anchor − x_head)`,
/// `e₂ = e₃ × e₁`, where the anchor maximizes the cross-product norm over the
/// middle third. Collinear inputs (and `N < 3`) keep the identity rotation
/// and are flagged degenerate.
pub fn canonicalize_so3(m: &MoleculeState, u2: &[f64]) -> Result<CanonicalResult> {
    m.validate()?;
    let n = m.n_atoms();
    if u2.len() != n {
        return Err(crate::error::dim_err(format!(
            "{} Fiedler values for {n} atoms",
            u2.len()
        )));
    }
    let cube: f64 = u2.iter().map(|x| x.powi(3)).sum();
    let flipped = cube < 0.0;
    let (order, fiedler): (Vec<usize>, Vec<f64>) = if flipped {
        ((0..n).rev().collect(), u2.iter().rev().map(|x| -x).collect())
    } else {
        ((0..n).collect(), u2.to_vec())
    };
    let mut degenerate = cube.abs() < TIE_TOL && n >= 2;
    let c = Vector3::from(m.centroid());
    let x: Vec<Vector3<f64>> = order.iter().map(|&i| Vector3::from(m.coords[i]) - c).collect();

    let mut rot = Matrix3::identity();
    if n < 3 {
        degenerate = true;
    } else {
        let (h, t) = (0, n - 1);
        let axis = x[t] - x[h];
        if axis.norm() < TIE_TOL {
            degenerate = true;
        } else {
            let e1 = axis / axis.norm();
            let mut best = (n / 3, -1.0);
            let mut second = -1.0;
            for k in n / 3..(2 * n / 3).max(n / 3 + 1) {
                let cn = e1.cross(&(x[k] - x[h])).norm();
                if cn > best.1 {
                    second = best.1;
                    best = (k, cn);
                } else if cn > second {
                    second = cn;
                }
            }
            if best.1 - second < TIE_TOL {
                degenerate = true;
            }
            let nvec = e1.cross(&(x[best.0] - x[h]));
            if nvec.norm() < TIE_TOL {
                degenerate = true;
            } else {
                let e3 = nvec / nvec.norm();
                let e2 = e3.cross(&e1);
                rot = Matrix3::from_rows(&[e1.transpose(), e2.transpose(), e3.transpose()]);
            }
        }
    }

    let mut dest = vec![0; n];
    for (k, &i) in order.iter().enumerate() {
        dest[i] = k;
    }
    let g = GroupElement {
        perm: dest,
        rot,
        trans: -(rot * c),
    };
    let representative = act(&g, m)?;
    Ok(CanonicalResult {
        representative,
        gauge: g.inverse(),
        ranks: ranks(n),
        fiedler,
        degenerate,
    })
}

thread_local! {
    static CALLS: std::cell::Cell<usize> = const { std::cell::Cell::new(0) };
}

/// Number of [`canonicalize`] calls made on the current thread.
pub fn calls_on_this_thread() -> usize {
    CALLS.with(|c| c.get())
}

/// Full canonicalization for the chosen group.
pub fn canonicalize(m: &MoleculeState, group: GroupChoice) -> Result<CanonicalResult> {
    CALLS.with(|c| c.set(c.get() + 1));
    let perm = canonicalize_perm(m)?;
    match group {
        GroupChoice::Perm => Ok(perm),
        GroupChoice::PermSo3 => {
            let rot = canonicalize_so3(&perm.representative, &perm.fiedler)?;
            Ok(CanonicalResult {
                gauge: compose(&perm.gauge, &rot.gauge),
                degenerate: perm.degenerate || rot.degenerate,
                ..rot
            })
        }
    }
}

/// Canonicalizes with an explicit atom order instead of the spectral one,
/// then (for `PermSo3`) fixes the frame from that order.
pub fn canonicalize_ordered(
    m: &MoleculeState,
    order: &[usize],
    group: GroupChoice,
    degenerate: bool,
) -> Result<CanonicalResult> {
    let n = m.n_atoms();
    let placeholder = ranks(n);
    let perm = canonicalize_with_order(m, order, placeholder.clone(), degenerate)?;
    match group {
        GroupChoice::Perm => Ok(perm),
        GroupChoice::PermSo3 => {
            // Positive, increasing values keep the given order (no reversal).
            let u: Vec<f64> = (0..n).map(|i| (i + 1) as f64).collect();
            let rot = canonicalize_so3(&perm.representative, &u)?;
            Ok(CanonicalResult {
                gauge: compose(&perm.gauge, &rot.gauge),
                fiedler: placeholder,
                degenerate: perm.degenerate || rot.degenerate,
                ..rot
            })
        }
    }
}

/// Hop-count profile ordering: `w_K(v) = Σₖ dₖ(v)·N^{K−k}` where `dₖ(v)` is
/// the number of atoms exactly `k` bonds from `v`. Ascending `w`, ties by
/// atomic number then index. Returns `(order, tied)`.
pub fn order_multihop(m: &MoleculeState, k_max: usize) -> (Vec<usize>, bool) {
    let n = m.n_atoms();
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| m.bond(i, j) != 0).collect())
        .collect();
    let weights: Vec<u128> = (0..n)
        .map(|v| {
            let mut dist = vec![usize::MAX; n];
            dist[v] = 0;
            let mut queue = std::collections::VecDeque::from([v]);
            while let Some(a) = queue.pop_front() {
                for &b in &adj[a] {
                    if dist[b] == usize::MAX {
                        dist[b] = dist[a] + 1;
                        queue.push_back(b);
                    }
                }
            }
            let mut w: u128 = 0;
            for k in 1..=k_max {
                let dk = dist.iter().filter(|&&d| d == k).count() as u128;
                let scale = (n as u128).saturating_pow((k_max - k) as u32);
                w = w.saturating_add(dk.saturating_mul(scale));
            }
            w
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        weights[a]
            .cmp(&weights[b])
            .then(m.atom_types[a].cmp(&m.atom_types[b]))
            .then(a.cmp(&b))
    });
    let tied = order.windows(2).any(|w| weights[w[0]] == weights[w[1]]);
    (order, tied)
}

/// Atomic-number ordering: heavier atoms first (hydrogens last), ties by
/// index. Returns `(order, tied)`.
pub fn order_atomic(m: &MoleculeState) -> (Vec<usize>, bool) {
    let mut order: Vec<usize> = (0..m.n_atoms()).collect();
    order.sort_by(|&a, &b| m.atom_types[b].cmp(&m.atom_types[a]).then(a.cmp(&b)));
    let tied = order.windows(2).any(|w| m.atom_types[w[0]] == m.atom_types[w[1]]);
    (order, tied)
}
