//! Synthetic data: random molecule-like graphs, small alkanes, and the planar
//! four-blob distribution with `C₄` symmetry.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::molecule::{bond, MoleculeState};
use crate::symgroup::center;

fn random_unit<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-6 {
            return v.map(|x| x / n);
        }
    }
}

fn min_dist(coords: &[[f64; 3]], p: &[f64; 3]) -> f64 {
    coords
        .iter()
        .map(|c| crate::molecule::dist(c, p))
        .fold(f64::INFINITY, f64::min)
}

/// A random tree-shaped molecule with `n` atoms of type C/N/O, grown by
/// attaching each new atom to a random earlier one at 1.3–1.6 Å while keeping
/// non-bonded atoms at least 1.1 Å apart. Coordinates are centered.
///
/// Generic draws have no exact symmetry, which makes these the standard input
/// for invariance tests of the canonicalizer.
pub fn random_molecule<R: Rng + ?Sized>(n: usize, rng: &mut R) -> MoleculeState {
    assert!(n >= 1);
    let types = [6u8, 7, 8];
    let mut coords = vec![[0.0; 3]];
    let mut parents = vec![usize::MAX];
    while coords.len() < n {
        let parent = rng.random_range(0..coords.len());
        let len = rng.random_range(1.3..1.6);
        let dir = random_unit(rng);
        let p = coords[parent];
        let cand = [p[0] + len * dir[0], p[1] + len * dir[1], p[2] + len * dir[2]];
        if min_dist(&coords, &cand) < 1.1 {
            continue;
        }
        coords.push(cand);
        parents.push(parent);
    }
    let atom_types = (0..n).map(|_| types[rng.random_range(0..3)]).collect();
    let mut m = MoleculeState::from_atoms(coords, atom_types).expect("generated state is valid");
    for (i, &p) in parents.iter().enumerate().skip(1) {
        m.set_bond(i, p, bond::SINGLE);
    }
    center(&m)
}

/// A random acyclic alkane `CₖH₂ₖ₊₂` with jittered geometry: a carbon tree
/// (at most four neighbours each) with hydrogens filling every carbon to
/// valence four. Centered; every atom is valence-stable.
pub fn random_alkane<R: Rng + ?Sized>(n_carbons: usize, rng: &mut R) -> MoleculeState {
    assert!(n_carbons >= 1);
    let mut coords = vec![[0.0; 3]];
    let mut degree = vec![0usize];
    let mut edges = Vec::new();
    while coords.len() < n_carbons {
        let parent = rng.random_range(0..coords.len());
        if degree[parent] >= 3 {
            continue;
        }
        let dir = random_unit(rng);
        let p = coords[parent];
        let cand = [p[0] + 1.54 * dir[0], p[1] + 1.54 * dir[1], p[2] + 1.54 * dir[2]];
        if min_dist(&coords, &cand) < 1.4 {
            continue;
        }
        coords.push(cand);
        degree.push(1);
        degree[parent] += 1;
        edges.push((parent, coords.len() - 1));
    }
    let mut types = vec![6u8; n_carbons];
    for c in 0..n_carbons {
        let mut tries = 0;
        while degree[c] < 4 {
            let dir = random_unit(rng);
            let p = coords[c];
            let cand = [p[0] + 1.09 * dir[0], p[1] + 1.09 * dir[1], p[2] + 1.09 * dir[2]];
            tries += 1;
            if min_dist(&coords, &cand) < 0.9 && tries < 1000 {
                continue;
            }
            coords.push(cand);
            types.push(1);
            degree[c] += 1;
            edges.push((c, coords.len() - 1));
        }
    }
    let mut m = MoleculeState::from_atoms(coords, types).expect("generated state is valid");
    for (a, b) in edges {
        m.set_bond(a, b, bond::SINGLE);
    }
    center(&m)
}

/// Four isotropic Gaussian blobs at radius `radius` on the axes, invariant
/// under rotations by multiples of 90°.
#[derive(Debug, Clone, Copy)]
pub struct FourBlobs {
    pub radius: f64,
    pub std: f64,
}

impl Default for FourBlobs {
    fn default() -> Self {
        Self { radius: 3.0, std: 0.35 }
    }
}

impl FourBlobs {
    /// One draw from the invariant four-blob mixture.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let p = self.sample_slice(rng);
        rotate_quarter(p, rng.random_range(0..4))
    }

    /// One draw from the canonical slice: the blob on the positive x axis,
    /// mapped into the sector `[−45°, 45°)` by [`canonicalize_c4`].
    pub fn sample_slice<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let noise = Normal::new(0.0, self.std).expect("std is positive");
        let p = [self.radius + noise.sample(rng), noise.sample(rng)];
        canonicalize_c4(p).0
    }
}

/// Rotates `p` by `k` quarter turns counter-clockwise.
pub fn rotate_quarter(p: [f64; 2], k: usize) -> [f64; 2] {
    match k % 4 {
        0 => p,
        1 => [-p[1], p[0]],
        2 => [-p[0], -p[1]],
        _ => [p[1], -p[0]],
    }
}

/// Maps `p` into the sector `[−45°, 45°)` by a quarter-turn rotation.
/// Returns the representative and the number of quarter turns `k` with
/// `p = rotate_quarter(representative, k)`.
pub fn canonicalize_c4(p: [f64; 2]) -> ([f64; 2], usize) {
    let angle = p[1].atan2(p[0]);
    let k = ((angle + std::f64::consts::FRAC_PI_4) / std::f64::consts::FRAC_PI_2)
        .floor()
        .rem_euclid(4.0) as usize;
    (rotate_quarter(p, (4 - k) % 4), k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molecule::{stability, ValenceTable};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_molecule_is_valid_tree() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for n in [1, 2, 5, 40] {
            let m = random_molecule(n, &mut rng);
            m.validate().unwrap();
            assert_eq!(m.bond_list().len(), n - 1);
            let c = m.centroid();
            assert!(c.iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn alkanes_are_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for k in 1..6 {
            let m = random_alkane(k, &mut rng);
            assert_eq!(m.n_atoms(), 3 * k + 2);
            assert!(stability(&m, &ValenceTable::default()).unwrap().mol_stable);
        }
    }

    #[test]
    fn c4_canonicalization_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let blobs = FourBlobs::default();
        for _ in 0..200 {
            let p = blobs.sample(&mut rng);
            let (rep, k) = canonicalize_c4(p);
            let back = rotate_quarter(rep, k);
            assert!((back[0] - p[0]).abs() < 1e-12 && (back[1] - p[1]).abs() < 1e-12);
            assert!(rep[0] >= rep[1].abs() - 1e-12);
            for j in 0..4 {
                let (rep2, _) = canonicalize_c4(rotate_quarter(p, j));
                assert!((rep2[0] - rep[0]).abs() < 1e-12 && (rep2[1] - rep[1]).abs() < 1e-12);
            }
        }
    }
}
