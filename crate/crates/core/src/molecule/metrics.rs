//! Valence-based stability and an isomorphism-insensitive uniqueness score.

use std::collections::{BTreeMap, HashMap, HashSet};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{bond, element_symbol, MoleculeState};
use crate::error::{invalid, Error, Result};

/// Allowed total bond valences per element and formal charge.
///
/// An atom whose charge has no entry for its element is reported unstable;
/// an element with no entry at all is an error.
#[derive(Debug, Clone)]
pub struct ValenceTable {
    table: HashMap<u8, BTreeMap<i8, Vec<u32>>>,
}

impl Default for ValenceTable {
    /// H, C, N, O, F, P, S, Cl, Br, I with common charge states.
    fn default() -> Self {
        let mut t = Self::empty();
        t.insert(1, 0, &[1]);
        t.insert(6, 0, &[4]);
        t.insert(6, -1, &[3]);
        t.insert(6, 1, &[3]);
        t.insert(7, 0, &[3]);
        t.insert(7, 1, &[4]);
        t.insert(7, -1, &[2]);
        t.insert(8, 0, &[2]);
        t.insert(8, 1, &[3]);
        t.insert(8, -1, &[1]);
        t.insert(9, 0, &[1]);
        t.insert(15, 0, &[3, 5]);
        t.insert(15, 1, &[4]);
        t.insert(16, 0, &[2, 4, 6]);
        t.insert(16, 1, &[3]);
        t.insert(16, -1, &[1]);
        t.insert(17, 0, &[1]);
        t.insert(35, 0, &[1]);
        t.insert(53, 0, &[1]);
        t
    }
}

impl ValenceTable {
    pub fn empty() -> Self {
        Self { table: HashMap::new() }
    }

    pub fn insert(&mut self, z: u8, charge: i8, valences: &[u32]) {
        self.table.entry(z).or_default().insert(charge, valences.to_vec());
    }

    pub fn supports(&self, z: u8) -> bool {
        self.table.contains_key(&z)
    }

    /// `None` when the element is unknown; an empty slice when the charge is.
    pub fn allowed(&self, z: u8, charge: i8) -> Option<&[u32]> {
        let per_charge = self.table.get(&z)?;
        Some(per_charge.get(&charge).map(|v| v.as_slice()).unwrap_or(&[]))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StabilityResult {
    pub atom_stable: Vec<bool>,
    pub mol_stable: bool,
}

/// Bond valence of atom `i` in half-bond units (aromatic bonds count 3).
fn twice_valence(m: &MoleculeState, i: usize) -> u32 {
    (0..m.n_atoms())
        .map(|j| match m.bond(i, j) {
            bond::AROMATIC => 3,
            b => 2 * b as u32,
        })
        .sum()
}

/// Checks every atom's explicit valence against `table`.
///
/// Aromatic bonds count 1.5 and the total is rounded half-up.
pub fn stability(m: &MoleculeState, table: &ValenceTable) -> Result<StabilityResult> {
    let mut atom_stable = Vec::with_capacity(m.n_atoms());
    for i in 0..m.n_atoms() {
        let z = m.atom_types[i];
        let allowed = table
            .allowed(z, m.charges[i])
            .ok_or_else(|| Error::UnsupportedElement(element_symbol(z).map_or_else(|| z.to_string(), String::from)))?;
        let valence = twice_valence(m, i).div_ceil(2);
        atom_stable.push(allowed.contains(&valence));
    }
    let mol_stable = atom_stable.iter().all(|&s| s);
    Ok(StabilityResult {
        atom_stable,
        mol_stable,
    })
}

fn bond_weight(code: u8) -> f64 {
    match code {
        bond::AROMATIC => 1.5,
        b => b as f64,
    }
}

/// A relabelling-invariant key for a molecular graph.
///
/// Sorted multiset of `(atomic number, charge, sorted incident bond orders)`
/// followed by the sorted spectrum of the bond-order matrix rounded to 1e-6.
/// Non-isomorphic graphs can collide (cospectral graphs with equal local
/// multisets), so this is an approximation to canonical SMILES.
pub fn fingerprint(m: &MoleculeState) -> String {
    let n = m.n_atoms();
    let mut atoms: Vec<String> = (0..n)
        .map(|i| {
            let mut orders: Vec<u8> = (0..n).map(|j| m.bond(i, j)).filter(|&b| b != 0).collect();
            orders.sort_unstable();
            format!("{}:{}:{:?}", m.atom_types[i], m.charges[i], orders)
        })
        .collect();
    atoms.sort();
    let adj = DMatrix::from_fn(n, n, |i, j| bond_weight(m.bond(i, j)));
    let mut eig: Vec<f64> = SymmetricEigen::new(adj).eigenvalues.iter().copied().collect();
    eig.sort_by(|a, b| a.total_cmp(b));
    let spectrum: Vec<String> = eig
        .iter()
        .map(|&e| {
            let r = (e * 1e6).round() / 1e6;
            // avoid "-0.000000"
            format!("{:.6}", if r == 0.0 { 0.0 } else { r })
        })
        .collect();
    format!("{}|{}", atoms.join(","), spectrum.join(","))
}

/// Fraction of distinct [`fingerprint`]s in `mols`.
pub fn uniqueness(mols: &[MoleculeState]) -> Result<f64> {
    if mols.is_empty() {
        return Err(invalid("uniqueness of an empty list"));
    }
    let keys: HashSet<String> = mols.iter().map(fingerprint).collect();
    Ok(keys.len() as f64 / mols.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub atom_stability: f64,
    pub mol_stability: f64,
    pub uniqueness: f64,
    pub n_samples: usize,
}

pub fn metrics_report(mols: &[MoleculeState], table: &ValenceTable) -> Result<MetricsReport> {
    if mols.is_empty() {
        return Err(invalid("no molecules to score"));
    }
    let mut stable_atoms = 0usize;
    let mut total_atoms = 0usize;
    let mut stable_mols = 0usize;
    for m in mols {
        let s = stability(m, table)?;
        stable_atoms += s.atom_stable.iter().filter(|&&a| a).count();
        total_atoms += s.atom_stable.len();
        stable_mols += s.mol_stable as usize;
    }
    Ok(MetricsReport {
        atom_stability: stable_atoms as f64 / total_atoms as f64,
        mol_stability: stable_mols as f64 / mols.len() as f64,
        uniqueness: uniqueness(mols)?,
        n_samples: mols.len(),
    })
}
