//! Molecular states `Z = (X, H, A)`: coordinates, atom features and the bond
//! tensor, plus file I/O and valence-based quality metrics.

mod encoding;
mod io;
mod metrics;

pub use encoding::{Encoded, Vocab};
pub use io::{parse_sdf, parse_xyz, read_molecule, write_sdf, write_xyz};
pub use metrics::{fingerprint, metrics_report, stability, uniqueness, MetricsReport, StabilityResult, ValenceTable};

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, invalid, Result};

/// Bond codes stored in [`MoleculeState::bonds`].
pub mod bond {
    pub const NONE: u8 = 0;
    pub const SINGLE: u8 = 1;
    pub const DOUBLE: u8 = 2;
    pub const TRIPLE: u8 = 3;
    pub const AROMATIC: u8 = 4;
    /// Number of bond classes including "no bond".
    pub const N_CLASSES: usize = 5;
}

/// A molecule with `N` atoms.
///
/// `bonds` is a dense row-major `N × N` table of bond codes (see [`bond`]),
/// symmetric with a zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoleculeState {
    pub coords: Vec<[f64; 3]>,
    pub atom_types: Vec<u8>,
    pub charges: Vec<i8>,
    pub bonds: Vec<u8>,
}

impl MoleculeState {
    /// Builds a state and checks the structural invariants.
    pub fn new(coords: Vec<[f64; 3]>, atom_types: Vec<u8>, charges: Vec<i8>, bonds: Vec<u8>) -> Result<Self> {
        let m = Self {
            coords,
            atom_types,
            charges,
            bonds,
        };
        m.validate()?;
        Ok(m)
    }

    /// A bond-free molecule with neutral atoms.
    pub fn from_atoms(coords: Vec<[f64; 3]>, atom_types: Vec<u8>) -> Result<Self> {
        let n = coords.len();
        Self::new(coords, atom_types, vec![0; n], vec![0; n * n])
    }

    pub fn n_atoms(&self) -> usize {
        self.coords.len()
    }

    #[inline]
    pub fn bond(&self, i: usize, j: usize) -> u8 {
        self.bonds[i * self.n_atoms() + j]
    }

    /// Sets the bond between `i` and `j` in both directions.
    pub fn set_bond(&mut self, i: usize, j: usize, code: u8) {
        let n = self.n_atoms();
        self.bonds[i * n + j] = code;
        self.bonds[j * n + i] = code;
    }

    /// Unordered bonded pairs `(i, j)` with `i < j`.
    pub fn bond_list(&self) -> Vec<(usize, usize, u8)> {
        let n = self.n_atoms();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let b = self.bond(i, j);
                if b != bond::NONE {
                    out.push((i, j, b));
                }
            }
        }
        out
    }

    pub fn centroid(&self) -> [f64; 3] {
        let n = self.n_atoms().max(1) as f64;
        let mut c = [0.0; 3];
        for x in &self.coords {
            for k in 0..3 {
                c[k] += x[k];
            }
        }
        c.map(|v| v / n)
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        dist(&self.coords[i], &self.coords[j])
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.coords.len();
        if n == 0 {
            return Err(invalid("molecule must have at least one atom"));
        }
        if self.atom_types.len() != n || self.charges.len() != n {
            return Err(dim_err(format!(
                "{} coordinates, {} atom types, {} charges",
                n,
                self.atom_types.len(),
                self.charges.len()
            )));
        }
        if self.bonds.len() != n * n {
            return Err(dim_err(format!(
                "bond table has {} entries, expected {}",
                self.bonds.len(),
                n * n
            )));
        }
        if self.coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite coordinate"));
        }
        for i in 0..n {
            if self.bonds[i * n + i] != 0 {
                return Err(invalid(format!("self-bond on atom {i}")));
            }
            for j in i + 1..n {
                if self.bonds[i * n + j] != self.bonds[j * n + i] {
                    return Err(invalid(format!("asymmetric bond between {i} and {j}")));
                }
                if self.bonds[i * n + j] as usize >= bond::N_CLASSES {
                    return Err(invalid(format!("unknown bond code between {i} and {j}")));
                }
            }
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

const SYMBOLS: [&str; 54] = [
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S", "Cl", "Ar", "K", "Ca",
    "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Y",
    "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn", "Sb", "Te", "I", "Xe",
];

/// Atomic number for an element symbol (case-insensitive), covering H–Xe.
pub fn atomic_number(symbol: &str) -> Option<u8> {
    SYMBOLS
        .iter()
        .position(|s| s.eq_ignore_ascii_case(symbol))
        .map(|p| (p + 1) as u8)
}

pub fn element_symbol(z: u8) -> Option<&'static str> {
    SYMBOLS.get((z as usize).checked_sub(1)?).copied()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symbols_round_trip() {
        for z in 1..=54u8 {
            assert_eq!(atomic_number(element_symbol(z).unwrap()), Some(z));
        }
        assert_eq!(atomic_number("cl"), Some(17));
        assert_eq!(atomic_number("Xx"), None);
        assert_eq!(element_symbol(0), None);
    }

    #[test]
    fn validate_rejects_asymmetric_bonds() {
        let mut m = MoleculeState::from_atoms(vec![[0.0; 3], [1.0, 0.0, 0.0]], vec![6, 6]).unwrap();
        m.bonds[1] = 1;
        assert!(m.validate().is_err());
        m.bonds[2] = 1;
        assert!(m.validate().is_ok());
    }

    #[test]
    fn validate_rejects_empty_and_nan() {
        assert!(MoleculeState::from_atoms(vec![], vec![]).is_err());
        assert!(MoleculeState::from_atoms(vec![[f64::NAN, 0.0, 0.0]], vec![1]).is_err());
    }
}
