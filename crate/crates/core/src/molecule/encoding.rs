use serde::{Deserialize, Serialize};

use super::{bond, MoleculeState};
use crate::error::{invalid, Error, Result};

/// Maps atom types and formal charges to class indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub atom_types: Vec<u8>,
    pub charges: Vec<i8>,
}

impl Default for Vocab {
    /// H, C, N, O, F with charges −1, 0, +1.
    fn default() -> Self {
        Self {
            atom_types: vec![1, 6, 7, 8, 9],
            charges: vec![-1, 0, 1],
        }
    }
}

/// A molecule with categorical features as class indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoded {
    pub coords: Vec<[f64; 3]>,
    pub types: Vec<usize>,
    pub charges: Vec<usize>,
    /// Row-major `N × N` bond classes (see [`bond`]).
    pub bonds: Vec<usize>,
}

impl Encoded {
    pub fn n_atoms(&self) -> usize {
        self.coords.len()
    }
}

impl Vocab {
    pub fn n_types(&self) -> usize {
        self.atom_types.len()
    }

    pub fn n_charges(&self) -> usize {
        self.charges.len()
    }

    pub fn charge_index(&self, q: i8) -> Option<usize> {
        self.charges.iter().position(|&c| c == q)
    }

    pub fn encode(&self, m: &MoleculeState) -> Result<Encoded> {
        let types = m
            .atom_types
            .iter()
            .map(|&z| {
                self.atom_types.iter().position(|&t| t == z).ok_or_else(|| {
                    Error::UnsupportedElement(super::element_symbol(z).map_or_else(|| format!("Z={z}"), String::from))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let charges = m
            .charges
            .iter()
            .map(|&q| {
                self.charge_index(q)
                    .ok_or_else(|| invalid(format!("charge {q} is not in the vocabulary")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Encoded {
            coords: m.coords.clone(),
            types,
            charges,
            bonds: m.bonds.iter().map(|&b| b as usize).collect(),
        })
    }

    pub fn decode(&self, e: &Encoded) -> Result<MoleculeState> {
        let n = e.n_atoms();
        let get = |i: usize, len: usize| {
            if i < len {
                Ok(i)
            } else {
                Err(invalid(format!("class index {i} out of range {len}")))
            }
        };
        let atom_types = e
            .types
            .iter()
            .map(|&i| get(i, self.n_types()).map(|i| self.atom_types[i]))
            .collect::<Result<Vec<_>>>()?;
        let charges = e
            .charges
            .iter()
            .map(|&i| get(i, self.n_charges()).map(|i| self.charges[i]))
            .collect::<Result<Vec<_>>>()?;
        let mut bonds = vec![0u8; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    bonds[i * n + j] = get(e.bonds[i * n + j], bond::N_CLASSES)? as u8;
                }
            }
        }
        MoleculeState::new(e.coords.clone(), atom_types, charges, bonds)
    }
}
