//! # symcanon
//!
//! Canonicalization-based generative modeling for data with symmetries.
//!
//! A symmetric data distribution (molecules under atom relabelling and global
//! rotation, point clouds under a finite rotation group) is an orbit mixture:
//! every sample comes with all of its symmetric copies. Training a generator
//! directly on that mixture forces the model to average over copies. This
//! crate takes the other route:
//!
//! 1. map every sample to one representative of its orbit (the *canonical
//!    slice*) with [`canonicalizer`],
//! 2. train a flow-matching model on the slice ([`flow`]) with priors that
//!    match the slice statistics ([`priors`]) and optional OT pairing
//!    ([`coupling`]),
//! 3. sample on the slice and restore invariance afterwards by applying a
//!    Haar-random group element ([`sampler`]).
//!
//! The [`theory`] module checks the variance arguments behind this pipeline
//! with Monte Carlo estimators and closed forms on small synthetic systems.
//!
//! ## Modules
//!
//! | Module | Purpose |
//! |--------|---------|
//! | [`symgroup`] | `S_N × SO(3)` elements, their action, Haar sampling |
//! | [`molecule`] | molecular state, XYZ/SDF I/O, valence stability, uniqueness |
//! | [`canonicalizer`] | spectral ordering, rotation frames, alternative orderings |
//! | [`priors`] | moment-matched Gaussians and rank-binned categorical priors |
//! | [`coupling`] | product/OT pairing, Hungarian, Sinkhorn, Kabsch, group-aligned lift |
//! | [`flow`] | reverse-mode tape, networks, losses, training |
//! | [`sampler`] | Euler integration, regimes A/B, CFG, Haar randomization |
//! | [`theory`] | mixture scores, variance decomposition, closed forms |
//! | [`stats`] | KS tests, energy distance, rank correlation, quadrature |
//! | [`toy`] | the C₄ four-blob benchmark and random molecule generators |
//!
//! ## Quick start
//!
//! ```rust
//! use symcanon::canonicalizer::{canonicalize, GroupChoice};
//! use symcanon::symgroup::{act, haar_sample};
//! use symcanon::toy::random_molecule;
//! use rand::SeedableRng;
//!
//! let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
//! let mol = random_molecule(12, &mut rng);
//! let canon = canonicalize(&mol, GroupChoice::PermSo3).unwrap();
//!
//! // Any relabelled, rotated copy lands on the same representative.
//! let g = haar_sample(12, &mut rng);
//! let moved = act(&g, &mol).unwrap();
//! let again = canonicalize(&moved, GroupChoice::PermSo3).unwrap();
//! assert_eq!(canon.representative.atom_types, again.representative.atom_types);
//! ```

pub mod canonicalizer;
pub mod coupling;
pub mod error;
pub mod flow;
pub mod molecule;
pub mod priors;
pub mod sampler;
pub mod stats;
pub mod symgroup;
pub mod theory;
pub mod toy;

pub use error::{Error, Result};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
