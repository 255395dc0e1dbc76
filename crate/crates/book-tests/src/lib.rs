//! Compiles and runs the Rust snippets of the guide in `book/` as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/canonicalization.md")]
pub mod canonicalization {}

#[doc = include_str!("../../../book/src/priors-and-coupling.md")]
pub mod priors_and_coupling {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/sampling.md")]
pub mod sampling {}

#[doc = include_str!("../../../book/src/theory.md")]
pub mod theory {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
