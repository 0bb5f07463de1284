//! Learning to evaluate words in the symmetric group.
//!
//! The crate covers the whole pipeline: exact group arithmetic
//! ([`perm`]), the two word tokenizations ([`tokenizer`]), subgroup-restricted
//! dataset generation ([`datagen`]), a masked decoder transformer with
//! hand-written backpropagation ([`model`]), the training loop ([`trainer`]),
//! and out-of-distribution evaluation plus embedding heatmaps ([`eval`]).

pub mod config;
#[cfg(feature = "openblas")]
extern crate blas_src;

pub mod datagen;
pub mod error;
pub mod eval;
pub mod model;
pub mod perm;
pub mod rng;
pub mod selfcheck;
pub mod tokenizer;
pub mod trainer;

pub use error::{Error, Result};
pub use perm::{Permutation, Transposition, Word};
pub use tokenizer::{SchemeKind, Token, TokenScheme};
