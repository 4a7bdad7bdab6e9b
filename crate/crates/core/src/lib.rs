//! Spectral relevance analysis.
//!
//! The crate computes LRP attributions for small image classifiers, compares
//! them under euclidean, entropic Wasserstein and entropic Gromov-Wasserstein
//! distances, clusters them spectrally and ranks classes by how separable
//! their explanation clusters are. Classes with a high score are candidates
//! for shortcut ("Clever Hans") behavior, which the ablation harness can then
//! confirm by injecting and removing the suspected artifact.

pub mod ablation;
pub mod attribution;
pub mod cluster;
pub mod distance;
mod error;
pub mod pipeline;
pub mod spectral;
pub mod viz;

pub use error::{Error, Result};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seeded generator used everywhere randomness is needed.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
