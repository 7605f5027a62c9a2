//! Pre-sorted Tsetlin Machines.
//!
//! A binarized training set is sorted in three stages before any learning
//! happens:
//!
//! 1. [`dispersion`] picks K far-apart points per class with a short
//!    genetic search,
//! 2. [`kmedoid`] grows K Hamming-distance clusters per class from them,
//! 3. [`alignment`] decides which cluster of each class goes to which of K
//!    machines so that the medoids sharing a machine differ as much as
//!    possible.
//!
//! Each column then trains its own small [`tsetlin::TsetlinMachine`], and
//! inference routes an input to the machine of its nearest medoid
//! ([`ensemble`]). The single full-size machine is available as the
//! baseline.

pub mod alignment;
pub mod bitdata;
pub mod dispersion;
pub mod ensemble;
mod error;
pub mod ga;
pub mod kmedoid;
pub mod tsetlin;

pub use alignment::{Arrangement, MedoidGrid};
pub use bitdata::{binarize, hamming_distance, BinaryDataset, BitVector, RawDataset};
pub use dispersion::SelectionChromosome;
pub use ensemble::{
    evaluate, presort, Classifier, EarlyStop, EnsemblePlan, Evaluation, PresortConfig, PresortedEnsemble,
    RoutingMode, ThresholdScaling, TrainOptions, TrainReport,
};
pub use error::{Error, Result};
pub use ga::GaConfig;
pub use kmedoid::{ClusterResult, KMedoidConfig};
pub use tsetlin::{TmParams, TsetlinMachine, UpdateStats};

/// Mixes `index` into `seed` to give independent per-item streams.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
