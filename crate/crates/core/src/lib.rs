//! Self-supervised embedding of dyadic (two-animal) pose sequences, unsupervised
//! motif discovery with Gaussian HMM sweeps, and downstream behavioral and
//! peri-event analytics.
//!
//! The crate is organised the way data flows through it:
//!
//! * [`dataset`]: keypoint ingestion, normalization, windowing, synthetic corpora
//! * [`ssl`]: the four self-supervised pretext tasks
//! * [`model`]: transformer backbone, task heads, analytic gradients
//! * [`train`]: pretraining, fine-tuning, metrics, grid search
//! * [`hmm`]: diagonal Gaussian HMM (EM, Viterbi, causal filtering)
//! * [`motifs`]: HMM sweeps, Jaccard clustering and prototype selection
//! * [`analysis`]: bouts, transitions, coverage, features, PETH, t-tests

pub mod analysis;
pub mod dataset;
pub mod error;
pub mod hmm;
pub mod model;
pub mod motifs;
pub mod ssl;
pub mod train;

pub use error::{Error, Result};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random stream used everywhere a seed is accepted.
pub type Rng = ChaCha8Rng;

/// Seeded stream with an explicit stream id, so that independent workers
/// (epochs, grid candidates, HMM state counts) never share draws.
pub fn seeded_rng(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Version of this library, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
