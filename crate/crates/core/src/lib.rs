//! Multi-channel friend recommendation with an operator-tunable balance
//! between similarity and diversity.
//!
//! The crate is organised along the recommendation flow:
//!
//! * [`data`]: player logs, the on-disk log format, synthetic populations
//!   and the temporal train/test split.
//! * [`features`]: the four preference channels (social, gameplay, avatar,
//!   baseline) and the graph metrics behind the social channel.
//! * [`pipeline`]: per-channel candidate generation, band classification,
//!   intra-channel sampling and inter-channel fusion.
//! * [`ranker`]: a gradient-boosted tree classifier over candidate pairs.
//! * [`metrics`]: diversity triple, quality metrics and iteration history.
//! * [`propagation`]: label propagation of preference ratios over a
//!   player-similarity graph, plus least-confidence selection.
//! * [`projection`]: exact t-SNE, hexagonal binning and radial layouts.

pub mod data;
pub mod error;
pub mod features;
pub mod metrics;
pub mod pipeline;
pub mod projection;
pub mod propagation;
pub mod ranker;

pub use error::{Error, Result};

pub(crate) fn seeded_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream seed from a base seed and a stream index.
pub(crate) fn stream_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
