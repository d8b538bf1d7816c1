//! Data-enabled predictive control (DeePC) with minimum-dimension data libraries.
//!
//! The crate is organised bottom-up:
//!
//! - [`data`]: trajectories, Hankel / Page / mosaic-Hankel matrices, excitation
//!   checks and range-space membership.
//! - [`plant`]: discrete-time LTI simulation, data collection and the structural
//!   factors (convolution and extended observability matrices).
//! - [`reduction`]: SVD of a data library, rank selection and the reduced
//!   library `H_bar = H V1 = W1 S1`.
//! - [`qp`]: a dense dual active-set solver for strictly convex QPs.
//! - [`deepc`]: condensed DeePC problems over a full or reduced library, KKT
//!   certification, solution-equivalence checks and the receding-horizon loop.
//! - [`suites`]: randomized property suites shared by `deepc check` and the tests.
//! - [`experiment`]: declarative experiment configs and the commands behind the
//!   `deepc` binary.
//!
//! Runnable walkthroughs live in this crate's `examples/` directory.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod deepc;
pub mod error;
pub mod experiment;
pub mod plant;
pub mod qp;
pub mod reduction;
pub mod suites;
pub(crate) mod linalg;

pub use error::{Error, Result};

/// Identifier of the random generator used for every seeded draw in the crate.
pub const RNG_ALGORITHM: &str = "chacha8";

/// Seeded generator used throughout the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate's generator from a seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}

/// Mixes `seed` with a stream label so that independent consumers of one
/// master seed do not share a random sequence.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
