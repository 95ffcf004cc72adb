//! Seeded, stream-splittable randomness.
//!
//! Every random draw in the crate goes through [`RngStream`]. A stream is a
//! `(master_seed, stream_index)` pair backed by ChaCha8: the master seed keys
//! the cipher (expanded with `seed_from_u64`) and the stream index selects one
//! of its 2^64 independent keystreams. Standard normals come from the
//! ziggurat sampler in `rand_distr::StandardNormal`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Generator type handed out by [`RngStream::rng`].
pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream_index: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        Self {
            master_seed,
            stream_index,
        }
    }

    /// Fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_index);
        rng
    }

    /// Sibling stream under the same master seed.
    pub fn with_index(&self, stream_index: u64) -> Self {
        Self::new(self.master_seed, stream_index)
    }

    /// Child master seed for nested experiments (e.g. one per grid point),
    /// so that the child can hand out its own stream indices `0..k`.
    pub fn derive_seed(master_seed: u64, tag: u64) -> u64 {
        splitmix64(master_seed ^ splitmix64(tag.wrapping_add(0x5851_F42D_4C95_7F2D)))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
