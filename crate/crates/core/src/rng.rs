//! Reproducible, splittable random streams.
//!
//! A stream is a `(master_seed, stream_id)` pair mapped onto a ChaCha8
//! key and stream number, so replicas can be generated in any order (or in
//! parallel) and still reproduce bit-identical output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream_id: u64,
}

/// Stream for replica `replica` of an experiment seeded with `master_seed`.
pub fn spawn_stream(master_seed: u64, replica: u64) -> RngStream {
    RngStream {
        master_seed,
        stream_id: replica,
    }
}

impl RngStream {
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// Independent sub-stream keyed by `tag`, for experiments that need
    /// several families of replicas under one seed.
    pub fn child(&self, tag: u64) -> RngStream {
        RngStream {
            master_seed: splitmix64(self.master_seed ^ splitmix64(self.stream_id)),
            stream_id: tag,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
