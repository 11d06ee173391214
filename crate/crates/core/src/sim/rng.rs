use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One root seed fanned out into independently keyed ChaCha substreams.
///
/// Each module asks for its stream by name, so adding a consumer never shifts
/// the draws of another.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStreams {
    root: u64,
}

impl RngStreams {
    pub fn new(root: u64) -> Self {
        RngStreams { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    pub fn stream(&self, key: &str) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.root);
        rng.set_stream(fnv1a(key.as_bytes()));
        rng
    }

    /// Stream for the `index`-th independent trial of `key`; used by Monte-Carlo
    /// batches so that sequential and parallel execution draw identical numbers.
    pub fn trial(&self, key: &str, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.root ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        rng.set_stream(fnv1a(key.as_bytes()));
        rng
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
