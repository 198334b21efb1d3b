//! Per-path random streams.
//!
//! A path's stream is a ChaCha keystream keyed by the master seed and
//! selected by the path index (`stream(path) = h(master_seed, path_index)`).
//! Any path can be replayed in isolation, on any worker, without
//! coordination.

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct PathStream {
    inner: ChaCha8Rng,
}

impl PathStream {
    pub fn new(master_seed: u64, path_index: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(master_seed);
        inner.set_stream(path_index);
        Self { inner }
    }
}

impl RngCore for PathStream {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    #[inline]
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
