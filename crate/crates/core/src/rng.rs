//! Counter-based, splittable noise streams.
//!
//! Every Gaussian draw in a run comes from a ChaCha8 stream selected by a
//! [`StreamKey`]. ChaCha is a counter-mode cipher, so the numbers produced
//! for `(seed, key)` do not depend on which other streams were consumed or
//! in what order. Seeds form a tree: experiment seed -> run seed (via
//! [`derive_seed`]) -> per-step and per-candidate streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::LatentVideo;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed `child` of `parent`. Used for experiment -> run and
/// run -> best-of-N path derivations.
pub fn derive_seed(parent: u64, child: u64) -> u64 {
    mix64(parent ^ mix64(child.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

/// Identifies one independent noise stream within a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StreamKey {
    /// Initial latent `z_T`.
    Init,
    /// Noise of candidate `candidate` at reverse step `t`. Unguided steps
    /// use candidate 0, which makes `n = 1` guidance reproduce the plain
    /// sampler exactly.
    Step { t: usize, candidate: usize },
    /// Fresh noise for the soft-control update at step `t`.
    Soft { t: usize },
    /// Monte-Carlo rollout `path`; one stream covers every step of the path.
    Rollout { path: usize },
}

impl StreamKey {
    /// 64-bit ChaCha stream id. Top 4 bits hold the tag.
    pub fn stream_id(self) -> u64 {
        const LOW28: u64 = (1 << 28) - 1;
        const LOW32: u64 = (1 << 32) - 1;
        match self {
            StreamKey::Init => 1 << 60,
            StreamKey::Step { t, candidate } => {
                (2 << 60) | ((t as u64 & LOW32) << 28) | (candidate as u64 & LOW28)
            }
            StreamKey::Soft { t } => (3 << 60) | (t as u64 & LOW32),
            StreamKey::Rollout { path } => (4 << 60) | (path as u64 & ((1 << 60) - 1)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseStreams {
    seed: u64,
}

impl NoiseStreams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rng(&self, key: StreamKey) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(key.stream_id());
        rng
    }

    /// Standard normal `F x D` draw from the stream `key`.
    pub fn normal(&self, key: StreamKey, frames: usize, dims: usize) -> LatentVideo {
        let mut rng = self.rng(key);
        fill_normal(&mut rng, frames, dims)
    }
}

pub fn fill_normal(rng: &mut impl Rng, frames: usize, dims: usize) -> LatentVideo {
    let mut out = LatentVideo::zeros(frames, dims);
    for x in out.as_mut_slice() {
        *x = rng.sample(StandardNormal);
    }
    out
}
