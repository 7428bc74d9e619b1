//! Seed splitting.
//!
//! Every random stream in the crate is derived from one user seed. A child
//! seed is `mix(mix(seed ^ domain_tag) ^ index)` where `mix` is the
//! SplitMix64 finalizer and `domain_tag` is a fixed constant per stream
//! kind (layer, block, sample, ...). Streams for distinct `(domain, index)`
//! pairs are therefore independent of iteration order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Permutation,
    SignsLeft,
    SignsRight,
    TeacherWeights,
    Calibration,
    Heldout,
    Layer,
    Block,
    Sample,
    Bootstrap,
    Bench,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Permutation => 0x7065_726d_0000_0001,
            Stream::SignsLeft => 0x7369_676e_0000_004c,
            Stream::SignsRight => 0x7369_676e_0000_0052,
            Stream::TeacherWeights => 0x7465_6163_0000_0001,
            Stream::Calibration => 0x6361_6c69_0000_0001,
            Stream::Heldout => 0x6865_6c64_0000_0001,
            Stream::Layer => 0x6c61_7965_0000_0001,
            Stream::Block => 0x626c_6f63_0000_0001,
            Stream::Sample => 0x7361_6d70_0000_0001,
            Stream::Bootstrap => 0x626f_6f74_0000_0001,
            Stream::Bench => 0x6265_6e63_0000_0001,
        }
    }
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for `(stream, index)` under `seed`.
pub fn split(seed: u64, stream: Stream, index: u64) -> u64 {
    mix(mix(seed ^ stream.tag()) ^ index)
}

/// Deterministic generator for a derived stream.
pub fn rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(split(seed, stream, index))
}
