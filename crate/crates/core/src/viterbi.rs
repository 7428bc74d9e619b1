//! Hard minimum-distortion trellis encoding.
//!
//! # Bitstream layout
//!
//! A block's bitstream is the sequence of step symbols `b₁ … b_L`, each
//! `bits_per_step` wide, written most-significant bit first, steps in
//! temporal order. Bits are packed into bytes MSB-first; the final byte is
//! zero-padded. Under [`InitialState::Free`] the stream is prefixed by the
//! start state `s₀` in `log2 S` bits so that decoding is self-contained.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::trellis::{InitialState, TrellisConfig};

/// Growable MSB-first bit buffer.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BitStream {
    bytes: Vec<u8>,
    len: usize,
}

impl BitStream {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_bytes(bytes: Vec<u8>, len: usize) -> Result<Self> {
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::Format(format!(
                "{} bytes cannot hold exactly {len} bits",
                bytes.len()
            )));
        }
        Ok(BitStream { bytes, len })
    }

    /// Appends the low `width` bits of `value`, most significant first.
    pub fn push(&mut self, value: usize, width: u32) {
        for i in (0..width).rev() {
            let bit = (value >> i) & 1;
            if self.len % 8 == 0 {
                self.bytes.push(0);
            }
            if bit == 1 {
                let last = self.bytes.len() - 1;
                self.bytes[last] |= 0x80 >> (self.len % 8);
            }
            self.len += 1;
        }
    }

    pub fn append(&mut self, other: &BitStream) {
        for pos in 0..other.len {
            self.push(other.read(pos, 1), 1);
        }
    }

    /// Reads `width` bits starting at bit `pos`.
    pub fn read(&self, pos: usize, width: u32) -> usize {
        (0..width as usize).fold(0, |acc, i| {
            let p = pos + i;
            let bit = (self.bytes[p / 8] >> (7 - p % 8)) & 1;
            (acc << 1) | bit as usize
        })
    }

    pub fn slice(&self, pos: usize, len: usize) -> BitStream {
        let mut out = BitStream::new();
        for p in pos..pos + len {
            out.push(self.read(p, 1), 1);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }
}

/// Result of hard encoding one block.
#[derive(Debug, Clone, PartialEq)]
pub struct HardPath {
    /// The non-emitting state `s₀` preceding the block.
    pub start_state: usize,
    /// `s₁ … s_L`.
    pub states: Vec<usize>,
    pub bits: BitStream,
    pub codeword: Vec<f64>,
    /// `½ Σ_t (w_t − codeword_t)²`.
    pub distortion: f64,
}

/// `½ Σ (w − ŵ)²`, accumulated in temporal order.
pub fn path_distortion(w: &[f64], codeword: &[f64]) -> f64 {
    w.iter()
        .zip(codeword)
        .fold(0.0, |acc, (&x, &c)| acc + 0.5 * (x - c) * (x - c))
}

/// Number of bits in one encoded block.
pub fn block_bits(config: &TrellisConfig) -> usize {
    let prefix = match config.initial_state() {
        InitialState::Free => (config.k() + config.v()) as usize,
        InitialState::Fixed(_) => 0,
    };
    prefix + config.block_len() * config.bits_per_step() as usize
}

fn check_len(w: &[f64], config: &TrellisConfig) -> Result<()> {
    if w.len() != config.block_len() {
        return Err(Error::LengthMismatch { expected: config.block_len(), actual: w.len() });
    }
    if let Some(i) = w.iter().position(|x| x.is_nan()) {
        return Err(Error::NanInput(i));
    }
    Ok(())
}

/// Minimum-distortion legal path for `w`.
///
/// Ties between equal-cost prefixes go to the lower-numbered predecessor
/// state; ties between final states go to the lower-numbered state.
pub fn viterbi_encode(w: &[f64], config: &TrellisConfig) -> Result<HardPath> {
    check_len(w, config)?;
    let n = config.num_states();
    let len = w.len();
    let c = config.emission();

    let mut cost: Vec<f64> = (0..n)
        .map(|s| {
            if config.start_edge(s).is_some() {
                0.5 * (w[0] - c[s]) * (w[0] - c[s])
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let mut next = vec![0.0; n];
    // back[t*n + s] = predecessor of s at step t (t >= 1).
    let mut back = vec![0u32; len * n];

    for t in 1..len {
        for s in 0..n {
            let mut best = f64::INFINITY;
            let mut arg = usize::MAX;
            for e in config.preds_of(s) {
                if cost[e.state] < best {
                    best = cost[e.state];
                    arg = e.state;
                }
            }
            back[t * n + s] = arg as u32;
            next[s] = best + 0.5 * (w[t] - c[s]) * (w[t] - c[s]);
        }
        std::mem::swap(&mut cost, &mut next);
    }

    let mut last = 0;
    for s in 1..n {
        if cost[s] < cost[last] {
            last = s;
        }
    }
    let mut states = vec![0usize; len];
    states[len - 1] = last;
    for t in (1..len).rev() {
        states[t - 1] = back[t * n + states[t]] as usize;
    }

    let start = config.start_edge(states[0]).expect("first state is reachable");
    let mut bits = BitStream::new();
    if config.initial_state() == InitialState::Free {
        bits.push(start.state, config.k() + config.v());
    }
    bits.push(start.bits, config.bits_per_step());
    for t in 1..len {
        let b = config
            .succs_of(states[t - 1])
            .iter()
            .position(|&x| x == states[t])
            .expect("backtracked path is legal");
        bits.push(b, config.bits_per_step());
    }
    let codeword: Vec<f64> = states.iter().map(|&s| c[s]).collect();
    let distortion = path_distortion(w, &codeword);
    Ok(HardPath { start_state: start.state, states, bits, codeword, distortion })
}

/// Encodes consecutive blocks of `config.block_len()` values in parallel.
pub fn encode_blocks(values: &[f64], config: &TrellisConfig) -> Result<Vec<HardPath>> {
    let l = config.block_len();
    if values.len() % l != 0 {
        return Err(Error::LengthMismatch {
            expected: values.len().div_ceil(l) * l,
            actual: values.len(),
        });
    }
    values.par_chunks(l).map(|blk| viterbi_encode(blk, config)).collect()
}

/// Replays a block bitstream through the transition table.
pub fn decode_states(bits: &BitStream, config: &TrellisConfig) -> Result<Vec<usize>> {
    let expected = block_bits(config);
    if bits.len() != expected {
        return Err(Error::BitstreamLength { expected, actual: bits.len() });
    }
    let width = config.bits_per_step();
    let (mut state, mut pos) = match config.initial_state() {
        InitialState::Free => {
            let w0 = config.k() + config.v();
            (bits.read(0, w0), w0 as usize)
        }
        InitialState::Fixed(s0) => (s0, 0),
    };
    let mut states = Vec::with_capacity(config.block_len());
    for _ in 0..config.block_len() {
        state = config.succ(state, bits.read(pos, width));
        pos += width as usize;
        states.push(state);
    }
    Ok(states)
}

/// Emitted codeword of a block bitstream.
pub fn decode(bits: &BitStream, config: &TrellisConfig) -> Result<Vec<f64>> {
    let c = config.emission();
    Ok(decode_states(bits, config)?.into_iter().map(|s| c[s]).collect())
}

/// Smallest gap, over sites, between the best path cost and the best cost
/// of any path through a different state at that site.
///
/// At temperature `T` every non-Viterbi state is suppressed by at least
/// `exp(−margin / T)`; a zero margin means a tie.
pub fn decision_margin(w: &[f64], config: &TrellisConfig) -> Result<f64> {
    check_len(w, config)?;
    let n = config.num_states();
    let len = w.len();
    let c = config.emission();
    let cost = |t: usize, s: usize| 0.5 * (w[t] - c[s]) * (w[t] - c[s]);
    let mut fwd = vec![f64::INFINITY; len * n];
    for s in 0..n {
        if config.start_edge(s).is_some() {
            fwd[s] = cost(0, s);
        }
    }
    for t in 1..len {
        for s in 0..n {
            let best = config.preds_of(s).iter().map(|e| fwd[(t - 1) * n + e.state]).fold(f64::INFINITY, f64::min);
            fwd[t * n + s] = best + cost(t, s);
        }
    }
    let mut bwd = vec![0.0; len * n];
    for t in (0..len - 1).rev() {
        for s in 0..n {
            bwd[t * n + s] = config
                .succs_of(s)
                .iter()
                .map(|&x| bwd[(t + 1) * n + x] + cost(t + 1, x))
                .fold(f64::INFINITY, f64::min);
        }
    }
    let mut margin = f64::INFINITY;
    for t in 0..len {
        let (mut first, mut second) = (f64::INFINITY, f64::INFINITY);
        for s in 0..n {
            let v = fwd[t * n + s] + bwd[t * n + s];
            if v < first {
                second = first;
                first = v;
            } else if v < second {
                second = v;
            }
        }
        margin = margin.min(second - first);
    }
    Ok(margin)
}
