//! Whole-matrix quantization: incoherence rotation, per-group scales,
//! block-wise Viterbi encoding, and the snapshot file format.
//!
//! # Snapshot layout
//!
//! All integers little-endian.
//!
//! ```text
//! offset  size  field
//! 0       8     magic b"STQSNAP1"
//! 8       4     L (u32)
//! 12      4     k (u32)
//! 16      4     V (u32)
//! 20      1     topology: 0 shift register, 1 fully connected
//! 21      1     initial state: 0 fixed, 1 free
//! 22      4     fixed initial state (u32, 0 when free)
//! 26      8     permutation seed (u64)
//! 34      4     scale bits (u32)
//! 38      4     group size (u32)
//! 42      8     incoherence seed (u64)
//! 50      8     rows (u64)
//! 58      8     cols (u64)
//! 66      8     padded rows (u64)
//! 74      8     padded cols (u64)
//! 82      8     log-grid lower scale (f64)
//! 90      8     log-grid upper scale (f64)
//! 98      …     scale codes, `scale bits` each, MSB-first, byte-padded
//! …       …     block bitstreams concatenated in row-major block order, byte-padded
//! ```
//!
//! The rotated matrix is flattened row-major; element `i` belongs to scale
//! group `i / group_size` and trellis block `i / L`.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::trellis::{
    fnv1a, incoherence_transform, inverse_incoherence_transform, InitialState, Padding, Topology,
    TrellisConfig, TrellisParams,
};
use crate::viterbi::{block_bits, decode, encode_blocks, BitStream};

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"STQSNAP1";
/// Bytes before the scale codes.
pub const SNAPSHOT_HEADER_BYTES: usize = 98;

/// Per-group scales quantized on a log-uniform grid.
///
/// With `bits == 0` a single scale (the largest group scale) is shared by
/// every group and no codes are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupScales {
    group_size: usize,
    bits: u32,
    lo: f64,
    hi: f64,
    codes: Vec<u32>,
    n_groups: usize,
}

impl GroupScales {
    /// Fits scales so that `max |x| / scale` in each group is close to `cmax`.
    pub fn fit(values: &[f64], group_size: usize, bits: u32, cmax: f64) -> Result<Self> {
        if group_size == 0 || values.len() % group_size != 0 {
            return Err(Error::Dimension(format!(
                "{} elements do not split into groups of {group_size}",
                values.len()
            )));
        }
        if bits > 16 {
            return Err(Error::ParameterOutOfRange(format!("scale_bits {bits} exceeds 16")));
        }
        let raw: Vec<f64> = values
            .chunks(group_size)
            .map(|g| g.iter().fold(0.0f64, |m, x| m.max(x.abs())) / cmax)
            .collect();
        let hi = raw.iter().copied().fold(0.0, f64::max);
        let lo = raw.iter().copied().filter(|&x| x > 0.0).fold(f64::INFINITY, f64::min);
        let (lo, hi) = if hi > 0.0 { (lo, hi) } else { (1.0, 1.0) };
        let n_groups = raw.len();
        if bits == 0 {
            return Ok(GroupScales { group_size, bits, lo: hi, hi, codes: Vec::new(), n_groups });
        }
        let mut s = GroupScales { group_size, bits, lo, hi, codes: Vec::new(), n_groups };
        let top = s.levels() - 1;
        let step = s.log_step();
        s.codes = raw
            .iter()
            .map(|&r| {
                if step == 0.0 || r <= 0.0 {
                    0
                } else {
                    (((r.ln() - lo.ln()) / step).round().max(0.0) as u32).min(top)
                }
            })
            .collect();
        Ok(s)
    }

    fn levels(&self) -> u32 {
        1 << self.bits
    }

    fn log_step(&self) -> f64 {
        if self.levels() <= 1 || self.hi == self.lo {
            0.0
        } else {
            (self.hi.ln() - self.lo.ln()) / (self.levels() - 1) as f64
        }
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn codes(&self) -> &[u32] {
        &self.codes
    }

    pub fn scale_of_group(&self, g: usize) -> f64 {
        if self.bits == 0 {
            return self.hi;
        }
        match self.codes[g] {
            0 => self.lo,
            c if c == self.levels() - 1 => self.hi,
            c => (self.lo.ln() + c as f64 * self.log_step()).exp(),
        }
    }

    /// One scale per element.
    pub fn expand(&self) -> Vec<f64> {
        (0..self.n_groups)
            .flat_map(|g| std::iter::repeat_n(self.scale_of_group(g), self.group_size))
            .collect()
    }
}

/// A hard-quantized matrix: everything needed to reconstruct it.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    params: TrellisParams,
    incoherence_seed: u64,
    shape: (usize, usize),
    padded: (usize, usize),
    scales: GroupScales,
    bits: BitStream,
}

/// Summary of one quantization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantStats {
    pub n_weights: usize,
    /// Sum of block distortions in the scaled, rotated domain.
    pub distortion: f64,
    /// Mean squared reconstruction error in the original domain.
    pub mse: f64,
    /// Payload bits (codes + scales) per weight.
    pub bits_per_weight: f64,
}

/// Rotated matrix for `w` under the crate's padding policy.
pub fn rotate(w: &Array2<f64>, seed: u64) -> Result<Array2<f64>> {
    if w.is_empty() {
        return Err(Error::Dimension("empty matrix".into()));
    }
    incoherence_transform(w, seed, Padding::ZeroPad)
}

fn check_layout(n: usize, config: &TrellisConfig) -> Result<()> {
    let l = config.block_len();
    let g = config.params().group_size;
    if n % l != 0 || g == 0 || n % g != 0 {
        return Err(Error::Dimension(format!(
            "{n} rotated elements are not a multiple of block length {l} and group size {g}"
        )));
    }
    Ok(())
}

/// Fits the scales of a rotated matrix.
pub fn fit_scales(rotated: &Array2<f64>, config: &TrellisConfig) -> Result<GroupScales> {
    let flat: Vec<f64> = rotated.iter().copied().collect();
    check_layout(flat.len(), config)?;
    let p = config.params();
    GroupScales::fit(&flat, p.group_size, p.scale_bits, config.max_abs_emission())
}

impl QuantizedLayer {
    /// Viterbi-encodes `rotated / scales` block by block.
    pub fn encode(
        rotated: &Array2<f64>,
        shape: (usize, usize),
        incoherence_seed: u64,
        scales: GroupScales,
        config: &TrellisConfig,
    ) -> Result<(Self, f64)> {
        let flat: Vec<f64> = rotated.iter().copied().collect();
        check_layout(flat.len(), config)?;
        if scales.n_groups() * scales.group_size() != flat.len() {
            return Err(Error::Dimension("scale layout does not cover the matrix".into()));
        }
        let scaled: Vec<f64> = flat.iter().zip(scales.expand()).map(|(x, s)| x / s).collect();
        let paths = encode_blocks(&scaled, config)?;
        let mut bits = BitStream::new();
        let mut distortion = 0.0;
        for p in &paths {
            bits.append(&p.bits);
            distortion += p.distortion;
        }
        let layer = QuantizedLayer {
            params: *config.params(),
            incoherence_seed,
            shape,
            padded: rotated.dim(),
            scales,
            bits,
        };
        Ok((layer, distortion))
    }

    pub fn params(&self) -> &TrellisParams {
        &self.params
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    pub fn padded_shape(&self) -> (usize, usize) {
        self.padded
    }

    pub fn incoherence_seed(&self) -> u64 {
        self.incoherence_seed
    }

    pub fn scales(&self) -> &GroupScales {
        &self.scales
    }

    pub fn bits(&self) -> &BitStream {
        &self.bits
    }

    fn check_config(&self, config: &TrellisConfig) -> Result<()> {
        if *config.params() != self.params {
            return Err(Error::StaleSavedState("snapshot was encoded with a different trellis".into()));
        }
        Ok(())
    }

    /// Decoded codewords (before scaling), flattened row-major.
    pub fn codewords(&self, config: &TrellisConfig) -> Result<Vec<f64>> {
        self.check_config(config)?;
        let per_block = block_bits(config);
        let n_blocks = self.padded.0 * self.padded.1 / config.block_len();
        let mut out = Vec::with_capacity(n_blocks * config.block_len());
        for b in 0..n_blocks {
            out.extend(decode(&self.bits.slice(b * per_block, per_block), config)?);
        }
        Ok(out)
    }

    /// `scale ⊙ codeword` in the rotated domain.
    pub fn dequantize_rotated(&self, config: &TrellisConfig) -> Result<Array2<f64>> {
        let values: Vec<f64> =
            self.codewords(config)?.into_iter().zip(self.scales.expand()).map(|(c, s)| c * s).collect();
        Ok(Array2::from_shape_vec(self.padded, values).expect("layout checked"))
    }

    /// Reconstruction in the original domain.
    pub fn dequantize(&self, config: &TrellisConfig) -> Result<Array2<f64>> {
        inverse_incoherence_transform(&self.dequantize_rotated(config)?, self.incoherence_seed, self.shape)
    }

    /// Stable content hash of the serialized snapshot.
    pub fn fingerprint(&self) -> u64 {
        fnv1a(self.to_bytes())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.params;
        let mut out = Vec::with_capacity(SNAPSHOT_HEADER_BYTES + self.bits.as_bytes().len() + self.scales.n_groups());
        out.extend_from_slice(SNAPSHOT_MAGIC);
        out.extend_from_slice(&(p.block_len as u32).to_le_bytes());
        out.extend_from_slice(&p.k.to_le_bytes());
        out.extend_from_slice(&p.v.to_le_bytes());
        out.push(match p.topology {
            Topology::ShiftRegister => 0,
            Topology::FullyConnected => 1,
        });
        let (kind, s0) = match p.initial_state {
            InitialState::Fixed(s0) => (0u8, s0 as u32),
            InitialState::Free => (1u8, 0),
        };
        out.push(kind);
        out.extend_from_slice(&s0.to_le_bytes());
        out.extend_from_slice(&p.permutation_seed.to_le_bytes());
        out.extend_from_slice(&p.scale_bits.to_le_bytes());
        out.extend_from_slice(&(p.group_size as u32).to_le_bytes());
        out.extend_from_slice(&self.incoherence_seed.to_le_bytes());
        for d in [self.shape.0, self.shape.1, self.padded.0, self.padded.1] {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&self.scales.lo.to_le_bytes());
        out.extend_from_slice(&self.scales.hi.to_le_bytes());
        debug_assert_eq!(out.len(), SNAPSHOT_HEADER_BYTES);
        let mut codes = BitStream::new();
        for &c in &self.scales.codes {
            codes.push(c as usize, self.scales.bits);
        }
        out.extend_from_slice(codes.as_bytes());
        out.extend_from_slice(self.bits.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("snapshot: {m}"));
        if bytes.len() < SNAPSHOT_HEADER_BYTES || &bytes[..8] != SNAPSHOT_MAGIC {
            return Err(bad("bad magic or truncated header"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let topology = match bytes[20] {
            0 => Topology::ShiftRegister,
            1 => Topology::FullyConnected,
            _ => return Err(bad("unknown topology")),
        };
        let initial_state = match bytes[21] {
            0 => InitialState::Fixed(u32_at(22) as usize),
            1 => InitialState::Free,
            _ => return Err(bad("unknown initial-state policy")),
        };
        let params = TrellisParams {
            block_len: u32_at(8) as usize,
            k: u32_at(12),
            v: u32_at(16),
            permutation_seed: u64_at(26),
            topology,
            scale_bits: u32_at(34),
            group_size: u32_at(38) as usize,
            initial_state,
        };
        let config = TrellisConfig::from_params(params)?;
        let shape = (u64_at(50) as usize, u64_at(58) as usize);
        let padded = (u64_at(66) as usize, u64_at(74) as usize);
        let n = padded.0.checked_mul(padded.1).ok_or_else(|| bad("dimension overflow"))?;
        if n == 0 || shape.0 > padded.0 || shape.1 > padded.1 {
            return Err(bad("inconsistent dimensions"));
        }
        check_layout(n, &config)?;
        let n_groups = n / params.group_size;
        let code_bits = n_groups * params.scale_bits as usize;
        let code_bytes = code_bits.div_ceil(8);
        let payload_bits = n / params.block_len * block_bits(&config);
        let expected = SNAPSHOT_HEADER_BYTES + code_bytes + payload_bits.div_ceil(8);
        if bytes.len() != expected {
            return Err(bad(&format!("expected {expected} bytes, found {}", bytes.len())));
        }
        let body = &bytes[SNAPSHOT_HEADER_BYTES..];
        let code_stream = BitStream::from_bytes(body[..code_bytes].to_vec(), code_bits)?;
        let codes = (0..n_groups)
            .map(|g| code_stream.read(g * params.scale_bits as usize, params.scale_bits) as u32)
            .collect();
        let scales = GroupScales {
            group_size: params.group_size,
            bits: params.scale_bits,
            lo: f64_at(82),
            hi: f64_at(90),
            codes,
            n_groups,
        };
        if !(scales.lo > 0.0 && scales.hi >= scales.lo && scales.hi.is_finite()) {
            return Err(bad("invalid scale range"));
        }
        let bits = BitStream::from_bytes(body[code_bytes..].to_vec(), payload_bits)?;
        Ok(QuantizedLayer { params, incoherence_seed: u64_at(42), shape, padded, scales, bits })
    }
}

/// Rotates, scales and Viterbi-encodes a matrix.
pub fn quantize_matrix(
    w: &Array2<f64>,
    config: &TrellisConfig,
    incoherence_seed: u64,
) -> Result<(QuantizedLayer, QuantStats)> {
    let rotated = rotate(w, incoherence_seed)?;
    let scales = fit_scales(&rotated, config)?;
    let (layer, distortion) = QuantizedLayer::encode(&rotated, w.dim(), incoherence_seed, scales, config)?;
    let recon = layer.dequantize(config)?;
    let mse = (&recon - w).mapv(|x| x * x).mean().unwrap_or(0.0);
    let n = rotated.len();
    let payload = layer.bits.len() + layer.scales.n_groups() * layer.scales.bits() as usize;
    let stats = QuantStats { n_weights: w.len(), distortion, mse, bits_per_weight: payload as f64 / n as f64 };
    Ok((layer, stats))
}
