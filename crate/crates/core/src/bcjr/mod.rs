//! Finite-temperature trellis quantizer.
//!
//! Paths `s₁ … s_L` are weighted by the Boltzmann factor
//! `exp(−(1/T) Σ_t ½(w_t − c(s_t))²)` times the start prior. The
//! forward/backward log-messages give exact per-site marginals and the soft
//! codeword `ŵ_t = Σ_s c(s) · softmax_s(log α_t(s) + log β_t(s))`.
//!
//! Two interchangeable implementations are provided:
//! [`BcjrImpl::Reference`] runs one block at a time and gathers predecessor
//! messages explicitly at every `(t, s)`; [`BcjrImpl::Fused`] processes a
//! chunk of blocks at once with the block index innermost, computes each
//! log-sum-exp once per shared predecessor set, and never materializes
//! per-step softmax weights.
//!
//! The vector–Jacobian product uses that `ŵ` is a contraction of the
//! marginals, which are the gradient of `log Z` with respect to the local
//! fields. The VJP is therefore a Hessian–vector product of `log Z`, taken
//! as a tangent sweep through both message recursions with the upstream
//! gradient spread over emissions as the tangent direction. Per-step softmax
//! weights are recomputed from the saved log-messages.

mod fused;
mod reference;

use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trellis::{fnv1a, TrellisConfig, LOG_ZERO};
use crate::viterbi;

pub use fused::{fused_vjp, fused_vjp_chunk, soft_quantize_fused, soft_quantize_fused_chunk};
pub use reference::{backward_messages, forward_messages, soft_quantize, soft_quantize_vjp};

/// Default number of blocks processed together.
pub const DEFAULT_CHUNK: usize = 16;

/// Selects the soft-quantizer implementation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BcjrImpl {
    #[default]
    Reference,
    Fused,
}

impl BcjrImpl {
    pub fn label(self) -> &'static str {
        match self {
            BcjrImpl::Reference => "reference",
            BcjrImpl::Fused => "fused",
        }
    }
}

impl FromStr for BcjrImpl {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reference" => Ok(BcjrImpl::Reference),
            "fused" => Ok(BcjrImpl::Fused),
            other => Err(Error::ParameterOutOfRange(format!("unknown bcjr impl {other:?}"))),
        }
    }
}

/// Everything the forward pass produces, including what the VJP needs.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftQuantOutput {
    pub soft_codeword: Vec<f64>,
    /// `L × S`, rows sum to one.
    pub marginals: Array2<f64>,
    pub log_z: f64,
    pub saved_log_alpha: Array2<f64>,
    pub saved_log_beta: Array2<f64>,
    pub temperature: f64,
    fingerprint: u64,
}

impl SoftQuantOutput {
    /// `log Σ_s exp(log α_t(s) + log β_t(s))` at site `t`.
    pub fn log_z_at(&self, t: usize) -> f64 {
        let row: Vec<f64> = self
            .saved_log_alpha
            .row(t)
            .iter()
            .zip(self.saved_log_beta.row(t))
            .map(|(a, b)| a + b)
            .collect();
        logsumexp(&row)
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }
}

pub(crate) fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(LOG_ZERO, f64::max);
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

pub(crate) fn state_fingerprint(w: &[f64], temperature: f64, config: &TrellisConfig) -> u64 {
    let head = config.fingerprint().to_le_bytes();
    let t = temperature.to_bits().to_le_bytes();
    fnv1a(
        head.into_iter()
            .chain(t)
            .chain(w.iter().flat_map(|x| x.to_bits().to_le_bytes())),
    )
}

pub(crate) fn validate(w: &[f64], temperature: f64, config: &TrellisConfig) -> Result<()> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::NonPositiveTemperature(temperature));
    }
    if w.len() != config.block_len() {
        return Err(Error::LengthMismatch { expected: config.block_len(), actual: w.len() });
    }
    if let Some(i) = w.iter().position(|x| x.is_nan()) {
        return Err(Error::NanInput(i));
    }
    Ok(())
}

pub(crate) fn validate_saved(
    w: &[f64],
    temperature: f64,
    config: &TrellisConfig,
    upstream: &[f64],
    saved: &SoftQuantOutput,
) -> Result<()> {
    validate(w, temperature, config)?;
    if upstream.len() != w.len() {
        return Err(Error::LengthMismatch { expected: w.len(), actual: upstream.len() });
    }
    let shape = (config.block_len(), config.num_states());
    if saved.saved_log_alpha.dim() != shape || saved.saved_log_beta.dim() != shape {
        return Err(Error::StaleSavedState("message shape".into()));
    }
    if saved.fingerprint != state_fingerprint(w, temperature, config) {
        return Err(Error::StaleSavedState("config/temperature/input fingerprint".into()));
    }
    Ok(())
}

/// Local field `h_t(s) = −(w_t − c(s))² / (2T)`.
pub fn local_field(w: f64, c: f64, temperature: f64) -> f64 {
    let d = w - c;
    -0.5 * d * d / temperature
}

/// Soft quantization with the selected implementation.
pub fn soft_quantize_with(
    imp: BcjrImpl,
    w: &[f64],
    temperature: f64,
    config: &TrellisConfig,
) -> Result<SoftQuantOutput> {
    match imp {
        BcjrImpl::Reference => soft_quantize(w, temperature, config),
        BcjrImpl::Fused => soft_quantize_fused(w, temperature, config),
    }
}

/// VJP with the selected implementation.
pub fn vjp_with(
    imp: BcjrImpl,
    w: &[f64],
    temperature: f64,
    config: &TrellisConfig,
    upstream: &[f64],
    saved: &SoftQuantOutput,
) -> Result<Vec<f64>> {
    match imp {
        BcjrImpl::Reference => soft_quantize_vjp(w, temperature, config, upstream, saved),
        BcjrImpl::Fused => fused_vjp(w, temperature, config, upstream, saved),
    }
}

/// Soft-quantizes consecutive blocks, `chunk` blocks at a time.
pub fn soft_quantize_blocks(
    imp: BcjrImpl,
    values: &[f64],
    temperature: f64,
    config: &TrellisConfig,
    chunk: usize,
) -> Result<Vec<SoftQuantOutput>> {
    let l = config.block_len();
    if values.len() % l != 0 {
        return Err(Error::LengthMismatch { expected: values.len().div_ceil(l) * l, actual: values.len() });
    }
    let chunk = chunk.max(1);
    let mut out = Vec::with_capacity(values.len() / l);
    for blocks in values.chunks(chunk * l) {
        match imp {
            BcjrImpl::Reference => {
                for w in blocks.chunks(l) {
                    out.push(soft_quantize(w, temperature, config)?);
                }
            }
            BcjrImpl::Fused => out.extend(soft_quantize_fused_chunk(blocks, temperature, config)?),
        }
    }
    Ok(out)
}

/// VJP over consecutive blocks produced by [`soft_quantize_blocks`].
pub fn vjp_blocks(
    imp: BcjrImpl,
    values: &[f64],
    temperature: f64,
    config: &TrellisConfig,
    upstream: &[f64],
    saved: &[SoftQuantOutput],
    chunk: usize,
) -> Result<Vec<f64>> {
    let l = config.block_len();
    if values.len() != upstream.len() || values.len() != saved.len() * l {
        return Err(Error::LengthMismatch { expected: saved.len() * l, actual: values.len() });
    }
    let chunk = chunk.max(1);
    let mut out = Vec::with_capacity(values.len());
    for ((blocks, up), sv) in values
        .chunks(chunk * l)
        .zip(upstream.chunks(chunk * l))
        .zip(saved.chunks(chunk))
    {
        match imp {
            BcjrImpl::Reference => {
                for ((w, g), s) in blocks.chunks(l).zip(up.chunks(l)).zip(sv) {
                    out.extend(soft_quantize_vjp(w, temperature, config, g, s)?);
                }
            }
            BcjrImpl::Fused => out.extend(fused_vjp_chunk(blocks, temperature, config, up, sv)?),
        }
    }
    Ok(out)
}

/// Hard forward value with the soft quantizer's backward pass.
#[derive(Debug, Clone)]
pub struct SteHandle {
    w: Vec<f64>,
    temperature: f64,
    saved: SoftQuantOutput,
}

impl SteHandle {
    pub fn saved(&self) -> &SoftQuantOutput {
        &self.saved
    }

    /// Same VJP as [`soft_quantize_vjp`] at the handle's temperature.
    pub fn vjp(&self, config: &TrellisConfig, upstream: &[f64]) -> Result<Vec<f64>> {
        soft_quantize_vjp(&self.w, self.temperature, config, upstream, &self.saved)
    }
}

/// Returns the Viterbi codeword together with a soft-quantizer VJP handle.
pub fn ste_quantize(
    w: &[f64],
    temperature: f64,
    config: &TrellisConfig,
) -> Result<(Vec<f64>, SteHandle)> {
    let saved = soft_quantize(w, temperature, config)?;
    let hard = viterbi::viterbi_encode(w, config)?;
    Ok((hard.codeword, SteHandle { w: w.to_vec(), temperature, saved }))
}
