//! The trellis code: state set, transition tables, computed Gaussian emission
//! and the incoherence rotation applied before quantization.
//!
//! States are `0..S` with `S = 2^(k+V)`. Under the shift-register topology
//! `f(s, b) = (s·2^k + b) mod S`; every state then has exactly `2^k`
//! successors and `2^k` predecessors. The emission of state `s` is the
//! midpoint normal quantile `Φ⁻¹((q + ½)/S)` with `q = perm[s]` drawn from a
//! seeded shuffle.

mod incoherence;
mod normal;

pub use incoherence::{
    fwht, incoherence_transform, inverse_incoherence_transform, Padding, SignVector,
};
pub use normal::inverse_normal_cdf;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::{self, Stream};

/// Log-weight used in place of `-inf` for impossible states.
pub const LOG_ZERO: f64 = -1e30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Topology {
    #[default]
    ShiftRegister,
    /// Every state reaches every state; the step symbol is the target state.
    FullyConnected,
}

/// Distribution of the non-emitting state `s₀` that precedes the block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InitialState {
    /// Uniform over all states.
    Free,
    /// A known starting state, so the bitstream alone determines the path.
    Fixed(usize),
}

impl Default for InitialState {
    fn default() -> Self {
        InitialState::Fixed(0)
    }
}

fn default_scale_bits() -> u32 {
    4
}

fn default_group_size() -> usize {
    16
}

/// Serializable description of a trellis code plus its per-group scale layout.
///
/// Emission values and transition tables are never serialized; they are
/// recomputed from these fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrellisParams {
    #[serde(rename = "L")]
    pub block_len: usize,
    pub k: u32,
    #[serde(rename = "V")]
    pub v: u32,
    pub permutation_seed: u64,
    #[serde(default)]
    pub topology: Topology,
    #[serde(default = "default_scale_bits")]
    pub scale_bits: u32,
    #[serde(default = "default_group_size")]
    pub group_size: usize,
    #[serde(default)]
    pub initial_state: InitialState,
}

impl TrellisParams {
    pub fn new(block_len: usize, k: u32, v: u32, permutation_seed: u64, topology: Topology) -> Self {
        TrellisParams {
            block_len,
            k,
            v,
            permutation_seed,
            topology,
            scale_bits: default_scale_bits(),
            group_size: default_group_size(),
            initial_state: InitialState::default(),
        }
    }

    pub fn with_initial_state(mut self, initial_state: InitialState) -> Self {
        self.initial_state = initial_state;
        self
    }

    pub fn with_scales(mut self, scale_bits: u32, group_size: usize) -> Self {
        self.scale_bits = scale_bits;
        self.group_size = group_size;
        self
    }
}

/// One incoming transition `(state, bits)` with `succ(state, bits) == target`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Edge {
    pub state: usize,
    pub bits: usize,
}

/// A fully built, immutable trellis code.
#[derive(Debug, Clone, PartialEq)]
pub struct TrellisConfig {
    params: TrellisParams,
    num_states: usize,
    bits_per_step: u32,
    branching: usize,
    n_pred: usize,
    quantiles: Vec<f64>,
    permutation: Vec<usize>,
    emission: Vec<f64>,
    succs: Vec<usize>,
    preds: Vec<Edge>,
    log_start: Vec<f64>,
    start_edge: Vec<Option<Edge>>,
}

impl TrellisConfig {
    /// Builds the code with the default initial-state policy and scale layout.
    pub fn build(
        block_len: usize,
        k: u32,
        v: u32,
        permutation_seed: u64,
        topology: Topology,
    ) -> Result<Self> {
        Self::from_params(TrellisParams::new(block_len, k, v, permutation_seed, topology))
    }

    pub fn from_params(params: TrellisParams) -> Result<Self> {
        let TrellisParams { block_len, k, v, .. } = params;
        if block_len == 0 {
            return Err(Error::ParameterOutOfRange("L must be at least 1".into()));
        }
        if k == 0 {
            return Err(Error::ParameterOutOfRange("k must be at least 1".into()));
        }
        if k + v > 16 {
            return Err(Error::ParameterOutOfRange(format!("k+V = {} exceeds 16", k + v)));
        }
        if params.group_size == 0 {
            return Err(Error::ParameterOutOfRange("group_size must be at least 1".into()));
        }
        if params.scale_bits > 16 {
            return Err(Error::ParameterOutOfRange("scale_bits must be at most 16".into()));
        }
        let num_states = 1usize << (k + v);
        if let InitialState::Fixed(s0) = params.initial_state {
            if s0 >= num_states {
                return Err(Error::ParameterOutOfRange(format!(
                    "initial state {s0} outside 0..{num_states}"
                )));
            }
        }

        let quantiles: Vec<f64> = (0..num_states)
            .map(|q| inverse_normal_cdf((q as f64 + 0.5) / num_states as f64))
            .collect();
        let mut permutation: Vec<usize> = (0..num_states).collect();
        let mut rng = seeds::rng(params.permutation_seed, Stream::Permutation, 0);
        permutation.shuffle(&mut rng);
        let emission = permutation.iter().map(|&q| quantiles[q]).collect();

        let (bits_per_step, branching) = match params.topology {
            Topology::ShiftRegister => (k, 1usize << k),
            Topology::FullyConnected => (k + v, num_states),
        };
        let mut succs = Vec::with_capacity(num_states * branching);
        for s in 0..num_states {
            for b in 0..branching {
                succs.push(match params.topology {
                    Topology::ShiftRegister => ((s << k) | b) & (num_states - 1),
                    Topology::FullyConnected => b,
                });
            }
        }

        let mut incoming: Vec<Vec<Edge>> = vec![Vec::new(); num_states];
        for s in 0..num_states {
            for b in 0..branching {
                incoming[succs[s * branching + b]].push(Edge { state: s, bits: b });
            }
        }
        let n_pred = incoming[0].len();
        if incoming.iter().any(|p| p.len() != n_pred) {
            return Err(Error::ParameterOutOfRange("non-uniform predecessor count".into()));
        }
        let preds = incoming.into_iter().flatten().collect::<Vec<_>>();

        let mut mass = vec![0.0; num_states];
        let mut start_edge = vec![None; num_states];
        let starts: Vec<(usize, f64)> = match params.initial_state {
            InitialState::Free => (0..num_states).map(|s| (s, 1.0 / num_states as f64)).collect(),
            InitialState::Fixed(s0) => vec![(s0, 1.0)],
        };
        for &(s0, p) in &starts {
            for b in 0..branching {
                let s1 = succs[s0 * branching + b];
                mass[s1] += p;
                // Lowest-numbered start state wins ties.
                if start_edge[s1].is_none() {
                    start_edge[s1] = Some(Edge { state: s0, bits: b });
                }
            }
        }
        let log_start = mass
            .iter()
            .map(|&m: &f64| if m > 0.0 { m.ln() } else { LOG_ZERO })
            .collect();

        Ok(TrellisConfig {
            params,
            num_states,
            bits_per_step,
            branching,
            n_pred,
            quantiles,
            permutation,
            emission,
            succs,
            preds,
            log_start,
            start_edge,
        })
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let params: TrellisParams =
            serde_json::from_str(json).map_err(|e| Error::Format(e.to_string()))?;
        Self::from_params(params)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.params).expect("params serialize")
    }

    pub fn params(&self) -> &TrellisParams {
        &self.params
    }

    pub fn block_len(&self) -> usize {
        self.params.block_len
    }

    pub fn k(&self) -> u32 {
        self.params.k
    }

    pub fn v(&self) -> u32 {
        self.params.v
    }

    pub fn topology(&self) -> Topology {
        self.params.topology
    }

    pub fn initial_state(&self) -> InitialState {
        self.params.initial_state
    }

    pub fn permutation_seed(&self) -> u64 {
        self.params.permutation_seed
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    /// Bits consumed per trellis step: `k` for the shift register, `k+V` when fully connected.
    pub fn bits_per_step(&self) -> u32 {
        self.bits_per_step
    }

    /// Number of successors of every state.
    pub fn branching(&self) -> usize {
        self.branching
    }

    /// Number of predecessors of every state.
    pub fn n_pred(&self) -> usize {
        self.n_pred
    }

    /// Pre-permutation emission values, strictly increasing.
    pub fn quantiles(&self) -> &[f64] {
        &self.quantiles
    }

    /// `permutation()[s]` is the quantile index assigned to state `s`.
    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    pub fn emission(&self) -> &[f64] {
        &self.emission
    }

    pub fn max_abs_emission(&self) -> f64 {
        self.quantiles[self.num_states - 1].abs().max(self.quantiles[0].abs())
    }

    pub fn succ(&self, state: usize, bits: usize) -> usize {
        self.succs[state * self.branching + bits]
    }

    pub fn succs_of(&self, state: usize) -> &[usize] {
        &self.succs[state * self.branching..(state + 1) * self.branching]
    }

    /// Incoming edges of `state`, ordered by source state.
    pub fn preds_of(&self, state: usize) -> &[Edge] {
        &self.preds[state * self.n_pred..(state + 1) * self.n_pred]
    }

    /// Log prior mass of the first emitting state `s₁` (`LOG_ZERO` when unreachable).
    pub fn log_start(&self) -> &[f64] {
        &self.log_start
    }

    /// The start transition `(s₀, b₁)` chosen for a path whose first state is `s1`.
    pub fn start_edge(&self, s1: usize) -> Option<Edge> {
        self.start_edge[s1]
    }

    /// Stable 64-bit identity of the code (FNV-1a over the defining parameters).
    pub fn fingerprint(&self) -> u64 {
        let p = &self.params;
        let init = match p.initial_state {
            InitialState::Free => u64::MAX,
            InitialState::Fixed(s) => s as u64,
        };
        let topo = match p.topology {
            Topology::ShiftRegister => 0,
            Topology::FullyConnected => 1,
        };
        let words = [
            p.block_len as u64,
            p.k as u64,
            p.v as u64,
            p.permutation_seed,
            topo,
            init,
            p.scale_bits as u64,
            p.group_size as u64,
        ];
        fnv1a(words.iter().flat_map(|w| w.to_le_bytes()))
    }
}

pub(crate) fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    bytes.into_iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Bits per weight including per-group scale overhead.
///
/// # Panics
/// Panics if `group_size` is zero.
pub fn rate_bpw(config: &TrellisConfig, scale_bits: u32, group_size: usize) -> f64 {
    assert!(group_size >= 1, "group_size must be at least 1");
    config.bits_per_step() as f64 + scale_bits as f64 / group_size as f64
}
