//! Differentiable trellis-coded quantization.
//!
//! * [`trellis`] builds the code (states, transitions, Gaussian emission) and
//!   the random-sign Hadamard rotation.
//! * [`viterbi`] is the hard minimum-distortion encoder.
//! * [`bcjr`] is the finite-temperature soft quantizer: log-domain
//!   forward–backward, marginals, soft codeword and its exact vector–Jacobian
//!   product, in a reference and a fused implementation.
//! * [`schedule`], [`qat`] drive annealed quantization-aware training of toy models.
//! * [`analysis`] holds the drift budget, oracle-gap, Monte Carlo bracket and
//!   bootstrap tools; [`bench`] times the two soft-quantizer implementations.

pub mod analysis;
pub mod bcjr;
pub mod bench;
pub mod error;
pub mod io;
pub mod qat;
pub mod quant;
pub mod schedule;
pub mod seeds;
pub mod trellis;
pub mod viterbi;

pub use error::{Error, Result};
pub use trellis::{TrellisConfig, TrellisParams, Topology, InitialState};
