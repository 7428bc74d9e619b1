//! Independent oracles shared by the integration tests: exhaustive path
//! enumeration straight from the path-weight definition, and small
//! instance generators.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use softtrellis::{InitialState, Topology, TrellisConfig, TrellisParams};

/// One legal path: prior weight of its start state and the emitting states.
pub struct Path {
    pub prior: f64,
    pub states: Vec<usize>,
}

/// Every legal `(s₀, b₁, …, b_L)` sequence, expanded to emitting states.
pub fn enumerate_paths(config: &TrellisConfig) -> Vec<Path> {
    let n = config.num_states();
    let starts: Vec<(usize, f64)> = match config.initial_state() {
        InitialState::Free => (0..n).map(|s| (s, 1.0 / n as f64)).collect(),
        InitialState::Fixed(s0) => vec![(s0, 1.0)],
    };
    let branching = config.branching();
    let len = config.block_len();
    let mut out = Vec::new();
    for (s0, prior) in starts {
        let total = branching.pow(len as u32);
        for code in 0..total {
            let mut rest = code;
            let mut s = s0;
            let mut states = Vec::with_capacity(len);
            for _ in 0..len {
                s = config.succ(s, rest % branching);
                rest /= branching;
                states.push(s);
            }
            out.push(Path { prior, states });
        }
    }
    out
}

/// ½Σ(w − c)² folded in temporal order.
pub fn energy(w: &[f64], codeword: impl Iterator<Item = f64>) -> f64 {
    w.iter().zip(codeword).fold(0.0, |acc, (&x, c)| acc + 0.5 * (x - c) * (x - c))
}

pub struct Brute {
    pub log_z: f64,
    /// `[t][s]`
    pub marginals: Vec<Vec<f64>>,
    pub soft: Vec<f64>,
    /// `jacobian[t][τ] = ∂ŵ_t/∂w_τ = Cov(c(s_t), c(s_τ)) / T`
    pub jacobian: Vec<Vec<f64>>,
}

pub fn brute_force(w: &[f64], temperature: f64, config: &TrellisConfig) -> Brute {
    let c = config.emission();
    let n = config.num_states();
    let len = w.len();
    let paths = enumerate_paths(config);
    let logw: Vec<f64> = paths
        .iter()
        .map(|p| p.prior.ln() - energy(w, p.states.iter().map(|&s| c[s])) / temperature)
        .collect();
    let m = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logw.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = weights.iter().sum();
    let mut marginals = vec![vec![0.0; n]; len];
    let mut soft = vec![0.0; len];
    let mut second = vec![vec![0.0; len]; len];
    for (p, &wt) in paths.iter().zip(&weights) {
        let q = wt / z;
        for t in 0..len {
            let ct = c[p.states[t]];
            marginals[t][p.states[t]] += q;
            soft[t] += q * ct;
            for tau in 0..len {
                second[t][tau] += q * ct * c[p.states[tau]];
            }
        }
    }
    let jacobian = (0..len)
        .map(|t| (0..len).map(|tau| (second[t][tau] - soft[t] * soft[tau]) / temperature).collect())
        .collect();
    Brute { log_z: m + z.ln(), marginals, soft, jacobian }
}

/// Log of the summed weight of all legal prefixes ending in each state at each step.
pub fn prefix_log_sums(w: &[f64], temperature: f64, config: &TrellisConfig) -> Vec<Vec<f64>> {
    let c = config.emission();
    let n = config.num_states();
    let mut acc = vec![vec![0.0; n]; w.len()];
    for p in enumerate_paths(config) {
        // A prefix of length t+1 recurs once per completion; divide the
        // count out instead of deduplicating.
        let mut e = 0.0;
        for t in 0..w.len() {
            let d = w[t] - c[p.states[t]];
            e += 0.5 * d * d;
            let per_prefix = (config.branching() as f64).powi((w.len() - 1 - t) as i32);
            acc[t][p.states[t]] += p.prior * (-e / temperature).exp() / per_prefix;
        }
    }
    acc.into_iter().map(|row| row.into_iter().map(f64::ln).collect()).collect()
}

/// Log of the summed weight of all legal suffixes following each state at each step.
pub fn suffix_log_sums(w: &[f64], temperature: f64, config: &TrellisConfig) -> Vec<Vec<f64>> {
    let c = config.emission();
    let n = config.num_states();
    let len = w.len();
    let mut out = vec![vec![0.0; n]; len];
    for t in 0..len {
        for (s, slot) in out[t].iter_mut().enumerate() {
            let steps = len - 1 - t;
            let total = config.branching().pow(steps as u32);
            let mut sum = 0.0;
            for code in 0..total {
                let (mut rest, mut cur, mut e) = (code, s, 0.0);
                for u in t + 1..len {
                    cur = config.succ(cur, rest % config.branching());
                    rest /= config.branching();
                    let d = w[u] - c[cur];
                    e += 0.5 * d * d;
                }
                sum += (-e / temperature).exp();
            }
            *slot = sum.ln();
        }
    }
    out
}

/// Small codes: S ≤ 4, both topologies, both start policies.
pub fn tiny_config(rng: &mut ChaCha8Rng, max_len: usize) -> TrellisConfig {
    let (k, v) = [(1, 0), (1, 1), (2, 0)][rng.random_range(0..3)];
    let topology = if rng.random_bool(0.5) { Topology::ShiftRegister } else { Topology::FullyConnected };
    let init = if rng.random_bool(0.5) { InitialState::Fixed(0) } else { InitialState::Free };
    let len = rng.random_range(1..=max_len);
    let params = TrellisParams::new(len, k, v, rng.random(), topology).with_initial_state(init);
    TrellisConfig::from_params(params).unwrap()
}

pub fn random_block(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Smallest energy increase forced by changing the state at any one site
/// (min-sum max-marginals); infinite when no alternative exists.
pub fn viterbi_margin(w: &[f64], config: &TrellisConfig) -> f64 {
    let c = config.emission();
    let n = config.num_states();
    let len = w.len();
    let cost = |t: usize, s: usize| 0.5 * (w[t] - c[s]) * (w[t] - c[s]);
    let mut fwd = vec![vec![f64::INFINITY; n]; len];
    for s in 0..n {
        if config.log_start()[s] > -1e29 {
            fwd[0][s] = cost(0, s);
        }
    }
    for t in 1..len {
        for s in 0..n {
            let best = config.preds_of(s).iter().map(|e| fwd[t - 1][e.state]).fold(f64::INFINITY, f64::min);
            fwd[t][s] = best + cost(t, s);
        }
    }
    let mut bwd = vec![vec![0.0; n]; len];
    for t in (0..len - 1).rev() {
        for s in 0..n {
            bwd[t][s] = config
                .succs_of(s)
                .iter()
                .map(|&x| bwd[t + 1][x] + cost(t + 1, x))
                .fold(f64::INFINITY, f64::min);
        }
    }
    let mut margin = f64::INFINITY;
    for t in 0..len {
        let mut totals: Vec<f64> = (0..n).map(|s| fwd[t][s] + bwd[t][s]).collect();
        totals.sort_by(f64::total_cmp);
        margin = margin.min(totals[1] - totals[0]);
    }
    margin
}
