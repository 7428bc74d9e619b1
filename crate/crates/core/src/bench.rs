//! Wall-clock comparison of the reference and fused soft quantizers.
//!
//! Each configuration draws one set of random blocks and upstream gradients,
//! checks that both implementations agree on them, and only then times
//! `warmup + n_repeats` passes of each. Times are per chunk of `chunk` blocks.

use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::bcjr::{soft_quantize_blocks, vjp_blocks, BcjrImpl, SoftQuantOutput};
use crate::error::{Error, Result};
use crate::seeds::{self, Stream};
use crate::trellis::{Topology, TrellisConfig};

pub const FORWARD_PARITY_TOL: f64 = 1e-7;
pub const BACKWARD_PARITY_TOL: f64 = 1e-6;
pub const CSV_HEADER: &str = "impl,L,S,chunk,forward_ms,backward_ms";

/// One workload shape. `S` must be a power of two ≥ 4 (the code uses `k = 2`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchConfig {
    pub block_len: usize,
    pub num_states: usize,
    pub chunk: usize,
    /// Chunks processed per timed pass.
    pub n_chunks: usize,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { block_len: 16, num_states: 16, chunk: 16, n_chunks: 8, temperature: 0.1, seed: 0 }
    }
}

impl BenchConfig {
    pub fn trellis(&self) -> Result<TrellisConfig> {
        let s = self.num_states;
        if s < 4 || !s.is_power_of_two() {
            return Err(Error::ParameterOutOfRange(format!("S = {s} must be a power of two ≥ 4")));
        }
        let v = s.trailing_zeros() - 2;
        TrellisConfig::build(self.block_len, 2, v, self.seed, Topology::ShiftRegister)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct BenchOptions {
    pub n_repeats: usize,
    pub warmup: usize,
    /// Spread chunks over the rayon pool instead of running them on one thread.
    pub multi_worker: bool,
}

impl BenchOptions {
    pub fn new(n_repeats: usize, warmup: usize) -> Self {
        BenchOptions { n_repeats, warmup, multi_worker: false }
    }
}

/// Milliseconds per chunk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Timing {
    pub median: f64,
    pub p10: f64,
    pub p90: f64,
}

impl Timing {
    fn from_samples(mut xs: Vec<f64>) -> Self {
        xs.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (xs.len() - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            xs[lo] + (xs[hi] - xs[lo]) * (pos - lo as f64)
        };
        Timing { median: q(0.5), p10: q(0.1), p90: q(0.9) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchResult {
    #[serde(rename = "impl")]
    pub impl_label: String,
    #[serde(rename = "L")]
    pub block_len: usize,
    #[serde(rename = "S")]
    pub num_states: usize,
    pub chunk: usize,
    pub n_repeats: usize,
    pub multi_worker: bool,
    pub forward: Timing,
    pub backward: Timing,
    /// Median of forward + backward per repeat.
    pub total_median: f64,
    /// Reference total median over this implementation's total median.
    pub speedup: f64,
}

impl BenchResult {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{:.6}",
            self.impl_label, self.block_len, self.num_states, self.chunk, self.forward.median, self.backward.median
        )
    }
}

pub fn to_csv(results: &[BenchResult]) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for r in results {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Fixed-width table for terminals.
pub fn to_table(results: &[BenchResult]) -> String {
    let mut s = format!(
        "{:<10} {:>4} {:>4} {:>6} {:>12} {:>12} {:>12} {:>12} {:>8}\n",
        "impl", "L", "S", "chunk", "fwd ms", "fwd p10-p90", "bwd ms", "bwd p10-p90", "speedup"
    );
    for r in results {
        s.push_str(&format!(
            "{:<10} {:>4} {:>4} {:>6} {:>12.4} {:>12} {:>12.4} {:>12} {:>7.2}x\n",
            r.impl_label,
            r.block_len,
            r.num_states,
            r.chunk,
            r.forward.median,
            format!("{:.3}-{:.3}", r.forward.p10, r.forward.p90),
            r.backward.median,
            format!("{:.3}-{:.3}", r.backward.p10, r.backward.p90),
            r.speedup
        ));
    }
    s
}

/// Random blocks and upstream gradients for one configuration.
pub struct Workload {
    pub trellis: TrellisConfig,
    pub values: Vec<f64>,
    pub upstream: Vec<f64>,
    pub temperature: f64,
    pub chunk: usize,
}

impl Workload {
    pub fn new(config: &BenchConfig) -> Result<Self> {
        if config.chunk == 0 || config.n_chunks == 0 {
            return Err(Error::ParameterOutOfRange("chunk and n_chunks must be ≥ 1".into()));
        }
        let trellis = config.trellis()?;
        let n = config.block_len * config.chunk * config.n_chunks;
        let mut rng = seeds::rng(config.seed, Stream::Bench, 0);
        let values = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let upstream = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        Ok(Workload { trellis, values, upstream, temperature: config.temperature, chunk: config.chunk })
    }

    fn chunk_len(&self) -> usize {
        self.trellis.block_len() * self.chunk
    }

    fn n_chunks(&self) -> usize {
        self.values.len() / self.chunk_len()
    }

    pub fn forward(&self, imp: BcjrImpl, parallel: bool) -> Result<Vec<SoftQuantOutput>> {
        let run = |v: &[f64]| soft_quantize_blocks(imp, v, self.temperature, &self.trellis, self.chunk);
        if parallel {
            let parts = self.values.par_chunks(self.chunk_len()).map(run).collect::<Result<Vec<_>>>()?;
            Ok(parts.into_iter().flatten().collect())
        } else {
            run(&self.values)
        }
    }

    pub fn backward(&self, imp: BcjrImpl, saved: &[SoftQuantOutput], parallel: bool) -> Result<Vec<f64>> {
        let cl = self.chunk_len();
        let run = |(i, (v, g)): (usize, (&[f64], &[f64]))| {
            vjp_blocks(imp, v, self.temperature, &self.trellis, g, &saved[i * self.chunk..][..v.len() / self.trellis.block_len()], self.chunk)
        };
        if parallel {
            let parts = self
                .values
                .par_chunks(cl)
                .zip(self.upstream.par_chunks(cl))
                .enumerate()
                .map(run)
                .collect::<Result<Vec<_>>>()?;
            Ok(parts.concat())
        } else {
            vjp_blocks(imp, &self.values, self.temperature, &self.trellis, &self.upstream, saved, self.chunk)
        }
    }
}

/// Parity measures between two implementations on the same workload.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Parity {
    /// Max-abs difference of soft codewords and marginals.
    pub forward_max_abs: f64,
    /// `‖g_a − g_b‖_∞ / ‖g_b‖_∞` per block, maximized over blocks.
    pub backward_rel: f64,
}

impl Parity {
    pub fn holds(&self) -> bool {
        self.forward_max_abs <= FORWARD_PARITY_TOL && self.backward_rel <= BACKWARD_PARITY_TOL
    }
}

pub fn parity(workload: &Workload, a: BcjrImpl, b: BcjrImpl) -> Result<Parity> {
    let fa = workload.forward(a, false)?;
    let fb = workload.forward(b, false)?;
    let mut forward_max_abs = 0.0f64;
    for (x, y) in fa.iter().zip(&fb) {
        for (p, q) in x.soft_codeword.iter().zip(&y.soft_codeword).chain(x.marginals.iter().zip(y.marginals.iter())) {
            forward_max_abs = forward_max_abs.max((p - q).abs());
        }
    }
    let ga = workload.backward(a, &fa, false)?;
    let gb = workload.backward(b, &fb, false)?;
    let l = workload.trellis.block_len();
    let backward_rel = ga
        .chunks(l)
        .zip(gb.chunks(l))
        .map(|(x, y)| {
            let num = x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            let den = y.iter().map(|q| q.abs()).fold(0.0, f64::max);
            if num == 0.0 { 0.0 } else { num / den.max(f64::MIN_POSITIVE) }
        })
        .fold(0.0, f64::max);
    Ok(Parity { forward_max_abs, backward_rel })
}

struct Samples {
    forward: Vec<f64>,
    backward: Vec<f64>,
    total: Vec<f64>,
}

fn time_impl(workload: &Workload, imp: BcjrImpl, options: &BenchOptions) -> Result<Samples> {
    let per_chunk = 1e3 / workload.n_chunks() as f64;
    let mut s = Samples { forward: vec![], backward: vec![], total: vec![] };
    for rep in 0..options.warmup + options.n_repeats {
        let t0 = Instant::now();
        let saved = workload.forward(imp, options.multi_worker)?;
        let t1 = Instant::now();
        let g = workload.backward(imp, &saved, options.multi_worker)?;
        let t2 = Instant::now();
        std::hint::black_box(&g);
        if rep >= options.warmup {
            let f = (t1 - t0).as_secs_f64() * per_chunk;
            let b = (t2 - t1).as_secs_f64() * per_chunk;
            s.forward.push(f);
            s.backward.push(b);
            s.total.push(f + b);
        }
    }
    Ok(s)
}

fn result(config: &BenchConfig, imp: BcjrImpl, options: &BenchOptions, s: Samples, reference_total: f64) -> BenchResult {
    let total_median = Timing::from_samples(s.total).median;
    BenchResult {
        impl_label: imp.label().to_string(),
        block_len: config.block_len,
        num_states: config.num_states,
        chunk: config.chunk,
        n_repeats: options.n_repeats,
        multi_worker: options.multi_worker,
        forward: Timing::from_samples(s.forward),
        backward: Timing::from_samples(s.backward),
        total_median,
        speedup: reference_total / total_median,
    }
}

/// Benchmarks `imps` against the reference on one configuration.
///
/// The reference row is always emitted first; every other implementation is
/// parity-checked against it before anything is timed.
pub fn bench_config(config: &BenchConfig, imps: &[BcjrImpl], options: &BenchOptions) -> Result<Vec<BenchResult>> {
    if options.n_repeats < 5 || options.warmup < 1 {
        return Err(Error::ParameterOutOfRange("need n_repeats ≥ 5 and warmup ≥ 1".into()));
    }
    let workload = Workload::new(config)?;
    for &imp in imps {
        let p = parity(&workload, imp, BcjrImpl::Reference)?;
        if !p.holds() {
            return Err(Error::ParityFailure(format!(
                "{}: forward {:.3e}, backward {:.3e}",
                imp.label(),
                p.forward_max_abs,
                p.backward_rel
            )));
        }
    }
    let reference = time_impl(&workload, BcjrImpl::Reference, options)?;
    let ref_total = Timing::from_samples(reference.total.clone()).median;
    let mut out = vec![result(config, BcjrImpl::Reference, options, reference, ref_total)];
    for &imp in imps {
        let s = time_impl(&workload, imp, options)?;
        out.push(result(config, imp, options, s, ref_total));
    }
    Ok(out)
}

/// Reference and fused rows for every configuration.
pub fn run_bench(configs: &[BenchConfig], n_repeats: usize, warmup: usize) -> Result<Vec<BenchResult>> {
    run_bench_with(configs, &BenchOptions::new(n_repeats, warmup))
}

pub fn run_bench_with(configs: &[BenchConfig], options: &BenchOptions) -> Result<Vec<BenchResult>> {
    let mut out = Vec::new();
    for c in configs {
        out.extend(bench_config(c, &[BcjrImpl::Fused], options)?);
    }
    Ok(out)
}
