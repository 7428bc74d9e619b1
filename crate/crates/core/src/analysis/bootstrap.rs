//! Percentile bootstrap over per-window losses.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::seeds::{self, Stream};

pub const DEFAULT_N_BOOT: usize = 10_000;
pub const DEFAULT_CONFIDENCE: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum Aggregate {
    /// Plain mean of the window values.
    #[default]
    Mean,
    /// `exp` of the (window-weighted) mean NLL.
    Perplexity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BootstrapResult {
    pub point: f64,
    /// Standard deviation of the bootstrap distribution.
    pub sigma: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_boot: usize,
    pub confidence: f64,
}

fn aggregate(values: &[f64], weights: &[f64], idx: impl Iterator<Item = usize>, agg: Aggregate) -> f64 {
    // Offset by the first value so constant inputs aggregate exactly.
    let base = values[0];
    let (mut num, mut den) = (0.0, 0.0);
    for i in idx {
        num += weights[i] * (values[i] - base);
        den += weights[i];
    }
    let mean = base + num / den;
    match agg {
        Aggregate::Mean => mean,
        Aggregate::Perplexity => mean.exp(),
    }
}

/// Resamples windows with replacement `n_boot` times.
///
/// `weights` are per-window token counts (equal when `None`). The interval
/// is the nearest-rank percentile interval of the bootstrap distribution.
pub fn bootstrap_ci(
    values: &[f64],
    weights: Option<&[f64]>,
    agg: Aggregate,
    n_boot: usize,
    confidence: f64,
    seed: u64,
) -> Result<BootstrapResult> {
    let n = values.len();
    if n < 2 {
        return Err(Error::DegenerateInput(format!("bootstrap needs at least 2 windows, got {n}")));
    }
    if n_boot == 0 || !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::ParameterOutOfRange("n_boot must be positive and confidence in (0, 1)".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateInput("non-finite window value".into()));
    }
    let ones = vec![1.0; n];
    let weights = match weights {
        Some(w) if w.len() != n => return Err(Error::LengthMismatch { expected: n, actual: w.len() }),
        Some(w) if w.iter().any(|&x| !(x > 0.0)) => {
            return Err(Error::DegenerateInput("window weights must be positive".into()))
        }
        Some(w) => w,
        None => &ones,
    };
    let point = aggregate(values, weights, 0..n, agg);
    let mut rng = seeds::rng(seed, Stream::Bootstrap, 0);
    let mut stats: Vec<f64> = (0..n_boot)
        .map(|_| {
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            aggregate(values, weights, idx.into_iter(), agg)
        })
        .collect();
    let shift = stats[0];
    let mean = stats.iter().map(|s| s - shift).sum::<f64>() / n_boot as f64;
    let var = if n_boot > 1 {
        stats.iter().map(|s| (s - shift - mean).powi(2)).sum::<f64>() / (n_boot - 1) as f64
    } else {
        0.0
    };
    stats.sort_by(f64::total_cmp);
    let rank = |p: f64| stats[((p * n_boot as f64).ceil() as usize).clamp(1, n_boot) - 1];
    let tail = (1.0 - confidence) / 2.0;
    Ok(BootstrapResult {
        point,
        sigma: var.sqrt(),
        ci_low: rank(tail),
        ci_high: rank(1.0 - tail),
        n_boot,
        confidence,
    })
}

/// Exact bootstrap standard deviation of the mean of `{a, b}`.
///
/// Resamples of size two give `a`, `(a+b)/2`, `b` with probabilities
/// `¼, ½, ¼`, so the variance is `(a−b)²/8`.
pub fn two_point_sigma(a: f64, b: f64) -> f64 {
    (a - b).abs() / (2.0 * std::f64::consts::SQRT_2)
}
