//! One-block-at-a-time forward–backward, written for clarity.

use ndarray::Array2;

use super::{local_field, logsumexp, state_fingerprint, validate, validate_saved, SoftQuantOutput};
use crate::error::Result;
use crate::trellis::{TrellisConfig, LOG_ZERO};

fn fields(w: &[f64], temperature: f64, config: &TrellisConfig) -> Array2<f64> {
    let c = config.emission();
    Array2::from_shape_fn((w.len(), c.len()), |(t, s)| local_field(w[t], c[s], temperature))
}

fn forward_from_fields(h: &Array2<f64>, config: &TrellisConfig) -> Array2<f64> {
    let (len, n) = h.dim();
    let mut alpha = Array2::zeros((len, n));
    for s in 0..n {
        alpha[[0, s]] = config.log_start()[s] + h[[0, s]];
    }
    for t in 1..len {
        for s in 0..n {
            let incoming: Vec<f64> =
                config.preds_of(s).iter().map(|e| alpha[[t - 1, e.state]]).collect();
            alpha[[t, s]] = h[[t, s]] + logsumexp(&incoming);
        }
    }
    alpha
}

fn backward_from_fields(h: &Array2<f64>, config: &TrellisConfig) -> Array2<f64> {
    let (len, n) = h.dim();
    let mut beta = Array2::zeros((len, n));
    for t in (0..len - 1).rev() {
        for s in 0..n {
            let outgoing: Vec<f64> = config
                .succs_of(s)
                .iter()
                .map(|&x| h[[t + 1, x]] + beta[[t + 1, x]])
                .collect();
            beta[[t, s]] = logsumexp(&outgoing);
        }
    }
    beta
}

/// Log forward messages `log α_t(s)`, `L × S`.
///
/// Row 0 is the log start prior plus the first local field; unreachable
/// states carry values near [`LOG_ZERO`].
pub fn forward_messages(w: &[f64], temperature: f64, config: &TrellisConfig) -> Result<Array2<f64>> {
    validate(w, temperature, config)?;
    Ok(forward_from_fields(&fields(w, temperature, config), config))
}

/// Log backward messages `log β_t(s)`, `L × S`; the last row is zero.
pub fn backward_messages(
    w: &[f64],
    temperature: f64,
    config: &TrellisConfig,
) -> Result<Array2<f64>> {
    validate(w, temperature, config)?;
    Ok(backward_from_fields(&fields(w, temperature, config), config))
}

/// Reference soft quantizer.
pub fn soft_quantize(w: &[f64], temperature: f64, config: &TrellisConfig) -> Result<SoftQuantOutput> {
    validate(w, temperature, config)?;
    let h = fields(w, temperature, config);
    let alpha = forward_from_fields(&h, config);
    let beta = backward_from_fields(&h, config);
    let (len, n) = h.dim();
    let c = config.emission();

    let mut marginals = Array2::zeros((len, n));
    let mut soft_codeword = vec![0.0; len];
    for t in 0..len {
        let joint: Vec<f64> = (0..n).map(|s| alpha[[t, s]] + beta[[t, s]]).collect();
        let norm = logsumexp(&joint);
        for s in 0..n {
            let p = (joint[s] - norm).exp();
            marginals[[t, s]] = p;
            soft_codeword[t] += c[s] * p;
        }
    }
    let last: Vec<f64> = alpha.row(len - 1).to_vec();
    let log_z = logsumexp(&last);

    Ok(SoftQuantOutput {
        soft_codeword,
        marginals,
        log_z,
        saved_log_alpha: alpha,
        saved_log_beta: beta,
        temperature,
        fingerprint: state_fingerprint(w, temperature, config),
    })
}

/// Reference VJP of the soft codeword: returns `Σ_t upstream_t · ∂ŵ_t/∂w_τ`.
pub fn soft_quantize_vjp(
    w: &[f64],
    temperature: f64,
    config: &TrellisConfig,
    upstream: &[f64],
    saved: &SoftQuantOutput,
) -> Result<Vec<f64>> {
    validate_saved(w, temperature, config, upstream, saved)?;
    let h = fields(w, temperature, config);
    let alpha = &saved.saved_log_alpha;
    let beta = &saved.saved_log_beta;
    let (len, n) = h.dim();
    let c = config.emission();
    let reachable = |x: f64| x > 0.5 * LOG_ZERO;

    // Tangent of log α along v_t(s) = upstream_t · c(s).
    let mut dalpha = Array2::<f64>::zeros((len, n));
    for s in 0..n {
        if reachable(alpha[[0, s]]) {
            dalpha[[0, s]] = upstream[0] * c[s];
        }
    }
    for t in 1..len {
        for s in 0..n {
            let lse = alpha[[t, s]] - h[[t, s]];
            if !reachable(lse) {
                continue;
            }
            let weights: Vec<f64> = config
                .preds_of(s)
                .iter()
                .map(|e| (alpha[[t - 1, e.state]] - lse).exp())
                .collect();
            let carried: f64 = config
                .preds_of(s)
                .iter()
                .zip(&weights)
                .map(|(e, p)| p * dalpha[[t - 1, e.state]])
                .sum();
            dalpha[[t, s]] = upstream[t] * c[s] + carried;
        }
    }

    // Tangent of log β.
    let mut dbeta = Array2::<f64>::zeros((len, n));
    for t in (0..len - 1).rev() {
        for s in 0..n {
            let weights: Vec<f64> = config
                .succs_of(s)
                .iter()
                .map(|&x| (h[[t + 1, x]] + beta[[t + 1, x]] - beta[[t, s]]).exp())
                .collect();
            dbeta[[t, s]] = config
                .succs_of(s)
                .iter()
                .zip(&weights)
                .map(|(&x, p)| p * (upstream[t + 1] * c[x] + dbeta[[t + 1, x]]))
                .sum();
        }
    }

    let mut grad = vec![0.0; len];
    for t in 0..len {
        let row: Vec<f64> = (0..n).map(|s| saved.marginals[[t, s]]).collect();
        let tangent: Vec<f64> = (0..n).map(|s| dalpha[[t, s]] + dbeta[[t, s]]).collect();
        let mean: f64 = row.iter().zip(&tangent).map(|(p, d)| p * d).sum();
        grad[t] = (0..n)
            .map(|s| {
                let dp = row[s] * (tangent[s] - mean);
                dp * (c[s] - w[t]) / temperature
            })
            .sum();
    }
    Ok(grad)
}
