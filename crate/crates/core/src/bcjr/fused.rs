//! Chunked forward–backward kernel.
//!
//! Messages for a chunk of `B` blocks live in one buffer indexed
//! `(t · S + s) · B + b`, so every inner loop runs over the block index.
//! States whose predecessor lists are identical (under the shift register,
//! all states that agree in their high `V` bits) share one log-sum-exp per
//! step; the same holds for successor lists in the backward sweep. The
//! grouping tables are built once per code shape and cached process-wide.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use ndarray::Array2;

use super::{local_field, state_fingerprint, validate, validate_saved, SoftQuantOutput};
use crate::error::{Error, Result};
use crate::trellis::{Topology, TrellisConfig, LOG_ZERO};

/// States sharing an identical neighbour list.
#[derive(Debug)]
struct Groups {
    members: Vec<Vec<usize>>,
    group_of: Vec<usize>,
}

impl Groups {
    fn build(n: usize, neighbours: impl Fn(usize) -> Vec<usize>) -> Self {
        let mut index: HashMap<Vec<usize>, usize> = HashMap::new();
        let mut members = Vec::new();
        let mut group_of = Vec::with_capacity(n);
        for s in 0..n {
            let list = neighbours(s);
            let g = *index.entry(list.clone()).or_insert_with(|| {
                members.push(list);
                members.len() - 1
            });
            group_of.push(g);
        }
        Groups { members, group_of }
    }

    /// First state of every group, used to read back per-group quantities.
    fn representatives(&self) -> Vec<usize> {
        let mut rep = vec![usize::MAX; self.members.len()];
        for (s, &g) in self.group_of.iter().enumerate() {
            if rep[g] == usize::MAX {
                rep[g] = s;
            }
        }
        rep
    }
}

#[derive(Debug)]
struct Tables {
    pred: Groups,
    pred_rep: Vec<usize>,
    succ: Groups,
    succ_rep: Vec<usize>,
}

type TableKey = (u32, u32, Topology);

fn tables(config: &TrellisConfig) -> Arc<Tables> {
    static CACHE: OnceLock<Mutex<HashMap<TableKey, Arc<Tables>>>> = OnceLock::new();
    let key = (config.k(), config.v(), config.topology());
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("table cache poisoned");
    guard
        .entry(key)
        .or_insert_with(|| {
            let n = config.num_states();
            let pred = Groups::build(n, |s| config.preds_of(s).iter().map(|e| e.state).collect());
            let succ = Groups::build(n, |s| config.succs_of(s).to_vec());
            Arc::new(Tables {
                pred_rep: pred.representatives(),
                pred,
                succ_rep: succ.representatives(),
                succ,
            })
        })
        .clone()
}

struct Layout {
    len: usize,
    n: usize,
    b: usize,
}

impl Layout {
    #[inline(always)]
    fn at(&self, t: usize, s: usize) -> usize {
        (t * self.n + s) * self.b
    }
}

fn chunk_blocks(values: &[f64], temperature: f64, config: &TrellisConfig) -> Result<usize> {
    let l = config.block_len();
    if values.is_empty() || values.len() % l != 0 {
        return Err(Error::LengthMismatch { expected: values.len().div_ceil(l).max(1) * l, actual: values.len() });
    }
    for w in values.chunks(l) {
        validate(w, temperature, config)?;
    }
    Ok(values.len() / l)
}

fn fill_fields(values: &[f64], temperature: f64, config: &TrellisConfig, lay: &Layout) -> Vec<f64> {
    let c = config.emission();
    let mut h = vec![0.0; lay.len * lay.n * lay.b];
    for t in 0..lay.len {
        for (s, &cs) in c.iter().enumerate() {
            let row = &mut h[lay.at(t, s)..lay.at(t, s) + lay.b];
            for (b, x) in row.iter_mut().enumerate() {
                *x = local_field(values[b * lay.len + t], cs, temperature);
            }
        }
    }
    h
}

/// Log-sum-exp over the rows `src[at(s)]` for `s` in `members`, written to `out`.
#[inline(always)]
fn group_lse(src: &[f64], lay: &Layout, t: usize, members: &[usize], m: &mut [f64], out: &mut [f64]) {
    m.fill(LOG_ZERO);
    for &p in members {
        let row = &src[lay.at(t, p)..lay.at(t, p) + lay.b];
        for (mb, &x) in m.iter_mut().zip(row) {
            *mb = mb.max(x);
        }
    }
    out.fill(0.0);
    for &p in members {
        let row = &src[lay.at(t, p)..lay.at(t, p) + lay.b];
        for ((o, &x), &mb) in out.iter_mut().zip(row).zip(m.iter()) {
            *o += (x - mb).exp();
        }
    }
    for (o, &mb) in out.iter_mut().zip(m.iter()) {
        *o = mb + o.ln();
    }
}

/// Fused soft quantizer over a chunk of consecutive blocks.
pub fn soft_quantize_fused_chunk(
    values: &[f64],
    temperature: f64,
    config: &TrellisConfig,
) -> Result<Vec<SoftQuantOutput>> {
    let nb = chunk_blocks(values, temperature, config)?;
    let tab = tables(config);
    let lay = Layout { len: config.block_len(), n: config.num_states(), b: nb };
    let (len, n) = (lay.len, lay.n);
    let c = config.emission();
    let h = fill_fields(values, temperature, config, &lay);

    let mut alpha = vec![0.0; len * n * nb];
    let mut beta = vec![0.0; len * n * nb];
    let mut m = vec![0.0; nb];
    let mut lse = vec![0.0; tab.pred.members.len().max(tab.succ.members.len()) * nb];

    for s in 0..n {
        let i = lay.at(0, s);
        let start = config.log_start()[s];
        for b in 0..nb {
            alpha[i + b] = start + h[i + b];
        }
    }
    for t in 1..len {
        for (g, members) in tab.pred.members.iter().enumerate() {
            group_lse(&alpha, &lay, t - 1, members, &mut m, &mut lse[g * nb..(g + 1) * nb]);
        }
        for s in 0..n {
            let g = tab.pred.group_of[s];
            let i = lay.at(t, s);
            for b in 0..nb {
                alpha[i + b] = h[i + b] + lse[g * nb + b];
            }
        }
    }

    let mut q = vec![0.0; n * nb];
    let qlay = Layout { len: 1, n, b: nb };
    for t in (0..len - 1).rev() {
        for s in 0..n {
            let i = lay.at(t + 1, s);
            for b in 0..nb {
                q[s * nb + b] = h[i + b] + beta[i + b];
            }
        }
        for (g, members) in tab.succ.members.iter().enumerate() {
            group_lse(&q, &qlay, 0, members, &mut m, &mut lse[g * nb..(g + 1) * nb]);
        }
        for s in 0..n {
            let g = tab.succ.group_of[s];
            let i = lay.at(t, s);
            beta[i..i + nb].copy_from_slice(&lse[g * nb..(g + 1) * nb]);
        }
    }

    let mut outputs: Vec<SoftQuantOutput> = (0..nb)
        .map(|b| {
            let w = &values[b * len..(b + 1) * len];
            SoftQuantOutput {
                soft_codeword: vec![0.0; len],
                marginals: Array2::zeros((len, n)),
                log_z: 0.0,
                saved_log_alpha: Array2::zeros((len, n)),
                saved_log_beta: Array2::zeros((len, n)),
                temperature,
                fingerprint: state_fingerprint(w, temperature, config),
            }
        })
        .collect();

    let mut joint = vec![0.0; n * nb];
    let mut norm = vec![0.0; nb];
    for t in 0..len {
        for s in 0..n {
            let i = lay.at(t, s);
            for b in 0..nb {
                joint[s * nb + b] = alpha[i + b] + beta[i + b];
            }
        }
        let all: Vec<usize> = (0..n).collect();
        group_lse(&joint, &qlay, 0, &all, &mut m, &mut norm);
        for s in 0..n {
            let i = lay.at(t, s);
            for (b, out) in outputs.iter_mut().enumerate() {
                let p = (joint[s * nb + b] - norm[b]).exp();
                out.marginals[[t, s]] = p;
                out.soft_codeword[t] += c[s] * p;
                out.saved_log_alpha[[t, s]] = alpha[i + b];
                out.saved_log_beta[[t, s]] = beta[i + b];
            }
        }
    }
    let all: Vec<usize> = (0..n).collect();
    group_lse(&alpha, &lay, len - 1, &all, &mut m, &mut norm);
    for (out, &z) in outputs.iter_mut().zip(&norm) {
        out.log_z = z;
    }
    Ok(outputs)
}

/// Fused soft quantizer for a single block.
pub fn soft_quantize_fused(w: &[f64], temperature: f64, config: &TrellisConfig) -> Result<SoftQuantOutput> {
    validate(w, temperature, config)?;
    Ok(soft_quantize_fused_chunk(w, temperature, config)?.pop().expect("one block"))
}

/// Fused VJP over a chunk; `saved[b]` must come from the forward pass on block `b`.
pub fn fused_vjp_chunk(
    values: &[f64],
    temperature: f64,
    config: &TrellisConfig,
    upstream: &[f64],
    saved: &[SoftQuantOutput],
) -> Result<Vec<f64>> {
    let nb = chunk_blocks(values, temperature, config)?;
    let len = config.block_len();
    if saved.len() != nb || upstream.len() != values.len() {
        return Err(Error::LengthMismatch { expected: values.len(), actual: upstream.len() });
    }
    for b in 0..nb {
        let r = b * len..(b + 1) * len;
        validate_saved(&values[r.clone()], temperature, config, &upstream[r], &saved[b])?;
    }
    let tab = tables(config);
    let n = config.num_states();
    let lay = Layout { len, n, b: nb };
    let c = config.emission();
    let h = fill_fields(values, temperature, config, &lay);

    let mut alpha = vec![0.0; len * n * nb];
    let mut beta = vec![0.0; len * n * nb];
    let mut prob = vec![0.0; len * n * nb];
    for (b, sv) in saved.iter().enumerate() {
        for t in 0..len {
            for s in 0..n {
                let i = lay.at(t, s) + b;
                alpha[i] = sv.saved_log_alpha[[t, s]];
                beta[i] = sv.saved_log_beta[[t, s]];
                prob[i] = sv.marginals[[t, s]];
            }
        }
    }
    let up = |t: usize, b: usize| upstream[b * len + t];
    let live = |x: f64| x > 0.5 * LOG_ZERO;

    let mut dalpha = vec![0.0; len * n * nb];
    let mut carried = vec![0.0; tab.pred.members.len().max(tab.succ.members.len()) * nb];
    for s in 0..n {
        let i = lay.at(0, s);
        for b in 0..nb {
            if live(alpha[i + b]) {
                dalpha[i + b] = up(0, b) * c[s];
            }
        }
    }
    for t in 1..len {
        carried.fill(0.0);
        for (g, members) in tab.pred.members.iter().enumerate() {
            let r = lay.at(t, tab.pred_rep[g]);
            for &p in members {
                let j = lay.at(t - 1, p);
                for b in 0..nb {
                    let lse = alpha[r + b] - h[r + b];
                    carried[g * nb + b] += (alpha[j + b] - lse).exp() * dalpha[j + b];
                }
            }
        }
        for s in 0..n {
            let g = tab.pred.group_of[s];
            let i = lay.at(t, s);
            let r = lay.at(t, tab.pred_rep[g]);
            for b in 0..nb {
                if live(alpha[r + b] - h[r + b]) {
                    dalpha[i + b] = up(t, b) * c[s] + carried[g * nb + b];
                }
            }
        }
    }

    let mut dbeta = vec![0.0; len * n * nb];
    for t in (0..len - 1).rev() {
        carried.fill(0.0);
        for (g, members) in tab.succ.members.iter().enumerate() {
            let r = lay.at(t, tab.succ_rep[g]);
            for &x in members {
                let j = lay.at(t + 1, x);
                for b in 0..nb {
                    let weight = (h[j + b] + beta[j + b] - beta[r + b]).exp();
                    carried[g * nb + b] += weight * (up(t + 1, b) * c[x] + dbeta[j + b]);
                }
            }
        }
        for s in 0..n {
            let g = tab.succ.group_of[s];
            let i = lay.at(t, s);
            dbeta[i..i + nb].copy_from_slice(&carried[g * nb..(g + 1) * nb]);
        }
    }

    let mut grad = vec![0.0; len * nb];
    let mut mean = vec![0.0; nb];
    for t in 0..len {
        mean.fill(0.0);
        for s in 0..n {
            let i = lay.at(t, s);
            for b in 0..nb {
                mean[b] += prob[i + b] * (dalpha[i + b] + dbeta[i + b]);
            }
        }
        for (s, &cs) in c.iter().enumerate() {
            let i = lay.at(t, s);
            for b in 0..nb {
                let dp = prob[i + b] * (dalpha[i + b] + dbeta[i + b] - mean[b]);
                grad[b * len + t] += dp * (cs - values[b * len + t]) / temperature;
            }
        }
    }
    Ok(grad)
}

/// Fused VJP for a single block.
pub fn fused_vjp(
    w: &[f64],
    temperature: f64,
    config: &TrellisConfig,
    upstream: &[f64],
    saved: &SoftQuantOutput,
) -> Result<Vec<f64>> {
    validate_saved(w, temperature, config, upstream, saved)?;
    fused_vjp_chunk(w, temperature, config, upstream, std::slice::from_ref(saved))
}
