//! First-order optimizers on a flat parameter vector.

use serde::{Deserialize, Serialize};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, n: usize) -> Self {
        Optimizer { kind, lr, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                let c1 = 1.0 - ADAM_BETA1.powi(self.t);
                let c2 = 1.0 - ADAM_BETA2.powi(self.t);
                for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

/// Largest possible `|m̂_t| / √v̂_t` at step `t` (1-based).
///
/// With `m̂ = Σ aᵢ gᵢ` and `v̂ = Σ bᵢ gᵢ²`, Cauchy–Schwarz gives
/// `|m̂| ≤ √(Σ aᵢ²/bᵢ) · √v̂`, with equality for `gᵢ ∝ aᵢ/bᵢ`.
pub fn adam_step_bound(t: usize) -> f64 {
    let t = t as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    (1..=t)
        .map(|i| {
            let a = (1.0 - ADAM_BETA1) * ADAM_BETA1.powi(t - i) / c1;
            let b = (1.0 - ADAM_BETA2) * ADAM_BETA2.powi(t - i) / c2;
            a * a / b
        })
        .sum::<f64>()
        .sqrt()
}
