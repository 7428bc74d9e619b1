//! Small dense teacher/student networks.
//!
//! Layer `i` maps `h ↦ φ(gᵢ · h Wᵢᵀ)` with `Wᵢ` of shape `d_out × d_in`, a
//! fixed input gain `gᵢ`, `φ = tanh` on hidden layers and the identity on
//! the last layer, whose outputs are softmax logits. The gain keeps
//! pre-activations at unit scale even though the weights themselves are
//! small, so quantization error acts on realistic weight magnitudes.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::{self, Stream};

/// How to draw a synthetic teacher.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherSpec {
    /// `[d₀, d₁, …, d_n]`; layer `i` maps `dᵢ → dᵢ₊₁`.
    pub dims: Vec<usize>,
    pub sigma_w: f64,
    pub seed: u64,
}

impl Default for TeacherSpec {
    fn default() -> Self {
        TeacherSpec { dims: vec![64, 64, 64, 16], sigma_w: 1e-2, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    layers: Vec<Array2<f64>>,
    gains: Vec<f64>,
}

impl ToyModel {
    pub fn new(layers: Vec<Array2<f64>>, gains: Vec<f64>) -> Result<Self> {
        if layers.is_empty() || layers.len() != gains.len() {
            return Err(Error::Dimension("need one gain per layer and at least one layer".into()));
        }
        for (i, w) in layers.iter().enumerate() {
            let (r, c) = w.dim();
            if !r.is_power_of_two() || !c.is_power_of_two() {
                return Err(Error::Dimension(format!("layer {i} is {r}×{c}; dims must be powers of two")));
            }
            if i > 0 && layers[i - 1].nrows() != c {
                return Err(Error::Dimension(format!("layer {i} input {c} does not match previous output")));
            }
        }
        Ok(ToyModel { layers, gains })
    }

    /// Standard-normal weights scaled by `sigma_w`, gains `1/(σ_w √d_in)`.
    pub fn teacher(spec: &TeacherSpec) -> Result<Self> {
        if spec.dims.len() < 2 || !(spec.sigma_w > 0.0) {
            return Err(Error::ParameterOutOfRange("teacher needs ≥ 2 dims and σ_w > 0".into()));
        }
        let mut layers = Vec::new();
        let mut gains = Vec::new();
        for (i, d) in spec.dims.windows(2).enumerate() {
            let mut rng = seeds::rng(spec.seed, Stream::TeacherWeights, i as u64);
            layers.push(Array2::from_shape_simple_fn((d[1], d[0]), || {
                spec.sigma_w * rng.sample::<f64, _>(StandardNormal)
            }));
            gains.push(1.0 / (spec.sigma_w * (d[0] as f64).sqrt()));
        }
        Self::new(layers, gains)
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, i: usize) -> &Array2<f64> {
        &self.layers[i]
    }

    pub fn gain(&self, i: usize) -> f64 {
        self.gains[i]
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].ncols()
    }

    /// Copy with layer `i` replaced.
    pub fn with_layer(&self, i: usize, w: Array2<f64>) -> Result<Self> {
        if i >= self.layers.len() || w.dim() != self.layers[i].dim() {
            return Err(Error::Dimension(format!("cannot replace layer {i} with a {:?} matrix", w.dim())));
        }
        let mut out = self.clone();
        out.layers[i] = w;
        Ok(out)
    }

    fn is_last(&self, i: usize) -> bool {
        i + 1 == self.layers.len()
    }

    /// Layer `i` applied to a batch of inputs (`n × d_in`) with weights `w`.
    pub fn apply_layer_with(&self, i: usize, w: &Array2<f64>, input: &Array2<f64>) -> Array2<f64> {
        let z = input.dot(&w.t()) * self.gains[i];
        if self.is_last(i) {
            z
        } else {
            z.mapv(f64::tanh)
        }
    }

    pub fn apply_layer(&self, i: usize, input: &Array2<f64>) -> Array2<f64> {
        self.apply_layer_with(i, &self.layers[i], input)
    }

    /// Input to layer `upto` (so `hidden(x, 0) == x`).
    pub fn hidden(&self, x: &Array2<f64>, upto: usize) -> Array2<f64> {
        (0..upto).fold(x.clone(), |h, i| self.apply_layer(i, &h))
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        self.hidden(x, self.layers.len())
    }

    /// Inputs of layers `from..n` followed by the logits.
    pub(crate) fn trace_from(&self, from: usize, input: &Array2<f64>) -> Vec<Array2<f64>> {
        let mut acts = vec![input.clone()];
        for i in from..self.layers.len() {
            let next = self.apply_layer(i, acts.last().unwrap());
            acts.push(next);
        }
        acts
    }

    /// Gradient of a loss with respect to layer `from`'s weights, given
    /// `∂loss/∂logits` and the activations from [`ToyModel::trace_from`].
    pub(crate) fn backprop_to(&self, from: usize, acts: &[Array2<f64>], dlogits: Array2<f64>) -> Array2<f64> {
        let mut dz = dlogits;
        for i in (from + 1..self.layers.len()).rev() {
            let h = &acts[i - from];
            let dh = dz.dot(&self.layers[i]) * self.gains[i];
            dz = dh * h.mapv(|a| 1.0 - a * a);
        }
        dz.t().dot(&acts[0]) * self.gains[from]
    }
}

/// Row-wise log-softmax.
pub fn log_softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.mapv(|x| (x - m).exp()).sum().ln();
        row.mapv_inplace(|x| x - lse);
    }
    out
}

/// Per-sample `KL(teacher ‖ student)` and cross-entropy `−Σ p_T log p_S`.
pub fn kl_and_cross_entropy(teacher_logits: &Array2<f64>, student_logits: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
    let lt = log_softmax_rows(teacher_logits);
    let ls = log_softmax_rows(student_logits);
    let pt = lt.mapv(f64::exp);
    let kl = (&pt * &(&lt - &ls)).sum_axis(Axis(1));
    let ce = -(&pt * &ls).sum_axis(Axis(1));
    (kl, ce)
}

/// Standard-normal inputs for a named stream.
pub fn gaussian_inputs(n: usize, d: usize, seed: u64, stream: Stream) -> Array2<f64> {
    let mut rng = seeds::rng(seed, stream, 0);
    Array2::from_shape_simple_fn((n, d), || rng.sample::<f64, _>(StandardNormal))
}
