//! Annealed quantization-aware training on toy models.
//!
//! One layer at a time, the rotated weights are held as a continuous latent
//! `u` with frozen per-group scales `s`. Each step soft-quantizes `u/s` at
//! the scheduled temperature, installs `s ⊙ ŵ` (rotated back) in the
//! student, differentiates the objective, clips every gradient entry to
//! `[−g_max, g_max]` and takes an optimizer step on `u`. At the end the
//! latent is hard-snapped with Viterbi. The latent starts at the dequantized
//! Viterbi solution, so the step-0 hardened model is exactly the plain
//! post-training quantization of the layer.

mod model;
mod optim;

pub use model::{gaussian_inputs, kl_and_cross_entropy, log_softmax_rows, TeacherSpec, ToyModel};
pub use optim::{adam_step_bound, Optimizer, OptimizerKind};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::bcjr::{soft_quantize_blocks, vjp_blocks, BcjrImpl, DEFAULT_CHUNK};
use crate::error::{Error, Result};
use crate::quant::{fit_scales, rotate, GroupScales, QuantizedLayer};
use crate::schedule::AnnealSchedule;
use crate::seeds::{self, Stream};
use crate::trellis::{incoherence_transform, inverse_incoherence_transform, Padding, TrellisConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    /// Squared error of the layer's output against the teacher's, with
    /// student inputs taken from the already-quantized prefix.
    PerLayerMSE,
    /// `KL(teacher ‖ student)` of the output distribution.
    EndToEndKL,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QatRunConfig {
    pub objective: Objective,
    pub learning_rate: f64,
    /// Number of updates; at most `schedule.n_steps()`, zero allowed.
    pub n_steps: usize,
    pub schedule: AnnealSchedule,
    pub grad_clip: f64,
    pub seed: u64,
    pub calibration_size: usize,
    #[serde(default = "default_heldout")]
    pub heldout_size: usize,
    #[serde(default = "default_windows")]
    pub n_windows: usize,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub bcjr_impl: BcjrImpl,
    #[serde(default = "default_chunk")]
    pub chunk: usize,
}

fn default_heldout() -> usize {
    512
}

fn default_windows() -> usize {
    16
}

fn default_chunk() -> usize {
    DEFAULT_CHUNK
}

impl QatRunConfig {
    /// End-to-end KL run with Adam and the given schedule.
    pub fn new(learning_rate: f64, schedule: AnnealSchedule, seed: u64) -> Self {
        QatRunConfig {
            objective: Objective::EndToEndKL,
            learning_rate,
            n_steps: schedule.n_steps(),
            schedule,
            grad_clip: 1.0,
            seed,
            calibration_size: 256,
            heldout_size: default_heldout(),
            n_windows: default_windows(),
            optimizer: OptimizerKind::Adam,
            bcjr_impl: BcjrImpl::Reference,
            chunk: DEFAULT_CHUNK,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !positive(self.learning_rate) || !positive(self.grad_clip) {
            return Err(Error::ParameterOutOfRange("learning rate and grad clip must be positive".into()));
        }
        if self.n_steps > self.schedule.n_steps() {
            return Err(Error::ParameterOutOfRange(format!(
                "{} steps exceed the schedule's {}",
                self.n_steps,
                self.schedule.n_steps()
            )));
        }
        if self.calibration_size == 0 || self.n_windows < 1 || self.heldout_size % self.n_windows != 0 {
            return Err(Error::ParameterOutOfRange(
                "calibration size must be positive and heldout size a multiple of n_windows".into(),
            ));
        }
        Ok(())
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let c: QatRunConfig = serde_json::from_str(json).map_err(|e| Error::Format(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }
}

/// One saved checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step: usize,
    pub temperature: f64,
    /// Training objective at this step's temperature, before the update.
    pub soft_loss: f64,
    /// End-task KL on held-out data with the Viterbi-snapped latent, after the update.
    pub hardened_loss: f64,
    /// `max |u − u₀|` after the update.
    pub drift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub checkpoints: Vec<Checkpoint>,
    /// `η · N · g_max`, the bound for clipped SGD.
    pub sgd_drift_bound: f64,
    /// `η · Σ_t κ_t`, the bound for the Adam update rule.
    pub adam_drift_bound: f64,
}

impl TrajectoryRecord {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,temperature,soft_loss,hardened_loss,drift\n");
        for c in &self.checkpoints {
            s.push_str(&format!(
                "{},{:.6e},{:.12e},{:.12e},{:.6e}\n",
                c.step, c.temperature, c.soft_loss, c.hardened_loss, c.drift
            ));
        }
        s
    }

    pub fn final_checkpoint(&self) -> &Checkpoint {
        self.checkpoints.last().expect("a trajectory always has step 0")
    }

    pub fn final_drift(&self) -> f64 {
        self.final_checkpoint().drift
    }
}

#[derive(Debug, Clone)]
pub struct QatOutcome {
    pub layer_index: usize,
    pub warm_start: QuantizedLayer,
    pub snapshot: QuantizedLayer,
    pub trajectory: TrajectoryRecord,
}

/// Held-out evaluation of a student against its teacher.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    /// Mean per-sample KL.
    pub loss: f64,
    /// Mean KL per equal-size window.
    pub per_window: Vec<f64>,
    /// Mean cross-entropy per window (nats), for perplexity-style aggregates.
    pub per_window_nll: Vec<f64>,
}

/// Evaluates `student` against `teacher` on `inputs` split into `n_windows` equal windows.
pub fn eval_hardened(teacher: &ToyModel, student: &ToyModel, inputs: &Array2<f64>, n_windows: usize) -> Result<EvalResult> {
    let n = inputs.nrows();
    if n_windows == 0 || n % n_windows != 0 {
        return Err(Error::ParameterOutOfRange(format!("{n} samples do not split into {n_windows} windows")));
    }
    let (kl, ce) = kl_and_cross_entropy(&teacher.forward(inputs), &student.forward(inputs));
    let size = n / n_windows;
    let window_mean = |v: &ndarray::Array1<f64>| -> Vec<f64> {
        v.as_slice().unwrap().chunks(size).map(|w| w.iter().sum::<f64>() / size as f64).collect()
    };
    let per_window = window_mean(&kl);
    Ok(EvalResult { loss: per_window.iter().sum::<f64>() / n_windows as f64, per_window, per_window_nll: window_mean(&ce) })
}

/// Incoherence seed of layer `i` under run seed `seed`.
pub fn layer_seed(seed: u64, i: usize) -> u64 {
    seeds::split(seed, Stream::Layer, i as u64)
}

/// Plain Viterbi quantization of teacher layer `i` (the warm start).
pub fn warm_start(teacher: &ToyModel, i: usize, trellis: &TrellisConfig, seed: u64) -> Result<QuantizedLayer> {
    Ok(crate::quant::quantize_matrix(teacher.layer(i), trellis, layer_seed(seed, i))?.0)
}

/// `model` with the given snapshots dequantized and installed.
pub fn install(model: &ToyModel, snapshots: &[(usize, &QuantizedLayer)], trellis: &TrellisConfig) -> Result<ToyModel> {
    let mut out = model.clone();
    for &(i, q) in snapshots {
        out = out.with_layer(i, q.dequantize(trellis)?)?;
    }
    Ok(out)
}

/// Data and frozen quantities for optimizing one layer.
struct LayerProblem<'a> {
    teacher: &'a ToyModel,
    /// Teacher with the already-quantized prefix installed.
    student: ToyModel,
    layer: usize,
    trellis: &'a TrellisConfig,
    config: &'a QatRunConfig,
    seed: u64,
    shape: (usize, usize),
    scales: GroupScales,
    scale_vec: Vec<f64>,
    student_input: Array2<f64>,
    target: Array2<f64>,
    heldout: Array2<f64>,
}

impl LayerProblem<'_> {
    fn effective_weights(&self, rotated_flat: Vec<f64>) -> Result<Array2<f64>> {
        let padded = Array2::from_shape_vec(self.shape, rotated_flat).expect("layer shape");
        inverse_incoherence_transform(&padded, self.seed, self.shape)
    }

    /// Objective value and its gradient with respect to the layer weights.
    fn objective(&self, w: &Array2<f64>) -> (f64, Array2<f64>) {
        let model = self.teacher;
        match self.config.objective {
            Objective::PerLayerMSE => {
                let out = model.apply_layer_with(self.layer, w, &self.student_input);
                let diff = &out - &self.target;
                let loss = diff.mapv(|x| x * x).mean().unwrap();
                let mut dz = diff * (2.0 / out.len() as f64);
                if self.layer + 1 < model.n_layers() {
                    dz = dz * out.mapv(|a| 1.0 - a * a);
                }
                (loss, dz.t().dot(&self.student_input) * model.gain(self.layer))
            }
            Objective::EndToEndKL => {
                let student = self.student.with_layer(self.layer, w.clone()).expect("shape preserved");
                let acts = student.trace_from(self.layer, &self.student_input);
                let logits = acts.last().unwrap();
                let lt = log_softmax_rows(&self.target);
                let ls = log_softmax_rows(logits);
                let pt = lt.mapv(f64::exp);
                let n = logits.nrows() as f64;
                let loss = (&pt * &(&lt - &ls)).sum() / n;
                let dlogits = (ls.mapv(f64::exp) - pt) / n;
                (loss, student.backprop_to(self.layer, &acts, dlogits))
            }
        }
    }

    fn hardened(&self, latent: &[f64]) -> Result<(QuantizedLayer, f64)> {
        let rotated = Array2::from_shape_vec(self.shape, latent.to_vec()).expect("layer shape");
        let (snap, _) = QuantizedLayer::encode(&rotated, self.shape, self.seed, self.scales.clone(), self.trellis)?;
        let student = install(&self.student, &[(self.layer, &snap)], self.trellis)?;
        let eval = eval_hardened(self.teacher, &student, &self.heldout, self.config.n_windows)?;
        Ok((snap, eval.loss))
    }

    /// Soft loss and clipped latent gradient at temperature `t`.
    fn soft_step(&self, latent: &[f64], t: f64, with_grad: bool) -> Result<(f64, Vec<f64>)> {
        let imp = self.config.bcjr_impl;
        let x: Vec<f64> = latent.iter().zip(&self.scale_vec).map(|(u, s)| u / s).collect();
        let outs = soft_quantize_blocks(imp, &x, t, self.trellis, self.config.chunk)?;
        let soft: Vec<f64> = outs
            .iter()
            .flat_map(|o| o.soft_codeword.iter().copied())
            .zip(&self.scale_vec)
            .map(|(c, s)| c * s)
            .collect();
        let w = self.effective_weights(soft)?;
        let (loss, grad_w) = self.objective(&w);
        if !with_grad {
            return Ok((loss, Vec::new()));
        }
        let grad_rot = incoherence_transform(&grad_w, self.seed, Padding::ZeroPad)?;
        let up: Vec<f64> = grad_rot.iter().zip(&self.scale_vec).map(|(g, s)| g * s).collect();
        let gx = vjp_blocks(imp, &x, t, self.trellis, &up, &outs, self.config.chunk)?;
        let clip = self.config.grad_clip;
        let g = gx.iter().zip(&self.scale_vec).map(|(g, s)| (g / s).clamp(-clip, clip)).collect();
        Ok((loss, g))
    }
}

fn is_checkpoint(step: usize, n_steps: usize) -> bool {
    step % 2 == 0 || step == n_steps
}

/// Optimizes teacher layer `layer` with an FP prefix.
pub fn run_qat(teacher: &ToyModel, layer: usize, config: &QatRunConfig, trellis: &TrellisConfig) -> Result<QatOutcome> {
    run_qat_with_prefix(teacher, teacher, layer, config, trellis)
}

/// Optimizes layer `layer`; `student` is the teacher with the
/// already-quantized prefix installed and supplies the layer's inputs.
pub fn run_qat_with_prefix(
    teacher: &ToyModel,
    student: &ToyModel,
    layer: usize,
    config: &QatRunConfig,
    trellis: &TrellisConfig,
) -> Result<QatOutcome> {
    config.validate()?;
    if layer >= teacher.n_layers() {
        return Err(Error::ParameterOutOfRange(format!("layer {layer} of {}", teacher.n_layers())));
    }
    let seed = layer_seed(config.seed, layer);
    let d0 = teacher.input_dim();
    let calib = gaussian_inputs(config.calibration_size, d0, config.seed, Stream::Calibration);
    let heldout = gaussian_inputs(config.heldout_size, d0, config.seed, Stream::Heldout);
    let student_input = student.hidden(&calib, layer);
    let target = match config.objective {
        Objective::PerLayerMSE => teacher.apply_layer(layer, &teacher.hidden(&calib, layer)),
        Objective::EndToEndKL => teacher.forward(&calib),
    };
    let rotated = rotate(teacher.layer(layer), seed)?;
    let scales = fit_scales(&rotated, trellis)?;
    let (warm, _) = QuantizedLayer::encode(&rotated, rotated.dim(), seed, scales.clone(), trellis)?;
    let problem = LayerProblem {
        teacher,
        student: student.clone(),
        layer,
        trellis,
        config,
        seed,
        shape: rotated.dim(),
        scale_vec: scales.expand(),
        scales,
        student_input,
        target,
        heldout,
    };

    let mut latent: Vec<f64> = warm.dequantize_rotated(trellis)?.iter().copied().collect();
    let start = latent.clone();
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate, latent.len());
    let t0 = config.schedule.temperature_at(0)?;
    let (soft0, _) = problem.soft_step(&latent, t0, false)?;
    let (mut snapshot, hard0) = problem.hardened(&latent)?;
    let mut checkpoints = vec![Checkpoint { step: 0, temperature: t0, soft_loss: soft0, hardened_loss: hard0, drift: 0.0 }];

    for step in 1..=config.n_steps {
        let t = config.schedule.temperature_at(step)?;
        let (loss, grad) = problem.soft_step(&latent, t, true)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss {
                step,
                detail: format!("layer {layer}, T = {t:e}, soft loss = {loss}"),
            });
        }
        optimizer.step(&mut latent, &grad);
        if is_checkpoint(step, config.n_steps) {
            let drift = latent.iter().zip(&start).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let (snap, hard) = problem.hardened(&latent)?;
            snapshot = snap;
            checkpoints.push(Checkpoint { step, temperature: t, soft_loss: loss, hardened_loss: hard, drift });
        }
    }
    let eta = config.learning_rate;
    let trajectory = TrajectoryRecord {
        checkpoints,
        sgd_drift_bound: eta * config.n_steps as f64 * config.grad_clip,
        adam_drift_bound: eta * (1..=config.n_steps).map(adam_step_bound).sum::<f64>(),
    };
    Ok(QatOutcome { layer_index: layer, warm_start: warm, snapshot, trajectory })
}

/// Greedy layer-by-layer QAT; each layer sees inputs from the quantized prefix.
pub fn run_greedy_pipeline(teacher: &ToyModel, config: &QatRunConfig, trellis: &TrellisConfig) -> Result<Vec<QatOutcome>> {
    let mut student = teacher.clone();
    let mut out = Vec::with_capacity(teacher.n_layers());
    for layer in 0..teacher.n_layers() {
        let outcome = run_qat_with_prefix(teacher, &student, layer, config, trellis)?;
        student = install(&student, &[(layer, &outcome.snapshot)], trellis)?;
        out.push(outcome);
    }
    Ok(out)
}

/// The same run under the naive (`T₀ = 1`) and skip-high-T (`T₀ = 0.3`) schedules.
#[derive(Debug, Clone)]
pub struct OvershootRun {
    pub seed: u64,
    pub naive: TrajectoryRecord,
    pub skip_high_t: TrajectoryRecord,
}

impl OvershootRun {
    pub fn skip_wins(&self) -> bool {
        self.skip_high_t.final_checkpoint().hardened_loss < self.naive.final_checkpoint().hardened_loss
    }
}

/// Runs both schedules on teacher `spec` (its seed replaced by `seed`) with run seed `seed`.
pub fn overshoot_pair(
    spec: &TeacherSpec,
    layer: usize,
    base: &QatRunConfig,
    t_end: f64,
    trellis: &TrellisConfig,
    seed: u64,
) -> Result<OvershootRun> {
    let teacher = ToyModel::teacher(&TeacherSpec { seed, ..spec.clone() })?;
    let n = base.schedule.n_steps();
    let run = |schedule: AnnealSchedule| {
        let cfg = QatRunConfig { schedule, seed, ..base.clone() };
        run_qat(&teacher, layer, &cfg, trellis).map(|o| o.trajectory)
    };
    Ok(OvershootRun {
        seed,
        naive: run(AnnealSchedule::naive(t_end, n)?)?,
        skip_high_t: run(AnnealSchedule::skip_high_t(t_end, n)?)?,
    })
}
