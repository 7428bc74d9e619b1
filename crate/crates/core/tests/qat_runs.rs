use softtrellis::analysis::r_voronoi;
use softtrellis::bcjr::BcjrImpl;
use softtrellis::qat::*;
use softtrellis::quant::quantize_matrix;
use softtrellis::schedule::AnnealSchedule;
use softtrellis::seeds::Stream;
use softtrellis::trellis::{Topology, TrellisConfig};

fn trellis() -> TrellisConfig {
    TrellisConfig::build(16, 2, 2, 0, Topology::ShiftRegister).unwrap()
}

fn config(eta: f64, n: usize, seed: u64) -> QatRunConfig {
    let mut c = QatRunConfig::new(eta, AnnealSchedule::naive(0.02, n).unwrap(), seed);
    c.calibration_size = 128;
    c.heldout_size = 128;
    c.n_windows = 8;
    c
}

#[test]
fn below_threshold_runs_do_not_move() {
    let trellis = trellis();
    let spec = TeacherSpec::default();
    let r = r_voronoi(spec.sigma_w, trellis.num_states());
    for seed in 0..20u64 {
        let teacher = ToyModel::teacher(&TeacherSpec { seed, ..spec.clone() }).unwrap();
        let layer = seed as usize % teacher.n_layers();
        let mut c = config(2e-5, 3, seed);
        if seed % 2 == 1 {
            c.objective = Objective::PerLayerMSE;
            c.bcjr_impl = BcjrImpl::Fused;
        }
        let out = run_qat(&teacher, layer, &c, &trellis).unwrap();
        let t = &out.trajectory;
        assert!(t.adam_drift_bound / r <= 0.1, "budget ratio {}", t.adam_drift_bound / r);
        assert!(t.final_drift() <= t.adam_drift_bound + 1e-15);
        assert_eq!(out.snapshot.to_bytes(), out.warm_start.to_bytes(), "seed {seed}");
        let h0 = t.checkpoints[0].hardened_loss;
        assert!(t.checkpoints.iter().all(|c| c.hardened_loss == h0));
    }
}

#[test]
fn step_zero_matches_plain_viterbi() {
    let trellis = trellis();
    for seed in [0u64, 5] {
        let teacher = ToyModel::teacher(&TeacherSpec { seed, ..TeacherSpec::default() }).unwrap();
        let c = config(1e-3, 4, seed);
        for layer in 0..teacher.n_layers() {
            let out = run_qat(&teacher, layer, &c, &trellis).unwrap();
            let (plain, _) = quantize_matrix(teacher.layer(layer), &trellis, layer_seed(seed, layer)).unwrap();
            let student = teacher.with_layer(layer, plain.dequantize(&trellis).unwrap()).unwrap();
            let heldout = gaussian_inputs(c.heldout_size, teacher.input_dim(), seed, Stream::Heldout);
            let expected = eval_hardened(&teacher, &student, &heldout, c.n_windows).unwrap().loss;
            assert_eq!(out.trajectory.checkpoints[0].hardened_loss, expected);
            assert_eq!(out.warm_start, plain);
        }
    }
}

#[test]
fn implementations_train_identically_up_to_roundoff() {
    let trellis = trellis();
    let teacher = ToyModel::teacher(&TeacherSpec { seed: 3, ..TeacherSpec::default() }).unwrap();
    let mut c = config(5e-4, 6, 3);
    let a = run_qat(&teacher, 1, &c, &trellis).unwrap();
    c.bcjr_impl = BcjrImpl::Fused;
    let b = run_qat(&teacher, 1, &c, &trellis).unwrap();
    for (x, y) in a.trajectory.checkpoints.iter().zip(&b.trajectory.checkpoints) {
        assert!((x.soft_loss - y.soft_loss).abs() <= 1e-9 * x.soft_loss.abs().max(1e-12));
        assert!((x.drift - y.drift).abs() <= 1e-9);
    }
}

#[test]
fn greedy_pipeline_covers_every_layer() {
    let trellis = trellis();
    let teacher = ToyModel::teacher(&TeacherSpec { dims: vec![32, 32, 16], sigma_w: 1e-2, seed: 2 }).unwrap();
    let c = config(2e-4, 4, 2);
    let outs = run_greedy_pipeline(&teacher, &c, &trellis).unwrap();
    assert_eq!(outs.len(), teacher.n_layers());
    let snaps: Vec<_> = outs.iter().map(|o| (o.layer_index, &o.snapshot)).collect();
    let student = install(&teacher, &snaps, &trellis).unwrap();
    let heldout = gaussian_inputs(64, 32, 9, Stream::Heldout);
    let loss = eval_hardened(&teacher, &student, &heldout, 4).unwrap().loss;
    assert!(loss.is_finite() && loss >= 0.0);
    for (i, o) in outs.iter().enumerate() {
        assert_eq!(o.layer_index, i);
        assert_eq!(o.trajectory.checkpoints.last().unwrap().step, 4);
    }
}

#[test]
fn overshoot_pair_runs_both_schedules() {
    let trellis = trellis();
    let spec = TeacherSpec { dims: vec![32, 32, 16], sigma_w: 1e-2, seed: 0 };
    let base = config(1e-3, 6, 0);
    let run = overshoot_pair(&spec, 0, &base, 0.02, &trellis, 4).unwrap();
    assert_eq!(run.naive.checkpoints[0].temperature, 1.0);
    assert!((run.skip_high_t.checkpoints[0].temperature - 0.3).abs() < 1e-15);
    assert_eq!(run.naive.checkpoints[0].hardened_loss, run.skip_high_t.checkpoints[0].hardened_loss);
    assert_eq!(run.naive.checkpoints.len(), run.skip_high_t.checkpoints.len());
}
