use softtrellis::analysis::*;
use softtrellis::qat::{gaussian_inputs, TeacherSpec, ToyModel};
use softtrellis::seeds::Stream;
use softtrellis::trellis::{Topology, TrellisConfig, TrellisParams};

use proptest::prelude::*;

const SIGMA_W: f64 = 1e-2;
const S: usize = 16;

fn sig_figs(x: f64, n: i32) -> f64 {
    let e = x.abs().log10().floor() as i32;
    let m = 10f64.powi(n - 1 - e);
    (x * m).round() / m
}

#[test]
fn voronoi_radius_against_rounded_value() {
    let r = r_voronoi(SIGMA_W, S);
    assert_eq!(r, 1e-2 / (32.0 * std::f64::consts::PI).sqrt());
    assert!((r - 1.0e-3).abs() / 1.0e-3 < 0.01);
}

#[test]
fn reference_table_ratios() {
    let exact: Vec<f64> = reference_runs()
        .iter()
        .map(|run| drift_budget(run.eta, run.n_steps, 1.0, SIGMA_W, S).unwrap().ratio)
        .collect();
    // With the exact radius.
    let expected = [0.0602, 0.602, 2.01, 2.01];
    for (r, e) in exact.iter().zip(expected) {
        assert_eq!(sig_figs(*r, 3), e);
    }
    // With the radius rounded to 1.0e-3, the table's own figures.
    for (run, e) in reference_runs().iter().zip([0.06, 0.6, 2.0, 2.0]) {
        assert_eq!(sig_figs(run.eta * run.n_steps / 1.0e-3, 3), e);
    }
    let feasible: Vec<bool> = reference_runs()
        .iter()
        .map(|run| drift_budget(run.eta, run.n_steps, 1.0, SIGMA_W, S).unwrap().feasible)
        .collect();
    assert_eq!(feasible, [false, false, true, true]);
}

#[test]
fn documented_rows() {
    let a = drift_budget(2e-5, 3.0, 1.0, SIGMA_W, S).unwrap();
    assert!((a.max_drift - 6e-5).abs() < 1e-18 && !a.feasible);
    let b = drift_budget(2e-4, 10.0, 1.0, SIGMA_W, S).unwrap();
    assert!((b.max_drift - 2e-3).abs() < 1e-15 && b.feasible);
}

proptest! {
    #[test]
    fn drift_report_invariants(eta in 1e-7f64..1e-2, n in 1u32..1000, g in 0.01f64..10.0, sw in 1e-4f64..1.0, v in 0u32..8) {
        let s = 1usize << v;
        let r = drift_budget(eta, n as f64, g, sw, s).unwrap();
        prop_assert_eq!(r.r_voronoi, sw / (2.0 * std::f64::consts::PI * s as f64).sqrt());
        prop_assert_eq!(r.max_drift, eta * n as f64 * g);
        prop_assert_eq!(r.ratio, r.max_drift / r.r_voronoi);
        prop_assert_eq!(r.feasible, r.ratio > 1.0);
    }
}

/// Variance of the resampled mean: population variance over n.
fn analytic_bootstrap_sigma(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n / n).sqrt()
}

#[test]
fn two_point_bootstrap_matches_closed_form() {
    for (a, b, seed) in [(1.0, 3.0, 0), (2.31, 2.37, 1), (-4.0, 10.0, 7)] {
        let r = bootstrap_ci(&[a, b], None, Aggregate::Mean, DEFAULT_N_BOOT, 0.95, seed).unwrap();
        let exact = two_point_sigma(a, b);
        assert!((exact - analytic_bootstrap_sigma(&[a, b])).abs() < 1e-15);
        assert!((r.sigma - exact).abs() / exact < 0.02, "{} vs {exact}", r.sigma);
        assert_eq!((r.ci_low, r.ci_high), (a.min(b), a.max(b)));
    }
}

#[test]
fn many_window_bootstrap_matches_closed_form() {
    let values: Vec<f64> = (0..40).map(|i| ((i * 7919) % 97) as f64 / 10.0).collect();
    let r = bootstrap_ci(&values, None, Aggregate::Mean, DEFAULT_N_BOOT, 0.95, 3).unwrap();
    let exact = analytic_bootstrap_sigma(&values);
    assert!((r.sigma - exact).abs() / exact < 0.03);
    assert!(r.ci_low < r.point && r.point < r.ci_high);
}

#[test]
fn bootstrap_determinism_and_degenerate_inputs() {
    let v = [0.2, 0.9, 0.4, 0.4, 1.3];
    let a = bootstrap_ci(&v, None, Aggregate::Perplexity, 2000, 0.9, 11).unwrap();
    assert_eq!(a, bootstrap_ci(&v, None, Aggregate::Perplexity, 2000, 0.9, 11).unwrap());
    assert_ne!(a, bootstrap_ci(&v, None, Aggregate::Perplexity, 2000, 0.9, 12).unwrap());
    let c = bootstrap_ci(&[0.7; 16], None, Aggregate::Mean, 1000, 0.95, 0).unwrap();
    assert_eq!((c.sigma, c.ci_low, c.ci_high), (0.0, 0.7, 0.7));
    assert!(bootstrap_ci(&[1.0], None, Aggregate::Mean, 100, 0.95, 0).is_err());
    assert!(bootstrap_ci(&[1.0, f64::NAN], None, Aggregate::Mean, 100, 0.95, 0).is_err());
}

fn tiny_trellis() -> TrellisConfig {
    TrellisConfig::from_params(TrellisParams::new(4, 1, 1, 0, Topology::ShiftRegister).with_scales(4, 4)).unwrap()
}

#[test]
fn bracket_never_exceeds_exhaustive_gap() {
    let trellis = tiny_trellis();
    for seed in 0..50u64 {
        let teacher = ToyModel::teacher(&TeacherSpec { dims: vec![4, 4, 2], sigma_w: 0.4, seed }).unwrap();
        let loss = if seed % 2 == 0 { TaskLoss::Kl } else { TaskLoss::LogitMse };
        let task = TaskSpec { inputs: gaussian_inputs(64, 4, seed, Stream::Heldout), loss };
        let gap = oracle_gap_exhaustive(&teacher, 1, &trellis, seed, &task).unwrap();
        assert!(gap.delta_star >= 0.0, "seed {seed}: {gap:?}");
        assert!(gap.delta_star <= gap.tax + 1e-15, "seed {seed}: {gap:?}");
        assert_eq!(gap.loss_fp, 0.0);
        let mc = mc_bracket(&teacher, 1, &trellis, &DEFAULT_SIGMA_GRID, 20, seed, &task).unwrap();
        assert_eq!(mc.loss_ptq, gap.loss_ptq);
        assert!(mc.lower_bound_on_gap <= gap.delta_star + 1e-15, "seed {seed}: {} > {}", mc.lower_bound_on_gap, gap.delta_star);
        assert!(mc.global_best >= gap.best_loss - 1e-15);
    }
}

#[test]
fn bracket_is_seed_deterministic() {
    let trellis = tiny_trellis();
    let teacher = ToyModel::teacher(&TeacherSpec { dims: vec![4, 2], sigma_w: 0.4, seed: 9 }).unwrap();
    let task = TaskSpec { inputs: gaussian_inputs(16, 4, 0, Stream::Heldout), loss: TaskLoss::Kl };
    let a = mc_bracket(&teacher, 0, &trellis, &[1e-2, 5e-2], 8, 4, &task).unwrap();
    assert_eq!(a, mc_bracket(&teacher, 0, &trellis, &[1e-2, 5e-2], 8, 4, &task).unwrap());
    assert_eq!(a.samples.len(), 16);
    assert_eq!(a.samples_csv().lines().count(), 17);
}
