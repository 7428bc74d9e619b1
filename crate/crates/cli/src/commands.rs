//! Subcommand implementations.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use softtrellis::analysis::{
    bootstrap_ci, crystallization, drift_budget, margin_checked_blocks, mc_bracket, oracle_gap_exhaustive,
    reference_table_csv, Aggregate, DriftBudgetReport, TaskLoss, TaskSpec,
};
use softtrellis::bench::{run_bench_with, to_csv, to_table, BenchConfig, BenchOptions};
use softtrellis::io::{matrix_from_bytes, matrix_to_bytes};
use softtrellis::qat::{gaussian_inputs, overshoot_pair, QatRunConfig, TeacherSpec, ToyModel};
use softtrellis::quant::{quantize_matrix, QuantizedLayer};
use softtrellis::schedule::AnnealSchedule;
use softtrellis::seeds::{self, Stream};
use softtrellis::trellis::{Topology, TrellisConfig, TrellisParams};

use crate::output::{emit, hex, to_json, write_atomic};
use crate::{Cli, Command};

/// Contents of `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunDescriptor {
    trellis: Option<TrellisParams>,
    qat: Option<QatRunConfig>,
    teacher: Option<TeacherSpec>,
}

fn descriptor(cli: &Cli) -> Result<RunDescriptor> {
    let Some(path) = &cli.config else { return Ok(RunDescriptor::default()) };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let d: RunDescriptor =
        serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
    if let Some(q) = &d.qat {
        q.validate()?;
    }
    Ok(d)
}

fn trellis(d: &RunDescriptor) -> Result<TrellisConfig> {
    let params = d.trellis.unwrap_or_else(|| TrellisParams::new(16, 2, 2, 0, Topology::ShiftRegister));
    Ok(TrellisConfig::from_params(params)?)
}

fn file_stem(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_owned)
        .ok_or_else(|| anyhow!("cannot name output after {}", path.display()))
}

pub fn run(cli: &Cli) -> Result<()> {
    let d = descriptor(cli)?;
    match &cli.command {
        Command::RandomMatrix { rows, cols, sigma, name } => {
            if *rows == 0 || *cols == 0 {
                bail!("matrix must be non-empty");
            }
            let mut rng = seeds::rng(cli.seed, Stream::TeacherWeights, 0);
            let m = ndarray::Array2::from_shape_simple_fn((*rows, *cols), || sigma * rng.sample::<f64, _>(StandardNormal));
            let path = write_atomic(&cli.out, name, &matrix_to_bytes(&m))?;
            eprintln!("wrote {}", path.display());
            Ok(())
        }
        Command::Quantize { input } => quantize(cli, &d, input),
        Command::Dequantize { snapshot } => {
            let bytes = std::fs::read(snapshot).with_context(|| format!("reading {}", snapshot.display()))?;
            let q = QuantizedLayer::from_bytes(&bytes)?;
            let config = TrellisConfig::from_params(*q.params())?;
            let name = format!("{}.stm", file_stem(snapshot)?);
            let path = write_atomic(&cli.out, &name, &matrix_to_bytes(&q.dequantize(&config)?))?;
            eprintln!("wrote {}", path.display());
            Ok(())
        }
        Command::Crystallize { blocks, t_grid, margin } => {
            let config = trellis(&d)?;
            let sample = margin_checked_blocks(&config, *blocks, *margin, cli.seed)?;
            let report = crystallization(&sample, t_grid, &config, cli.bcjr_impl)?;
            let csv = report.to_csv();
            write_atomic(&cli.out, "crystallize.csv", csv.as_bytes())?;
            let text = format!("{csv}# monotone blocks: {}/{}\n", report.monotone_blocks, report.n_blocks);
            emit(cli.json, &report, &text)
        }
        Command::Overshoot { seeds, layer, steps, eta, t_end } => overshoot(cli, &d, *seeds, *layer, *steps, *eta, *t_end),
        Command::DriftBudget { eta, n_steps, g_max, sigma_w, states } => {
            match (eta, n_steps) {
                (Some(eta), Some(n)) => {
                    let r = drift_budget(*eta, *n, *g_max, *sigma_w, *states)?;
                    let csv = format!("{}\n{}\n", DriftBudgetReport::CSV_HEADER, r.csv_row());
                    write_atomic(&cli.out, "drift_budget.csv", csv.as_bytes())?;
                    emit(cli.json, &r, &csv)
                }
                _ => {
                    let csv = reference_table_csv(*g_max, *sigma_w, *states)?;
                    write_atomic(&cli.out, "drift_budget.csv", csv.as_bytes())?;
                    let rows: Vec<_> = softtrellis::analysis::reference_runs()
                        .iter()
                        .map(|run| drift_budget(run.eta, run.n_steps, *g_max, *sigma_w, *states).map(|r| (run.label, r)))
                        .collect::<Result<_, _>>()?;
                    emit(cli.json, &rows, &csv)
                }
            }
        }
        Command::McBracket { layer, samples, sigma_grid, task, inputs, exhaustive } => {
            let spec = d.teacher.clone().unwrap_or(TeacherSpec { seed: cli.seed, ..TeacherSpec::default() });
            let teacher = ToyModel::teacher(&spec)?;
            let config = trellis(&d)?;
            let loss = match task.as_str() {
                "kl" => TaskLoss::Kl,
                "logit-mse" => TaskLoss::LogitMse,
                other => bail!("unknown task loss {other:?} (kl | logit-mse)"),
            };
            let task = TaskSpec { inputs: gaussian_inputs(*inputs, teacher.input_dim(), cli.seed, Stream::Heldout), loss };
            let r = mc_bracket(&teacher, *layer, &config, sigma_grid, *samples, cli.seed, &task)?;
            write_atomic(&cli.out, "mc_bracket_samples.csv", r.samples_csv().as_bytes())?;
            let gap = if *exhaustive { Some(oracle_gap_exhaustive(&teacher, *layer, &config, cli.seed, &task)?) } else { None };
            #[derive(Serialize)]
            struct Summary<'a> {
                sigma_grid: &'a [f64],
                per_sigma_best: &'a [f64],
                global_best: f64,
                best_sigma: f64,
                loss_fp: f64,
                loss_ptq: f64,
                lower_bound_on_gap: f64,
                oracle_gap: Option<softtrellis::analysis::OracleGap>,
            }
            let summary = Summary {
                sigma_grid: &r.sigma_grid,
                per_sigma_best: &r.per_sigma_best,
                global_best: r.global_best,
                best_sigma: r.best_sigma,
                loss_fp: r.loss_fp,
                loss_ptq: r.loss_ptq,
                lower_bound_on_gap: r.lower_bound_on_gap,
                oracle_gap: gap,
            };
            write_atomic(&cli.out, "mc_bracket.json", to_json(&summary)?.as_bytes())?;
            let mut text = String::from("sigma,best_loss\n");
            for (s, b) in r.sigma_grid.iter().zip(&r.per_sigma_best) {
                text.push_str(&format!("{s:e},{b:.12e}\n"));
            }
            text.push_str(&format!(
                "# loss_ptq {:.12e}, best {:.12e} at sigma {:e}, gap lower bound {:.6e}\n",
                r.loss_ptq, r.global_best, r.best_sigma, r.lower_bound_on_gap
            ));
            if let Some(g) = gap {
                text.push_str(&format!("# exhaustive delta* {:.6e}, tax {:.6e}\n", g.delta_star, g.tax));
            }
            emit(cli.json, &summary, &text)
        }
        Command::Bootstrap { input, n_boot, confidence, aggregate } => {
            let text = std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
            let (values, weights) = parse_windows(&text)?;
            let agg = match aggregate.as_str() {
                "mean" => Aggregate::Mean,
                "perplexity" => Aggregate::Perplexity,
                other => bail!("unknown aggregate {other:?} (mean | perplexity)"),
            };
            let r = bootstrap_ci(&values, weights.as_deref(), agg, *n_boot, *confidence, cli.seed)?;
            write_atomic(&cli.out, "bootstrap.json", to_json(&r)?.as_bytes())?;
            let text = format!(
                "point {:.6}  sigma {:.6}  {:.0}% CI [{:.6}, {:.6}]  (n_boot {})\n",
                r.point,
                r.sigma,
                100.0 * r.confidence,
                r.ci_low,
                r.ci_high,
                r.n_boot
            );
            emit(cli.json, &r, &text)
        }
        Command::Bench { block_len, states, chunk, n_chunks, temperature, repeats, warmup, multi_worker } => {
            let config = BenchConfig {
                block_len: *block_len,
                num_states: *states,
                chunk: *chunk,
                n_chunks: *n_chunks,
                temperature: *temperature,
                seed: cli.seed,
            };
            let options = BenchOptions { n_repeats: *repeats, warmup: *warmup, multi_worker: *multi_worker };
            let results = run_bench_with(&[config], &options)?;
            let name = if *multi_worker { "bench_multi_worker.csv" } else { "bench.csv" };
            write_atomic(&cli.out, name, to_csv(&results).as_bytes())?;
            emit(cli.json, &results, &to_table(&results))
        }
    }
}

/// Window values, one per line, optionally followed by `,weight`.
fn parse_windows(text: &str) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    let mut values = Vec::new();
    let mut weights = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let first = fields.next().unwrap_or("");
        let Ok(v) = first.parse::<f64>() else {
            if values.is_empty() && i == 0 {
                continue;
            }
            bail!("line {}: not a number: {first:?}", i + 1);
        };
        values.push(v);
        if let Some(w) = fields.next() {
            weights.push(w.parse::<f64>().with_context(|| format!("line {}: bad weight", i + 1))?);
        }
    }
    match weights.len() {
        0 => Ok((values, None)),
        n if n == values.len() => Ok((values, Some(weights))),
        _ => bail!("either every line or no line must carry a weight"),
    }
}

#[derive(Serialize)]
struct Sidecar {
    trellis: TrellisParams,
    trellis_fingerprint: String,
    snapshot_fingerprint: String,
    incoherence_seed: u64,
    shape: (usize, usize),
    padded_shape: (usize, usize),
    n_weights: usize,
    distortion: f64,
    mse: f64,
    payload_bits_per_weight: f64,
    file_bytes: usize,
    file_bits_per_weight: f64,
}

fn quantize(cli: &Cli, d: &RunDescriptor, input: &Path) -> Result<()> {
    let bytes = std::fs::read(input).with_context(|| format!("reading {}", input.display()))?;
    let w = matrix_from_bytes(&bytes).with_context(|| format!("parsing {}", input.display()))?;
    let config = trellis(d)?;
    let (q, stats) = quantize_matrix(&w, &config, cli.seed)?;
    let snapshot = q.to_bytes();
    let stem = file_stem(input)?;
    let sidecar = Sidecar {
        trellis: *config.params(),
        trellis_fingerprint: hex(config.fingerprint()),
        snapshot_fingerprint: hex(q.fingerprint()),
        incoherence_seed: q.incoherence_seed(),
        shape: q.shape(),
        padded_shape: q.padded_shape(),
        n_weights: stats.n_weights,
        distortion: stats.distortion,
        mse: stats.mse,
        payload_bits_per_weight: stats.bits_per_weight,
        file_bytes: snapshot.len(),
        file_bits_per_weight: 8.0 * snapshot.len() as f64 / stats.n_weights as f64,
    };
    write_atomic(&cli.out, &format!("{stem}.stq"), &snapshot)?;
    write_atomic(&cli.out, &format!("{stem}.stq.json"), to_json(&sidecar)?.as_bytes())?;
    let text = format!(
        "{stem}: {}x{} -> {} bytes, {:.4} bpw payload, mse {:.6e}, fingerprint {}\n",
        sidecar.shape.0, sidecar.shape.1, sidecar.file_bytes, sidecar.payload_bits_per_weight, sidecar.mse, sidecar.snapshot_fingerprint
    );
    emit(cli.json, &sidecar, &text)
}

#[derive(Serialize)]
struct OvershootSummaryRow {
    seed: u64,
    naive_final: f64,
    skip_high_t_final: f64,
    skip_wins: bool,
}

#[derive(Serialize)]
struct OvershootSummary {
    rows: Vec<OvershootSummaryRow>,
    skip_win_fraction: f64,
}

fn overshoot(cli: &Cli, d: &RunDescriptor, n_seeds: u64, layer: usize, steps: usize, eta: f64, t_end: f64) -> Result<()> {
    if n_seeds == 0 {
        bail!("need at least one seed");
    }
    let config = trellis(d)?;
    let spec = d.teacher.clone().unwrap_or_default();
    let mut base = d.qat.clone().unwrap_or_else(|| {
        let mut c = QatRunConfig::new(eta, AnnealSchedule::naive(t_end, steps.max(1)).expect("valid schedule"), cli.seed);
        c.n_steps = steps;
        c
    });
    base.bcjr_impl = cli.bcjr_impl;
    let t_end = base.schedule.t_end();
    let mut rows = Vec::new();
    for seed in cli.seed..cli.seed + n_seeds {
        eprintln!("overshoot: seed {seed}");
        let run = overshoot_pair(&spec, layer, &base, t_end, &config, seed)?;
        write_atomic(&cli.out, &format!("overshoot/seed{seed}_naive.csv"), run.naive.to_csv().as_bytes())?;
        write_atomic(&cli.out, &format!("overshoot/seed{seed}_skip_high_t.csv"), run.skip_high_t.to_csv().as_bytes())?;
        rows.push(OvershootSummaryRow {
            seed,
            naive_final: run.naive.final_checkpoint().hardened_loss,
            skip_high_t_final: run.skip_high_t.final_checkpoint().hardened_loss,
            skip_wins: run.skip_wins(),
        });
    }
    let wins = rows.iter().filter(|r| r.skip_wins).count();
    let summary = OvershootSummary { skip_win_fraction: wins as f64 / rows.len() as f64, rows };
    let mut csv = String::from("seed,naive_final_hardened,skip_high_t_final_hardened,skip_wins\n");
    for r in &summary.rows {
        csv.push_str(&format!("{},{:.12e},{:.12e},{}\n", r.seed, r.naive_final, r.skip_high_t_final, r.skip_wins));
    }
    write_atomic(&cli.out, "overshoot/summary.csv", csv.as_bytes())?;
    let text = format!(
        "{csv}# skip-high-T final hardened loss beats naive on {wins}/{} seeds ({:.2})\n",
        summary.rows.len(),
        summary.skip_win_fraction
    );
    emit(cli.json, &summary, &text)
}
