//! `softtrellis` — quantize matrices and run the soft-trellis experiments.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use softtrellis::bcjr::BcjrImpl;

#[derive(Debug, Parser)]
#[command(name = "softtrellis", version, about = "Trellis-coded quantization with a finite-temperature soft quantizer")]
pub struct Cli {
    /// JSON run descriptor: {"trellis": {...}, "qat": {...}, "teacher": {...}}, every section optional.
    #[arg(long, global = true, value_name = "JSON")]
    pub config: Option<PathBuf>,
    /// Root seed; every random stream is derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Soft-quantizer implementation.
    #[arg(long = "bcjr-impl", global = true, value_name = "IMPL", default_value = "reference", value_parser = parse_impl)]
    pub bcjr_impl: BcjrImpl,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
    /// Print machine-readable JSON on standard output.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

fn parse_impl(s: &str) -> Result<BcjrImpl, String> {
    s.parse().map_err(|e: softtrellis::Error| e.to_string())
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a random Gaussian matrix in the matrix file format.
    RandomMatrix {
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        #[arg(long, default_value_t = 0.02)]
        sigma: f64,
        /// File name inside the output directory.
        #[arg(long, default_value = "matrix.stm")]
        name: String,
    },
    /// Viterbi-quantize a matrix file into a snapshot plus a JSON sidecar.
    Quantize {
        input: PathBuf,
    },
    /// Reconstruct a matrix file from a snapshot.
    Dequantize {
        snapshot: PathBuf,
    },
    /// Max-abs(soft − Viterbi) along a temperature grid on margin-checked blocks.
    Crystallize {
        #[arg(long, default_value_t = 100)]
        blocks: usize,
        /// Comma-separated temperatures, largest first.
        #[arg(long, value_delimiter = ',', default_values_t = [1.0, 1e-1, 1e-2, 1e-3, 1e-4])]
        t_grid: Vec<f64>,
        /// Minimum decision margin of accepted blocks.
        #[arg(long, default_value_t = 1e-2)]
        margin: f64,
    },
    /// Naive vs skip-high-T schedules on the same teacher, for several seeds.
    Overshoot {
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long, default_value_t = 0)]
        layer: usize,
        #[arg(long, default_value_t = 10)]
        steps: usize,
        #[arg(long, default_value_t = 2e-4)]
        eta: f64,
        #[arg(long, default_value_t = 0.05)]
        t_end: f64,
    },
    /// Drift-budget feasibility; without --eta/--n-steps prints the reference table.
    DriftBudget {
        #[arg(long, requires = "n_steps")]
        eta: Option<f64>,
        #[arg(long, requires = "eta")]
        n_steps: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        g_max: f64,
        #[arg(long, default_value_t = 1e-2)]
        sigma_w: f64,
        #[arg(long, default_value_t = 16)]
        states: usize,
    },
    /// Monte Carlo lower bound on the oracle gap of one teacher layer.
    McBracket {
        #[arg(long, default_value_t = 0)]
        layer: usize,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [1e-3, 5e-3, 1e-2, 5e-2])]
        sigma_grid: Vec<f64>,
        /// Task loss: kl or logit-mse.
        #[arg(long, default_value = "kl")]
        task: String,
        #[arg(long, default_value_t = 512)]
        inputs: usize,
        /// Also enumerate the exact oracle gap (tiny layers only).
        #[arg(long)]
        exhaustive: bool,
    },
    /// Bootstrap confidence interval of per-window values read from a file.
    Bootstrap {
        /// One value per line, optionally `value,weight`; a non-numeric first line is a header.
        input: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        n_boot: usize,
        #[arg(long, default_value_t = 0.95)]
        confidence: f64,
        /// mean or perplexity.
        #[arg(long, default_value = "mean")]
        aggregate: String,
    },
    /// Time the reference and fused soft quantizers.
    Bench {
        #[arg(long, default_value_t = 16)]
        block_len: usize,
        #[arg(long, default_value_t = 16)]
        states: usize,
        #[arg(long, default_value_t = 16)]
        chunk: usize,
        #[arg(long, default_value_t = 8)]
        n_chunks: usize,
        #[arg(long, default_value_t = 0.1)]
        temperature: f64,
        #[arg(long, default_value_t = 15)]
        repeats: usize,
        #[arg(long, default_value_t = 2)]
        warmup: usize,
        /// Spread chunks over all cores (reported separately from single-thread timings).
        #[arg(long)]
        multi_worker: bool,
    },
}

/// Errors that come from the numbers rather than from the invocation.
fn is_numerical(err: &anyhow::Error) -> bool {
    use softtrellis::Error as E;
    err.chain().any(|c| {
        matches!(
            c.downcast_ref::<E>(),
            Some(E::NonFiniteLoss { .. } | E::ParityFailure(_) | E::NanInput(_) | E::DegenerateInput(_))
        )
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_numerical(&e) { 2 } else { 1 })
        }
    }
}
