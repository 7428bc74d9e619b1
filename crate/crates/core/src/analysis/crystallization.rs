//! Deviation of the soft codeword from the Viterbi codeword as `T → 0`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::bcjr::{soft_quantize_with, BcjrImpl};
use crate::error::{Error, Result};
use crate::seeds::{self, Stream};
use crate::trellis::TrellisConfig;
use crate::viterbi::{decision_margin, viterbi_encode};

/// `{1, 10⁻¹, …, 10⁻⁴}`.
pub const DEFAULT_T_GRID: [f64; 5] = [1.0, 1e-1, 1e-2, 1e-3, 1e-4];

/// Standard-normal blocks whose decision margin exceeds `margin`, drawn by
/// rejection from block stream `seed`.
pub fn margin_checked_blocks(config: &TrellisConfig, count: usize, margin: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(count);
    let mut index = 0u64;
    while out.len() < count {
        if index > 1000 * (count as u64 + 1) {
            return Err(Error::DegenerateInput(format!("too few blocks with margin > {margin}")));
        }
        let mut rng = seeds::rng(seed, Stream::Block, index);
        index += 1;
        let w: Vec<f64> = (0..config.block_len()).map(|_| rng.sample(StandardNormal)).collect();
        if decision_margin(&w, config)? > margin {
            out.push(w);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrystallizationRow {
    pub temperature: f64,
    /// Max over blocks of max-abs(soft − Viterbi).
    pub max_dev: f64,
    pub mean_dev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrystallizationReport {
    pub rows: Vec<CrystallizationRow>,
    pub n_blocks: usize,
    /// Blocks whose deviation never increases along the grid.
    pub monotone_blocks: usize,
}

impl CrystallizationReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("T,max_abs_dev,mean_abs_dev\n");
        for r in &self.rows {
            s.push_str(&format!("{:e},{:.6e},{:.6e}\n", r.temperature, r.max_dev, r.mean_dev));
        }
        s
    }

    pub fn final_max_dev(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.max_dev)
    }
}

/// Sweeps `grid` (largest temperature first) over `blocks`.
pub fn crystallization(
    blocks: &[Vec<f64>],
    grid: &[f64],
    config: &TrellisConfig,
    imp: BcjrImpl,
) -> Result<CrystallizationReport> {
    if blocks.is_empty() || grid.is_empty() {
        return Err(Error::ParameterOutOfRange("need at least one block and one temperature".into()));
    }
    let mut dev = vec![vec![0.0; grid.len()]; blocks.len()];
    for (b, w) in blocks.iter().enumerate() {
        let hard = viterbi_encode(w, config)?.codeword;
        for (j, &t) in grid.iter().enumerate() {
            let soft = soft_quantize_with(imp, w, t, config)?.soft_codeword;
            dev[b][j] = soft.iter().zip(&hard).map(|(s, h)| (s - h).abs()).fold(0.0, f64::max);
        }
    }
    let rows = grid
        .iter()
        .enumerate()
        .map(|(j, &t)| CrystallizationRow {
            temperature: t,
            max_dev: dev.iter().map(|d| d[j]).fold(0.0, f64::max),
            mean_dev: dev.iter().map(|d| d[j]).sum::<f64>() / blocks.len() as f64,
        })
        .collect();
    let monotone_blocks = dev.iter().filter(|d| d.windows(2).all(|p| p[1] <= p[0])).count();
    Ok(CrystallizationReport { rows, n_blocks: blocks.len(), monotone_blocks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trellis::Topology;

    #[test]
    fn crystallizes_on_margin_checked_blocks() {
        let cfg = TrellisConfig::build(16, 2, 2, 0, Topology::ShiftRegister).unwrap();
        let blocks = margin_checked_blocks(&cfg, 10, 1e-2, 0).unwrap();
        assert!(blocks.iter().all(|w| decision_margin(w, &cfg).unwrap() > 1e-2));
        let r = crystallization(&blocks, &DEFAULT_T_GRID, &cfg, BcjrImpl::Fused).unwrap();
        assert!(r.final_max_dev() <= 1e-6);
        assert_eq!(r.to_csv().lines().count(), 6);
        assert_eq!(r, crystallization(&blocks, &DEFAULT_T_GRID, &cfg, BcjrImpl::Fused).unwrap());
    }
}
