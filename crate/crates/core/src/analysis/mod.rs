//! Feasibility and significance tools: the drift budget, the exhaustive
//! oracle gap, the Monte Carlo oracle bracket, bootstrap confidence
//! intervals and the crystallization sweep.

mod bootstrap;
mod bracket;
mod crystallization;
mod drift;

pub use bootstrap::{bootstrap_ci, two_point_sigma, Aggregate, BootstrapResult, DEFAULT_CONFIDENCE, DEFAULT_N_BOOT};
pub use bracket::{
    mc_bracket, oracle_gap_exhaustive, task_loss, McBracketResult, McSample, OracleGap, TaskLoss, TaskSpec,
    DEFAULT_SIGMA_GRID, MAX_EXHAUSTIVE_CANDIDATES,
};
pub use crystallization::{
    crystallization, margin_checked_blocks, CrystallizationReport, CrystallizationRow, DEFAULT_T_GRID,
};
pub use drift::{
    drift_budget, r_voronoi, reference_runs, reference_table_csv, DriftBudgetReport, ReferenceRun,
    REFERENCE_TABLE_HEADER,
};
