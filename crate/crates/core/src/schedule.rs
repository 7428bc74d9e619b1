//! Temperature annealing schedules.
//!
//! Exponential schedules interpolate geometrically,
//! `T_t = T₀ · (T_end / T₀)^(t / N)`, for `t ∈ {0, …, N}`; the endpoints are
//! returned exactly. The training loop samples `t = 1, …, N`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Highest starting temperature that still counts as skipping the high-T phase.
pub const SKIP_HIGH_T_MAX_T0: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScheduleKind {
    ExponentialNaive,
    ExponentialSkipHighT,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnealSchedule {
    #[serde(rename = "T0")]
    t0: f64,
    #[serde(rename = "T_end")]
    t_end: f64,
    n_steps: usize,
    kind: ScheduleKind,
}

impl AnnealSchedule {
    pub fn new(t0: f64, t_end: f64, n_steps: usize, kind: ScheduleKind) -> Result<Self> {
        let s = AnnealSchedule { t0, t_end, n_steps, kind };
        s.check()?;
        Ok(s)
    }

    /// Exponential anneal starting at `T₀ = 1`.
    pub fn naive(t_end: f64, n_steps: usize) -> Result<Self> {
        Self::new(1.0, t_end, n_steps, ScheduleKind::ExponentialNaive)
    }

    /// Exponential anneal starting at `T₀ = 0.3`.
    pub fn skip_high_t(t_end: f64, n_steps: usize) -> Result<Self> {
        Self::new(SKIP_HIGH_T_MAX_T0, t_end, n_steps, ScheduleKind::ExponentialSkipHighT)
    }

    pub fn constant(t: f64, n_steps: usize) -> Result<Self> {
        Self::new(t, t, n_steps, ScheduleKind::Constant)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let s: AnnealSchedule = serde_json::from_str(json).map_err(|e| Error::Format(e.to_string()))?;
        s.check()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("schedule serializes")
    }

    fn check(&self) -> Result<()> {
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !positive(self.t0) || !positive(self.t_end) {
            return Err(Error::NonPositiveTemperature(self.t0.min(self.t_end)));
        }
        if self.t_end > self.t0 {
            return Err(Error::ParameterOutOfRange(format!("T_end {} exceeds T0 {}", self.t_end, self.t0)));
        }
        if self.n_steps == 0 {
            return Err(Error::ParameterOutOfRange("n_steps must be at least 1".into()));
        }
        match self.kind {
            ScheduleKind::ExponentialSkipHighT if self.t0 > SKIP_HIGH_T_MAX_T0 + 1e-12 => Err(
                Error::ParameterOutOfRange(format!("skip-high-T schedule needs T0 <= 0.3, got {}", self.t0)),
            ),
            ScheduleKind::Constant if self.t0 != self.t_end => {
                Err(Error::ParameterOutOfRange("constant schedule needs T0 == T_end".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Temperature at step `t ∈ [0, n_steps]`.
    pub fn temperature_at(&self, t: usize) -> Result<f64> {
        if t > self.n_steps {
            return Err(Error::ParameterOutOfRange(format!("step {t} beyond {}", self.n_steps)));
        }
        Ok(match self.kind {
            ScheduleKind::Constant => self.t0,
            _ if t == 0 => self.t0,
            _ if t == self.n_steps => self.t_end,
            _ => self.t0 * (self.t_end / self.t0).powf(t as f64 / self.n_steps as f64),
        })
    }
}
