use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LINEAR_BETA_START: f64 = 1e-4;
const LINEAR_BETA_END: f64 = 0.02;
const COSINE_OFFSET: f64 = 0.008;
const COSINE_MAX_BETA: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    LinearBeta,
    Cosine,
}

/// Cumulative signal-retention coefficients `alpha_bar[0..=T]`.
///
/// `alpha_bar[0] == 1`, strictly decreasing, every value in `(0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
    kind: ScheduleKind,
}

impl NoiseSchedule {
    pub fn build(kind: ScheduleKind, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        let betas: Vec<f64> = match kind {
            ScheduleKind::LinearBeta => (0..steps)
                .map(|s| {
                    if steps == 1 {
                        LINEAR_BETA_START
                    } else {
                        LINEAR_BETA_START
                            + (LINEAR_BETA_END - LINEAR_BETA_START) * s as f64
                                / (steps - 1) as f64
                    }
                })
                .collect(),
            ScheduleKind::Cosine => {
                let f = |t: usize| {
                    let x = (t as f64 / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
                    (x * std::f64::consts::FRAC_PI_2).cos().powi(2)
                };
                (1..=steps)
                    .map(|t| (1.0 - f(t) / f(t - 1)).min(COSINE_MAX_BETA))
                    .collect()
            }
        };
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        alpha_bar.push(1.0);
        for beta in betas {
            let prev = *alpha_bar.last().unwrap();
            alpha_bar.push(prev * (1.0 - beta));
        }
        Self::from_alpha_bar(kind, alpha_bar)
    }

    /// Wraps an explicit coefficient table after checking the invariants.
    pub fn from_alpha_bar(kind: ScheduleKind, alpha_bar: Vec<f64>) -> Result<Self> {
        if alpha_bar.len() < 2 {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        if alpha_bar[0] != 1.0 {
            return Err(Error::invalid("alpha_bar[0] must be exactly 1"));
        }
        for (t, w) in alpha_bar.windows(2).enumerate() {
            if !(w[1] < w[0]) || !(w[1] > 0.0) {
                return Err(Error::invalid(format!(
                    "alpha_bar must be strictly decreasing in (0, 1]; fails at t={}",
                    t + 1
                )));
            }
        }
        Ok(Self { alpha_bar, kind })
    }

    /// Number of steps `T`.
    pub fn steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub(crate) fn check_timestep(&self, t: usize) -> Result<()> {
        if t > self.steps() {
            Err(Error::invalid(format!(
                "timestep {t} outside schedule range [0, {}]",
                self.steps()
            )))
        } else {
            Ok(())
        }
    }

    /// Sub-samples the schedule to `active` steps with uniform stride, keeping
    /// both endpoints: step `k` of the result is step `round(k * T / active)`
    /// of `self`.
    pub fn strided(&self, active: usize) -> Result<Self> {
        let total = self.steps();
        if active == 0 || active > total {
            return Err(Error::invalid(format!(
                "active steps must be in [1, {total}], got {active}"
            )));
        }
        let alpha_bar = (0..=active)
            .map(|k| {
                let idx = (k as f64 * total as f64 / active as f64).round() as usize;
                self.alpha_bar[idx]
            })
            .collect();
        Self::from_alpha_bar(self.kind, alpha_bar)
    }
}
