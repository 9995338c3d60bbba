//! Task sampling strategies for multi-task training.
//!
//! Every strategy turns per-task statistics (training-set sizes, or dev
//! losses for [`Strategy::Loss`]) into a probability vector `p_t`. Batches are
//! then drawn task-by-task from that vector. Probabilities are refreshed once
//! per epoch through [`SamplerState::on_epoch_end`].

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Exponent used by [`Strategy::Power`].
pub const POWER_EXPONENT: f64 = 0.75;
/// Per-task floor applied to dev losses by [`Strategy::Loss`].
pub const LOSS_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Uniform,
    Proportional,
    #[serde(rename = "logprop")]
    LogProportional,
    SquareRoot,
    Power,
    Annealed,
    Inverse,
    Loss,
}

impl Strategy {
    pub const ALL: [Strategy; 8] = [
        Strategy::Uniform,
        Strategy::Proportional,
        Strategy::LogProportional,
        Strategy::SquareRoot,
        Strategy::Power,
        Strategy::Annealed,
        Strategy::Inverse,
        Strategy::Loss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Uniform => "uniform",
            Strategy::Proportional => "proportional",
            Strategy::LogProportional => "logprop",
            Strategy::SquareRoot => "squareroot",
            Strategy::Power => "power",
            Strategy::Annealed => "annealed",
            Strategy::Inverse => "inverse",
            Strategy::Loss => "loss",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = SamplerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s.to_ascii_lowercase())
            .ok_or_else(|| SamplerError::UnknownStrategy(s.to_string()))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error("no tasks to sample from")]
    NoTasks,
    #[error("task {0} has training size 0")]
    EmptyTask(usize),
    #[error("loss strategy needs dev losses before sampling")]
    MissingDevLosses,
    #[error("expected {expected} dev losses, got {got}")]
    LossCount { expected: usize, got: usize },
    #[error("dev loss for task {0} is negative or non-finite")]
    BadLoss(usize),
    #[error("annealing exponent {0} outside (0, 1]")]
    BadAlpha(f64),
    #[error("unknown sampling strategy '{0}'")]
    UnknownStrategy(String),
}

/// Linear decay of the annealing exponent.
///
/// `alpha(epoch) = max(alpha_min, 1 - (epoch - 1) / epochs)`, epochs counted from 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub alpha_min: f64,
    pub epochs: usize,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        AnnealSchedule {
            alpha_min: 0.1,
            epochs: 20,
        }
    }
}

impl AnnealSchedule {
    pub fn alpha_at(&self, epoch: usize) -> f64 {
        let decayed = 1.0 - (epoch.saturating_sub(1)) as f64 / self.epochs.max(1) as f64;
        decayed.max(self.alpha_min)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerState {
    pub strategy: Strategy,
    pub sizes: Vec<usize>,
    pub dev_losses: Option<Vec<f64>>,
    /// 1-based epoch index.
    pub epoch: usize,
    pub alpha: f64,
    pub schedule: AnnealSchedule,
}

impl SamplerState {
    pub fn new(strategy: Strategy, sizes: Vec<usize>) -> Result<Self, SamplerError> {
        Self::with_schedule(strategy, sizes, AnnealSchedule::default())
    }

    pub fn with_schedule(
        strategy: Strategy,
        sizes: Vec<usize>,
        schedule: AnnealSchedule,
    ) -> Result<Self, SamplerError> {
        if sizes.is_empty() {
            return Err(SamplerError::NoTasks);
        }
        if let Some(t) = sizes.iter().position(|&d| d == 0) {
            return Err(SamplerError::EmptyTask(t));
        }
        Ok(SamplerState {
            strategy,
            sizes,
            dev_losses: None,
            epoch: 1,
            alpha: schedule.alpha_at(1),
            schedule,
        })
    }

    /// Pins the annealing exponent, bypassing the schedule.
    pub fn with_alpha(mut self, alpha: f64) -> Result<Self, SamplerError> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(SamplerError::BadAlpha(alpha));
        }
        self.alpha = alpha;
        Ok(self)
    }

    pub fn with_dev_losses(mut self, losses: Vec<f64>) -> Result<Self, SamplerError> {
        self.set_dev_losses(losses)?;
        Ok(self)
    }

    fn set_dev_losses(&mut self, losses: Vec<f64>) -> Result<(), SamplerError> {
        if losses.len() != self.sizes.len() {
            return Err(SamplerError::LossCount {
                expected: self.sizes.len(),
                got: losses.len(),
            });
        }
        if let Some(t) = losses.iter().position(|l| !l.is_finite() || *l < 0.0) {
            return Err(SamplerError::BadLoss(t));
        }
        self.dev_losses = Some(losses);
        Ok(())
    }

    pub fn num_tasks(&self) -> usize {
        self.sizes.len()
    }

    /// Analytic `p_t` for the current state.
    pub fn probabilities(&self) -> Result<Vec<f64>, SamplerError> {
        let sizes = self.sizes.iter().map(|&d| d as f64);
        let weights: Vec<f64> = match self.strategy {
            Strategy::Uniform => vec![1.0; self.sizes.len()],
            Strategy::Proportional => sizes.collect(),
            // log(1) = 0 would starve one-example tasks
            Strategy::LogProportional => sizes.map(|d| d.max(2.0).ln()).collect(),
            Strategy::SquareRoot => sizes.map(f64::sqrt).collect(),
            Strategy::Power => sizes.map(|d| d.powf(POWER_EXPONENT)).collect(),
            Strategy::Annealed => {
                if !(self.alpha > 0.0 && self.alpha <= 1.0) {
                    return Err(SamplerError::BadAlpha(self.alpha));
                }
                sizes.map(|d| d.powf(self.alpha)).collect()
            }
            Strategy::Inverse => sizes.map(|d| 1.0 / d).collect(),
            Strategy::Loss => {
                let losses = self.dev_losses.as_ref().ok_or(SamplerError::MissingDevLosses)?;
                losses.iter().map(|&l| l.max(LOSS_FLOOR)).collect()
            }
        };
        let total: f64 = weights.iter().sum();
        Ok(weights.into_iter().map(|w| w / total).collect())
    }

    /// Draws one task index with probability `p_t`.
    pub fn draw_task<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<usize, SamplerError> {
        let p = self.probabilities()?;
        Ok(draw_from(&p, rng))
    }

    /// Advances to the next epoch: updates the annealing exponent and, for the
    /// loss strategy, replaces the dev losses.
    pub fn on_epoch_end(&mut self, new_dev_losses: Option<Vec<f64>>) -> Result<(), SamplerError> {
        self.epoch += 1;
        if self.strategy == Strategy::Annealed {
            self.alpha = self.schedule.alpha_at(self.epoch);
        }
        if let Some(losses) = new_dev_losses {
            if self.strategy == Strategy::Loss {
                self.set_dev_losses(losses)?;
            }
        }
        Ok(())
    }
}

/// Inverse-CDF draw over a normalized probability vector.
pub fn draw_from<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        cum += pi;
        if u < cum {
            return i;
        }
    }
    p.len() - 1
}
