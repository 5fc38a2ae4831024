//! Training of the learned mechanism: misreport search for regret, envy and
//! business penalties, Lagrange multipliers and the outer Adam loop.

mod business;
mod loss;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use business::{business_penalty, BusinessConstraint, WIN_THRESHOLD};
pub use loss::{composite_loss, BatchStats, LossTerms, PenaltyWeights};
pub use train::{empirical_regret, loss_and_gradient, train, LogRow, LossGradient, LossInputs, TrainOutcome, Trainer};

use crate::mechanism::MechanismError;
use crate::regret::AscentConfig;
use crate::scenario::ScenarioError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid trainer configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },
    #[error(transparent)]
    Mechanism(MechanismError),
}

impl From<MechanismError> for TrainError {
    fn from(e: MechanismError) -> Self {
        match e {
            MechanismError::NonFinite(what) => TrainError::Divergence {
                step: 0,
                detail: format!("non-finite {what}"),
            },
            other => TrainError::Mechanism(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    FcOptimal,
    ConsumerOptimal,
    Nsw,
    NswEnvy,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::FcOptimal, Variant::ConsumerOptimal, Variant::Nsw, Variant::NswEnvy];

    pub fn uses_business(self) -> bool {
        matches!(self, Variant::Nsw | Variant::NswEnvy)
    }

    pub fn uses_envy(self) -> bool {
        self == Variant::NswEnvy
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::FcOptimal => "fc-optimal",
            Variant::ConsumerOptimal => "consumer-optimal",
            Variant::Nsw => "nsw",
            Variant::NswEnvy => "nsw-envy",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| TrainError::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub variant: Variant,
    /// Initial quadratic regret weight.
    pub rho_regret: f64,
    /// Factor applied to the regret weight every `rho_regret_interval` steps.
    pub rho_regret_growth: f64,
    pub rho_regret_interval: usize,
    pub rho_envy: f64,
    pub rho_business: f64,
    pub ascent: AscentConfig,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub multiplier_rate: f64,
    /// Overrides the scenario's constraints when set.
    pub business: Option<Vec<BusinessConstraint>>,
    /// Training tightens constraint floors by this fraction so evaluation lands inside them.
    pub business_margin: f64,
    pub seed: u64,
    /// Write a checkpoint every this many steps; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self::for_variant(Variant::Nsw)
    }
}

impl TrainerConfig {
    /// Defaults tuned per variant on the default scenario.
    pub fn for_variant(variant: Variant) -> Self {
        let base = Self {
            variant,
            rho_regret: 1.0,
            rho_regret_growth: 1.5,
            rho_regret_interval: 500,
            rho_envy: 1.0,
            rho_business: 1.0,
            ascent: AscentConfig::default(),
            learning_rate: 1e-3,
            batch_size: 64,
            steps: 5000,
            multiplier_rate: 0.01,
            business: None,
            business_margin: 0.1,
            seed: 2024,
            checkpoint_every: 0,
        };
        match variant {
            Variant::FcOptimal => Self {
                rho_regret: 0.1,
                multiplier_rate: 0.001,
                ..base
            },
            Variant::ConsumerOptimal => base,
            Variant::Nsw | Variant::NswEnvy => Self {
                rho_regret: 100.0,
                rho_envy: 100.0,
                rho_business: 10_000.0,
                multiplier_rate: 10.0,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let positive = [
            ("rho_regret_growth", self.rho_regret_growth),
            ("ascent.rate", self.ascent.rate),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(TrainError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("rho_regret", self.rho_regret),
            ("rho_envy", self.rho_envy),
            ("rho_business", self.rho_business),
            ("business_margin", self.business_margin),
            ("learning_rate", self.learning_rate),
            ("multiplier_rate", self.multiplier_rate),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(TrainError::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.ascent.steps == 0 || self.ascent.restarts == 0 {
            return Err(TrainError::Config("misreport search needs at least one step and one start".into()));
        }
        if self.batch_size == 0 || self.rho_regret_interval == 0 {
            return Err(TrainError::Config("batch size and regret interval must be positive".into()));
        }
        Ok(())
    }

    /// Regret weight in effect at `step`.
    pub fn rho_regret_at(&self, step: usize) -> f64 {
        self.rho_regret * self.rho_regret_growth.powi((step / self.rho_regret_interval) as i32)
    }
}

/// Non-negative multipliers on each consumer's regret and envy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagrangeState {
    pub regret: Vec<f64>,
    pub envy: Vec<f64>,
}

impl LagrangeState {
    pub fn new(consumers: usize) -> Self {
        Self {
            regret: vec![0.0; consumers],
            envy: vec![0.0; consumers],
        }
    }

    pub fn norm(&self) -> f64 {
        self.regret.iter().chain(&self.envy).map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// One projected ascent step on the multipliers. Envy multipliers move only
/// when `envy` is given.
pub fn lagrange_update(state: &LagrangeState, regret: &[f64], envy: Option<&[f64]>, rate: f64) -> LagrangeState {
    let step = |l: &[f64], g: &[f64]| l.iter().zip(g).map(|(l, g)| (l + rate * g).max(0.0)).collect();
    LagrangeState {
        regret: step(&state.regret, regret),
        envy: envy.map_or_else(|| state.envy.clone(), |e| step(&state.envy, e)),
    }
}
