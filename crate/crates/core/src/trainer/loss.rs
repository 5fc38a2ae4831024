use serde::{Deserialize, Serialize};

use super::{LagrangeState, Variant};

/// Batch-mean statistics that enter the loss. Money amounts throughout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub revenue: f64,
    pub nsw: f64,
    /// Mean regret of each consumer over the batch.
    pub regret: Vec<f64>,
    /// Mean envy of each consumer over the batch.
    pub envy: Vec<f64>,
    /// Mean unweighted business hinge.
    pub business: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyWeights {
    pub regret: f64,
    pub envy: f64,
    pub business: f64,
}

/// Each active term of the loss; `total` is their sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub objective: f64,
    pub regret_penalty: f64,
    pub regret_lagrangian: f64,
    pub envy_penalty: f64,
    pub envy_lagrangian: f64,
    pub business: f64,
    pub total: f64,
}

pub fn composite_loss(variant: Variant, stats: &BatchStats, lagrange: &LagrangeState, rho: &PenaltyWeights) -> LossTerms {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let sq = |a: &[f64]| a.iter().map(|x| x * x).sum::<f64>();
    let mut t = LossTerms {
        objective: match variant {
            Variant::FcOptimal => -stats.revenue,
            Variant::ConsumerOptimal => stats.revenue,
            Variant::Nsw | Variant::NswEnvy => -stats.nsw,
        },
        regret_penalty: rho.regret * sq(&stats.regret),
        regret_lagrangian: dot(&lagrange.regret, &stats.regret),
        ..LossTerms::default()
    };
    if variant.uses_business() {
        t.business = rho.business * stats.business;
    }
    if variant.uses_envy() {
        t.envy_penalty = rho.envy * sq(&stats.envy);
        t.envy_lagrangian = dot(&lagrange.envy, &stats.envy);
    }
    t.total = t.objective + t.regret_penalty + t.regret_lagrangian + t.envy_penalty + t.envy_lagrangian + t.business;
    t
}
