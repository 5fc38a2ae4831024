//! Experiment scenarios: lot grid, valuation distribution, consumer discount
//! archetypes and requirements.

use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auction::{validate_bid, AuctionError, LotGrid, ReservePrice, Schedule};
use crate::mechanism::ScenarioFingerprint;
use crate::trainer::BusinessConstraint;

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error(transparent)]
    Auction(#[from] AuctionError),
    #[error("unsupported scenario version {0}")]
    UnsupportedVersion(u32),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ValuationDistribution {
    Uniform { low: f64, high: f64 },
}

impl ValuationDistribution {
    pub fn high(&self) -> f64 {
        match *self {
            Self::Uniform { high, .. } => high,
        }
    }

    pub fn low(&self) -> f64 {
        match *self {
            Self::Uniform { low, .. } => low,
        }
    }

    pub fn id(&self) -> String {
        match *self {
            Self::Uniform { low, high } => format!("uniform({low},{high})"),
        }
    }
}

/// Discount applied to the units `start..=end` (1-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscountRange {
    pub start: u64,
    pub end: u64,
    pub discount: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Archetype {
    pub name: String,
    pub ranges: Vec<DiscountRange>,
}

impl Archetype {
    fn from_breaks(name: &str, m: u64, breaks: &[(u64, f64)]) -> Self {
        let mut ranges = Vec::with_capacity(breaks.len());
        for (idx, &(start, discount)) in breaks.iter().enumerate() {
            let end = breaks.get(idx + 1).map_or(m, |&(next, _)| next - 1);
            ranges.push(DiscountRange { start, end, discount });
        }
        Self {
            name: name.into(),
            ranges,
        }
    }

    /// Discount of every lot; ranges are aligned to the grid.
    pub fn lot_discounts(&self, grid: &LotGrid) -> Vec<f64> {
        (0..grid.lot_count())
            .map(|j| {
                let first = grid.lot_start(j) + 1;
                self.ranges
                    .iter()
                    .find(|r| r.start <= first && first <= r.end)
                    .map_or(0.0, |r| r.discount)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub version: u32,
    pub units: u64,
    pub consumers: usize,
    pub lots: usize,
    pub reserve: f64,
    pub valuation: ValuationDistribution,
    pub archetypes: Vec<Archetype>,
    pub requirements: Vec<u64>,
    #[serde(default)]
    pub business: Vec<BusinessConstraint>,
    pub seed: u64,
}

/// 1000 units in 20 lots, five consumers with deepening discounts, base
/// prices uniform on [3.5, 4.5] and a reserve of 3.
pub fn default_scenario() -> Scenario {
    let m = 1000;
    let archetypes = vec![
        Archetype::from_breaks("C1", m, &[(1, 0.0)]),
        Archetype::from_breaks("C2", m, &[(1, 0.0), (501, 0.05)]),
        Archetype::from_breaks("C3", m, &[(1, 0.0), (301, 0.03), (601, 0.06)]),
        Archetype::from_breaks("C4", m, &[(1, 0.0), (251, 0.02), (501, 0.04), (751, 0.06)]),
        Archetype::from_breaks("C5", m, &[(1, 0.0), (201, 0.02), (401, 0.04), (601, 0.06), (801, 0.08)]),
    ];
    Scenario {
        version: SCENARIO_VERSION,
        units: m,
        consumers: 5,
        lots: 20,
        reserve: 3.0,
        valuation: ValuationDistribution::Uniform { low: 3.5, high: 4.5 },
        archetypes,
        requirements: vec![m; 5],
        business: Vec::new(),
        seed: 2024,
    }
}

impl Scenario {
    pub fn grid(&self) -> Result<LotGrid, ScenarioError> {
        Ok(LotGrid::new(self.units, self.lots)?)
    }

    pub fn reserve_price(&self) -> Result<ReservePrice, ScenarioError> {
        Ok(ReservePrice::new(self.reserve)?)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |msg: String| Err(ScenarioError::Invalid(msg));
        if self.version != SCENARIO_VERSION {
            return Err(ScenarioError::UnsupportedVersion(self.version));
        }
        let grid = self.grid()?;
        self.reserve_price()?;
        let (low, high) = (self.valuation.low(), self.valuation.high());
        if !(low.is_finite() && high.is_finite() && low < high) {
            return invalid(format!("valuation range [{low}, {high}] is empty"));
        }
        if low < self.reserve {
            return invalid(format!("valuation floor {low} is below the reserve {}", self.reserve));
        }
        if self.consumers == 0 || self.archetypes.len() != self.consumers || self.requirements.len() != self.consumers {
            return invalid(format!(
                "{} consumers need as many archetypes and requirements (got {} and {})",
                self.consumers,
                self.archetypes.len(),
                self.requirements.len()
            ));
        }
        for a in &self.archetypes {
            let mut next = 1;
            let mut last_discount = 0.0;
            for r in &a.ranges {
                if r.start != next || r.end < r.start || r.end > self.units {
                    return invalid(format!("archetype {} ranges do not tile [1, {}]", a.name, self.units));
                }
                if !grid.is_boundary(r.start - 1) || !grid.is_boundary(r.end) {
                    return invalid(format!("archetype {} range {}..{} is not lot aligned", a.name, r.start, r.end));
                }
                if !(0.0..1.0).contains(&r.discount) || r.discount < last_discount {
                    return invalid(format!("archetype {} discounts must be in [0, 1) and non-decreasing", a.name));
                }
                if low * (1.0 - r.discount) < self.reserve {
                    return invalid(format!(
                        "archetype {} can price below the reserve at the valuation floor",
                        a.name
                    ));
                }
                last_discount = r.discount;
                next = r.end + 1;
            }
            if next != self.units + 1 {
                return invalid(format!("archetype {} ranges do not tile [1, {}]", a.name, self.units));
            }
        }
        for &q in &self.requirements {
            if q > self.units || (q != self.units && q % grid.lot_size() != 0) {
                return Err(AuctionError::MisalignedRequirement {
                    requirement: q,
                    lot_size: grid.lot_size(),
                }
                .into());
            }
        }
        for c in &self.business {
            c.check(self.units, self.consumers).map_err(ScenarioError::Invalid)?;
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> ScenarioFingerprint {
        ScenarioFingerprint {
            units: self.units,
            consumers: self.consumers,
            lots: self.lots,
            reserve: self.reserve,
            value_high: self.valuation.high(),
            distribution: self.valuation.id(),
        }
    }

    /// Valuation profile for the given base prices, one per consumer.
    pub fn profile_from_bases(&self, bases: &[f64]) -> Result<Vec<Schedule>, ScenarioError> {
        let grid = self.grid()?;
        let reserve = self.reserve_price()?;
        bases
            .iter()
            .zip(&self.archetypes)
            .zip(&self.requirements)
            .map(|((&base, arch), &req)| {
                let prices: Vec<f64> = arch.lot_discounts(&grid).iter().map(|d| base * (1.0 - d)).collect();
                let s = Schedule::with_requirement(&prices, req, &grid);
                validate_bid(&s, reserve, &grid)?;
                Ok(s)
            })
            .collect()
    }

    /// Draws one truthful valuation profile.
    pub fn sample_profile<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<Schedule>, ScenarioError> {
        let bases = self.sample_bases(rng);
        self.profile_from_bases(&bases)
    }

    pub fn sample_bases<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let ValuationDistribution::Uniform { low, high } = self.valuation;
        let dist = Uniform::new_inclusive(low, high).expect("validated range");
        (0..self.consumers).map(|_| dist.sample(rng)).collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scenario serialises");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Self = serde_json::from_str(text).map_err(|e| ScenarioError::Invalid(format!("malformed scenario: {e}")))?;
        s.validate()?;
        Ok(s)
    }
}

/// Independent random streams derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Training = 2,
    Evaluation = 3,
    Restarts = 4,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Seed for a sub-task, mixed with splitmix64 so nearby inputs diverge.
pub fn derive_seed(seed: u64, stream: Stream, index: u64) -> u64 {
    let mut z = seed ^ (stream as u64).rotate_left(32) ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_scenario_is_valid() {
        let s = default_scenario();
        s.validate().unwrap();
        assert_eq!(s.grid().unwrap().lot_size(), 50);
    }

    #[test]
    fn archetype_prices() {
        let s = default_scenario();
        let p = s.profile_from_bases(&[4.2, 4.0, 4.0, 4.0, 3.5]).unwrap();
        assert_eq!(p[0].prices, vec![Some(4.2); 20]);
        let c2: Vec<f64> = p[1].dense(0.0);
        assert!(c2[..10].iter().all(|&x| x == 4.0));
        assert!(c2[10..].iter().all(|&x| (x - 3.8).abs() < 1e-12));
        let c5 = p[4].dense(0.0);
        assert!(c5[16..].iter().all(|&x| (x - 3.22).abs() < 1e-12));
        let top = s.profile_from_bases(&[4.5; 5]).unwrap();
        assert!(top[1].dense(0.0)[10..].iter().all(|&x| (x - 4.275).abs() < 1e-12));
    }

    #[test]
    fn flat_archetypes_copy_the_base() {
        let mut s = default_scenario();
        for a in &mut s.archetypes {
            for r in &mut a.ranges {
                r.discount = 0.0;
            }
        }
        let mut rng = stream_rng(5, Stream::Evaluation);
        let p = s.sample_profile(&mut rng).unwrap();
        for sched in p {
            let d = sched.dense(0.0);
            assert!(d.iter().all(|&x| x == d[0]));
        }
    }

    #[test]
    fn base_draws_average_the_midpoint() {
        let s = default_scenario();
        let mut rng = stream_rng(11, Stream::Training);
        let draws: Vec<f64> = (0..2000).flat_map(|_| s.sample_bases(&mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((mean - 4.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn json_round_trip_is_byte_identical() {
        let s = default_scenario();
        let text = s.to_json();
        let back = Scenario::from_json(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn validation_rejects_bad_scenarios() {
        let mut s = default_scenario();
        s.archetypes[1].ranges[1].start = 502;
        assert!(s.validate().is_err());
        let mut s = default_scenario();
        s.archetypes[2].ranges[2].discount = 0.01;
        assert!(s.validate().is_err());
        let mut s = default_scenario();
        s.valuation = ValuationDistribution::Uniform { low: 2.5, high: 4.5 };
        assert!(s.validate().is_err());
        let mut s = default_scenario();
        s.version = 7;
        assert_eq!(s.validate(), Err(ScenarioError::UnsupportedVersion(7)));
    }
}
