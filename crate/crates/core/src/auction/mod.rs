//! Domain model of the volume-discount forward auction.
//!
//! A single seller offers `m` homogeneous units split into `k` lots. Each
//! consumer submits a non-increasing per-unit price per lot and a maximum
//! quantity. Everything here is a pure function of its inputs.

mod convert;
mod grid;
mod metrics;
mod schedule;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use convert::{convert_flat_to_lot, FlatBid, FlatConversion};
pub use grid::{LotGeometry, LotGrid};
pub use metrics::{
    consumer_utilities, consumer_utility, envy_profile, fc_revenue, fc_utility, nash_social_welfare,
    AuctionOutcome,
};
pub use schedule::{schedule_value, validate_bid, BidSchedule, Schedule, ValuationSchedule};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AuctionError {
    #[error("invalid lot grid: {lots} lots over {units} units")]
    InvalidGrid { units: u64, lots: usize },
    #[error("unit {unit} outside [1, {units}]")]
    UnitOutOfRange { unit: u64, units: u64 },
    #[error("quantity {quantity} is not a non-negative number")]
    InvalidQuantity { quantity: f64 },
    #[error("quantity {quantity} exceeds requirement {requirement}")]
    DemandExceeded { quantity: f64, requirement: u64 },
    #[error("lot {lot} is not demanded")]
    NotDemanded { lot: usize },
    #[error("expected {expected} lot prices, found {found}")]
    LotCountMismatch { expected: usize, found: usize },
    #[error("price of lot {lot} is not finite")]
    NonFinitePrice { lot: usize },
    #[error("price of lot {lot} rises above the previous lot")]
    NonMonotone { lot: usize },
    #[error("price {price} of lot {lot} is below the reserve {reserve}")]
    BelowReserve { lot: usize, price: f64, reserve: f64 },
    #[error("requirement {requirement} is not a multiple of the lot size {lot_size} or the total")]
    MisalignedRequirement { requirement: u64, lot_size: u64 },
    #[error("lot {lot} demand flag disagrees with the requirement")]
    DemandFlagMismatch { lot: usize },
    #[error("threshold {threshold} is not on a lot boundary (lot size {lot_size})")]
    MisalignedThreshold { threshold: u64, lot_size: u64 },
    #[error("expected {expected} consumers, found {found}")]
    ConsumerCountMismatch { expected: usize, found: usize },
    #[error("reserve price must be positive and finite, got {0}")]
    InvalidReserve(f64),
}

/// Announced per-unit floor below which the seller will not sell.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ReservePrice(f64);

impl ReservePrice {
    pub fn new(price: f64) -> Result<Self, AuctionError> {
        if price > 0.0 && price.is_finite() {
            Ok(Self(price))
        } else {
            Err(AuctionError::InvalidReserve(price))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for ReservePrice {
    type Error = AuctionError;

    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<ReservePrice> for f64 {
    fn from(r: ReservePrice) -> f64 {
        r.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserve_must_be_positive() {
        assert!(ReservePrice::new(3.0).is_ok());
        assert!(ReservePrice::new(0.0).is_err());
        assert!(ReservePrice::new(-1.0).is_err());
        assert!(ReservePrice::new(f64::INFINITY).is_err());
    }
}
