use serde::{Deserialize, Serialize};

use super::{AuctionError, LotGrid, ReservePrice};

/// Slack allowed when a fractional quantity is compared to a requirement.
const QUANTITY_SLACK: f64 = 1e-9;

/// Per-lot, per-unit price vector with a maximum-quantity requirement.
///
/// Used both for submitted bids and for private valuations. Lots lying
/// entirely beyond the requirement carry `None` ("not demanded").
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub prices: Vec<Option<f64>>,
    pub requirement: u64,
}

/// A submitted volume-discount bid.
pub type BidSchedule = Schedule;
/// A consumer's private willingness to buy, in the same shape as a bid.
pub type ValuationSchedule = Schedule;

impl Schedule {
    /// Schedule demanding every lot of the grid.
    pub fn full(prices: Vec<f64>, grid: &LotGrid) -> Self {
        Self {
            prices: prices.into_iter().map(Some).collect(),
            requirement: grid.total_units(),
        }
    }

    /// Schedule demanding only the leading lots that `requirement` reaches.
    ///
    /// `prices` may be shorter than the grid; trailing lots are marked as not
    /// demanded.
    pub fn with_requirement(prices: &[f64], requirement: u64, grid: &LotGrid) -> Self {
        let lots = (0..grid.lot_count())
            .map(|j| {
                if grid.lot_start(j) < requirement {
                    prices.get(j).copied()
                } else {
                    None
                }
            })
            .collect();
        Self {
            prices: lots,
            requirement,
        }
    }

    /// Number of leading lots that carry a price.
    pub fn demanded_lots(&self) -> usize {
        self.prices.iter().take_while(|p| p.is_some()).count()
    }

    /// Dense price vector with non-demanded lots replaced by `fill`.
    pub fn dense(&self, fill: f64) -> Vec<f64> {
        self.prices.iter().map(|p| p.unwrap_or(fill)).collect()
    }

    /// Total value of the first `q` units (pro-rata inside a lot).
    pub fn value(&self, q: f64, grid: &LotGrid) -> Result<f64, AuctionError> {
        schedule_value(self, q, grid)
    }
}

/// Sum over the first `q` units of the per-unit price of each unit's lot.
///
/// Fractional `q` is valued pro-rata within its lot.
pub fn schedule_value(s: &Schedule, q: f64, grid: &LotGrid) -> Result<f64, AuctionError> {
    if !(q >= 0.0) {
        return Err(AuctionError::InvalidQuantity { quantity: q });
    }
    let requirement = s.requirement as f64;
    if q > requirement * (1.0 + QUANTITY_SLACK) + QUANTITY_SLACK {
        return Err(AuctionError::DemandExceeded {
            quantity: q,
            requirement: s.requirement,
        });
    }
    let q = q.min(requirement);
    let mut value = 0.0;
    for j in 0..grid.lot_count() {
        let start = grid.lot_start(j) as f64;
        if q <= start {
            break;
        }
        let taken = (q - start).min(grid.lot_width(j) as f64);
        match s.prices.get(j).copied().flatten() {
            Some(price) => value += price * taken,
            None => return Err(AuctionError::NotDemanded { lot: j + 1 }),
        }
    }
    Ok(value)
}

/// Checks that `bid` is expressible on `grid` and respects the reserve.
///
/// Lots are reported 1-based in errors.
pub fn validate_bid(bid: &Schedule, reserve: ReservePrice, grid: &LotGrid) -> Result<(), AuctionError> {
    if bid.prices.len() != grid.lot_count() {
        return Err(AuctionError::LotCountMismatch {
            expected: grid.lot_count(),
            found: bid.prices.len(),
        });
    }
    let m = grid.total_units();
    if bid.requirement > m || (bid.requirement != m && bid.requirement % grid.lot_size() != 0) {
        return Err(AuctionError::MisalignedRequirement {
            requirement: bid.requirement,
            lot_size: grid.lot_size(),
        });
    }
    let mut previous: Option<f64> = None;
    for (j, price) in bid.prices.iter().enumerate() {
        let demanded = grid.lot_start(j) < bid.requirement;
        match (demanded, price) {
            (true, Some(p)) => {
                if !p.is_finite() {
                    return Err(AuctionError::NonFinitePrice { lot: j + 1 });
                }
                if let Some(prev) = previous {
                    if *p > prev {
                        return Err(AuctionError::NonMonotone { lot: j + 1 });
                    }
                }
                previous = Some(*p);
            }
            (false, None) => {}
            (true, None) | (false, Some(_)) => {
                return Err(AuctionError::DemandFlagMismatch { lot: j + 1 });
            }
        }
    }
    for (j, price) in bid.prices.iter().enumerate() {
        if let Some(p) = price {
            if *p < reserve.get() {
                return Err(AuctionError::BelowReserve {
                    lot: j + 1,
                    price: *p,
                    reserve: reserve.get(),
                });
            }
        }
    }
    Ok(())
}
