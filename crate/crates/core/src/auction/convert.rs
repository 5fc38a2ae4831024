//! Conversion of flat (retroactive) discount bids into lot schedules.
//!
//! A flat bid prices *every* unit at `price_below` while the quantity stays at
//! or under `threshold`, and at `price_above` once it exceeds the threshold.
//! The lot language prices units marginally, so a flat bid can only be matched
//! at lot boundaries. The converter takes the upper concave envelope of the
//! flat value at the boundaries (which keeps prices non-increasing), floors
//! prices at the reserve, and reports where the result departs from the flat
//! bid.

use serde::{Deserialize, Serialize};

use super::{schedule_value, AuctionError, LotGrid, ReservePrice, Schedule};

const EXACT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlatBid {
    /// Largest quantity still charged `price_below` on every unit.
    pub threshold: u64,
    pub price_below: f64,
    pub price_above: f64,
    pub requirement: u64,
}

impl FlatBid {
    /// Money the consumer is willing to pay for exactly `q` units.
    pub fn value(&self, q: f64) -> f64 {
        if q <= self.threshold as f64 {
            self.price_below * q
        } else {
            self.price_above * q
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatConversion {
    pub schedule: Schedule,
    /// Whether the lot schedule reproduces the flat value at every boundary.
    pub boundary_exact: bool,
    /// Largest `|lot value - flat value|` over whole quantities.
    pub max_discrepancy: f64,
    /// Quantity at which `max_discrepancy` occurs (smallest such quantity).
    pub worst_quantity: u64,
}

impl FlatConversion {
    pub fn discrepancy_at(&self, flat: &FlatBid, q: u64, grid: &LotGrid) -> Result<f64, AuctionError> {
        Ok(schedule_value(&self.schedule, q as f64, grid)? - flat.value(q as f64))
    }
}

pub fn convert_flat_to_lot(
    flat: &FlatBid,
    grid: &LotGrid,
    reserve: ReservePrice,
) -> Result<FlatConversion, AuctionError> {
    let m = grid.total_units();
    if flat.requirement > m || (flat.requirement != m && flat.requirement % grid.lot_size() != 0) {
        return Err(AuctionError::MisalignedRequirement {
            requirement: flat.requirement,
            lot_size: grid.lot_size(),
        });
    }
    if !grid.is_boundary(flat.threshold) || flat.threshold > flat.requirement {
        return Err(AuctionError::MisalignedThreshold {
            threshold: flat.threshold,
            lot_size: grid.lot_size(),
        });
    }
    if !(flat.price_below.is_finite() && flat.price_above.is_finite()) {
        return Err(AuctionError::NonFinitePrice { lot: 1 });
    }

    let demanded = (0..grid.lot_count())
        .take_while(|&j| grid.lot_start(j) < flat.requirement)
        .count();
    let mut xs = vec![0.0];
    for j in 0..demanded {
        xs.push(grid.lot_end(j).min(flat.requirement) as f64);
    }
    let ys: Vec<f64> = xs.iter().map(|&x| flat.value(x)).collect();
    let hull = upper_hull(&xs, &ys);

    let mut prices: Vec<f64> = Vec::with_capacity(demanded);
    for j in 0..demanded {
        let slope = (hull[j + 1] - hull[j]) / (xs[j + 1] - xs[j]);
        // collinear hull stretches can round up by an ulp
        let slope = prices.last().map_or(slope, |&prev| slope.min(prev));
        prices.push(slope.max(reserve.get()));
    }
    let schedule = Schedule::with_requirement(&prices, flat.requirement, grid);

    let mut boundary_exact = true;
    for &x in &xs {
        let diff = schedule_value(&schedule, x, grid)? - flat.value(x);
        if diff.abs() > EXACT_TOL * (1.0 + flat.value(x).abs()) {
            boundary_exact = false;
        }
    }
    let mut max_discrepancy = 0.0;
    let mut worst_quantity = 0;
    for q in 1..=flat.requirement {
        let diff = (schedule_value(&schedule, q as f64, grid)? - flat.value(q as f64)).abs();
        if diff > max_discrepancy {
            max_discrepancy = diff;
            worst_quantity = q;
        }
    }
    Ok(FlatConversion {
        schedule,
        boundary_exact,
        max_discrepancy,
        worst_quantity,
    })
}

/// Upper concave envelope of the points `(xs[i], ys[i])` (sorted by `x`),
/// evaluated back at every `xs[i]`.
fn upper_hull(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let mut vertices: Vec<usize> = Vec::with_capacity(xs.len());
    for i in 0..xs.len() {
        while vertices.len() >= 2 {
            let a = vertices[vertices.len() - 2];
            let b = vertices[vertices.len() - 1];
            // drop b when it lies on or below the chord a -> i
            let cross = (xs[b] - xs[a]) * (ys[i] - ys[a]) - (ys[b] - ys[a]) * (xs[i] - xs[a]);
            if cross >= 0.0 {
                vertices.pop();
            } else {
                break;
            }
        }
        vertices.push(i);
    }
    let mut out = vec![0.0; xs.len()];
    for w in vertices.windows(2) {
        let (a, b) = (w[0], w[1]);
        for i in a..=b {
            let t = (xs[i] - xs[a]) / (xs[b] - xs[a]);
            out[i] = ys[a] + t * (ys[b] - ys[a]);
        }
        out[a] = ys[a];
        out[b] = ys[b];
    }
    if vertices.len() == 1 {
        out[0] = ys[0];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auction::validate_bid;
    use proptest::prelude::*;

    fn r3() -> ReservePrice {
        ReservePrice::new(3.0).unwrap()
    }

    fn hundred_units_two_lots() -> LotGrid {
        LotGrid::new(100, 2).unwrap()
    }

    #[test]
    fn two_lot_discount_matches_boundaries() {
        let g = hundred_units_two_lots();
        let flat = FlatBid {
            threshold: 50,
            price_below: 5.25,
            price_above: 5.0,
            requirement: 100,
        };
        let c = convert_flat_to_lot(&flat, &g, r3()).unwrap();
        assert_eq!(c.schedule.prices, vec![Some(5.25), Some(4.75)]);
        assert!(c.boundary_exact);
        assert_eq!(schedule_value(&c.schedule, 100.0, &g).unwrap(), 500.0);
        assert_eq!(schedule_value(&c.schedule, 75.0, &g).unwrap(), 381.25);
        assert_eq!(flat.value(75.0), 375.0);
        assert_eq!(c.discrepancy_at(&flat, 75, &g).unwrap(), 6.25);
        // just past the threshold the flat bid drops to 5.0 on every unit
        assert_eq!(c.worst_quantity, 51);
        assert!((c.max_discrepancy - 12.25).abs() < 1e-9);
    }

    #[test]
    fn no_discount_is_uniform() {
        let g = hundred_units_two_lots();
        let flat = FlatBid {
            threshold: 0,
            price_below: 5.0,
            price_above: 5.0,
            requirement: 100,
        };
        let c = convert_flat_to_lot(&flat, &g, r3()).unwrap();
        assert_eq!(c.schedule.prices, vec![Some(5.0), Some(5.0)]);
        assert!(c.boundary_exact);
        assert_eq!(c.max_discrepancy, 0.0);
    }

    #[test]
    fn finer_grid_stays_monotone() {
        // matching every boundary would need prices (5.25, 5.25, 4.5, 5.0)
        let g = LotGrid::new(100, 4).unwrap();
        let flat = FlatBid {
            threshold: 50,
            price_below: 5.25,
            price_above: 5.0,
            requirement: 100,
        };
        let c = convert_flat_to_lot(&flat, &g, r3()).unwrap();
        assert_eq!(c.schedule.prices, vec![Some(5.25), Some(5.25), Some(4.75), Some(4.75)]);
        assert!(!c.boundary_exact);
        validate_bid(&c.schedule, r3(), &g).unwrap();
    }

    #[test]
    fn threshold_must_sit_on_a_boundary() {
        let g = hundred_units_two_lots();
        let flat = FlatBid {
            threshold: 60,
            price_below: 5.5,
            price_above: 5.0,
            requirement: 100,
        };
        assert!(matches!(
            convert_flat_to_lot(&flat, &g, r3()),
            Err(AuctionError::MisalignedThreshold { .. })
        ));
    }

    proptest! {
        #[test]
        fn converted_bids_always_validate(
            lots in 1usize..8,
            lot_size in 1u64..20,
            boundary in 0usize..8,
            above in 3.0f64..10.0,
            premium in 0.0f64..3.0,
        ) {
            let m = lots as u64 * lot_size;
            let g = LotGrid::new(m, lots).unwrap();
            let threshold = (boundary.min(lots) as u64) * lot_size;
            let flat = FlatBid { threshold, price_below: above + premium, price_above: above, requirement: m };
            let c = convert_flat_to_lot(&flat, &g, r3()).unwrap();
            prop_assert!(validate_bid(&c.schedule, r3(), &g).is_ok());
            let v_end = schedule_value(&c.schedule, m as f64, &g).unwrap();
            prop_assert!(v_end >= flat.value(m as f64) - 1e-9);
        }
    }
}
