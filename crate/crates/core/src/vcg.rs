//! Analytic VCG baseline: welfare-maximizing allocation by greedy marginal
//! matching, Clarke-pivot payments, and an exhaustive oracle for small
//! instances.
//!
//! Unsold units are worth the reserve price to the seller, so the welfare
//! being maximized is `sum_i value_i(a_i) + reserve * (m - sum_i a_i)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auction::{schedule_value, validate_bid, AuctionError, AuctionOutcome, LotGrid, ReservePrice, Schedule};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VcgError {
    #[error("invalid bid from consumer {consumer}: {source}")]
    InvalidBid {
        consumer: usize,
        #[source]
        source: AuctionError,
    },
    #[error(transparent)]
    Auction(#[from] AuctionError),
    #[error("instance with {units} units is too large for exhaustive search (limit {limit})")]
    TooLarge { units: u64, limit: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelfareResult {
    /// Whole units per consumer.
    pub allocation: Vec<u64>,
    /// Bid-measured value of the allocation plus the reserve value of unsold units.
    pub welfare: f64,
}

impl WelfareResult {
    pub fn units_sold(&self) -> u64 {
        self.allocation.iter().sum()
    }
}

/// Welfare-maximizing allocation.
///
/// Lot segments are taken by descending per-unit price; a segment is used only
/// while its price is at least the reserve. Ties go to the lowest consumer
/// index, then to the earlier lot. Because every schedule is non-increasing
/// this greedy order attains the maximum.
pub fn efficient_allocation(
    bids: &[Schedule],
    grid: &LotGrid,
    reserve: ReservePrice,
) -> Result<WelfareResult, VcgError> {
    validate_all(bids, grid, reserve)?;
    greedy(bids, grid, reserve, None)
}

/// VCG outcome with Clarke-pivot payments.
///
/// `p_i = W_{-i} - (W - b_i(a_i))`, where `W_{-i}` is the optimal welfare with
/// consumer `i` removed.
pub fn vcg_payments(
    bids: &[Schedule],
    grid: &LotGrid,
    reserve: ReservePrice,
) -> Result<AuctionOutcome, VcgError> {
    validate_all(bids, grid, reserve)?;
    vcg_unchecked(bids, grid, reserve)
}

/// As [`vcg_payments`], for bids the caller has already validated.
pub(crate) fn vcg_unchecked(
    bids: &[Schedule],
    grid: &LotGrid,
    reserve: ReservePrice,
) -> Result<AuctionOutcome, VcgError> {
    let with_all = greedy(bids, grid, reserve, None)?;
    let mut payments = Vec::with_capacity(bids.len());
    for (i, bid) in bids.iter().enumerate() {
        if with_all.allocation[i] == 0 {
            payments.push(0.0);
            continue;
        }
        let without = greedy(bids, grid, reserve, Some(i))?;
        let own = schedule_value(bid, with_all.allocation[i] as f64, grid)?;
        payments.push(without.welfare - (with_all.welfare - own));
    }
    Ok(AuctionOutcome {
        allocation: with_all.allocation.iter().map(|&a| a as f64).collect(),
        payments,
    })
}

/// Exhaustive search over every feasible whole-unit allocation.
///
/// Among allocations whose welfare is within `1e-9` of the best, the
/// lexicographically largest allocation vector wins; this is the allocation
/// the greedy tie rule produces.
pub fn brute_force_welfare(
    bids: &[Schedule],
    grid: &LotGrid,
    reserve: ReservePrice,
    max_units: u64,
) -> Result<WelfareResult, VcgError> {
    validate_all(bids, grid, reserve)?;
    exhaustive(bids, grid, reserve, max_units, None)
}

/// Clarke payments computed entirely from [`brute_force_welfare`].
pub fn brute_force_vcg(
    bids: &[Schedule],
    grid: &LotGrid,
    reserve: ReservePrice,
    max_units: u64,
) -> Result<AuctionOutcome, VcgError> {
    validate_all(bids, grid, reserve)?;
    let with_all = exhaustive(bids, grid, reserve, max_units, None)?;
    let mut payments = Vec::with_capacity(bids.len());
    for (i, bid) in bids.iter().enumerate() {
        if with_all.allocation[i] == 0 {
            payments.push(0.0);
            continue;
        }
        let without = exhaustive(bids, grid, reserve, max_units, Some(i))?;
        let own = schedule_value(bid, with_all.allocation[i] as f64, grid)?;
        payments.push(without.welfare - (with_all.welfare - own));
    }
    Ok(AuctionOutcome {
        allocation: with_all.allocation.iter().map(|&a| a as f64).collect(),
        payments,
    })
}

fn validate_all(bids: &[Schedule], grid: &LotGrid, reserve: ReservePrice) -> Result<(), VcgError> {
    for (consumer, bid) in bids.iter().enumerate() {
        validate_bid(bid, reserve, grid).map_err(|source| VcgError::InvalidBid { consumer, source })?;
    }
    Ok(())
}

/// Welfare of a whole-unit allocation, summed in consumer order.
fn welfare_of(
    bids: &[Schedule],
    allocation: &[u64],
    grid: &LotGrid,
    reserve: ReservePrice,
) -> Result<f64, AuctionError> {
    let mut welfare = 0.0;
    for (bid, &a) in bids.iter().zip(allocation) {
        if a > 0 {
            welfare += schedule_value(bid, a as f64, grid)?;
        }
    }
    let sold: u64 = allocation.iter().sum();
    Ok(welfare + reserve.get() * (grid.total_units() - sold) as f64)
}

struct Segment {
    price: f64,
    consumer: usize,
    lot: usize,
    width: u64,
}

fn greedy(
    bids: &[Schedule],
    grid: &LotGrid,
    reserve: ReservePrice,
    skip: Option<usize>,
) -> Result<WelfareResult, VcgError> {
    let mut segments = Vec::with_capacity(bids.len() * grid.lot_count());
    for (consumer, bid) in bids.iter().enumerate() {
        if Some(consumer) == skip {
            continue;
        }
        for (lot, price) in bid.prices.iter().enumerate() {
            let Some(price) = *price else { break };
            let start = grid.lot_start(lot);
            let end = grid.lot_end(lot).min(bid.requirement);
            if end > start {
                segments.push(Segment {
                    price,
                    consumer,
                    lot,
                    width: end - start,
                });
            }
        }
    }
    segments.sort_by(|a, b| {
        b.price
            .total_cmp(&a.price)
            .then(a.consumer.cmp(&b.consumer))
            .then(a.lot.cmp(&b.lot))
    });

    let mut allocation = vec![0u64; bids.len()];
    let mut left = grid.total_units();
    for seg in &segments {
        if left == 0 || seg.price < reserve.get() {
            break;
        }
        let take = seg.width.min(left);
        allocation[seg.consumer] += take;
        left -= take;
    }
    let welfare = welfare_of(bids, &allocation, grid, reserve)?;
    Ok(WelfareResult { allocation, welfare })
}

fn exhaustive(
    bids: &[Schedule],
    grid: &LotGrid,
    reserve: ReservePrice,
    max_units: u64,
    skip: Option<usize>,
) -> Result<WelfareResult, VcgError> {
    let m = grid.total_units();
    if m > max_units {
        return Err(VcgError::TooLarge {
            units: m,
            limit: max_units,
        });
    }
    let caps: Vec<u64> = bids
        .iter()
        .enumerate()
        .map(|(i, b)| if Some(i) == skip { 0 } else { b.requirement.min(m) })
        .collect();

    struct Search<'a> {
        bids: &'a [Schedule],
        grid: &'a LotGrid,
        reserve: ReservePrice,
        caps: Vec<u64>,
        current: Vec<u64>,
        best: Option<WelfareResult>,
    }

    impl Search<'_> {
        fn visit(&mut self, consumer: usize, left: u64) -> Result<(), AuctionError> {
            if consumer == self.bids.len() {
                let welfare = welfare_of(self.bids, &self.current, self.grid, self.reserve)?;
                // enumeration runs in lexicographically decreasing order, so the
                // first allocation reaching the best welfare is kept on ties
                let better = match &self.best {
                    None => true,
                    Some(best) => welfare > best.welfare + 1e-9,
                };
                if better {
                    self.best = Some(WelfareResult {
                        allocation: self.current.clone(),
                        welfare,
                    });
                }
                return Ok(());
            }
            let top = self.caps[consumer].min(left);
            for a in (0..=top).rev() {
                self.current[consumer] = a;
                self.visit(consumer + 1, left - a)?;
            }
            self.current[consumer] = 0;
            Ok(())
        }
    }

    let mut search = Search {
        bids,
        grid,
        reserve,
        caps,
        current: vec![0; bids.len()],
        best: None,
    };
    search.visit(0, m)?;
    Ok(search.best.expect("at least the empty allocation is visited"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auction::consumer_utility;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn r3() -> ReservePrice {
        ReservePrice::new(3.0).unwrap()
    }

    #[test]
    fn single_dominant_bidder() {
        let g = LotGrid::new(10, 1).unwrap();
        let bids = vec![Schedule::full(vec![5.0], &g), Schedule::full(vec![4.0], &g)];
        let w = efficient_allocation(&bids, &g, r3()).unwrap();
        assert_eq!(w.allocation, vec![10, 0]);
        assert_eq!(w.welfare, 50.0);
    }

    #[test]
    fn two_lot_split_beats_monopoly() {
        let g = LotGrid::new(4, 2).unwrap();
        let bids = vec![Schedule::full(vec![5.0, 4.0], &g), Schedule::full(vec![4.5, 2.0], &g)];
        // a tail price of 2.0 sits below the reserve of 3
        assert!(efficient_allocation(&bids, &g, r3()).is_err());

        let bids = vec![Schedule::full(vec![5.0, 4.0], &g), Schedule::full(vec![4.5, 3.0], &g)];
        let greedy = efficient_allocation(&bids, &g, r3()).unwrap();
        let oracle = brute_force_welfare(&bids, &g, r3(), 30).unwrap();
        // marginals 5, 5, 4.5, 4.5 -> (2, 2) with welfare 19
        assert_eq!(greedy.allocation, vec![2, 2]);
        assert_eq!(greedy.welfare, 19.0);
        assert_eq!(oracle, greedy);
    }

    #[test]
    fn reserve_dominates_low_bids() {
        let g = LotGrid::new(6, 2).unwrap();
        let bids = vec![Schedule::full(vec![3.0, 3.0], &g)];
        // exactly at reserve: selling and keeping are equally good, greedy sells
        let w = efficient_allocation(&bids, &g, r3()).unwrap();
        assert_eq!(w.welfare, 18.0);
        let none: Vec<Schedule> = vec![Schedule::with_requirement(&[], 0, &g)];
        let w = efficient_allocation(&none, &g, r3()).unwrap();
        assert_eq!(w.allocation, vec![0]);
        assert_eq!(w.welfare, 18.0);
    }

    #[test]
    fn lone_bidder_pays_reserve() {
        let g = LotGrid::new(10, 1).unwrap();
        let out = vcg_payments(&[Schedule::full(vec![5.0], &g)], &g, r3()).unwrap();
        assert_eq!(out.allocation, vec![10.0]);
        assert_eq!(out.payments, vec![30.0]);
    }

    #[test]
    fn loser_pays_nothing() {
        let g = LotGrid::new(10, 1).unwrap();
        let bids = vec![Schedule::full(vec![5.0], &g), Schedule::full(vec![4.0], &g)];
        let out = vcg_payments(&bids, &g, r3()).unwrap();
        assert_eq!(out.payments, vec![40.0, 0.0]);
    }

    #[test]
    fn single_consumer_takes_min_of_supply_and_requirement() {
        let g = LotGrid::new(12, 3).unwrap();
        let bids = vec![Schedule::with_requirement(&[6.0, 5.0], 8, &g)];
        let w = brute_force_welfare(&bids, &g, r3(), 30).unwrap();
        assert_eq!(w.allocation, vec![8]);
        assert_eq!(efficient_allocation(&bids, &g, r3()).unwrap(), w);
    }

    #[test]
    fn three_bidders_match_exhaustive_clarke() {
        let g = LotGrid::new(6, 2).unwrap();
        let bids = vec![
            Schedule::full(vec![6.0, 4.0], &g),
            Schedule::full(vec![5.5, 5.0], &g),
            Schedule::with_requirement(&[7.0], 3, &g),
        ];
        let fast = vcg_payments(&bids, &g, r3()).unwrap();
        let slow = brute_force_vcg(&bids, &g, r3(), 30).unwrap();
        assert_eq!(fast.allocation, slow.allocation);
        for (a, b) in fast.payments.iter().zip(&slow.payments) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn oversized_instances_are_refused() {
        let g = LotGrid::new(100, 2).unwrap();
        let bids = vec![Schedule::full(vec![5.0, 4.0], &g)];
        assert!(matches!(
            brute_force_welfare(&bids, &g, r3(), 30),
            Err(VcgError::TooLarge { .. })
        ));
    }

    fn random_bid(rng: &mut ChaCha8Rng, grid: &LotGrid) -> Schedule {
        let k = grid.lot_count();
        let demanded = rng.random_range(0..=k);
        let requirement = if demanded == k {
            grid.total_units()
        } else {
            grid.lot_start(demanded)
        };
        let mut price = 3.0 + 0.5 * rng.random_range(0..10) as f64;
        let mut prices = Vec::new();
        for _ in 0..demanded {
            prices.push(price);
            price = (price - 0.5 * rng.random_range(0..3) as f64).max(3.0);
        }
        Schedule::with_requirement(&prices, requirement, grid)
    }

    #[test]
    fn truthful_bidding_is_dominant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let m = rng.random_range(2..=12);
            let k = rng.random_range(1..=3.min(m as usize));
            let g = LotGrid::new(m, k).unwrap();
            let n = rng.random_range(1..=3);
            let values: Vec<_> = (0..n).map(|_| random_bid(&mut rng, &g)).collect();
            let truthful = vcg_payments(&values, &g, r3()).unwrap();
            for i in 0..n {
                let u_true =
                    consumer_utility(&values[i], truthful.allocation[i], truthful.payments[i], &g).unwrap();
                assert!(u_true >= -1e-9, "IR violated");
                assert!(truthful.payments[i] >= 3.0 * truthful.allocation[i] - 1e-9);
                let mut price = 3.0 + 0.5 * rng.random_range(0..10) as f64;
                let mut lie_prices = Vec::new();
                for _ in 0..values[i].demanded_lots() {
                    lie_prices.push(price);
                    price = (price - 0.5 * rng.random_range(0..3) as f64).max(3.0);
                }
                let lie = Schedule::with_requirement(&lie_prices, values[i].requirement, &g);
                let mut profile = values.clone();
                profile[i] = lie;
                let out = vcg_payments(&profile, &g, r3()).unwrap();
                let u_lie = consumer_utility(&values[i], out.allocation[i], out.payments[i], &g).unwrap();
                assert!(u_true >= u_lie - 1e-9, "profitable misreport found");
            }
        }
    }
}
