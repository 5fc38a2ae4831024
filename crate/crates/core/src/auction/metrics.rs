//! Closed-form utilities, revenue, Nash social welfare and envy.

use serde::{Deserialize, Serialize};

use super::{schedule_value, AuctionError, LotGrid, ReservePrice, Schedule};

/// Allocation and payment for every consumer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionOutcome {
    /// Units per consumer; fractional during training, whole after rounding.
    pub allocation: Vec<f64>,
    /// Total money paid by each consumer.
    pub payments: Vec<f64>,
}

impl AuctionOutcome {
    pub fn consumers(&self) -> usize {
        self.allocation.len()
    }

    pub fn units_sold(&self) -> f64 {
        self.allocation.iter().sum()
    }
}

/// Consumer utility: value of the allocated units minus the payment.
pub fn consumer_utility(
    valuation: &Schedule,
    allocation: f64,
    payment: f64,
    grid: &LotGrid,
) -> Result<f64, AuctionError> {
    Ok(schedule_value(valuation, allocation, grid)? - payment)
}

/// Seller utility when every unsold unit is lost: revenue minus the reserve
/// value of all `units`.
pub fn fc_utility(payments: &[f64], reserve: ReservePrice, units: u64) -> f64 {
    fc_revenue(payments) - reserve.get() * units as f64
}

pub fn fc_revenue(payments: &[f64]) -> f64 {
    payments.iter().sum()
}

/// Product of the seller utility and the total consumer utility.
///
/// The square root is deliberately not taken, and no clamping is applied.
pub fn nash_social_welfare(fc_utility: f64, consumer_utilities: &[f64]) -> f64 {
    fc_utility * consumer_utilities.iter().sum::<f64>()
}

/// Utility of every consumer in `outcome` under `valuations`.
pub fn consumer_utilities(
    valuations: &[Schedule],
    outcome: &AuctionOutcome,
    grid: &LotGrid,
) -> Result<Vec<f64>, AuctionError> {
    check_sizes(valuations.len(), outcome)?;
    valuations
        .iter()
        .zip(outcome.allocation.iter().zip(&outcome.payments))
        .map(|(v, (&a, &p))| consumer_utility(v, a, p, grid))
        .collect()
}

/// Envy of each consumer: the best utility it could get by swapping into some
/// other consumer's allocation and payment, minus its own utility.
///
/// Units beyond the envier's own requirement are worth nothing to it.
pub fn envy_profile(
    valuations: &[Schedule],
    outcome: &AuctionOutcome,
    grid: &LotGrid,
) -> Result<Vec<f64>, AuctionError> {
    let utilities = consumer_utilities(valuations, outcome, grid)?;
    valuations
        .iter()
        .zip(&utilities)
        .map(|(v, &own)| {
            let cap = v.requirement as f64;
            let mut best = own;
            for (&a, &p) in outcome.allocation.iter().zip(&outcome.payments) {
                let swapped = schedule_value(v, a.min(cap), grid)? - p;
                if swapped > best {
                    best = swapped;
                }
            }
            Ok(best - own)
        })
        .collect()
}

fn check_sizes(consumers: usize, outcome: &AuctionOutcome) -> Result<(), AuctionError> {
    if outcome.allocation.len() != consumers || outcome.payments.len() != consumers {
        return Err(AuctionError::ConsumerCountMismatch {
            expected: consumers,
            found: outcome.allocation.len().max(outcome.payments.len()),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn r3() -> ReservePrice {
        ReservePrice::new(3.0).unwrap()
    }

    #[test]
    fn consumer_utility_examples() {
        let g = LotGrid::new(2500, 5).unwrap();
        let v = Schedule::full(vec![20.0, 18.0, 18.0, 16.0, 16.0], &g);
        assert_eq!(consumer_utility(&v, 1800.0, 32800.0, &g).unwrap(), 0.0);
        assert_eq!(consumer_utility(&v, 1800.0, 30000.0, &g).unwrap(), 2800.0);
        assert_eq!(consumer_utility(&v, 0.0, 0.0, &g).unwrap(), 0.0);
    }

    #[test]
    fn seller_side_examples() {
        assert_eq!(fc_utility(&[3763.0], r3(), 1000), 763.0);
        assert_eq!(fc_utility(&[1000.0, 2001.0], r3(), 1000), 1.0);
        assert_eq!(fc_utility(&[3000.0], r3(), 1000), 0.0);
        assert_eq!(fc_revenue(&[1000.0, 763.0, 2000.0]), 3763.0);
        assert_eq!(fc_revenue(&[0.0; 4]), 0.0);
        assert_eq!(fc_revenue(&[32800.0, 12400.0]), 45200.0);
    }

    #[test]
    fn nsw_examples() {
        assert_eq!(nash_social_welfare(0.0, &[5.0, 7.0]), 0.0);
        assert_eq!(nash_social_welfare(397.0, &[603.0]), 239391.0);
        assert_eq!(nash_social_welfare(1.0, &[875.0]), 875.0);
    }

    #[test]
    fn envy_examples() {
        let g = LotGrid::new(5, 1).unwrap();
        let v = vec![Schedule::full(vec![10.0], &g), Schedule::full(vec![10.0], &g)];
        let out = AuctionOutcome {
            allocation: vec![5.0, 0.0],
            payments: vec![30.0, 0.0],
        };
        assert_eq!(envy_profile(&v, &out, &g).unwrap(), vec![0.0, 20.0]);

        let symmetric = AuctionOutcome {
            allocation: vec![2.0, 2.0],
            payments: vec![7.0, 7.0],
        };
        assert_eq!(envy_profile(&v, &symmetric, &g).unwrap(), vec![0.0, 0.0]);

        // consumer 1 pays its full value, consumer 2 values that bundle at the payment
        let full_price = AuctionOutcome {
            allocation: vec![5.0, 0.0],
            payments: vec![50.0, 0.0],
        };
        assert_eq!(envy_profile(&v, &full_price, &g).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn envy_caps_swaps_at_own_requirement() {
        let g = LotGrid::new(10, 2).unwrap();
        let v = vec![
            Schedule::full(vec![6.0, 5.0], &g),
            Schedule::with_requirement(&[9.0], 5, &g),
        ];
        let out = AuctionOutcome {
            allocation: vec![10.0, 0.0],
            payments: vec![40.0, 0.0],
        };
        // consumer 2 can only use 5 of the 10 units: 45 - 40 = 5
        assert_eq!(envy_profile(&v, &out, &g).unwrap(), vec![0.0, 5.0]);
    }

    proptest! {
        #[test]
        fn value_is_concave_and_utility_exact(
            base in 3.0f64..20.0,
            drops in proptest::collection::vec(0.0f64..2.0, 3),
            pay in 0.0f64..500.0,
            q in 0u64..=40,
        ) {
            let g = LotGrid::new(40, 4).unwrap();
            let mut prices = vec![base];
            for d in &drops {
                let last = *prices.last().unwrap();
                prices.push(last - d);
            }
            let s = Schedule::full(prices, &g);
            let val = |q: u64| schedule_value(&s, q as f64, &g).unwrap();
            if q >= 1 && q < 40 {
                prop_assert!(val(q + 1) - val(q) <= val(q) - val(q - 1) + 1e-12);
            }
            let u = consumer_utility(&s, q as f64, pay, &g).unwrap();
            prop_assert!((u + pay - val(q)).abs() <= 1e-9);
        }

        #[test]
        fn envy_is_nonnegative(
            vals in proptest::collection::vec(3.0f64..10.0, 3),
            alloc in proptest::collection::vec(0.0f64..10.0, 3),
            frac in proptest::collection::vec(0.0f64..1.0, 3),
        ) {
            let g = LotGrid::new(30, 1).unwrap();
            let valuations: Vec<_> = vals.iter().map(|&v| Schedule::full(vec![v], &g)).collect();
            let payments = alloc.iter().zip(&frac).zip(&vals).map(|((a, f), v)| a * v * f).collect();
            let out = AuctionOutcome { allocation: alloc, payments };
            let e = envy_profile(&valuations, &out, &g).unwrap();
            prop_assert!(e.iter().all(|&x| x >= 0.0));
        }

        #[test]
        fn seller_identities(payments in proptest::collection::vec(0.0f64..1e4, 1..6)) {
            let r = r3();
            prop_assert!((fc_utility(&payments, r, 1000) + 3000.0 - fc_revenue(&payments)).abs() <= 1e-9);
            let u = fc_utility(&payments, r, 1000);
            prop_assert_eq!(nash_social_welfare(u, &[42.5]), nash_social_welfare(42.5, &[u]));
        }
    }
}
