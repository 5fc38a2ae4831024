use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vda_core::auction::{consumer_utility, LotGrid, ReservePrice, Schedule};
use vda_core::vcg::{brute_force_vcg, brute_force_welfare, efficient_allocation, vcg_payments};

/// Prices on a 1/8 grid keep every welfare sum exact in binary floating point.
fn random_bid(rng: &mut ChaCha8Rng, grid: &LotGrid) -> Schedule {
    let k = grid.lot_count();
    let demanded = rng.random_range(0..=k);
    // requirements sit on lot boundaries
    let requirement = if demanded == k {
        grid.total_units()
    } else {
        grid.lot_start(demanded)
    };
    let mut price = 3.0 + rng.random_range(0..16) as f64 / 8.0;
    let mut prices = Vec::new();
    for _ in 0..demanded {
        prices.push(price);
        price = (price - rng.random_range(0..4) as f64 / 8.0).max(3.0);
    }
    Schedule::with_requirement(&prices, requirement, grid)
}

#[test]
fn greedy_and_clarke_match_exhaustive_search() {
    let reserve = ReservePrice::new(3.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..1000 {
        let m = rng.random_range(1..=20);
        let k = rng.random_range(1..=4.min(m as usize));
        let grid = LotGrid::new(m, k).unwrap();
        let n = rng.random_range(1..=4);
        let bids: Vec<_> = (0..n).map(|_| random_bid(&mut rng, &grid)).collect();

        let greedy = efficient_allocation(&bids, &grid, reserve).unwrap();
        let oracle = brute_force_welfare(&bids, &grid, reserve, 20).unwrap();
        assert_eq!(greedy.welfare, oracle.welfare, "case {case}: {bids:?}");
        assert_eq!(greedy.allocation, oracle.allocation, "case {case}");

        let fast = vcg_payments(&bids, &grid, reserve).unwrap();
        let slow = brute_force_vcg(&bids, &grid, reserve, 20).unwrap();
        assert_eq!(fast.allocation, slow.allocation);
        for (i, (a, b)) in fast.payments.iter().zip(&slow.payments).enumerate() {
            assert!((a - b).abs() <= 1e-9, "case {case} consumer {i}: {a} vs {b}");
        }
        for i in 0..n {
            let a = fast.allocation[i];
            assert!(a <= bids[i].requirement as f64);
            let u = consumer_utility(&bids[i], a, fast.payments[i], &grid).unwrap();
            assert!(u >= -1e-9, "case {case}: IR violated for {i}");
            assert!(fast.payments[i] >= 3.0 * a - 1e-9);
        }
    }
}
