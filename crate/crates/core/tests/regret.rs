use ndarray::Array2;

use vda_core::auction::{LotGrid, ReservePrice};
use vda_core::exec::Exec;
use vda_core::mechanism::{Architecture, MechanismError, MechanismParams, ProfileBatch};
use vda_core::regret::{search_misreports, AscentConfig, BidResponse, MisreportBatch, VcgResponse};
use vda_core::scenario::{default_scenario, stream_rng, Stream};

/// Two consumers, one lot: the higher bid takes every unit and pays its bid.
struct PayYourBid {
    grid: LotGrid,
}

impl BidResponse for PayYourBid {
    fn lots(&self) -> usize {
        1
    }
    fn reserve(&self) -> f64 {
        3.0
    }
    fn value_high(&self) -> f64 {
        4.5
    }
    fn grid(&self) -> LotGrid {
        self.grid
    }
    fn respond(&self, batch: &MisreportBatch, want_grad: bool) -> Result<(Vec<f64>, Option<Array2<f64>>), MechanismError> {
        let m = self.grid.total_units() as f64;
        let mut utility = Vec::new();
        let mut grad = Array2::zeros((batch.rows(), 1));
        for r in 0..batch.rows() {
            let i = batch.consumer[r];
            let own = batch.profiles.bids[[r, i]];
            let other = batch.profiles.bids[[r, 1 - i]];
            let wins = own > other || (own == other && i == 0);
            if wins {
                utility.push((batch.values[[r, 0]] - own) * m);
                grad[[r, 0]] = -m;
            } else {
                utility.push(0.0);
            }
        }
        Ok((utility, want_grad.then_some(grad)))
    }
}

fn toy_batch(v0: f64, v1: f64) -> MisreportBatch {
    let profiles = ProfileBatch {
        bids: Array2::from_shape_vec((1, 2), vec![v0, v1]).unwrap(),
        caps: Array2::from_elem((1, 2), 10.0),
    };
    MisreportBatch::truthful(&profiles, 1)
}

/// Best misreport over a 0.01 price grid. Truthful utility is always zero
/// here, so the best utility is the regret.
fn grid_oracle(own_value: f64, other_bid: f64, own_index: usize, m: f64) -> f64 {
    (0..=150)
        .map(|c| 3.0 + c as f64 / 100.0)
        .filter(|&b| b > other_bid || (b == other_bid && own_index == 0))
        .map(|b| (own_value - b) * m)
        .fold(0.0, f64::max)
}

#[test]
fn ascent_matches_grid_search_on_pay_your_bid() {
    let toy = PayYourBid {
        grid: LotGrid::new(10, 1).unwrap(),
    };
    let cfg = AscentConfig {
        steps: 300,
        rate: 0.005,
        restarts: 1,
        restart_spread: 0.0,
    };
    for (v0, v1) in [(4.3, 3.6), (4.0, 3.1), (3.5, 4.4)] {
        let batch = toy_batch(v0, v1);
        let found = search_misreports(&toy, &batch, &cfg, 1, Exec::Sequential).unwrap();
        let regret = found.regret();
        let oracle = [grid_oracle(v0, v1, 0, 10.0), grid_oracle(v1, v0, 1, 10.0)];
        for i in 0..2 {
            assert!(
                (regret[i] - oracle[i]).abs() <= 0.1,
                "values ({v0}, {v1}) consumer {i}: ascent {} vs grid {}",
                regret[i],
                oracle[i]
            );
        }
    }
}

fn learned_setup(samples: usize) -> (MechanismParams, MisreportBatch) {
    let scenario = default_scenario();
    let params = MechanismParams::new(Architecture::default(), scenario.fingerprint(), 4).unwrap();
    let mut rng = stream_rng(4, Stream::Evaluation);
    let profiles: Vec<_> = (0..samples).map(|_| scenario.sample_profile(&mut rng).unwrap()).collect();
    let batch = ProfileBatch::from_profiles(&profiles, &params.fingerprint).unwrap();
    let misreports = MisreportBatch::truthful(&batch, scenario.lots);
    (params, misreports)
}

#[test]
fn zero_steps_give_zero_regret() {
    let (params, batch) = learned_setup(4);
    let cfg = AscentConfig {
        steps: 0,
        ..AscentConfig::default()
    };
    let found = search_misreports(&params, &batch, &cfg, 3, Exec::Sequential).unwrap();
    assert!(found.regret().iter().all(|&r| r == 0.0));
}

#[test]
fn longer_search_never_finds_less() {
    let (params, batch) = learned_setup(6);
    let mut previous: Option<Vec<f64>> = None;
    for steps in [1, 5, 20, 60] {
        let cfg = AscentConfig {
            steps,
            restarts: 3,
            ..AscentConfig::default()
        };
        let regret = search_misreports(&params, &batch, &cfg, 8, Exec::Parallel).unwrap().regret();
        if let Some(prev) = &previous {
            for (a, b) in prev.iter().zip(&regret) {
                assert!(b >= a, "regret fell from {a} to {b} at {steps} steps");
            }
        }
        previous = Some(regret);
    }
    assert!(previous.unwrap().iter().any(|&r| r > 0.0), "untrained network should have some regret");
}

#[test]
fn vcg_resists_misreports() {
    let scenario = default_scenario();
    let fp = scenario.fingerprint();
    let vcg = VcgResponse {
        grid: scenario.grid().unwrap(),
        reserve: ReservePrice::new(scenario.reserve).unwrap(),
        value_high: fp.value_high,
    };
    let mut rng = stream_rng(9, Stream::Evaluation);
    let profiles: Vec<_> = (0..20).map(|_| scenario.sample_profile(&mut rng).unwrap()).collect();
    let batch = MisreportBatch::truthful(&ProfileBatch::from_profiles(&profiles, &fp).unwrap(), scenario.lots);
    let cfg = AscentConfig {
        steps: 10,
        restarts: 8,
        restart_spread: 0.5,
        ..AscentConfig::default()
    };
    let found = search_misreports(&vcg, &batch, &cfg, 5, Exec::Parallel).unwrap();
    let worst = found.regret().into_iter().fold(0.0, f64::max);
    assert!(worst / scenario.units as f64 <= 1e-4, "VCG regret {worst}");
}

#[test]
fn search_is_independent_of_execution_strategy() {
    let (params, batch) = learned_setup(30);
    let cfg = AscentConfig {
        steps: 5,
        restarts: 2,
        ..AscentConfig::default()
    };
    let a = search_misreports(&params, &batch, &cfg, 1, Exec::Sequential).unwrap();
    let b = search_misreports(&params, &batch, &cfg, 1, Exec::Parallel).unwrap();
    assert_eq!(a.best_utility, b.best_utility);
    assert_eq!(a.best_bid, b.best_bid);
}
