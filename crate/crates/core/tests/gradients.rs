use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vda_core::exec::Exec;
use vda_core::mechanism::{Architecture, MechanismParams, ProfileBatch};
use vda_core::regret::{search_misreports, AscentConfig, MisreportBatch};
use vda_core::scenario::{default_scenario, Scenario};
use vda_core::trainer::{loss_and_gradient, BusinessConstraint, LagrangeState, LossInputs, PenaltyWeights, Variant};

struct Fixture {
    params: MechanismParams,
    batch: ProfileBatch,
    misreports: MisreportBatch,
    lagrange: LagrangeState,
    constraints: Vec<BusinessConstraint>,
}

fn fixture(scenario: &Scenario, samples: usize, seed: u64) -> Fixture {
    let params = MechanismParams::new(Architecture::default(), scenario.fingerprint(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let profiles: Vec<_> = (0..samples).map(|_| scenario.sample_profile(&mut rng).unwrap()).collect();
    let batch = ProfileBatch::from_profiles(&profiles, &params.fingerprint).unwrap();
    let k = scenario.lots;
    let mut misreports = MisreportBatch::truthful(&batch, k);
    let cfg = AscentConfig {
        steps: 10,
        ..AscentConfig::default()
    };
    let found = search_misreports(&params, &misreports, &cfg, seed, Exec::Sequential).unwrap();
    for q in 0..misreports.rows() {
        let i = misreports.consumer[q];
        misreports.profiles.bids.slice_mut(s![q, i * k..(i + 1) * k]).assign(&found.best_bid.row(q));
    }
    let n = scenario.consumers;
    Fixture {
        params,
        batch,
        misreports,
        lagrange: LagrangeState {
            regret: (0..n).map(|i| 0.5 + i as f64).collect(),
            envy: (0..n).map(|i| 2.0 - 0.3 * i as f64).collect(),
        },
        constraints: vec![BusinessConstraint::MinWinnersWithFloor { count: 3, floor: 210.0 }],
    }
}

fn inputs<'a>(f: &'a Fixture, bids: &'a ProfileBatch) -> LossInputs<'a> {
    LossInputs {
        variant: Variant::NswEnvy,
        truthful: bids,
        values: &f.batch.bids,
        misreports: &f.misreports,
        lagrange: &f.lagrange,
        rho: PenaltyWeights {
            regret: 3.0,
            envy: 2.0,
            business: 5.0,
        },
        constraints: &f.constraints,
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central difference at two step sizes; kinks rarely sit inside both.
fn central(h: f64, mut loss_at: impl FnMut(f64) -> f64) -> [f64; 2] {
    [h, h / 4.0].map(|h| (loss_at(h) - loss_at(-h)) / (2.0 * h))
}

#[test]
fn composite_loss_gradient_matches_finite_differences() {
    let scenario = default_scenario();
    let f = fixture(&scenario, 6, 17);
    let base = loss_and_gradient(&f.params, &inputs(&f, &f.batch), Exec::Sequential, true).unwrap();
    assert!(base.stats.regret.iter().any(|&r| r > 0.0), "fixture should have positive regret");
    assert!(base.stats.envy.iter().any(|&e| e > 0.0));
    let bid_grad = base.bid_grad.unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let total_alloc = f.params.allocation_net.params().len();
    let total = total_alloc + f.params.payment_net.params().len();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let idx = rng.random_range(0..total);
        let analytic = if idx < total_alloc {
            base.grads.allocation[idx]
        } else {
            base.grads.payment[idx - total_alloc]
        };
        let mut p = f.params.clone();
        let fd = central(1e-6, |h| {
            let slot = if idx < total_alloc {
                &mut p.allocation_net.params_mut()[idx]
            } else {
                &mut p.payment_net.params_mut()[idx - total_alloc]
            };
            let orig = *slot;
            *slot = orig + h;
            let l = loss_and_gradient(&p, &inputs(&f, &f.batch), Exec::Sequential, false).unwrap().terms.total;
            let slot = if idx < total_alloc {
                &mut p.allocation_net.params_mut()[idx]
            } else {
                &mut p.payment_net.params_mut()[idx - total_alloc]
            };
            *slot = orig;
            l
        });
        let err = fd.iter().map(|&d| rel_err(d, analytic)).fold(f64::INFINITY, f64::min);
        assert!(err <= 1e-4, "param {idx}: analytic {analytic} vs fd {fd:?}");
        worst = worst.max(err);
    }

    let (rows, cols) = f.batch.bids.dim();
    for _ in 0..100 {
        let (r, c) = (rng.random_range(0..rows), rng.random_range(0..cols));
        let analytic = bid_grad[[r, c]];
        let fd = central(1e-6, |h| {
            let mut bids = f.batch.clone();
            bids.bids[[r, c]] += h;
            loss_and_gradient(&f.params, &inputs(&f, &bids), Exec::Sequential, false).unwrap().terms.total
        });
        let err = fd.iter().map(|&d| rel_err(d, analytic)).fold(f64::INFINITY, f64::min);
        assert!(err <= 1e-4, "bid ({r}, {c}): analytic {analytic} vs fd {fd:?}");
    }
}

#[test]
fn parallel_and_sequential_gradients_are_identical() {
    let scenario = default_scenario();
    let f = fixture(&scenario, 40, 5);
    let a = loss_and_gradient(&f.params, &inputs(&f, &f.batch), Exec::Sequential, true).unwrap();
    let b = loss_and_gradient(&f.params, &inputs(&f, &f.batch), Exec::Parallel, true).unwrap();
    assert_eq!(a.terms, b.terms);
    assert_eq!(a.grads, b.grads);
    assert_eq!(a.bid_grad, b.bid_grad);
}

#[test]
fn nsw_gradient_sign_matches_multiplier_direction() {
    // with no penalties, d loss / d p_hat_i = -d nsw / d p_hat_i = -(C - F) * surplus_i
    let scenario = default_scenario();
    let mut f = fixture(&scenario, 4, 23);
    f.lagrange = LagrangeState::new(scenario.consumers);
    f.constraints.clear();
    let mut inp = inputs(&f, &f.batch);
    inp.variant = Variant::Nsw;
    inp.rho = PenaltyWeights {
        regret: 0.0,
        envy: 0.0,
        business: 0.0,
    };
    let base = loss_and_gradient(&f.params, &inp, Exec::Sequential, false).unwrap();
    // nudge every payment-output bias: p_hat moves up for every consumer
    let mut p = f.params.clone();
    let out_len = p.payment_net.output_layer_mut().len();
    let n = scenario.consumers;
    for b in &mut p.payment_net.output_layer_mut()[out_len - n..] {
        *b += 1e-4;
    }
    let moved = loss_and_gradient(&p, &inp, Exec::Sequential, false).unwrap();
    let out = f.params.evaluate(&f.batch).unwrap();
    let reserve_total = 3.0 * scenario.units as f64;
    let mut expected = 0.0;
    for r in 0..f.batch.rows() {
        let fc: f64 = out.payments.row(r).sum() - reserve_total;
        let grid = scenario.grid().unwrap();
        let geometry = grid.geometry();
        let mut cu = 0.0;
        let mut dnsw = 0.0;
        for i in 0..n {
            let a = out.allocation[[r, i]];
            let vals = f.batch.bids.slice(s![r, i * 20..(i + 1) * 20]).to_vec();
            let (v, _) = geometry.value_and_marginal(&vals, a);
            cu += v - out.payments[[r, i]];
            let ph = out.multipliers[[r, i]];
            dnsw += (v - 3.0 * a) * ph * (1.0 - ph);
        }
        expected -= (cu - fc) * dnsw * 1e-4 / f.batch.rows() as f64;
    }
    let observed = moved.terms.total - base.terms.total;
    assert!(rel_err(observed, expected) < 1e-3, "{observed} vs {expected}");
    let _ = Array2::<f64>::zeros((1, 1));
}
