use std::ops::Range;

use ndarray::{s, Array2};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    composite_loss, lagrange_update, BatchStats, BusinessConstraint, LagrangeState, LossTerms, PenaltyWeights,
    TrainError, TrainerConfig, Variant,
};
use crate::auction::LotGeometry;
use crate::exec::Exec;
use crate::mechanism::{
    AdamConfig, AdamState, Architecture, ForwardTape, MechanismGrads, MechanismOutput, MechanismParams, ProfileBatch,
};
use crate::regret::{search_misreports, AscentConfig, BidResponse, MisreportBatch};
use crate::scenario::{derive_seed, stream_rng, Scenario, Stream};

/// Samples per parallel work item in the gradient pass.
const SAMPLE_CHUNK: usize = 16;

/// Mean regret of every consumer over `profiles`, found by misreport search
/// against `model` with everyone else truthful.
pub fn empirical_regret<M: BidResponse + ?Sized>(
    model: &M,
    profiles: &ProfileBatch,
    ascent: &AscentConfig,
    seed: u64,
    exec: Exec,
) -> Result<Vec<f64>, TrainError> {
    let n = profiles.caps.ncols();
    let batch = MisreportBatch::truthful(profiles, model.lots());
    let found = search_misreports(model, &batch, ascent, seed, exec)?;
    let regret = found.regret();
    let rows = profiles.rows().max(1) as f64;
    Ok((0..n)
        .map(|i| regret.iter().skip(i).step_by(n).sum::<f64>() / rows)
        .collect())
}

/// Everything needed to evaluate the training loss on one batch.
pub struct LossInputs<'a> {
    pub variant: Variant,
    /// Bids fed to the networks for the truthful pass.
    pub truthful: &'a ProfileBatch,
    /// True values, same layout as `truthful.bids`.
    pub values: &'a Array2<f64>,
    /// `n` rows per sample (consumer-minor), each carrying that consumer's misreport.
    pub misreports: &'a MisreportBatch,
    pub lagrange: &'a LagrangeState,
    pub rho: PenaltyWeights,
    pub constraints: &'a [BusinessConstraint],
}

pub struct LossGradient {
    pub terms: LossTerms,
    pub stats: BatchStats,
    pub grads: MechanismGrads,
    /// Gradient with respect to `truthful.bids`, values held fixed.
    pub bid_grad: Option<Array2<f64>>,
}

struct ChunkForward {
    rows: Range<usize>,
    truthful: ProfileBatch,
    values: Array2<f64>,
    t_out: MechanismOutput,
    t_tape: ForwardTape,
    misreports: MisreportBatch,
    m_out: MechanismOutput,
    m_tape: ForwardTape,
    regret: Array2<f64>,
    envy: Array2<f64>,
    envy_target: Array2<usize>,
    revenue: Vec<f64>,
    fc: Vec<f64>,
    consumer: Vec<f64>,
    business: Vec<f64>,
}

fn value_slope(geometry: &LotGeometry, values: &Array2<f64>, r: usize, i: usize, k: usize, q: f64) -> (f64, f64) {
    let row = values.slice(s![r, i * k..(i + 1) * k]);
    geometry.value_and_marginal(row.as_slice().expect("contiguous"), q)
}

fn forward_chunk(params: &MechanismParams, inp: &LossInputs<'_>, rows: Range<usize>) -> Result<ChunkForward, TrainError> {
    let n = params.fingerprint.consumers;
    let k = params.fingerprint.lots;
    let units = params.fingerprint.units;
    let reserve = params.fingerprint.reserve;
    let geometry = params.grid().geometry();
    let truthful = inp.truthful.slice(rows.clone());
    let values = inp.values.slice(s![rows.clone(), ..]).to_owned();
    let mrows = rows.start * n..rows.end * n;
    let misreports = MisreportBatch {
        profiles: inp.misreports.profiles.slice(mrows.clone()),
        consumer: inp.misreports.consumer[mrows.clone()].to_vec(),
        values: inp.misreports.values.slice(s![mrows, ..]).to_owned(),
    };
    let (t_out, t_tape) = params.forward(&truthful)?;
    let (m_out, m_tape) = params.forward(&misreports.profiles)?;

    let len = rows.len();
    let mut regret = Array2::zeros((len, n));
    let mut envy = Array2::zeros((len, n));
    let mut envy_target = Array2::zeros((len, n));
    let mut revenue = Vec::with_capacity(len);
    let mut fc = Vec::with_capacity(len);
    let mut consumer = Vec::with_capacity(len);
    let mut business = Vec::with_capacity(len);
    for r in 0..len {
        let a = t_out.allocation.row(r);
        let p = t_out.payments.row(r);
        let u: Vec<f64> = (0..n).map(|i| value_slope(&geometry, &values, r, i, k, a[i]).0 - p[i]).collect();
        for i in 0..n {
            let q = r * n + i;
            let mi = misreports.consumer[q];
            let mv = misreports.values.row(q);
            let (v, _) = geometry.value_and_marginal(mv.as_slice().expect("contiguous"), m_out.allocation[[q, mi]]);
            regret[[r, i]] = (v - m_out.payments[[q, mi]] - u[i]).max(0.0);

            let cap = truthful.caps[[r, i]];
            let mut best = u[i];
            let mut arg = i;
            for j in 0..n {
                let swapped = value_slope(&geometry, &values, r, i, k, a[j].min(cap)).0 - p[j];
                if swapped > best {
                    best = swapped;
                    arg = j;
                }
            }
            envy[[r, i]] = best - u[i];
            envy_target[[r, i]] = arg;
        }
        let rev: f64 = p.sum();
        let f = rev - reserve * units as f64;
        revenue.push(rev);
        fc.push(f);
        consumer.push(u.iter().sum());
        let a = a.as_slice().expect("contiguous");
        business.push(inp.constraints.iter().map(|c| c.penalty(a, units, None)).sum());
    }
    Ok(ChunkForward {
        rows,
        truthful,
        values,
        t_out,
        t_tape,
        misreports,
        m_out,
        m_tape,
        regret,
        envy,
        envy_target,
        revenue,
        fc,
        consumer,
        business,
    })
}

fn backward_chunk(
    params: &MechanismParams,
    inp: &LossInputs<'_>,
    c: &ChunkForward,
    stats: &BatchStats,
    batch: usize,
    want_bids: bool,
) -> (MechanismGrads, Option<Array2<f64>>) {
    let n = params.fingerprint.consumers;
    let k = params.fingerprint.lots;
    let units = params.fingerprint.units;
    let geometry = params.grid().geometry();
    let w = 1.0 / batch as f64;
    let len = c.rows.len();
    let mut da = Array2::zeros((len, n));
    let mut dp = Array2::zeros((len, n));
    let mut dma = Array2::zeros((len * n, n));
    let mut dmp = Array2::zeros((len * n, n));
    let coef_regret: Vec<f64> = (0..n)
        .map(|i| 2.0 * inp.rho.regret * stats.regret[i] + inp.lagrange.regret[i])
        .collect();
    let coef_envy: Vec<f64> = (0..n)
        .map(|i| 2.0 * inp.rho.envy * stats.envy[i] + inp.lagrange.envy[i])
        .collect();
    for r in 0..len {
        let a = c.t_out.allocation.row(r);
        let slope: Vec<f64> = (0..n).map(|i| value_slope(&geometry, &c.values, r, i, k, a[i]).1).collect();
        match inp.variant {
            Variant::FcOptimal => dp.row_mut(r).fill(-w),
            Variant::ConsumerOptimal => dp.row_mut(r).fill(w),
            Variant::Nsw | Variant::NswEnvy => {
                let (f, cu) = (c.fc[r], c.consumer[r]);
                for i in 0..n {
                    dp[[r, i]] -= w * (cu - f);
                    da[[r, i]] -= w * f * slope[i];
                }
            }
        }
        for i in 0..n {
            if c.regret[[r, i]] > 0.0 && coef_regret[i] != 0.0 {
                let g = coef_regret[i] * w;
                let q = r * n + i;
                let mi = c.misreports.consumer[q];
                let mv = c.misreports.values.row(q);
                let (_, ms) = geometry.value_and_marginal(mv.as_slice().expect("contiguous"), c.m_out.allocation[[q, mi]]);
                dma[[q, mi]] += g * ms;
                dmp[[q, mi]] -= g;
                da[[r, i]] -= g * slope[i];
                dp[[r, i]] += g;
            }
        }
        if inp.variant.uses_envy() {
            for i in 0..n {
                let j = c.envy_target[[r, i]];
                if j == i || c.envy[[r, i]] <= 0.0 || coef_envy[i] == 0.0 {
                    continue;
                }
                let g = coef_envy[i] * w;
                let cap = c.truthful.caps[[r, i]];
                let swap_slope = if a[j] < cap {
                    value_slope(&geometry, &c.values, r, i, k, a[j]).1
                } else {
                    0.0
                };
                da[[r, j]] += g * swap_slope;
                dp[[r, j]] -= g;
                da[[r, i]] -= g * slope[i];
                dp[[r, i]] += g;
            }
        }
        if inp.variant.uses_business() && inp.rho.business != 0.0 {
            let a = a.as_slice().expect("contiguous");
            let mut g = vec![0.0; n];
            for con in inp.constraints {
                con.penalty(a, units, Some((&mut g, inp.rho.business * w)));
            }
            for i in 0..n {
                da[[r, i]] += g[i];
            }
        }
    }
    let mut grads = MechanismGrads::zeros_like(params);
    let bid_grad = params.backward(&c.truthful, &c.t_out, &c.t_tape, &da, &dp, Some(&mut grads), want_bids);
    params.backward(&c.misreports.profiles, &c.m_out, &c.m_tape, &dma, &dmp, Some(&mut grads), false);
    (grads, bid_grad)
}

/// Loss on one batch with its exact gradient. Misreports are held fixed.
pub fn loss_and_gradient(
    params: &MechanismParams,
    inp: &LossInputs<'_>,
    exec: Exec,
    want_bids: bool,
) -> Result<LossGradient, TrainError> {
    let n = params.fingerprint.consumers;
    let batch = inp.truthful.rows();
    if batch == 0 || inp.misreports.rows() != batch * n || inp.values.dim() != inp.truthful.bids.dim() {
        return Err(TrainError::Config("loss inputs have inconsistent shapes".into()));
    }
    let chunks: Vec<ChunkForward> = exec
        .map_chunks(batch, SAMPLE_CHUNK, |rows| forward_chunk(params, inp, rows))
        .into_iter()
        .collect::<Result<_, _>>()?;

    let b = batch as f64;
    let mut stats = BatchStats {
        revenue: 0.0,
        nsw: 0.0,
        regret: vec![0.0; n],
        envy: vec![0.0; n],
        business: 0.0,
    };
    for c in &chunks {
        for r in 0..c.rows.len() {
            stats.revenue += c.revenue[r] / b;
            stats.nsw += c.fc[r] * c.consumer[r] / b;
            stats.business += c.business[r] / b;
            for i in 0..n {
                stats.regret[i] += c.regret[[r, i]] / b;
                stats.envy[i] += c.envy[[r, i]] / b;
            }
        }
    }
    let terms = composite_loss(inp.variant, &stats, inp.lagrange, &inp.rho);

    let parts = exec.map(chunks.len(), |ci| backward_chunk(params, inp, &chunks[ci], &stats, batch, want_bids));
    let mut grads = MechanismGrads::zeros_like(params);
    let mut bid_grad = want_bids.then(|| Array2::zeros(inp.truthful.bids.dim()));
    for (c, (g, bg)) in chunks.iter().zip(parts) {
        grads.add_assign(&g);
        if let (Some(total), Some(part)) = (bid_grad.as_mut(), bg) {
            total.slice_mut(s![c.rows.clone(), ..]).assign(&part);
        }
    }
    Ok(LossGradient {
        terms,
        stats,
        grads,
        bid_grad,
    })
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub nsw: f64,
    pub revenue: f64,
    /// Mean per-unit regret across consumers.
    pub regret: f64,
    /// Mean per-unit envy across consumers.
    pub envy: f64,
    /// Mean business-constraint shortfall in units.
    pub business: f64,
    pub lambda_norm: f64,
    pub rho_regret: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_ms: Option<u64>,
}

pub struct Trainer {
    scenario: Scenario,
    config: TrainerConfig,
    params: MechanismParams,
    adam_alloc: AdamState,
    adam_pay: AdamState,
    lagrange: LagrangeState,
    constraints: Vec<BusinessConstraint>,
    rng: ChaCha8Rng,
    step: usize,
    exec: Exec,
}

impl Trainer {
    /// Fresh networks seeded from the configuration. The configuration is
    /// used as given; [`train`] validates it first.
    pub fn new(scenario: &Scenario, config: TrainerConfig, exec: Exec) -> Result<Self, TrainError> {
        scenario.validate()?;
        let params = MechanismParams::new(Architecture::default(), scenario.fingerprint(), config.seed)?;
        Self::with_params(scenario, config, params, exec)
    }

    pub fn with_params(
        scenario: &Scenario,
        config: TrainerConfig,
        params: MechanismParams,
        exec: Exec,
    ) -> Result<Self, TrainError> {
        if params.fingerprint != scenario.fingerprint() {
            return Err(TrainError::Config("mechanism was built for a different scenario".into()));
        }
        let constraints = config
            .business
            .clone()
            .unwrap_or_else(|| scenario.business.clone())
            .iter()
            .map(|c| c.with_margin(config.business_margin))
            .collect();
        Ok(Self {
            scenario: scenario.clone(),
            adam_alloc: AdamState::new(params.allocation_net.params().len()),
            adam_pay: AdamState::new(params.payment_net.params().len()),
            lagrange: LagrangeState::new(scenario.consumers),
            rng: stream_rng(config.seed, Stream::Training),
            params,
            config,
            constraints,
            step: 0,
            exec,
        })
    }

    pub fn params(&self) -> &MechanismParams {
        &self.params
    }

    pub fn lagrange(&self) -> &LagrangeState {
        &self.lagrange
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn into_params(self) -> MechanismParams {
        self.params
    }

    /// Constraints in force during training (margin applied).
    pub fn constraints(&self) -> &[BusinessConstraint] {
        &self.constraints
    }

    fn sample_batch(&mut self) -> Result<ProfileBatch, TrainError> {
        let profiles = (0..self.config.batch_size)
            .map(|_| self.scenario.sample_profile(&mut self.rng))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ProfileBatch::from_profiles(&profiles, &self.params.fingerprint)?)
    }

    pub fn step(&mut self) -> Result<LogRow, TrainError> {
        let step = self.step;
        let diverged = |e: TrainError| match e {
            TrainError::Divergence { detail, .. } => TrainError::Divergence { step, detail },
            other => other,
        };
        let batch = self.sample_batch()?;
        let k = self.params.fingerprint.lots;
        let mut misreports = MisreportBatch::truthful(&batch, k);
        let found = search_misreports(
            &self.params,
            &misreports,
            &self.config.ascent,
            derive_seed(self.config.seed, Stream::Restarts, step as u64),
            self.exec,
        )
        .map_err(|e| diverged(e.into()))?;
        for q in 0..misreports.rows() {
            let i = misreports.consumer[q];
            misreports
                .profiles
                .bids
                .slice_mut(s![q, i * k..(i + 1) * k])
                .assign(&found.best_bid.row(q));
        }
        let rho = PenaltyWeights {
            regret: self.config.rho_regret_at(step),
            envy: self.config.rho_envy,
            business: self.config.rho_business,
        };
        let inputs = LossInputs {
            variant: self.config.variant,
            truthful: &batch,
            values: &batch.bids,
            misreports: &misreports,
            lagrange: &self.lagrange,
            rho,
            constraints: &self.constraints,
        };
        let out = loss_and_gradient(&self.params, &inputs, self.exec, false).map_err(diverged)?;
        if !out.terms.total.is_finite() || !out.grads.is_finite() {
            return Err(TrainError::Divergence {
                step,
                detail: format!("loss {:?} on batch with {:?}", out.terms, out.stats),
            });
        }
        let adam = AdamConfig::with_learning_rate(self.config.learning_rate);
        self.adam_alloc
            .step(self.params.allocation_net.params_mut(), &out.grads.allocation, &adam)?;
        self.adam_pay
            .step(self.params.payment_net.params_mut(), &out.grads.payment, &adam)?;
        let envy = self.config.variant.uses_envy().then_some(out.stats.envy.as_slice());
        self.lagrange = lagrange_update(&self.lagrange, &out.stats.regret, envy, self.config.multiplier_rate);
        self.step += 1;

        let m = self.params.fingerprint.units as f64;
        let n = out.stats.regret.len() as f64;
        Ok(LogRow {
            step,
            loss: out.terms.total,
            nsw: out.stats.nsw,
            revenue: out.stats.revenue,
            regret: out.stats.regret.iter().sum::<f64>() / n / m,
            envy: out.stats.envy.iter().sum::<f64>() / n / m,
            business: out.stats.business,
            lambda_norm: self.lagrange.norm(),
            rho_regret: rho.regret,
            wall_ms: None,
        })
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub params: MechanismParams,
    pub lagrange: LagrangeState,
    pub log: Vec<LogRow>,
}

/// Runs `config.steps` outer steps. `on_step` sees every log row together
/// with the trainer state after the step (for checkpoints and progress).
pub fn train(
    scenario: &Scenario,
    config: &TrainerConfig,
    exec: Exec,
    mut on_step: impl FnMut(&LogRow, &Trainer) -> Result<(), TrainError>,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let mut trainer = Trainer::new(scenario, config.clone(), exec)?;
    let mut log = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        let row = trainer.step()?;
        on_step(&row, &trainer)?;
        log.push(row);
    }
    Ok(TrainOutcome {
        lagrange: trainer.lagrange.clone(),
        params: trainer.into_params(),
        log,
    })
}
