//! Misreport search: projected gradient ascent on one consumer's bid with
//! everyone else truthful.

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::auction::{LotGrid, ReservePrice, Schedule};
use crate::exec::Exec;
use crate::mechanism::{MechanismError, MechanismParams, ProfileBatch};
use crate::vcg;

/// Rows of full bid profiles, each scored for one consumer.
#[derive(Debug, Clone)]
pub struct MisreportBatch {
    pub profiles: ProfileBatch,
    /// Consumer whose utility row `r` measures.
    pub consumer: Vec<usize>,
    /// That consumer's true per-lot values, reserve-filled like the bids.
    pub values: Array2<f64>,
}

impl MisreportBatch {
    /// One row per (profile, consumer) pair, consumer-minor, with truthful bids.
    pub fn truthful(profiles: &ProfileBatch, lots: usize) -> Self {
        let rows = profiles.rows();
        let n = profiles.caps.ncols();
        let mut bids = Array2::zeros((rows * n, n * lots));
        let mut caps = Array2::zeros((rows * n, n));
        let mut values = Array2::zeros((rows * n, lots));
        let mut consumer = Vec::with_capacity(rows * n);
        for r in 0..rows {
            for i in 0..n {
                let q = r * n + i;
                bids.row_mut(q).assign(&profiles.bids.row(r));
                caps.row_mut(q).assign(&profiles.caps.row(r));
                values
                    .row_mut(q)
                    .assign(&profiles.bids.slice(ndarray::s![r, i * lots..(i + 1) * lots]));
                consumer.push(i);
            }
        }
        Self {
            profiles: ProfileBatch { bids, caps },
            consumer,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.consumer.len()
    }

    fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            profiles: self.profiles.slice(range.clone()),
            consumer: self.consumer[range.clone()].to_vec(),
            values: self.values.slice(ndarray::s![range, ..]).to_owned(),
        }
    }

    /// The scored consumer's bid in row `r`.
    pub fn own_bid(&self, r: usize) -> ArrayView1<'_, f64> {
        let k = self.values.ncols();
        let i = self.consumer[r];
        self.profiles.bids.slice(ndarray::s![r, i * k..(i + 1) * k])
    }
}

/// A mechanism as seen by a single misreporting consumer.
pub trait BidResponse: Sync {
    fn lots(&self) -> usize;
    fn reserve(&self) -> f64;
    fn value_high(&self) -> f64;
    fn grid(&self) -> LotGrid;

    /// Utility of the scored consumer in every row and, when requested, its
    /// gradient with respect to that consumer's own `k` bid prices.
    fn respond(&self, batch: &MisreportBatch, want_grad: bool) -> Result<(Vec<f64>, Option<Array2<f64>>), MechanismError>;
}

impl BidResponse for MechanismParams {
    fn lots(&self) -> usize {
        self.fingerprint.lots
    }

    fn reserve(&self) -> f64 {
        self.fingerprint.reserve
    }

    fn value_high(&self) -> f64 {
        self.fingerprint.value_high
    }

    fn grid(&self) -> LotGrid {
        MechanismParams::grid(self)
    }

    fn respond(&self, batch: &MisreportBatch, want_grad: bool) -> Result<(Vec<f64>, Option<Array2<f64>>), MechanismError> {
        let rows = batch.rows();
        let n = self.fingerprint.consumers;
        let k = self.fingerprint.lots;
        let geometry = self.grid().geometry();
        let (out, tape) = self.forward(&batch.profiles)?;
        let mut utility = Vec::with_capacity(rows);
        let mut d_alloc = Array2::zeros((rows, n));
        let mut d_pay = Array2::zeros((rows, n));
        for r in 0..rows {
            let i = batch.consumer[r];
            let values = batch.values.row(r);
            let (v, slope) = geometry.value_and_marginal(values.as_slice().expect("standard layout"), out.allocation[[r, i]]);
            utility.push(v - out.payments[[r, i]]);
            d_alloc[[r, i]] = slope;
            d_pay[[r, i]] = -1.0;
        }
        if !want_grad {
            return Ok((utility, None));
        }
        let d_bids = self
            .backward(&batch.profiles, &out, &tape, &d_alloc, &d_pay, None, true)
            .expect("bid gradient requested");
        let mut grad = Array2::zeros((rows, k));
        for r in 0..rows {
            let i = batch.consumer[r];
            grad.row_mut(r).assign(&d_bids.slice(ndarray::s![r, i * k..(i + 1) * k]));
        }
        Ok((utility, Some(grad)))
    }
}

/// The analytic VCG mechanism; its utility is piecewise constant in the own
/// bid almost everywhere, so the reported gradient is zero.
#[derive(Debug, Clone)]
pub struct VcgResponse {
    pub grid: LotGrid,
    pub reserve: ReservePrice,
    pub value_high: f64,
}

impl VcgResponse {
    fn schedules(&self, batch: &MisreportBatch, r: usize) -> Vec<Schedule> {
        let k = self.grid.lot_count();
        let n = batch.profiles.caps.ncols();
        (0..n)
            .map(|i| {
                let prices = batch.profiles.bids.slice(ndarray::s![r, i * k..(i + 1) * k]);
                Schedule::with_requirement(prices.as_slice().expect("contiguous"), batch.profiles.caps[[r, i]] as u64, &self.grid)
            })
            .collect()
    }
}

impl BidResponse for VcgResponse {
    fn lots(&self) -> usize {
        self.grid.lot_count()
    }

    fn reserve(&self) -> f64 {
        self.reserve.get()
    }

    fn value_high(&self) -> f64 {
        self.value_high
    }

    fn grid(&self) -> LotGrid {
        self.grid
    }

    fn respond(&self, batch: &MisreportBatch, want_grad: bool) -> Result<(Vec<f64>, Option<Array2<f64>>), MechanismError> {
        let geometry = self.grid.geometry();
        let mut utility = Vec::with_capacity(batch.rows());
        for r in 0..batch.rows() {
            let bids = self.schedules(batch, r);
            let out = vcg::vcg_unchecked(&bids, &self.grid, self.reserve)
                .map_err(|e| MechanismError::Invalid(e.to_string()))?;
            let i = batch.consumer[r];
            let values = batch.values.row(r);
            let (v, _) = geometry.value_and_marginal(values.as_slice().expect("standard layout"), out.allocation[i]);
            utility.push(v - out.payments[i]);
        }
        let grad = want_grad.then(|| Array2::zeros((batch.rows(), self.grid.lot_count())));
        Ok((utility, grad))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AscentConfig {
    /// Gradient steps per start.
    pub steps: usize,
    /// Adam step size in normalised bid units.
    pub rate: f64,
    /// Starting points: the truthful bid plus `restarts - 1` random ones.
    pub restarts: usize,
    /// Largest random offset of a restart, in normalised bid units.
    pub restart_spread: f64,
}

impl Default for AscentConfig {
    fn default() -> Self {
        Self {
            steps: 25,
            rate: 0.1,
            restarts: 1,
            restart_spread: 0.3,
        }
    }
}

/// Result of a misreport search, one entry per row.
#[derive(Debug, Clone)]
pub struct AscentResult {
    pub truthful_utility: Vec<f64>,
    pub best_utility: Vec<f64>,
    /// Best bid found for the scored consumer (the truthful bid when nothing beat it).
    pub best_bid: Array2<f64>,
}

impl AscentResult {
    /// `max(0, best - truthful)` per row.
    pub fn regret(&self) -> Vec<f64> {
        self.best_utility
            .iter()
            .zip(&self.truthful_utility)
            .map(|(b, t)| (b - t).max(0.0))
            .collect()
    }
}

/// Monotone, bounded projection of one consumer's bid over its demanded lots.
pub fn project_bid(bid: &mut [f64], demanded: usize, reserve: f64, value_high: f64) {
    for j in 1..demanded {
        if bid[j] > bid[j - 1] {
            bid[j] = bid[j - 1];
        }
    }
    for b in bid[..demanded].iter_mut() {
        *b = b.clamp(reserve, value_high);
    }
    for b in bid[demanded..].iter_mut() {
        *b = reserve;
    }
}

/// Rows are processed in chunks of this many, which bounds tape memory.
const CHUNK: usize = 64;

/// Searches for each row's most profitable misreport.
///
/// `seed` drives restart offsets; row `r` of the whole batch always uses the
/// same offsets regardless of chunking or execution strategy.
pub fn search_misreports<M: BidResponse + ?Sized>(
    model: &M,
    batch: &MisreportBatch,
    cfg: &AscentConfig,
    seed: u64,
    exec: Exec,
) -> Result<AscentResult, MechanismError> {
    let parts = exec.map_chunks(batch.rows(), CHUNK, |range| {
        let start = range.start;
        search_chunk(model, &batch.slice(range), cfg, seed, start)
    });
    let k = model.lots();
    let mut out = AscentResult {
        truthful_utility: Vec::with_capacity(batch.rows()),
        best_utility: Vec::with_capacity(batch.rows()),
        best_bid: Array2::zeros((batch.rows(), k)),
    };
    let mut r0 = 0;
    for part in parts {
        let part = part?;
        let n = part.truthful_utility.len();
        out.truthful_utility.extend(part.truthful_utility);
        out.best_utility.extend(part.best_utility);
        out.best_bid.slice_mut(ndarray::s![r0..r0 + n, ..]).assign(&part.best_bid);
        r0 += n;
    }
    Ok(out)
}

fn search_chunk<M: BidResponse + ?Sized>(
    model: &M,
    batch: &MisreportBatch,
    cfg: &AscentConfig,
    seed: u64,
    first_row: usize,
) -> Result<AscentResult, MechanismError> {
    let rows = batch.rows();
    let k = model.lots();
    let reserve = model.reserve();
    let high = model.value_high();
    let span = high - reserve;
    let grid = model.grid();
    let demanded: Vec<usize> = (0..rows)
        .map(|r| {
            let i = batch.consumer[r];
            let cap = batch.profiles.caps[[r, i]] as u64;
            (0..k).take_while(|&j| grid.lot_start(j) < cap).count()
        })
        .collect();

    let (truthful, _) = model.respond(batch, false)?;
    check_finite(&truthful)?;
    let mut best = truthful.clone();
    let mut best_bid = Array2::zeros((rows, k));
    for r in 0..rows {
        best_bid.row_mut(r).assign(&batch.own_bid(r));
    }

    let (beta1, beta2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    for restart in 0..cfg.restarts {
        let mut work = batch.clone();
        if restart > 0 {
            for r in 0..rows {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(((first_row + r) as u64) << 8 | restart as u64);
                let mut bid = batch.own_bid(r).to_vec();
                for b in bid.iter_mut() {
                    *b += rng.random_range(-cfg.restart_spread..=cfg.restart_spread) * span;
                }
                project_bid(&mut bid, demanded[r], reserve, high);
                set_own_bid(&mut work, r, &bid);
            }
        }
        let mut m = Array2::<f64>::zeros((rows, k));
        let mut v = Array2::<f64>::zeros((rows, k));
        for t in 0..=cfg.steps {
            let last = t == cfg.steps;
            // the utility at the current point comes with the gradient for the next step
            let (u, grad) = model.respond(&work, !last)?;
            check_finite(&u)?;
            keep_best(&work, &u, &mut best, &mut best_bid);
            let Some(grad) = grad else { break };
            let c1 = 1.0 - beta1.powi(t as i32 + 1);
            let c2 = 1.0 - beta2.powi(t as i32 + 1);
            let mut moved = false;
            for r in 0..rows {
                let mut bid = work.own_bid(r).to_vec();
                for j in 0..demanded[r] {
                    // ascent in normalised units: d/dx = span * d/db
                    let g = grad[[r, j]] * span;
                    m[[r, j]] = beta1 * m[[r, j]] + (1.0 - beta1) * g;
                    v[[r, j]] = beta2 * v[[r, j]] + (1.0 - beta2) * g * g;
                    let step = cfg.rate * (m[[r, j]] / c1) / ((v[[r, j]] / c2).sqrt() + eps);
                    bid[j] += step * span;
                }
                project_bid(&mut bid, demanded[r], reserve, high);
                if bid.as_slice() != work.own_bid(r).as_slice().expect("contiguous") {
                    moved = true;
                    set_own_bid(&mut work, r, &bid);
                }
            }
            if !moved {
                break;
            }
        }
    }
    Ok(AscentResult {
        truthful_utility: truthful,
        best_utility: best,
        best_bid,
    })
}

fn set_own_bid(batch: &mut MisreportBatch, r: usize, bid: &[f64]) {
    let k = batch.values.ncols();
    let i = batch.consumer[r];
    for (j, &b) in bid.iter().enumerate() {
        batch.profiles.bids[[r, i * k + j]] = b;
    }
}

fn keep_best(work: &MisreportBatch, u: &[f64], best: &mut [f64], best_bid: &mut Array2<f64>) {
    for r in 0..u.len() {
        if u[r] > best[r] {
            best[r] = u[r];
            best_bid.row_mut(r).assign(&work.own_bid(r));
        }
    }
}

fn check_finite(u: &[f64]) -> Result<(), MechanismError> {
    if u.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(MechanismError::NonFinite("misreport utility".into()))
    }
}
