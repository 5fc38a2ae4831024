use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, MlpTape};
use super::MechanismError;
use crate::auction::{AuctionOutcome, LotGeometry, LotGrid, ReservePrice, Schedule};

/// Scenario properties a trained mechanism is tied to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFingerprint {
    pub units: u64,
    pub consumers: usize,
    pub lots: usize,
    pub reserve: f64,
    /// Upper bound of the valuation distribution, used to normalise bids.
    pub value_high: f64,
    pub distribution: String,
}

impl ScenarioFingerprint {
    pub fn grid(&self) -> Result<LotGrid, MechanismError> {
        Ok(LotGrid::new(self.units, self.lots)?)
    }

    fn check(&self) -> Result<(), MechanismError> {
        self.grid()?;
        ReservePrice::new(self.reserve)?;
        if self.consumers == 0 {
            return Err(MechanismError::Invalid("at least one consumer is required".into()));
        }
        if !(self.value_high.is_finite() && self.value_high > self.reserve) {
            return Err(MechanismError::Invalid(format!(
                "value upper bound {} must exceed the reserve {}",
                self.value_high, self.reserve
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub hidden: Vec<usize>,
    pub activation: String,
}

impl Default for Architecture {
    /// Five hidden ReLU layers of 80 units.
    fn default() -> Self {
        Self {
            hidden: vec![80; 5],
            activation: "relu".into(),
        }
    }
}

impl Architecture {
    pub fn widths(&self, inputs: usize, outputs: usize) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(inputs);
        w.extend_from_slice(&self.hidden);
        w.push(outputs);
        w
    }
}

/// Allocation and payment networks plus everything needed to reuse them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismParams {
    pub architecture: Architecture,
    pub fingerprint: ScenarioFingerprint,
    pub seed: u64,
    pub allocation_net: Mlp,
    pub payment_net: Mlp,
}

/// Gradients with the same flat layout as the two networks.
#[derive(Debug, Clone, PartialEq)]
pub struct MechanismGrads {
    pub allocation: Vec<f64>,
    pub payment: Vec<f64>,
}

impl MechanismGrads {
    pub fn zeros_like(params: &MechanismParams) -> Self {
        Self {
            allocation: vec![0.0; params.allocation_net.params().len()],
            payment: vec![0.0; params.payment_net.params().len()],
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.allocation.iter_mut().zip(&other.allocation) {
            *a += b;
        }
        for (a, b) in self.payment.iter_mut().zip(&other.payment) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.allocation.iter_mut().chain(self.payment.iter_mut()).for_each(|g| *g *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.allocation.iter().chain(&self.payment).all(|g| g.is_finite())
    }
}

/// A batch of bid profiles in dense form.
///
/// `bids` has one row per profile and `consumers * lots` columns (consumer
/// major); lots a consumer does not demand hold the reserve price. `caps`
/// holds each consumer's requirement.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileBatch {
    pub bids: Array2<f64>,
    pub caps: Array2<f64>,
}

impl ProfileBatch {
    pub fn from_profiles(profiles: &[Vec<Schedule>], fingerprint: &ScenarioFingerprint) -> Result<Self, MechanismError> {
        let (n, k) = (fingerprint.consumers, fingerprint.lots);
        let mut bids = Array2::zeros((profiles.len(), n * k));
        let mut caps = Array2::zeros((profiles.len(), n));
        for (r, profile) in profiles.iter().enumerate() {
            if profile.len() != n {
                return Err(crate::auction::AuctionError::ConsumerCountMismatch {
                    expected: n,
                    found: profile.len(),
                }
                .into());
            }
            for (i, s) in profile.iter().enumerate() {
                if s.prices.len() != k {
                    return Err(crate::auction::AuctionError::LotCountMismatch {
                        expected: k,
                        found: s.prices.len(),
                    }
                    .into());
                }
                for (j, p) in s.dense(fingerprint.reserve).into_iter().enumerate() {
                    bids[[r, i * k + j]] = p;
                }
                caps[[r, i]] = s.requirement as f64;
            }
        }
        Ok(Self { bids, caps })
    }

    pub fn rows(&self) -> usize {
        self.bids.nrows()
    }

    /// Copy of rows `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            bids: self.bids.slice(ndarray::s![range.clone(), ..]).to_owned(),
            caps: self.caps.slice(ndarray::s![range, ..]).to_owned(),
        }
    }
}

/// Fractional allocation, payment multipliers and payments for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct MechanismOutput {
    pub allocation: Array2<f64>,
    pub multipliers: Array2<f64>,
    pub payments: Array2<f64>,
}

impl MechanismOutput {
    pub fn outcome(&self, row: usize) -> AuctionOutcome {
        AuctionOutcome {
            allocation: self.allocation.row(row).to_vec(),
            payments: self.payments.row(row).to_vec(),
        }
    }
}

/// Forward intermediates needed by [`MechanismParams::backward`].
#[derive(Debug, Clone)]
pub struct ForwardTape {
    alloc: MlpTape,
    pay: MlpTape,
    softmax: Array2<f64>,
    free: Array2<bool>,
    /// `(target - clamped caps) / free softmax mass` per row.
    factor: Vec<f64>,
    free_mass: Vec<f64>,
    surplus: Array2<f64>,
    marginal: Array2<f64>,
}

impl MechanismParams {
    pub fn new(architecture: Architecture, fingerprint: ScenarioFingerprint, seed: u64) -> Result<Self, MechanismError> {
        fingerprint.check()?;
        if architecture.activation != "relu" || architecture.hidden.iter().any(|&w| w == 0) {
            return Err(MechanismError::Invalid(format!(
                "unsupported architecture {:?} / {}",
                architecture.hidden, architecture.activation
            )));
        }
        let widths = architecture.widths(fingerprint.consumers * fingerprint.lots, fingerprint.consumers);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let allocation_net = Mlp::random(&widths, &mut rng);
        let payment_net = Mlp::random(&widths, &mut rng);
        Ok(Self {
            architecture,
            fingerprint,
            seed,
            allocation_net,
            payment_net,
        })
    }

    /// Checks layer chaining, declared widths and finiteness, e.g. after loading.
    pub fn validate(&self) -> Result<(), MechanismError> {
        self.fingerprint.check()?;
        let widths = self
            .architecture
            .widths(self.fingerprint.consumers * self.fingerprint.lots, self.fingerprint.consumers);
        for (name, net) in [("allocation", &self.allocation_net), ("payment", &self.payment_net)] {
            if net.widths() != widths.as_slice() || net.params().len() != Mlp::param_count(&widths) {
                return Err(MechanismError::Invalid(format!("{name} network does not match its architecture")));
            }
            if net.params().iter().any(|p| !p.is_finite()) {
                return Err(MechanismError::NonFinite(format!("{name} network parameters")));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> LotGrid {
        self.fingerprint.grid().expect("fingerprint checked on construction")
    }

    pub fn reserve(&self) -> f64 {
        self.fingerprint.reserve
    }

    fn normalise(&self, bids: &Array2<f64>) -> Array2<f64> {
        let lo = self.fingerprint.reserve;
        let span = self.fingerprint.value_high - lo;
        bids.mapv(|b| (b - lo) / span)
    }

    fn check_batch(&self, batch: &ProfileBatch) -> Result<(), MechanismError> {
        let (n, k) = (self.fingerprint.consumers, self.fingerprint.lots);
        if batch.bids.ncols() != n * k || batch.caps.ncols() != n || batch.caps.nrows() != batch.bids.nrows() {
            return Err(MechanismError::Shape(format!(
                "batch has {} bid columns and {} caps, expected {} and {}",
                batch.bids.ncols(),
                batch.caps.ncols(),
                n * k,
                n
            )));
        }
        Ok(())
    }

    pub fn evaluate(&self, batch: &ProfileBatch) -> Result<MechanismOutput, MechanismError> {
        self.forward(batch).map(|(out, _)| out)
    }

    pub fn forward(&self, batch: &ProfileBatch) -> Result<(MechanismOutput, ForwardTape), MechanismError> {
        self.check_batch(batch)?;
        let rows = batch.rows();
        let n = self.fingerprint.consumers;
        let k = self.fingerprint.lots;
        let m = self.fingerprint.units as f64;
        let reserve = self.fingerprint.reserve;
        let x = self.normalise(&batch.bids);

        let alloc_tape = self.allocation_net.forward(&x);
        let pay_tape = self.payment_net.forward(&x);
        if alloc_tape.output.iter().chain(&pay_tape.output).any(|v| !v.is_finite()) {
            return Err(MechanismError::NonFinite("network output".into()));
        }

        let mut softmax = alloc_tape.output.clone();
        for mut row in softmax.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            row.mapv_inplace(|z| (z - max).exp());
            let total = row.sum();
            row.mapv_inplace(|e| e / total);
        }

        let mut allocation = Array2::zeros((rows, n));
        let mut free = Array2::from_elem((rows, n), true);
        let mut factor = vec![0.0; rows];
        let mut free_mass = vec![0.0; rows];
        for r in 0..rows {
            let caps = batch.caps.row(r);
            let s = softmax.row(r);
            let target = m.min(caps.sum());
            let mut clamped = 0.0;
            // each pass clamps at least one consumer, so n passes suffice
            for _ in 0..=n {
                let mass: f64 = (0..n).filter(|&i| free[[r, i]]).map(|i| s[i]).sum();
                let f = if mass > 0.0 { (target - clamped) / mass } else { 0.0 };
                factor[r] = f;
                free_mass[r] = mass;
                let mut violated = false;
                for i in 0..n {
                    if free[[r, i]] && f * s[i] > caps[i] {
                        free[[r, i]] = false;
                        clamped += caps[i];
                        violated = true;
                    }
                }
                if !violated {
                    break;
                }
            }
            for i in 0..n {
                allocation[[r, i]] = if free[[r, i]] { factor[r] * s[i] } else { caps[i] };
            }
        }

        let multipliers = pay_tape.output.mapv(sigmoid);
        let geometry = self.grid().geometry();
        let mut payments = Array2::zeros((rows, n));
        let mut surplus = Array2::zeros((rows, n));
        let mut marginal = Array2::zeros((rows, n));
        for r in 0..rows {
            let bids = batch.bids.row(r);
            let bids = bids.as_slice().expect("standard layout");
            for i in 0..n {
                let a = allocation[[r, i]];
                let (value, slope) = geometry.value_and_marginal(&bids[i * k..(i + 1) * k], a);
                let floor = reserve * a;
                let sur = (value - floor).max(0.0);
                surplus[[r, i]] = sur;
                marginal[[r, i]] = slope;
                payments[[r, i]] = (floor + multipliers[[r, i]] * sur).clamp(floor, floor + sur);
            }
        }

        let out = MechanismOutput {
            allocation,
            multipliers,
            payments,
        };
        if out.allocation.iter().chain(&out.payments).any(|v| !v.is_finite()) {
            return Err(MechanismError::NonFinite("mechanism output".into()));
        }
        let tape = ForwardTape {
            alloc: alloc_tape,
            pay: pay_tape,
            softmax,
            free,
            factor,
            free_mass,
            surplus,
            marginal,
        };
        Ok((out, tape))
    }

    /// Reverse pass for a scalar loss whose gradients with respect to the
    /// allocation and payments are `d_alloc` and `d_pay`.
    ///
    /// Network gradients are accumulated into `grads` when given. When
    /// `want_bids` is set the gradient with respect to the dense bid matrix
    /// is returned. Kinks take the right derivative.
    pub fn backward(
        &self,
        batch: &ProfileBatch,
        out: &MechanismOutput,
        tape: &ForwardTape,
        d_alloc: &Array2<f64>,
        d_pay: &Array2<f64>,
        mut grads: Option<&mut MechanismGrads>,
        want_bids: bool,
    ) -> Option<Array2<f64>> {
        let rows = batch.rows();
        let n = self.fingerprint.consumers;
        let k = self.fingerprint.lots;
        let reserve = self.fingerprint.reserve;
        let geometry: LotGeometry = self.grid().geometry();

        let mut d_bids = want_bids.then(|| Array2::zeros((rows, n * k)));
        let mut d_pay_logit = Array2::zeros((rows, n));
        let mut d_a = Array2::zeros((rows, n));
        let mut units = vec![0.0; k];
        for r in 0..rows {
            for i in 0..n {
                let dp = d_pay[[r, i]];
                let phat = out.multipliers[[r, i]];
                let sur = tape.surplus[[r, i]];
                d_pay_logit[[r, i]] = dp * sur * phat * (1.0 - phat);
                let d_sur = dp * phat;
                d_a[[r, i]] = d_alloc[[r, i]] + dp * reserve + d_sur * (tape.marginal[[r, i]] - reserve);
                if let Some(db) = d_bids.as_mut() {
                    geometry.units_per_lot(out.allocation[[r, i]], &mut units);
                    for (j, u) in units.iter().enumerate() {
                        db[[r, i * k + j]] += d_sur * u;
                    }
                }
            }
        }

        let mut d_logit = Array2::zeros((rows, n));
        for r in 0..rows {
            let s = tape.softmax.row(r);
            let mass = tape.free_mass[r];
            let mut ds = vec![0.0; n];
            if mass > 0.0 {
                let g: f64 = (0..n).filter(|&i| tape.free[[r, i]]).map(|i| d_a[[r, i]] * s[i]).sum::<f64>() / mass;
                for i in 0..n {
                    if tape.free[[r, i]] {
                        ds[i] = tape.factor[r] * (d_a[[r, i]] - g);
                    }
                }
            }
            let dot: f64 = (0..n).map(|i| ds[i] * s[i]).sum();
            for i in 0..n {
                d_logit[[r, i]] = s[i] * (ds[i] - dot);
            }
        }

        let dx_a = self.allocation_net.backward(
            &tape.alloc,
            d_logit,
            grads.as_deref_mut().map(|g| g.allocation.as_mut_slice()),
            want_bids,
        );
        let dx_p = self.payment_net.backward(
            &tape.pay,
            d_pay_logit,
            grads.map(|g| g.payment.as_mut_slice()),
            want_bids,
        );
        let mut d_bids = d_bids?;
        let span = self.fingerprint.value_high - reserve;
        let dx = dx_a.expect("requested") + &dx_p.expect("requested");
        d_bids.scaled_add(1.0 / span, &dx);
        Some(d_bids)
    }

    /// Fractional outcome for a single profile of validated bids.
    pub fn outcome(&self, bids: &[Schedule]) -> Result<AuctionOutcome, MechanismError> {
        let batch = ProfileBatch::from_profiles(&[bids.to_vec()], &self.fingerprint)?;
        Ok(self.evaluate(&batch)?.outcome(0))
    }

    /// Whole-unit outcome for a single profile. The allocation is rounded and
    /// each payment is re-priced on the rounded quantity with the same
    /// multiplier, so it stays between the reserve and the bid value.
    pub fn rounded_outcome(&self, bids: &[Schedule]) -> Result<RoundedOutcome, MechanismError> {
        let batch = ProfileBatch::from_profiles(&[bids.to_vec()], &self.fingerprint)?;
        let out = self.evaluate(&batch)?;
        let grid = self.grid();
        let m = grid.total_units();
        let caps: Vec<u64> = bids.iter().map(|b| b.requirement.min(m)).collect();
        let total = m.min(caps.iter().sum());
        let fractional = out.outcome(0);
        let allocation = super::round_allocation(&fractional.allocation, &caps, total)?;
        let r = self.reserve();
        let mut payments = Vec::with_capacity(bids.len());
        for (i, &a) in allocation.iter().enumerate() {
            let a = a as f64;
            let value = crate::auction::schedule_value(&bids[i], a, &grid)?;
            payments.push(r * a + out.multipliers[[0, i]] * (value - r * a).max(0.0));
        }
        Ok(RoundedOutcome {
            allocation,
            payments,
            multipliers: out.multipliers.row(0).to_vec(),
            fractional,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundedOutcome {
    pub allocation: Vec<u64>,
    pub payments: Vec<f64>,
    pub multipliers: Vec<f64>,
    pub fractional: AuctionOutcome,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
