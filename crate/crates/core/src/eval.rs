//! Monte-Carlo evaluation of a mechanism over sampled truthful profiles.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auction::{
    consumer_utilities, envy_profile, fc_revenue, fc_utility, schedule_value, AuctionOutcome, LotGrid, ReservePrice,
    Schedule,
};
use crate::exec::Exec;
use crate::mechanism::{MechanismError, MechanismParams, ProfileBatch, ScenarioFingerprint};
use crate::regret::{search_misreports, AscentConfig, MisreportBatch, VcgResponse};
use crate::scenario::{derive_seed, stream_rng, Scenario, ScenarioError, Stream};
use crate::trainer::BusinessConstraint;
use crate::vcg::{self, VcgError};

pub const REPORT_VERSION: u32 = 1;

/// Samples handled per parallel work item.
const SAMPLE_CHUNK: usize = 32;

const BOUND_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Vcg(#[from] VcgError),
    #[error(transparent)]
    Auction(#[from] crate::auction::AuctionError),
    #[error("mechanism was trained for {found:?}, scenario is {expected:?}")]
    FingerprintMismatch {
        expected: Box<ScenarioFingerprint>,
        found: Box<ScenarioFingerprint>,
    },
    #[error("at least one evaluation sample is required")]
    NoSamples,
    #[error("reports disagree: {0}")]
    Mismatch(String),
}

pub enum Mechanism<'a> {
    Vcg,
    Learned { params: &'a MechanismParams, label: String },
}

impl Mechanism<'_> {
    pub fn label(&self) -> &str {
        match self {
            Mechanism::Vcg => "vcg",
            Mechanism::Learned { label, .. } => label,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub samples: usize,
    pub seed: u64,
    pub ascent: AscentConfig,
    /// Constraints whose satisfaction rate is reported.
    pub business: Vec<BusinessConstraint>,
}

impl EvalConfig {
    /// 6000 samples, 200 ascent steps with 5 starts.
    pub fn new(seed: u64) -> Self {
        Self {
            samples: 6000,
            seed,
            ascent: AscentConfig {
                steps: 200,
                rate: 0.1,
                restarts: 5,
                restart_spread: 0.3,
            },
            business: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStat {
    pub mean: f64,
    pub std_err: f64,
}

impl MetricStat {
    fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            mean,
            std_err: (var / n).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusinessRate {
    pub constraint: BusinessConstraint,
    pub satisfied: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Smallest truthful utility of any consumer in any sample.
    pub min_consumer_utility: f64,
    /// Payments outside `[reserve * a_i, bid value of a_i]`.
    pub payment_bound_violations: usize,
    /// Largest `|sw - (fc + consumers)|` over samples.
    pub max_identity_error: f64,
    pub business: Vec<BusinessRate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub version: u32,
    pub mechanism: String,
    pub fingerprint: ScenarioFingerprint,
    pub samples: usize,
    pub seed: u64,
    pub ascent: AscentConfig,
    pub fc_utility: MetricStat,
    pub consumer_utility: MetricStat,
    pub social_welfare: MetricStat,
    pub nash_social_welfare: MetricStat,
    pub fc_revenue: MetricStat,
    /// Largest per-unit regret of any consumer, averaged over samples.
    pub regret: MetricStat,
    /// Largest per-unit envy of any consumer, averaged over samples.
    pub envy: MetricStat,
    pub diagnostics: Diagnostics,
}

impl MetricsReport {
    /// Means in table column order.
    pub fn means(&self) -> [f64; 7] {
        [
            self.fc_utility.mean,
            self.consumer_utility.mean,
            self.social_welfare.mean,
            self.nash_social_welfare.mean,
            self.fc_revenue.mean,
            self.regret.mean,
            self.envy.mean,
        ]
    }
}

#[derive(Default)]
struct SampleMetrics {
    fc: Vec<f64>,
    consumer: Vec<f64>,
    sw: Vec<f64>,
    nsw: Vec<f64>,
    revenue: Vec<f64>,
    regret: Vec<f64>,
    envy: Vec<f64>,
    min_utility: f64,
    violations: usize,
    identity: f64,
    satisfied: Vec<usize>,
}

pub fn evaluate(
    mechanism: &Mechanism<'_>,
    scenario: &Scenario,
    cfg: &EvalConfig,
    exec: Exec,
) -> Result<MetricsReport, EvalError> {
    scenario.validate()?;
    if cfg.samples == 0 {
        return Err(EvalError::NoSamples);
    }
    let fingerprint = scenario.fingerprint();
    if let Mechanism::Learned { params, .. } = mechanism {
        if params.fingerprint != fingerprint {
            return Err(EvalError::FingerprintMismatch {
                expected: Box::new(fingerprint),
                found: Box::new(params.fingerprint.clone()),
            });
        }
    }
    let grid = scenario.grid()?;
    let reserve = scenario.reserve_price()?;
    let mut rng = stream_rng(cfg.seed, Stream::Evaluation);
    let profiles = (0..cfg.samples)
        .map(|_| scenario.sample_profile(&mut rng))
        .collect::<Result<Vec<_>, _>>()?;
    let restart_seed = derive_seed(cfg.seed, Stream::Restarts, 0);
    let vcg_model = VcgResponse {
        grid,
        reserve,
        value_high: scenario.valuation.high(),
    };

    let parts = exec.map_chunks(cfg.samples, SAMPLE_CHUNK, |range| {
        let chunk = &profiles[range.clone()];
        let batch = ProfileBatch::from_profiles(chunk, &fingerprint)?;
        let outcomes: Vec<AuctionOutcome> = match mechanism {
            Mechanism::Vcg => chunk
                .iter()
                .map(|p| vcg::vcg_payments(p, &grid, reserve))
                .collect::<Result<_, _>>()?,
            Mechanism::Learned { params, .. } => {
                let out = params.evaluate(&batch)?;
                (0..chunk.len()).map(|r| out.outcome(r)).collect()
            }
        };
        let queries = MisreportBatch::truthful(&batch, grid.lot_count());
        // chunks have a fixed size, so this seed does not depend on the execution strategy
        let offset_seed = derive_seed(restart_seed, Stream::Restarts, range.start as u64);
        let found = match mechanism {
            Mechanism::Vcg => search_misreports(&vcg_model, &queries, &cfg.ascent, offset_seed, Exec::Sequential)?,
            Mechanism::Learned { params, .. } => {
                search_misreports(*params, &queries, &cfg.ascent, offset_seed, Exec::Sequential)?
            }
        };
        sample_metrics(chunk, &outcomes, &found.regret(), &grid, reserve, scenario.units, &cfg.business)
    });

    let mut all = SampleMetrics {
        min_utility: f64::INFINITY,
        satisfied: vec![0; cfg.business.len()],
        ..SampleMetrics::default()
    };
    for part in parts {
        let p = part?;
        all.fc.extend(p.fc);
        all.consumer.extend(p.consumer);
        all.sw.extend(p.sw);
        all.nsw.extend(p.nsw);
        all.revenue.extend(p.revenue);
        all.regret.extend(p.regret);
        all.envy.extend(p.envy);
        all.min_utility = all.min_utility.min(p.min_utility);
        all.violations += p.violations;
        all.identity = all.identity.max(p.identity);
        for (a, b) in all.satisfied.iter_mut().zip(&p.satisfied) {
            *a += b;
        }
    }
    Ok(MetricsReport {
        version: REPORT_VERSION,
        mechanism: mechanism.label().to_string(),
        fingerprint,
        samples: cfg.samples,
        seed: cfg.seed,
        ascent: cfg.ascent,
        fc_utility: MetricStat::of(&all.fc),
        consumer_utility: MetricStat::of(&all.consumer),
        social_welfare: MetricStat::of(&all.sw),
        nash_social_welfare: MetricStat::of(&all.nsw),
        fc_revenue: MetricStat::of(&all.revenue),
        regret: MetricStat::of(&all.regret),
        envy: MetricStat::of(&all.envy),
        diagnostics: Diagnostics {
            min_consumer_utility: all.min_utility,
            payment_bound_violations: all.violations,
            max_identity_error: all.identity,
            business: cfg
                .business
                .iter()
                .zip(&all.satisfied)
                .map(|(c, &k)| BusinessRate {
                    constraint: c.clone(),
                    satisfied: k as f64 / cfg.samples as f64,
                })
                .collect(),
        },
    })
}

fn sample_metrics(
    profiles: &[Vec<Schedule>],
    outcomes: &[AuctionOutcome],
    regret_rows: &[f64],
    grid: &LotGrid,
    reserve: ReservePrice,
    units: u64,
    business: &[BusinessConstraint],
) -> Result<SampleMetrics, EvalError> {
    let m = units as f64;
    let mut out = SampleMetrics {
        min_utility: f64::INFINITY,
        satisfied: vec![0; business.len()],
        ..SampleMetrics::default()
    };
    for (s, (values, outcome)) in profiles.iter().zip(outcomes).enumerate() {
        let n = values.len();
        let utilities = consumer_utilities(values, outcome, grid)?;
        let fc = fc_utility(&outcome.payments, reserve, units);
        let consumer: f64 = utilities.iter().sum();
        // welfare straight from values, independent of payments
        let mut sw = -reserve.get() * m;
        for (v, &a) in values.iter().zip(&outcome.allocation) {
            sw += schedule_value(v, a, grid)?;
        }
        out.identity = out.identity.max((sw - (fc + consumer)).abs());
        out.fc.push(fc);
        out.consumer.push(consumer);
        out.sw.push(sw);
        out.nsw.push(fc * consumer);
        out.revenue.push(fc_revenue(&outcome.payments));
        let worst_regret = regret_rows[s * n..(s + 1) * n].iter().fold(0.0f64, |a, &b| a.max(b));
        out.regret.push(worst_regret / m);
        let envy = envy_profile(values, outcome, grid)?;
        out.envy.push(envy.iter().fold(0.0f64, |a, &b| a.max(b)) / m);
        for (i, v) in values.iter().enumerate() {
            out.min_utility = out.min_utility.min(utilities[i]);
            let a = outcome.allocation[i];
            let p = outcome.payments[i];
            let top = schedule_value(v, a, grid)?;
            let lo = reserve.get() * a;
            let tol = BOUND_TOL * (1.0 + top.abs());
            if p < lo - tol || p > top + tol {
                out.violations += 1;
            }
        }
        for (count, c) in out.satisfied.iter_mut().zip(business) {
            if c.satisfied(&outcome.allocation, units) {
                *count += 1;
            }
        }
    }
    Ok(out)
}

/// Column headers in table order.
pub const COLUMNS: [&str; 7] = [
    "FC utility",
    "Consumer utility",
    "Social welfare",
    "NSW",
    "FC revenue",
    "Regret",
    "Envy",
];

/// Whether a larger value is better, per column.
const HIGHER_IS_BETTER: [bool; 7] = [true, true, true, true, true, false, false];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub mechanism: String,
    pub values: Vec<f64>,
    pub best: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub columns: Vec<String>,
    pub samples: usize,
    pub seed: u64,
    pub rows: Vec<ComparisonRow>,
}

pub fn compare(reports: &[MetricsReport]) -> Result<Comparison, EvalError> {
    let first = reports.first().ok_or_else(|| EvalError::Mismatch("no reports to compare".into()))?;
    for r in &reports[1..] {
        if r.fingerprint != first.fingerprint {
            return Err(EvalError::Mismatch(format!("{} and {} use different scenarios", first.mechanism, r.mechanism)));
        }
        if r.seed != first.seed {
            return Err(EvalError::Mismatch(format!("{} and {} use different seeds", first.mechanism, r.mechanism)));
        }
    }
    let values: Vec<[f64; 7]> = reports.iter().map(|r| r.means()).collect();
    let rows = reports
        .iter()
        .zip(&values)
        .map(|(r, v)| {
            let best = (0..7)
                .map(|c| {
                    reports.len() > 1
                        && values.iter().all(|o| {
                            if HIGHER_IS_BETTER[c] {
                                v[c] >= o[c]
                            } else {
                                v[c] <= o[c]
                            }
                        })
                })
                .collect();
            ComparisonRow {
                mechanism: r.mechanism.clone(),
                values: v.to_vec(),
                best,
            }
        })
        .collect();
    Ok(Comparison {
        columns: COLUMNS.iter().map(|c| c.to_string()).collect(),
        samples: first.samples,
        seed: first.seed,
        rows,
    })
}

impl Comparison {
    /// Aligned plain-text table; best values carry a trailing `*`.
    pub fn to_text(&self) -> String {
        let cells: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let mut line = vec![r.mechanism.clone()];
                for (c, (&v, &best)) in r.values.iter().zip(&r.best).enumerate() {
                    let text = if c >= 5 { format!("{v:.4}") } else { format!("{v:.0}") };
                    line.push(if best { format!("{text}*") } else { format!("{text} ") });
                }
                line
            })
            .collect();
        let mut header = vec!["Mechanism".to_string()];
        header.extend(self.columns.iter().cloned());
        let widths: Vec<usize> = (0..header.len())
            .map(|c| cells.iter().map(|l| l[c].len()).chain([header[c].len()]).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        let fmt_line = |out: &mut String, line: &[String]| {
            for (c, cell) in line.iter().enumerate() {
                if c == 0 {
                    let _ = write!(out, "{cell:<w$}", w = widths[c]);
                } else {
                    let _ = write!(out, "  {cell:>w$}", w = widths[c]);
                }
            }
            out.push('\n');
        };
        fmt_line(&mut out, &header);
        for line in &cells {
            fmt_line(&mut out, line);
        }
        out
    }
}
