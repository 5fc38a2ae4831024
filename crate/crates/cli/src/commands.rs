use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::json;
use vda_core::auction::{convert_flat_to_lot, FlatBid, LotGrid, ReservePrice};
use vda_core::eval::{self, EvalConfig, Mechanism, MetricsReport, REPORT_VERSION};
use vda_core::exec::Exec;
use vda_core::mechanism::{save_weights, weights_from_json};
use vda_core::trainer::TrainError;
use vda_core::{vcg as vcg_core, write_atomic};

use crate::bids::parse_bids;
use crate::config::{read_text, resolve_scenario, trainer_config, ConfigFile};
use crate::error::CliError;
use crate::{CompareArgs, ConvertArgs, EvaluateArgs, RunAuctionArgs, ScenarioArgs, TrainArgs, VcgArgs};

/// Output directories must exist before any work starts.
fn ensure_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => {
            Err(CliError::config(format!("output directory {} does not exist", dir.display())))
        }
        _ => Ok(()),
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    write_atomic(path, text.as_bytes()).map_err(|e| CliError::io(path, e))
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serialisable");
    s.push('\n');
    s
}

/// Writes to `out` when given, otherwise prints.
fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => write_file(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn train(a: TrainArgs, file: &ConfigFile, exec: Exec) -> Result<(), CliError> {
    let scenario = resolve_scenario(a.scenario.as_deref().or(file.scenario.as_deref()))?;
    let mut cfg = trainer_config(&file.train, a.variant, scenario.seed)?;
    if let Some(v) = a.steps {
        cfg.steps = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.inner_steps {
        cfg.ascent.steps = v;
    }
    if let Some(v) = a.checkpoint_every {
        cfg.checkpoint_every = v;
    }
    cfg.validate()?;

    let log_path = a.log.clone().unwrap_or_else(|| a.out.with_extension("log.jsonl"));
    ensure_parent(&a.out)?;
    ensure_parent(&log_path)?;
    // rows are appended here and the file is renamed into place on success
    let partial = with_suffix(&log_path, ".partial");
    let mut log = BufWriter::new(File::create(&partial).map_err(|e| CliError::io(&partial, e))?);
    let checkpoint = a.out.with_extension("ckpt");
    let progress_every = (cfg.steps / 20).max(1);
    let start = Instant::now();

    let log_err = |e: std::io::Error| TrainError::Config(format!("{}: {e}", partial.display()));
    let outcome = vda_core::trainer::train(&scenario, &cfg, exec, |row, trainer| {
        let mut row = row.clone();
        if a.log_timing {
            row.wall_ms = Some(start.elapsed().as_millis() as u64);
        }
        serde_json::to_writer(&mut log, &row).map_err(|e| log_err(e.into()))?;
        log.write_all(b"\n").map_err(log_err)?;
        if cfg.checkpoint_every > 0 && (row.step + 1) % cfg.checkpoint_every == 0 {
            log.flush().map_err(log_err)?;
            save_weights(trainer.params(), &checkpoint).map_err(TrainError::Mechanism)?;
        }
        if !a.quiet && (row.step % progress_every == 0 || row.step + 1 == cfg.steps) {
            eprintln!(
                "step {:>6}  loss {:>12.3}  revenue {:>8.1}  nsw {:>10.0}  regret {:.4}  envy {:.4}",
                row.step, row.loss, row.revenue, row.nsw, row.regret, row.envy
            );
        }
        Ok(())
    });
    let flushed = log
        .into_inner()
        .map_err(|e| e.into_error())
        .and_then(|f| f.sync_all())
        .map_err(|e| CliError::io(&partial, e));
    let outcome = outcome?;
    flushed?;
    save_weights(&outcome.params, &a.out)?;
    std::fs::rename(&partial, &log_path).map_err(|e| CliError::io(&log_path, e))?;
    Ok(())
}

pub fn evaluate(a: EvaluateArgs, file: &ConfigFile, exec: Exec) -> Result<(), CliError> {
    ensure_parent(&a.out)?;
    if let Some(t) = &a.table {
        ensure_parent(t)?;
    }
    let scenario = resolve_scenario(a.scenario.as_deref().or(file.scenario.as_deref()))?;
    let section = &file.evaluate;
    let mut cfg = EvalConfig::new(a.seed.or(section.seed).unwrap_or(scenario.seed));
    if let Some(n) = a.samples.or(section.samples) {
        cfg.samples = n;
    }
    if let Some(asc) = section.ascent {
        cfg.ascent = asc;
    }
    if let Some(v) = a.inner_steps {
        cfg.ascent.steps = v;
    }
    if let Some(v) = a.restarts {
        cfg.ascent.restarts = v;
    }
    cfg.business = section.business.clone().unwrap_or_else(|| scenario.business.clone());

    let params;
    let mechanism = if a.mechanism == "vcg" {
        Mechanism::Vcg
    } else {
        let path = Path::new(&a.mechanism);
        params = weights_from_json(&read_text(path)?, Some(&scenario.fingerprint()))?;
        let label = a
            .label
            .clone()
            .unwrap_or_else(|| path.file_stem().map_or("learned".into(), |s| s.to_string_lossy().into_owned()));
        Mechanism::Learned { params: &params, label }
    };
    let mut report = eval::evaluate(&mechanism, &scenario, &cfg, exec)?;
    if let Some(label) = &a.label {
        report.mechanism = label.clone();
    }
    write_file(&a.out, &pretty(&report))?;
    let table = eval::compare(std::slice::from_ref(&report))?.to_text();
    if let Some(t) = &a.table {
        write_file(t, &table)?;
    }
    print!("{table}");
    Ok(())
}

pub fn vcg(a: VcgArgs, file: &ConfigFile) -> Result<(), CliError> {
    if let Some(o) = &a.out {
        ensure_parent(o)?;
    }
    let bids = parse_bids(&read_text(&a.bids)?)?;
    let scenario = resolve_scenario(a.scenario.as_deref().or(file.scenario.as_deref()))?;
    let units = bids.grid.units.unwrap_or(scenario.units);
    let lots = bids.grid.lots.unwrap_or(scenario.lots);
    let grid = LotGrid::new(units, lots)?;
    let reserve = ReservePrice::new(bids.grid.reserve.unwrap_or(scenario.reserve))?;
    let schedules = bids.schedules(&grid, reserve)?;
    let out = vcg_core::vcg_payments(&schedules, &grid, reserve)?;
    let allocation: Vec<u64> = out.allocation.iter().map(|&a| a as u64).collect();
    let doc = json!({
        "mechanism": "vcg",
        "units": units,
        "lots": lots,
        "reserve": reserve.get(),
        "allocation": allocation,
        "payments": out.payments,
        "units_sold": allocation.iter().sum::<u64>(),
        "revenue": out.payments.iter().sum::<f64>(),
    });
    emit(a.out.as_deref(), &pretty(&doc))
}

pub fn compare(a: CompareArgs) -> Result<(), CliError> {
    for p in a.out.iter().chain(&a.table) {
        ensure_parent(p)?;
    }
    let reports = a
        .reports
        .iter()
        .map(|p| {
            let r: MetricsReport =
                serde_json::from_str(&read_text(p)?).map_err(|e| CliError::validation(format!("{}: {e}", p.display())))?;
            if r.version != REPORT_VERSION {
                return Err(CliError::validation(format!("{}: unsupported report version {}", p.display(), r.version)));
            }
            Ok(r)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let table = eval::compare(&reports)?;
    let text = table.to_text();
    if let Some(p) = &a.out {
        write_file(p, &pretty(&table))?;
    }
    if let Some(p) = &a.table {
        write_file(p, &text)?;
    }
    print!("{text}");
    Ok(())
}

pub fn run_auction(a: RunAuctionArgs) -> Result<(), CliError> {
    if let Some(o) = &a.out {
        ensure_parent(o)?;
    }
    let bids = parse_bids(&read_text(&a.bids)?)?;
    let params = weights_from_json(&read_text(&a.mechanism)?, None)?;
    let fp = &params.fingerprint;
    let mismatch = |what: &str| CliError::validation(format!("bid file {what} differs from the mechanism's"));
    if bids.grid.units.is_some_and(|u| u != fp.units) {
        return Err(mismatch("units"));
    }
    if bids.grid.lots.is_some_and(|k| k != fp.lots) {
        return Err(mismatch("lots"));
    }
    if bids.grid.reserve.is_some_and(|r| r != fp.reserve) {
        return Err(mismatch("reserve"));
    }
    if bids.records.len() != fp.consumers {
        return Err(CliError::validation(format!(
            "mechanism expects {} consumers, bid file has {}",
            fp.consumers,
            bids.records.len()
        )));
    }
    let grid = params.grid();
    let schedules = bids.schedules(&grid, ReservePrice::new(fp.reserve)?)?;
    let out = params.rounded_outcome(&schedules)?;
    let doc = json!({
        "mechanism": "learned",
        "units": fp.units,
        "lots": fp.lots,
        "reserve": fp.reserve,
        "allocation": out.allocation,
        "payments": out.payments,
        "multipliers": out.multipliers,
        "fractional_allocation": out.fractional.allocation,
        "units_sold": out.allocation.iter().sum::<u64>(),
        "revenue": out.payments.iter().sum::<f64>(),
    });
    emit(a.out.as_deref(), &pretty(&doc))
}

fn parse_flat(spec: &str, units: u64) -> Result<FlatBid, CliError> {
    let parts: Vec<&str> = spec.split(':').collect();
    if !(3..=4).contains(&parts.len()) {
        return Err(CliError::config(format!(
            "flat bid {spec:?}: expected THRESHOLD:PRICE_BELOW:PRICE_ABOVE[:REQUIREMENT]"
        )));
    }
    let bad = |e: &dyn std::fmt::Display| CliError::config(format!("flat bid {spec:?}: {e}"));
    Ok(FlatBid {
        threshold: parts[0].parse().map_err(|e| bad(&e))?,
        price_below: parts[1].parse().map_err(|e| bad(&e))?,
        price_above: parts[2].parse().map_err(|e| bad(&e))?,
        requirement: match parts.get(3) {
            Some(r) => r.parse().map_err(|e| bad(&e))?,
            None => units,
        },
    })
}

pub fn convert_bid(a: ConvertArgs, file: &ConfigFile) -> Result<(), CliError> {
    if let Some(o) = &a.out {
        ensure_parent(o)?;
    }
    let scenario = resolve_scenario(a.scenario.as_deref().or(file.scenario.as_deref()))?;
    let units = a.units.unwrap_or(scenario.units);
    let grid = LotGrid::new(units, a.lots.unwrap_or(scenario.lots))?;
    let reserve = ReservePrice::new(a.reserve.unwrap_or(scenario.reserve))?;
    let flat = parse_flat(&a.flat, units)?;
    let c = convert_flat_to_lot(&flat, &grid, reserve)?;
    let doc = json!({
        "flat": flat,
        "units": units,
        "lots": grid.lot_count(),
        "requirement": c.schedule.requirement,
        "prices": c.schedule.prices,
        "boundary_exact": c.boundary_exact,
        "max_discrepancy": c.max_discrepancy,
        "worst_quantity": c.worst_quantity,
    });
    emit(a.out.as_deref(), &pretty(&doc))
}

pub fn scenario(a: ScenarioArgs, file: &ConfigFile) -> Result<(), CliError> {
    if let Some(o) = &a.out {
        ensure_parent(o)?;
    }
    let s = resolve_scenario(a.scenario.as_deref().or(file.scenario.as_deref()))?;
    emit(a.out.as_deref(), &s.to_json())
}
