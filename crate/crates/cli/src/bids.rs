//! Bid files for the one-shot commands.
//!
//! ```text
//! vda-bids 1
//! # optional grid directives, before any record
//! units 2500
//! lots 5
//! reserve 3
//! # one consumer per line: requirement, then per-lot prices
//! 2500 20 18 18 16 16
//! 1500 18 17 17
//! ```
//!
//! Prices past the requirement may be given or left out; they are ignored.

use vda_core::auction::{validate_bid, LotGrid, ReservePrice, Schedule};

use crate::error::CliError;

pub const BIDS_HEADER: &str = "vda-bids";
pub const BIDS_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GridDirectives {
    pub units: Option<u64>,
    pub lots: Option<usize>,
    pub reserve: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BidRecord {
    pub requirement: u64,
    pub prices: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BidFile {
    pub grid: GridDirectives,
    pub records: Vec<BidRecord>,
}

fn bad(line: usize, msg: impl std::fmt::Display) -> CliError {
    CliError::validation(format!("bids line {line}: {msg}"))
}

pub fn parse_bids(text: &str) -> Result<BidFile, CliError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let (n, header) = lines.next().ok_or_else(|| CliError::validation("bids file is empty"))?;
    let mut head = header.split_whitespace();
    if head.next() != Some(BIDS_HEADER) {
        return Err(bad(n, format!("expected `{BIDS_HEADER} {BIDS_VERSION}` header")));
    }
    match head.next().map(str::parse::<u32>) {
        Some(Ok(BIDS_VERSION)) => {}
        Some(Ok(v)) => return Err(bad(n, format!("unsupported bids version {v}"))),
        _ => return Err(bad(n, "missing bids version")),
    }

    let mut grid = GridDirectives::default();
    let mut records = Vec::new();
    for (n, line) in lines {
        let mut tokens = line.split_whitespace();
        let first = tokens.next().expect("line is not blank");
        if first.starts_with(|c: char| c.is_ascii_alphabetic()) {
            if !records.is_empty() {
                return Err(bad(n, "directives must come before bid records"));
            }
            let value = tokens.next().ok_or_else(|| bad(n, format!("`{first}` needs a value")))?;
            if tokens.next().is_some() {
                return Err(bad(n, "trailing tokens"));
            }
            match first {
                "units" => grid.units = Some(value.parse().map_err(|e| bad(n, e))?),
                "lots" => grid.lots = Some(value.parse().map_err(|e| bad(n, e))?),
                "reserve" => grid.reserve = Some(value.parse().map_err(|e| bad(n, e))?),
                other => return Err(bad(n, format!("unknown directive `{other}`"))),
            }
            continue;
        }
        let requirement = first.parse().map_err(|e| bad(n, format!("requirement: {e}")))?;
        let prices = tokens
            .map(|t| t.parse::<f64>().map_err(|e| bad(n, format!("price `{t}`: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        records.push(BidRecord { requirement, prices });
    }
    if records.is_empty() {
        return Err(CliError::validation("bids file has no records"));
    }
    Ok(BidFile { grid, records })
}

impl BidFile {
    /// Validated schedules on `grid`.
    pub fn schedules(&self, grid: &LotGrid, reserve: ReservePrice) -> Result<Vec<Schedule>, CliError> {
        self.records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                if r.prices.len() > grid.lot_count() {
                    return Err(CliError::validation(format!(
                        "consumer {i}: {} prices for {} lots",
                        r.prices.len(),
                        grid.lot_count()
                    )));
                }
                let s = Schedule::with_requirement(&r.prices, r.requirement, grid);
                validate_bid(&s, reserve, grid).map_err(|e| CliError::validation(format!("consumer {i}: {e}")))?;
                Ok(s)
            })
            .collect()
    }
}
