use serde::{Deserialize, Serialize};

use super::AuctionError;

/// Partition of `total_units` homogeneous units into `lot_count` lots.
///
/// Every lot holds `lot_size = floor(m / k)` units except the last one, which
/// also absorbs the `m - k * lot_size` remainder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LotGrid {
    total_units: u64,
    lot_count: usize,
    lot_size: u64,
}

impl LotGrid {
    pub fn new(total_units: u64, lot_count: usize) -> Result<Self, AuctionError> {
        if lot_count == 0 || lot_count as u64 > total_units {
            return Err(AuctionError::InvalidGrid {
                units: total_units,
                lots: lot_count,
            });
        }
        Ok(Self {
            total_units,
            lot_count,
            lot_size: total_units / lot_count as u64,
        })
    }

    pub fn total_units(&self) -> u64 {
        self.total_units
    }

    pub fn lot_count(&self) -> usize {
        self.lot_count
    }

    pub fn lot_size(&self) -> u64 {
        self.lot_size
    }

    /// Number of units sold before lot `lot` (0-based) starts.
    pub fn lot_start(&self, lot: usize) -> u64 {
        lot as u64 * self.lot_size
    }

    /// One past the last unit of lot `lot`, as a unit count.
    pub fn lot_end(&self, lot: usize) -> u64 {
        if lot + 1 == self.lot_count {
            self.total_units
        } else {
            (lot as u64 + 1) * self.lot_size
        }
    }

    pub fn lot_width(&self, lot: usize) -> u64 {
        self.lot_end(lot) - self.lot_start(lot)
    }

    /// Inclusive 1-based unit range `[first, last]` covered by lot `lot`.
    pub fn lot_units(&self, lot: usize) -> (u64, u64) {
        (self.lot_start(lot) + 1, self.lot_end(lot))
    }

    /// 0-based lot that prices the 1-based unit `unit`.
    ///
    /// `ceil(unit / lot_size)` is clamped to the last lot so remainder units
    /// take the last-lot price.
    pub fn lot_of_unit(&self, unit: u64) -> Result<usize, AuctionError> {
        if unit == 0 || unit > self.total_units {
            return Err(AuctionError::UnitOutOfRange {
                unit,
                units: self.total_units,
            });
        }
        let raw = unit.div_ceil(self.lot_size) as usize;
        Ok(raw.min(self.lot_count) - 1)
    }

    /// True when `q` sits on a lot boundary (0, any lot end, or `m`).
    pub fn is_boundary(&self, q: u64) -> bool {
        q == 0
            || q == self.total_units
            || (q % self.lot_size == 0 && q <= self.lot_start(self.lot_count - 1))
    }

    /// Lot starts and widths as floats, for the dense numeric kernels.
    pub fn geometry(&self) -> LotGeometry {
        LotGeometry {
            starts: (0..self.lot_count).map(|j| self.lot_start(j) as f64).collect(),
            widths: (0..self.lot_count).map(|j| self.lot_width(j) as f64).collect(),
        }
    }
}

/// Float view of a [`LotGrid`] used by the batched kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct LotGeometry {
    pub starts: Vec<f64>,
    pub widths: Vec<f64>,
}

impl LotGeometry {
    pub fn lots(&self) -> usize {
        self.widths.len()
    }

    /// Value of the first `q` units under dense per-lot `prices`, together with
    /// the right derivative with respect to `q` (price of the lot holding the
    /// next unit; the last lot's price once `q` reaches the end of the grid).
    #[inline]
    pub fn value_and_marginal(&self, prices: &[f64], q: f64) -> (f64, f64) {
        let mut value = 0.0;
        let mut marginal = prices[prices.len() - 1];
        for (j, (&start, &width)) in self.starts.iter().zip(&self.widths).enumerate() {
            let taken = q - start;
            if taken <= 0.0 {
                break;
            }
            if taken < width {
                value += prices[j] * taken;
                marginal = prices[j];
                return (value, marginal);
            }
            value += prices[j] * width;
            if j + 1 < prices.len() {
                marginal = prices[j + 1];
            }
        }
        if q <= 0.0 {
            marginal = prices[0];
        }
        (value, marginal)
    }

    /// Units of the first `q` that fall in each lot.
    #[inline]
    pub fn units_per_lot(&self, q: f64, out: &mut [f64]) {
        for (j, (&start, &width)) in self.starts.iter().zip(&self.widths).enumerate() {
            out[j] = (q - start).clamp(0.0, width);
        }
    }
}
