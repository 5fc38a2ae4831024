use serde::{Deserialize, Serialize};

/// Allocation below this many units does not count as winning.
pub const WIN_THRESHOLD: f64 = 1.0;

const SATISFY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BusinessConstraint {
    /// At least `count` consumers receive at least `floor` units each.
    MinWinnersWithFloor { count: usize, floor: f64 },
    /// No consumer receives more than `share` of all units.
    MaxWinnerShare { share: f64 },
    /// At most `count` consumers receive any units.
    MaxWinners { count: usize },
}

impl BusinessConstraint {
    pub fn check(&self, units: u64, consumers: usize) -> Result<(), String> {
        let ok = match *self {
            Self::MinWinnersWithFloor { count, floor } => {
                count <= consumers && floor.is_finite() && (0.0..=units as f64).contains(&floor)
            }
            Self::MaxWinnerShare { share } => (0.0..=1.0).contains(&share),
            Self::MaxWinners { count } => count <= consumers,
        };
        if ok {
            Ok(())
        } else {
            Err(format!("business constraint {self:?} is out of range"))
        }
    }

    /// Copy with the floor raised by `margin` (a fraction) for training.
    pub fn with_margin(&self, margin: f64) -> Self {
        match *self {
            Self::MinWinnersWithFloor { count, floor } => Self::MinWinnersWithFloor {
                count,
                floor: floor * (1.0 + margin),
            },
            Self::MaxWinnerShare { share } => Self::MaxWinnerShare {
                share: share * (1.0 - margin),
            },
            ref other => other.clone(),
        }
    }

    /// Unscaled hinge penalty; the gradient with respect to `a` is added to `grad` times `scale`.
    pub fn penalty(&self, a: &[f64], units: u64, grad: Option<(&mut [f64], f64)>) -> f64 {
        let mut order: Vec<usize> = (0..a.len()).collect();
        order.sort_by(|&i, &j| a[j].total_cmp(&a[i]).then(i.cmp(&j)));
        let mut total = 0.0;
        let mut hits: Vec<(usize, f64)> = Vec::new();
        match *self {
            Self::MinWinnersWithFloor { count, floor } => {
                for &i in order.iter().take(count) {
                    if floor > a[i] {
                        total += floor - a[i];
                        hits.push((i, -1.0));
                    }
                }
            }
            Self::MaxWinnerShare { share } => {
                let cap = share * units as f64;
                for (i, &x) in a.iter().enumerate() {
                    if x > cap {
                        total += x - cap;
                        hits.push((i, 1.0));
                    }
                }
            }
            Self::MaxWinners { count } => {
                if let Some(&i) = order.get(count) {
                    if a[i] > WIN_THRESHOLD {
                        total += a[i] - WIN_THRESHOLD;
                        hits.push((i, 1.0));
                    }
                }
            }
        }
        if let Some((g, scale)) = grad {
            for (i, d) in hits {
                g[i] += scale * d;
            }
        }
        total
    }

    pub fn satisfied(&self, a: &[f64], units: u64) -> bool {
        match *self {
            Self::MinWinnersWithFloor { count, floor } => {
                a.iter().filter(|&&x| x >= floor - SATISFY_TOL).count() >= count
            }
            Self::MaxWinnerShare { share } => a.iter().all(|&x| x <= share * units as f64 + SATISFY_TOL),
            Self::MaxWinners { count } => a.iter().filter(|&&x| x > WIN_THRESHOLD).count() <= count,
        }
    }
}

/// `rho` times the summed penalties of all constraints.
pub fn business_penalty(a: &[f64], constraints: &[BusinessConstraint], rho: f64, units: u64) -> f64 {
    rho * constraints.iter().map(|c| c.penalty(a, units, None)).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn min3() -> BusinessConstraint {
        BusinessConstraint::MinWinnersWithFloor { count: 3, floor: 200.0 }
    }

    #[test]
    fn penalty_examples() {
        assert_eq!(business_penalty(&[400.0, 350.0, 250.0], &[min3()], 1.0, 1000), 0.0);
        assert_eq!(business_penalty(&[700.0, 200.0, 100.0], &[min3()], 1.0, 1000), 100.0);
        let share = BusinessConstraint::MaxWinnerShare { share: 0.5 };
        assert_eq!(business_penalty(&[600.0, 400.0], &[share], 1.0, 1000), 100.0);
        let few = BusinessConstraint::MaxWinners { count: 1 };
        assert_eq!(business_penalty(&[600.0, 400.0], &[few.clone()], 2.0, 1000), 798.0);
        assert_eq!(business_penalty(&[999.5, 0.5], &[few], 2.0, 1000), 0.0);
    }

    #[test]
    fn penalty_gradient_marks_hinges() {
        let mut g = vec![0.0; 3];
        min3().penalty(&[700.0, 100.0, 200.0], 1000, Some((&mut g, 2.0)));
        assert_eq!(g, vec![0.0, -2.0, 0.0]);
    }

    #[test]
    fn satisfaction() {
        assert!(min3().satisfied(&[400.0, 350.0, 250.0], 1000));
        assert!(!min3().satisfied(&[700.0, 200.0 - 1e-3, 100.0], 1000));
        assert!(min3().with_margin(0.05).penalty(&[400.0, 400.0, 200.0], 1000, None) > 0.0);
    }
}
