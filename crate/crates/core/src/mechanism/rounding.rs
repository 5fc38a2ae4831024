use super::MechanismError;

const SUM_TOL: f64 = 1e-6;

/// Largest-remainder rounding of a fractional allocation to whole units.
///
/// Each entry moves by less than one unit, stays within its cap, and the
/// result sums to `total` exactly. Inputs slightly above their cap are
/// pulled down to it and the freed units go to the next largest remainders.
pub fn round_allocation(a: &[f64], caps: &[u64], total: u64) -> Result<Vec<u64>, MechanismError> {
    if a.len() != caps.len() {
        return Err(MechanismError::Shape(format!("{} quantities but {} caps", a.len(), caps.len())));
    }
    let sum: f64 = a.iter().sum();
    if a.iter().any(|&x| !x.is_finite() || x < -SUM_TOL) || (sum - total as f64).abs() > SUM_TOL {
        return Err(MechanismError::Invalid(format!("quantities sum to {sum}, expected {total}")));
    }
    if caps.iter().sum::<u64>() < total {
        return Err(MechanismError::Infeasible(format!("caps cannot hold {total} units")));
    }
    let mut out = Vec::with_capacity(a.len());
    for (&x, &cap) in a.iter().zip(caps) {
        // snap values within tolerance of an integer before flooring
        let snapped = if (x - x.round()).abs() <= SUM_TOL { x.round() } else { x.floor() };
        out.push((snapped.max(0.0) as u64).min(cap));
    }
    let assigned: u64 = out.iter().sum();
    let mut remaining = total.checked_sub(assigned).ok_or_else(|| {
        MechanismError::Infeasible(format!("rounded quantities exceed {total}"))
    })?;

    let mut order: Vec<usize> = (0..a.len()).collect();
    let frac: Vec<f64> = a.iter().zip(&out).map(|(&x, &f)| x - f as f64).collect();
    order.sort_by(|&i, &j| frac[j].total_cmp(&frac[i]).then(i.cmp(&j)));
    for i in order {
        if remaining == 0 {
            break;
        }
        if out[i] < caps[i] && frac[i] > 0.0 {
            out[i] += 1;
            remaining -= 1;
        }
    }
    if remaining > 0 {
        return Err(MechanismError::Infeasible(format!("{remaining} units could not be placed within caps")));
    }
    Ok(out)
}
