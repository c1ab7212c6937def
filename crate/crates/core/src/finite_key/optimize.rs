use super::{beta_max, KeyLengthReport};
use crate::error::{Error, Result};

/// Lower end of the searched `log10(beta)` range.
pub const BETA_LOG10_MIN: f64 = -15.0;

const COARSE_POINTS: usize = 48;
const REL_TOL: f64 = 1e-4;

/// Maximizes `evaluate(beta)` over `log10(beta)` in
/// `[-15, log10((eps - 4 eps_cor) / 18)]`.
///
/// A coarse scan brackets the best point, golden-section search refines it
/// to a relative tolerance of `1e-4` in `beta`. The continuous objective
/// (before the floor) is maximized.
pub fn optimize_beta<F>(evaluate: F, epsilon: f64, epsilon_cor: f64) -> Result<KeyLengthReport>
where
    F: Fn(f64) -> Result<KeyLengthReport>,
{
    let bmax = beta_max(epsilon, epsilon_cor)?;
    let hi = bmax.log10();
    if hi <= BETA_LOG10_MIN {
        return Err(Error::InfeasibleBudget(format!(
            "beta_max = {bmax:e} is below 1e-15"
        )));
    }
    let at = |x: f64| evaluate(10f64.powf(x).min(bmax));
    let step = (hi - BETA_LOG10_MIN) / (COARSE_POINTS - 1) as f64;
    let xs: Vec<f64> = (0..COARSE_POINTS)
        .map(|i| BETA_LOG10_MIN + step * i as f64)
        .collect();
    let mut best_i = 0;
    let mut best: Option<KeyLengthReport> = None;
    for (i, &x) in xs.iter().enumerate() {
        let r = at(x)?;
        if best.as_ref().map_or(true, |b| better(&r, b)) {
            best = Some(r);
            best_i = i;
        }
    }
    let mut best = best.expect("grid is non-empty");

    let mut a = xs[best_i.saturating_sub(1)];
    let mut b = xs[(best_i + 1).min(COARSE_POINTS - 1)];
    let tol = (1.0 + REL_TOL).log10();
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut rc = at(c)?;
    let mut rd = at(d)?;
    while b - a > tol {
        if rc.objective >= rd.objective {
            b = d;
            d = c;
            rd = rc;
            c = b - g * (b - a);
            rc = at(c)?;
        } else {
            a = c;
            c = d;
            rc = rd;
            d = a + g * (b - a);
            rd = at(d)?;
        }
    }
    for r in [rc, rd] {
        if better(&r, &best) {
            best = r;
        }
    }
    debug_assert!(4.0 * epsilon_cor + 18.0 * best.beta_star <= epsilon * (1.0 + 1e-12));
    Ok(best)
}

fn better(a: &KeyLengthReport, b: &KeyLengthReport) -> bool {
    (a.ell, a.objective) > (b.ell, b.objective)
}
