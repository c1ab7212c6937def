//! Finite-key secret key length.
//!
//! `ell = floor(2 s0 + s1 (c - H(lambda_u)) - leak_ec + delta_fk)`, clamped at
//! zero, maximized over the free statistical parameter `beta` subject to
//! `4 eps_cor + 18 beta <= eps`.

mod decoy;
mod optimize;

pub use decoy::{BiasedEstimator, DecoyBounds, DecoyEstimator, Intensities, VacuumWeakDecoy};
pub use optimize::{optimize_beta, BETA_LOG10_MIN};

use crate::error::{Error, Result};
use crate::protocol::TallyTable;
use crate::qudit::Basis;
use serde::{Deserialize, Serialize};

/// `H(x) = -x log2(x/3) - (1-x) log2(1-x)`, the entropy of a symbol error
/// spread uniformly over the three wrong values.
pub fn shannon_entropy_d4(x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::invalid("error rate", format!("{x} outside [0,1]")));
    }
    let a = if x > 0.0 { -x * (x / 3.0).log2() } else { 0.0 };
    let b = if x < 1.0 { -(1.0 - x) * (1.0 - x).log2() } else { 0.0 };
    Ok(a + b)
}

/// `-log2(32 / (beta^8 eps_cor))`.
pub fn delta_fk(beta: f64, epsilon_cor: f64) -> Result<f64> {
    for (name, v) in [("beta", beta), ("epsilon_cor", epsilon_cor)] {
        if !(v > 0.0 && v <= 1.0) {
            return Err(Error::invalid(name, format!("must be in (0,1], got {v}")));
        }
    }
    Ok(-5.0 + 8.0 * beta.log2() + epsilon_cor.log2())
}

/// Largest `beta` with `4 eps_cor + 18 beta <= eps`.
pub fn beta_max(epsilon: f64, epsilon_cor: f64) -> Result<f64> {
    let b = (epsilon - 4.0 * epsilon_cor) / 18.0;
    if !(epsilon > 0.0 && epsilon < 1.0 && epsilon_cor > 0.0 && b > 0.0) {
        return Err(Error::InfeasibleBudget(format!(
            "eps = {epsilon}, eps_cor = {epsilon_cor} leave no room for beta"
        )));
    }
    Ok(b)
}

/// Bits disclosed by four-ary error correction at efficiency `f_ec`.
pub fn leak_ec(n_key: f64, qber_time: f64, f_ec: f64) -> Result<f64> {
    if !(f_ec >= 1.0) {
        return Err(Error::invalid("f_ec", format!("must be >= 1, got {f_ec}")));
    }
    if !(n_key >= 0.0) {
        return Err(Error::invalid("n_key", format!("must be >= 0, got {n_key}")));
    }
    Ok(f_ec * n_key * shannon_entropy_d4(qber_time)?)
}

/// Sampling-without-replacement deviation between the error rate of a sample
/// of `c` events and the `d` events it was drawn next to, at failure
/// probability `a` and observed rate `b`.
pub fn serfling_gamma(a: f64, b: f64, c: f64, d: f64) -> f64 {
    let v = (c + d) * (1.0 - b) * b / (c * d * std::f64::consts::LN_2)
        * ((c + d) / (c * d * (1.0 - b) * b * a * a)).log2();
    v.max(0.0).sqrt()
}

/// Upper bound on the single-photon phase error rate of the key.
///
/// The observed rate is floored at one error in the sample before it enters
/// the variance term, so a clean sample still pays a finite-size penalty.
pub fn phase_error_upper(lambda_obs: f64, s1_key: f64, s1_sample: f64, beta: f64) -> f64 {
    if !(s1_sample >= 1.0 && s1_key >= 1.0) || !(lambda_obs < 1.0) {
        return 1.0;
    }
    let lo = lambda_obs.max(0.0);
    let b = lo.max(1.0 / s1_sample).min(1.0 - 1e-12);
    (lo + serfling_gamma(beta, b, s1_sample, s1_key)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecurityParams {
    pub epsilon: f64,
    pub epsilon_cor: f64,
    pub beta: f64,
}

impl SecurityParams {
    pub fn new(epsilon: f64, epsilon_cor: f64, beta: f64) -> Result<Self> {
        let p = Self {
            epsilon,
            epsilon_cor,
            beta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let max = beta_max(self.epsilon, self.epsilon_cor)?;
        if !(self.beta > 0.0 && self.beta <= max * (1.0 + 1e-12)) {
            return Err(Error::InfeasibleBudget(format!(
                "beta = {} outside (0, {max}]",
                self.beta
            )));
        }
        Ok(())
    }
}

/// Security and reconciliation settings of the analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FiniteKeyConfig {
    pub epsilon: f64,
    pub epsilon_cor: f64,
    pub f_ec: f64,
    /// Overlap parameter `c` in bits.
    pub overlap_c: f64,
}

impl Default for FiniteKeyConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-9,
            epsilon_cor: 1e-15,
            f_ec: 1.15,
            overlap_c: 1.89,
        }
    }
}

impl FiniteKeyConfig {
    pub fn validate(&self) -> Result<()> {
        beta_max(self.epsilon, self.epsilon_cor)?;
        if !(self.f_ec >= 1.0 && self.f_ec.is_finite()) {
            return Err(Error::invalid("f_ec", format!("must be >= 1, got {}", self.f_ec)));
        }
        if !(self.overlap_c > 0.0 && self.overlap_c <= 2.0) {
            return Err(Error::invalid(
                "overlap_c",
                format!("must be in (0, 2], got {}", self.overlap_c),
            ));
        }
        Ok(())
    }
}

/// Every intermediate of one key-length evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyLengthReport {
    pub ell: u64,
    /// Right-hand side before floor and clamp.
    pub objective: f64,
    pub s0: f64,
    pub s1: f64,
    pub s1_phase: f64,
    pub lambda_obs: f64,
    pub lambda_u: f64,
    pub leak_ec: f64,
    pub delta_fk: f64,
    pub beta_star: f64,
    pub epsilon: f64,
    pub epsilon_cor: f64,
    pub overlap_c: f64,
    pub n_key: f64,
    pub qber_time: f64,
    pub qber_phase: f64,
    /// The decoy bounds were inconsistent and `s1` was forced to zero.
    pub infeasible_bounds: bool,
    pub session_seconds: f64,
    pub rate_bits_per_s: f64,
}

impl KeyLengthReport {
    pub fn with_session(mut self, seconds: f64) -> Self {
        self.session_seconds = seconds;
        self.rate_bits_per_s = if seconds > 0.0 {
            self.ell as f64 / seconds
        } else {
            0.0
        };
        self
    }

    pub fn rate_mbps(&self) -> f64 {
        self.rate_bits_per_s / 1e6
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Evaluates the key-length formula for fixed bounds.
pub fn key_length(
    bounds: &DecoyBounds,
    lambda_u: f64,
    leak: f64,
    params: &SecurityParams,
    overlap_c: f64,
) -> Result<KeyLengthReport> {
    params.validate()?;
    let dfk = delta_fk(params.beta, params.epsilon_cor)?;
    let h = shannon_entropy_d4(lambda_u.clamp(0.0, 1.0))?;
    let objective = 2.0 * bounds.s0_lower + bounds.s1_lower * (overlap_c - h) - leak + dfk;
    let ell = if objective >= 1.0 {
        objective.floor() as u64
    } else {
        0
    };
    Ok(KeyLengthReport {
        ell,
        objective,
        s0: bounds.s0_lower,
        s1: bounds.s1_lower,
        s1_phase: bounds.s1_phase_lower,
        lambda_obs: bounds.lambda_obs(),
        lambda_u,
        leak_ec: leak,
        delta_fk: dfk,
        beta_star: params.beta,
        epsilon: params.epsilon,
        epsilon_cor: params.epsilon_cor,
        overlap_c,
        n_key: 0.0,
        qber_time: 0.0,
        qber_phase: 0.0,
        infeasible_bounds: bounds.infeasible,
        session_seconds: 0.0,
        rate_bits_per_s: 0.0,
    })
}

/// Key length of `tally` at a fixed `beta`.
pub fn evaluate(
    tally: &TallyTable,
    intensities: &Intensities,
    cfg: &FiniteKeyConfig,
    beta: f64,
    estimator: &dyn DecoyEstimator,
) -> Result<KeyLengthReport> {
    let params = SecurityParams::new(cfg.epsilon, cfg.epsilon_cor, beta)?;
    let bounds = estimator.bounds(tally, intensities, beta)?;
    let lambda_u = phase_error_upper(
        bounds.lambda_obs(),
        bounds.s1_lower,
        bounds.s1_phase_lower,
        beta,
    );
    let n_key = tally.total_detections(Basis::Time);
    let qber_time = tally.qber(Basis::Time).unwrap_or(0.0);
    let leak = leak_ec(n_key, qber_time, cfg.f_ec)?;
    let mut r = key_length(&bounds, lambda_u, leak, &params, cfg.overlap_c)?;
    r.n_key = n_key;
    r.qber_time = qber_time;
    r.qber_phase = tally.qber(Basis::Phase).unwrap_or(0.0);
    Ok(r)
}

/// Key length of `tally` maximized over `beta`, with the rate over
/// `session_seconds`.
pub fn analyze(
    tally: &TallyTable,
    intensities: &Intensities,
    cfg: &FiniteKeyConfig,
    session_seconds: f64,
    estimator: &dyn DecoyEstimator,
) -> Result<KeyLengthReport> {
    cfg.validate()?;
    let report = optimize_beta(
        |beta| evaluate(tally, intensities, cfg, beta, estimator),
        cfg.epsilon,
        cfg.epsilon_cor,
    )?;
    Ok(report.with_session(session_seconds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn entropy_reference_values() {
        assert_eq!(shannon_entropy_d4(0.0).unwrap(), 0.0);
        assert!((shannon_entropy_d4(0.75).unwrap() - 2.0).abs() < 1e-12);
        assert_relative_eq!(shannon_entropy_d4(0.048).unwrap(), 0.35391777, epsilon = 1e-8);
        assert_relative_eq!(shannon_entropy_d4(1.0).unwrap(), 3f64.log2(), epsilon = 1e-15);
        assert!(shannon_entropy_d4(-0.1).is_err());
        assert!(shannon_entropy_d4(1.1).is_err());
    }

    #[test]
    fn delta_fk_reference_values() {
        assert_eq!(delta_fk(0.5, 1.0).unwrap(), -13.0);
        assert_relative_eq!(delta_fk(1e-10, 1e-15).unwrap(), -320.58317, epsilon = 1e-5);
        assert_relative_eq!(delta_fk(1e-9, 1e-15).unwrap(), -294.00774, epsilon = 1e-5);
        assert!(delta_fk(0.0, 1e-15).is_err());
        assert!(delta_fk(1e-9, -1.0).is_err());
    }

    #[test]
    fn beta_budget() {
        assert_relative_eq!(beta_max(1e-9, 1e-15).unwrap(), 5.5555333e-11, max_relative = 1e-7);
        assert!(beta_max(1e-15, 1e-15).is_err());
        assert!(SecurityParams::new(1e-9, 1e-15, 6e-11).is_err());
        SecurityParams::new(1e-9, 1e-15, 5e-11).unwrap();
    }

    #[test]
    fn leak_values() {
        assert_eq!(leak_ec(1e6, 0.0, 1.15).unwrap(), 0.0);
        // H(0.045) = 0.3360883
        assert_relative_eq!(leak_ec(1e6, 0.045, 1.15).unwrap(), 386_501.6, max_relative = 1e-6);
        assert_eq!(
            leak_ec(1e6, 0.045, 1.0).unwrap(),
            1e6 * shannon_entropy_d4(0.045).unwrap()
        );
        assert!(leak_ec(1e6, 0.045, 0.9).is_err());
    }

    #[test]
    fn phase_error_limits() {
        let big = phase_error_upper(0.03, 1e15, 1e15, 1e-10);
        assert!((big - 0.03).abs() < 1e-5);
        assert!(phase_error_upper(0.0, 1e6, 1e4, 1e-10) > 0.0);
        assert_eq!(phase_error_upper(0.03, 1e6, 0.0, 1e-10), 1.0);
        let small = phase_error_upper(0.03, 1e6, 1e3, 1e-10);
        let large = phase_error_upper(0.03, 1e6, 1e5, 1e-10);
        assert!(small > large && large > 0.03);
    }

    fn plain_bounds(s0: f64, s1: f64) -> DecoyBounds {
        DecoyBounds {
            s0_lower: s0,
            s1_lower: s1,
            s1_phase_lower: s1,
            v1_upper: 0.0,
            infeasible: false,
        }
    }

    #[test]
    fn key_length_plug_in_value() {
        let beta = 2f64.powf(-295.0 / 8.0);
        let params = SecurityParams {
            epsilon: 0.9,
            epsilon_cor: 1e-3,
            beta,
        };
        let dfk = delta_fk(beta, 1e-3).unwrap();
        let r = key_length(&plain_bounds(0.0, 1e6), 0.0, 0.0, &params, 2.0).unwrap();
        assert_eq!(r.ell, (2e6 + dfk).floor() as u64);
        assert_eq!(r.delta_fk, dfk);
    }

    #[test]
    fn noise_kills_key() {
        let params = SecurityParams::new(1e-9, 1e-15, 1e-11).unwrap();
        // H(0.6) > 1.89
        let r = key_length(&plain_bounds(0.0, 1e8), 0.6, 0.0, &params, 1.89).unwrap();
        assert_eq!(r.ell, 0);
        assert!(r.objective < 0.0);
    }

    proptest! {
        #[test]
        fn entropy_is_concave(a in 0.0f64..1.0, b in 0.0f64..1.0, t in 0.0f64..1.0) {
            let m = t * a + (1.0 - t) * b;
            let lhs = shannon_entropy_d4(m).unwrap();
            let rhs = t * shannon_entropy_d4(a).unwrap() + (1.0 - t) * shannon_entropy_d4(b).unwrap();
            prop_assert!(lhs >= rhs - 1e-12);
            prop_assert!(lhs <= 2.0 + 1e-12);
        }

        #[test]
        fn key_length_monotone(
            s0 in 0.0f64..1e6, s1 in 1.0f64..1e8, lu in 0.0f64..0.3, leak in 0.0f64..1e6,
            ds in 0.0f64..1e5, dl in 0.0f64..0.1, dc in 0.0f64..0.1,
        ) {
            let p = SecurityParams::new(1e-9, 1e-15, 1e-11).unwrap();
            let base = key_length(&plain_bounds(s0, s1), lu, leak, &p, 1.89).unwrap().ell;
            let more_s0 = key_length(&plain_bounds(s0 + ds, s1), lu, leak, &p, 1.89).unwrap().ell;
            let more_s1 = key_length(&plain_bounds(s0, s1 + ds), lu, leak, &p, 1.89).unwrap().ell;
            let more_c = key_length(&plain_bounds(s0, s1), lu, leak, &p, 1.89 + dc).unwrap().ell;
            let more_lu = key_length(&plain_bounds(s0, s1), lu + dl, leak, &p, 1.89).unwrap().ell;
            let more_leak = key_length(&plain_bounds(s0, s1), lu, leak + ds, &p, 1.89).unwrap().ell;
            prop_assert!(more_s0 >= base && more_s1 >= base && more_c >= base);
            prop_assert!(more_lu <= base && more_leak <= base);
        }

        #[test]
        fn phase_bound_shrinks_with_counts(lo in 0.0f64..0.2, n in 10.0f64..1e7, k in 1.0f64..100.0) {
            let a = phase_error_upper(lo, n, n, 1e-10);
            let b = phase_error_upper(lo, n * k, n, 1e-10);
            let c = phase_error_upper(lo, n, n * k, 1e-10);
            prop_assert!(a >= lo);
            prop_assert!(b <= a + 1e-12);
            prop_assert!(c <= a + 1e-12);
        }
    }
}
