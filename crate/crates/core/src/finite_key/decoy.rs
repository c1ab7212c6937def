use crate::error::{Error, Result};
use crate::protocol::{ProtocolConfig, TallyTable};
use crate::qudit::Basis;
use serde::{Deserialize, Serialize};

/// Mean photon numbers and selection probabilities, ordered
/// (signal, decoy, vacuum).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intensities {
    pub mu: [f64; 3],
    pub probs: [f64; 3],
}

impl Intensities {
    pub fn new(mu: [f64; 3], probs: [f64; 3]) -> Result<Self> {
        let i = Self { mu, probs };
        i.validate()?;
        Ok(i)
    }

    pub fn validate(&self) -> Result<()> {
        let [m1, m2, m3] = self.mu;
        if !(m2 > m3 && m3 >= 0.0 && m1 > m2 + m3) {
            return Err(Error::invalid(
                "intensities",
                format!("decoy bounds need mu1 > mu2 + mu3 and mu2 > mu3 >= 0, got {m1}, {m2}, {m3}"),
            ));
        }
        if self.probs.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::invalid("intensity_probs", "every intensity must be used"));
        }
        Ok(())
    }

    /// Probability that a pulse carries `n` photons.
    pub fn tau(&self, n: u32) -> f64 {
        let fact: f64 = (1..=n).map(f64::from).product();
        self.mu
            .iter()
            .zip(&self.probs)
            .map(|(&m, &p)| p * (-m).exp() * m.powi(n as i32) / fact)
            .sum()
    }
}

impl From<&ProtocolConfig> for Intensities {
    fn from(cfg: &ProtocolConfig) -> Self {
        Self {
            mu: cfg.intensities,
            probs: cfg.intensity_probs,
        }
    }
}

/// Lower bounds on vacuum and single-photon detections, and an upper bound on
/// single-photon phase-basis errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoyBounds {
    /// Vacuum detections in the raw key.
    pub s0_lower: f64,
    /// Single-photon detections in the raw key.
    pub s1_lower: f64,
    /// Single-photon detections in the phase-basis sample.
    pub s1_phase_lower: f64,
    /// Single-photon errors in the phase-basis sample.
    pub v1_upper: f64,
    /// A single-photon bound came out negative and was set to zero.
    pub infeasible: bool,
}

impl DecoyBounds {
    /// Observed single-photon phase error rate, 1 when undefined.
    pub fn lambda_obs(&self) -> f64 {
        if self.s1_phase_lower > 0.0 {
            (self.v1_upper / self.s1_phase_lower).clamp(0.0, 1.0)
        } else {
            1.0
        }
    }
}

/// Swap point for the decoy-state estimator.
pub trait DecoyEstimator: Send + Sync {
    fn name(&self) -> &'static str;
    fn bounds(&self, tally: &TallyTable, intensities: &Intensities, beta: f64) -> Result<DecoyBounds>;
}

/// Closed-form vacuum + weak decoy bounds with a Hoeffding deviation
/// `sqrt(n/2 ln(1/beta))` on each per-intensity count, `n` the basis total.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct VacuumWeakDecoy;

impl VacuumWeakDecoy {
    pub fn deviation(total: f64, beta: f64) -> f64 {
        (total / 2.0 * (1.0 / beta).ln()).sqrt()
    }

    /// `e^{mu_k}/p_k (n_k + sign * delta)` for every intensity.
    fn corrected(counts: [f64; 3], i: &Intensities, beta: f64, sign: f64) -> [f64; 3] {
        let delta = Self::deviation(counts.iter().sum(), beta);
        std::array::from_fn(|k| i.mu[k].exp() / i.probs[k] * (counts[k] + sign * delta))
    }

    /// `(s0, s1 raw)` for one basis.
    fn vacuum_and_single(counts: [f64; 3], i: &Intensities, beta: f64) -> (f64, f64) {
        let [m1, m2, m3] = i.mu;
        let lo = Self::corrected(counts, i, beta, -1.0);
        let hi = Self::corrected(counts, i, beta, 1.0);
        let (t0, t1) = (i.tau(0), i.tau(1));
        let total: f64 = counts.iter().sum();
        let s0 = (t0 * (m2 * lo[2] - m3 * hi[1]) / (m2 - m3)).clamp(0.0, total);
        let s1 = t1 * m1
            * (lo[1] - hi[2] - (m2 * m2 - m3 * m3) / (m1 * m1) * (hi[0] - s0 / t0))
            / (m1 * (m2 - m3) - m2 * m2 + m3 * m3);
        (s0, s1)
    }
}

impl DecoyEstimator for VacuumWeakDecoy {
    fn name(&self) -> &'static str {
        "vacuum-weak-decoy"
    }

    fn bounds(&self, tally: &TallyTable, i: &Intensities, beta: f64) -> Result<DecoyBounds> {
        i.validate()?;
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::invalid("beta", format!("must be in (0,1), got {beta}")));
        }
        let n_t = tally.detections(Basis::Time);
        let n_p = tally.detections(Basis::Phase);
        let (s0, s1) = Self::vacuum_and_single(n_t, i, beta);
        let (_, s1p) = Self::vacuum_and_single(n_p, i, beta);
        let [_, m2, m3] = i.mu;
        let m_p = tally.errors(Basis::Phase);
        let hi = Self::corrected(m_p, i, beta, 1.0);
        let lo = Self::corrected(m_p, i, beta, -1.0);
        let v1 = (i.tau(1) * (hi[1] - lo[2]) / (m2 - m3)).max(0.0);
        let total_t: f64 = n_t.iter().sum();
        let total_p: f64 = n_p.iter().sum();
        Ok(DecoyBounds {
            s0_lower: s0,
            s1_lower: s1.clamp(0.0, total_t),
            s1_phase_lower: s1p.clamp(0.0, total_p),
            v1_upper: v1,
            infeasible: s1 < 0.0 || s1p < 0.0,
        })
    }
}

/// Wraps an estimator and scales its output; a test hook for deliberately
/// overconfident bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasedEstimator<E> {
    pub inner: E,
    pub s1_scale: f64,
    pub v1_scale: f64,
}

impl<E: DecoyEstimator> DecoyEstimator for BiasedEstimator<E> {
    fn name(&self) -> &'static str {
        "biased"
    }

    fn bounds(&self, tally: &TallyTable, i: &Intensities, beta: f64) -> Result<DecoyBounds> {
        let mut b = self.inner.bounds(tally, i, beta)?;
        b.s1_lower *= self.s1_scale;
        b.s1_phase_lower *= self.s1_scale;
        b.v1_upper *= self.v1_scale;
        Ok(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{Cell, Intensity};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn defaults() -> Intensities {
        Intensities::from(&ProtocolConfig::default())
    }

    /// Exact expected tallies of a background + linear-loss channel.
    fn ideal_tally(n: f64, y0: f64, eta: f64, e: f64) -> TallyTable {
        let i = defaults();
        let mut t = TallyTable {
            frames: i.probs.map(|p| n * p),
            ..Default::default()
        };
        for (b, pb) in [(Basis::Time, 0.9), (Basis::Phase, 0.1)] {
            for k in Intensity::ALL {
                let sent = n * pb * i.probs[k.index()];
                let mu = i.mu[k.index()];
                let q = y0 + (1.0 - y0) * (1.0 - (-eta * mu).exp());
                let eq = 0.75 * y0 + e * (1.0 - (-eta * mu).exp());
                *t.cell_mut(b, k) = Cell {
                    detections: sent * q,
                    errors: sent * eq,
                };
            }
        }
        t
    }

    #[test]
    fn tau_values() {
        let i = defaults();
        let t0 = 0.8 * (-0.5f64).exp() + 0.1 * (-0.1f64).exp() + 0.1;
        assert_relative_eq!(i.tau(0), t0, epsilon = 1e-15);
        let t1 = 0.8 * (-0.5f64).exp() * 0.5 + 0.1 * (-0.1f64).exp() * 0.1;
        assert_relative_eq!(i.tau(1), t1, epsilon = 1e-15);
    }

    #[test]
    fn vacuum_bound_recovers_background() {
        let n = 1e12;
        let y0 = 2e-6;
        let t = ideal_tally(n, y0, 0.01, 0.03);
        let i = defaults();
        let b = VacuumWeakDecoy.bounds(&t, &i, 1.0 - 1e-15).unwrap();
        assert_relative_eq!(b.s0_lower / (i.tau(0) * n * 0.9), y0, max_relative = 1e-6);
    }

    #[test]
    fn single_photon_bound_is_below_truth() {
        let n = 1e12;
        let (y0, eta) = (2e-6, 0.01);
        let t = ideal_tally(n, y0, eta, 0.03);
        let i = defaults();
        let b = VacuumWeakDecoy.bounds(&t, &i, 1e-10).unwrap();
        let y1 = y0 + (1.0 - y0) * eta;
        let truth = i.tau(1) * n * 0.9 * y1;
        assert!(b.s1_lower <= truth);
        assert!(b.s1_lower > 0.9 * truth, "{} vs {truth}", b.s1_lower);
        let e1 = (0.75 * y0 + 0.03 * eta) / y1;
        assert!(b.lambda_obs() >= e1);
        assert!(b.lambda_obs() < 1.5 * e1, "{} vs {e1}", b.lambda_obs());
        assert!(!b.infeasible);
    }

    #[test]
    fn starved_tally_is_flagged() {
        let t = ideal_tally(1e5, 2e-6, 0.01, 0.03);
        let b = VacuumWeakDecoy.bounds(&t, &defaults(), 1e-10).unwrap();
        assert_eq!(b.s1_lower, 0.0);
        assert!(b.infeasible);
    }

    #[test]
    fn invalid_intensities() {
        assert!(Intensities::new([0.5, 0.3, 0.3], [0.8, 0.1, 0.1]).is_err());
        assert!(Intensities::new([0.3, 0.2, 0.15], [0.8, 0.1, 0.1]).is_err());
        assert!(Intensities::new([0.5, 0.1, 0.0], [0.9, 0.1, 0.0]).is_err());
    }

    #[test]
    fn biased_hook_inflates() {
        let t = ideal_tally(1e11, 2e-6, 0.01, 0.03);
        let i = defaults();
        let plain = VacuumWeakDecoy.bounds(&t, &i, 1e-10).unwrap();
        let biased = BiasedEstimator {
            inner: VacuumWeakDecoy,
            s1_scale: 2.0,
            v1_scale: 0.5,
        }
        .bounds(&t, &i, 1e-10)
        .unwrap();
        assert_eq!(biased.s1_lower, 2.0 * plain.s1_lower);
        assert!(biased.lambda_obs() < plain.lambda_obs());
    }

    proptest! {
        #[test]
        fn smaller_beta_is_looser(lb in -14.0f64..-2.0, d in 0.1f64..4.0, eta in 1e-3f64..0.3, n in 1e8f64..1e12) {
            let t = ideal_tally(n, 2e-6, eta, 0.03);
            let i = defaults();
            let a = VacuumWeakDecoy.bounds(&t, &i, 10f64.powf(lb)).unwrap();
            let b = VacuumWeakDecoy.bounds(&t, &i, 10f64.powf(lb - d)).unwrap();
            prop_assert!(b.s1_lower <= a.s1_lower + 1e-9 * a.s1_lower.abs().max(1.0));
            prop_assert!(b.s0_lower <= a.s0_lower + 1e-9 * a.s0_lower.abs().max(1.0));
            prop_assert!(b.v1_upper >= a.v1_upper - 1e-9 * a.v1_upper.abs().max(1.0));
        }
    }
}
