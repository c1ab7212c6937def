//! Channel loss, detector saturation and weak-coherent-pulse statistics.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

/// Fiber attenuation used to quote an equivalent length.
pub const FIBER_DB_PER_KM: f64 = 0.2;

/// Error probability of a background click on a 4-symbol alphabet.
pub const BACKGROUND_ERROR: f64 = 0.75;

/// Lossy quantum channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub loss_db: f64,
}

impl ChannelModel {
    pub fn new(loss_db: f64) -> Result<Self> {
        transmittance(loss_db)?;
        Ok(Self { loss_db })
    }

    pub fn transmittance(&self) -> f64 {
        10f64.powf(-self.loss_db / 10.0)
    }

    pub fn fiber_equivalent_km(&self) -> f64 {
        self.loss_db / FIBER_DB_PER_KM
    }
}

/// `10^(-loss/10)`.
pub fn transmittance(loss_db: f64) -> Result<f64> {
    if !(loss_db >= 0.0 && loss_db.is_finite()) {
        return Err(Error::invalid("loss_db", format!("must be >= 0, got {loss_db}")));
    }
    Ok(10f64.powf(-loss_db / 10.0))
}

/// Converts an insertion loss in dB to a transmission factor.
pub fn db_to_transmission(db: f64) -> f64 {
    10f64.powf(-db / 10.0)
}

/// Parametric single-photon detector with non-paralyzable dead time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorModel {
    /// Efficiency at vanishing count rate.
    pub eta0: f64,
    /// Recovery time after a click, seconds.
    pub dead_time: f64,
    /// Dark counts per second.
    pub dark_rate: f64,
    /// Gaussian timing jitter (standard deviation), seconds.
    pub jitter_sigma: f64,
}

impl Default for DetectorModel {
    fn default() -> Self {
        Self {
            eta0: 0.72,
            dead_time: 100e-9,
            dark_rate: 150.0,
            jitter_sigma: 17e-12,
        }
    }
}

impl DetectorModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta0 > 0.0 && self.eta0 <= 1.0) {
            return Err(Error::invalid("eta0", format!("must be in (0,1], got {}", self.eta0)));
        }
        for (name, v) in [
            ("dead_time", self.dead_time),
            ("dark_rate", self.dark_rate),
            ("jitter_sigma", self.jitter_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// `eta0 / (1 + eta0 * incident_rate * dead_time)`.
    pub fn efficiency_at_rate(&self, incident_rate: f64) -> f64 {
        self.eta0 / (1.0 + self.eta0 * incident_rate.max(0.0) * self.dead_time)
    }

    /// Detected count rate for a given incident photon rate.
    pub fn detected_rate(&self, incident_rate: f64) -> f64 {
        incident_rate * self.efficiency_at_rate(incident_rate)
    }

    /// Fraction of time the detector is armed when it clicks at `rate`.
    pub fn live_fraction(&self, rate: f64) -> f64 {
        (1.0 - rate * self.dead_time).max(0.0)
    }

    /// Steady-state detected rate for an unsaturated click load.
    ///
    /// `load` is the rate the detector would register with no dead time
    /// (photon clicks, dark counts are added here). The detector is armed a
    /// fraction `1 - r * dead_time` of the time, so the rate solves
    /// `r = (load + dark) * (1 - r * dead_time)`, found by damped iteration.
    pub fn steady_state_rate(&self, load: f64) -> Result<f64> {
        if !(load >= 0.0 && load.is_finite()) {
            return Err(Error::invalid("load", format!("must be finite and >= 0, got {load}")));
        }
        let total = load + self.dark_rate;
        let slope = total * self.dead_time;
        // map g(r) = total (1 - r tau) has slope -slope; this step size halves
        // the error every iteration regardless of slope
        let step = 0.5 / (1.0 + slope);
        let mut r = total;
        for _ in 0..MAX_FIXED_POINT_ITERATIONS {
            let next = (1.0 - step) * r + step * total * (1.0 - r * self.dead_time);
            if (next - r).abs() <= 1e-10 * next.abs().max(f64::MIN_POSITIVE) {
                return Ok(next);
            }
            r = next;
        }
        Err(Error::NoConvergence(MAX_FIXED_POINT_ITERATIONS))
    }

    /// `(incident rate, efficiency, detected rate)` rows as CSV.
    pub fn efficiency_curve_csv(&self, rates: &[f64]) -> String {
        let mut out = String::from("incident_rate,efficiency,detected_rate\n");
        for &r in rates {
            out.push_str(&format!(
                "{r:e},{:.10e},{:.10e}\n",
                self.efficiency_at_rate(r),
                self.detected_rate(r)
            ));
        }
        out
    }
}

const MAX_FIXED_POINT_ITERATIONS: usize = 10_000;

/// Per-detector steady state for a frame-synchronous load: `frame_rate`
/// frames per second, each clicking an armed detector with `mean_click_prob`.
pub fn steady_state_detection_rate(
    det: &DetectorModel,
    frame_rate: f64,
    mean_click_prob: f64,
) -> Result<f64> {
    det.steady_state_rate(frame_rate * mean_click_prob)
}

/// Passive receiver: basis beamsplitter, time-arm coupler, phase-arm tree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReceiverLayout {
    /// Probability a photon is routed to the time-basis arm.
    pub basis_split: f64,
    /// Detectors behind the time-arm 1:N coupler.
    pub time_arm_fanout: usize,
    /// Detectors behind the interferometer tree.
    pub phase_detectors: usize,
    /// Insertion loss of the interferometer tree, dB.
    pub phase_insertion_loss_db: f64,
    /// Extra loss in the time arm, dB.
    pub time_insertion_loss_db: f64,
}

impl Default for ReceiverLayout {
    fn default() -> Self {
        Self {
            basis_split: 0.9,
            time_arm_fanout: 4,
            phase_detectors: 4,
            phase_insertion_loss_db: 2.5,
            time_insertion_loss_db: 0.0,
        }
    }
}

impl ReceiverLayout {
    pub fn validate(&self) -> Result<()> {
        if !(self.basis_split > 0.0 && self.basis_split < 1.0) {
            return Err(Error::invalid(
                "basis_split",
                format!("must be in (0,1), got {}", self.basis_split),
            ));
        }
        if self.time_arm_fanout == 0 || self.phase_detectors == 0 {
            return Err(Error::invalid("fanout", "detector counts must be >= 1"));
        }
        for (name, v) in [
            ("phase_insertion_loss_db", self.phase_insertion_loss_db),
            ("time_insertion_loss_db", self.time_insertion_loss_db),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Passive transmission into the time arm (split times insertion loss).
    pub fn time_arm_transmission(&self) -> f64 {
        self.basis_split * db_to_transmission(self.time_insertion_loss_db)
    }

    /// Passive transmission into the phase arm before the central-bin cut.
    pub fn phase_arm_transmission(&self) -> f64 {
        (1.0 - self.basis_split) * db_to_transmission(self.phase_insertion_loss_db)
    }
}

/// Detection probability per pulse, `1 - (1 - y0) exp(-eta mu)`.
pub fn expected_gain(mu: f64, eta: f64, y0: f64) -> f64 {
    y0 - (1.0 - y0) * (-eta * mu).exp_m1()
}

/// Error rate `E` with `E Q = e0 y0 + e_intrinsic (1 - exp(-eta mu))`.
///
/// Returns `e0` when the gain vanishes.
pub fn expected_error_rate(mu: f64, eta: f64, y0: f64, e_intrinsic: f64, e0: f64) -> f64 {
    let q = expected_gain(mu, eta, y0);
    if q <= 0.0 {
        return e0;
    }
    (e0 * y0 + e_intrinsic * (-(-eta * mu).exp_m1())) / q
}

/// Probability that a bin-centered Gaussian arrival lands outside its bin,
/// `erfc(bin / (2 sqrt(2) sigma))`.
pub fn jitter_misbin_probability(jitter_sigma: f64, bin_width: f64) -> Result<f64> {
    if !(jitter_sigma >= 0.0) {
        return Err(Error::invalid("jitter_sigma", "must be >= 0"));
    }
    if !(bin_width > 0.0) {
        return Err(Error::invalid("bin_width", "must be > 0"));
    }
    if jitter_sigma == 0.0 {
        return Ok(0.0);
    }
    Ok(erfc(bin_width / (2.0 * std::f64::consts::SQRT_2 * jitter_sigma)))
}
