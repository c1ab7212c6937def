//! Prepare-and-measure protocol: configuration, tallies, analytic and Monte
//! Carlo simulation, sifting.

mod expected;
mod montecarlo;
mod sift;
mod tally;

pub use expected::{simulate_expected, ArmModel};
pub use montecarlo::{
    simulate_montecarlo, simulate_montecarlo_sharded, DetectionRecord, McOptions, McRun, SiftedBlock,
};
pub use sift::{sift, SiftOutcome};
pub use tally::{Cell, GroundTruth, TallyTable};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Intensity {
    Signal,
    Decoy,
    Vacuum,
}

impl Intensity {
    pub const ALL: [Intensity; 3] = [Intensity::Signal, Intensity::Decoy, Intensity::Vacuum];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn letter(self) -> char {
        match self {
            Intensity::Signal => 's',
            Intensity::Decoy => 'd',
            Intensity::Vacuum => 'v',
        }
    }
}

/// Alice's source and session parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub dim: usize,
    /// Time-bin width, seconds.
    pub bin_width: f64,
    /// Frames per second.
    pub frame_rate: f64,
    /// Probability Alice prepares a time-basis state.
    pub time_basis_prob: f64,
    /// Mean photon numbers (signal, decoy, vacuum).
    pub intensities: [f64; 3],
    /// Probabilities of (signal, decoy, vacuum).
    pub intensity_probs: [f64; 3],
    /// Frames sent in the session.
    pub frames: u64,
    pub intrinsic_error_time: f64,
    pub intrinsic_error_phase: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            dim: 4,
            bin_width: 400e-12,
            frame_rate: 625e6,
            time_basis_prob: 0.9,
            intensities: [0.5, 0.1, 0.0],
            intensity_probs: [0.8, 0.1, 0.1],
            frames: 62_500_000_000,
            intrinsic_error_time: 0.03,
            intrinsic_error_phase: 0.025,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim != 4 {
            return Err(Error::invalid("dim", "the receiver model is built for d = 4"));
        }
        if !(self.bin_width > 0.0 && self.frame_rate > 0.0) {
            return Err(Error::invalid("timing", "bin_width and frame_rate must be > 0"));
        }
        if self.frame_rate * self.frame_duration() > 1.0 + 1e-9 {
            return Err(Error::invalid(
                "frame_rate",
                format!(
                    "frames of {} s cannot repeat at {} Hz",
                    self.frame_duration(),
                    self.frame_rate
                ),
            ));
        }
        let unit = |name, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("probability {p} outside [0,1]")))
            }
        };
        unit("time_basis_prob", self.time_basis_prob)?;
        unit("intrinsic_error_time", self.intrinsic_error_time)?;
        unit("intrinsic_error_phase", self.intrinsic_error_phase)?;
        for &p in &self.intensity_probs {
            unit("intensity_probs", p)?;
        }
        let sum: f64 = self.intensity_probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("intensity_probs", format!("sum to {sum}, not 1")));
        }
        let [s, d, v] = self.intensities;
        if !(s > d && d > v && v >= 0.0) {
            return Err(Error::invalid(
                "intensities",
                format!("need signal > decoy > vacuum >= 0, got {s}, {d}, {v}"),
            ));
        }
        if self.frames == 0 {
            return Err(Error::invalid("frames", "must be >= 1"));
        }
        Ok(())
    }

    pub fn frame_duration(&self) -> f64 {
        self.dim as f64 * self.bin_width
    }

    /// Session length in seconds.
    pub fn session_duration(&self) -> f64 {
        self.frames as f64 / self.frame_rate
    }

    pub fn basis_prob(&self, basis: crate::qudit::Basis) -> f64 {
        match basis {
            crate::qudit::Basis::Time => self.time_basis_prob,
            crate::qudit::Basis::Phase => 1.0 - self.time_basis_prob,
        }
    }

    pub fn mu(&self, k: Intensity) -> f64 {
        self.intensities[k.index()]
    }

    pub fn prob(&self, k: Intensity) -> f64 {
        self.intensity_probs[k.index()]
    }
}
