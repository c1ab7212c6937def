use super::Intensity;
use crate::error::{Error, Result};
use crate::qudit::Basis;
use serde::{Deserialize, Serialize};

/// Detections and errors for one (basis, intensity) pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub detections: f64,
    pub errors: f64,
}

/// Photon-number-resolved counts, only known to a simulator.
///
/// Classes are 0, 1 and 2+ photons emitted by Alice.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// `detections[basis][class]`.
    pub detections: [[u64; 3]; 2],
    /// `errors[basis][class]`.
    pub errors: [[u64; 3]; 2],
    /// Phase errors the single-photon time-basis detections would show if
    /// measured in the phase basis.
    pub key_single_photon_phase_errors: u64,
}

impl GroundTruth {
    pub fn merge(&mut self, other: &GroundTruth) {
        for b in 0..2 {
            for c in 0..3 {
                self.detections[b][c] += other.detections[b][c];
                self.errors[b][c] += other.errors[b][c];
            }
        }
        self.key_single_photon_phase_errors += other.key_single_photon_phase_errors;
    }

    pub fn single_photon_key(&self) -> u64 {
        self.detections[Basis::Time.index()][1]
    }

    /// Phase error rate of the single-photon part of the key.
    pub fn key_phase_error_rate(&self) -> f64 {
        let n = self.single_photon_key();
        if n == 0 {
            return 0.0;
        }
        self.key_single_photon_phase_errors as f64 / n as f64
    }
}

/// Observed statistics of a session, per basis and intensity.
///
/// Counts are `f64` so analytic expectations and integer Monte Carlo counts
/// share one type. Serializes to a flat JSON object with the field names
/// `n_Tk`, `m_Tk`, `n_Pk`, `m_Pk` and `frames_k` for `k` in `s`, `d`, `v`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(into = "TallyJson", try_from = "TallyJson")]
pub struct TallyTable {
    /// Frames sent per intensity (both bases).
    pub frames: [f64; 3],
    /// `cells[basis][intensity]`.
    pub cells: [[Cell; 3]; 2],
    pub ground_truth: Option<GroundTruth>,
}

impl TallyTable {
    pub fn cell(&self, basis: Basis, k: Intensity) -> &Cell {
        &self.cells[basis.index()][k.index()]
    }

    pub fn cell_mut(&mut self, basis: Basis, k: Intensity) -> &mut Cell {
        &mut self.cells[basis.index()][k.index()]
    }

    pub fn detections(&self, basis: Basis) -> [f64; 3] {
        self.cells[basis.index()].map(|c| c.detections)
    }

    pub fn errors(&self, basis: Basis) -> [f64; 3] {
        self.cells[basis.index()].map(|c| c.errors)
    }

    pub fn total_detections(&self, basis: Basis) -> f64 {
        self.detections(basis).iter().sum()
    }

    pub fn total_errors(&self, basis: Basis) -> f64 {
        self.errors(basis).iter().sum()
    }

    pub fn total_frames(&self) -> f64 {
        self.frames.iter().sum()
    }

    /// Error rate over all intensities; `None` without detections.
    pub fn qber(&self, basis: Basis) -> Option<f64> {
        let n = self.total_detections(basis);
        (n > 0.0).then(|| self.total_errors(basis) / n)
    }

    pub fn validate(&self) -> Result<()> {
        for basis in Basis::ALL {
            for k in Intensity::ALL {
                let c = self.cell(basis, k);
                let f = self.frames[k.index()];
                let ok = c.errors >= 0.0 && c.errors <= c.detections && c.detections <= f;
                if !ok || !f.is_finite() {
                    return Err(Error::invalid(
                        "tally",
                        format!(
                            "{}{}: need 0 <= m ({}) <= n ({}) <= frames ({f})",
                            basis.letter(),
                            k.letter(),
                            c.errors,
                            c.detections
                        ),
                    ));
                }
            }
        }
        if let Some(gt) = &self.ground_truth {
            for basis in Basis::ALL {
                let tagged: u64 = gt.detections[basis.index()].iter().sum();
                if (tagged as f64 - self.total_detections(basis)).abs() > 0.5 {
                    return Err(Error::invalid(
                        "ground_truth",
                        format!("tagged counts {tagged} do not sum to the detections"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Cell-wise sum; ground truth is kept only if both sides have it.
    pub fn merge(&mut self, other: &TallyTable) {
        for k in 0..3 {
            self.frames[k] += other.frames[k];
        }
        for b in 0..2 {
            for k in 0..3 {
                self.cells[b][k].detections += other.cells[b][k].detections;
                self.cells[b][k].errors += other.cells[b][k].errors;
            }
        }
        self.ground_truth = match (self.ground_truth.take(), &other.ground_truth) {
            (Some(mut a), Some(b)) => {
                a.merge(b);
                Some(a)
            }
            _ => None,
        };
    }

    /// Multiplies every count by `factor` (extrapolating a short run to a
    /// longer session). Ground truth is dropped.
    pub fn scaled(&self, factor: f64) -> TallyTable {
        let mut out = self.clone();
        out.frames = out.frames.map(|f| f * factor);
        for row in out.cells.iter_mut() {
            for c in row.iter_mut() {
                c.detections *= factor;
                c.errors *= factor;
            }
        }
        out.ground_truth = None;
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tally serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::invalid("tally json", e.to_string()))
    }
}

#[allow(non_snake_case)]
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TallyJson {
    n_Ts: f64,
    n_Td: f64,
    n_Tv: f64,
    m_Ts: f64,
    m_Td: f64,
    m_Tv: f64,
    n_Ps: f64,
    n_Pd: f64,
    n_Pv: f64,
    m_Ps: f64,
    m_Pd: f64,
    m_Pv: f64,
    frames_s: f64,
    frames_d: f64,
    frames_v: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ground_truth: Option<GroundTruth>,
}

impl From<TallyTable> for TallyJson {
    fn from(t: TallyTable) -> Self {
        let c = &t.cells;
        TallyJson {
            n_Ts: c[0][0].detections,
            n_Td: c[0][1].detections,
            n_Tv: c[0][2].detections,
            m_Ts: c[0][0].errors,
            m_Td: c[0][1].errors,
            m_Tv: c[0][2].errors,
            n_Ps: c[1][0].detections,
            n_Pd: c[1][1].detections,
            n_Pv: c[1][2].detections,
            m_Ps: c[1][0].errors,
            m_Pd: c[1][1].errors,
            m_Pv: c[1][2].errors,
            frames_s: t.frames[0],
            frames_d: t.frames[1],
            frames_v: t.frames[2],
            ground_truth: t.ground_truth,
        }
    }
}

impl TryFrom<TallyJson> for TallyTable {
    type Error = Error;

    fn try_from(j: TallyJson) -> Result<Self> {
        let cell = |n, m| Cell {
            detections: n,
            errors: m,
        };
        let t = TallyTable {
            frames: [j.frames_s, j.frames_d, j.frames_v],
            cells: [
                [cell(j.n_Ts, j.m_Ts), cell(j.n_Td, j.m_Td), cell(j.n_Tv, j.m_Tv)],
                [cell(j.n_Ps, j.m_Ps), cell(j.n_Pd, j.m_Pd), cell(j.n_Pv, j.m_Pv)],
            ],
            ground_truth: j.ground_truth,
        };
        t.validate()?;
        Ok(t)
    }
}
