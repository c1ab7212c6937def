use super::{Intensity, SiftedBlock, TallyTable};
use crate::error::{Error, Result};
use crate::qudit::Basis;
use serde::{Deserialize, Serialize};

/// Basis-matched statistics handed to the key-length calculation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiftOutcome {
    /// Raw-key (time-basis) detections per intensity.
    pub raw_key: [f64; 3],
    /// Conclusive phase-basis detections per intensity.
    pub phase_sample: [f64; 3],
    pub qber_time: f64,
    /// Observed phase-basis error rate.
    pub lambda_obs: f64,
    /// Aligned key strings per intensity when symbols were kept.
    pub key_pairs: Option<[(Vec<u8>, Vec<u8>); 3]>,
}

impl SiftOutcome {
    pub fn raw_key_total(&self) -> f64 {
        self.raw_key.iter().sum()
    }
}

/// Tallies already hold basis-matched, conclusive events only; this checks
/// that both bases have data and attaches the symbol strings if present.
pub fn sift(tally: &TallyTable, block: Option<&SiftedBlock>) -> Result<SiftOutcome> {
    tally.validate()?;
    let qber_time = tally
        .qber(Basis::Time)
        .ok_or(Error::EmptyBlock("time-basis raw key"))?;
    let lambda_obs = tally
        .qber(Basis::Phase)
        .ok_or(Error::EmptyBlock("phase-basis sample"))?;
    let key_pairs = match block {
        Some(b) => {
            b.validate()?;
            for k in Intensity::ALL {
                let n = tally.cell(Basis::Time, k).detections;
                if b.alice[k.index()].len() as f64 != n {
                    return Err(Error::invalid(
                        "block",
                        format!("{} symbols at intensity {} but {n} detections", b.alice[k.index()].len(), k.letter()),
                    ));
                }
            }
            Some(Intensity::ALL.map(|k| (b.alice[k.index()].clone(), b.bob[k.index()].clone())))
        }
        None => None,
    };
    Ok(SiftOutcome {
        raw_key: tally.detections(Basis::Time),
        phase_sample: tally.detections(Basis::Phase),
        qber_time,
        lambda_obs,
        key_pairs,
    })
}
