use super::{Cell, Intensity, ProtocolConfig, TallyTable};
use crate::channel::{
    expected_error_rate, expected_gain, jitter_misbin_probability, ChannelModel, DetectorModel,
    ReceiverLayout,
};
use crate::error::{Error, Result};
use crate::interferometer::CascadeTree;
use crate::qudit::{Basis, StateId, StateVector};

/// Steady-state receiver seen by a photon: per-basis detection efficiency,
/// background yield and error model at the configured loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmModel {
    pub transmittance: f64,
    /// Steady-state click rate of each time-arm detector.
    pub time_rate: f64,
    pub time_live: f64,
    /// Steady-state click rate of each phase-arm detector.
    pub phase_rates: Vec<f64>,
    pub phase_live: Vec<f64>,
    /// Per-photon probability of a time-basis detection.
    pub eta_time: f64,
    /// Per-photon probability of a conclusive (central-bin) phase detection.
    pub eta_phase: f64,
    /// Per-photon click probability on one time-arm detector, before dead time.
    pub time_detector_prob: f64,
    pub time_detectors: usize,
    pub y0_time: f64,
    pub y0_phase: f64,
    /// Intrinsic plus jitter error of the time basis.
    pub error_time: f64,
    pub error_phase: f64,
    pub background_error: f64,
    /// Central-bin share of a phase state's output.
    pub central_acceptance: f64,
    /// `detector_mass[state][detector]`: output probability per phase
    /// detector over all bins, states ordered as [`StateId::all`].
    pub detector_mass: Vec<Vec<f64>>,
    /// Phase index answered by each detector's central bin.
    pub central_map: Vec<usize>,
    pub tree: CascadeTree<f64>,
}

impl ArmModel {
    pub fn new(
        cfg: &ProtocolConfig,
        channel: &ChannelModel,
        rx: &ReceiverLayout,
        det: &DetectorModel,
    ) -> Result<Self> {
        cfg.validate()?;
        rx.validate()?;
        det.validate()?;
        let d = cfg.dim;
        if rx.phase_detectors != d {
            return Err(Error::invalid(
                "phase_detectors",
                format!("the tree for d = {d} has {d} outputs"),
            ));
        }
        let eta_ch = crate::channel::transmittance(channel.loss_db)?;
        let tree = CascadeTree::<f64>::standard(d)?;
        let central_map = tree.central_bin_map()?;
        let central_acceptance = tree
            .response(&StateVector::phase(0, d)?)?
            .central_total();
        let detector_mass = StateId::all(d)
            .into_iter()
            .map(|id| {
                let r = tree.response(&StateVector::prepare(id, d)?)?;
                Ok((0..d).map(|j| r.detector_total(j)).collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;

        let frame_duration = cfg.frame_duration();
        let time_photon = eta_ch * rx.time_arm_transmission() / rx.time_arm_fanout as f64;
        let phase_photon = eta_ch * rx.phase_arm_transmission();

        // unsaturated click probability per frame for an armed detector
        let time_click: f64 = Intensity::ALL
            .iter()
            .map(|&k| cfg.prob(k) * -(-det.eta0 * cfg.mu(k) * time_photon).exp_m1())
            .sum();
        let time_rate = det.steady_state_rate(cfg.frame_rate * time_click)?;
        let time_live = det.live_fraction(time_rate);

        let mut phase_rates = Vec::with_capacity(d);
        for j in 0..d {
            let mut click = 0.0;
            for (s, id) in StateId::all(d).into_iter().enumerate() {
                let p_state = cfg.basis_prob(id.basis) / d as f64;
                for k in Intensity::ALL {
                    let x = det.eta0 * cfg.mu(k) * phase_photon * detector_mass[s][j];
                    click += p_state * cfg.prob(k) * -(-x).exp_m1();
                }
            }
            phase_rates.push(det.steady_state_rate(cfg.frame_rate * click)?);
        }
        let phase_live: Vec<f64> = phase_rates.iter().map(|&r| det.live_fraction(r)).collect();
        let mean_phase_live = phase_live.iter().sum::<f64>() / d as f64;

        let eta_time = eta_ch * rx.time_arm_transmission() * det.eta0 * time_live;
        let eta_phase = phase_photon * central_acceptance * det.eta0 * mean_phase_live;
        let y0_time =
            det.dark_rate * frame_duration * time_live * rx.time_arm_fanout as f64;
        let y0_phase = det.dark_rate * cfg.bin_width * phase_live.iter().sum::<f64>();
        let jitter = jitter_misbin_probability(det.jitter_sigma, cfg.bin_width)?;

        Ok(Self {
            time_detector_prob: time_photon * det.eta0,
            time_detectors: rx.time_arm_fanout,
            transmittance: eta_ch,
            time_rate,
            time_live,
            phase_rates,
            phase_live,
            eta_time,
            eta_phase,
            y0_time,
            y0_phase,
            error_time: (cfg.intrinsic_error_time + jitter).min(1.0),
            error_phase: cfg.intrinsic_error_phase,
            background_error: (d - 1) as f64 / d as f64,
            central_acceptance,
            detector_mass,
            central_map,
            tree,
        })
    }

    pub fn eta(&self, basis: Basis) -> f64 {
        match basis {
            Basis::Time => self.eta_time,
            Basis::Phase => self.eta_phase,
        }
    }

    pub fn y0(&self, basis: Basis) -> f64 {
        match basis {
            Basis::Time => self.y0_time,
            Basis::Phase => self.y0_phase,
        }
    }

    pub fn intrinsic_error(&self, basis: Basis) -> f64 {
        match basis {
            Basis::Time => self.error_time,
            Basis::Phase => self.error_phase,
        }
    }

    /// Probability that at least one photon of a Poisson(`mu`) pulse clicks.
    ///
    /// The time arm splits photons over independent detectors, each armed
    /// with probability `time_live`, so a pulse that lands several photons on
    /// one dead detector is lost together. This reduces to `1 - exp(-eta mu)`
    /// at low load.
    pub fn signal_click_probability(&self, basis: Basis, mu: f64) -> f64 {
        match basis {
            Basis::Time => {
                let one = self.time_live * -(-mu * self.time_detector_prob).exp_m1();
                -(self.time_detectors as f64 * (-one).ln_1p()).exp_m1()
            }
            Basis::Phase => -(-mu * self.eta_phase).exp_m1(),
        }
    }

    /// Basis-matched detection probability per frame of mean photon number `mu`.
    pub fn gain(&self, basis: Basis, mu: f64) -> f64 {
        let eta_eff = -(-self.signal_click_probability(basis, mu)).ln_1p();
        expected_gain(1.0, eta_eff, self.y0(basis))
    }

    pub fn error_rate(&self, basis: Basis, mu: f64) -> f64 {
        let eta_eff = -(-self.signal_click_probability(basis, mu)).ln_1p();
        expected_error_rate(
            1.0,
            eta_eff,
            self.y0(basis),
            self.intrinsic_error(basis),
            self.background_error,
        )
    }

    /// Yield of a single photon in `basis` (detection probability given
    /// exactly one photon was sent).
    pub fn single_photon_yield(&self, basis: Basis) -> f64 {
        let y0 = self.y0(basis);
        y0 + (1.0 - y0) * self.eta(basis)
    }

    /// Error probability of a single-photon phase-basis detection.
    pub fn single_photon_phase_error(&self) -> f64 {
        let y1 = self.single_photon_yield(Basis::Phase);
        if y1 <= 0.0 {
            return self.background_error;
        }
        (self.background_error * self.y0_phase
            + self.error_phase * (1.0 - self.y0_phase) * self.eta_phase)
            / y1
    }
}

/// Mean-value tallies for `cfg.frames` frames.
pub fn simulate_expected(
    cfg: &ProtocolConfig,
    channel: &ChannelModel,
    rx: &ReceiverLayout,
    det: &DetectorModel,
) -> Result<TallyTable> {
    let arms = ArmModel::new(cfg, channel, rx, det)?;
    Ok(expected_tally(cfg, &arms))
}

pub(crate) fn expected_tally(cfg: &ProtocolConfig, arms: &ArmModel) -> TallyTable {
    let n = cfg.frames as f64;
    let mut t = TallyTable {
        frames: Intensity::ALL.map(|k| n * cfg.prob(k)),
        ..Default::default()
    };
    for basis in Basis::ALL {
        for k in Intensity::ALL {
            let sent = n * cfg.prob(k) * cfg.basis_prob(basis);
            let q = arms.gain(basis, cfg.mu(k));
            let e = arms.error_rate(basis, cfg.mu(k));
            *t.cell_mut(basis, k) = Cell {
                detections: sent * q,
                errors: sent * q * e,
            };
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn defaults() -> (ProtocolConfig, ReceiverLayout, DetectorModel) {
        (
            ProtocolConfig::default(),
            ReceiverLayout::default(),
            DetectorModel::default(),
        )
    }

    #[test]
    fn huge_loss_leaves_only_background() {
        let (cfg, rx, det) = defaults();
        let t = simulate_expected(&cfg, &ChannelModel::new(300.0).unwrap(), &rx, &det).unwrap();
        let arms = ArmModel::new(&cfg, &ChannelModel::new(300.0).unwrap(), &rx, &det).unwrap();
        for basis in Basis::ALL {
            for k in Intensity::ALL {
                let sent = cfg.frames as f64 * cfg.prob(k) * cfg.basis_prob(basis);
                assert_relative_eq!(
                    t.cell(basis, k).detections,
                    sent * arms.y0(basis),
                    max_relative = 1e-9
                );
            }
        }
        assert_relative_eq!(t.qber(Basis::Time).unwrap(), 0.75, max_relative = 1e-6);
    }

    #[test]
    fn vacuum_intensity_sees_background_only() {
        let (cfg, rx, det) = defaults();
        let ch = ChannelModel::new(10.0).unwrap();
        let t = simulate_expected(&cfg, &ch, &rx, &det).unwrap();
        let arms = ArmModel::new(&cfg, &ch, &rx, &det).unwrap();
        let sent = cfg.frames as f64 * 0.1 * 0.9;
        assert_relative_eq!(
            t.cell(Basis::Time, Intensity::Vacuum).detections,
            sent * arms.y0_time,
            max_relative = 1e-12
        );
    }

    #[test]
    fn closed_form_chain_at_top_loss() {
        // independent recomputation of the time-basis signal gain at 16.6 dB
        let (cfg, rx, det) = defaults();
        let loss = 16.6;
        let eta_ch = 10f64.powf(-loss / 10.0);
        let fr = 625e6;
        let per_det = eta_ch * 0.9 / 4.0;
        let mut q = 0.0;
        for (p, mu) in [(0.8, 0.5), (0.1, 0.1), (0.1, 0.0)] {
            q += p * (1.0 - f64::exp(-0.72 * mu * per_det));
        }
        let load = fr * q + 150.0;
        let rate = load / (1.0 + load * 100e-9);
        let live = 1.0 - rate * 100e-9;
        let y0 = 150.0 * 1.6e-9 * live * 4.0;
        let silent_det = 1.0 - live * (1.0 - f64::exp(-0.72 * 0.5 * per_det));
        let gain = y0 + (1.0 - y0) * (1.0 - silent_det.powi(4));

        let arms = ArmModel::new(&cfg, &ChannelModel::new(loss).unwrap(), &rx, &det).unwrap();
        assert_relative_eq!(arms.time_rate, rate, max_relative = 1e-8);
        assert_relative_eq!(arms.gain(Basis::Time, 0.5), gain, max_relative = 1e-8);
        let t = expected_tally(&cfg, &arms);
        assert_relative_eq!(
            t.cell(Basis::Time, Intensity::Signal).detections,
            6.25e10 * 0.8 * 0.9 * gain,
            max_relative = 1e-8
        );
    }

    #[test]
    fn phase_arm_uses_central_bin_acceptance() {
        let (cfg, rx, det) = defaults();
        let arms = ArmModel::new(&cfg, &ChannelModel::new(20.0).unwrap(), &rx, &det).unwrap();
        assert_relative_eq!(arms.central_acceptance, 0.25, max_relative = 1e-12);
        let expect = arms.transmittance
            * 0.1
            * 10f64.powf(-0.25)
            * 0.25
            * 0.72
            * arms.phase_live.iter().sum::<f64>()
            / 4.0;
        assert_relative_eq!(arms.eta_phase, expect, max_relative = 1e-12);
        // uniform mixture loads every phase detector equally
        let r0 = arms.phase_rates[0];
        for &r in &arms.phase_rates {
            assert_relative_eq!(r, r0, max_relative = 1e-9);
        }
    }

    #[test]
    fn light_load_matches_single_efficiency() {
        let (cfg, rx, det) = defaults();
        let arms = ArmModel::new(&cfg, &ChannelModel::new(30.0).unwrap(), &rx, &det).unwrap();
        let mu = 0.5;
        let plain = expected_gain(mu, arms.eta_time, arms.y0_time);
        assert_relative_eq!(arms.gain(Basis::Time, mu), plain, max_relative = 1e-5);
        assert_relative_eq!(
            arms.time_detectors as f64 * arms.time_detector_prob * arms.time_live,
            arms.eta_time,
            max_relative = 1e-12
        );
    }

    #[test]
    fn wrong_phase_detector_count_rejected() {
        let (cfg, mut rx, det) = defaults();
        rx.phase_detectors = 3;
        assert!(ArmModel::new(&cfg, &ChannelModel::new(1.0).unwrap(), &rx, &det).is_err());
    }
}
