//! Delay-interferometer tree for phase-basis measurement.
//!
//! Each unequal-path interferometer splits a wavepacket, delays one half by
//! `delay_bins` time bins with an extra phase, and recombines. For a frame of
//! `d = 2^k` bins, the tree has `k` stages with delays `d/2, d/4, ..., 1`; the
//! central output bin (`d - 1` from the frame start) is the only one where all
//! `d` input peaks interfere, and there each phase state lights exactly one
//! detector.
//!
//! Detectors are numbered by leaf position, plus ports first: for `d = 4`
//! the first-stage plus port feeds D0/D1 and the minus port feeds D2/D3.

use crate::error::{Error, Result};
use crate::qudit::{probability_matrix_with, OverlapMatrix, StateVector};
use crate::scalar::Real;
use num_complex::Complex;

/// Default bin width (400 ps).
pub const DEFAULT_BIN_WIDTH: f64 = 400e-12;

/// Complex amplitudes on a grid of time bins starting at global bin 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Wavepacket<T: Real> {
    pub bin_width: f64,
    amplitudes: Vec<Complex<T>>,
}

impl<T: Real> Wavepacket<T> {
    pub fn new(amplitudes: Vec<Complex<T>>, bin_width: f64) -> Self {
        Self {
            bin_width,
            amplitudes,
        }
    }

    /// Single frame carrying `state`, bins `0..d`.
    pub fn from_state(state: &StateVector<T>) -> Self {
        Self::new(state.amplitudes().to_vec(), DEFAULT_BIN_WIDTH)
    }

    /// Consecutive frames laid end to end.
    pub fn from_frames(states: &[StateVector<T>]) -> Self {
        let amplitudes = states
            .iter()
            .flat_map(|s| s.amplitudes().iter().copied())
            .collect();
        Self::new(amplitudes, DEFAULT_BIN_WIDTH)
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    pub fn amplitudes(&self) -> &[Complex<T>] {
        &self.amplitudes
    }

    /// Amplitude at bin `t`; bins outside the grid read as zero.
    pub fn at(&self, t: isize) -> Complex<T> {
        if t < 0 {
            return Complex::new(T::zero(), T::zero());
        }
        self.amplitudes
            .get(t as usize)
            .copied()
            .unwrap_or_else(|| Complex::new(T::zero(), T::zero()))
    }

    pub fn probabilities(&self) -> Vec<T> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    pub fn total_probability(&self) -> T {
        self.amplitudes
            .iter()
            .fold(T::zero(), |acc, a| acc + a.norm_sqr())
    }
}

/// Unequal-path interferometer.
///
/// `phase` is applied to the delayed arm. `phase_error` and `split_error`
/// model imperfections: the phase actually applied is `phase + phase_error`
/// and both beamsplitters have power reflectivity `1/2 + split_error`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayInterferometer<T: Real> {
    pub delay_bins: usize,
    pub phase: T,
    pub phase_error: T,
    pub split_error: T,
}

impl<T: Real> DelayInterferometer<T> {
    pub fn new(delay_bins: usize, phase: T) -> Self {
        let tau = T::TAU();
        let mut phase = phase % tau;
        if phase < T::zero() {
            phase = phase + tau;
        }
        Self {
            delay_bins,
            phase,
            phase_error: T::zero(),
            split_error: T::zero(),
        }
    }

    /// Splits `w` into the `(plus, minus)` output ports.
    ///
    /// With ideal 50/50 splitters,
    /// `plus[t] = (w[t] + e^{i phi} w[t - delay]) / 2` and
    /// `minus[t] = (w[t] - e^{i phi} w[t - delay]) / 2`.
    pub fn apply(&self, w: &Wavepacket<T>) -> (Wavepacket<T>, Wavepacket<T>) {
        let half = T::lit(0.5);
        let r = (half + self.split_error).max(T::zero()).min(T::one());
        let (sr, st) = (r.sqrt(), (T::one() - r).sqrt());
        let rot = Complex::from_polar(T::one(), self.phase + self.phase_error);
        let len = w.len() + self.delay_bins;
        let mut plus = Vec::with_capacity(len);
        let mut minus = Vec::with_capacity(len);
        for t in 0..len as isize {
            let short = w.at(t) * sr;
            let long = rot * w.at(t - self.delay_bins as isize) * st;
            plus.push(short * sr + long * st);
            minus.push(short * st - long * sr);
        }
        (
            Wavepacket::new(plus, w.bin_width),
            Wavepacket::new(minus, w.bin_width),
        )
    }
}

/// Free-function form of [`DelayInterferometer::apply`].
pub fn di_apply<T: Real>(
    w: &Wavepacket<T>,
    di: &DelayInterferometer<T>,
) -> (Wavepacket<T>, Wavepacket<T>) {
    di.apply(w)
}

fn bit_reverse(x: usize, bits: u32) -> usize {
    if bits == 0 {
        return 0;
    }
    x.reverse_bits() >> (usize::BITS - bits)
}

/// Binary tree of delay interferometers, stored breadth-first.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeTree<T: Real> {
    dim: usize,
    stages: u32,
    nodes: Vec<DelayInterferometer<T>>,
}

impl<T: Real> CascadeTree<T> {
    /// The standard receiver for `d = 2^k`.
    ///
    /// Node at stage `s`, breadth-first position `p` has delay `d / 2^(s+1)`
    /// and phase `pi * r / 2^s`, where `r` is `p` bit-reversed over `s` bits.
    /// For `d = 4` that is DI 1 (delay 2, phase 0), DI 2 (delay 1, phase 0),
    /// DI 3 (delay 1, phase pi/2).
    pub fn standard(dim: usize) -> Result<Self> {
        if dim < 2 || !dim.is_power_of_two() {
            return Err(Error::UnsupportedDimension(dim));
        }
        let stages = dim.trailing_zeros();
        let mut nodes = Vec::with_capacity(dim - 1);
        for s in 0..stages {
            let delay = dim >> (s + 1);
            for p in 0..(1usize << s) {
                let r = bit_reverse(p, s);
                let phase = T::PI() * T::from_usize_lossy(r) / T::from_usize_lossy(1 << s);
                nodes.push(DelayInterferometer::new(delay, phase));
            }
        }
        Ok(Self { dim, stages, nodes })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn detector_count(&self) -> usize {
        self.dim
    }

    /// Number of output bins for a single-frame input, `2(d-1)+1`.
    pub fn output_bins(&self) -> usize {
        2 * self.dim - 1
    }

    pub fn central_bin(&self) -> usize {
        self.dim - 1
    }

    /// Breadth-first interferometer list (DI 1, DI 2, DI 3 for `d = 4`).
    pub fn interferometers(&self) -> &[DelayInterferometer<T>] {
        &self.nodes
    }

    pub fn interferometer_mut(&mut self, index: usize) -> &mut DelayInterferometer<T> {
        &mut self.nodes[index]
    }

    pub fn set_phase(&mut self, index: usize, phase: T) {
        let di = &mut self.nodes[index];
        *di = DelayInterferometer {
            phase: DelayInterferometer::new(di.delay_bins, phase).phase,
            ..*di
        };
    }

    pub fn with_phase_errors(mut self, errors: &[T]) -> Self {
        for (di, &e) in self.nodes.iter_mut().zip(errors) {
            di.phase_error = e;
        }
        self
    }

    pub fn with_split_errors(mut self, errors: &[T]) -> Self {
        for (di, &e) in self.nodes.iter_mut().zip(errors) {
            di.split_error = e;
        }
        self
    }

    /// Output wavepacket at every detector, in detector order.
    pub fn propagate(&self, input: &Wavepacket<T>) -> Vec<Wavepacket<T>> {
        let mut layer = vec![input.clone()];
        let mut offset = 0;
        for s in 0..self.stages {
            let width = 1usize << s;
            let mut next = Vec::with_capacity(2 * width);
            for (p, w) in layer.iter().enumerate() {
                let (plus, minus) = self.nodes[offset + p].apply(w);
                next.push(plus);
                next.push(minus);
            }
            offset += width;
            layer = next;
        }
        layer
    }

    /// Per-detector, per-bin detection probabilities for a single frame.
    pub fn response(&self, state: &StateVector<T>) -> Result<CascadeResponse<T>> {
        if state.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                left: state.dim(),
                right: self.dim,
            });
        }
        let outputs = self.propagate(&Wavepacket::from_state(state));
        Ok(CascadeResponse {
            central_bin: self.central_bin(),
            pdfs: outputs.iter().map(|w| w.probabilities()).collect(),
        })
    }

    /// Which detector's central bin answers each phase state `|f_n>`.
    ///
    /// Fails if some phase state spreads its central-bin mass over several
    /// detectors or two phase states share a detector.
    pub fn central_bin_map(&self) -> Result<Vec<usize>> {
        let tol = T::lit(1e-9);
        let mut map = Vec::with_capacity(self.dim);
        for n in 0..self.dim {
            let resp = self.response(&StateVector::phase(n, self.dim)?)?;
            let lit: Vec<usize> = (0..self.dim)
                .filter(|&j| resp.central(j) > tol)
                .collect();
            if lit.len() != 1 {
                return Err(Error::DegenerateMap(format!(
                    "|f_{n}> reaches the central bin of {} detectors",
                    lit.len()
                )));
            }
            if let Some(m) = map.iter().position(|&j| j == lit[0]) {
                return Err(Error::DegenerateMap(format!(
                    "|f_{m}> and |f_{n}> share detector D{}",
                    lit[0]
                )));
            }
            map.push(lit[0]);
        }
        Ok(map)
    }

    /// Central-bin-only readout: probability per detector plus everything
    /// else lumped as inconclusive.
    pub fn phase_basis_channel(&self, state: &StateVector<T>) -> Result<PhaseOutcome<T>> {
        let resp = self.response(state)?;
        let detectors: Vec<T> = (0..self.dim).map(|j| resp.central(j)).collect();
        let conclusive = detectors.iter().fold(T::zero(), |a, &b| a + b);
        Ok(PhaseOutcome {
            inconclusive: resp.total() - conclusive,
            detectors,
        })
    }

    /// Probability matrix with the time basis read directly and the phase
    /// basis read through this tree's central bins (conditioned on a
    /// conclusive event and relabeled by phase index).
    pub fn measured_probability_matrix(&self) -> Result<OverlapMatrix<T>> {
        let map = self.central_bin_map()?;
        probability_matrix_with(
            self.dim,
            |s| Ok(s.amplitudes().iter().map(|a| a.norm_sqr()).collect()),
            |s| {
                let out = self.phase_basis_channel(s)?;
                let total = T::one() - out.inconclusive;
                Ok(map.iter().map(|&j| out.detectors[j] / total).collect())
            },
        )
    }
}

/// Detector probabilities from the central bin only.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseOutcome<T: Real> {
    pub detectors: Vec<T>,
    pub inconclusive: T,
}

/// Output probability distribution of the tree for one input frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeResponse<T: Real> {
    /// `pdfs[detector][bin]`.
    pub pdfs: Vec<Vec<T>>,
    pub central_bin: usize,
}

impl<T: Real> CascadeResponse<T> {
    pub fn central(&self, detector: usize) -> T {
        self.pdfs[detector][self.central_bin]
    }

    pub fn central_total(&self) -> T {
        (0..self.pdfs.len()).fold(T::zero(), |a, j| a + self.central(j))
    }

    pub fn total(&self) -> T {
        self.pdfs
            .iter()
            .flatten()
            .fold(T::zero(), |a, &p| a + p)
    }

    pub fn outside_central(&self) -> T {
        self.total() - self.central_total()
    }

    pub fn detector_total(&self, detector: usize) -> T {
        self.pdfs[detector].iter().fold(T::zero(), |a, &p| a + p)
    }

    pub fn bins(&self) -> usize {
        self.pdfs.first().map_or(0, Vec::len)
    }

    /// `detector,bin,probability` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("detector,bin,probability\n");
        for (j, pdf) in self.pdfs.iter().enumerate() {
            for (t, &p) in pdf.iter().enumerate() {
                out.push_str(&format!("{j},{t},{}\n", crate::qudit::fmt_sig17(p)));
            }
        }
        out
    }
}

/// Convenience: response of the standard `d = 4` tree.
pub fn cascade_response<T: Real>(state: &StateVector<T>) -> Result<CascadeResponse<T>> {
    if state.dim() != 4 {
        return Err(Error::DimensionMismatch {
            left: state.dim(),
            right: 4,
        });
    }
    CascadeTree::standard(4)?.response(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2};

    type C = Complex<f64>;

    fn c(re: f64) -> C {
        C::new(re, 0.0)
    }

    #[test]
    fn single_peak_splits_without_interference() {
        let w = Wavepacket::new(vec![c(1.0)], DEFAULT_BIN_WIDTH);
        let di = DelayInterferometer::new(2, 0.0);
        let (p, m) = di_apply(&w, &di);
        let ep = [0.5, 0.0, 0.5];
        let em = [0.5, 0.0, -0.5];
        for t in 0..3 {
            assert_abs_diff_eq!(p.amplitudes()[t].re, ep[t], epsilon = 1e-15);
            assert_abs_diff_eq!(m.amplitudes()[t].re, em[t], epsilon = 1e-15);
        }
    }

    #[test]
    fn two_peaks_interfere_in_the_central_bin() {
        let w = Wavepacket::new(vec![c(FRAC_1_SQRT_2), c(0.0), c(FRAC_1_SQRT_2)], DEFAULT_BIN_WIDTH);
        let (p, m) = DelayInterferometer::new(2, 0.0).apply(&w);
        assert_abs_diff_eq!(p.amplitudes()[2].norm(), FRAC_1_SQRT_2, epsilon = 1e-15);
        assert_abs_diff_eq!(m.amplitudes()[2].norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn phase_is_wrapped_into_range() {
        let di = DelayInterferometer::new(1, -FRAC_PI_2);
        assert_abs_diff_eq!(di.phase, 3.0 * FRAC_PI_2, epsilon = 1e-15);
    }

    #[test]
    fn standard_tree_layout() {
        let tree = CascadeTree::<f64>::standard(4).unwrap();
        let dis = tree.interferometers();
        assert_eq!(dis.len(), 3);
        assert_eq!(dis[0].delay_bins, 2);
        assert_eq!(dis[0].phase, 0.0);
        assert_eq!(dis[1].delay_bins, 1);
        assert_eq!(dis[1].phase, 0.0);
        assert_eq!(dis[2].delay_bins, 1);
        assert_abs_diff_eq!(dis[2].phase, FRAC_PI_2, epsilon = 1e-15);
        assert!(CascadeTree::<f64>::standard(6).is_err());
    }

    #[test]
    fn f0_lights_one_central_bin() {
        let r = cascade_response(&StateVector::<f64>::phase(0, 4).unwrap()).unwrap();
        assert_eq!(r.bins(), 7);
        assert_eq!(r.central_bin, 3);
        let lit: Vec<f64> = (0..4).map(|j| r.central(j)).collect();
        assert_abs_diff_eq!(lit[0], 0.25, epsilon = 1e-12);
        for &p in &lit[1..] {
            assert_abs_diff_eq!(p, 0.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(r.outside_central(), 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(r.total(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn time_state_spreads_uniformly_over_central_bins() {
        for n in 0..4 {
            let r = cascade_response(&StateVector::<f64>::time(n, 4).unwrap()).unwrap();
            for j in 0..4 {
                assert_abs_diff_eq!(r.central(j), 1.0 / 16.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn map_is_a_bijection() {
        let tree = CascadeTree::<f64>::standard(4).unwrap();
        assert_eq!(tree.central_bin_map().unwrap(), vec![0, 2, 1, 3]);
        let tree2 = CascadeTree::<f64>::standard(2).unwrap();
        assert_eq!(tree2.central_bin_map().unwrap(), vec![0, 1]);
        assert_eq!(tree2.output_bins(), 3);
    }

    #[test]
    fn removing_the_quadrature_offset_breaks_the_map() {
        let mut tree = CascadeTree::<f64>::standard(4).unwrap();
        tree.set_phase(2, 0.0);
        assert!(matches!(tree.central_bin_map(), Err(Error::DegenerateMap(_))));
    }

    #[test]
    fn phase_basis_channel_examples() {
        let tree = CascadeTree::<f64>::standard(4).unwrap();
        let map = tree.central_bin_map().unwrap();
        let out = tree
            .phase_basis_channel(&StateVector::phase(1, 4).unwrap())
            .unwrap();
        assert_abs_diff_eq!(out.detectors[map[1]], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(out.inconclusive, 0.75, epsilon = 1e-12);

        let out = tree
            .phase_basis_channel(&StateVector::time(0, 4).unwrap())
            .unwrap();
        for &p in &out.detectors {
            assert_abs_diff_eq!(p, 1.0 / 16.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(out.inconclusive, 0.75, epsilon = 1e-12);

        // uniform mixture of the phase states
        let mut mix = [0.0; 4];
        for n in 0..4 {
            let o = tree
                .phase_basis_channel(&StateVector::phase(n, 4).unwrap())
                .unwrap();
            for j in 0..4 {
                mix[j] += o.detectors[j] / 4.0;
            }
        }
        for p in mix {
            assert_abs_diff_eq!(p, 1.0 / 16.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn wrong_dimension_rejected() {
        assert!(cascade_response(&StateVector::<f64>::phase(0, 2).unwrap()).is_err());
        let tree = CascadeTree::<f64>::standard(4).unwrap();
        assert!(tree.response(&StateVector::time(0, 8).unwrap()).is_err());
    }

    #[test]
    fn imperfect_tree_still_conserves_energy() {
        let tree = CascadeTree::<f64>::standard(4)
            .unwrap()
            .with_phase_errors(&[0.1, -0.05, 0.2])
            .with_split_errors(&[0.03, -0.02, 0.01]);
        for n in 0..4 {
            let r = tree.response(&StateVector::phase(n, 4).unwrap()).unwrap();
            assert_abs_diff_eq!(r.total(), 1.0, epsilon = 1e-12);
        }
        // and leaks some central-bin mass to wrong detectors
        let r = tree.response(&StateVector::phase(0, 4).unwrap()).unwrap();
        assert!(r.central(1) + r.central(2) + r.central(3) > 1e-4);
    }

    #[test]
    fn measured_matrix_matches_ideal_cross_block() {
        let tree = CascadeTree::<f64>::standard(4).unwrap();
        let m = tree.measured_probability_matrix().unwrap();
        for i in 0..4 {
            for j in 4..8 {
                assert_abs_diff_eq!(m.get(i, j), 0.25, epsilon = 1e-9);
                assert_abs_diff_eq!(m.get(j, i), 0.25, epsilon = 1e-9);
            }
            assert_abs_diff_eq!(m.get(i + 4, i + 4), 1.0, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(m.overlap_parameter().unwrap(), 2.0, epsilon = 1e-9);
    }

    #[test]
    fn csv_has_one_row_per_detector_bin() {
        let r = cascade_response(&StateVector::<f64>::phase(0, 4).unwrap()).unwrap();
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 1 + 4 * 7);
        assert!(csv.lines().nth(4).unwrap().starts_with("0,3,2.5"));
    }
}
