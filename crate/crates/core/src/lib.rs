//! Simulation and security analysis of a four-dimensional time-bin / phase-basis
//! decoy-state QKD link.
//!
//! The crate is split along the signal path:
//!
//! - [`qudit`]: time-bin and phase (DFT) states, overlaps, the overlap parameter `c`.
//! - [`interferometer`]: amplitude propagation through the delay-interferometer tree
//!   that measures phase states.
//! - [`channel`]: fiber loss, saturating detectors, weak-coherent-pulse gain/error.
//! - [`protocol`]: analytic and Monte Carlo tallies, sifting.
//! - [`finite_key`]: decoy bounds, phase-error bound, key-length formula, beta search.
//! - [`link`]: classical post-processing over a byte stream (sifting, sampling,
//!   hash verification).
//!
//! State algebra and the interferometer are generic over the scalar type
//! ([`Real`], implemented for `f32` and `f64`); the aliases below fix the
//! double-precision instantiation used by the rest of the crate.

pub mod channel;
pub mod error;
pub mod finite_key;
pub mod interferometer;
pub mod link;
pub mod protocol;
pub mod qudit;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

/// Double-precision qudit state.
pub type StateVector = qudit::StateVector<f64>;
/// Single-precision qudit state.
pub type StateVector32 = qudit::StateVector<f32>;
/// Double-precision probability matrix.
pub type OverlapMatrix = qudit::OverlapMatrix<f64>;
/// Double-precision time-bin wavepacket.
pub type Wavepacket = interferometer::Wavepacket<f64>;
/// Double-precision delay interferometer.
pub type DelayInterferometer = interferometer::DelayInterferometer<f64>;
/// Double-precision interferometer tree.
pub type CascadeTree = interferometer::CascadeTree<f64>;
/// Double-precision tree response.
pub type CascadeResponse = interferometer::CascadeResponse<f64>;
/// Complex amplitude at double precision.
pub type Amplitude = num_complex::Complex<f64>;
