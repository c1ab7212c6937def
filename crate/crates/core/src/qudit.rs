//! Time-bin and phase qudit states.
//!
//! Time states `|t_n>` are the computational basis of a frame of `d` bins.
//! Phase states are their discrete Fourier transform,
//! `|f_n> = d^{-1/2} sum_m exp(+2 pi i n m / d) |t_m>`. The opposite sign
//! convention only permutes which detector answers which phase state.

use crate::error::{Error, Result};
use crate::scalar::Real;
use num_complex::Complex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Basis {
    Time,
    Phase,
}

impl Basis {
    pub const ALL: [Basis; 2] = [Basis::Time, Basis::Phase];

    pub fn index(self) -> usize {
        match self {
            Basis::Time => 0,
            Basis::Phase => 1,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Basis::Time => 'T',
            Basis::Phase => 'P',
        }
    }
}

/// Label of one of the `2d` prepared states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StateId {
    pub basis: Basis,
    pub index: usize,
}

impl StateId {
    pub fn time(index: usize) -> Self {
        Self {
            basis: Basis::Time,
            index,
        }
    }

    pub fn phase(index: usize) -> Self {
        Self {
            basis: Basis::Phase,
            index,
        }
    }

    /// All `2d` labels, time basis first.
    pub fn all(dim: usize) -> Vec<StateId> {
        Basis::ALL
            .iter()
            .flat_map(|&basis| (0..dim).map(move |index| StateId { basis, index }))
            .collect()
    }
}

/// Normalized pure state of a `d`-level system.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector<T: Real> {
    amplitudes: Vec<Complex<T>>,
}

fn check_dim(dim: usize) -> Result<()> {
    if dim < 2 {
        return Err(Error::DimensionTooSmall(dim));
    }
    Ok(())
}

fn check_index(index: usize, dim: usize) -> Result<()> {
    check_dim(dim)?;
    if index >= dim {
        return Err(Error::IndexOutOfRange { index, dim });
    }
    Ok(())
}

impl<T: Real> StateVector<T> {
    /// `|t_n>`: all amplitude in bin `n`.
    pub fn time(n: usize, dim: usize) -> Result<Self> {
        check_index(n, dim)?;
        let mut amplitudes = vec![Complex::new(T::zero(), T::zero()); dim];
        amplitudes[n] = Complex::new(T::one(), T::zero());
        Ok(Self { amplitudes })
    }

    /// `|f_n>`: amplitude `exp(2 pi i n m / d) / sqrt(d)` in bin `m`.
    pub fn phase(n: usize, dim: usize) -> Result<Self> {
        check_index(n, dim)?;
        let d = T::from_usize_lossy(dim);
        let scale = T::one() / d.sqrt();
        let amplitudes = (0..dim)
            .map(|m| {
                // reduce n*m mod d first so the angle stays in [0, 2 pi)
                let k = T::from_usize_lossy((n * m) % dim);
                Complex::from_polar(scale, T::TAU() * k / d)
            })
            .collect();
        Ok(Self { amplitudes })
    }

    pub fn prepare(id: StateId, dim: usize) -> Result<Self> {
        match id.basis {
            Basis::Time => Self::time(id.index, dim),
            Basis::Phase => Self::phase(id.index, dim),
        }
    }

    /// Wraps amplitudes that are already normalized.
    pub fn from_amplitudes(amplitudes: Vec<Complex<T>>) -> Result<Self> {
        check_dim(amplitudes.len())?;
        let norm = norm_sqr(&amplitudes);
        if norm == T::zero() {
            return Err(Error::ZeroNorm);
        }
        if (norm - T::one()).abs() > T::identity_tolerance() {
            return Err(Error::NotNormalized(norm.to_f64().unwrap_or(f64::NAN)));
        }
        Ok(Self { amplitudes })
    }

    /// Rescales arbitrary non-zero amplitudes to unit norm.
    pub fn normalized(amplitudes: Vec<Complex<T>>) -> Result<Self> {
        check_dim(amplitudes.len())?;
        let norm = norm_sqr(&amplitudes);
        if norm == T::zero() || !norm.is_finite() {
            return Err(Error::ZeroNorm);
        }
        let s = norm.sqrt();
        Ok(Self {
            amplitudes: amplitudes.into_iter().map(|a| a / s).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[Complex<T>] {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> T {
        norm_sqr(&self.amplitudes)
    }

    /// `<self|other>`, conjugate-linear in `self`.
    pub fn overlap(&self, other: &Self) -> Result<Complex<T>> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                left: self.dim(),
                right: other.dim(),
            });
        }
        Ok(self
            .amplitudes
            .iter()
            .zip(&other.amplitudes)
            .fold(Complex::new(T::zero(), T::zero()), |acc, (a, b)| {
                acc + a.conj() * b
            }))
    }

    /// `|<self|other>|^2`.
    pub fn fidelity(&self, other: &Self) -> Result<T> {
        self.overlap(other).map(|z| z.norm_sqr())
    }
}

fn norm_sqr<T: Real>(amps: &[Complex<T>]) -> T {
    amps.iter().fold(T::zero(), |acc, a| acc + a.norm_sqr())
}

/// Overlap parameter `c = -log2 max_{i,j} |<f_i|t_j>|^2` in bits.
///
/// States are renormalized before use, so slightly imperfect preparations can
/// be passed directly; a zero vector is rejected.
pub fn overlap_parameter<T: Real>(
    prepared: &[StateVector<T>],
    measured: &[StateVector<T>],
) -> Result<T> {
    if prepared.is_empty() || measured.is_empty() {
        return Err(Error::EmptyStates);
    }
    let mut worst = T::zero();
    for p in prepared {
        let p = StateVector::normalized(p.amplitudes.clone())?;
        for m in measured {
            let m = StateVector::normalized(m.amplitudes.clone())?;
            worst = worst.max(p.fidelity(&m)?);
        }
    }
    if worst == T::zero() {
        return Err(Error::invalid("states", "all cross-basis overlaps vanish"));
    }
    Ok(-worst.log2())
}

/// `c` for the ideal `d`-dimensional time/phase pair (equals `log2 d`).
pub fn ideal_overlap_parameter<T: Real>(dim: usize) -> Result<T> {
    let phase = (0..dim)
        .map(|n| StateVector::phase(n, dim))
        .collect::<Result<Vec<_>>>()?;
    let time = (0..dim)
        .map(|n| StateVector::time(n, dim))
        .collect::<Result<Vec<_>>>()?;
    overlap_parameter(&phase, &time)
}

/// Detection-probability matrix: rows are the `2d` prepared states (time
/// basis first), columns the `2d` measurement outcomes in the same order.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapMatrix<T: Real> {
    dim: usize,
    entries: Vec<T>,
}

impl<T: Real> OverlapMatrix<T> {
    /// Builds a matrix from `2d x 2d` row-major entries in `[0, 1]`.
    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let side = rows.len();
        if side < 4 || side % 2 != 0 {
            return Err(Error::MalformedMatrix(format!(
                "expected 2d x 2d with d >= 2, got {side} rows"
            )));
        }
        let mut entries = Vec::with_capacity(side * side);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != side {
                return Err(Error::MalformedMatrix(format!(
                    "row {i} has {} entries, expected {side}",
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                if !(v >= T::zero() && v <= T::one() + T::identity_tolerance()) {
                    return Err(Error::MalformedMatrix(format!(
                        "entry ({i},{j}) = {v} outside [0,1]"
                    )));
                }
            }
            // absorb rounding above 1
            entries.extend(row.into_iter().map(|v| v.min(T::one())));
        }
        Ok(Self {
            dim: side / 2,
            entries,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> usize {
        2 * self.dim
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.entries[row * self.side() + col]
    }

    pub fn row(&self, row: usize) -> &[T] {
        let s = self.side();
        &self.entries[row * s..(row + 1) * s]
    }

    /// Largest entry where preparation and measurement bases differ.
    pub fn max_cross_basis(&self) -> T {
        let d = self.dim;
        let mut worst = T::zero();
        for i in 0..2 * d {
            for j in 0..2 * d {
                if (i < d) != (j < d) {
                    worst = worst.max(self.get(i, j));
                }
            }
        }
        worst
    }

    /// Calibration-mode `c`: `-log2` of the worst cross-basis entry.
    pub fn overlap_parameter(&self) -> Result<T> {
        let worst = self.max_cross_basis();
        if worst == T::zero() {
            return Err(Error::MalformedMatrix(
                "cross-basis blocks are all zero".into(),
            ));
        }
        Ok(-worst.log2())
    }

    /// Row-major CSV, one matrix row per line, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.side() {
            let line: Vec<String> = self.row(i).iter().map(|&v| fmt_sig17(v)).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row = line
                .split(',')
                .map(|f| {
                    f.trim().parse::<f64>().map(T::lit).map_err(|e| {
                        Error::MalformedMatrix(format!("line {}: {e}", lineno + 1))
                    })
                })
                .collect::<Result<Vec<T>>>()?;
            rows.push(row);
        }
        Self::from_rows(rows)
    }
}

pub(crate) fn fmt_sig17<T: Real>(v: T) -> String {
    format!("{:.16e}", v.to_f64().unwrap_or(f64::NAN))
}

/// Ideal Born-rule matrix: `|<outcome|prepared>|^2` for the exact bases.
pub fn probability_matrix<T: Real>(dim: usize) -> Result<OverlapMatrix<T>> {
    let outcomes = StateId::all(dim)
        .into_iter()
        .map(|id| StateVector::prepare(id, dim))
        .collect::<Result<Vec<StateVector<T>>>>()?;
    probability_matrix_with(
        dim,
        |s| outcomes[..dim].iter().map(|o| o.fidelity(s)).collect(),
        |s| outcomes[dim..].iter().map(|o| o.fidelity(s)).collect(),
    )
}

/// Probability matrix from arbitrary measurement models. Each closure returns
/// the `d` outcome probabilities of its basis for the given prepared state.
pub fn probability_matrix_with<T, FT, FP>(
    dim: usize,
    time_measure: FT,
    phase_measure: FP,
) -> Result<OverlapMatrix<T>>
where
    T: Real,
    FT: Fn(&StateVector<T>) -> Result<Vec<T>>,
    FP: Fn(&StateVector<T>) -> Result<Vec<T>>,
{
    let mut rows = Vec::with_capacity(2 * dim);
    for id in StateId::all(dim) {
        let state = StateVector::prepare(id, dim)?;
        let mut row = time_measure(&state)?;
        row.extend(phase_measure(&state)?);
        if row.len() != 2 * dim {
            return Err(Error::DimensionMismatch {
                left: row.len(),
                right: 2 * dim,
            });
        }
        rows.push(row);
    }
    OverlapMatrix::from_rows(rows)
}
