use num_traits::{Float, FloatConst, FromPrimitive};
use std::fmt::{Debug, Display};

/// Floating-point scalar the state and interferometer algebra is written over.
pub trait Real:
    Float + FloatConst + FromPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Tolerance for algebraic identities (normalization, unitarity).
    ///
    /// `1e-12` at double precision; single precision falls back to a small
    /// multiple of machine epsilon.
    fn identity_tolerance() -> Self {
        let fixed = Self::from_f64(1e-12).unwrap();
        fixed.max(Self::epsilon() * Self::from_f64(64.0).unwrap())
    }

    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).unwrap()
    }

    fn lit(x: f64) -> Self {
        Self::from_f64(x).unwrap()
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tolerance_by_precision() {
        assert_eq!(f64::identity_tolerance(), 1e-12);
        assert!(f32::identity_tolerance() > 1e-6);
    }
}
