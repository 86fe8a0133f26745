//! Scalar abstraction for the statistics core.

use std::fmt::Debug;

use num_traits::{Float, FloatConst, FromPrimitive};

/// Floating-point scalar usable by the special functions and tests.
pub trait Real: Float + FloatConst + FromPrimitive + Debug + Send + Sync + 'static {
    /// Convergence tolerance for series and continued fractions.
    const SERIES_EPS: f64;

    #[inline]
    fn lit(v: f64) -> Self {
        // every literal used in this crate is representable in f32 and f64
        Self::from_f64(v).expect("literal fits the scalar type")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count fits the scalar type")
    }
}

impl Real for f32 {
    const SERIES_EPS: f64 = 3e-7;
}

impl Real for f64 {
    const SERIES_EPS: f64 = 3e-16;
}
