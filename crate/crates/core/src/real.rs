//! Scalar abstraction for code that runs in both 32- and 64-bit precision.
//!
//! Trained artifacts are stored as `f32`. Gradient verification re-runs the
//! same kernels in `f64`, so the numeric cores are generic over [`Real`].

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

pub trait Real:
    Float + AddAssign + SubAssign + MulAssign + DivAssign + Sum + Debug + Default + Send + Sync + 'static
{
    fn of(v: f64) -> Self;
    fn f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn f64(self) -> f64 {
        self
    }
}

/// Numeric precision used by gradient checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    /// Central-difference step used by the finite-difference oracle.
    pub fn fd_step(self) -> f64 {
        match self {
            Precision::F32 => 1e-3,
            Precision::F64 => 1e-5,
        }
    }

    /// Largest relative error a gradient check may report in this precision.
    pub fn tolerance(self) -> f64 {
        match self {
            Precision::F32 => 1e-3,
            Precision::F64 => 1e-5,
        }
    }
}

/// Relative error between an analytic and a numeric derivative, with a unit
/// floor on the scale so near-zero components are compared absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1.0);
    (analytic - numeric).abs() / scale
}

/// Numerically stable `log(softmax(logits))`, accumulated in `f64`.
pub fn log_softmax<F: Real>(logits: &[F]) -> Vec<f64> {
    let max = logits
        .iter()
        .map(|v| v.f64())
        .fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v.f64() - max).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v.f64() - lse).collect()
}
