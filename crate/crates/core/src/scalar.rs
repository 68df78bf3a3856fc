//! Scalar abstraction for the closed-form model and diagnostics code.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point type usable by the generic model and diagnostics routines.
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + Sum + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` constant. Every `f64` is representable (possibly rounded).
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal converts to Real")
    }

    /// Converts a count.
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("count converts to Real")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// `log(sum(exp(xs)))` with a max shift. Returns `-inf` for empty input.
pub fn log_sum_exp<F: Real>(xs: impl IntoIterator<Item = F> + Clone) -> F {
    let max = xs
        .clone()
        .into_iter()
        .fold(F::neg_infinity(), |acc, x| if x > acc { x } else { acc });
    if max == F::neg_infinity() {
        return max;
    }
    if max == F::infinity() {
        return max;
    }
    let sum: F = xs.into_iter().map(|x| (x - max).exp()).sum();
    max + sum.ln()
}
