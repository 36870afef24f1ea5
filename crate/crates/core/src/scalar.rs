use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point type the estimators are written against: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + LowerExp
    + FromStr
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal, rounding to the nearest representable value.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("count representable")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Pairwise (cascade) summation. Order is fixed by the slice, so results are
/// reproducible regardless of how the terms were produced.
pub fn pairwise_sum<T: Scalar>(xs: &[T]) -> T {
    const BLOCK: usize = 32;
    if xs.len() <= BLOCK {
        return xs.iter().fold(T::zero(), |acc, &x| acc + x);
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// `ceil(x)` tolerant of values that should be integers but carry a few ulps
/// of rounding error from `powf`.
pub(crate) fn ceil_count<T: Scalar>(x: T) -> usize {
    let nearest = x.round();
    let tol = T::of(1e-9) * T::one().max(x.abs());
    let c = if (x - nearest).abs() <= tol { nearest } else { x.ceil() };
    c.to_usize().unwrap_or(usize::MAX)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_integers() {
        let xs: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 500500.0);
        assert_eq!(pairwise_sum::<f64>(&[]), 0.0);
    }

    #[test]
    fn ceil_count_absorbs_rounding_noise() {
        assert_eq!(ceil_count(100.0_f64 + 1e-12), 100);
        assert_eq!(ceil_count(100.2_f64), 101);
        assert_eq!(ceil_count(0.05_f64), 1);
        assert_eq!(ceil_count(3.0_f32), 3);
    }
}
