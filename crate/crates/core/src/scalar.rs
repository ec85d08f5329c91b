//! Scalar abstraction shared by the numeric modules.
//!
//! Scores, probabilities and model weights are generic over [`Real`] so that
//! the same code runs in `f32` (compact models) or `f64` (the default used by
//! the training loop).

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// floating point: f32 or f64
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Lossless-enough conversion from an `f64` literal or intermediate.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable in every Real")
    }

    fn of_usize(v: usize) -> Self {
        Self::from_usize(v).expect("usize is representable in every Real")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Numerically stable logistic function.
pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_symmetric() {
        for z in [-30.0f64, -2.0, -0.1, 0.0, 0.5, 7.0, 40.0] {
            let s = sigmoid(z) + sigmoid(-z);
            assert!((s - 1.0).abs() < 1e-12, "{z}");
        }
        assert_eq!(sigmoid(0.0f32), 0.5);
    }

    #[test]
    fn sigmoid_stays_open_interval_for_moderate_inputs() {
        let p = sigmoid(30.0f64);
        assert!(p < 1.0 && p > 0.0);
    }
}
