//! Scalar abstraction shared by the numeric modules.

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point type the solver can run on (`f32`, `f64`).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Default + Send + Sync + 'static
{
    /// Converts an `f64` constant; saturates instead of failing.
    fn of(x: f64) -> Self {
        Self::from_f64(x).unwrap_or_else(|| {
            if x > 0.0 {
                Self::max_value()
            } else {
                Self::min_value()
            }
        })
    }

    /// Converts an integer inventory level or quantity.
    fn of_int(x: i64) -> Self {
        Self::of(x as f64)
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + ToPrimitive + Debug + Default + Send + Sync + 'static
{
}
