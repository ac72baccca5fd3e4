//! Numeric abstraction for power and energy quantities.
//!
//! Resource amounts and time are integers throughout the crate. Only watts and
//! kilowatt-hours go through [`Scalar`], so the same engine can run with `f64`
//! for speed, `f32` for compact sweeps, or an exact rational when a test
//! needs equality rather than a tolerance.

use std::fmt::Debug;

use num_traits::{FromPrimitive, Num, ToPrimitive};

/// Scalar type used for power (W) and energy (kWh).
pub trait Scalar:
    Num + FromPrimitive + ToPrimitive + Copy + PartialOrd + Debug + Send + Sync + 'static
{
    fn from_count(n: u64) -> Self {
        Self::from_u64(n).expect("integer representable in scalar type")
    }

    fn ratio(numer: u64, denom: u64) -> Self {
        Self::from_count(numer) / Self::from_count(denom)
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Scalar for T where
    T: Num + FromPrimitive + ToPrimitive + Copy + PartialOrd + Debug + Send + Sync + 'static
{
}
