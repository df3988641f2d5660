//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::Debug;

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point scalar the solvers are generic over: `f32` or `f64`.
///
/// Tolerances are written as `f64` literals and converted through
/// [`Real::lit`]; [`Real::tol`] additionally floors them at a small multiple of
/// machine epsilon so single-precision instances terminate on attainable
/// thresholds instead of running into iteration caps.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + Debug {
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    fn tol(x: f64) -> Self {
        let floor = Self::default_epsilon() * Self::lit(64.0);
        let t = Self::lit(x);
        if t < floor {
            floor
        } else {
            t
        }
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}
