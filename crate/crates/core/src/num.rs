//! Scalar abstraction shared by every solver in the crate.

use nalgebra as na;
use num_traits as nt;

/// Floating point types the solvers can run on.
///
/// Objective values are always accumulated in `f64`, whatever the working
/// precision of the iterates.
pub trait Float: Copy + na::RealField + na::Scalar + nt::FromPrimitive + nt::ToPrimitive {
    /// Lossy conversion from an `f64` literal or configuration value.
    fn lit(x: f64) -> Self;

    /// Widening conversion used by objective bookkeeping.
    fn wide(self) -> f64;
}

macro_rules! impl_float {
    ($f:ty) => {
        impl Float for $f {
            #[inline]
            fn lit(x: f64) -> Self {
                x as $f
            }

            #[inline]
            fn wide(self) -> f64 {
                self as f64
            }
        }
    };
}

impl_float!(f32);
impl_float!(f64);
