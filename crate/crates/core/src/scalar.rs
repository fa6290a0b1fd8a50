//! Floating-point scalar abstraction shared by every numeric routine.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point: `f32` or `f64`.
///
/// All volume math, losses, metrics and the toy network are written against
/// this trait; the concrete aliases at the crate root pick a width.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// NIfTI datatype code used when a volume of this scalar is written.
    const NIFTI_DATATYPE: i16;
    /// Size in bytes on disk.
    const BYTES: usize;
    /// Short tag used in binary containers (`b'f'` + width).
    const TAG: u8;

    /// Lossy conversion from `f64`; never fails for finite inputs.
    #[inline]
    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("finite f64 converts to scalar")
    }

    #[inline]
    fn of_usize(x: usize) -> Self {
        <Self as FromPrimitive>::from_usize(x).expect("usize converts to scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("scalar converts to f64")
    }
}

impl Scalar for f32 {
    const NIFTI_DATATYPE: i16 = 16;
    const BYTES: usize = 4;
    const TAG: u8 = 4;
}

impl Scalar for f64 {
    const NIFTI_DATATYPE: i16 = 64;
    const BYTES: usize = 8;
    const TAG: u8 = 8;
}
