//! The scalar abstraction: every numeric kernel in the crate is written
//! once against this trait and instantiated at `f32` or `f64`.

use num_traits::{Float, NumAssign, NumCast};
use std::fmt::{Debug, Display};
use std::iter::Sum;

pub trait Scalar:
    Float + NumAssign + NumCast + Sum + Copy + Debug + Display + Send + Sync + 'static
{
    /// Name recorded in checkpoint manifests.
    const DTYPE: &'static str;
    /// Bytes per element in the checkpoint parameter block.
    const BYTE_WIDTH: usize;

    fn from_f64(v: f64) -> Self {
        // Every finite f64 is representable (possibly rounded) in f32/f64.
        NumCast::from(v).unwrap()
    }

    fn to_f64(self) -> f64 {
        NumCast::from(self).unwrap()
    }

    /// Append the little-endian encoding of `self` to `out`.
    fn write_le(self, out: &mut Vec<u8>);

    /// Decode from exactly `BYTE_WIDTH` little-endian bytes.
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    const BYTE_WIDTH: usize = 4;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4-byte slice"))
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    const BYTE_WIDTH: usize = 8;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8-byte slice"))
    }
}
