//! Scalar abstraction shared by the tensor engine and the statevector simulator.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Real floating-point scalar usable by the differentiable and quantum kernels.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`; exact for the `f64` instance.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// `ceil(log2(d))`, with a floor of one qubit.
pub fn qubits_for(dim: usize) -> usize {
    assert!(dim > 0, "dimension must be positive");
    let mut n = 0usize;
    while (1usize << n) < dim {
        n += 1;
    }
    n.max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qubit_counts() {
        assert_eq!(qubits_for(1), 1);
        assert_eq!(qubits_for(2), 1);
        assert_eq!(qubits_for(12), 4);
        assert_eq!(qubits_for(63), 6);
        assert_eq!(qubits_for(64), 6);
        assert_eq!(qubits_for(75), 7);
        assert_eq!(qubits_for(264), 9);
    }

    #[test]
    fn conversions() {
        assert_eq!(f32::of(0.5), 0.5f32);
        assert_eq!(f64::of(0.1).to_f64_lossy(), 0.1);
    }
}
