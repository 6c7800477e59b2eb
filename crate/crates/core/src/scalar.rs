//! Scalar abstraction shared by the metric, routing and admission code.
//!
//! Cost and airtime arithmetic only needs a totally ordered field, so it is
//! written against [`Scalar`] and can run on `f32`, `f64` or an exact
//! rational type. The link metric needs powers and therefore [`Float`].

use std::fmt::Debug;

use num_traits::{FromPrimitive, Num, ToPrimitive};

pub use num_traits::Float;

/// Ordered numeric field used for costs, airtime fractions and sums.
pub trait Scalar: Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug {
    /// Converts a literal. Panics if the value is not representable, which
    /// only happens for non-finite input.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal not representable in scalar type")
    }

    fn max_of(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    fn min_of(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Scalar for T where T: Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug {}

/// Left-to-right sum. The fold order is part of the contract: route costs
/// computed incrementally must match a path re-summed from scratch.
pub fn sum_in_order<T: Scalar>(values: impl IntoIterator<Item = T>) -> T {
    values.into_iter().fold(T::zero(), |acc, v| acc + v)
}
