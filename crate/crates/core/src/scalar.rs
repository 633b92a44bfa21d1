//! Scalar abstraction: all numeric code is generic over `f32`/`f64`.

use std::fmt::{Debug, Display};

use num_traits::Float;
use serde::{de::DeserializeOwned, Serialize};

/// Floating-point scalar the math core is generic over.
pub trait Scalar:
    Float + Default + Debug + Display + Send + Sync + Serialize + DeserializeOwned + 'static
{
    fn cast_from(x: f64) -> Self {
        num_traits::cast(x).expect("f64 value representable in scalar type")
    }

    fn cast_f64(self) -> f64 {
        num_traits::cast(self).expect("scalar value representable as f64")
    }

    fn cast_usize(n: usize) -> Self {
        Self::cast_from(n as f64)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
