use serde::{Deserialize, Serialize};

use super::FeatureError;
use crate::scalar::Scalar;

pub const NORMALIZER_EPSILON: f64 = 1e-8;

/// z-score statistics: `(v − mean) / max(std, ε)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer<T> {
    pub mean: T,
    /// Population standard deviation.
    pub std: T,
    pub epsilon: T,
}

impl<T: Scalar> Normalizer<T> {
    pub fn identity() -> Self {
        Self {
            mean: T::zero(),
            std: T::one(),
            epsilon: T::lit(NORMALIZER_EPSILON),
        }
    }

    pub fn fit(values: &[T]) -> Result<Self, FeatureError> {
        if values.is_empty() {
            return Err(FeatureError::EmptyInput("normalizer fit"));
        }
        let n = T::from_usize_lossy(values.len());
        let mean = values.iter().copied().sum::<T>() / n;
        let var = values
            .iter()
            .map(|&v| {
                let d = v - mean;
                d * d
            })
            .sum::<T>()
            / n;
        Ok(Self {
            mean,
            std: var.sqrt(),
            epsilon: T::lit(NORMALIZER_EPSILON),
        })
    }

    fn scale(&self) -> T {
        self.std.max(self.epsilon)
    }

    pub fn transform(&self, v: T) -> T {
        (v - self.mean) / self.scale()
    }

    pub fn inverse(&self, z: T) -> T {
        z * self.scale() + self.mean
    }

    pub fn transform_all(&self, values: &[T]) -> Vec<T> {
        values.iter().map(|&v| self.transform(v)).collect()
    }
}
