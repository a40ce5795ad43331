//! Pearson correlation between embedding vectors.
//!
//! Pearson similarity compares both the direction and the spread of two
//! vectors after removing their means, which makes it invariant to positive
//! affine changes of either argument.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Pearson correlation coefficient of `x` and `y`, clamped to `[-1, 1]`.
pub fn pearson_similarity<T: Scalar>(x: &[T], y: &[T]) -> Result<T> {
    let terms = PearsonTerms::new(x, y, T::zero())?;
    Ok(terms.similarity)
}

/// Centered vectors and norms of one Pearson evaluation, kept around so the
/// gradient can be formed without recomputing them.
///
/// With `guard > 0` the norms become `sqrt(|u|^2 + guard)`, which keeps the
/// value and its gradient finite for constant inputs.
#[derive(Debug, Clone)]
pub(crate) struct PearsonTerms<T> {
    pub centered_x: Vec<T>,
    pub centered_y: Vec<T>,
    pub norm_x: T,
    pub norm_y: T,
    pub similarity: T,
}

pub(crate) fn center<T: Scalar>(v: &[T]) -> Vec<T> {
    let mean = v.iter().copied().sum::<T>() / T::from_usize_lossy(v.len());
    v.iter().map(|&a| a - mean).collect()
}

impl<T: Scalar> PearsonTerms<T> {
    pub fn new(x: &[T], y: &[T], guard: T) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::LengthMismatch {
                left: x.len(),
                right: y.len(),
            });
        }
        if x.len() < 2 {
            return Err(Error::InvalidParameter(
                "pearson similarity needs at least two components".into(),
            ));
        }
        let centered_x = center(x);
        let centered_y = center(y);
        let sxx: T = centered_x.iter().map(|&a| a * a).sum();
        let syy: T = centered_y.iter().map(|&a| a * a).sum();
        let sxy: T = centered_x
            .iter()
            .zip(&centered_y)
            .map(|(&a, &b)| a * b)
            .sum();
        if guard <= T::zero() && (sxx <= T::zero() || syy <= T::zero()) {
            return Err(Error::ZeroVariance);
        }
        let norm_x = (sxx + guard).sqrt();
        let norm_y = (syy + guard).sqrt();
        // sqrt of the product keeps identical inputs at exactly 1
        let raw = sxy / ((sxx + guard) * (syy + guard)).sqrt();
        let similarity = raw.max(-T::one()).min(T::one());
        Ok(Self {
            centered_x,
            centered_y,
            norm_x,
            norm_y,
            similarity,
        })
    }

    /// `dS/dx_k = v_k / (|u||v|) - S u_k / |u|^2`, where `u`, `v` are the
    /// centered inputs.
    pub fn grad_x(&self) -> Vec<T> {
        let nn = self.norm_x * self.norm_y;
        let nx2 = self.norm_x * self.norm_x;
        self.centered_y
            .iter()
            .zip(&self.centered_x)
            .map(|(&v, &u)| v / nn - self.similarity * u / nx2)
            .collect()
    }

    pub fn grad_y(&self) -> Vec<T> {
        let nn = self.norm_x * self.norm_y;
        let ny2 = self.norm_y * self.norm_y;
        self.centered_x
            .iter()
            .zip(&self.centered_y)
            .map(|(&u, &v)| u / nn - self.similarity * v / ny2)
            .collect()
    }
}
