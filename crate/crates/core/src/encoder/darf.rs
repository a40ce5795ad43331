//! Depth-aware fusion: deep features query pooled shallow features.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

use super::attention::scaled_dot_attention;
use super::ops::{adaptive_avg_pool, bilinear_resize, Conv2d};
use super::tensor::FeatureMap;

#[derive(Debug, Clone, PartialEq)]
pub struct Darf<T> {
    /// Common spatial side both inputs are aligned to.
    pub pool: usize,
    /// Deep channels -> attention width.
    pub query: Conv2d<T>,
    /// Shallow channels -> attention width.
    pub key: Conv2d<T>,
    /// Shallow channels -> deep channels, applied after attention.
    pub output: Conv2d<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DarfAttention<T> {
    /// `P^2 x C_s` fused tokens, one per aligned position.
    pub fused: Matrix<T>,
    /// `P^2 x P^2` attention, rows over keys.
    pub weights: Matrix<T>,
}

impl<T: Scalar> Darf<T> {
    pub fn zeros(shallow_channels: usize, deep_channels: usize, dim: usize, pool: usize) -> Self {
        Self {
            pool,
            query: Conv2d::pointwise(deep_channels, dim),
            key: Conv2d::pointwise(shallow_channels, dim),
            output: Conv2d::pointwise(shallow_channels, deep_channels),
        }
    }

    fn check(&self, shallow: &FeatureMap<T>, deep: &FeatureMap<T>) -> Result<()> {
        if shallow.batch() != 1 || deep.batch() != 1 {
            return Err(Error::Shape("DaRF runs one sample at a time".into()));
        }
        if shallow.channels() != self.key.in_channels || deep.channels() != self.query.in_channels {
            return Err(Error::Shape(format!(
                "DaRF expects shallow {} / deep {} channels, got {} / {}",
                self.key.in_channels,
                self.query.in_channels,
                shallow.channels(),
                deep.channels()
            )));
        }
        if shallow.height() < self.pool || shallow.width() < self.pool {
            return Err(Error::Shape(format!(
                "shallow map {}x{} smaller than pool side {}",
                shallow.height(),
                shallow.width(),
                self.pool
            )));
        }
        Ok(())
    }

    /// `softmax(Q(I(E_d)) K(A(E_s))^T / sqrt(D)) A(E_s)`.
    pub fn attend(
        &self,
        shallow: &FeatureMap<T>,
        deep: &FeatureMap<T>,
    ) -> Result<DarfAttention<T>> {
        self.check(shallow, deep)?;
        let p = self.pool;
        let pooled = adaptive_avg_pool(shallow, p, p);
        let aligned = bilinear_resize(deep, p, p);
        let tokens = |m: &FeatureMap<T>| -> Vec<Vec<T>> {
            (0..p * p).map(|i| m.pixel(0, i / p, i % p)).collect()
        };
        let values = tokens(&pooled);
        let queries: Vec<Vec<T>> = tokens(&aligned)
            .iter()
            .map(|t| self.query.apply_pointwise(t))
            .collect();
        let keys: Vec<Vec<T>> = values.iter().map(|t| self.key.apply_pointwise(t)).collect();
        let (fused, weights) =
            scaled_dot_attention(&queries, &keys, &values, self.query.out_channels);
        Ok(DarfAttention {
            fused: Matrix::from_rows(&fused)?,
            weights,
        })
    }

    /// Fused tokens projected to the deep channel count and averaged to a
    /// single vector.
    pub fn forward(&self, shallow: &FeatureMap<T>, deep: &FeatureMap<T>) -> Result<Vec<T>> {
        let att = self.attend(shallow, deep)?;
        let n = T::from_usize_lossy(att.fused.rows());
        let mut acc = vec![T::zero(); self.output.out_channels];
        for row in att.fused.iter_rows() {
            for (a, v) in acc.iter_mut().zip(self.output.apply_pointwise(row)) {
                *a += v;
            }
        }
        Ok(acc.into_iter().map(|v| v / n).collect())
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut p = Vec::new();
        p.extend(self.query.params_mut());
        p.extend(self.key.params_mut());
        p.extend(self.output.params_mut());
        p
    }
}
