//! Kolmogorov-Arnold layer: a learnable univariate function on every edge,
//! `phi(x) = w_b * silu(x) + w_s * spline(x)`, with cubic B-splines on a
//! uniform grid over `[-1, 1]`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::ops::silu;

pub const SPLINE_DEGREE: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct KanLayer<T> {
    in_features: usize,
    out_features: usize,
    grid_intervals: usize,
    knots: Vec<T>,
    /// `in x out`
    pub base_weight: Vec<T>,
    /// `in x out`
    pub spline_weight: Vec<T>,
    /// `in x out x (G + 3)` B-spline coefficients per edge.
    pub coefficients: Vec<T>,
}

/// Uniform knot vector on `[-1, 1]` with `G` intervals, extended by the
/// spline degree on each side.
pub fn uniform_knots<T: Scalar>(grid_intervals: usize) -> Vec<T> {
    let h = 2.0 / grid_intervals as f64;
    (0..grid_intervals + 2 * SPLINE_DEGREE + 1)
        .map(|j| T::lit(-1.0 + (j as f64 - SPLINE_DEGREE as f64) * h))
        .collect()
}

impl<T: Scalar> KanLayer<T> {
    pub fn zeros(in_features: usize, out_features: usize, grid_intervals: usize) -> Result<Self> {
        if grid_intervals == 0 {
            return Err(Error::InvalidParameter(
                "KAN grid needs at least one interval".into(),
            ));
        }
        let edges = in_features * out_features;
        Ok(Self {
            in_features,
            out_features,
            grid_intervals,
            knots: uniform_knots(grid_intervals),
            base_weight: vec![T::zero(); edges],
            spline_weight: vec![T::zero(); edges],
            coefficients: vec![T::zero(); edges * (grid_intervals + SPLINE_DEGREE)],
        })
    }

    pub fn in_features(&self) -> usize {
        self.in_features
    }

    pub fn out_features(&self) -> usize {
        self.out_features
    }

    pub fn basis_count(&self) -> usize {
        self.grid_intervals + SPLINE_DEGREE
    }

    pub fn knots(&self) -> &[T] {
        &self.knots
    }

    #[inline]
    pub fn edge(&self, p: usize, q: usize) -> usize {
        p * self.out_features + q
    }

    pub fn edge_coefficients(&self, p: usize, q: usize) -> &[T] {
        let n = self.basis_count();
        let e = self.edge(p, q);
        &self.coefficients[e * n..(e + 1) * n]
    }

    pub fn edge_coefficients_mut(&mut self, p: usize, q: usize) -> &mut [T] {
        let n = self.basis_count();
        let e = self.edge(p, q);
        &mut self.coefficients[e * n..(e + 1) * n]
    }

    /// Knot span `i` with `t_i <= x < t_{i+1}`, restricted to the grid.
    fn span(&self, x: T) -> usize {
        let lo = SPLINE_DEGREE;
        let hi = SPLINE_DEGREE + self.grid_intervals - 1;
        let mut i = lo;
        while i < hi && x >= self.knots[i + 1] {
            i += 1;
        }
        i
    }

    /// Values of all `G + 3` basis functions at `x` (clamped to `[-1, 1]`).
    pub fn basis(&self, x: T) -> Vec<T> {
        let x = x.max(-T::one()).min(T::one());
        let span = self.span(x);
        let p = SPLINE_DEGREE;
        let t = &self.knots;
        let mut n = [T::zero(); SPLINE_DEGREE + 1];
        let mut left = [T::zero(); SPLINE_DEGREE + 1];
        let mut right = [T::zero(); SPLINE_DEGREE + 1];
        n[0] = T::one();
        for j in 1..=p {
            left[j] = x - t[span + 1 - j];
            right[j] = t[span + j] - x;
            let mut saved = T::zero();
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        let mut out = vec![T::zero(); self.basis_count()];
        out[span - p..=span].copy_from_slice(&n);
        out
    }

    /// Spline part of edge `(p, q)` at `x`.
    pub fn spline(&self, p: usize, q: usize, x: T) -> T {
        self.basis(x)
            .iter()
            .zip(self.edge_coefficients(p, q))
            .map(|(&b, &c)| b * c)
            .sum()
    }

    /// `out_q = sum_p phi_{p,q}(x_p)`; inputs are clamped to the grid domain.
    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.in_features {
            return Err(Error::LengthMismatch {
                left: self.in_features,
                right: x.len(),
            });
        }
        let nb = self.basis_count();
        let mut out = vec![T::zero(); self.out_features];
        for (p, &xp) in x.iter().enumerate() {
            let xc = xp.max(-T::one()).min(T::one());
            let base = silu(xc);
            let basis = self.basis(xc);
            for (q, o) in out.iter_mut().enumerate() {
                let e = self.edge(p, q);
                let coeffs = &self.coefficients[e * nb..(e + 1) * nb];
                let spline: T = basis.iter().zip(coeffs).map(|(&b, &c)| b * c).sum();
                *o += self.base_weight[e] * base + self.spline_weight[e] * spline;
            }
        }
        Ok(out)
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut [T]> {
        vec![
            &mut self.base_weight,
            &mut self.spline_weight,
            &mut self.coefficients,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn knots_strictly_increase() {
        let k = uniform_knots::<f64>(8);
        assert_eq!(k.len(), 15);
        assert!(k.windows(2).all(|w| w[1] > w[0]));
        assert!((k[3] + 1.0).abs() < 1e-15 && (k[11] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn basis_partition_of_unity() {
        let layer = KanLayer::<f64>::zeros(1, 1, 8).unwrap();
        for i in 0..=200 {
            let x = -1.0 + i as f64 * 0.01;
            let b = layer.basis(x);
            assert!(b.iter().all(|&v| v >= -1e-15));
            assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12, "x = {x}");
        }
    }

    #[test]
    fn out_of_domain_inputs_are_clamped() {
        let mut layer = KanLayer::<f64>::zeros(1, 1, 4).unwrap();
        layer.spline_weight[0] = 1.0;
        for (i, c) in layer.edge_coefficients_mut(0, 0).iter_mut().enumerate() {
            *c = i as f64;
        }
        layer.base_weight[0] = 1.0;
        assert_eq!(
            layer.forward(&[3.0]).unwrap(),
            layer.forward(&[1.0]).unwrap()
        );
        assert_eq!(
            layer.forward(&[-7.0]).unwrap(),
            layer.forward(&[-1.0]).unwrap()
        );
    }
}
