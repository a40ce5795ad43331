//! Multi-scale structural similarity.
//!
//! Contrast-structure terms are taken at every scale and luminance only at
//! the coarsest one, each raised to its scale weight. Statistics use an
//! 11x11 Gaussian window (sigma 1.5) without padding; scales are separated
//! by 2x2 average pooling.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Scalar;

/// Scale weights of the standard five-scale construction.
pub const DEFAULT_SCALE_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

#[derive(Debug, Clone, PartialEq)]
pub struct MsSsimParams {
    /// One exponent per scale, finest first; normalised to sum to 1.
    pub weights: Vec<f64>,
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range `L` of the pixel values.
    pub data_range: f64,
}

impl Default for MsSsimParams {
    fn default() -> Self {
        Self::with_weights(&DEFAULT_SCALE_WEIGHTS)
    }
}

impl MsSsimParams {
    pub fn with_weights(weights: &[f64]) -> Self {
        let total: f64 = weights.iter().sum();
        Self {
            weights: weights.iter().map(|w| w / total).collect(),
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
        }
    }

    /// The first `scales` standard weights, renormalised.
    pub fn with_scales(scales: usize) -> Self {
        Self::with_weights(&DEFAULT_SCALE_WEIGHTS[..scales.clamp(1, DEFAULT_SCALE_WEIGHTS.len())])
    }

    pub fn scales(&self) -> usize {
        self.weights.len()
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.data_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.data_range).powi(2)
    }

    /// Smallest image side the pyramid supports.
    pub fn min_side(&self) -> usize {
        self.window << (self.scales().saturating_sub(1))
    }
}

/// Normalised 1-D Gaussian taps.
pub fn gaussian_kernel<T: Scalar>(size: usize, sigma: f64) -> Vec<T> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| T::lit(v / s)).collect()
}

/// Separable "valid" filtering of a `h x w` plane.
fn filter_valid<T: Scalar>(plane: &[T], h: usize, w: usize, k: &[T]) -> (Vec<T>, usize, usize) {
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut rows = vec![T::zero(); h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![T::zero(); oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean luminance and contrast-structure terms of one scale.
fn ssim_terms<T: Scalar>(
    x: &[T],
    y: &[T],
    h: usize,
    w: usize,
    kernel: &[T],
    c1: T,
    c2: T,
) -> (T, T) {
    let xx: Vec<T> = x.iter().map(|&a| a * a).collect();
    let yy: Vec<T> = y.iter().map(|&a| a * a).collect();
    let xy: Vec<T> = x.iter().zip(y).map(|(&a, &b)| a * b).collect();
    let (mx, oh, ow) = filter_valid(x, h, w, kernel);
    let (my, _, _) = filter_valid(y, h, w, kernel);
    let (exx, _, _) = filter_valid(&xx, h, w, kernel);
    let (eyy, _, _) = filter_valid(&yy, h, w, kernel);
    let (exy, _, _) = filter_valid(&xy, h, w, kernel);
    let two = T::lit(2.0);
    let (mut l_sum, mut cs_sum) = (T::zero(), T::zero());
    for i in 0..oh * ow {
        let (ux, uy) = (mx[i], my[i]);
        let vx = exx[i] - ux * ux;
        let vy = eyy[i] - uy * uy;
        let cov = exy[i] - ux * uy;
        l_sum += (two * ux * uy + c1) / (ux * ux + uy * uy + c1);
        cs_sum += (two * cov + c2) / (vx + vy + c2);
    }
    let n = T::from_usize_lossy(oh * ow);
    (l_sum / n, cs_sum / n)
}

/// 2x2 average pooling; an odd trailing row or column is dropped.
fn downsample<T: Scalar>(plane: &[T], h: usize, w: usize) -> (Vec<T>, usize, usize) {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::lit(0.25);
    let out = (0..oh * ow)
        .map(|i| {
            let (y, x) = (2 * (i / ow), 2 * (i % ow));
            quarter
                * (plane[y * w + x]
                    + plane[y * w + x + 1]
                    + plane[(y + 1) * w + x]
                    + plane[(y + 1) * w + x + 1])
        })
        .collect();
    (out, oh, ow)
}

/// MS-SSIM of two single-channel planes.
pub fn ms_ssim_plane<T: Scalar>(
    x: &[T],
    y: &[T],
    h: usize,
    w: usize,
    p: &MsSsimParams,
) -> Result<T> {
    if x.len() != h * w || y.len() != h * w {
        return Err(Error::Shape("plane sizes disagree with dimensions".into()));
    }
    if p.scales() == 0 || h.min(w) < p.min_side() {
        return Err(Error::TooSmall {
            height: h,
            width: w,
            scales: p.scales(),
        });
    }
    let kernel = gaussian_kernel::<T>(p.window, p.sigma);
    let (c1, c2) = (T::lit(p.c1()), T::lit(p.c2()));
    let (mut a, mut b) = (x.to_vec(), y.to_vec());
    let (mut ch, mut cw) = (h, w);
    let mut value = T::one();
    for (j, &wj) in p.weights.iter().enumerate() {
        let (l, cs) = ssim_terms(&a, &b, ch, cw, &kernel, c1, c2);
        let wj = T::lit(wj);
        value *= cs.max(T::zero()).powf(wj);
        if j + 1 == p.scales() {
            value *= l.max(T::zero()).powf(wj);
        } else {
            let (na, nh, nw) = downsample(&a, ch, cw);
            let (nb, _, _) = downsample(&b, ch, cw);
            a = na;
            b = nb;
            ch = nh;
            cw = nw;
        }
    }
    Ok(value)
}

/// MS-SSIM averaged over channels. Values lie in `[0, 1]` with 1 for
/// identical inputs; negative contrast-structure terms are clamped to 0.
pub fn ms_ssim<T: Scalar>(x: &Image<T>, y: &Image<T>, p: &MsSsimParams) -> Result<T> {
    if !x.same_shape(y) {
        return Err(Error::Shape(format!(
            "image shapes differ: {}x{}x{} vs {}x{}x{}",
            x.height(),
            x.width(),
            x.channels(),
            y.height(),
            y.width(),
            y.channels()
        )));
    }
    let mut total = T::zero();
    for c in 0..x.channels() {
        total += ms_ssim_plane(&x.plane(c), &y.plane(c), x.height(), x.width(), p)?;
    }
    Ok(total / T::from_usize_lossy(x.channels()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_normalised_and_symmetric() {
        let k = gaussian_kernel::<f64>(11, 1.5);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..11 {
            assert_eq!(k[i], k[10 - i]);
        }
    }

    #[test]
    fn weights_normalised() {
        let p = MsSsimParams::default();
        assert!((p.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(p.min_side(), 176);
        assert_eq!(MsSsimParams::with_scales(1).min_side(), 11);
    }

    #[test]
    fn too_small_rejected() {
        let img = Image::filled(100, 100, 1, 0.5f64);
        assert!(matches!(
            ms_ssim(&img, &img, &MsSsimParams::default()),
            Err(Error::TooSmall { .. })
        ));
    }
}
