//! Convolution, normalisation and resampling primitives.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::tensor::FeatureMap;

/// Square-kernel 2-D convolution with bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `out x in x k x k`
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn zeros(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: vec![T::zero(); out_channels * in_channels * kernel * kernel],
            bias: vec![T::zero(); out_channels],
        }
    }

    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Self::zeros(in_channels, out_channels, 1, 1, 0)
    }

    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if ph < self.kernel || pw < self.kernel || self.stride == 0 {
            return Err(Error::Shape(format!(
                "{h}x{w} input too small for kernel {} with padding {}",
                self.kernel, self.padding
            )));
        }
        Ok((
            (ph - self.kernel) / self.stride + 1,
            (pw - self.kernel) / self.stride + 1,
        ))
    }

    pub fn forward(&self, input: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        if input.channels() != self.in_channels {
            return Err(Error::Shape(format!(
                "conv expects {} channels, got {}",
                self.in_channels,
                input.channels()
            )));
        }
        let (h, w) = (input.height(), input.width());
        let (oh, ow) = self.output_size(h, w)?;
        let k = self.kernel;
        let mut out = FeatureMap::zeros(input.batch(), self.out_channels, oh, ow);
        for b in 0..input.batch() {
            for o in 0..self.out_channels {
                let plane = out.plane_mut(b, o);
                plane.fill(self.bias[o]);
                for i in 0..self.in_channels {
                    let src = input.plane(b, i);
                    let wbase = (o * self.in_channels + i) * k * k;
                    for ky in 0..k {
                        for kx in 0..k {
                            let wv = self.weight[wbase + ky * k + kx];
                            if wv == T::zero() {
                                continue;
                            }
                            for oy in 0..oh {
                                let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let row = &src[iy as usize * w..(iy as usize + 1) * w];
                                for ox in 0..ow {
                                    let ix =
                                        (ox * self.stride + kx) as isize - self.padding as isize;
                                    if ix >= 0 && ix < w as isize {
                                        plane[oy * ow + ox] += wv * row[ix as usize];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Applies a 1x1 convolution to a single channel vector.
    pub fn apply_pointwise(&self, v: &[T]) -> Vec<T> {
        debug_assert_eq!(self.kernel, 1);
        (0..self.out_channels)
            .map(|o| {
                let row = &self.weight[o * self.in_channels..(o + 1) * self.in_channels];
                self.bias[o] + row.iter().zip(v).map(|(&a, &b)| a * b).sum::<T>()
            })
            .collect()
    }

    pub(crate) fn params_mut(&mut self) -> [&mut [T]; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

pub fn leaky_relu<T: Scalar>(x: T, slope: T) -> T {
    if x >= T::zero() {
        x
    } else {
        slope * x
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

pub fn silu<T: Scalar>(x: T) -> T {
    x * sigmoid(x)
}

/// Per-sample, per-channel normalisation to zero mean and unit variance.
pub fn instance_norm<T: Scalar>(mut fm: FeatureMap<T>, eps: T) -> FeatureMap<T> {
    let n = T::from_usize_lossy(fm.height() * fm.width());
    for b in 0..fm.batch() {
        for c in 0..fm.channels() {
            let plane = fm.plane_mut(b, c);
            let mean = plane.iter().copied().sum::<T>() / n;
            let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let inv = T::one() / (var + eps).sqrt();
            for v in plane.iter_mut() {
                *v = (*v - mean) * inv;
            }
        }
    }
    fm
}

pub fn upsample_nearest<T: Scalar>(fm: &FeatureMap<T>, scale: usize) -> FeatureMap<T> {
    FeatureMap::from_fn(
        fm.batch(),
        fm.channels(),
        fm.height() * scale,
        fm.width() * scale,
        |b, c, y, x| fm.get(b, c, y / scale, x / scale),
    )
}

/// Adaptive average pooling with bins `[floor(i*H/P), ceil((i+1)*H/P))`.
pub fn adaptive_avg_pool<T: Scalar>(
    fm: &FeatureMap<T>,
    out_h: usize,
    out_w: usize,
) -> FeatureMap<T> {
    let (h, w) = (fm.height(), fm.width());
    let bin = |i: usize, n: usize, m: usize| (i * n / m, ((i + 1) * n).div_ceil(m));
    FeatureMap::from_fn(fm.batch(), fm.channels(), out_h, out_w, |b, c, oy, ox| {
        let (y0, y1) = bin(oy, h, out_h);
        let (x0, x1) = bin(ox, w, out_w);
        let mut acc = T::zero();
        for y in y0..y1 {
            for x in x0..x1 {
                acc += fm.get(b, c, y, x);
            }
        }
        acc / T::from_usize_lossy((y1 - y0) * (x1 - x0))
    })
}

/// Bilinear resize with half-pixel centres (no corner alignment).
pub fn bilinear_resize<T: Scalar>(fm: &FeatureMap<T>, out_h: usize, out_w: usize) -> FeatureMap<T> {
    let (h, w) = (fm.height(), fm.width());
    let coord = |o: usize, n: usize, m: usize| -> (usize, usize, T) {
        let src = ((o as f64 + 0.5) * n as f64 / m as f64 - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, T::lit(src - i0 as f64))
    };
    FeatureMap::from_fn(fm.batch(), fm.channels(), out_h, out_w, |b, c, oy, ox| {
        let (y0, y1, fy) = coord(oy, h, out_h);
        let (x0, x1, fx) = coord(ox, w, out_w);
        let top = fm.get(b, c, y0, x0) * (T::one() - fx) + fm.get(b, c, y0, x1) * fx;
        let bottom = fm.get(b, c, y1, x0) * (T::one() - fx) + fm.get(b, c, y1, x1) * fx;
        top * (T::one() - fy) + bottom * fy
    })
}

/// Row-wise numerically stable softmax in place.
pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}
