//! Planar image buffers and area resampling.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Image with `channels` interleaved samples per pixel, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Shape("image dimensions must be positive".into()));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{} samples do not form a {height}x{width}x{channels} image",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// One channel as a row-major plane.
    pub fn plane(&self, c: usize) -> Vec<T> {
        self.data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .copied()
            .collect()
    }

    pub fn check_unit_range(&self) -> Result<()> {
        match self
            .data
            .iter()
            .find(|v| !(**v >= T::zero() && **v <= T::one()))
        {
            Some(bad) => Err(Error::BadRange(bad.to_f64_lossy())),
            None => Ok(()),
        }
    }

    /// Luma plane: identity for one channel, `0.299 R + 0.587 G + 0.114 B`
    /// for three.
    pub fn to_luma(&self) -> Result<Vec<T>> {
        match self.channels {
            1 => Ok(self.data.clone()),
            3 => Ok(self
                .data
                .chunks_exact(3)
                .map(|p| T::lit(0.299) * p[0] + T::lit(0.587) * p[1] + T::lit(0.114) * p[2])
                .collect()),
            c => Err(Error::Shape(format!("expected 1 or 3 channels, got {c}"))),
        }
    }

    /// Area-average resize of every channel.
    pub fn resize_area(&self, out_h: usize, out_w: usize) -> Result<Self> {
        let planes: Vec<Vec<T>> = (0..self.channels)
            .map(|c| area_resample(&self.plane(c), self.height, self.width, out_h, out_w))
            .collect::<Result<_>>()?;
        Ok(Self::from_fn(out_h, out_w, self.channels, |y, x, c| {
            planes[c][y * out_w + x]
        }))
    }
}

/// Source indices and weights contributing to each output cell when an
/// axis of length `n` is averaged down (or up) to `m` cells.
fn area_weights<T: Scalar>(n: usize, m: usize) -> Vec<Vec<(usize, T)>> {
    (0..m)
        .map(|o| {
            // interval [o*n/m, (o+1)*n/m) in source units, scaled by m to stay integral
            let lo = o * n;
            let hi = (o + 1) * n;
            let mut taps = Vec::new();
            let first = lo / m;
            let last = (hi - 1) / m;
            for s in first..=last {
                let s_lo = (s * m).max(lo);
                let s_hi = ((s + 1) * m).min(hi);
                if s_hi > s_lo {
                    taps.push((s, T::from_usize_lossy(s_hi - s_lo) / T::from_usize_lossy(n)));
                }
            }
            taps
        })
        .collect()
}

/// Exact area-weighted resampling of a `h x w` plane to `out_h x out_w`.
pub fn area_resample<T: Scalar>(
    plane: &[T],
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
) -> Result<Vec<T>> {
    if plane.len() != h * w {
        return Err(Error::Shape(format!(
            "plane has {} samples, expected {h}x{w}",
            plane.len()
        )));
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::Shape("output size must be positive".into()));
    }
    let rows = area_weights::<T>(h, out_h);
    let cols = area_weights::<T>(w, out_w);
    let mut tmp = vec![T::zero(); out_h * w];
    for (o, taps) in rows.iter().enumerate() {
        for &(s, wt) in taps {
            for x in 0..w {
                tmp[o * w + x] += wt * plane[s * w + x];
            }
        }
    }
    let mut out = vec![T::zero(); out_h * out_w];
    for y in 0..out_h {
        for (o, taps) in cols.iter().enumerate() {
            out[y * out_w + o] = taps.iter().map(|&(s, wt)| wt * tmp[y * w + s]).sum();
        }
    }
    Ok(out)
}
