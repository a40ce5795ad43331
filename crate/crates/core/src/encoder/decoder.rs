//! Light reconstruction decoder: conv 3x3, instance norm, LeakyReLU and
//! nearest-neighbour upsampling per block, then a 1x1 head with sigmoid.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Scalar;

use super::ops::{instance_norm, leaky_relu, sigmoid, upsample_nearest, Conv2d};
use super::tensor::FeatureMap;

pub const DECODER_SCALES: [usize; 3] = [2, 4, 4];
pub const LEAKY_SLOPE: f64 = 0.01;
const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct Decoder<T> {
    pub blocks: Vec<(Conv2d<T>, usize)>,
    pub head: Conv2d<T>,
}

impl<T: Scalar> Decoder<T> {
    /// `channels[0]` is the deep input width; each following entry is a
    /// block output width.
    pub fn zeros(
        in_channels: usize,
        block_channels: &[usize],
        scales: &[usize],
        out_channels: usize,
    ) -> Result<Self> {
        if block_channels.len() != scales.len() || block_channels.is_empty() {
            return Err(Error::InvalidParameter(
                "decoder needs one channel count per upsampling block".into(),
            ));
        }
        let mut prev = in_channels;
        let mut blocks = Vec::new();
        for (&c, &s) in block_channels.iter().zip(scales) {
            blocks.push((Conv2d::zeros(prev, c, 3, 1, 1), s));
            prev = c;
        }
        Ok(Self {
            blocks,
            head: Conv2d::pointwise(prev, out_channels),
        })
    }

    pub fn upscale(&self) -> usize {
        self.blocks.iter().map(|(_, s)| s).product()
    }

    pub fn forward(&self, deep: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        let slope = T::lit(LEAKY_SLOPE);
        let mut x = deep.clone();
        for (conv, scale) in &self.blocks {
            let y = conv.forward(&x)?;
            let y = instance_norm(y, T::lit(NORM_EPS)).map(|v| leaky_relu(v, slope));
            x = upsample_nearest(&y, *scale);
        }
        Ok(self.head.forward(&x)?.map(sigmoid))
    }

    /// Reconstructs an image of side `deep side * upscale`; fails if that
    /// does not match `target`.
    pub fn reconstruct(&self, deep: &FeatureMap<T>, target: (usize, usize)) -> Result<Image<T>> {
        let f = self.upscale();
        if deep.height() * f != target.0 || deep.width() * f != target.1 {
            return Err(Error::Shape(format!(
                "deep map {}x{} upsampled by {f} does not reach {}x{}",
                deep.height(),
                deep.width(),
                target.0,
                target.1
            )));
        }
        Ok(self.forward(deep)?.to_image(0))
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut p = Vec::new();
        for (conv, _) in &mut self.blocks {
            p.extend(conv.params_mut());
        }
        p.extend(self.head.params_mut());
        p
    }
}
