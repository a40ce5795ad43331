//! Desk-scale encoder wiring the blocks together: strided conv stem,
//! ConvMSA on the shallow and deep taps, depth-aware fusion, a pixel-token
//! transformer over the deep map, and a KAN head squashed by `tanh`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embedding::HashEmbedding;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Scalar;

use super::attention::{tokenize_with_pe, ConvMsa, ConvMsaConfig, MsaLayer};
use super::darf::Darf;
use super::decoder::{Decoder, DECODER_SCALES, LEAKY_SLOPE};
use super::kan::KanLayer;
use super::ops::{leaky_relu, Conv2d};
use super::tensor::FeatureMap;

/// Total downsampling of the stem; image sides must be multiples of it.
pub const STEM_STRIDE: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub in_channels: usize,
    pub bits: usize,
    pub stem_channels: [usize; 4],
    /// Preferred attention window side; shrunk to the largest divisor of
    /// the map side.
    pub window: usize,
    pub heads: usize,
    pub msa_layers: usize,
    pub darf_pool: usize,
    pub darf_dim: usize,
    pub kan_grid: usize,
    pub decoder_channels: [usize; 3],
    pub out_channels: usize,
    pub init_range: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            bits: 64,
            stem_channels: [16, 32, 64, 128],
            window: 7,
            heads: 4,
            msa_layers: 2,
            darf_pool: 7,
            darf_dim: 32,
            kan_grid: 8,
            decoder_channels: [32, 16, 8],
            out_channels: 1,
            init_range: 0.05,
        }
    }
}

impl ToyConfig {
    pub fn with_bits(bits: usize) -> Self {
        Self {
            bits,
            ..Self::default()
        }
    }

    /// Channel-matched config for one- or three-channel inputs.
    pub fn for_channels(mut self, channels: usize) -> Self {
        self.in_channels = channels;
        self.out_channels = channels;
        self
    }

    pub fn level_dims(&self) -> Vec<usize> {
        self.stem_channels.to_vec()
    }
}

/// Largest divisor of `side` not exceeding `preferred`.
pub fn fit_window(side: usize, preferred: usize) -> usize {
    (1..=preferred.min(side).max(1))
        .rev()
        .find(|w| side.is_multiple_of(*w))
        .unwrap_or(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodeOutput<T> {
    /// Global-average-pooled activations of each stem block.
    pub levels: Vec<Vec<T>>,
    pub embedding: HashEmbedding<T>,
    /// Last stem block, the decoder input.
    pub deep: FeatureMap<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoder<T> {
    config: ToyConfig,
    stem: Vec<Conv2d<T>>,
    shallow_msa: ConvMsa<T>,
    deep_msa: ConvMsa<T>,
    darf: Darf<T>,
    cls: Vec<T>,
    pit: Vec<MsaLayer<T>>,
    kan: KanLayer<T>,
    decoder: Decoder<T>,
}

impl<T: Scalar> ToyEncoder<T> {
    /// Encoder with every parameter zero.
    pub fn zeros(config: ToyConfig) -> Result<Self> {
        let c = config.stem_channels;
        if c.iter().any(|&ch| ch % config.heads != 0) {
            return Err(Error::InvalidParameter(format!(
                "stem channels {c:?} must be divisible by {} heads",
                config.heads
            )));
        }
        let mut stem = vec![Conv2d::zeros(config.in_channels, c[0], 4, 4, 0)];
        for i in 1..4 {
            stem.push(Conv2d::zeros(c[i - 1], c[i], 3, 2, 1));
        }
        let msa = |ch: usize| {
            ConvMsa::zeros(ConvMsaConfig {
                window: (config.window, config.window),
                heads: config.heads,
                head_dim: ch / config.heads,
            })
        };
        Ok(Self {
            shallow_msa: msa(c[1]),
            deep_msa: msa(c[3]),
            darf: Darf::zeros(c[1], c[3], config.darf_dim, config.darf_pool),
            cls: vec![T::zero(); c[3]],
            pit: (0..config.msa_layers)
                .map(|_| MsaLayer::zeros(config.heads, c[3] / config.heads))
                .collect(),
            kan: KanLayer::zeros(2 * c[3], config.bits, config.kan_grid)?,
            decoder: Decoder::zeros(
                c[3],
                &config.decoder_channels,
                &DECODER_SCALES,
                config.out_channels,
            )?,
            stem,
            config,
        })
    }

    /// Parameters drawn from `uniform(-init_range, init_range)` with a
    /// seeded ChaCha stream.
    pub fn seeded(config: ToyConfig, seed: u64) -> Result<Self> {
        let range = config.init_range;
        let mut enc = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in enc.params_mut() {
            for v in p.iter_mut() {
                *v = T::lit(rng.random_range(-range..=range));
            }
        }
        Ok(enc)
    }

    pub fn config(&self) -> &ToyConfig {
        &self.config
    }

    pub fn decoder(&self) -> &Decoder<T> {
        &self.decoder
    }

    pub fn kan(&self) -> &KanLayer<T> {
        &self.kan
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut p = Vec::new();
        for conv in &mut self.stem {
            p.extend(conv.params_mut());
        }
        p.extend(self.shallow_msa.params_mut());
        p.extend(self.deep_msa.params_mut());
        p.extend(self.darf.params_mut());
        p.push(&mut self.cls[..]);
        for layer in &mut self.pit {
            p.extend(layer.params_mut());
        }
        p.extend(self.kan.params_mut());
        p.extend(self.decoder.params_mut());
        p
    }

    pub fn parameter_count(&self) -> usize {
        self.clone().params_mut().iter().map(|p| p.len()).sum()
    }

    /// All parameters in a fixed order.
    pub fn to_flat(&self) -> Vec<T> {
        self.clone()
            .params_mut()
            .into_iter()
            .flat_map(|p| p.to_vec())
            .collect()
    }

    pub fn load_flat(&mut self, flat: &[T]) -> Result<()> {
        let expected = self.parameter_count();
        if flat.len() != expected {
            return Err(Error::Shape(format!(
                "weight vector has {} values, encoder needs {expected}",
                flat.len()
            )));
        }
        let mut offset = 0;
        for p in self.params_mut() {
            p.copy_from_slice(&flat[offset..offset + p.len()]);
            offset += p.len();
        }
        Ok(())
    }

    fn check_input(&self, image: &Image<T>) -> Result<()> {
        if image.channels() != self.config.in_channels {
            return Err(Error::Shape(format!(
                "encoder expects {} channels, got {}",
                self.config.in_channels,
                image.channels()
            )));
        }
        if !image.height().is_multiple_of(STEM_STRIDE) || !image.width().is_multiple_of(STEM_STRIDE)
        {
            return Err(Error::Shape(format!(
                "image {}x{} is not a multiple of {STEM_STRIDE}",
                image.height(),
                image.width()
            )));
        }
        Ok(())
    }

    fn windowed(msa: &ConvMsa<T>, fm: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        let mut msa = msa.clone();
        let w = msa.config.window;
        msa.config.window = (fit_window(fm.height(), w.0), fit_window(fm.width(), w.1));
        msa.forward(fm)
    }

    pub fn encode(&self, image: &Image<T>) -> Result<EncodeOutput<T>> {
        self.check_input(image)?;
        let slope = T::lit(LEAKY_SLOPE);
        let mut taps = Vec::with_capacity(4);
        let mut x = FeatureMap::from_image(image);
        for conv in &self.stem {
            x = conv.forward(&x)?.map(|v| leaky_relu(v, slope));
            taps.push(x.clone());
        }
        let levels = taps.iter().map(|t| t.global_average(0)).collect();

        let shallow = Self::windowed(&self.shallow_msa, &taps[1])?;
        let deep_refined = Self::windowed(&self.deep_msa, &taps[3])?;
        let fused = self.darf.forward(&shallow, &deep_refined)?;

        let mut tokens = tokenize_with_pe(&taps[3], &self.cls)?.tokens;
        for layer in &self.pit {
            tokens = layer.forward(&tokens)?;
        }
        let mut features = fused;
        features.extend_from_slice(tokens.row(0));

        let logits = self.kan.forward(&features)?;
        Ok(EncodeOutput {
            levels,
            embedding: HashEmbedding::from_logits(&logits),
            deep: taps.pop().expect("four stem taps"),
        })
    }

    pub fn reconstruct(&self, deep: &FeatureMap<T>, target: (usize, usize)) -> Result<Image<T>> {
        self.decoder.reconstruct(deep, target)
    }
}
