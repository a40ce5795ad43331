//! Forward-only building blocks of the hashing encoder.

mod attention;
mod darf;
mod decoder;
mod kan;
mod ops;
mod tensor;
mod toy;

pub use attention::{
    scaled_dot_attention, sinusoidal_pe, tokenize, tokenize_with_pe, ConvMsa, ConvMsaConfig,
    MsaLayer, TokenSequence, WindowAttention,
};
pub use darf::{Darf, DarfAttention};
pub use decoder::{Decoder, DECODER_SCALES, LEAKY_SLOPE};
pub use kan::{uniform_knots, KanLayer, SPLINE_DEGREE};
pub use ops::{
    adaptive_avg_pool, bilinear_resize, instance_norm, leaky_relu, sigmoid, silu, softmax_in_place,
    upsample_nearest, Conv2d,
};
pub use tensor::FeatureMap;
pub use toy::{fit_window, EncodeOutput, ToyConfig, ToyEncoder, STEM_STRIDE};
