//! Content-based image retrieval with structure-aware contrastive hashing.
//!
//! The crate covers the numerical core (Pearson-based contrastive objective
//! and its gradient), structural pairing signals, forward-only encoder
//! blocks, an exact Hamming-ball index with content-guided ranking,
//! reconstruction-residual OOD gating and retrieval metrics.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common double-precision instantiations.

pub mod code;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod image;
pub mod index;
pub mod io;
pub mod matrix;
pub mod ood;
pub mod pairing;
pub mod scalar;

pub use code::{hamming_distance, sign_quantise, BinaryCode};
pub use error::{Error, Result};
pub use index::{GalleryRecord, HashIndex, QueryFeatures, RetrievalResult};
pub use matrix::Matrix;
pub use ood::ResidualMetric;
pub use scalar::Scalar;

pub type HashEmbedding = embedding::HashEmbedding<f64>;
pub type LossConfig = embedding::LossConfig<f64>;
pub type ClassWeights = embedding::ClassWeights<f64>;
pub type PairBatch = embedding::PairBatch<f64>;
pub type Fingerprint = pairing::Fingerprint<f64>;
pub type Image = image::Image<f64>;
pub type FeatureMap = encoder::FeatureMap<f64>;
pub type ToyEncoder = encoder::ToyEncoder<f64>;
pub type OodCalibration = ood::OodCalibration<f64>;
pub type EvalReport = eval::EvalReport<f64>;

pub type HashEmbeddingF32 = embedding::HashEmbedding<f32>;
pub type ImageF32 = image::Image<f32>;
pub type ToyEncoderF32 = encoder::ToyEncoder<f32>;
