//! Pipeline configuration: a TOML file whose keys map one-to-one onto the
//! global command-line flags. Flags win over file values.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use cbir_core::ood::ball_radius;
use cbir_core::{LossConfig, ResidualMetric};
use clap::Args;
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(untagged)]
pub enum RadiusPolicy {
    Fixed(u32),
    Named(AutoRadius),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoRadius {
    Auto,
}

impl RadiusPolicy {
    pub const AUTO: Self = RadiusPolicy::Named(AutoRadius::Auto);

    pub fn resolve(self, bits: usize) -> u32 {
        match self {
            RadiusPolicy::Fixed(r) => r,
            RadiusPolicy::Named(AutoRadius::Auto) => ball_radius(bits),
        }
    }
}

impl FromStr for RadiusPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Self::AUTO);
        }
        s.parse()
            .map(RadiusPolicy::Fixed)
            .map_err(|_| format!("radius must be `auto` or a non-negative integer, got {s:?}"))
    }
}

impl fmt::Display for RadiusPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RadiusPolicy::Fixed(r) => write!(f, "{r}"),
            RadiusPolicy::Named(AutoRadius::Auto) => f.write_str("auto"),
        }
    }
}

/// File representation; every field optional so partial files are allowed.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct ConfigFile {
    bits: Option<usize>,
    fingerprint_size: Option<usize>,
    neutral_threshold: Option<f64>,
    alpha: Option<f64>,
    lambda: Option<f64>,
    epsilon: Option<f64>,
    ood_metric: Option<String>,
    radius: Option<RadiusPolicy>,
    gallery: Option<PathBuf>,
    index: Option<PathBuf>,
    calibration: Option<PathBuf>,
    seed: Option<u64>,
    image_size: Option<usize>,
}

/// Global flags, one per configuration key.
#[derive(Debug, Default, Clone, Args)]
pub struct ConfigArgs {
    /// TOML configuration file (falls back to $ACIR_CONFIG)
    #[arg(long, global = true, env = "ACIR_CONFIG")]
    pub config: Option<PathBuf>,
    /// Hash code length K
    #[arg(long, global = true)]
    pub bits: Option<usize>,
    /// Side of the structural fingerprint thumbnail
    #[arg(long, global = true)]
    pub fingerprint_size: Option<usize>,
    /// Consistency below which a same-class pair is reported as neutral
    #[arg(long, global = true)]
    pub neutral_threshold: Option<f64>,
    /// Weight of the quantisation term
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Quantisation offset
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// Probability clamp of the contrastive term
    #[arg(long, global = true)]
    pub epsilon: Option<f64>,
    /// Reconstruction residual: `l1` or `one-minus-ms-ssim`
    #[arg(long, global = true)]
    pub ood_metric: Option<ResidualMetric>,
    /// Hamming ball radius: `auto` (K/4 + 1) or an integer
    #[arg(long, global = true)]
    pub radius: Option<RadiusPolicy>,
    /// Gallery directory written by `ingest`
    #[arg(long, global = true)]
    pub gallery: Option<PathBuf>,
    /// Index file
    #[arg(long, global = true)]
    pub index: Option<PathBuf>,
    /// Calibration file
    #[arg(long, global = true)]
    pub calibration: Option<PathBuf>,
    /// Seed for encoder weights and synthetic data
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Images are resampled to this square side before encoding
    #[arg(long, global = true)]
    pub image_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub bits: usize,
    pub fingerprint_size: usize,
    pub neutral_threshold: f64,
    pub loss: LossConfig,
    pub ood_metric: ResidualMetric,
    pub radius: RadiusPolicy,
    pub gallery: PathBuf,
    pub index: PathBuf,
    pub calibration: PathBuf,
    pub seed: u64,
    pub image_size: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            bits: 64,
            fingerprint_size: cbir_core::pairing::DEFAULT_FINGERPRINT_SIZE,
            neutral_threshold: cbir_core::pairing::DEFAULT_NEUTRAL_THRESHOLD,
            loss: LossConfig::default(),
            ood_metric: ResidualMetric::L1,
            radius: RadiusPolicy::AUTO,
            gallery: "gallery".into(),
            index: "index.acir".into(),
            calibration: "calibration.txt".into(),
            seed: 0,
            image_size: 64,
        }
    }
}

impl PipelineConfig {
    pub fn load(args: &ConfigArgs) -> Result<Self> {
        let file = match &args.config {
            Some(path) => read_file(path)?,
            None => ConfigFile::default(),
        };
        let mut cfg = Self::default();
        let metric = file
            .ood_metric
            .as_deref()
            .map(str::parse::<ResidualMetric>)
            .transpose()
            .context("ood-metric in config file")?;
        macro_rules! merge {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = args.$field.clone().or(file.$field.clone()) { $target = v; })*
            };
        }
        merge!(
            bits => cfg.bits,
            fingerprint_size => cfg.fingerprint_size,
            neutral_threshold => cfg.neutral_threshold,
            alpha => cfg.loss.alpha,
            lambda => cfg.loss.lambda,
            epsilon => cfg.loss.epsilon,
            radius => cfg.radius,
            gallery => cfg.gallery,
            index => cfg.index,
            calibration => cfg.calibration,
            seed => cfg.seed,
            image_size => cfg.image_size,
        );
        if let Some(m) = args.ood_metric.or(metric) {
            cfg.ood_metric = m;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bits == 0 {
            bail!("bits must be positive");
        }
        if self.fingerprint_size == 0 {
            bail!("fingerprint-size must be positive");
        }
        if !(0.0..=1.0).contains(&self.neutral_threshold) {
            bail!("neutral-threshold must lie in [0, 1]");
        }
        if self.image_size == 0
            || !self
                .image_size
                .is_multiple_of(cbir_core::encoder::STEM_STRIDE)
        {
            bail!(
                "image-size must be a positive multiple of {}",
                cbir_core::encoder::STEM_STRIDE
            );
        }
        if let RadiusPolicy::Fixed(r) = self.radius {
            if r as usize > self.bits {
                bail!("radius {r} exceeds the code length {}", self.bits);
            }
        }
        self.loss.validate()?;
        Ok(())
    }
}

fn read_file(path: &Path) -> Result<ConfigFile> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}
