//! Out-of-distribution gating from reconstruction residuals and hash-space
//! distance to class centres.

mod msssim;

use std::fmt;
use std::str::FromStr;

use crate::code::{hamming_distance, BinaryCode};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Scalar;

pub use msssim::{gaussian_kernel, ms_ssim, ms_ssim_plane, MsSsimParams, DEFAULT_SCALE_WEIGHTS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ResidualMetric {
    /// Mean absolute pixel difference (grayscale data).
    L1,
    /// `1 - MS-SSIM` (colour data).
    OneMinusMsSsim,
}

impl ResidualMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            ResidualMetric::L1 => "l1",
            ResidualMetric::OneMinusMsSsim => "one-minus-ms-ssim",
        }
    }
}

impl fmt::Display for ResidualMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ResidualMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(ResidualMetric::L1),
            "one-minus-ms-ssim" => Ok(ResidualMetric::OneMinusMsSsim),
            other => Err(Error::InvalidParameter(format!(
                "unknown residual metric {other:?} (expected l1 or one-minus-ms-ssim)"
            ))),
        }
    }
}

pub fn reconstruction_residual<T: Scalar>(
    input: &Image<T>,
    reconstruction: &Image<T>,
    metric: ResidualMetric,
    params: &MsSsimParams,
) -> Result<T> {
    if !input.same_shape(reconstruction) {
        return Err(Error::Shape(
            "input and reconstruction shapes differ".into(),
        ));
    }
    match metric {
        ResidualMetric::L1 => {
            let n = T::from_usize_lossy(input.data().len());
            Ok(input
                .data()
                .iter()
                .zip(reconstruction.data())
                .map(|(&a, &b)| (a - b).abs())
                .sum::<T>()
                / n)
        }
        ResidualMetric::OneMinusMsSsim => {
            Ok((T::one() - ms_ssim(input, reconstruction, params)?).max(T::zero()))
        }
    }
}

/// Residual statistics of an in-distribution population and the derived
/// threshold `tau = mean + 3 * std` (population std).
#[derive(Debug, Clone, PartialEq)]
pub struct OodCalibration<T> {
    pub metric: ResidualMetric,
    pub mean: T,
    pub std_dev: T,
    pub tau: T,
    pub count: usize,
    /// Which population was calibrated on, e.g. `gallery`.
    pub source: String,
}

pub const SIGMA_MULTIPLIER: f64 = 3.0;

pub fn calibrate_threshold<T: Scalar>(
    residuals: &[T],
    metric: ResidualMetric,
) -> Result<OodCalibration<T>> {
    if residuals.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: residuals.len(),
        });
    }
    if let Some(bad) = residuals.iter().find(|r| !r.is_finite() || **r < T::zero()) {
        return Err(Error::InvalidParameter(format!(
            "residuals must be finite and non-negative, got {bad}"
        )));
    }
    let n = T::from_usize_lossy(residuals.len());
    let mean = residuals.iter().copied().sum::<T>() / n;
    let var = residuals
        .iter()
        .map(|&r| (r - mean) * (r - mean))
        .sum::<T>()
        / n;
    let std_dev = var.sqrt();
    Ok(OodCalibration {
        metric,
        mean,
        std_dev,
        tau: mean + T::lit(SIGMA_MULTIPLIER) * std_dev,
        count: residuals.len(),
        source: "unspecified".into(),
    })
}

impl<T: Scalar> OodCalibration<T> {
    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = source.into();
        self
    }

    /// Strictly above the threshold.
    pub fn is_ood(&self, residual: T) -> bool {
        residual > self.tau
    }

    /// `key=value` lines.
    pub fn to_text(&self) -> String {
        format!(
            "metric={}\nmu={}\ndelta={}\ntau={}\ncount={}\nsource={}\n",
            self.metric,
            self.mean.to_f64_lossy(),
            self.std_dev.to_f64_lossy(),
            self.tau.to_f64_lossy(),
            self.count,
            self.source
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut metric = None;
        let (mut mean, mut std_dev, mut tau, mut count) = (None, None, None, None);
        let mut source = None;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("calibration line without '=': {line:?}")))?;
            let num = |v: &str| -> Result<T> {
                v.parse::<f64>()
                    .map(T::lit)
                    .map_err(|_| Error::Format(format!("bad number for {key}: {v:?}")))
            };
            match key {
                "metric" => metric = Some(value.parse()?),
                "mu" => mean = Some(num(value)?),
                "delta" => std_dev = Some(num(value)?),
                "tau" => tau = Some(num(value)?),
                "count" => {
                    count = Some(
                        value
                            .parse()
                            .map_err(|_| Error::Format(format!("bad count: {value:?}")))?,
                    )
                }
                "source" => source = Some(value.to_owned()),
                other => return Err(Error::Format(format!("unknown calibration key {other:?}"))),
            }
        }
        let missing = |k: &str| Error::Format(format!("calibration is missing {k}"));
        Ok(Self {
            metric: metric.ok_or_else(|| missing("metric"))?,
            mean: mean.ok_or_else(|| missing("mu"))?,
            std_dev: std_dev.ok_or_else(|| missing("delta"))?,
            tau: tau.ok_or_else(|| missing("tau"))?,
            count: count.ok_or_else(|| missing("count"))?,
            source: source.unwrap_or_else(|| "unspecified".into()),
        })
    }
}

pub fn is_ood<T: Scalar>(residual: T, calibration: &OodCalibration<T>) -> bool {
    calibration.is_ood(residual)
}

/// Hamming-ball radius around a class centre: `floor(K / 4) + 1`.
pub fn ball_radius(bits: usize) -> u32 {
    (bits / 4 + 1) as u32
}

/// True when `code` lies outside the ball of every centre.
pub fn hash_space_ood(code: &BinaryCode, centres: &[BinaryCode]) -> Result<bool> {
    if centres.is_empty() {
        return Err(Error::InvalidParameter("no class centres".into()));
    }
    let r = ball_radius(code.bits());
    let mut nearest = u32::MAX;
    for c in centres {
        nearest = nearest.min(hamming_distance(code, c)?);
    }
    Ok(nearest > r)
}
