//! Structure-aware pairing signals: fingerprints, structural consistency and
//! the positive / neutral / negative pair taxonomy.

use crate::error::{Error, Result};
use crate::image::{area_resample, Image};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

pub const DEFAULT_FINGERPRINT_SIZE: usize = 32;
pub const DEFAULT_NEUTRAL_THRESHOLD: f64 = 0.5;

/// Low-resolution grayscale thumbnail with pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Fingerprint<T> {
    side: usize,
    pixels: Vec<T>,
}

impl<T: Scalar> Fingerprint<T> {
    pub fn new(side: usize, pixels: Vec<T>) -> Result<Self> {
        if side == 0 || pixels.len() != side * side {
            return Err(Error::Shape(format!(
                "{} pixels do not form a {side}x{side} fingerprint",
                pixels.len()
            )));
        }
        if let Some(bad) = pixels
            .iter()
            .find(|p| !(**p >= T::zero() && **p <= T::one()))
        {
            return Err(Error::BadRange(bad.to_f64_lossy()));
        }
        Ok(Self { side, pixels })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn pixels(&self) -> &[T] {
        &self.pixels
    }

    pub fn to_image(&self) -> Image<T> {
        Image::new(self.side, self.side, 1, self.pixels.clone()).expect("square plane")
    }
}

/// Grayscale conversion followed by area-average downsampling to `side x side`.
pub fn make_fingerprint<T: Scalar>(image: &Image<T>, side: usize) -> Result<Fingerprint<T>> {
    if side == 0 || image.height() < side || image.width() < side {
        return Err(Error::Shape(format!(
            "cannot fingerprint a {}x{} image at side {side}",
            image.height(),
            image.width()
        )));
    }
    image.check_unit_range()?;
    let luma = image.to_luma()?;
    let mut pixels = area_resample(&luma, image.height(), image.width(), side, side)?;
    // rounding can push averages a hair outside the unit interval
    for p in &mut pixels {
        *p = p.max(T::zero()).min(T::one());
    }
    Fingerprint::new(side, pixels)
}

/// `(1 + ZNCC(a, b)) / 2`. Constant fingerprints fall back to an intensity
/// test: 1 when the means agree to within 1e-6, otherwise 0.5.
pub fn structural_consistency<T: Scalar>(a: &Fingerprint<T>, b: &Fingerprint<T>) -> Result<T> {
    if a.side != b.side {
        return Err(Error::LengthMismatch {
            left: a.side,
            right: b.side,
        });
    }
    let n = T::from_usize_lossy(a.pixels.len());
    let mean_a = a.pixels.iter().copied().sum::<T>() / n;
    let mean_b = b.pixels.iter().copied().sum::<T>() / n;
    let (mut saa, mut sbb, mut sab) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in a.pixels.iter().zip(&b.pixels) {
        let (u, v) = (x - mean_a, y - mean_b);
        saa += u * u;
        sbb += v * v;
        sab += u * v;
    }
    if saa <= T::zero() || sbb <= T::zero() {
        return Ok(if (mean_a - mean_b).abs() < T::lit(1e-6) {
            T::one()
        } else {
            T::lit(0.5)
        });
    }
    let zncc = (sab / (saa.sqrt() * sbb.sqrt()))
        .max(-T::one())
        .min(T::one());
    Ok((T::one() + zncc) / T::lit(2.0))
}

/// Symmetric matrix `H` of pairwise structural consistency with unit diagonal.
pub fn consistency_matrix<T: Scalar>(fingerprints: &[Fingerprint<T>]) -> Result<Matrix<T>> {
    let n = fingerprints.len();
    let mut h = Matrix::filled(n, n, T::one());
    for i in 0..n {
        for j in (i + 1)..n {
            let v = structural_consistency(&fingerprints[i], &fingerprints[j])?;
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    Ok(h)
}

/// `s_ij = 1` iff the labels agree.
pub fn semantic_similarity_matrix(labels: &[u32]) -> Matrix<u8> {
    let n = labels.len();
    Matrix::from_fn(n, n, |i, j| u8::from(labels[i] == labels[j]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PairClass {
    Positive,
    Neutral,
    Negative,
}

impl PairClass {
    pub fn as_str(self) -> &'static str {
        match self {
            PairClass::Positive => "positive",
            PairClass::Neutral => "neutral",
            PairClass::Negative => "negative",
        }
    }
}

pub fn classify_pairs<T: Scalar>(
    semantic: &Matrix<u8>,
    consistency: &Matrix<T>,
    threshold: T,
) -> Result<Matrix<PairClass>> {
    if semantic.rows() != consistency.rows() || semantic.cols() != consistency.cols() {
        return Err(Error::Shape(format!(
            "semantic {}x{} vs consistency {}x{}",
            semantic.rows(),
            semantic.cols(),
            consistency.rows(),
            consistency.cols()
        )));
    }
    Ok(Matrix::from_fn(semantic.rows(), semantic.cols(), |i, j| {
        if i == j {
            PairClass::Positive
        } else if semantic[(i, j)] == 0 {
            PairClass::Negative
        } else if consistency[(i, j)] >= threshold {
            PairClass::Positive
        } else {
            PairClass::Neutral
        }
    }))
}
