//! Weighted structure-aware contrastive objective and its analytic gradient.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::pairing::semantic_similarity_matrix;
use crate::scalar::Scalar;

use super::pearson::PearsonTerms;

/// Hyper-parameters of the hashing objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig<T> {
    /// Offset inside the quantisation log; must exceed 1.
    pub lambda: T,
    /// Weight of the quantisation term.
    pub alpha: T,
    /// Probability clamp applied before the contrastive logs.
    pub epsilon: T,
}

impl<T: Scalar> Default for LossConfig<T> {
    fn default() -> Self {
        Self {
            lambda: T::lit(2.0),
            alpha: T::lit(0.5),
            epsilon: T::lit(1e-6),
        }
    }
}

impl<T: Scalar> LossConfig<T> {
    /// Negated comparisons so that NaN fails every check.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > T::one()) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be > 1, got {}",
                self.lambda
            )));
        }
        if !(self.alpha >= T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if !(self.epsilon > T::zero() && self.epsilon < T::lit(0.5)) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must lie in (0, 0.5), got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// A network embedding before sign quantisation; components lie in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HashEmbedding<T>(Vec<T>);

impl<T: Scalar> HashEmbedding<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidParameter("empty hash embedding".into()));
        }
        if let Some(&bad) = values.iter().find(|v| !v.is_finite() || v.abs() > T::one()) {
            return Err(Error::InvalidParameter(format!(
                "hash embedding component {bad} outside [-1, 1]"
            )));
        }
        Ok(Self(values))
    }

    /// Squashes arbitrary reals into range with `tanh`.
    pub fn from_logits(logits: &[T]) -> Self {
        Self(logits.iter().map(|v| v.tanh()).collect())
    }

    pub fn bits(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[T] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }
}

impl<T> AsRef<[T]> for HashEmbedding<T> {
    fn as_ref(&self) -> &[T] {
        &self.0
    }
}

/// Maps a similarity in `[-1, 1]` onto a probability in `[eps, 1 - eps]`.
#[inline]
fn similarity_to_probability<T: Scalar>(s: T, eps: T) -> (T, bool) {
    let p = (T::one() + s) / T::lit(2.0);
    if p < eps {
        (eps, true)
    } else if p > T::one() - eps {
        (T::one() - eps, true)
    } else {
        (p, false)
    }
}

/// Binary cross-entropy of one pair given its Pearson similarity.
pub fn contrastive_loss<T: Scalar>(similarity: T, same_class: bool, epsilon: T) -> T {
    let (p, _) = similarity_to_probability(similarity, epsilon);
    if same_class {
        -p.ln()
    } else {
        -(T::one() - p).ln()
    }
}

/// Weight applied to the repulsive term of a pair with consistency `h`.
///
/// The exponential emphasis is normalised so a fully consistent pair
/// (`h = 1`) carries weight 1 and the objective reduces to the plain
/// contrastive loss when every pair is consistent.
#[inline]
pub fn negative_pair_weight<T: Scalar>(h: T) -> T {
    (h - T::one()).exp()
}

/// Structure-aware pair loss and its derivative with respect to the
/// similarity.
fn structure_aware_pair<T: Scalar>(similarity: T, same_class: bool, h: T, eps: T) -> (T, T) {
    let (p, clamped) = similarity_to_probability(similarity, eps);
    let half = T::lit(0.5);
    if same_class {
        let loss = -h * p.ln();
        let d = if clamped { T::zero() } else { -h / p * half };
        (loss, d)
    } else {
        let w = negative_pair_weight(h);
        let q = T::one() - p;
        let loss = -w * q.ln();
        let d = if clamped { T::zero() } else { w / q * half };
        (loss, d)
    }
}

/// Quantisation penalty `log(lambda - mean|h|)`, zero for a fully binarised
/// embedding when `lambda = 2`.
pub fn quantisation_loss<T: Scalar>(h: &[T], cfg: &LossConfig<T>) -> T {
    let m = mean_abs(h);
    (cfg.lambda - m).ln()
}

fn mean_abs<T: Scalar>(h: &[T]) -> T {
    h.iter().map(|v| v.abs()).sum::<T>() / T::from_usize_lossy(h.len())
}

fn quantisation_grad<T: Scalar>(h: &[T], cfg: &LossConfig<T>) -> Vec<T> {
    let k = T::from_usize_lossy(h.len());
    let denom = k * (cfg.lambda - mean_abs(h));
    h.iter()
        .map(|&v| {
            let sgn = if v > T::zero() {
                T::one()
            } else if v < T::zero() {
                -T::one()
            } else {
                T::zero()
            };
            -sgn / denom
        })
        .collect()
}

/// Inverse-frequency class weights `N / (N_i * C)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights<T> {
    weights: Vec<T>,
}

impl<T: Scalar> ClassWeights<T> {
    pub fn uniform(num_classes: usize) -> Self {
        Self {
            weights: vec![T::one(); num_classes],
        }
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn num_classes(&self) -> usize {
        self.weights.len()
    }

    /// Outer product `w^T w` over classes.
    pub fn matrix(&self) -> Matrix<T> {
        let c = self.weights.len();
        Matrix::from_fn(c, c, |a, b| self.weights[a] * self.weights[b])
    }

    /// Batch expansion: entry `(a, b)` is `w[l_a] * w[l_b]`.
    pub fn expand(&self, labels: &[u32]) -> Result<Matrix<T>> {
        for &l in labels {
            if l as usize >= self.weights.len() {
                return Err(Error::InvalidParameter(format!(
                    "label {l} outside {} classes",
                    self.weights.len()
                )));
            }
        }
        let n = labels.len();
        Ok(Matrix::from_fn(n, n, |a, b| {
            self.weights[labels[a] as usize] * self.weights[labels[b] as usize]
        }))
    }
}

pub fn class_weights<T: Scalar>(labels: &[u32], num_classes: usize) -> Result<ClassWeights<T>> {
    let mut counts = vec![0usize; num_classes];
    for &l in labels {
        let slot = counts.get_mut(l as usize).ok_or_else(|| {
            Error::InvalidParameter(format!("label {l} outside {num_classes} classes"))
        })?;
        *slot += 1;
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyClass(empty as u32));
    }
    let n = T::from_usize_lossy(labels.len());
    let c = T::from_usize_lossy(num_classes);
    let weights = counts
        .iter()
        .map(|&ni| n / (T::from_usize_lossy(ni) * c))
        .collect();
    Ok(ClassWeights { weights })
}

/// One mini-batch of embeddings with its pairing signals.
#[derive(Debug, Clone)]
pub struct PairBatch<T> {
    embeddings: Matrix<T>,
    labels: Vec<u32>,
    semantic: Matrix<u8>,
    consistency: Matrix<T>,
}

impl<T: Scalar> PairBatch<T> {
    /// Builds a batch; the semantic matrix is derived from `labels`.
    pub fn new(embeddings: Matrix<T>, labels: Vec<u32>, consistency: Matrix<T>) -> Result<Self> {
        let semantic = semantic_similarity_matrix(&labels);
        Self::with_semantic(embeddings, labels, semantic, consistency)
    }

    pub fn with_semantic(
        embeddings: Matrix<T>,
        labels: Vec<u32>,
        semantic: Matrix<u8>,
        consistency: Matrix<T>,
    ) -> Result<Self> {
        let b = embeddings.rows();
        if labels.len() != b {
            return Err(Error::LengthMismatch {
                left: b,
                right: labels.len(),
            });
        }
        for (name, rows, cols) in [
            ("semantic", semantic.rows(), semantic.cols()),
            ("consistency", consistency.rows(), consistency.cols()),
        ] {
            if rows != b || cols != b {
                return Err(Error::Shape(format!(
                    "{name} matrix is {rows}x{cols}, batch has {b} samples"
                )));
            }
        }
        if !semantic.is_symmetric() || (0..b).any(|i| semantic[(i, i)] != 1) {
            return Err(Error::InvalidParameter(
                "semantic matrix must be symmetric with unit diagonal".into(),
            ));
        }
        if semantic.as_slice().iter().any(|&s| s > 1) {
            return Err(Error::InvalidParameter(
                "semantic matrix must be binary".into(),
            ));
        }
        if !consistency.is_symmetric() || (0..b).any(|i| consistency[(i, i)] != T::one()) {
            return Err(Error::InvalidParameter(
                "consistency matrix must be symmetric with unit diagonal".into(),
            ));
        }
        if consistency
            .as_slice()
            .iter()
            .any(|&h| !(h >= T::zero() && h <= T::one()))
        {
            return Err(Error::InvalidParameter(
                "consistency entries must lie in [0, 1]".into(),
            ));
        }
        Ok(Self {
            embeddings,
            labels,
            semantic,
            consistency,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn bits(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn embeddings(&self) -> &Matrix<T> {
        &self.embeddings
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn semantic(&self) -> &Matrix<u8> {
        &self.semantic
    }

    pub fn consistency(&self) -> &Matrix<T> {
        &self.consistency
    }

    pub(crate) fn set_embeddings(&mut self, embeddings: Matrix<T>) {
        debug_assert_eq!(embeddings.rows(), self.embeddings.rows());
        debug_assert_eq!(embeddings.cols(), self.embeddings.cols());
        self.embeddings = embeddings;
    }
}

/// Loss of the batch: class-weighted structure-aware contrastive term
/// averaged over the `B^2 - B` ordered off-diagonal pairs, plus `alpha`
/// times the batch-mean quantisation loss.
pub fn wsc_loss<T: Scalar>(
    batch: &PairBatch<T>,
    weights: &ClassWeights<T>,
    cfg: &LossConfig<T>,
) -> Result<T> {
    evaluate(batch, weights, cfg, T::zero(), false).map(|(l, _)| l)
}

/// Gradient of [`wsc_loss`] with respect to every embedding component.
pub fn wsc_gradient<T: Scalar>(
    batch: &PairBatch<T>,
    weights: &ClassWeights<T>,
    cfg: &LossConfig<T>,
) -> Result<Matrix<T>> {
    evaluate(batch, weights, cfg, T::zero(), true).map(|(_, g)| g.expect("gradient requested"))
}

/// Shared evaluation. `guard` is added under the Pearson norms (0 = strict).
pub(crate) fn evaluate<T: Scalar>(
    batch: &PairBatch<T>,
    weights: &ClassWeights<T>,
    cfg: &LossConfig<T>,
    guard: T,
    want_grad: bool,
) -> Result<(T, Option<Matrix<T>>)> {
    cfg.validate()?;
    let b = batch.len();
    if b < 2 {
        return Err(Error::InvalidParameter(
            "a pair batch needs at least two samples".into(),
        ));
    }
    let k = batch.bits();
    let wm = weights.expand(&batch.labels)?;
    let pair_count = T::from_usize_lossy(b * b - b);
    let emb = &batch.embeddings;

    let mut grad = want_grad.then(|| Matrix::filled(b, k, T::zero()));
    let mut contrastive = T::zero();

    // Pearson similarity and the pair loss are symmetric in (i, j); each
    // unordered pair stands for both ordered pairs.
    for i in 0..b {
        for j in (i + 1)..b {
            let terms = PearsonTerms::new(emb.row(i), emb.row(j), guard)?;
            let same = batch.semantic[(i, j)] == 1;
            let (loss, d_loss) = structure_aware_pair(
                terms.similarity,
                same,
                batch.consistency[(i, j)],
                cfg.epsilon,
            );
            let w = wm[(i, j)] + wm[(j, i)];
            contrastive += w * loss;
            if let Some(g) = grad.as_mut() {
                let scale = w * d_loss / pair_count;
                if scale != T::zero() {
                    for (dst, v) in g.row_mut(i).iter_mut().zip(terms.grad_x()) {
                        *dst += scale * v;
                    }
                    for (dst, v) in g.row_mut(j).iter_mut().zip(terms.grad_y()) {
                        *dst += scale * v;
                    }
                }
            }
        }
    }

    let bf = T::from_usize_lossy(b);
    let mut quant = T::zero();
    for i in 0..b {
        let h = emb.row(i);
        quant += quantisation_loss(h, cfg);
        if let Some(g) = grad.as_mut() {
            let scale = cfg.alpha / bf;
            for (dst, v) in g.row_mut(i).iter_mut().zip(quantisation_grad(h, cfg)) {
                *dst += scale * v;
            }
        }
    }

    let total = contrastive / pair_count + cfg.alpha * quant / bf;
    Ok((total, grad))
}
