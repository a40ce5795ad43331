//! Gradient descent on free embeddings, used to show that the objective on
//! its own separates classes into distinct hash codes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

use super::loss::{class_weights, evaluate, LossConfig, PairBatch};

/// Denominator guard for Pearson similarity during optimisation.
pub const PEARSON_GUARD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizeOptions {
    pub bits: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Initial logits are drawn from `uniform(-init_scale, init_scale)`.
    pub init_scale: f64,
    /// Maximum step halvings per iteration before the step is skipped.
    pub max_backtracks: usize,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            bits: 16,
            steps: 500,
            learning_rate: 1.0,
            seed: 0,
            init_scale: 0.5,
            max_backtracks: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeOutcome<T> {
    /// `B x K` matrix of `tanh`-squashed embeddings.
    pub embeddings: Matrix<T>,
    /// Free parameters before squashing.
    pub logits: Matrix<T>,
    /// Loss before the first step followed by the loss after every step.
    pub loss_trace: Vec<T>,
}

/// Minimises the weighted structure-aware loss over free logits `theta`,
/// with `h = tanh(theta)`. Each iteration starts from the base learning
/// rate and halves it until the loss does not increase, so the trace is
/// non-increasing.
pub fn optimize_embeddings<T: Scalar>(
    labels: &[u32],
    consistency: &Matrix<T>,
    cfg: &LossConfig<T>,
    opts: &OptimizeOptions,
) -> Result<OptimizeOutcome<T>> {
    cfg.validate()?;
    if opts.bits < 2 {
        return Err(Error::InvalidParameter("need at least two bits".into()));
    }
    let num_classes = labels.iter().max().map_or(0, |&m| m as usize + 1);
    let weights = class_weights::<T>(labels, num_classes)?;
    for c in 0..num_classes {
        if labels.iter().filter(|&&l| l as usize == c).count() < 2 {
            return Err(Error::InvalidParameter(format!(
                "class {c} needs at least two samples"
            )));
        }
    }

    let b = labels.len();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut logits = Matrix::from_fn(b, opts.bits, |_, _| {
        T::lit(rng.random_range(-opts.init_scale..opts.init_scale))
    });
    let squash = |m: &Matrix<T>| m.map(|v| v.tanh());

    let guard = T::lit(PEARSON_GUARD);
    let mut batch = PairBatch::new(squash(&logits), labels.to_vec(), consistency.clone())?;
    let (mut loss, _) = evaluate(&batch, &weights, cfg, guard, false)?;
    if !loss.is_finite() {
        return Err(Error::Diverged(0));
    }
    let mut trace = Vec::with_capacity(opts.steps + 1);
    trace.push(loss);

    for step in 1..=opts.steps {
        let (_, grad) = evaluate(&batch, &weights, cfg, guard, true)?;
        let grad = grad.expect("gradient requested");
        // chain rule through tanh
        let mut theta_grad = grad;
        for (g, h) in theta_grad
            .as_mut_slice()
            .iter_mut()
            .zip(batch.embeddings().as_slice())
        {
            *g *= T::one() - *h * *h;
        }

        let mut lr = T::lit(opts.learning_rate);
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let mut trial = logits.clone();
            for (t, g) in trial.as_mut_slice().iter_mut().zip(theta_grad.as_slice()) {
                *t -= lr * *g;
            }
            let mut trial_batch = batch.clone();
            trial_batch.set_embeddings(squash(&trial));
            let (trial_loss, _) = evaluate(&trial_batch, &weights, cfg, guard, false)?;
            if !trial_loss.is_finite() {
                return Err(Error::Diverged(step));
            }
            if trial_loss <= loss {
                accepted = Some((trial, trial_batch, trial_loss));
                break;
            }
            lr /= T::lit(2.0);
        }
        if let Some((trial, trial_batch, trial_loss)) = accepted {
            logits = trial;
            batch = trial_batch;
            loss = trial_loss;
        }
        trace.push(loss);
    }

    Ok(OptimizeOutcome {
        embeddings: batch.embeddings().clone(),
        logits,
        loss_trace: trace,
    })
}
