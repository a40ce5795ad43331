//! Windowed convolutional self-attention and pixel-token self-attention.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

use super::ops::{softmax_in_place, Conv2d};
use super::tensor::FeatureMap;

/// Scaled dot-product attention of one head. `q`, `k`, `v` hold one token
/// per row; returns `(output, weights)` with one probability row per query.
pub fn scaled_dot_attention<T: Scalar>(
    q: &[Vec<T>],
    k: &[Vec<T>],
    v: &[Vec<T>],
    head_dim: usize,
) -> (Vec<Vec<T>>, Matrix<T>) {
    let scale = T::one() / T::from_usize_lossy(head_dim).sqrt();
    let mut weights = Matrix::filled(q.len(), k.len(), T::zero());
    for (i, qi) in q.iter().enumerate() {
        let row = weights.row_mut(i);
        for (j, kj) in k.iter().enumerate() {
            row[j] = qi.iter().zip(kj).map(|(&a, &b)| a * b).sum::<T>() * scale;
        }
        softmax_in_place(row);
    }
    let dim = v.first().map_or(0, Vec::len);
    let out = (0..q.len())
        .map(|i| {
            let mut acc = vec![T::zero(); dim];
            for (j, vj) in v.iter().enumerate() {
                let a = weights[(i, j)];
                for (dst, &x) in acc.iter_mut().zip(vj) {
                    *dst += a * x;
                }
            }
            acc
        })
        .collect();
    (out, weights)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvMsaConfig {
    pub window: (usize, usize),
    pub heads: usize,
    pub head_dim: usize,
}

/// Multi-head self-attention computed independently inside each
/// non-overlapping `p_h x p_w` window; Q', K', V' come from 1x1 convolutions.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvMsa<T> {
    pub config: ConvMsaConfig,
    pub query: Conv2d<T>,
    pub key: Conv2d<T>,
    pub value: Conv2d<T>,
}

/// Attention weights of one `(sample, window, head)` triple.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowAttention<T> {
    pub batch: usize,
    pub window: (usize, usize),
    pub head: usize,
    pub weights: Matrix<T>,
}

impl<T: Scalar> ConvMsa<T> {
    pub fn zeros(config: ConvMsaConfig) -> Self {
        let c = config.heads * config.head_dim;
        Self {
            query: Conv2d::pointwise(c, c),
            key: Conv2d::pointwise(c, c),
            value: Conv2d::pointwise(c, c),
            config,
        }
    }

    pub fn channels(&self) -> usize {
        self.config.heads * self.config.head_dim
    }

    pub fn forward(&self, fm: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        self.run(fm, false).map(|(out, _)| out)
    }

    pub fn forward_with_attention(
        &self,
        fm: &FeatureMap<T>,
    ) -> Result<(FeatureMap<T>, Vec<WindowAttention<T>>)> {
        self.run(fm, true)
    }

    fn run(
        &self,
        fm: &FeatureMap<T>,
        keep: bool,
    ) -> Result<(FeatureMap<T>, Vec<WindowAttention<T>>)> {
        let c = self.channels();
        let (ph, pw) = self.config.window;
        if fm.channels() != c {
            return Err(Error::Shape(format!(
                "ConvMSA expects {c} channels (heads x head_dim), got {}",
                fm.channels()
            )));
        }
        if ph == 0 || pw == 0 || !fm.height().is_multiple_of(ph) || !fm.width().is_multiple_of(pw) {
            return Err(Error::Shape(format!(
                "{}x{} map is not divisible into {ph}x{pw} windows",
                fm.height(),
                fm.width()
            )));
        }
        let q = self.query.forward(fm)?;
        let k = self.key.forward(fm)?;
        let v = self.value.forward(fm)?;
        let dh = self.config.head_dim;
        let mut out = FeatureMap::zeros(fm.batch(), c, fm.height(), fm.width());
        let mut kept = Vec::new();
        for b in 0..fm.batch() {
            for wy in 0..fm.height() / ph {
                for wx in 0..fm.width() / pw {
                    let positions: Vec<(usize, usize)> = (0..ph)
                        .flat_map(|y| (0..pw).map(move |x| (wy * ph + y, wx * pw + x)))
                        .collect();
                    for head in 0..self.config.heads {
                        let gather = |m: &FeatureMap<T>| -> Vec<Vec<T>> {
                            positions
                                .iter()
                                .map(|&(y, x)| {
                                    (0..dh).map(|d| m.get(b, head * dh + d, y, x)).collect()
                                })
                                .collect()
                        };
                        let (o, weights) =
                            scaled_dot_attention(&gather(&q), &gather(&k), &gather(&v), dh);
                        for (row, &(y, x)) in o.iter().zip(&positions) {
                            for (d, &val) in row.iter().enumerate() {
                                out.set(b, head * dh + d, y, x, val);
                            }
                        }
                        if keep {
                            kept.push(WindowAttention {
                                batch: b,
                                window: (wy, wx),
                                head,
                                weights,
                            });
                        }
                    }
                }
            }
        }
        Ok((out, kept))
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut p = Vec::new();
        p.extend(self.query.params_mut());
        p.extend(self.key.params_mut());
        p.extend(self.value.params_mut());
        p
    }
}

/// Pixel tokens with a leading class token.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence<T> {
    /// `(1 + n) x D`, class token in row 0, positional embedding included.
    pub tokens: Matrix<T>,
    /// The positional embedding that was added.
    pub pe: Matrix<T>,
}

/// Sinusoidal positional embedding: `sin(pos / 10000^(2i/D))` on even
/// columns, `cos` on odd ones.
pub fn sinusoidal_pe<T: Scalar>(len: usize, dim: usize) -> Matrix<T> {
    Matrix::from_fn(len, dim, |pos, col| {
        let i = (col / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * i / dim as f64);
        T::lit(if col % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        })
    })
}

/// Flattens a single-sample map into `[cls, p_0 .. p_{n-1}]` without any
/// positional term.
pub fn tokenize<T: Scalar>(fm: &FeatureMap<T>, cls: &[T]) -> Result<Matrix<T>> {
    if fm.batch() != 1 {
        return Err(Error::Shape(format!(
            "tokenisation takes one sample at a time, got batch {}",
            fm.batch()
        )));
    }
    if cls.len() != fm.channels() {
        return Err(Error::LengthMismatch {
            left: fm.channels(),
            right: cls.len(),
        });
    }
    let n = fm.height() * fm.width();
    Ok(Matrix::from_fn(n + 1, fm.channels(), |t, d| {
        if t == 0 {
            cls[d]
        } else {
            let p = t - 1;
            fm.get(0, d, p / fm.width(), p % fm.width())
        }
    }))
}

/// Every pixel becomes a token, the class token is prepended and the
/// sinusoidal embedding added.
pub fn tokenize_with_pe<T: Scalar>(fm: &FeatureMap<T>, cls: &[T]) -> Result<TokenSequence<T>> {
    let mut tokens = tokenize(fm, cls)?;
    let pe = sinusoidal_pe(tokens.rows(), tokens.cols());
    for (t, p) in tokens.as_mut_slice().iter_mut().zip(pe.as_slice()) {
        *t += *p;
    }
    Ok(TokenSequence { tokens, pe })
}

/// Residual multi-head self-attention layer over a token sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct MsaLayer<T> {
    pub heads: usize,
    pub head_dim: usize,
    /// Linear maps stored as pointwise convolutions (`D -> D`).
    pub query: Conv2d<T>,
    pub key: Conv2d<T>,
    pub value: Conv2d<T>,
    pub output: Conv2d<T>,
}

impl<T: Scalar> MsaLayer<T> {
    pub fn zeros(heads: usize, head_dim: usize) -> Self {
        let d = heads * head_dim;
        Self {
            heads,
            head_dim,
            query: Conv2d::pointwise(d, d),
            key: Conv2d::pointwise(d, d),
            value: Conv2d::pointwise(d, d),
            output: Conv2d::pointwise(d, d),
        }
    }

    /// `x + W_o MSA(x)`.
    pub fn forward(&self, tokens: &Matrix<T>) -> Result<Matrix<T>> {
        let d = self.heads * self.head_dim;
        if tokens.cols() != d {
            return Err(Error::Shape(format!(
                "MSA layer expects width {d}, got {}",
                tokens.cols()
            )));
        }
        let project = |conv: &Conv2d<T>| -> Vec<Vec<T>> {
            tokens
                .iter_rows()
                .map(|r| conv.apply_pointwise(r))
                .collect()
        };
        let (q, k, v) = (
            project(&self.query),
            project(&self.key),
            project(&self.value),
        );
        let n = tokens.rows();
        let mut mixed = vec![vec![T::zero(); d]; n];
        let dh = self.head_dim;
        for head in 0..self.heads {
            let slice = |m: &[Vec<T>]| -> Vec<Vec<T>> {
                m.iter()
                    .map(|r| r[head * dh..(head + 1) * dh].to_vec())
                    .collect()
            };
            let (o, _) = scaled_dot_attention(&slice(&q), &slice(&k), &slice(&v), dh);
            for (t, row) in o.into_iter().enumerate() {
                mixed[t][head * dh..(head + 1) * dh].copy_from_slice(&row);
            }
        }
        let mut out = tokens.clone();
        for (t, m) in mixed.iter().enumerate() {
            for (dst, v) in out
                .row_mut(t)
                .iter_mut()
                .zip(self.output.apply_pointwise(m))
            {
                *dst += v;
            }
        }
        Ok(out)
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut p = Vec::new();
        p.extend(self.query.params_mut());
        p.extend(self.key.params_mut());
        p.extend(self.value.params_mut());
        p.extend(self.output.params_mut());
        p
    }
}
