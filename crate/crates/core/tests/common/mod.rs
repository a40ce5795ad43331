//! Independent reference implementations and fixtures shared by the
//! integration tests. None of these call into the code paths they check.
#![allow(dead_code)]

use cbir_core::code::BinaryCode;
use cbir_core::embedding::{ClassWeights, LossConfig, PairBatch};
use cbir_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Labels over `classes` classes with every class present and skewed sizes.
pub fn imbalanced_labels(rng: &mut ChaCha8Rng, b: usize, classes: usize) -> Vec<u32> {
    let mut labels: Vec<u32> = (0..classes as u32).collect();
    while labels.len() < b {
        // bias towards class 0
        let l = if rng.random_bool(0.5) {
            0
        } else {
            rng.random_range(0..classes as u32)
        };
        labels.push(l);
    }
    labels
}

pub fn random_consistency(rng: &mut ChaCha8Rng, b: usize) -> Matrix<f64> {
    let mut h = Matrix::filled(b, b, 1.0);
    for i in 0..b {
        for j in (i + 1)..b {
            let v = rng.random_range(0.0..1.0);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    h
}

pub fn random_embeddings(rng: &mut ChaCha8Rng, b: usize, k: usize) -> Matrix<f64> {
    Matrix::from_fn(b, k, |_, _| rng.random_range(-0.95..0.95))
}

pub fn random_batch(rng: &mut ChaCha8Rng, b: usize, k: usize, classes: usize) -> PairBatch<f64> {
    let labels = imbalanced_labels(rng, b, classes);
    let h = random_consistency(rng, b);
    PairBatch::new(random_embeddings(rng, b, k), labels, h).unwrap()
}

pub fn batch_weights(batch: &PairBatch<f64>) -> ClassWeights<f64> {
    let c = *batch.labels().iter().max().unwrap() as usize + 1;
    cbir_core::embedding::class_weights(batch.labels(), c).unwrap()
}

/// Pearson correlation written out term by term.
pub fn pearson_ref(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut dx = 0.0;
    let mut dy = 0.0;
    for i in 0..x.len() {
        num += (x[i] - mx) * (y[i] - my);
        dx += (x[i] - mx).powi(2);
        dy += (y[i] - my).powi(2);
    }
    num / (dx.sqrt() * dy.sqrt())
}

/// Straight-line transcription of the weighted structure-aware objective:
/// per ordered pair `W_ij * [-H s log S' - e^(H-1) (1-s) log(1-S')]` with
/// `S' = clamp((1+S)/2)`, averaged over off-diagonal pairs, plus
/// `alpha * mean_i log(lambda - mean|h_i|)`. Class weights are recounted
/// from the labels.
pub fn wsc_loss_ref(
    emb: &Matrix<f64>,
    labels: &[u32],
    h: &Matrix<f64>,
    cfg: &LossConfig<f64>,
    uniform: bool,
) -> f64 {
    let b = labels.len();
    let classes = *labels.iter().max().unwrap() as usize + 1;
    let w: Vec<f64> = (0..classes)
        .map(|c| {
            if uniform {
                1.0
            } else {
                let nc = labels.iter().filter(|&&l| l as usize == c).count() as f64;
                b as f64 / (nc * classes as f64)
            }
        })
        .collect();
    let mut sum = 0.0;
    for i in 0..b {
        for j in 0..b {
            if i == j {
                continue;
            }
            let s = pearson_ref(emb.row(i), emb.row(j));
            let p = ((1.0 + s) / 2.0).clamp(cfg.epsilon, 1.0 - cfg.epsilon);
            let sij = if labels[i] == labels[j] { 1.0 } else { 0.0 };
            let hij = h[(i, j)];
            let l = -hij * sij * p.ln() - (hij - 1.0).exp() * (1.0 - sij) * (1.0 - p).ln();
            sum += w[labels[i] as usize] * w[labels[j] as usize] * l;
        }
    }
    let mut q = 0.0;
    for i in 0..b {
        let row = emb.row(i);
        let m = row.iter().map(|v| v.abs()).sum::<f64>() / row.len() as f64;
        q += (cfg.lambda - m).ln();
    }
    sum / (b * b - b) as f64 + cfg.alpha * q / b as f64
}

/// Plain contrastive loss per ordered pair, averaged, plus the quantisation
/// term.
pub fn plain_contrastive_ref(emb: &Matrix<f64>, labels: &[u32], cfg: &LossConfig<f64>) -> f64 {
    let b = labels.len();
    let mut lc = 0.0;
    for i in 0..b {
        for j in 0..b {
            if i != j {
                let s = pearson_ref(emb.row(i), emb.row(j));
                let p = ((1.0 + s) / 2.0).clamp(cfg.epsilon, 1.0 - cfg.epsilon);
                lc += if labels[i] == labels[j] {
                    -p.ln()
                } else {
                    -(1.0 - p).ln()
                };
            }
        }
    }
    let lq: f64 = (0..b)
        .map(|i| {
            let r = emb.row(i);
            (cfg.lambda - r.iter().map(|v| v.abs()).sum::<f64>() / r.len() as f64).ln()
        })
        .sum();
    lc / (b * b - b) as f64 + cfg.alpha * lq / b as f64
}

/// Central finite-difference gradient of `f` at `x`.
pub fn central_difference(
    x: &Matrix<f64>,
    step: f64,
    mut f: impl FnMut(&Matrix<f64>) -> f64,
) -> Matrix<f64> {
    let mut g = Matrix::filled(x.rows(), x.cols(), 0.0);
    let mut probe = x.clone();
    for i in 0..x.rows() {
        for k in 0..x.cols() {
            let orig = probe[(i, k)];
            probe[(i, k)] = orig + step;
            let up = f(&probe);
            probe[(i, k)] = orig - step;
            let down = f(&probe);
            probe[(i, k)] = orig;
            g[(i, k)] = (up - down) / (2.0 * step);
        }
    }
    g
}

/// Largest componentwise relative error over entries with `|analytic| > floor`.
pub fn max_relative_error(analytic: &Matrix<f64>, numeric: &Matrix<f64>, floor: f64) -> f64 {
    analytic
        .as_slice()
        .iter()
        .zip(numeric.as_slice())
        .filter(|(a, _)| a.abs() > floor)
        .map(|(a, n)| (a - n).abs() / a.abs())
        .fold(0.0, f64::max)
}

pub fn random_code(rng: &mut ChaCha8Rng, bits: usize) -> BinaryCode {
    let bools: Vec<bool> = (0..bits).map(|_| rng.random_bool(0.5)).collect();
    BinaryCode::from_bits(&bools)
}

/// Bit-by-bit Hamming distance.
pub fn hamming_ref(a: &BinaryCode, b: &BinaryCode) -> u32 {
    a.iter().zip(b.iter()).filter(|(x, y)| x != y).count() as u32
}

/// Cubic B-spline value by de Boor's algorithm on the uniform `[-1, 1]`
/// grid with `g` intervals and `g + 3` coefficients.
pub fn de_boor(coeffs: &[f64], g: usize, x: f64) -> f64 {
    let p = 3;
    let h = 2.0 / g as f64;
    let t: Vec<f64> = (0..g + 2 * p + 1)
        .map(|j| -1.0 + (j as f64 - p as f64) * h)
        .collect();
    let x = x.clamp(-1.0, 1.0);
    let mut k = p;
    while k < p + g - 1 && x >= t[k + 1] {
        k += 1;
    }
    let mut d: Vec<f64> = (0..=p).map(|j| coeffs[j + k - p]).collect();
    for r in 1..=p {
        for j in (r..=p).rev() {
            let i = j + k - p;
            let alpha = (x - t[i]) / (t[i + 1 + p - r] - t[i]);
            d[j] = (1.0 - alpha) * d[j - 1] + alpha * d[j];
        }
    }
    d[p]
}

/// Gaussian window as an explicit 2-D matrix.
fn gaussian_2d(size: usize, sigma: f64) -> Vec<Vec<f64>> {
    let c = (size as f64 - 1.0) / 2.0;
    let mut w = vec![vec![0.0; size]; size];
    let mut total = 0.0;
    for (y, row) in w.iter_mut().enumerate() {
        for (x, v) in row.iter_mut().enumerate() {
            *v = (-((x as f64 - c).powi(2) + (y as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    for row in &mut w {
        for v in row {
            *v /= total;
        }
    }
    w
}

/// MS-SSIM by direct window sums at every pixel: five scales with the
/// standard weights, contrast-structure per scale, luminance at the last.
pub fn ms_ssim_ref(x: &[f64], y: &[f64], h: usize, w: usize) -> f64 {
    let raw = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|v| v / total).collect();
    let g = gaussian_2d(11, 1.5);
    let c1 = (0.01f64).powi(2);
    let c2 = (0.03f64).powi(2);
    let mut a = x.to_vec();
    let mut b = y.to_vec();
    let (mut hh, mut ww) = (h, w);
    let mut result = 1.0;
    for (scale, &wt) in weights.iter().enumerate() {
        let (oh, ow) = (hh - 10, ww - 10);
        let mut lsum = 0.0;
        let mut cssum = 0.0;
        for oy in 0..oh {
            for ox in 0..ow {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for ky in 0..11 {
                    for kx in 0..11 {
                        let gv = g[ky][kx];
                        let av = a[(oy + ky) * ww + ox + kx];
                        let bv = b[(oy + ky) * ww + ox + kx];
                        mx += gv * av;
                        my += gv * bv;
                        sxx += gv * av * av;
                        syy += gv * bv * bv;
                        sxy += gv * av * bv;
                    }
                }
                let vx = sxx - mx * mx;
                let vy = syy - my * my;
                let cov = sxy - mx * my;
                lsum += (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
                cssum += (2.0 * cov + c2) / (vx + vy + c2);
            }
        }
        let n = (oh * ow) as f64;
        result *= (cssum / n).max(0.0).powf(wt);
        if scale == weights.len() - 1 {
            result *= (lsum / n).max(0.0).powf(wt);
        } else {
            let (nh, nw) = (hh / 2, ww / 2);
            let pool = |src: &[f64]| -> Vec<f64> {
                let mut out = Vec::with_capacity(nh * nw);
                for yy in 0..nh {
                    for xx in 0..nw {
                        out.push(
                            (src[2 * yy * ww + 2 * xx]
                                + src[2 * yy * ww + 2 * xx + 1]
                                + src[(2 * yy + 1) * ww + 2 * xx]
                                + src[(2 * yy + 1) * ww + 2 * xx + 1])
                                / 4.0,
                        );
                    }
                }
                out
            };
            a = pool(&a);
            b = pool(&b);
            hh = nh;
            ww = nw;
        }
    }
    result
}
