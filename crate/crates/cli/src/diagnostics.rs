//! `pairs`, `losscheck` and `demo-train`.

use std::fmt::Write as _;

use anyhow::{bail, Context, Result};
use cbir_core::embedding::{
    class_weights, optimize_embeddings, wsc_gradient, wsc_loss, OptimizeOptions, PairBatch,
};
use cbir_core::eval::{map_maap, EvalQuery};
use cbir_core::io::Tensor;
use cbir_core::pairing::{
    classify_pairs, consistency_matrix, semantic_similarity_matrix, Fingerprint,
};
use cbir_core::{hamming_distance, sign_quantise, GalleryRecord, HashIndex, Matrix, QueryFeatures};
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::PipelineConfig;
use crate::gallery::{fingerprint_path, read_manifest, read_tensor};

/// Consistency and pair class of every unordered same-gallery pair.
pub fn pairs(cfg: &PipelineConfig, matrix_out: Option<&std::path::Path>) -> Result<String> {
    let rows = read_manifest(&cfg.gallery)?;
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut fps = Vec::new();
    for row in &rows {
        let path = fingerprint_path(&cfg.gallery, &row.id);
        if !path.exists() {
            info!("{} has no fingerprint (precomputed input); skipped", row.id);
            continue;
        }
        let t = read_tensor(&path)?;
        let side = t.dims().first().copied().unwrap_or(0);
        fps.push(Fingerprint::new(side, t.to_scalars::<f64>())?);
        ids.push(row.id.clone());
        labels.push(row.label);
    }
    if fps.len() < 2 {
        bail!("need at least two fingerprints, found {}", fps.len());
    }
    let h = consistency_matrix(&fps)?;
    let classes = classify_pairs(
        &semantic_similarity_matrix(&labels),
        &h,
        cfg.neutral_threshold,
    )?;
    if let Some(path) = matrix_out {
        let t = Tensor::from_scalars(vec![h.rows(), h.cols()], h.as_slice())?;
        t.write(path)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let mut s = String::from("a\tb\tconsistency\tclass\n");
    for i in 0..ids.len() {
        for j in (i + 1)..ids.len() {
            let _ = writeln!(
                s,
                "{}\t{}\t{:.6}\t{}",
                ids[i],
                ids[j],
                h[(i, j)],
                classes[(i, j)].as_str()
            );
        }
    }
    Ok(s)
}

fn random_batch(rng: &mut ChaCha8Rng, b: usize, k: usize) -> Result<PairBatch<f64>> {
    let mut labels: Vec<u32> = vec![0, 1];
    while labels.len() < b {
        labels.push(if rng.random_bool(0.6) {
            0
        } else {
            rng.random_range(0..3)
        });
    }
    let emb = Matrix::from_fn(b, k, |_, _| rng.random_range(-0.95..0.95));
    let mut h = Matrix::filled(b, b, 1.0);
    for i in 0..b {
        for j in (i + 1)..b {
            let v = rng.random_range(0.0..1.0);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    Ok(PairBatch::new(emb, labels, h)?)
}

/// Analytic gradient against central differences on random batches.
pub fn losscheck(cfg: &PipelineConfig, batches: usize, tolerance: f64) -> Result<String> {
    const STEP: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut s = String::from("batch\tB\tK\tmax_rel_error\n");
    let mut worst = 0.0f64;
    for n in 0..batches {
        let b = [4, 8][n % 2];
        let k = [8, 16][(n / 2) % 2];
        let batch = random_batch(&mut rng, b, k)?;
        let classes = *batch.labels().iter().max().unwrap_or(&0) as usize + 1;
        let w = class_weights(batch.labels(), classes)?;
        let grad = wsc_gradient(&batch, &w, &cfg.loss)?;
        let mut err = 0.0f64;
        for i in 0..b {
            for c in 0..k {
                let g = grad[(i, c)];
                if g.abs() <= 1e-8 {
                    continue;
                }
                let probe = |delta: f64| -> Result<f64> {
                    let mut e = batch.embeddings().clone();
                    e[(i, c)] += delta;
                    let p =
                        PairBatch::new(e, batch.labels().to_vec(), batch.consistency().clone())?;
                    Ok(wsc_loss(&p, &w, &cfg.loss)?)
                };
                let fd = (probe(STEP)? - probe(-STEP)?) / (2.0 * STEP);
                err = err.max((g - fd).abs() / g.abs());
            }
        }
        worst = worst.max(err);
        let _ = writeln!(s, "{n}\t{b}\t{k}\t{err:.3e}");
    }
    let status = if worst <= tolerance { "pass" } else { "fail" };
    let _ = writeln!(
        s,
        "max_rel_error={worst:.3e} tolerance={tolerance:e} status={status}"
    );
    if worst > tolerance {
        print!("{s}");
        bail!("gradient check failed: {worst:e} > {tolerance:e}");
    }
    Ok(s)
}

pub struct DemoOptions {
    pub classes: usize,
    pub per_class: usize,
    pub steps: usize,
    pub held_out: usize,
}

/// Free-embedding optimisation on synthetic labels, then retrieval of
/// held-out samples drawn from per-class Gaussians over the learned logits.
pub fn demo_train(cfg: &PipelineConfig, opts: &DemoOptions) -> Result<String> {
    let labels: Vec<u32> = (0..opts.classes as u32)
        .flat_map(|c| std::iter::repeat_n(c, opts.per_class))
        .collect();
    let n = labels.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut h = Matrix::filled(n, n, 1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = if labels[i] == labels[j] {
                rng.random_range(0.5..1.0)
            } else {
                rng.random_range(0.0..1.0)
            };
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    let out = optimize_embeddings(
        &labels,
        &h,
        &cfg.loss,
        &OptimizeOptions {
            bits: cfg.bits,
            steps: opts.steps,
            seed: cfg.seed,
            ..OptimizeOptions::default()
        },
    )?;
    let codes: Vec<_> = (0..n)
        .map(|i| sign_quantise(out.embeddings.row(i)))
        .collect();
    let (mut intra, mut ni, mut inter, mut no) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = f64::from(hamming_distance(&codes[i], &codes[j])?);
            if labels[i] == labels[j] {
                intra += d;
                ni += 1;
            } else {
                inter += d;
                no += 1;
            }
        }
    }
    let gallery = HashIndex::from_records(
        cfg.bits,
        vec![cfg.bits],
        (0..n).map(|i| GalleryRecord {
            id: format!("s{i:03}"),
            code: codes[i].clone(),
            levels: vec![out.embeddings.row(i).iter().map(|&v| v as f32).collect()],
            label: labels[i],
        }),
    )?;
    let queries = held_out_queries(&out.logits, &labels, opts.classes, opts.held_out, &mut rng);
    let report = map_maap::<f64>(&queries, &gallery, 10)?;
    let first = out.loss_trace.first().copied().unwrap_or(f64::NAN);
    let last = out.loss_trace.last().copied().unwrap_or(f64::NAN);
    Ok(format!(
        "samples={n}\nbits={}\nsteps={}\nloss_initial={first:.6}\nloss_final={last:.6}\nintra_hamming={:.4}\ninter_hamming={:.4}\nheld_out={}\nmap@10={:.4}\n",
        cfg.bits,
        opts.steps,
        if ni == 0 { 0.0 } else { intra / ni as f64 },
        if no == 0 { 0.0 } else { inter / no as f64 },
        queries.len(),
        report.map
    ))
}

fn held_out_queries(
    logits: &Matrix<f64>,
    labels: &[u32],
    classes: usize,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<EvalQuery> {
    let k = logits.cols();
    (0..count)
        .map(|q| {
            let class = (q % classes) as u32;
            let rows: Vec<&[f64]> = (0..labels.len())
                .filter(|&i| labels[i] == class)
                .map(|i| logits.row(i))
                .collect();
            let m = rows.len() as f64;
            let h: Vec<f64> = (0..k)
                .map(|c| {
                    let mean = rows.iter().map(|r| r[c]).sum::<f64>() / m;
                    let sd = (rows.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / m).sqrt();
                    let z: f64 = StandardNormal.sample(rng);
                    (mean + sd * z).tanh()
                })
                .collect();
            EvalQuery {
                id: None,
                features: QueryFeatures {
                    code: sign_quantise(&h),
                    levels: vec![h.iter().map(|&v| v as f32).collect()],
                },
                label: class,
            }
        })
        .collect()
}
