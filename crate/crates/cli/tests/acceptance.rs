//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

#[path = "../../core/tests/common/mod.rs"]
mod common;
mod support;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use cbir_core::embedding::{
    optimize_embeddings, wsc_gradient, wsc_loss, ClassWeights, LossConfig, OptimizeOptions,
    PairBatch,
};
use cbir_core::encoder::{
    ConvMsa, ConvMsaConfig, Decoder, FeatureMap, KanLayer, ToyConfig, ToyEncoder,
};
use cbir_core::eval::{average_precision_at_k, map_maap, precision_recall_at_radius, EvalQuery};
use cbir_core::image::Image;
use cbir_core::index::{load_index, persist_index, rank_order, Hit};
use cbir_core::io::Tensor;
use cbir_core::ood::{
    ball_radius, calibrate_threshold, hash_space_ood, ms_ssim_plane, MsSsimParams,
};
use cbir_core::{
    sign_quantise, BinaryCode, Error, GalleryRecord, HashIndex, Matrix, QueryFeatures,
    ResidualMetric,
};
use common::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1001);
    let cfg = LossConfig::default();
    let mut worst = 0.0f64;
    for n in 0..100 {
        let b = [4, 8][n % 2];
        let k = [8, 16][(n / 2) % 2];
        let batch = random_batch(&mut r, b, k, 3);
        let w = batch_weights(&batch);
        let g = wsc_gradient(&batch, &w, &cfg).map_err(|e| e.to_string())?;
        let labels = batch.labels().to_vec();
        let h = batch.consistency().clone();
        let fd = central_difference(batch.embeddings(), 1e-5, |e| {
            wsc_loss_ref(e, &labels, &h, &cfg, false)
        });
        worst = worst.max(max_relative_error(&g, &fd, 1e-8));
    }
    let elapsed = start.elapsed();
    ensure!(worst <= 1e-4, "max relative error {worst:.3e} > 1e-4");
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Ok(format!(
        "max rel err {worst:.2e}, {:.2}s",
        elapsed.as_secs_f64()
    ))
}

fn loss_drives_separation() -> Outcome {
    let start = Instant::now();
    let (classes, per_class, bits) = (4u32, 16usize, 16usize);
    let labels: Vec<u32> = (0..classes)
        .flat_map(|c| std::iter::repeat_n(c, per_class))
        .collect();
    let n = labels.len();
    let mut r = rng(1002);
    let mut h = Matrix::filled(n, n, 1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = if labels[i] == labels[j] {
                r.random_range(0.5..1.0)
            } else {
                r.random_range(0.0..1.0)
            };
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    let opts = OptimizeOptions {
        bits,
        steps: 500,
        seed: 7,
        ..OptimizeOptions::default()
    };
    let out = optimize_embeddings(&labels, &h, &LossConfig::default(), &opts)
        .map_err(|e| e.to_string())?;
    let codes: Vec<BinaryCode> = (0..n)
        .map(|i| sign_quantise(out.embeddings.row(i)))
        .collect();
    let (mut intra, mut ni, mut inter, mut no) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = hamming_ref(&codes[i], &codes[j]) as f64;
            if labels[i] == labels[j] {
                intra += d;
                ni += 1.0;
            } else {
                inter += d;
                no += 1.0;
            }
        }
    }
    let (intra, inter) = (intra / ni, inter / no);
    let gallery = HashIndex::from_records(
        bits,
        vec![bits],
        (0..n).map(|i| GalleryRecord {
            id: format!("g{i:02}"),
            code: codes[i].clone(),
            levels: vec![out.embeddings.row(i).iter().map(|&v| v as f32).collect()],
            label: labels[i],
        }),
    )
    .map_err(|e| e.to_string())?;
    // held-out samples from per-class Gaussians over the learned logits
    let queries: Vec<EvalQuery> = (0..16)
        .map(|q| {
            let class = q as u32 % classes;
            let rows: Vec<&[f64]> = (0..n)
                .filter(|&i| labels[i] == class)
                .map(|i| out.logits.row(i))
                .collect();
            let hq: Vec<f64> = (0..bits)
                .map(|c| {
                    let m = rows.iter().map(|x| x[c]).sum::<f64>() / rows.len() as f64;
                    let sd = (rows.iter().map(|x| (x[c] - m).powi(2)).sum::<f64>()
                        / rows.len() as f64)
                        .sqrt();
                    Normal::new(m, sd.max(1e-9)).unwrap().sample(&mut r).tanh()
                })
                .collect();
            EvalQuery {
                id: None,
                features: QueryFeatures {
                    code: sign_quantise(&hq),
                    levels: vec![hq.iter().map(|&v| v as f32).collect()],
                },
                label: class,
            }
        })
        .collect();
    let map = map_maap::<f64>(&queries, &gallery, 10)
        .map_err(|e| e.to_string())?
        .map;
    let elapsed = start.elapsed();
    ensure!(intra < inter, "intra {intra:.3} >= inter {inter:.3}");
    ensure!(map >= 0.95, "mAP@10 {map:.4} < 0.95");
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!(
        "intra {intra:.2} < inter {inter:.2}, mAP@10 {map:.4}, {:.2}s",
        elapsed.as_secs_f64()
    ))
}

fn degeneracy() -> Outcome {
    let mut r = rng(1003);
    let cfg = LossConfig::default();
    let mut worst = 0.0f64;
    for n in 0..50 {
        let b = 4 + n % 5;
        let labels = imbalanced_labels(&mut r, b, 3);
        let emb = random_embeddings(&mut r, b, 8 + 8 * (n % 2));
        let batch = PairBatch::new(emb.clone(), labels.clone(), Matrix::filled(b, b, 1.0))
            .map_err(|e| e.to_string())?;
        let got = wsc_loss(&batch, &ClassWeights::uniform(3), &cfg).map_err(|e| e.to_string())?;
        worst = worst.max((got - plain_contrastive_ref(&emb, &labels, &cfg)).abs());
    }
    ensure!(worst <= 1e-10, "max deviation {worst:.3e}");
    Ok(format!("max deviation {worst:.2e}"))
}

fn search_exactness() -> Outcome {
    let mut r = rng(1004);
    let records: Vec<GalleryRecord> = (0..10_000)
        .map(|i| GalleryRecord {
            id: format!("r{i:05}"),
            code: random_code(&mut r, 64),
            levels: vec![(0..4).map(|_| r.random_range(-1.0f32..1.0)).collect()],
            label: 0,
        })
        .collect();
    let index = HashIndex::from_records(64, vec![4], records).map_err(|e| e.to_string())?;
    let mut checked = 0usize;
    for q in 0..20 {
        // half the queries sit next to a stored code so small balls are non-empty
        let mut code = if q % 2 == 0 {
            random_code(&mut r, 64)
        } else {
            index.records()[q * 97].code.clone()
        };
        if q % 4 == 1 {
            code.set(5, !code.get(5));
        }
        for radius in [0u32, 1, 3, 17] {
            let got = index
                .search_ball(&code, radius)
                .map_err(|e| e.to_string())?;
            let want: Vec<&str> = index
                .records()
                .iter()
                .filter(|rec| hamming_ref(&code, &rec.code) <= radius)
                .map(|rec| rec.id.as_str())
                .collect();
            ensure!(got == want, "ball mismatch at r={radius}");
            checked += want.len();
        }
        let query = QueryFeatures {
            code,
            levels: vec![(0..4).map(|_| r.random_range(-1.0f32..1.0)).collect()],
        };
        let hits = index
            .ranked_retrieve(&query, 10_000, 20)
            .map_err(|e| e.to_string())?
            .hits;
        let mut reference: Vec<Hit> = index
            .records()
            .iter()
            .filter(|rec| hamming_ref(&query.code, &rec.code) <= 20)
            .map(|rec| Hit {
                id: rec.id.clone(),
                distance: hamming_ref(&query.code, &rec.code),
                similarity: {
                    let a: Vec<f64> = query.levels[0].iter().map(|&v| v as f64).collect();
                    let b: Vec<f64> = rec.levels[0].iter().map(|&v| v as f64).collect();
                    pearson_ref(&a, &b)
                },
            })
            .collect();
        reference.sort_by(|a, b| {
            (a.distance, -a.similarity, &a.id)
                .partial_cmp(&(b.distance, -b.similarity, &b.id))
                .unwrap()
        });
        ensure!(
            hits.len() == reference.len(),
            "ranking length differs from reference"
        );
        for (h, want) in hits.iter().zip(&reference) {
            ensure!(
                h.id == want.id
                    && h.distance == want.distance
                    && (h.similarity - want.similarity).abs() < 1e-12,
                "ranking differs from reference sort at {}",
                want.id
            );
        }
    }
    let hit = |id: &str, d, s| Hit {
        id: id.into(),
        distance: d,
        similarity: s,
    };
    let mut example = [hit("c", 1, 0.99), hit("b", 0, 0.2), hit("a", 0, 0.9)];
    example.sort_by(rank_order);
    let order: Vec<(u32, f64)> = example.iter().map(|h| (h.distance, h.similarity)).collect();
    ensure!(
        order == [(0, 0.9), (0, 0.2), (1, 0.99)],
        "tie example ordered {order:?}"
    );
    Ok(format!(
        "10k codes, {checked} ball members matched, tie example ordered"
    ))
}

fn ms_ssim_checks() -> Outcome {
    let mut r = rng(1005);
    let p = MsSsimParams::default();
    let side = 176;
    let image = |r: &mut ChaCha8Rng| -> Vec<f64> {
        let (fx, fy) = (r.random_range(0.03..0.3), r.random_range(0.03..0.3));
        (0..side * side)
            .map(|i| {
                let (y, x) = ((i / side) as f64, (i % side) as f64);
                (0.5 + 0.3 * (fx * x).sin() * (fy * y).cos() + r.random_range(-0.15..0.15))
                    .clamp(0.0, 1.0)
            })
            .collect()
    };
    let ms = |a: &[f64], b: &[f64]| -> Result<f64, String> {
        ms_ssim_plane(a, b, side, side, &p).map_err(|e| e.to_string())
    };
    let x = image(&mut r);
    let selfsim = ms(&x, &x)?;
    ensure!((selfsim - 1.0).abs() <= 1e-9, "self-similarity {selfsim}");
    let mut worst_oracle = 0.0f64;
    let mut worst_sym = 0.0f64;
    for _ in 0..10 {
        let a = image(&mut r);
        let b = image(&mut r);
        let v = ms(&a, &b)?;
        worst_sym = worst_sym.max((v - ms(&b, &a)?).abs());
        worst_oracle = worst_oracle.max((v - ms_ssim_ref(&a, &b, side, side)).abs());
    }
    ensure!(worst_sym <= 1e-12, "asymmetry {worst_sym:.3e}");
    ensure!(worst_oracle <= 1e-6, "oracle deviation {worst_oracle:.3e}");
    let normal = Normal::new(0.0, 1.0).unwrap();
    let noise: Vec<f64> = (0..x.len()).map(|_| normal.sample(&mut r)).collect();
    let mut values = Vec::new();
    for sigma in [0.01, 0.05, 0.1] {
        let y: Vec<f64> = x.iter().zip(&noise).map(|(v, n)| v + sigma * n).collect();
        values.push(ms(&x, &y)?);
    }
    ensure!(
        values[0] < 1.0 && values[1] < values[0] && values[2] < values[1],
        "not decreasing: {values:?}"
    );
    Ok(format!(
        "oracle dev {worst_oracle:.1e}, noise {:.4}>{:.4}>{:.4}",
        values[0], values[1], values[2]
    ))
}

fn calibration_soundness() -> Outcome {
    let mut r = rng(1006);
    let normal = Normal::new(0.3, 0.05).unwrap();
    let residuals: Vec<f64> = (0..10_000).map(|_| normal.sample(&mut r)).collect();
    let cal = calibrate_threshold(&residuals, ResidualMetric::L1).map_err(|e| e.to_string())?;
    let flagged = residuals.iter().filter(|&&v| cal.is_ood(v)).count() as f64 / 1e4;
    let shifted = residuals
        .iter()
        .filter(|&&v| cal.is_ood(v + 6.0 * cal.std_dev))
        .count() as f64
        / 1e4;
    ensure!(flagged <= 0.005, "{:.3}% flagged", flagged * 100.0);
    ensure!(
        shifted >= 0.99,
        "{:.2}% flagged after shift",
        shifted * 100.0
    );
    let worked = calibrate_threshold::<f64>(&[0.10, 0.12, 0.11, 0.09, 0.08], ResidualMetric::L1)
        .map_err(|e| e.to_string())?
        .tau;
    ensure!((worked - 0.142426).abs() <= 1e-6, "worked tau {worked}");
    Ok(format!(
        "{:.2}% / {:.2}% flagged, tau {worked:.6}",
        flagged * 100.0,
        shifted * 100.0
    ))
}

fn radius_rule() -> Outcome {
    for (k, want) in [(8usize, 3u32), (16, 5), (64, 17), (128, 33)] {
        let got = ball_radius(k);
        ensure!(got == want, "K={k}: r={got}");
        let centres = [BinaryCode::zeros(k)];
        let at = |d: u32| {
            let mut c = BinaryCode::zeros(k);
            for i in 0..d as usize {
                c.set(i, true);
            }
            hash_space_ood(&c, &centres).unwrap()
        };
        ensure!(!at(got) && at(got + 1), "K={k}: boundary behaviour wrong");
    }
    Ok("r = 3, 5, 17, 33; in at r, out at r+1".into())
}

fn metric_monotonicity() -> Outcome {
    let mut r = rng(1008);
    for g in 0..20 {
        let bits = 12;
        let records = (0..60).map(|i| GalleryRecord {
            id: format!("g{i}"),
            code: random_code(&mut r, bits),
            levels: Vec::new(),
            label: i % 3,
        });
        let gallery =
            HashIndex::from_records(bits, Vec::new(), records).map_err(|e| e.to_string())?;
        let queries: Vec<EvalQuery> = (0..15)
            .map(|i| cbir_core::eval::code_query(random_code(&mut r, bits), i % 3))
            .collect();
        let mut last = -1.0;
        for radius in 0..=bits as u32 {
            let m = precision_recall_at_radius::<f64>(&queries, &gallery, radius)
                .map_err(|e| e.to_string())?;
            ensure!(m.recall >= last, "gallery {g}: recall fell at R={radius}");
            last = m.recall;
        }
    }
    for trial in 0..1000 {
        let n = r.random_range(2..40);
        let mut ranked: Vec<u8> = (0..n).map(|_| r.random_range(0..2)).collect();
        let i = r.random_range(0..n - 1);
        ranked[i] = 0;
        ranked[i + 1] = 1;
        let k = r.random_range(i + 2..=n);
        let before: f64 = average_precision_at_k(&ranked, &1, k);
        ranked.swap(i, i + 1);
        let after: f64 = average_precision_at_k(&ranked, &1, k);
        ensure!(
            after >= before,
            "ranking {trial}: AP fell from {before} to {after}"
        );
    }
    Ok("recall monotone on 20 galleries, AP swap on 1k rankings".into())
}

fn architecture_invariants() -> Outcome {
    let mut r = rng(1009);
    let cfg = ConvMsaConfig {
        window: (7, 7),
        heads: 4,
        head_dim: 4,
    };
    let mut msa = ConvMsa::<f64>::zeros(cfg.clone());
    for conv in [&mut msa.query, &mut msa.key, &mut msa.value] {
        conv.weight
            .iter_mut()
            .for_each(|w| *w = r.random_range(-0.5..0.5));
    }
    let input = FeatureMap::from_fn(1, 16, 14, 14, |_, _, _, _| r.random_range(-1.0..1.0));
    let (out, att) = msa
        .forward_with_attention(&input)
        .map_err(|e| e.to_string())?;
    ensure!(out.shape() == input.shape(), "ConvMSA changed shape");
    for a in &att {
        for row in a.weights.iter_rows() {
            ensure!(
                (row.iter().sum::<f64>() - 1.0).abs() <= 1e-6,
                "attention row sums to {}",
                row.iter().sum::<f64>()
            );
        }
    }
    let mut uniform = ConvMsa::<f64>::zeros(cfg);
    for o in 0..16 {
        uniform.value.weight[o * 16 + o] = 1.0;
    }
    let out = uniform.forward(&input).map_err(|e| e.to_string())?;
    for c in 0..16 {
        for (wy, wx) in [(0, 0), (0, 7), (7, 0), (7, 7)] {
            let mean = (0..49)
                .map(|p| input.get(0, c, wy + p / 7, wx + p % 7))
                .sum::<f64>()
                / 49.0;
            ensure!(
                (out.get(0, c, wy + 3, wx + 2) - mean).abs() < 1e-12,
                "uniform attention is not the window mean"
            );
        }
    }
    let mut kan = KanLayer::<f64>::zeros(6, 4, 8).map_err(|e| e.to_string())?;
    kan.base_weight
        .iter_mut()
        .for_each(|w| *w = r.random_range(-1.0..1.0));
    kan.coefficients
        .iter_mut()
        .for_each(|w| *w = r.random_range(-1.0..1.0));
    let x: Vec<f64> = (0..6).map(|_| r.random_range(-1.0..1.0)).collect();
    let y = kan.forward(&x).map_err(|e| e.to_string())?;
    for q in 0..4 {
        let silu = |v: f64| v * (1.0 / (1.0 + (-v).exp()));
        let want: f64 = (0..6)
            .map(|p| kan.base_weight[p * 4 + q] * silu(x[p]))
            .sum();
        ensure!(y[q] == want, "KAN basis-only output {} != {want}", y[q]);
    }
    let dec = Decoder::<f64>::zeros(128, &[32, 16, 8], &[2, 4, 4], 1).map_err(|e| e.to_string())?;
    let up = dec
        .forward(&FeatureMap::filled(1, 128, 7, 7, 0.1))
        .map_err(|e| e.to_string())?;
    ensure!(
        up.shape() == [1, 1, 224, 224],
        "decoder output {:?}",
        up.shape()
    );
    let img = Image::from_fn(224, 224, 1, |y, x, _| ((x * 5 + y * 11) % 31) as f64 / 30.0);
    let a = ToyEncoder::<f64>::seeded(ToyConfig::with_bits(16), 42).map_err(|e| e.to_string())?;
    let b = ToyEncoder::<f64>::seeded(ToyConfig::with_bits(16), 42).map_err(|e| e.to_string())?;
    let ea = a.encode(&img).map_err(|e| e.to_string())?;
    ensure!(
        ea == b.encode(&img).map_err(|e| e.to_string())?,
        "toy encoder not deterministic"
    );
    ensure!(ea.embedding.bits() == 16, "embedding length");
    Ok("ConvMSA, uniform attention, KAN, decoder 7->224, determinism".into())
}

fn persistence() -> Outcome {
    let mut r = rng(1010);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let records = (0..200).map(|i| GalleryRecord {
        id: format!("p{i}"),
        code: random_code(&mut r, 100),
        levels: vec![
            (0..5).map(|_| r.random_range(-1.0f32..1.0)).collect(),
            vec![r.random(), r.random()],
        ],
        label: i % 7,
    });
    let index = HashIndex::from_records(100, vec![5, 2], records).map_err(|e| e.to_string())?;
    let path = dir.path().join("i.acir");
    persist_index(&index, &path).map_err(|e| e.to_string())?;
    let back = load_index(&path).map_err(|e| e.to_string())?;
    ensure!(
        back == index && back.to_bytes() == std::fs::read(&path).unwrap(),
        "index round trip differs"
    );
    let mut bytes = std::fs::read(&path).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    ensure!(
        matches!(HashIndex::from_bytes(&bytes), Err(Error::ChecksumMismatch)),
        "corrupted index accepted"
    );
    let t = Tensor::new(
        vec![3, 4],
        (0..12).map(|_| r.random_range(-1e3f32..1e3)).collect(),
    )
    .unwrap();
    let tb = t.to_bytes();
    let t2 = Tensor::from_bytes(&tb).map_err(|e| e.to_string())?;
    ensure!(
        t2.to_bytes() == tb && t2.dims() == t.dims(),
        "tensor round trip differs"
    );
    let mut tc = tb.clone();
    let last = tc.len() - 1;
    tc[last] ^= 0x80;
    ensure!(
        matches!(Tensor::from_bytes(&tc), Err(Error::ChecksumMismatch)),
        "corrupted tensor accepted"
    );

    let root = dir.path();
    let corpus = support::write_corpus(root, 50, 17);
    support::build_pipeline(root, &corpus, "16");
    let o = support::cbir(
        root,
        &["query", "--image", corpus.duplicate.to_str().unwrap()],
    );
    ensure!(
        o.status.success(),
        "duplicate query failed: {}",
        support::stderr(&o)
    );
    let hits = support::parse_hits(&support::stdout(&o));
    ensure!(
        hits.first()
            .is_some_and(|h| h.0 == 1 && h.1 == corpus.duplicate_of && h.2 == 0),
        "rank 1 is {:?}",
        hits.first()
    );
    let o = support::cbir(root, &["query", "--image", corpus.noise.to_str().unwrap()]);
    ensure!(
        o.status.code() == Some(2),
        "noise query exited {:?}",
        o.status.code()
    );
    Ok("index/tensor bit-exact, CRC enforced, CLI duplicate rank 1 and noise exit 2".into())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("gradient correctness", gradient_correctness),
        ("loss drives separation", loss_drives_separation),
        ("unit-consistency degeneracy", degeneracy),
        ("search exactness", search_exactness),
        ("MS-SSIM", ms_ssim_checks),
        ("calibration soundness", calibration_soundness),
        ("radius rule", radius_rule),
        ("metric monotonicity", metric_monotonicity),
        ("architecture invariants", architecture_invariants),
        ("persistence and CLI pipeline", persistence),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {why}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
