//! `index`, `calibrate`, `query` and `encode`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use cbir_core::index::{load_index, persist_index, INDEX_FORMAT_VERSION};
use cbir_core::io::Tensor;
use cbir_core::ood::calibrate_threshold;
use cbir_core::{HashIndex, OodCalibration, RetrievalResult};
use log::{info, warn};

use crate::config::PipelineConfig;
use crate::gallery::{
    encode_image, load_encoder, load_feature_files, load_image, load_records, read_manifest,
    seeded_encoder, write_tensor, GalleryMeta,
};

pub fn build_index(cfg: &PipelineConfig) -> Result<String> {
    let (meta, records) = load_records(&cfg.gallery)?;
    let n = records.len();
    let index = HashIndex::from_records(meta.bits, meta.level_dims, records)?;
    persist_index(&index, &cfg.index)
        .with_context(|| format!("writing {}", cfg.index.display()))?;
    info!("indexed {n} records into {}", cfg.index.display());
    Ok(format!("records={n}\nbits={}\n", index.bits()))
}

pub fn index_info(cfg: &PipelineConfig) -> Result<String> {
    let index = read_index(&cfg.index)?;
    let mut classes: BTreeMap<u32, usize> = BTreeMap::new();
    for r in index.records() {
        *classes.entry(r.label).or_default() += 1;
    }
    let dims: Vec<String> = index.level_dims().iter().map(usize::to_string).collect();
    let counts: Vec<String> = classes.iter().map(|(l, c)| format!("{l}:{c}")).collect();
    Ok(format!(
        "format_version={INDEX_FORMAT_VERSION}\nbits={}\nrecords={}\nlevel_dims={}\nclasses={}\n",
        index.bits(),
        index.len(),
        dims.join(","),
        counts.join(",")
    ))
}

fn read_index(path: &Path) -> Result<HashIndex> {
    load_index(path).with_context(|| format!("loading index {}", path.display()))
}

fn read_calibration(path: &Path) -> Result<OodCalibration> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading calibration {}", path.display()))?;
    OodCalibration::from_text(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Threshold from the residuals recorded in `source` (the gallery unless
/// another ingested directory is given).
pub fn calibrate(cfg: &PipelineConfig, source: Option<&Path>) -> Result<String> {
    let dir = source.unwrap_or(&cfg.gallery);
    let meta = GalleryMeta::read(dir)?;
    let residuals: Vec<f64> = read_manifest(dir)?
        .iter()
        .filter_map(|r| r.residual)
        .collect();
    let label = if source.is_some() {
        dir.display().to_string()
    } else {
        "gallery".to_owned()
    };
    let cal = calibrate_threshold(&residuals, meta.metric)
        .with_context(|| format!("calibrating on {}", dir.display()))?
        .with_source(label);
    let text = cal.to_text();
    std::fs::write(&cfg.calibration, &text)
        .with_context(|| format!("writing {}", cfg.calibration.display()))?;
    info!("calibrated on {} residuals, tau={}", cal.count, cal.tau);
    Ok(text)
}

pub enum QueryInput<'a> {
    Image(&'a Path),
    Embedding { hash: &'a Path, levels: &'a Path },
}

pub enum QueryOutcome {
    Ranked(RetrievalResult),
    Ood { residual: f64, tau: f64 },
}

pub fn query(
    cfg: &PipelineConfig,
    input: QueryInput<'_>,
    k: usize,
    exclude: Option<&str>,
) -> Result<QueryOutcome> {
    let meta = GalleryMeta::read(&cfg.gallery)?;
    let index = read_index(&cfg.index)?;
    if index.bits() != meta.bits {
        bail!("index has {} bits, gallery has {}", index.bits(), meta.bits);
    }
    let features = match input {
        QueryInput::Image(path) => {
            let cal = read_calibration(&cfg.calibration)?;
            if cal.metric != meta.metric {
                bail!(
                    "calibration uses {}, gallery residuals use {}",
                    cal.metric,
                    meta.metric
                );
            }
            let encoder = load_encoder(&cfg.gallery, &meta)?;
            let encoded = encode_image(&encoder, &meta, &load_image(path)?)?;
            info!("residual {} (tau {})", encoded.residual, cal.tau);
            if cal.is_ood(encoded.residual) {
                warn!("query is out of distribution; ranking skipped");
                return Ok(QueryOutcome::Ood {
                    residual: encoded.residual,
                    tau: cal.tau,
                });
            }
            encoded.features()
        }
        QueryInput::Embedding { hash, levels } => {
            info!("embedding query: no reconstruction, residual gate skipped");
            load_feature_files(hash, levels, &meta)?
        }
    };
    let radius = cfg.radius.resolve(index.bits());
    let result = index.ranked_retrieve_excluding(&features, k, radius, exclude)?;
    info!("{} hits within radius {radius}", result.hits.len());
    Ok(QueryOutcome::Ranked(result))
}

pub fn format_hits(result: &RetrievalResult) -> String {
    let mut s = String::from("rank\tid\thamming\tsimilarity\n");
    for (i, h) in result.hits.iter().enumerate() {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{:.6}",
            i + 1,
            h.id,
            h.distance,
            h.similarity
        );
    }
    s
}

/// Encodes one image with the gallery encoder (or a freshly seeded one when
/// no gallery exists) and optionally writes `<prefix>.hash.acirt` and
/// `<prefix>.levels.acirt`.
pub fn encode(cfg: &PipelineConfig, image_path: &Path, out: Option<&Path>) -> Result<String> {
    let image = load_image(image_path)?;
    let (meta, encoder) = match GalleryMeta::read(&cfg.gallery) {
        Ok(meta) => {
            let enc = load_encoder(&cfg.gallery, &meta)?;
            (meta, enc)
        }
        Err(_) => {
            info!(
                "no gallery at {}; using seeded weights",
                cfg.gallery.display()
            );
            let meta = GalleryMeta {
                bits: cfg.bits,
                channels: image.channels(),
                image_size: cfg.image_size,
                fingerprint_size: cfg.fingerprint_size,
                level_dims: cbir_core::encoder::ToyConfig::with_bits(cfg.bits).level_dims(),
                metric: cfg.ood_metric,
                seed: cfg.seed,
            };
            let (enc, _) = seeded_encoder(&meta)?;
            (meta, enc)
        }
    };
    let e = encode_image(&encoder, &meta, &image)?;
    if let Some(prefix) = out {
        let with = |suffix: &str| {
            let mut p = prefix.as_os_str().to_owned();
            p.push(suffix);
            std::path::PathBuf::from(p)
        };
        write_tensor(&with(".hash.acirt"), &Tensor::vector(e.hash.clone()))?;
        write_tensor(&with(".levels.acirt"), &Tensor::vector(e.levels.concat()))?;
    }
    let dims: Vec<String> = e.levels.iter().map(|l| l.len().to_string()).collect();
    let hash: Vec<String> = e.hash.iter().map(f32::to_string).collect();
    Ok(format!(
        "bits={}\ncode={}\nresidual={}\nmetric={}\nlevel_dims={}\nhash={}\n",
        meta.bits,
        e.code(),
        e.residual,
        meta.metric,
        dims.join(","),
        hash.join(",")
    ))
}
