//! `ingest`: dataset directory to gallery directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cbir_core::io::Tensor;
use log::{info, warn};
use rayon::prelude::*;

use crate::config::PipelineConfig;
use crate::gallery::{
    encode_image, fingerprint_path, hash_path, levels_path, load_image, read_labels, read_tensor,
    seeded_encoder, write_if_changed, write_manifest, write_tensor, GalleryMeta, ManifestRow,
    META_FILE, WEIGHTS_FILE,
};

enum Source {
    Image(PathBuf),
    /// `<id>.hash.acirt` and `<id>.levels.acirt` supplied by the caller.
    Precomputed {
        hash: PathBuf,
        levels: PathBuf,
    },
}

fn scan(dir: &Path) -> Result<BTreeMap<String, Source>> {
    let mut found = BTreeMap::new();
    let entries = std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))?;
    let mut hashes = Vec::new();
    for entry in entries {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Some(id) = name.strip_suffix(".hash.acirt") {
            hashes.push((id.to_owned(), path.clone()));
            continue;
        }
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("pgm" | "ppm")) {
            let id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_owned();
            if found.insert(id.clone(), Source::Image(path)).is_some() {
                bail!("two images share the id {id:?}");
            }
        }
    }
    for (id, hash) in hashes {
        if found.contains_key(&id) {
            bail!("{id:?} has both an image and a precomputed embedding");
        }
        let levels = dir.join(format!("{id}.levels.acirt"));
        if !levels.exists() {
            bail!("{} has no matching {}", hash.display(), levels.display());
        }
        found.insert(id, Source::Precomputed { hash, levels });
    }
    Ok(found)
}

pub fn run(
    cfg: &PipelineConfig,
    dataset: &Path,
    labels: Option<&Path>,
    out: &Path,
) -> Result<usize> {
    let labels_file = labels.map_or_else(|| dataset.join("labels.csv"), Path::to_path_buf);
    let labels = read_labels(&labels_file)?;
    let sources = scan(dataset)?;
    if sources.is_empty() {
        bail!(
            "no PGM/PPM images or precomputed embeddings in {}",
            dataset.display()
        );
    }
    for (id, src) in &sources {
        if !labels.contains_key(id) {
            let file = match src {
                Source::Image(p) => p.display().to_string(),
                Source::Precomputed { hash, .. } => hash.display().to_string(),
            };
            bail!(
                "label mismatch: {file} has no row in {}",
                labels_file.display()
            );
        }
    }
    let unused = labels
        .keys()
        .filter(|id| !sources.contains_key(*id))
        .count();
    if unused > 0 {
        warn!("{unused} label rows have no matching input");
    }

    let images: Vec<(&String, &PathBuf)> = sources
        .iter()
        .filter_map(|(id, s)| match s {
            Source::Image(p) => Some((id, p)),
            Source::Precomputed { .. } => None,
        })
        .collect();
    let loaded: Vec<_> = images
        .par_iter()
        .map(|(_, p)| load_image(p))
        .collect::<Result<_>>()?;
    let channels = loaded.first().map_or(1, |img| img.channels());
    if let Some((i, _)) = loaded
        .iter()
        .enumerate()
        .find(|(_, img)| img.channels() != channels)
    {
        bail!(
            "{} has a different channel count from the other images",
            images[i].1.display()
        );
    }

    let meta = GalleryMeta {
        bits: cfg.bits,
        channels,
        image_size: cfg.image_size,
        fingerprint_size: cfg.fingerprint_size,
        level_dims: cbir_core::encoder::ToyConfig::with_bits(cfg.bits).level_dims(),
        metric: cfg.ood_metric,
        seed: cfg.seed,
    };
    let (encoder, weights) = seeded_encoder(&meta)?;
    let encoded: Vec<_> = loaded
        .par_iter()
        .map(|img| encode_image(&encoder, &meta, img))
        .collect::<Result<_>>()?;

    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_if_changed(&out.join(META_FILE), meta.to_text().as_bytes())?;
    write_tensor(&out.join(WEIGHTS_FILE), &weights)?;

    let mut rows = Vec::with_capacity(sources.len());
    let mut by_id: BTreeMap<&String, _> = images.iter().map(|(id, _)| *id).zip(encoded).collect();
    let total_dims: usize = meta.level_dims.iter().sum();
    for (id, src) in &sources {
        let residual = match src {
            Source::Image(_) => {
                let e = by_id.remove(id).expect("every image was encoded");
                let fp = &e.fingerprint;
                write_tensor(&hash_path(out, id), &Tensor::vector(e.hash.clone()))?;
                let flat: Vec<f32> = e.levels.concat();
                write_tensor(&levels_path(out, id), &Tensor::vector(flat))?;
                write_tensor(
                    &fingerprint_path(out, id),
                    &Tensor::from_scalars(vec![fp.side(), fp.side()], fp.pixels())?,
                )?;
                Some(e.residual)
            }
            Source::Precomputed { hash, levels } => {
                let h = read_tensor(hash)?;
                let l = read_tensor(levels)?;
                if h.data().len() != meta.bits {
                    bail!(
                        "{} holds {} values, expected {}",
                        hash.display(),
                        h.data().len(),
                        meta.bits
                    );
                }
                if l.data().len() != total_dims {
                    bail!(
                        "{} holds {} values, expected {total_dims}",
                        levels.display(),
                        l.data().len()
                    );
                }
                write_tensor(&hash_path(out, id), &Tensor::vector(h.into_data()))?;
                write_tensor(&levels_path(out, id), &Tensor::vector(l.into_data()))?;
                None
            }
        };
        rows.push(ManifestRow {
            id: id.clone(),
            label: labels[id],
            residual,
        });
    }
    write_manifest(out, &rows)?;
    info!(
        "ingested {} records ({} images) into {}",
        rows.len(),
        images.len(),
        out.display()
    );
    Ok(rows.len())
}
