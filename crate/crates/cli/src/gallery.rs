//! On-disk gallery produced by `ingest`:
//!
//! ```text
//! meta.txt            key=value encoder and code settings
//! manifest.csv        id,label,residual (residual empty for precomputed inputs)
//! weights.acirt       flat encoder weights
//! <id>.hash.acirt     pre-quantisation embedding, length K
//! <id>.levels.acirt   multilevel embeddings, concatenated
//! <id>.fp.acirt       F x F fingerprint (image inputs only)
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use cbir_core::encoder::ToyConfig;
use cbir_core::image::Image;
use cbir_core::io::{read_pnm, Tensor};
use cbir_core::ood::{reconstruction_residual, MsSsimParams};
use cbir_core::pairing::{make_fingerprint, Fingerprint};
use cbir_core::{
    sign_quantise, BinaryCode, GalleryRecord, QueryFeatures, ResidualMetric, ToyEncoder,
};

pub const META_FILE: &str = "meta.txt";
pub const MANIFEST_FILE: &str = "manifest.csv";
pub const WEIGHTS_FILE: &str = "weights.acirt";

#[derive(Debug, Clone, PartialEq)]
pub struct GalleryMeta {
    pub bits: usize,
    pub channels: usize,
    pub image_size: usize,
    pub fingerprint_size: usize,
    pub level_dims: Vec<usize>,
    pub metric: ResidualMetric,
    pub seed: u64,
}

impl GalleryMeta {
    pub fn to_text(&self) -> String {
        let dims: Vec<String> = self.level_dims.iter().map(usize::to_string).collect();
        format!(
            "bits={}\nchannels={}\nimage_size={}\nfingerprint_size={}\nlevel_dims={}\nmetric={}\nseed={}\n",
            self.bits,
            self.channels,
            self.image_size,
            self.fingerprint_size,
            dims.join(","),
            self.metric,
            self.seed
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("malformed meta line {line:?}"))?;
            kv.insert(k.to_owned(), v.to_owned());
        }
        let mut take = |k: &str| kv.remove(k).ok_or_else(|| anyhow!("meta is missing {k}"));
        let num = |v: String, k: &str| -> Result<usize> {
            v.parse().with_context(|| format!("meta {k}={v:?}"))
        };
        let meta = Self {
            bits: num(take("bits")?, "bits")?,
            channels: num(take("channels")?, "channels")?,
            image_size: num(take("image_size")?, "image_size")?,
            fingerprint_size: num(take("fingerprint_size")?, "fingerprint_size")?,
            level_dims: take("level_dims")?
                .split(',')
                .filter(|s| !s.is_empty())
                .map(|s| num(s.to_owned(), "level_dims"))
                .collect::<Result<_>>()?,
            metric: take("metric")?.parse()?,
            seed: take("seed")?.parse().context("meta seed")?,
        };
        if let Some(k) = kv.keys().next() {
            bail!("unknown meta key {k:?}");
        }
        Ok(meta)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(META_FILE);
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading {}", path.display()))?;
        Self::from_text(&text)
    }

    pub fn toy_config(&self) -> ToyConfig {
        ToyConfig::with_bits(self.bits).for_channels(self.channels)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub id: String,
    pub label: u32,
    pub residual: Option<f64>,
}

pub fn write_manifest(dir: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut s = String::from("id,label,residual\n");
    for r in rows {
        let res = r.residual.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{},{}", r.id, r.label, res);
    }
    write_if_changed(&dir.join(MANIFEST_FILE), s.as_bytes())
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestRow>> {
    let path = dir.join(MANIFEST_FILE);
    let mut reader =
        csv::Reader::from_path(&path).with_context(|| format!("opening {}", path.display()))?;
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["id", "label", "residual"] {
        bail!("{}: expected header id,label,residual", path.display());
    }
    reader
        .records()
        .map(|rec| {
            let rec = rec?;
            let residual = match rec[2].trim() {
                "" => None,
                v => Some(v.parse().with_context(|| format!("residual {v:?}"))?),
            };
            Ok(ManifestRow {
                id: rec[0].to_owned(),
                label: rec[1]
                    .parse()
                    .with_context(|| format!("label {:?}", &rec[1]))?,
                residual,
            })
        })
        .collect()
}

/// `id,label` rows keyed by id.
pub fn read_labels(path: &Path) -> Result<BTreeMap<String, u32>> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("opening labels {}", path.display()))?;
    let headers = reader.headers()?.clone();
    if headers.len() < 2 || &headers[0] != "id" || &headers[1] != "label" {
        bail!("{}: labels CSV needs an `id,label` header", path.display());
    }
    let mut labels = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec?;
        let label = rec[1]
            .trim()
            .parse()
            .with_context(|| format!("{}: bad label {:?}", path.display(), &rec[1]))?;
        if labels.insert(rec[0].trim().to_owned(), label).is_some() {
            bail!("{}: duplicate id {:?}", path.display(), &rec[0]);
        }
    }
    Ok(labels)
}

pub fn hash_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.hash.acirt"))
}

pub fn levels_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.levels.acirt"))
}

pub fn fingerprint_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.fp.acirt"))
}

/// Skips the write when the file already holds these bytes, so re-running a
/// pipeline leaves timestamps alone.
pub fn write_if_changed(path: &Path, bytes: &[u8]) -> Result<()> {
    if std::fs::read(path).is_ok_and(|old| old == bytes) {
        return Ok(());
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn write_tensor(path: &Path, tensor: &Tensor) -> Result<()> {
    write_if_changed(path, &tensor.to_bytes())
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    Tensor::read(path).with_context(|| format!("reading {}", path.display()))
}

/// Encoder whose weights went through the f32 weight file, so gallery and
/// query computations agree bit for bit.
pub fn seeded_encoder(meta: &GalleryMeta) -> Result<(ToyEncoder, Tensor)> {
    let enc = ToyEncoder::seeded(meta.toy_config(), meta.seed)?;
    let weights = Tensor::from_scalars(vec![enc.parameter_count()], &enc.to_flat())?;
    Ok((encoder_from_weights(meta, &weights)?, weights))
}

pub fn encoder_from_weights(meta: &GalleryMeta, weights: &Tensor) -> Result<ToyEncoder> {
    let mut enc = ToyEncoder::zeros(meta.toy_config())?;
    enc.load_flat(&weights.to_scalars::<f64>())
        .context("weight file does not match the gallery settings")?;
    Ok(enc)
}

pub fn load_encoder(dir: &Path, meta: &GalleryMeta) -> Result<ToyEncoder> {
    encoder_from_weights(meta, &read_tensor(&dir.join(WEIGHTS_FILE))?)
}

/// Everything derived from one image.
#[derive(Debug, Clone)]
pub struct Encoded {
    /// Embedding rounded to the stored f32 precision.
    pub hash: Vec<f32>,
    pub levels: Vec<Vec<f32>>,
    pub residual: f64,
    pub fingerprint: Fingerprint<f64>,
}

impl Encoded {
    pub fn code(&self) -> BinaryCode {
        sign_quantise(&self.hash)
    }

    pub fn features(&self) -> QueryFeatures {
        QueryFeatures {
            code: self.code(),
            levels: self.levels.clone(),
        }
    }
}

pub fn load_image(path: &Path) -> Result<Image<f64>> {
    read_pnm(path).with_context(|| format!("reading image {}", path.display()))
}

pub fn encode_image(enc: &ToyEncoder, meta: &GalleryMeta, image: &Image<f64>) -> Result<Encoded> {
    if image.channels() != meta.channels {
        bail!(
            "image has {} channels, gallery was built from {}-channel images",
            image.channels(),
            meta.channels
        );
    }
    let side = meta.image_size;
    let resized = if image.height() == side && image.width() == side {
        image.clone()
    } else {
        image.resize_area(side, side)?
    };
    let out = enc.encode(&resized)?;
    let reconstruction = enc.reconstruct(&out.deep, (side, side))?;
    let residual = reconstruction_residual(
        &resized,
        &reconstruction,
        meta.metric,
        &MsSsimParams::default(),
    )?;
    Ok(Encoded {
        hash: out.embedding.values().iter().map(|&v| v as f32).collect(),
        levels: out
            .levels
            .iter()
            .map(|l| l.iter().map(|&v| v as f32).collect())
            .collect(),
        residual,
        fingerprint: make_fingerprint(image, meta.fingerprint_size)?,
    })
}

pub fn split_levels(flat: &[f32], dims: &[usize]) -> Result<Vec<Vec<f32>>> {
    if flat.len() != dims.iter().sum::<usize>() {
        bail!(
            "levels file holds {} values, expected {} ({:?})",
            flat.len(),
            dims.iter().sum::<usize>(),
            dims
        );
    }
    let mut out = Vec::with_capacity(dims.len());
    let mut offset = 0;
    for &d in dims {
        out.push(flat[offset..offset + d].to_vec());
        offset += d;
    }
    Ok(out)
}

/// Code and levels stored for `id`.
pub fn load_features(dir: &Path, meta: &GalleryMeta, id: &str) -> Result<QueryFeatures> {
    load_feature_files(&hash_path(dir, id), &levels_path(dir, id), meta)
}

pub fn load_feature_files(hash: &Path, levels: &Path, meta: &GalleryMeta) -> Result<QueryFeatures> {
    let h = read_tensor(hash)?;
    if h.data().len() != meta.bits {
        bail!(
            "{} holds {} values, the gallery uses {} bits",
            hash.display(),
            h.data().len(),
            meta.bits
        );
    }
    Ok(QueryFeatures {
        code: sign_quantise(h.data()),
        levels: split_levels(read_tensor(levels)?.data(), &meta.level_dims)?,
    })
}

pub fn load_records(dir: &Path) -> Result<(GalleryMeta, Vec<GalleryRecord>)> {
    let meta = GalleryMeta::read(dir)?;
    let records = read_manifest(dir)?
        .into_iter()
        .map(|row| {
            let f = load_features(dir, &meta, &row.id)?;
            Ok(GalleryRecord {
                id: row.id,
                code: f.code,
                levels: f.levels,
                label: row.label,
            })
        })
        .collect::<Result<_>>()?;
    Ok((meta, records))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn meta_round_trips() {
        let meta = GalleryMeta {
            bits: 16,
            channels: 3,
            image_size: 64,
            fingerprint_size: 32,
            level_dims: vec![16, 32, 64, 128],
            metric: ResidualMetric::OneMinusMsSsim,
            seed: 7,
        };
        assert_eq!(GalleryMeta::from_text(&meta.to_text()).unwrap(), meta);
        assert!(GalleryMeta::from_text(&format!("{}extra=1\n", meta.to_text())).is_err());
    }

    #[test]
    fn labels_need_a_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels.csv");
        std::fs::write(&p, "a,0\nb,1\n").unwrap();
        assert!(read_labels(&p).is_err());
        std::fs::write(&p, "id,label\na,0\nb,1\n").unwrap();
        assert_eq!(read_labels(&p).unwrap().len(), 2);
    }

    #[test]
    fn levels_split_by_dims() {
        let flat: Vec<f32> = (0..6).map(|v| v as f32).collect();
        let parts = split_levels(&flat, &[2, 4]).unwrap();
        assert_eq!(parts, vec![vec![0.0, 1.0], vec![2.0, 3.0, 4.0, 5.0]]);
        assert!(split_levels(&flat, &[2, 3]).is_err());
    }
}
