//! `eval`: retrieval metrics over the indexed gallery.

use std::path::Path;

use anyhow::{bail, Context, Result};
use cbir_core::eval::{EvalQuery, EvalReport};
use cbir_core::index::load_index;
use cbir_core::OodCalibration;

use crate::config::PipelineConfig;
use crate::gallery::{load_features, read_manifest, GalleryMeta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ReportFormat {
    Table,
    Kv,
}

/// Queries come from `queries` (an ingested directory) or, by default, from
/// the gallery itself with each query's own record left out.
pub fn run(
    cfg: &PipelineConfig,
    queries: Option<&Path>,
    ood: Option<&Path>,
    top_k: usize,
    format: ReportFormat,
) -> Result<String> {
    let index =
        load_index(&cfg.index).with_context(|| format!("loading {}", cfg.index.display()))?;
    let query_set: Vec<EvalQuery> = match queries {
        Some(dir) => {
            let meta = GalleryMeta::read(dir)?;
            if meta.bits != index.bits() {
                bail!(
                    "query set has {} bits, index has {}",
                    meta.bits,
                    index.bits()
                );
            }
            read_manifest(dir)?
                .into_iter()
                .map(|row| {
                    Ok(EvalQuery {
                        id: None,
                        features: load_features(dir, &meta, &row.id)?,
                        label: row.label,
                    })
                })
                .collect::<Result<_>>()?
        }
        None => index
            .records()
            .iter()
            .map(|r| EvalQuery {
                id: Some(r.id.clone()),
                features: cbir_core::QueryFeatures {
                    code: r.code.clone(),
                    levels: r.levels.clone(),
                },
                label: r.label,
            })
            .collect(),
    };
    let flags = match ood {
        Some(dir) => {
            let text = std::fs::read_to_string(&cfg.calibration)
                .with_context(|| format!("reading {}", cfg.calibration.display()))?;
            let cal = OodCalibration::from_text(&text)?;
            let flags: Vec<bool> = read_manifest(dir)?
                .iter()
                .filter_map(|r| r.residual)
                .map(|r| cal.is_ood(r))
                .collect();
            if flags.is_empty() {
                bail!("{} has no residuals to test", dir.display());
            }
            Some(flags)
        }
        None => None,
    };
    let report = EvalReport::<f64>::compute(&query_set, &index, top_k, None, flags.as_deref())?;
    Ok(match format {
        ReportFormat::Table => report.to_table(),
        ReportFormat::Kv => report.to_key_values(),
    })
}
