//! Binary-code gallery with exact Hamming-ball search and content-guided
//! ranking.

mod persist;

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};

use log::warn;

use crate::code::{hamming_distance, hamming_words, BinaryCode};
use crate::embedding::pearson_similarity;
use crate::error::{Error, Result};

pub use persist::{load_index, persist_index, INDEX_FORMAT_VERSION, INDEX_MAGIC};

/// One indexed image.
#[derive(Debug, Clone, PartialEq)]
pub struct GalleryRecord {
    pub id: String,
    pub code: BinaryCode,
    /// Multilevel embeddings, one vector per encoder level.
    pub levels: Vec<Vec<f32>>,
    pub label: u32,
}

/// Code and multilevel embeddings of a query.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryFeatures {
    pub code: BinaryCode,
    pub levels: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub id: String,
    pub distance: u32,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RetrievalResult {
    pub hits: Vec<Hit>,
    /// Set by callers that gate queries before ranking.
    pub ood: bool,
}

/// Exact index over packed codes. Search is a linear popcount scan.
#[derive(Debug, Clone, PartialEq)]
pub struct HashIndex {
    bits: usize,
    level_dims: Vec<usize>,
    records: Vec<GalleryRecord>,
    ids: HashSet<String>,
}

impl HashIndex {
    pub fn new(bits: usize, level_dims: Vec<usize>) -> Self {
        Self {
            bits,
            level_dims,
            records: Vec::new(),
            ids: HashSet::new(),
        }
    }

    pub fn from_records(
        bits: usize,
        level_dims: Vec<usize>,
        records: impl IntoIterator<Item = GalleryRecord>,
    ) -> Result<Self> {
        let mut index = Self::new(bits, level_dims);
        for r in records {
            index.insert(r)?;
        }
        Ok(index)
    }

    pub fn insert(&mut self, record: GalleryRecord) -> Result<()> {
        if record.code.bits() != self.bits {
            return Err(Error::BitWidthMismatch {
                left: self.bits,
                right: record.code.bits(),
            });
        }
        let dims: Vec<usize> = record.levels.iter().map(Vec::len).collect();
        if dims != self.level_dims {
            return Err(Error::Shape(format!(
                "record {} has level dims {dims:?}, index uses {:?}",
                record.id, self.level_dims
            )));
        }
        if !self.ids.insert(record.id.clone()) {
            return Err(Error::InvalidParameter(format!(
                "duplicate record id {}",
                record.id
            )));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn level_dims(&self) -> &[usize] {
        &self.level_dims
    }

    pub fn records(&self) -> &[GalleryRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&GalleryRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    fn check_query(&self, code: &BinaryCode) -> Result<()> {
        if code.bits() != self.bits {
            return Err(Error::BitWidthMismatch {
                left: self.bits,
                right: code.bits(),
            });
        }
        Ok(())
    }

    /// Positions of all records within Hamming distance `radius`, with their
    /// distances, in insertion order.
    pub fn search_ball_positions(
        &self,
        query: &BinaryCode,
        radius: u32,
    ) -> Result<Vec<(usize, u32)>> {
        self.check_query(query)?;
        Ok(self
            .records
            .iter()
            .enumerate()
            .filter_map(|(i, r)| {
                let d = hamming_words(query.words(), r.code.words());
                (d <= radius).then_some((i, d))
            })
            .collect())
    }

    /// Ids of all records within Hamming distance `radius` of `query`.
    pub fn search_ball(&self, query: &BinaryCode, radius: u32) -> Result<Vec<&str>> {
        Ok(self
            .search_ball_positions(query, radius)?
            .into_iter()
            .map(|(i, _)| self.records[i].id.as_str())
            .collect())
    }

    /// Per-class centre codes over the indexed records.
    pub fn hash_centres(&self) -> BTreeMap<u32, BinaryCode> {
        let mut groups: BTreeMap<u32, Vec<&BinaryCode>> = BTreeMap::new();
        for r in &self.records {
            groups.entry(r.label).or_default().push(&r.code);
        }
        groups
            .into_iter()
            .map(|(label, codes)| (label, majority_code(self.bits, &codes)))
            .collect()
    }

    /// Candidates from the Hamming ball, ordered by distance ascending,
    /// content similarity descending and id ascending, truncated to `k`.
    pub fn ranked_retrieve(
        &self,
        query: &QueryFeatures,
        k: usize,
        radius: u32,
    ) -> Result<RetrievalResult> {
        self.ranked_retrieve_excluding(query, k, radius, None)
    }

    /// Same as [`Self::ranked_retrieve`], skipping the record `exclude`
    /// (leave-one-out evaluation).
    pub fn ranked_retrieve_excluding(
        &self,
        query: &QueryFeatures,
        k: usize,
        radius: u32,
        exclude: Option<&str>,
    ) -> Result<RetrievalResult> {
        let mut hits = Vec::new();
        for (i, distance) in self.search_ball_positions(&query.code, radius)? {
            let r = &self.records[i];
            if exclude == Some(r.id.as_str()) {
                continue;
            }
            let similarity = content_similarity(&query.levels, &r.levels)?;
            hits.push(Hit {
                id: r.id.clone(),
                distance,
                similarity,
            });
        }
        hits.sort_by(rank_order);
        hits.truncate(k);
        Ok(RetrievalResult { hits, ood: false })
    }
}

/// Total order used for ranking.
pub fn rank_order(a: &Hit, b: &Hit) -> Ordering {
    a.distance
        .cmp(&b.distance)
        .then_with(|| b.similarity.total_cmp(&a.similarity))
        .then_with(|| a.id.cmp(&b.id))
}

/// Sign of the mean of the +/-1 codes, ties resolved to bit 1.
fn majority_code(bits: usize, codes: &[&BinaryCode]) -> BinaryCode {
    let mut votes = vec![0i64; bits];
    for c in codes {
        for (k, b) in c.iter().enumerate() {
            votes[k] += if b { 1 } else { -1 };
        }
    }
    let signs: Vec<bool> = votes.iter().map(|&v| v >= 0).collect();
    BinaryCode::from_bits(&signs)
}

/// Centre code of every class `0..num_classes`.
pub fn hash_centres(
    codes: &[BinaryCode],
    labels: &[u32],
    num_classes: usize,
) -> Result<Vec<BinaryCode>> {
    if codes.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: codes.len(),
            right: labels.len(),
        });
    }
    let bits = codes.first().map_or(0, BinaryCode::bits);
    (0..num_classes as u32)
        .map(|class| {
            let members: Vec<&BinaryCode> = codes
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == class)
                .map(|(c, _)| c)
                .collect();
            if members.is_empty() {
                return Err(Error::EmptyClass(class));
            }
            if let Some(bad) = members.iter().find(|c| c.bits() != bits) {
                return Err(Error::BitWidthMismatch {
                    left: bits,
                    right: bad.bits(),
                });
            }
            Ok(majority_code(bits, &members))
        })
        .collect()
}

/// Mean Pearson similarity over matching levels. A level with zero variance
/// contributes 0.
pub fn content_similarity(query: &[Vec<f32>], record: &[Vec<f32>]) -> Result<f64> {
    if query.len() != record.len() {
        return Err(Error::LengthMismatch {
            left: query.len(),
            right: record.len(),
        });
    }
    if query.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (q, r) in query.iter().zip(record) {
        let q: Vec<f64> = q.iter().map(|&v| f64::from(v)).collect();
        let r: Vec<f64> = r.iter().map(|&v| f64::from(v)).collect();
        total += match pearson_similarity(&q, &r) {
            Ok(s) => s,
            Err(Error::ZeroVariance) => {
                warn!("constant embedding level; similarity treated as 0");
                0.0
            }
            Err(e) => return Err(e),
        };
    }
    Ok(total / query.len() as f64)
}

/// Nearest centre by Hamming distance, ties to the smallest class id.
pub fn nearest_centre(
    code: &BinaryCode,
    centres: &BTreeMap<u32, BinaryCode>,
) -> Result<Option<(u32, u32)>> {
    let mut best: Option<(u32, u32)> = None;
    for (&label, centre) in centres {
        let d = hamming_distance(code, centre)?;
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((label, d));
        }
    }
    Ok(best)
}
