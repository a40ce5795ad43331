//! Retrieval metrics: AP@K, mAP / maAP, precision and recall inside a
//! Hamming radius, and OOD detection rate.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::code::BinaryCode;
use crate::error::{Error, Result};
use crate::index::{nearest_centre, HashIndex, QueryFeatures};
use crate::scalar::Scalar;

/// Number of retrieved items assessed per query by default.
pub const DEFAULT_TOP_K: usize = 100;

/// Average precision over the first `k` ranked items, normalised by the
/// number of relevant items inside that window; 0 when there are none.
pub fn average_precision_at_k<T: Scalar, L: PartialEq>(ranked: &[L], query: &L, k: usize) -> T {
    let mut hits = 0usize;
    let mut sum = T::zero();
    for (i, label) in ranked.iter().take(k).enumerate() {
        if label == query {
            hits += 1;
            sum += T::from_usize_lossy(hits) / T::from_usize_lossy(i + 1);
        }
    }
    if hits == 0 {
        T::zero()
    } else {
        sum / T::from_usize_lossy(hits)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalQuery {
    /// When set, a gallery record with this id is skipped (leave-one-out).
    pub id: Option<String>,
    pub features: QueryFeatures,
    pub label: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapReport<T> {
    pub per_query: Vec<T>,
    pub per_class: BTreeMap<u32, T>,
    pub map: T,
    pub maap: T,
}

/// Mean AP over queries and macro AP (mean of per-class mean AP), with
/// rankings produced by content-guided retrieval over the whole gallery.
pub fn map_maap<T: Scalar>(
    queries: &[EvalQuery],
    gallery: &HashIndex,
    k: usize,
) -> Result<MapReport<T>> {
    if queries.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let labels: BTreeMap<&str, u32> = gallery
        .records()
        .iter()
        .map(|r| (r.id.as_str(), r.label))
        .collect();
    let radius = gallery.bits() as u32;
    let mut per_query = Vec::with_capacity(queries.len());
    let mut by_class: BTreeMap<u32, Vec<T>> = gallery
        .records()
        .iter()
        .map(|r| (r.label, Vec::new()))
        .collect();
    for q in queries {
        let res = gallery.ranked_retrieve_excluding(&q.features, k, radius, q.id.as_deref())?;
        let ranked: Vec<u32> = res.hits.iter().map(|h| labels[h.id.as_str()]).collect();
        let ap = average_precision_at_k::<T, _>(&ranked, &q.label, k);
        per_query.push(ap);
        by_class.entry(q.label).or_default().push(ap);
    }
    let mut per_class = BTreeMap::new();
    for (label, aps) in by_class {
        if aps.is_empty() {
            return Err(Error::EmptyClass(label));
        }
        per_class.insert(label, mean(&aps));
    }
    let maap = mean(&per_class.values().copied().collect::<Vec<_>>());
    Ok(MapReport {
        map: mean(&per_query),
        maap,
        per_query,
        per_class,
    })
}

fn mean<T: Scalar>(v: &[T]) -> T {
    v.iter().copied().sum::<T>() / T::from_usize_lossy(v.len())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadiusMetrics<T> {
    pub radius: u32,
    pub accuracy: T,
    pub precision: T,
    pub recall: T,
}

/// Ball membership as the prediction: for each query every gallery record
/// within `radius` is predicted relevant. Precision and recall are pooled
/// per class and macro-averaged over the classes that have queries; a class
/// with no predictions has precision 0. Accuracy counts queries whose
/// nearest class centre is their own class and lies within `radius`.
pub fn precision_recall_at_radius<T: Scalar>(
    queries: &[EvalQuery],
    gallery: &HashIndex,
    radius: u32,
) -> Result<RadiusMetrics<T>> {
    if queries.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let centres = gallery.hash_centres();
    let mut class_size: BTreeMap<u32, usize> = BTreeMap::new();
    for r in gallery.records() {
        *class_size.entry(r.label).or_default() += 1;
    }
    // (tp, predicted, relevant) per query class
    let mut pooled: BTreeMap<u32, (usize, usize, usize)> = BTreeMap::new();
    let mut correct = 0usize;
    for q in queries {
        let mut tp = 0;
        let mut predicted = 0;
        let mut relevant = class_size.get(&q.label).copied().unwrap_or(0);
        for (i, _) in gallery.search_ball_positions(&q.features.code, radius)? {
            let r = &gallery.records()[i];
            if q.id.as_deref() == Some(r.id.as_str()) {
                continue;
            }
            predicted += 1;
            if r.label == q.label {
                tp += 1;
            }
        }
        if q.id
            .as_deref()
            .and_then(|id| gallery.get(id))
            .is_some_and(|r| r.label == q.label)
        {
            relevant -= 1;
        }
        let e = pooled.entry(q.label).or_default();
        e.0 += tp;
        e.1 += predicted;
        e.2 += relevant;
        if let Some((label, d)) = nearest_centre(&q.features.code, &centres)? {
            if label == q.label && d <= radius {
                correct += 1;
            }
        }
    }
    let ratio = |a: usize, b: usize| {
        if b == 0 {
            T::zero()
        } else {
            T::from_usize_lossy(a) / T::from_usize_lossy(b)
        }
    };
    let precisions: Vec<T> = pooled.values().map(|&(tp, p, _)| ratio(tp, p)).collect();
    let recalls: Vec<T> = pooled.values().map(|&(tp, _, r)| ratio(tp, r)).collect();
    Ok(RadiusMetrics {
        radius,
        accuracy: ratio(correct, queries.len()),
        precision: mean(&precisions),
        recall: mean(&recalls),
    })
}

/// Fraction of true-OOD queries that were flagged.
pub fn ood_detection_rate<T: Scalar>(flags: &[bool]) -> Result<T> {
    if flags.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let detected = flags.iter().filter(|&&f| f).count();
    Ok(T::from_usize_lossy(detected) / T::from_usize_lossy(flags.len()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport<T> {
    pub top_k: usize,
    pub map: T,
    pub maap: T,
    pub per_class_ap: BTreeMap<u32, T>,
    pub radius_table: Vec<RadiusMetrics<T>>,
    pub ood_detection_rate: Option<T>,
}

impl<T: Scalar> EvalReport<T> {
    /// Runs every metric; `radii` defaults to `0..=K`.
    pub fn compute(
        queries: &[EvalQuery],
        gallery: &HashIndex,
        top_k: usize,
        radii: Option<&[u32]>,
        ood_flags: Option<&[bool]>,
    ) -> Result<Self> {
        let maps = map_maap::<T>(queries, gallery, top_k)?;
        let all: Vec<u32> = (0..=gallery.bits() as u32).collect();
        let radius_table = radii
            .unwrap_or(&all)
            .iter()
            .map(|&r| precision_recall_at_radius(queries, gallery, r))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            top_k,
            map: maps.map,
            maap: maps.maap,
            per_class_ap: maps.per_class,
            radius_table,
            ood_detection_rate: ood_flags.map(ood_detection_rate).transpose()?,
        })
    }

    /// `key=value` lines for diffing.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "top_k={}", self.top_k);
        let _ = writeln!(s, "map={:.6}", self.map);
        let _ = writeln!(s, "maap={:.6}", self.maap);
        for (label, ap) in &self.per_class_ap {
            let _ = writeln!(s, "ap.class.{label}={ap:.6}");
        }
        for m in &self.radius_table {
            let _ = writeln!(s, "radius.{}.accuracy={:.6}", m.radius, m.accuracy);
            let _ = writeln!(s, "radius.{}.precision={:.6}", m.radius, m.precision);
            let _ = writeln!(s, "radius.{}.recall={:.6}", m.radius, m.recall);
        }
        if let Some(rate) = self.ood_detection_rate {
            let _ = writeln!(s, "ood_detection_rate={rate:.6}");
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mAP@{}  {:.4}", self.top_k, self.map);
        let _ = writeln!(s, "maAP@{} {:.4}", self.top_k, self.maap);
        let _ = writeln!(s, "\nclass  AP");
        for (label, ap) in &self.per_class_ap {
            let _ = writeln!(s, "{label:>5}  {ap:.4}");
        }
        let _ = writeln!(s, "\nradius  accuracy  precision  recall");
        for m in &self.radius_table {
            let _ = writeln!(
                s,
                "{:>6}  {:>8.4}  {:>9.4}  {:>6.4}",
                m.radius, m.accuracy, m.precision, m.recall
            );
        }
        if let Some(rate) = self.ood_detection_rate {
            let _ = writeln!(s, "\nOOD detection rate {rate:.4}");
        }
        s
    }
}

/// Convenience for building queries from codes without content levels.
pub fn code_query(code: BinaryCode, label: u32) -> EvalQuery {
    EvalQuery {
        id: None,
        features: QueryFeatures {
            code,
            levels: Vec::new(),
        },
        label,
    }
}
