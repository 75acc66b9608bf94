//! Entity-level scoring and corpus evaluation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{DocumentSample, EntitySchema};
use crate::detector::match_boxes;
use crate::error::Result;
use crate::extractor::iob::EntityMap;
use crate::model::{DocModel, DocumentPrediction, ForwardMode};

/// How predicted and ground-truth strings are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchOptions {
    pub trim: bool,
    pub case_fold: bool,
}

impl Default for MatchOptions {
    fn default() -> Self {
        Self { trim: true, case_fold: true }
    }
}

impl MatchOptions {
    pub const EXACT: MatchOptions = MatchOptions { trim: false, case_fold: false };

    pub fn normalize(&self, s: &str) -> String {
        let s = if self.trim { s.trim() } else { s };
        if self.case_fold {
            s.to_lowercase()
        } else {
            s.to_string()
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        f1(self.precision(), self.recall())
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Harmonic mean with `0/0 = 0`.
pub fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Counts per entity for one document. Each prediction consumes the first
/// unmatched ground-truth instance with an equal normalised string.
/// Predictions under names missing from the schema are all false positives
/// and keyed by their own name.
pub fn count_document(pred: &EntityMap, gt: &EntityMap, schema: &EntitySchema, opts: MatchOptions) -> BTreeMap<String, Counts> {
    let mut out: BTreeMap<String, Counts> = schema.entity_names().iter().map(|n| (n.clone(), Counts::default())).collect();
    let empty = Vec::new();
    for name in schema.entity_names() {
        let p = pred.get(name).unwrap_or(&empty);
        let g = gt.get(name).unwrap_or(&empty);
        let mut pool: Vec<Option<String>> = g.iter().map(|s| Some(opts.normalize(s))).collect();
        let mut c = Counts::default();
        for s in p {
            let s = opts.normalize(s);
            match pool.iter_mut().find(|slot| slot.as_deref() == Some(s.as_str())) {
                Some(slot) => {
                    *slot = None;
                    c.tp += 1;
                }
                None => c.fp += 1,
            }
        }
        c.fn_ = pool.iter().filter(|s| s.is_some()).count();
        out.insert(name.clone(), c);
    }
    for (name, values) in pred {
        if !schema.entity_names().contains(name) && !values.is_empty() {
            log::warn!("prediction for unknown entity {name:?} counted as {} false positives", values.len());
            out.entry(name.clone()).or_default().fp += values.len();
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    #[serde(flatten)]
    pub counts: Counts,
}

impl From<Counts> for EntityScore {
    fn from(counts: Counts) -> Self {
        Self { precision: counts.precision(), recall: counts.recall(), f1: counts.f1(), counts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Schema entities, plus any unknown names that were predicted.
    pub per_entity: BTreeMap<String, EntityScore>,
    /// Scores over the summed counts of all entities.
    pub micro: EntityScore,
    /// Unweighted mean F1 over the schema entities.
    pub mean_f1: f64,
    pub documents: usize,
    pub fingerprint: String,
}

impl EvalReport {
    pub fn from_counts(counts: &BTreeMap<String, Counts>, schema: &EntitySchema, documents: usize, fingerprint: &str) -> Self {
        let mut total = Counts::default();
        counts.values().for_each(|c| total.add(*c));
        let per_entity: BTreeMap<String, EntityScore> = counts.iter().map(|(k, c)| (k.clone(), (*c).into())).collect();
        let names = schema.entity_names();
        let mean_f1 = if names.is_empty() {
            0.0
        } else {
            names.iter().map(|n| per_entity.get(n).map_or(0.0, |s| s.f1)).sum::<f64>() / names.len() as f64
        };
        Self { per_entity, micro: total.into(), mean_f1, documents, fingerprint: fingerprint.to_string() }
    }
}

/// Report for a single prediction/ground-truth pair.
pub fn score(pred: &EntityMap, gt: &EntityMap, schema: &EntitySchema, opts: MatchOptions) -> EvalReport {
    EvalReport::from_counts(&count_document(pred, gt, schema, opts), schema, 1, "")
}

/// Sums per-document counts.
#[derive(Debug, Clone, Default)]
pub struct Accumulator {
    counts: BTreeMap<String, Counts>,
    documents: usize,
}

impl Accumulator {
    pub fn add(&mut self, doc: BTreeMap<String, Counts>) {
        for (k, c) in doc {
            self.counts.entry(k).or_default().add(c);
        }
        self.documents += 1;
    }

    pub fn report(&self, schema: &EntitySchema, fingerprint: &str) -> EvalReport {
        let mut counts = self.counts.clone();
        for n in schema.entity_names() {
            counts.entry(n.clone()).or_default();
        }
        EvalReport::from_counts(&counts, schema, self.documents, fingerprint)
    }
}

/// A prediction for an entity that has no ground-truth value in its document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NullMismatch {
    pub document: String,
    pub entity: String,
    pub predicted: Vec<String>,
}

pub fn null_mismatches(document: &str, pred: &EntityMap, gt: &EntityMap) -> Vec<NullMismatch> {
    pred.iter()
        .filter(|(k, v)| !v.is_empty() && gt.get(*k).is_none_or(|g| g.is_empty()))
        .map(|(k, v)| NullMismatch { document: document.to_string(), entity: k.clone(), predicted: v.clone() })
        .collect()
}

/// Stable 64-bit FNV-1a digest, hex encoded.
pub fn fingerprint(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// Where the evaluated texts come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoxSource {
    /// Annotated boxes; isolates reading and extraction from detection.
    GroundTruth,
    /// Detector output; the full pipeline.
    Predicted,
}

#[derive(Debug, Clone)]
pub struct CorpusEval {
    pub report: EvalReport,
    /// Fraction of texts read exactly, with annotated boxes only.
    pub sequence_accuracy: Option<f64>,
    /// Fraction of annotated boxes matched at IoU 0.5, with detected boxes only.
    pub detection_recall: Option<f64>,
    pub null_mismatches: Vec<NullMismatch>,
    pub predictions: Vec<DocumentPrediction>,
}

pub const DETECTION_MATCH_IOU: f32 = 0.5;

pub fn evaluate(
    model: &DocModel<f32>,
    docs: &[DocumentSample],
    mode: ForwardMode,
    source: BoxSource,
    opts: MatchOptions,
    fingerprint: &str,
) -> Result<CorpusEval> {
    let mut acc = Accumulator::default();
    let mut mismatches = Vec::new();
    let mut predictions = Vec::with_capacity(docs.len());
    let (mut texts, mut exact, mut found) = (0usize, 0usize, 0usize);
    for doc in docs {
        let boxes = (source == BoxSource::GroundTruth).then_some(doc.boxes.as_slice());
        let pred = model.predict(&doc.image, boxes, mode)?;
        let gt = doc.ground_truth(&model.schema);
        let map = pred.entity_map();
        acc.add(count_document(&map, &gt, &model.schema, opts));
        mismatches.extend(null_mismatches(&doc.id, &map, &gt));
        texts += doc.num_texts();
        match source {
            BoxSource::GroundTruth => exact += pred.transcripts.iter().zip(&doc.transcripts).filter(|(a, b)| a == b).count(),
            BoxSource::Predicted => found += match_boxes(&pred.boxes, &doc.boxes, DETECTION_MATCH_IOU).len(),
        }
        predictions.push(pred);
    }
    let frac = |n: usize| if texts == 0 { 0.0 } else { n as f64 / texts as f64 };
    Ok(CorpusEval {
        report: acc.report(&model.schema, fingerprint),
        sequence_accuracy: (source == BoxSource::GroundTruth).then(|| frac(exact)),
        detection_recall: (source == BoxSource::Predicted).then(|| frac(found)),
        null_mismatches: mismatches,
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> EntitySchema {
        EntitySchema::new(["Date", "Total"]).unwrap()
    }

    fn map(items: &[(&str, &[&str])]) -> EntityMap {
        items.iter().map(|(k, v)| (k.to_string(), v.iter().map(|s| s.to_string()).collect())).collect()
    }

    #[test]
    fn identical_maps_score_one() {
        let m = map(&[("Date", &["1/2"]), ("Total", &["9.0", "3"])]);
        let r = score(&m, &m, &schema(), MatchOptions::default());
        assert_eq!(r.micro.f1, 1.0);
        assert_eq!(r.micro.counts, Counts { tp: 3, fp: 0, fn_: 0 });
    }

    #[test]
    fn empty_prediction_scores_zero() {
        let gt = map(&[("Total", &["9.0"])]);
        let r = score(&EntityMap::new(), &gt, &schema(), MatchOptions::default());
        assert_eq!((r.micro.precision, r.micro.recall, r.micro.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn half_right() {
        let gt = map(&[("Total", &["9.0", "4"])]);
        let pred = map(&[("Total", &["9.0", "5"])]);
        let r = score(&pred, &gt, &schema(), MatchOptions::default());
        assert_eq!((r.micro.precision, r.micro.recall, r.micro.f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn trim_and_case_fold_are_optional() {
        let gt = map(&[("Date", &["Jan 2"])]);
        let pred = map(&[("Date", &[" jan 2 "])]);
        assert_eq!(score(&pred, &gt, &schema(), MatchOptions::default()).micro.counts.tp, 1);
        assert_eq!(score(&pred, &gt, &schema(), MatchOptions::EXACT).micro.counts.tp, 0);
    }

    #[test]
    fn unknown_entities_are_false_positives() {
        let pred = map(&[("Shop", &["a", "b"])]);
        let r = score(&pred, &EntityMap::new(), &schema(), MatchOptions::default());
        assert_eq!(r.per_entity["Shop"].counts.fp, 2);
        assert_eq!(r.micro.counts.fp, 2);
    }

    #[test]
    fn duplicates_match_one_to_one() {
        let gt = map(&[("Total", &["3"])]);
        let pred = map(&[("Total", &["3", "3"])]);
        assert_eq!(score(&pred, &gt, &schema(), MatchOptions::default()).micro.counts, Counts { tp: 1, fp: 1, fn_: 0 });
    }

    #[test]
    fn null_mismatch_lists_predictions_without_ground_truth() {
        let gt = map(&[("Total", &[])]);
        let pred = map(&[("Total", &["7"]), ("Date", &[])]);
        let m = null_mismatches("d", &pred, &gt);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].entity, "Total");
    }
}
