//! Rec@K for predicate, phrase and relationship detection.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{ImageRecord, PredicateVocabulary, RelationshipTriplet};
use crate::error::{Error, Result};
use crate::inference::{sort_items, PairPrediction, PredictionItem};

pub use crate::geometry::{iou, union_box};

pub const IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum TaskMode {
    PredicateDetection,
    PhraseDetection,
    RelationshipDetection,
}

impl TaskMode {
    pub fn name(self) -> &'static str {
        match self {
            TaskMode::PredicateDetection => "predicate",
            TaskMode::PhraseDetection => "phrase",
            TaskMode::RelationshipDetection => "relationship",
        }
    }
}

impl fmt::Display for TaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "predicate" => Ok(TaskMode::PredicateDetection),
            "phrase" => Ok(TaskMode::PhraseDetection),
            "relationship" => Ok(TaskMode::RelationshipDetection),
            other => Err(Error::Config(format!("unknown task mode `{other}`"))),
        }
    }
}

/// How predicate-detection predictions are cut at k.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum Pooling {
    /// All pairs' scored predicates compete for one top-k list per image.
    #[default]
    PerImage,
    /// Each ground-truth pair keeps its own top-k predicates.
    PerPair,
}

impl Pooling {
    pub fn name(self) -> &'static str {
        match self {
            Pooling::PerImage => "per_image",
            Pooling::PerPair => "per_pair",
        }
    }
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_image" | "image" => Ok(Pooling::PerImage),
            "per_pair" | "pair" => Ok(Pooling::PerPair),
            other => Err(Error::Config(format!("unknown pooling `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TypeRecall {
    pub predicate: usize,
    pub recall: f64,
    pub gt_count: usize,
    pub num_matched: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecallReport {
    pub mode: TaskMode,
    pub k: usize,
    /// Set for predicate detection only.
    pub pooling: Option<Pooling>,
    pub recall: f64,
    pub num_gt: usize,
    pub num_matched: usize,
    /// True when there was no ground truth; `recall` is then 0.
    pub vacuous: bool,
    /// By ground-truth predicate, ascending.
    pub per_type: Vec<TypeRecall>,
}

fn ratio(matched: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        matched as f64 / total as f64
    }
}

/// Whether `pred` hits `gt` under `mode`.
///
/// Predicate detection also requires the prediction to be about the same
/// ground-truth pair, since pairs are given in that setting.
pub fn matches(
    pred: &PredictionItem,
    gt: &RelationshipTriplet,
    mode: TaskMode,
    iou_threshold: f64,
) -> bool {
    let same_triple = pred.subject_label == gt.subject_label
        && pred.predicate == gt.predicate
        && pred.object_label == gt.object_label;
    if !same_triple {
        return false;
    }
    match mode {
        TaskMode::PredicateDetection => {
            pred.subject_det == gt.subject_index && pred.object_det == gt.object_index
        }
        TaskMode::PhraseDetection => {
            let p = union_box(&pred.subject_box, &pred.object_box);
            let g = union_box(&gt.subject_box, &gt.object_box);
            iou(&p, &g) >= iou_threshold
        }
        TaskMode::RelationshipDetection => {
            iou(&pred.subject_box, &gt.subject_box) >= iou_threshold
                && iou(&pred.object_box, &gt.object_box) >= iou_threshold
        }
    }
}

/// Greedy matching of one image: predictions in rank order, each taking the
/// first still-unmatched eligible ground truth.
pub fn greedy_match(
    predictions: &[PredictionItem],
    gts: &[RelationshipTriplet],
    k: usize,
    mode: TaskMode,
    iou_threshold: f64,
) -> Vec<bool> {
    let mut matched = vec![false; gts.len()];
    for pred in predictions.iter().take(k) {
        if let Some(j) =
            (0..gts.len()).find(|&j| !matched[j] && matches(pred, &gts[j], mode, iou_threshold))
        {
            matched[j] = true;
        }
    }
    matched
}

fn build_report(
    mode: TaskMode,
    k: usize,
    pooling: Option<Pooling>,
    gts: &[Vec<RelationshipTriplet>],
    flags: &[Vec<bool>],
) -> RecallReport {
    let mut by_type: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (image_gts, image_flags) in gts.iter().zip(flags) {
        for (gt, &hit) in image_gts.iter().zip(image_flags) {
            let entry = by_type.entry(gt.predicate).or_default();
            entry.0 += 1;
            entry.1 += usize::from(hit);
        }
    }
    let num_gt: usize = by_type.values().map(|v| v.0).sum();
    let num_matched: usize = by_type.values().map(|v| v.1).sum();
    RecallReport {
        mode,
        k,
        pooling,
        recall: ratio(num_matched, num_gt),
        num_gt,
        num_matched,
        vacuous: num_gt == 0,
        per_type: by_type
            .into_iter()
            .map(|(predicate, (gt_count, num_matched))| TypeRecall {
                predicate,
                recall: ratio(num_matched, gt_count),
                gt_count,
                num_matched,
            })
            .collect(),
    }
}

fn check_inputs(k: usize, images: usize, gt_images: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Domain {
            what: "k must be positive",
            value: 0.0,
        });
    }
    if images != gt_images {
        return Err(Error::Shape(format!(
            "{images} prediction lists for {gt_images} ground-truth images"
        )));
    }
    Ok(())
}

/// Rec@K over images with score-sorted prediction lists, aligned by index
/// with `gts`.
pub fn recall_at_k(
    predictions: &[Vec<PredictionItem>],
    gts: &[Vec<RelationshipTriplet>],
    k: usize,
    mode: TaskMode,
) -> Result<RecallReport> {
    recall_at_k_with(predictions, gts, k, mode, IOU_THRESHOLD)
}

pub fn recall_at_k_with(
    predictions: &[Vec<PredictionItem>],
    gts: &[Vec<RelationshipTriplet>],
    k: usize,
    mode: TaskMode,
    iou_threshold: f64,
) -> Result<RecallReport> {
    check_inputs(k, predictions.len(), gts.len())?;
    let flags: Vec<Vec<bool>> = predictions
        .par_iter()
        .zip(gts)
        .map(|(p, g)| greedy_match(p, g, k, mode, iou_threshold))
        .collect();
    let pooling = (mode == TaskMode::PredicateDetection).then_some(Pooling::PerImage);
    Ok(build_report(mode, k, pooling, gts, &flags))
}

/// Prediction list of one image for predicate detection at cut-off `k`.
///
/// Per-pair pooling keeps every pair's top `k`; per-image pooling merges all
/// pairs' predicates and keeps the best `k` overall.
pub fn predicate_detection_list(
    pairs: &[PairPrediction],
    k: usize,
    pooling: Pooling,
) -> Vec<PredictionItem> {
    match pooling {
        Pooling::PerPair => pairs.iter().flat_map(|p| p.items(k)).collect(),
        Pooling::PerImage => {
            let mut all: Vec<PredictionItem> =
                pairs.iter().flat_map(|p| p.items(usize::MAX)).collect();
            sort_items(&mut all);
            all.truncate(k);
            all
        }
    }
}

/// Predicate-detection Rec@K from per-pair rankings.
pub fn predicate_recall(
    pairs: &[Vec<PairPrediction>],
    gts: &[Vec<RelationshipTriplet>],
    k: usize,
    pooling: Pooling,
) -> Result<RecallReport> {
    check_inputs(k, pairs.len(), gts.len())?;
    let flags: Vec<Vec<bool>> = pairs
        .par_iter()
        .zip(gts)
        .map(|(p, g)| {
            let list = predicate_detection_list(p, k, pooling);
            greedy_match(
                &list,
                g,
                usize::MAX,
                TaskMode::PredicateDetection,
                IOU_THRESHOLD,
            )
        })
        .collect();
    Ok(build_report(
        TaskMode::PredicateDetection,
        k,
        Some(pooling),
        gts,
        &flags,
    ))
}

/// Table 2 style accuracy: for each predicate, the fraction of its
/// ground-truth instances whose predicate is in the top `k` of its pair.
pub fn per_type_accuracy(
    pairs: &[Vec<PairPrediction>],
    gts: &[Vec<RelationshipTriplet>],
    k: usize,
) -> Result<Vec<TypeRecall>> {
    Ok(predicate_recall(pairs, gts, k, Pooling::PerPair)?.per_type)
}

/// Rec@K against zero-shot ground truth only. The prediction lists are used
/// as given.
pub fn zero_shot_recall(
    predictions: &[Vec<PredictionItem>],
    zero_shot_gts: &[Vec<RelationshipTriplet>],
    k: usize,
    mode: TaskMode,
) -> Result<RecallReport> {
    recall_at_k(predictions, zero_shot_gts, k, mode)
}

/// Aligns `(image_id, triplet)` pairs with `records`, one list per record.
pub fn group_by_image(
    records: &[ImageRecord],
    triplets: &[(String, RelationshipTriplet)],
) -> Result<Vec<Vec<RelationshipTriplet>>> {
    let mut out = vec![Vec::new(); records.len()];
    for (image_id, t) in triplets {
        let idx = records
            .iter()
            .position(|r| &r.image_id == image_id)
            .ok_or_else(|| Error::Record {
                image_id: image_id.clone(),
                message: "zero-shot triplet refers to an unknown image".into(),
            })?;
        out[idx].push(*t);
    }
    Ok(out)
}

fn predicate_name(vocab: &PredicateVocabulary, idx: usize) -> String {
    vocab
        .name(idx)
        .map_or_else(|| idx.to_string(), str::to_string)
}

/// CSV `(mode, k, recall, num_gt, num_matched)` followed by one column per
/// `extra` pair.
pub fn write_recall_csv<W: Write>(
    reports: &[RecallReport],
    extra: &[(&str, &str)],
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["mode", "k", "recall", "num_gt", "num_matched", "pooling"];
    header.extend(extra.iter().map(|e| e.0));
    w.write_record(&header)?;
    for r in reports {
        let mut row = vec![
            r.mode.name().to_string(),
            r.k.to_string(),
            r.recall.to_string(),
            r.num_gt.to_string(),
            r.num_matched.to_string(),
            r.pooling.map_or("", Pooling::name).to_string(),
        ];
        row.extend(extra.iter().map(|e| e.1.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// CSV `(predicate, rec_at_5, gt_count)`; the recall column is named after `k`.
pub fn write_per_type_csv<W: Write>(
    per_type: &[TypeRecall],
    k: usize,
    predicates: &PredicateVocabulary,
    extra: &[(&str, &str)],
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let recall_col = format!("rec_at_{k}");
    let mut header = vec!["predicate", recall_col.as_str(), "gt_count"];
    header.extend(extra.iter().map(|e| e.0));
    w.write_record(&header)?;
    for t in per_type {
        let mut row = vec![
            predicate_name(predicates, t.predicate),
            t.recall.to_string(),
            t.gt_count.to_string(),
        ];
        row.extend(extra.iter().map(|e| e.1.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// JSON mirror of the reports with predicate names resolved.
pub fn reports_to_json(
    reports: &[RecallReport],
    predicates: &PredicateVocabulary,
) -> serde_json::Value {
    let items = reports
        .iter()
        .map(|r| {
            let per_type: serde_json::Map<String, serde_json::Value> = r
                .per_type
                .iter()
                .map(|t| {
                    (
                        predicate_name(predicates, t.predicate),
                        serde_json::json!({ "recall": t.recall, "gt_count": t.gt_count }),
                    )
                })
                .collect();
            serde_json::json!({
                "mode": r.mode.name(),
                "k": r.k,
                "pooling": r.pooling.map(Pooling::name),
                "recall": r.recall,
                "num_gt": r.num_gt,
                "num_matched": r.num_matched,
                "vacuous": r.vacuous,
                "per_type": per_type,
            })
        })
        .collect();
    serde_json::Value::Array(items)
}
