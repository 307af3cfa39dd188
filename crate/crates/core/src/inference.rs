//! Joint recognition: detector class probabilities times predicate
//! probabilities, ranked per image.

use std::cmp::Ordering;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::brnn::{argmax, forward, BrnnParams};
use crate::dataset::{build_spatial_input, ImageRecord, ObjectVocabulary, PredicateVocabulary};
use crate::embeddings::{lookup_class_vector, EmbeddingTable, OovPolicy};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::scalar::Scalar;
use crate::trainer::class_vectors;

/// One ranked `<subject, predicate, object>` hypothesis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionItem {
    pub subject_det: usize,
    pub subject_label: usize,
    pub predicate: usize,
    pub object_det: usize,
    pub object_label: usize,
    pub score: f64,
    pub subject_box: BoundingBox,
    pub object_box: BoundingBox,
}

/// Ranked real predicates for one ground-truth pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairPrediction {
    pub subject_index: usize,
    pub object_index: usize,
    pub subject_label: usize,
    pub object_label: usize,
    pub subject_box: BoundingBox,
    pub object_box: BoundingBox,
    /// `(predicate, p(r | O_s, O_o))`, best first.
    pub ranked: Vec<(usize, f64)>,
}

impl PairPrediction {
    /// The first `k` ranked predicates as prediction items whose score is the
    /// predicate probability (labels are given, so both class factors are 1).
    pub fn items(&self, k: usize) -> impl Iterator<Item = PredictionItem> + '_ {
        self.ranked
            .iter()
            .take(k)
            .map(|&(predicate, score)| PredictionItem {
                subject_det: self.subject_index,
                subject_label: self.subject_label,
                predicate,
                object_det: self.object_index,
                object_label: self.object_label,
                score,
                subject_box: self.subject_box,
                object_box: self.object_box,
            })
    }
}

/// Eq. (5): `p(O_s) * p(r | O_s, O_o) * p(O_o)`.
pub fn joint_score(p_subject: f64, p_predicate: f64, p_object: f64) -> Result<f64> {
    for p in [p_subject, p_predicate, p_object] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Domain {
                what: "joint_score factor must be in [0, 1]",
                value: p,
            });
        }
    }
    Ok(p_subject * p_predicate * p_object)
}

/// Descending score, then `(subject_det, object_det, predicate)` ascending.
pub fn compare_items(a: &PredictionItem, b: &PredictionItem) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.subject_det.cmp(&b.subject_det))
        .then(a.object_det.cmp(&b.object_det))
        .then(a.predicate.cmp(&b.predicate))
}

pub fn sort_items(items: &mut [PredictionItem]) {
    items.sort_by(compare_items);
}

/// p(r | O_s, O_o) for named classes, length K+1.
pub fn predict_predicate<T: Scalar>(
    params: &BrnnParams<T>,
    table: &EmbeddingTable<T>,
    subject_class: &str,
    subject_box: &BoundingBox,
    object_class: &str,
    object_box: &BoundingBox,
    oov: OovPolicy,
) -> Result<Vec<T>> {
    let xs = lookup_class_vector(table, subject_class, oov)?;
    let xo = lookup_class_vector(table, object_class, oov)?;
    let spatial = build_spatial_input(subject_box, object_box, params.dims().input_dim)?;
    Ok(forward(params, &xs, &spatial, &xo)?.probs)
}

/// A trained network bound to per-class word vectors.
pub struct Predictor<'a, T> {
    params: &'a BrnnParams<T>,
    vectors: Vec<Vec<T>>,
    prune_no_relation: bool,
}

impl<'a, T: Scalar> Predictor<'a, T> {
    pub fn new(
        params: &'a BrnnParams<T>,
        table: &EmbeddingTable<T>,
        objects: &ObjectVocabulary,
        oov: OovPolicy,
    ) -> Result<Self> {
        if table.dim() != params.dims().input_dim {
            return Err(Error::Shape(format!(
                "embedding dimension {} does not match network input {}",
                table.dim(),
                params.dims().input_dim
            )));
        }
        Ok(Self {
            params,
            vectors: class_vectors(table, objects, oov)?,
            prune_no_relation: false,
        })
    }

    /// Drop pairs whose most likely output is "no relation".
    pub fn with_pruning(mut self, prune: bool) -> Self {
        self.prune_no_relation = prune;
        self
    }

    pub fn num_predicates(&self) -> usize {
        self.params.dims().output_dim - 1
    }

    fn vector(&self, class: usize) -> Result<&[T]> {
        self.vectors
            .get(class)
            .map(Vec::as_slice)
            .ok_or(Error::Index {
                index: class,
                len: self.vectors.len(),
            })
    }

    /// Full K+1 output distribution.
    pub fn probs(
        &self,
        subject_class: usize,
        subject_box: &BoundingBox,
        object_class: usize,
        object_box: &BoundingBox,
    ) -> Result<Vec<T>> {
        let spatial = build_spatial_input(subject_box, object_box, self.params.dims().input_dim)?;
        let trace = forward(
            self.params,
            self.vector(subject_class)?,
            &spatial,
            self.vector(object_class)?,
        )?;
        Ok(trace.probs)
    }

    /// Eq. (6) over every ordered pair of distinct detections, top `top_k`.
    pub fn rank_relationships(
        &self,
        record: &ImageRecord,
        top_k: usize,
        det_threshold: f64,
    ) -> Result<Vec<PredictionItem>> {
        let detections = record
            .detections
            .as_ref()
            .ok_or_else(|| Error::DetectionsUnavailable(record.image_id.clone()))?;
        let k = self.num_predicates();
        let mut pool = Vec::new();
        for (i, s) in detections.iter().enumerate() {
            if s.score < det_threshold {
                continue;
            }
            for (j, o) in detections.iter().enumerate() {
                if i == j || o.score < det_threshold {
                    continue;
                }
                let probs = self.probs(s.label, &s.bbox, o.label, &o.bbox)?;
                if self.prune_no_relation && argmax(&probs) == k {
                    continue;
                }
                for (r, p) in probs[..k].iter().enumerate() {
                    pool.push(PredictionItem {
                        subject_det: i,
                        subject_label: s.label,
                        predicate: r,
                        object_det: j,
                        object_label: o.label,
                        score: joint_score(s.score, p.as_f64(), o.score)?,
                        subject_box: s.bbox,
                        object_box: o.bbox,
                    });
                }
            }
        }
        sort_items(&mut pool);
        pool.truncate(top_k);
        Ok(pool)
    }

    /// Ranked real predicates for each distinct ground-truth `(subject,
    /// object)` pair, in order of first annotation.
    pub fn predict_for_gt_pairs(
        &self,
        record: &ImageRecord,
        top_k_per_pair: usize,
    ) -> Result<Vec<PairPrediction>> {
        let k = self.num_predicates();
        let mut seen = Vec::new();
        let mut out = Vec::new();
        for t in &record.gt_triplets {
            let key = (t.subject_index, t.object_index);
            if seen.contains(&key) {
                continue;
            }
            seen.push(key);
            let probs = self.probs(
                t.subject_label,
                &t.subject_box,
                t.object_label,
                &t.object_box,
            )?;
            let mut ranked: Vec<(usize, f64)> =
                probs[..k].iter().map(|p| p.as_f64()).enumerate().collect();
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            ranked.truncate(top_k_per_pair);
            out.push(PairPrediction {
                subject_index: t.subject_index,
                object_index: t.object_index,
                subject_label: t.subject_label,
                object_label: t.object_label,
                subject_box: t.subject_box,
                object_box: t.object_box,
                ranked,
            });
        }
        Ok(out)
    }
}

impl<T: Scalar> Predictor<'_, T> {
    /// [`Predictor::rank_relationships`] for every record, in record order.
    pub fn rank_all(
        &self,
        records: &[ImageRecord],
        top_k: usize,
        det_threshold: f64,
    ) -> Result<Vec<Vec<PredictionItem>>> {
        records
            .par_iter()
            .map(|r| self.rank_relationships(r, top_k, det_threshold))
            .collect()
    }

    /// Full predicate rankings for every ground-truth pair of every record.
    pub fn predict_all_gt_pairs(
        &self,
        records: &[ImageRecord],
    ) -> Result<Vec<Vec<PairPrediction>>> {
        let k = self.num_predicates();
        records
            .par_iter()
            .map(|r| self.predict_for_gt_pairs(r, k))
            .collect()
    }
}

/// [`Predictor::rank_relationships`] with strict vocabulary lookup and no pruning.
pub fn rank_relationships<T: Scalar>(
    record: &ImageRecord,
    params: &BrnnParams<T>,
    table: &EmbeddingTable<T>,
    objects: &ObjectVocabulary,
    top_k: usize,
    det_threshold: f64,
) -> Result<Vec<PredictionItem>> {
    Predictor::new(params, table, objects, OovPolicy::Error)?.rank_relationships(
        record,
        top_k,
        det_threshold,
    )
}

pub fn predict_for_gt_pairs<T: Scalar>(
    record: &ImageRecord,
    params: &BrnnParams<T>,
    table: &EmbeddingTable<T>,
    objects: &ObjectVocabulary,
    top_k_per_pair: usize,
) -> Result<Vec<PairPrediction>> {
    Predictor::new(params, table, objects, OovPolicy::Error)?
        .predict_for_gt_pairs(record, top_k_per_pair)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DumpItem {
    s_det: usize,
    s_class: String,
    p: String,
    o_det: usize,
    o_class: String,
    score: f64,
    s_box: [f64; 4],
    o_box: [f64; 4],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DumpImage {
    image_id: String,
    items: Vec<DumpItem>,
}

/// Per-image ranked predictions, keyed by image id.
pub type PredictionDump = Vec<(String, Vec<PredictionItem>)>;

fn name_of(vocab: &crate::dataset::Vocabulary, idx: usize) -> Result<String> {
    vocab.name(idx).map(str::to_string).ok_or(Error::Index {
        index: idx,
        len: vocab.len(),
    })
}

/// Writes the prediction dump: `[{image_id, items: [...]}]` with class and
/// predicate names.
pub fn write_prediction_dump<W: Write>(
    dump: &[(String, Vec<PredictionItem>)],
    objects: &ObjectVocabulary,
    predicates: &PredicateVocabulary,
    mut out: W,
) -> Result<()> {
    let images = dump
        .iter()
        .map(|(image_id, items)| {
            let items = items
                .iter()
                .map(|it| {
                    Ok(DumpItem {
                        s_det: it.subject_det,
                        s_class: name_of(objects, it.subject_label)?,
                        p: name_of(predicates, it.predicate)?,
                        o_det: it.object_det,
                        o_class: name_of(objects, it.object_label)?,
                        score: it.score,
                        s_box: it.subject_box.to_array(),
                        o_box: it.object_box.to_array(),
                    })
                })
                .collect::<Result<_>>()?;
            Ok(DumpImage {
                image_id: image_id.clone(),
                items,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    serde_json::to_writer_pretty(&mut out, &images)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn read_prediction_dump<R: Read>(
    source: R,
    objects: &ObjectVocabulary,
    predicates: &PredicateVocabulary,
) -> Result<PredictionDump> {
    let images: Vec<DumpImage> = serde_json::from_reader(source)?;
    let lookup = |vocab: &crate::dataset::Vocabulary, name: &str| {
        vocab
            .index_of(name)
            .ok_or_else(|| Error::Vocabulary(name.to_string()))
    };
    let bbox = |a: [f64; 4]| BoundingBox::new(a[0], a[1], a[2], a[3]);
    images
        .into_iter()
        .map(|img| {
            let items = img
                .items
                .into_iter()
                .map(|d| {
                    Ok(PredictionItem {
                        subject_det: d.s_det,
                        subject_label: lookup(objects, &d.s_class)?,
                        predicate: lookup(predicates, &d.p)?,
                        object_det: d.o_det,
                        object_label: lookup(objects, &d.o_class)?,
                        score: d.score,
                        subject_box: bbox(d.s_box)?,
                        object_box: bbox(d.o_box)?,
                    })
                })
                .collect::<Result<_>>()?;
            Ok((img.image_id, items))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brnn::{init_params, NetworkDims};
    use crate::dataset::{DetectedObject, GtObject, RelationshipTriplet, Vocabulary};
    use crate::embeddings::WordVector;

    fn world(k: usize) -> (EmbeddingTable, ObjectVocabulary, PredicateVocabulary) {
        let mut table = EmbeddingTable::new(8);
        table
            .insert(
                "person",
                WordVector::new(vec![1.0, 0.0, 0.5, 0.0, 0.0, 0.2, 0.0, 0.1]).unwrap(),
            )
            .unwrap();
        table
            .insert(
                "horse",
                WordVector::new(vec![0.0, 1.0, 0.0, 0.3, 0.1, 0.0, 0.0, 0.0]).unwrap(),
            )
            .unwrap();
        let preds: Vec<String> = (0..k).map(|i| format!("p{i}")).collect();
        (
            table,
            Vocabulary::new(&["person", "horse"]).unwrap(),
            Vocabulary::new(&preds).unwrap(),
        )
    }

    fn bx(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    fn record() -> ImageRecord {
        let a = bx(0.1, 0.1, 0.3, 0.3);
        let b = bx(0.5, 0.5, 0.4, 0.4);
        ImageRecord {
            image_id: "img".into(),
            width: 100,
            height: 100,
            detections: Some(vec![
                DetectedObject::new(a, vec![0.9, 0.05, 0.05]).unwrap(),
                DetectedObject::new(b, vec![0.2, 0.7, 0.1]).unwrap(),
            ]),
            gt_objects: vec![
                GtObject { class: 0, bbox: a },
                GtObject { class: 1, bbox: b },
            ],
            gt_triplets: vec![
                RelationshipTriplet {
                    subject_index: 0,
                    object_index: 1,
                    subject_label: 0,
                    predicate: 1,
                    object_label: 1,
                    subject_box: a,
                    object_box: b,
                };
                2
            ],
        }
    }

    #[test]
    fn joint_score_examples() {
        assert_eq!(joint_score(1.0, 1.0, 1.0).unwrap(), 1.0);
        assert!((joint_score(0.9, 0.8, 0.7).unwrap() - 0.504).abs() < 1e-15);
        assert_eq!(joint_score(0.0, 0.3, 0.9).unwrap(), 0.0);
        assert!(joint_score(1.1, 0.5, 0.5).is_err());
        assert!(joint_score(0.5, f64::NAN, 0.5).is_err());
    }

    #[test]
    fn zero_network_is_uniform() {
        let (table, _, _) = world(3);
        let params = BrnnParams::<f64>::zeros(NetworkDims::new(8, 4, 4).unwrap());
        let b = bx(0.0, 0.0, 0.5, 0.5);
        let p = predict_predicate(&params, &table, "person", &b, "horse", &b, OovPolicy::Error)
            .unwrap();
        assert_eq!(p, vec![0.25; 4]);
    }

    #[test]
    fn swapped_boxes_change_the_output() {
        let (table, _, _) = world(3);
        let params: BrnnParams = init_params(NetworkDims::new(8, 6, 4).unwrap(), 3).unwrap();
        let a = bx(0.1, 0.1, 0.2, 0.2);
        let b = bx(0.5, 0.6, 0.3, 0.2);
        let p = predict_predicate(
            &params,
            &table,
            "person",
            &a,
            "person",
            &b,
            OovPolicy::Error,
        )
        .unwrap();
        let q = predict_predicate(
            &params,
            &table,
            "person",
            &b,
            "person",
            &a,
            OovPolicy::Error,
        )
        .unwrap();
        assert_eq!(p.len(), 4);
        assert_ne!(p, q);
    }

    #[test]
    fn candidate_pool_and_ordering() {
        let (table, objects, _) = world(3);
        let params: BrnnParams = init_params(NetworkDims::new(8, 6, 4).unwrap(), 5).unwrap();
        let items = rank_relationships(&record(), &params, &table, &objects, 100, 0.0).unwrap();
        assert_eq!(items.len(), 6);
        assert!(items.windows(2).all(|w| w[0].score >= w[1].score));
        assert!(items
            .iter()
            .all(|it| it.predicate < 3 && it.subject_det != it.object_det));
        let top = rank_relationships(&record(), &params, &table, &objects, 2, 0.0).unwrap();
        assert_eq!(top, items[..2]);
        let none = rank_relationships(&record(), &params, &table, &objects, 10, 0.95).unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn zero_network_ranks_by_tie_break() {
        let (table, objects, _) = world(3);
        let params = BrnnParams::<f64>::zeros(NetworkDims::new(8, 4, 4).unwrap());
        let pairs = predict_for_gt_pairs(&record(), &params, &table, &objects, 3).unwrap();
        assert_eq!(pairs.len(), 1);
        let order: Vec<usize> = pairs[0].ranked.iter().map(|r| r.0).collect();
        assert_eq!(order, vec![0, 1, 2]);
        let items = rank_relationships(&record(), &params, &table, &objects, 100, 0.0).unwrap();
        let keys: Vec<_> = items
            .iter()
            .map(|i| (i.subject_det, i.object_det, i.predicate))
            .collect();
        // Equal predicate probabilities; the pair with larger detector scores leads.
        assert_eq!(keys[..3], [(0, 1, 0), (0, 1, 1), (0, 1, 2)]);
    }

    #[test]
    fn missing_detections_error() {
        let (table, objects, _) = world(3);
        let params = BrnnParams::<f64>::zeros(NetworkDims::new(8, 4, 4).unwrap());
        let mut r = record();
        r.detections = None;
        assert!(matches!(
            rank_relationships(&r, &params, &table, &objects, 5, 0.0),
            Err(Error::DetectionsUnavailable(_))
        ));
    }

    #[test]
    fn dump_round_trip() {
        let (table, objects, preds) = world(3);
        let params: BrnnParams = init_params(NetworkDims::new(8, 6, 4).unwrap(), 5).unwrap();
        let items = rank_relationships(&record(), &params, &table, &objects, 4, 0.0).unwrap();
        let dump = vec![("img".to_string(), items)];
        let mut buf = Vec::new();
        write_prediction_dump(&dump, &objects, &preds, &mut buf).unwrap();
        let back = read_prediction_dump(buf.as_slice(), &objects, &preds).unwrap();
        assert_eq!(back, dump);
    }
}
