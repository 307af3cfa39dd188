//! Annotation ingestion, spatial input construction, zero-shot splits and
//! training pair sampling.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_box, BoundingBox, PixelBox};
use crate::scalar::Scalar;

/// Length of the spatial input vector when the word vectors are 300-d.
pub const SPATIAL_DIM: usize = 300;

/// Number of leading spatial entries that carry box coordinates.
pub const SPATIAL_COORDS: usize = 8;

/// Short-edge cutoff used by Visual Genome style preprocessing.
pub const VG_MIN_EDGE_PX: f64 = 16.0;

/// Ordered list of names; position defines the index.
///
/// Used for both object classes and predicates. For predicates the
/// network's extra "no relation" output sits at index `len()`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    names: Vec<String>,
    index: IndexMap<String, usize>,
}

pub type PredicateVocabulary = Vocabulary;
pub type ObjectVocabulary = Vocabulary;

impl Vocabulary {
    pub fn new<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let mut index = IndexMap::with_capacity(names.len());
        let mut stored = Vec::with_capacity(names.len());
        for name in names {
            let key = name.as_ref().trim().to_lowercase();
            if key.is_empty() {
                return Err(Error::Vocabulary("empty name".into()));
            }
            if index.insert(key.clone(), stored.len()).is_some() {
                return Err(Error::Vocabulary(format!("duplicate name `{key}`")));
            }
            stored.push(key);
        }
        if stored.is_empty() {
            return Err(Error::Vocabulary("vocabulary is empty".into()));
        }
        Ok(Self {
            names: stored,
            index,
        })
    }

    /// One name per line; blank lines are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let names: Vec<&str> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect();
        Self::new(&names)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
        Self::parse(&text).map_err(|e| e.in_file(path))
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        for name in &self.names {
            writeln!(out, "{name}")?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, idx: usize) -> Option<&str> {
        self.names.get(idx).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(&name.trim().to_lowercase()).copied()
    }

    /// Index of the "no relation" output class.
    pub fn no_relation_index(&self) -> usize {
        self.names.len()
    }

    /// Width of the network output layer: every predicate plus "no relation".
    pub fn output_dim(&self) -> usize {
        self.names.len() + 1
    }
}

/// A detector output: a box with a class distribution over N classes plus
/// background at index N.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectedObject {
    pub bbox: BoundingBox,
    pub class_probs: Vec<f64>,
    pub label: usize,
    pub score: f64,
}

impl DetectedObject {
    pub fn new(bbox: BoundingBox, class_probs: Vec<f64>) -> Result<Self> {
        if class_probs.len() < 2 {
            return Err(Error::Shape(
                "class_probs needs at least one class plus background".into(),
            ));
        }
        if let Some(&p) = class_probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Domain {
                what: "class probability must be in [0, 1]",
                value: p,
            });
        }
        let total: f64 = class_probs.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Domain {
                what: "class probabilities must sum to 1",
                value: total,
            });
        }
        let n = class_probs.len() - 1;
        let (label, score) = class_probs[..n].iter().copied().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |best, (i, p)| if p > best.1 { (i, p) } else { best },
        );
        Ok(Self {
            bbox,
            class_probs,
            label,
            score,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtObject {
    pub class: usize,
    pub bbox: BoundingBox,
}

/// An annotated `<subject, predicate, object>` instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelationshipTriplet {
    /// Index into the owning record's `gt_objects`.
    pub subject_index: usize,
    pub object_index: usize,
    pub subject_label: usize,
    pub predicate: usize,
    pub object_label: usize,
    pub subject_box: BoundingBox,
    pub object_box: BoundingBox,
}

/// `(subject class, predicate, object class)`.
pub type TripletType = (usize, usize, usize);

impl RelationshipTriplet {
    pub fn kind(&self) -> TripletType {
        (self.subject_label, self.predicate, self.object_label)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    /// `None` when the file carried no detector output.
    pub detections: Option<Vec<DetectedObject>>,
    pub gt_objects: Vec<GtObject>,
    pub gt_triplets: Vec<RelationshipTriplet>,
}

// On-disk schema.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationImage {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<AnnotationObject>,
    #[serde(default)]
    pub triplets: Vec<AnnotationTriplet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detections: Option<Vec<AnnotationDetection>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationObject {
    pub class: String,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationTriplet {
    pub s: usize,
    pub p: String,
    pub o: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationDetection {
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Drop ground-truth objects (and their triplets) whose shorter pixel
    /// edge is below this value. `Some(VG_MIN_EDGE_PX)` gives VG filtering.
    pub min_edge_px: Option<f64>,
}

pub fn load_annotations(
    path: impl AsRef<Path>,
    predicates: &PredicateVocabulary,
    objects: &ObjectVocabulary,
    options: LoadOptions,
) -> Result<Vec<ImageRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
    parse_annotations(&text, predicates, objects, options).map_err(|e| e.in_file(path))
}

pub fn parse_annotations(
    json: &str,
    predicates: &PredicateVocabulary,
    objects: &ObjectVocabulary,
    options: LoadOptions,
) -> Result<Vec<ImageRecord>> {
    let images: Vec<AnnotationImage> = serde_json::from_str(json)?;
    images
        .iter()
        .map(|img| to_record(img, predicates, objects, options))
        .collect()
}

pub fn write_annotations<W: Write>(images: &[AnnotationImage], out: W) -> Result<()> {
    serde_json::to_writer_pretty(out, images)?;
    Ok(())
}

fn pixel(b: [f64; 4]) -> PixelBox {
    PixelBox::new(b[0], b[1], b[2], b[3])
}

/// Resolves names and normalizes geometry for one annotated image.
pub fn to_record(
    img: &AnnotationImage,
    predicates: &PredicateVocabulary,
    objects: &ObjectVocabulary,
    options: LoadOptions,
) -> Result<ImageRecord> {
    let record_err = |message: String| Error::Record {
        image_id: img.image_id.clone(),
        message,
    };
    if img.width == 0 || img.height == 0 {
        return Err(record_err("image size must be positive".into()));
    }

    // old object index -> new index after optional short-edge filtering
    let mut remap = vec![None; img.objects.len()];
    let mut gt_objects = Vec::with_capacity(img.objects.len());
    for (i, obj) in img.objects.iter().enumerate() {
        let class = objects
            .index_of(&obj.class)
            .ok_or_else(|| Error::Vocabulary(format!("unknown object class `{}`", obj.class)))?;
        let px = pixel(obj.bbox);
        if options.min_edge_px.is_some_and(|min| px.short_edge() < min) {
            continue;
        }
        let bbox = normalize_box(px, img.width, img.height)
            .map_err(|e| record_err(format!("object {i}: {e}")))?;
        remap[i] = Some(gt_objects.len());
        gt_objects.push(GtObject { class, bbox });
    }

    let mut gt_triplets = Vec::with_capacity(img.triplets.len());
    for (i, t) in img.triplets.iter().enumerate() {
        let predicate = predicates
            .index_of(&t.p)
            .ok_or_else(|| Error::Vocabulary(format!("unknown predicate `{}`", t.p)))?;
        if t.s >= img.objects.len() || t.o >= img.objects.len() {
            return Err(record_err(format!(
                "triplet {i} references a missing object"
            )));
        }
        if t.s == t.o {
            return Err(record_err(format!(
                "triplet {i} relates object {} to itself",
                t.s
            )));
        }
        let (Some(s), Some(o)) = (remap[t.s], remap[t.o]) else {
            continue;
        };
        let (subj, obj) = (gt_objects[s], gt_objects[o]);
        gt_triplets.push(RelationshipTriplet {
            subject_index: s,
            object_index: o,
            subject_label: subj.class,
            predicate,
            object_label: obj.class,
            subject_box: subj.bbox,
            object_box: obj.bbox,
        });
    }

    let detections = match &img.detections {
        None => None,
        Some(dets) => {
            let mut out = Vec::with_capacity(dets.len());
            for (i, d) in dets.iter().enumerate() {
                if d.probs.len() != objects.len() + 1 {
                    return Err(record_err(format!(
                        "detection {i}: expected {} probabilities, found {}",
                        objects.len() + 1,
                        d.probs.len()
                    )));
                }
                let bbox = normalize_box(pixel(d.bbox), img.width, img.height)
                    .map_err(|e| record_err(format!("detection {i}: {e}")))?;
                let det = DetectedObject::new(bbox, d.probs.clone())
                    .map_err(|e| record_err(format!("detection {i}: {e}")))?;
                out.push(det);
            }
            Some(out)
        }
    };

    Ok(ImageRecord {
        image_id: img.image_id.clone(),
        width: img.width,
        height: img.height,
        detections,
        gt_objects,
        gt_triplets,
    })
}

/// Lays out both boxes in the first eight entries of a `dim`-long vector;
/// the rest is zero.
pub fn build_spatial_input<T: Scalar>(
    subject: &BoundingBox,
    object: &BoundingBox,
    dim: usize,
) -> Result<Vec<T>> {
    if dim < SPATIAL_COORDS {
        return Err(Error::Shape(format!(
            "spatial input needs at least {SPATIAL_COORDS} entries, got {dim}"
        )));
    }
    let mut v = vec![T::zero(); dim];
    let coords = subject.to_array().into_iter().chain(object.to_array());
    for (slot, c) in v.iter_mut().zip(coords) {
        *slot = T::lit(c);
    }
    Ok(v)
}

/// Test triplets whose type never occurs among the training triplets.
pub fn derive_zero_shot_split(
    train: &[ImageRecord],
    test: &[ImageRecord],
) -> Vec<(String, RelationshipTriplet)> {
    let seen: HashSet<TripletType> = train
        .iter()
        .flat_map(|r| r.gt_triplets.iter().map(RelationshipTriplet::kind))
        .collect();
    test.iter()
        .flat_map(|r| {
            r.gt_triplets
                .iter()
                .filter(|t| !seen.contains(&t.kind()))
                .map(|t| (r.image_id.clone(), *t))
        })
        .collect()
}

/// One supervised pair for the predicate network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingExample {
    pub subject_class: usize,
    pub object_class: usize,
    pub subject_box: BoundingBox,
    pub object_box: BoundingBox,
    /// Predicate index, or the no-relation index for negatives.
    pub target: usize,
}

impl TrainingExample {
    pub fn spatial<T: Scalar>(&self, dim: usize) -> Result<Vec<T>> {
        build_spatial_input(&self.subject_box, &self.object_box, dim)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampledPairs {
    pub examples: Vec<TrainingExample>,
    /// Negatives requested but not available in the unannotated pool.
    pub shortfall: usize,
}

/// Positives for every annotated triplet plus `floor(neg_ratio * positives)`
/// "no relation" negatives drawn without replacement from the ordered object
/// pairs that carry no annotation.
pub fn sample_training_pairs<R: Rng + ?Sized>(
    record: &ImageRecord,
    neg_ratio: f64,
    no_relation_index: usize,
    rng: &mut R,
) -> Result<SampledPairs> {
    if !(neg_ratio >= 0.0 && neg_ratio.is_finite()) {
        return Err(Error::Domain {
            what: "neg_ratio must be finite and non-negative",
            value: neg_ratio,
        });
    }
    let mut examples: Vec<TrainingExample> = record
        .gt_triplets
        .iter()
        .map(|t| TrainingExample {
            subject_class: t.subject_label,
            object_class: t.object_label,
            subject_box: t.subject_box,
            object_box: t.object_box,
            target: t.predicate,
        })
        .collect();

    let wanted = (neg_ratio * examples.len() as f64).floor() as usize;
    if wanted == 0 {
        return Ok(SampledPairs {
            examples,
            shortfall: 0,
        });
    }
    let annotated: HashSet<(usize, usize)> = record
        .gt_triplets
        .iter()
        .map(|t| (t.subject_index, t.object_index))
        .collect();
    let n = record.gt_objects.len();
    let pool: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j && !annotated.contains(&(i, j)))
        .collect();
    let take = wanted.min(pool.len());
    for idx in rand::seq::index::sample(rng, pool.len(), take) {
        let (i, j) = pool[idx];
        let (s, o) = (record.gt_objects[i], record.gt_objects[j]);
        examples.push(TrainingExample {
            subject_class: s.class,
            object_class: o.class,
            subject_box: s.bbox,
            object_box: o.bbox,
            target: no_relation_index,
        });
    }
    Ok(SampledPairs {
        examples,
        shortfall: wanted - take,
    })
}
