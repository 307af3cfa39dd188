//! Synthetic worlds with planted semantic groups for zero-shot tests.
//!
//! Classes live in groups. Each predicate is a rule on an ordered pair of
//! groups, so a held-out class pair of a rule can only be recognized through
//! its embedding's proximity to trained classes of the same group.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::{
    to_record, AnnotationDetection, AnnotationImage, AnnotationObject, AnnotationTriplet,
    ImageRecord, LoadOptions, ObjectVocabulary, PredicateVocabulary, TripletType, Vocabulary,
    SPATIAL_COORDS,
};
use crate::embeddings::{EmbeddingTable, WordVector};
use crate::error::{Error, Result};

/// Side length of every synthetic image in pixels.
pub const IMAGE_SIZE: u32 = 1000;
/// Maximum per-coordinate box jitter in pixels.
pub const JITTER_PX: i64 = 40;
/// Probability mass a synthetic detection spreads off its true class.
pub const DETECTION_EPSILON: f64 = 0.01;

const BOX_PX: i64 = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_groups: usize,
    pub classes_per_group: usize,
    pub num_predicates: usize,
    pub dim: usize,
    pub intra_group_spread: f64,
    pub inter_group_separation: f64,
    pub images_train: usize,
    pub images_test: usize,
    pub held_out_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_groups: 4,
            classes_per_group: 9,
            num_predicates: 12,
            dim: 16,
            intra_group_spread: 0.3,
            inter_group_separation: 1.0,
            images_train: 400,
            images_test: 200,
            held_out_fraction: 0.2,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Generation(m));
        if self.num_groups < 2 {
            return fail("need at least 2 groups".into());
        }
        if self.classes_per_group < 2 {
            return fail("a group with a single class leaves nothing to hold out".into());
        }
        let max_rules = self.num_groups * (self.num_groups - 1);
        if self.num_predicates < 2 || self.num_predicates > max_rules {
            return fail(format!(
                "num_predicates must be in 2..={max_rules} for {} groups",
                self.num_groups
            ));
        }
        if self.dim < SPATIAL_COORDS.max(self.num_groups + 1) {
            return fail(format!(
                "dim must be at least {}",
                SPATIAL_COORDS.max(self.num_groups + 1)
            ));
        }
        if !(self.intra_group_spread >= 0.0
            && self.inter_group_separation > 2.0 * self.intra_group_spread)
        {
            return fail("inter_group_separation must exceed 2 * intra_group_spread".into());
        }
        if !(self.held_out_fraction > 0.0 && self.held_out_fraction < 1.0) {
            return fail("held_out_fraction must be in (0, 1)".into());
        }
        if self.images_train == 0 {
            return fail("images_train must be positive".into());
        }
        Ok(())
    }

    /// Held-out classes per group: `round(C * sqrt(f))` clamped to `1..C`, so
    /// that about a fraction `f` of each rule's class pairs is held out.
    pub fn novel_per_group(&self) -> usize {
        let c = self.classes_per_group;
        ((c as f64 * self.held_out_fraction.sqrt()).round() as usize).clamp(1, c - 1)
    }
}

/// Relative placement of subject and object.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    Above,
    Below,
    LeftOf,
    RightOf,
}

impl Layout {
    pub const ALL: [Layout; 4] = [
        Layout::Above,
        Layout::Below,
        Layout::LeftOf,
        Layout::RightOf,
    ];

    /// Unjittered `(x, y)` pixel origins of subject and object.
    fn anchors(self) -> [(i64, i64); 2] {
        let (near, far, mid) = (150, 550, 400);
        match self {
            Layout::Above => [(mid, near), (mid, far)],
            Layout::Below => [(mid, far), (mid, near)],
            Layout::LeftOf => [(near, mid), (far, mid)],
            Layout::RightOf => [(far, mid), (near, mid)],
        }
    }
}

/// A predicate's generating rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rule {
    pub subject_group: usize,
    pub object_group: usize,
    /// `None` draws a layout per instance.
    pub layout: Option<Layout>,
}

#[derive(Debug, Clone)]
pub struct SynthWorld {
    pub config: SynthConfig,
    pub table: EmbeddingTable<f64>,
    pub objects: ObjectVocabulary,
    pub predicates: PredicateVocabulary,
    pub rules: Vec<Rule>,
    /// Group of each object class.
    pub class_group: Vec<usize>,
    /// Whether each object class is held out of training.
    pub novel: Vec<bool>,
    pub train_annotations: Vec<AnnotationImage>,
    pub test_annotations: Vec<AnnotationImage>,
    pub train: Vec<ImageRecord>,
    pub test: Vec<ImageRecord>,
    /// Test triplet types absent from training, sorted.
    pub zero_shot_types: Vec<TripletType>,
}

impl SynthWorld {
    /// Index of the predicate whose rule covers `(subject_group, object_group)`.
    pub fn rule_for(&self, subject_group: usize, object_group: usize) -> Option<usize> {
        self.rules
            .iter()
            .position(|r| r.subject_group == subject_group && r.object_group == object_group)
    }
}

/// Ordered group pairs: `(0, 1)`, `(1, 0)`, then the rest lexicographically.
fn group_pairs(groups: usize) -> Vec<(usize, usize)> {
    let mut pairs = vec![(0, 1), (1, 0)];
    for a in 0..groups {
        for b in 0..groups {
            if a != b && !pairs.contains(&(a, b)) {
                pairs.push((a, b));
            }
        }
    }
    pairs
}

fn predicate_name(p: usize) -> String {
    match p {
        0 => "on".into(),
        1 => "under".into(),
        _ => format!("rel{p}"),
    }
}

fn class_name(group: usize, member: usize) -> String {
    format!("g{group}c{member}")
}

/// Centroid `separation * e_g` plus noise confined to the non-centroid axes.
fn class_vectors(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let g = config.num_groups;
    let mut out = Vec::with_capacity(g * config.classes_per_group);
    for group in 0..g {
        for _ in 0..config.classes_per_group {
            let mut v = vec![0.0; config.dim];
            v[group] = config.inter_group_separation;
            let noise: Vec<f64> = (g..config.dim)
                .map(|_| rng.sample(StandardNormal))
                .collect();
            let norm = noise.iter().map(|x| x * x).sum::<f64>().sqrt();
            let radius = config.intra_group_spread * rng.random_range(0.5..=1.0);
            if norm > 0.0 {
                for (slot, n) in v[g..].iter_mut().zip(&noise) {
                    *slot = n / norm * radius;
                }
            }
            out.push(v);
        }
    }
    out
}

struct Builder<'a> {
    rules: &'a [Rule],
    names: &'a [String],
    pred_names: &'a [String],
    rng: ChaCha8Rng,
}

impl Builder<'_> {
    fn jittered(&mut self, (x, y): (i64, i64)) -> [f64; 4] {
        let mut j = || self.rng.random_range(-JITTER_PX..=JITTER_PX);
        [
            (x + j()) as f64,
            (y + j()) as f64,
            (BOX_PX + j()) as f64,
            (BOX_PX + j()) as f64,
        ]
    }

    fn detection(&self, bbox: [f64; 4], class: usize) -> AnnotationDetection {
        let n = self.names.len();
        let off = DETECTION_EPSILON / n as f64;
        let mut probs = vec![off; n + 1];
        probs[class] = 1.0 - DETECTION_EPSILON;
        AnnotationDetection { bbox, probs }
    }

    /// One image holding `<subject, rule, object>` plus the mirrored triplet
    /// when the reversed group pair has a rule.
    fn image(
        &mut self,
        id: String,
        rule_idx: usize,
        subject: usize,
        object: usize,
    ) -> AnnotationImage {
        let rule = self.rules[rule_idx];
        let layout = match rule.layout {
            Some(l) => l,
            None => *Layout::ALL.choose(&mut self.rng).expect("non-empty"),
        };
        let [sa, oa] = layout.anchors();
        let sb = self.jittered(sa);
        let ob = self.jittered(oa);
        let mut triplets = vec![AnnotationTriplet {
            s: 0,
            p: self.pred_names[rule_idx].clone(),
            o: 1,
        }];
        if let Some(rev) = self.rules.iter().position(|r| {
            r.subject_group == rule.object_group && r.object_group == rule.subject_group
        }) {
            triplets.push(AnnotationTriplet {
                s: 1,
                p: self.pred_names[rev].clone(),
                o: 0,
            });
        }
        AnnotationImage {
            image_id: id,
            width: IMAGE_SIZE,
            height: IMAGE_SIZE,
            objects: vec![
                AnnotationObject {
                    class: self.names[subject].clone(),
                    bbox: sb,
                },
                AnnotationObject {
                    class: self.names[object].clone(),
                    bbox: ob,
                },
            ],
            triplets,
            detections: Some(vec![
                self.detection(sb, subject),
                self.detection(ob, object),
            ]),
        }
    }
}

/// Builds a world deterministically from `config.seed`.
pub fn generate_world(config: &SynthConfig) -> Result<SynthWorld> {
    config.validate()?;
    let g = config.num_groups;
    let c = config.classes_per_group;
    let k = config.num_predicates;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let names: Vec<String> = (0..g)
        .flat_map(|grp| (0..c).map(move |m| class_name(grp, m)))
        .collect();
    let class_group: Vec<usize> = (0..g * c).map(|i| i / c).collect();
    let n_novel = config.novel_per_group();
    let novel: Vec<bool> = (0..g * c).map(|i| i % c >= c - n_novel).collect();

    let mut table = EmbeddingTable::new(config.dim);
    for (name, v) in names.iter().zip(class_vectors(config, &mut rng)) {
        table.insert(name, WordVector::new(v)?)?;
    }

    let rules: Vec<Rule> = group_pairs(g)
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(p, (a, b))| Rule {
            subject_group: a,
            object_group: b,
            layout: match p {
                0 => Some(Layout::Above),
                1 => Some(Layout::Below),
                _ => None,
            },
        })
        .collect();
    let pred_names: Vec<String> = (0..k).map(predicate_name).collect();
    let members = |group: usize, held_out: bool| -> Vec<usize> {
        (group * c..(group + 1) * c)
            .filter(|&i| novel[i] == held_out)
            .collect()
    };

    let mut builder = Builder {
        rules: &rules,
        names: &names,
        pred_names: &pred_names,
        rng,
    };

    let mut train_annotations = Vec::with_capacity(config.images_train);
    let mut train_pairs = Vec::with_capacity(config.images_train);
    for i in 0..config.images_train {
        let p = i % k;
        let s = *members(rules[p].subject_group, false)
            .choose(&mut builder.rng)
            .expect("seen class");
        let o = *members(rules[p].object_group, false)
            .choose(&mut builder.rng)
            .expect("seen class");
        train_pairs.push((p, s, o));
        train_annotations.push(builder.image(format!("train{i:05}"), p, s, o));
    }

    let transfer_rules: Vec<usize> = (2..k).collect();
    let mut test_annotations = Vec::with_capacity(config.images_test);
    for i in 0..config.images_test {
        let (p, s, o) = if i % 2 == 0 && !transfer_rules.is_empty() {
            let p = transfer_rules[(i / 2) % transfer_rules.len()];
            let s = *members(rules[p].subject_group, true)
                .choose(&mut builder.rng)
                .expect("novel class");
            let o = *members(rules[p].object_group, true)
                .choose(&mut builder.rng)
                .expect("novel class");
            (p, s, o)
        } else {
            *train_pairs
                .choose(&mut builder.rng)
                .expect("training images")
        };
        test_annotations.push(builder.image(format!("test{i:05}"), p, s, o));
    }

    let objects = Vocabulary::new(&names)?;
    let predicates = Vocabulary::new(&pred_names)?;
    let records = |anns: &[AnnotationImage]| -> Result<Vec<ImageRecord>> {
        anns.iter()
            .map(|a| to_record(a, &predicates, &objects, LoadOptions::default()))
            .collect()
    };
    let train = records(&train_annotations)?;
    let test = records(&test_annotations)?;

    let trained: BTreeSet<TripletType> = train
        .iter()
        .flat_map(|r| r.gt_triplets.iter().map(|t| t.kind()))
        .collect();
    let zero_shot_types: Vec<TripletType> = test
        .iter()
        .flat_map(|r| r.gt_triplets.iter().map(|t| t.kind()))
        .filter(|t| !trained.contains(t))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if zero_shot_types
        .iter()
        .any(|&(s, _, o)| !(novel[s] && novel[o]))
    {
        return Err(Error::Generation(
            "a seen-class test type is missing from training".into(),
        ));
    }

    Ok(SynthWorld {
        config: config.clone(),
        table,
        objects,
        predicates,
        rules,
        class_group,
        novel,
        train_annotations,
        test_annotations,
        train,
        test,
        zero_shot_types,
    })
}

/// Same tokens, vectors permuted among them. Destroys group structure while
/// keeping the set of vectors.
pub fn shuffled_embeddings(table: &EmbeddingTable<f64>, seed: u64) -> Result<EmbeddingTable<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vectors: Vec<WordVector<f64>> = table.iter().map(|(_, v)| v.clone()).collect();
    vectors.shuffle(&mut rng);
    let mut out = EmbeddingTable::new(table.dim());
    for ((token, _), v) in table.iter().zip(vectors) {
        out.insert(token, v)?;
    }
    Ok(out)
}

pub const EMBEDDINGS_FILE: &str = "embeddings.txt";
pub const OBJECTS_FILE: &str = "objects.txt";
pub const PREDICATES_FILE: &str = "predicates.txt";
pub const TRAIN_FILE: &str = "train.json";
pub const TEST_FILE: &str = "test.json";
pub const ZERO_SHOT_FILE: &str = "zero_shot.json";

/// Writes the world in the on-disk formats the loaders read.
pub fn write_world(world: &SynthWorld, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::from(e).in_file(dir))?;
    let write = |name: &str, bytes: Vec<u8>| {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::from(e).in_file(&path))
    };

    let mut buf = Vec::new();
    world.table.write_glove(&mut buf)?;
    write(EMBEDDINGS_FILE, buf)?;
    let mut buf = Vec::new();
    world.objects.write(&mut buf)?;
    write(OBJECTS_FILE, buf)?;
    let mut buf = Vec::new();
    world.predicates.write(&mut buf)?;
    write(PREDICATES_FILE, buf)?;
    for (name, anns) in [
        (TRAIN_FILE, &world.train_annotations),
        (TEST_FILE, &world.test_annotations),
    ] {
        let mut buf = Vec::new();
        crate::dataset::write_annotations(anns, &mut buf)?;
        buf.push(b'\n');
        write(name, buf)?;
    }
    let types: Vec<[&str; 3]> = world
        .zero_shot_types
        .iter()
        .map(|&(s, p, o)| {
            [
                world.objects.name(s).unwrap_or_default(),
                world.predicates.name(p).unwrap_or_default(),
                world.objects.name(o).unwrap_or_default(),
            ]
        })
        .collect();
    let mut buf = serde_json::to_vec_pretty(&types)?;
    buf.push(b'\n');
    write(ZERO_SHOT_FILE, buf)
}
