//! Run configuration: defaults, then a `key = value` file, then flags.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use relnet::embeddings::OovPolicy;
use relnet::evaluation::{Pooling, TaskMode};
use relnet::synthbench::SynthConfig;
use relnet::trainer::TrainingConfig;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const DEFAULT_OUT: &str = "relnet-out";
pub const OUT_ENV: &str = "RELNET_OUT";
pub const DEFAULT_KS: [usize; 2] = [50, 100];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub embeddings: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub objects: Option<PathBuf>,
    pub predicates: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: PathBuf,

    pub seed: u64,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub clip: f64,
    pub neg_ratio: f64,
    pub shuffle: bool,
    /// Unset means `[50, 100]` for evaluation.
    pub k: Option<Vec<usize>>,
    pub mode: TaskMode,
    pub pooling: Pooling,
    pub det_threshold: f64,
    pub iou_threshold: f64,
    pub prune_no_relation: bool,
    pub min_edge_px: Option<f64>,
    /// `(D, H, OUT)`.
    pub dims: Option<(usize, usize, usize)>,
    pub oov: Option<OovPolicy>,
    pub epsilon: f64,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainingConfig::default();
        Self {
            embeddings: None,
            train: None,
            test: None,
            objects: None,
            predicates: None,
            checkpoint: None,
            out: std::env::var_os(OUT_ENV)
                .map_or_else(|| PathBuf::from(DEFAULT_OUT), PathBuf::from),
            seed: t.seed,
            lr: t.learning_rate,
            batch: t.batch_size,
            epochs: t.max_epochs,
            clip: t.clip_norm,
            neg_ratio: t.neg_ratio,
            shuffle: t.shuffle,
            k: None,
            mode: TaskMode::PredicateDetection,
            pooling: Pooling::PerImage,
            det_threshold: 0.0,
            iou_threshold: relnet::evaluation::IOU_THRESHOLD,
            prune_no_relation: false,
            min_edge_px: None,
            dims: None,
            oov: None,
            epsilon: 1e-5,
            synth: SynthConfig::default(),
        }
    }
}

/// Keys naming file locations. They are echoed but left out of the config hash.
const PATH_KEYS: [&str; 7] = [
    "embeddings",
    "train",
    "test",
    "objects",
    "predicates",
    "checkpoint",
    "out",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(CliError::Config(format!(
            "`{key}`: expected true or false, got `{value}`"
        ))),
    }
}

pub fn parse_dims(value: &str) -> Result<(usize, usize, usize), String> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    let nums: Option<Vec<usize>> = parts.iter().map(|p| p.parse().ok()).collect();
    match nums.as_deref() {
        Some(&[d, h, o]) if d > 0 && h > 0 && o > 1 => Ok((d, h, o)),
        _ => Err(format!(
            "expected D,H,OUT with D, H >= 1 and OUT >= 2, got `{value}`"
        )),
    }
}

pub fn parse_oov(value: &str) -> Result<OovPolicy, String> {
    match value {
        "error" => Ok(OovPolicy::Error),
        "zero" => Ok(OovPolicy::Zero),
        other => Err(format!("expected `error` or `zero`, got `{other}`")),
    }
}

fn oov_name(oov: OovPolicy) -> &'static str {
    match oov {
        OovPolicy::Error => "error",
        OovPolicy::Zero => "zero",
    }
}

impl RunConfig {
    /// Sets one key. Underscores and dashes are interchangeable.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        let path = || Some(PathBuf::from(value));
        match key.as_str() {
            "embeddings" => self.embeddings = path(),
            "train" => self.train = path(),
            "test" => self.test = path(),
            "objects" => self.objects = path(),
            "predicates" => self.predicates = path(),
            "checkpoint" => self.checkpoint = path(),
            "out" => self.out = PathBuf::from(value),
            "seed" => self.seed = parse(&key, value)?,
            "lr" => self.lr = parse(&key, value)?,
            "batch" => self.batch = parse(&key, value)?,
            "epochs" => self.epochs = parse(&key, value)?,
            "clip" => self.clip = parse(&key, value)?,
            "neg-ratio" => self.neg_ratio = parse(&key, value)?,
            "shuffle" => self.shuffle = parse_bool(&key, value)?,
            "k" => {
                let ks: Vec<usize> = value
                    .split(',')
                    .map(|v| parse(&key, v.trim()))
                    .collect::<Result<_, _>>()?;
                if ks.is_empty() || ks.contains(&0) {
                    return Err(CliError::Config("`k` values must be positive".into()));
                }
                self.k = Some(ks);
            }
            "mode" => {
                self.mode = value
                    .parse()
                    .map_err(|e: relnet::Error| CliError::Config(e.to_string()))?
            }
            "pooling" => {
                self.pooling = value
                    .parse()
                    .map_err(|e: relnet::Error| CliError::Config(e.to_string()))?
            }
            "det-threshold" => self.det_threshold = parse(&key, value)?,
            "iou-threshold" => self.iou_threshold = parse(&key, value)?,
            "prune-no-relation" => self.prune_no_relation = parse_bool(&key, value)?,
            "min-edge-px" => self.min_edge_px = Some(parse(&key, value)?),
            "dims" => {
                self.dims =
                    Some(parse_dims(value).map_err(|e| CliError::Config(format!("`dims`: {e}")))?)
            }
            "oov" => {
                self.oov =
                    Some(parse_oov(value).map_err(|e| CliError::Config(format!("`oov`: {e}")))?)
            }
            "epsilon" => self.epsilon = parse(&key, value)?,
            "synth-groups" => self.synth.num_groups = parse(&key, value)?,
            "synth-classes" => self.synth.classes_per_group = parse(&key, value)?,
            "synth-predicates" => self.synth.num_predicates = parse(&key, value)?,
            "synth-dim" => self.synth.dim = parse(&key, value)?,
            "synth-spread" => self.synth.intra_group_spread = parse(&key, value)?,
            "synth-separation" => self.synth.inter_group_separation = parse(&key, value)?,
            "synth-train-images" => self.synth.images_train = parse(&key, value)?,
            "synth-test-images" => self.synth.images_test = parse(&key, value)?,
            "synth-held-out" => self.synth.held_out_fraction = parse(&key, value)?,
            _ => return Err(CliError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies a `key = value` file. `#` starts a comment line.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!(
                    "{}:{}: expected `key = value`",
                    path.display(),
                    idx + 1
                ))
            })?;
            self.apply(key, value)
                .map_err(|e| CliError::Config(format!("{}:{}: {e}", path.display(), idx + 1)))?;
        }
        Ok(())
    }

    /// Every key with its effective value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let paths = [
            ("embeddings", &self.embeddings),
            ("train", &self.train),
            ("test", &self.test),
            ("objects", &self.objects),
            ("predicates", &self.predicates),
            ("checkpoint", &self.checkpoint),
        ];
        for (key, p) in paths {
            if let Some(p) = p {
                out.push((key, p.display().to_string()));
            }
        }
        out.push(("out", self.out.display().to_string()));
        out.extend([
            ("seed", self.seed.to_string()),
            ("lr", self.lr.to_string()),
            ("batch", self.batch.to_string()),
            ("epochs", self.epochs.to_string()),
            ("clip", self.clip.to_string()),
            ("neg-ratio", self.neg_ratio.to_string()),
            ("shuffle", self.shuffle.to_string()),
            ("mode", self.mode.name().to_string()),
            ("pooling", self.pooling.name().to_string()),
            ("det-threshold", self.det_threshold.to_string()),
            ("iou-threshold", self.iou_threshold.to_string()),
            ("prune-no-relation", self.prune_no_relation.to_string()),
        ]);
        if let Some(ks) = &self.k {
            let ks: Vec<String> = ks.iter().map(usize::to_string).collect();
            out.push(("k", ks.join(",")));
        }
        if let Some(m) = self.min_edge_px {
            out.push(("min-edge-px", m.to_string()));
        }
        if let Some((d, h, o)) = self.dims {
            out.push(("dims", format!("{d},{h},{o}")));
        }
        if let Some(oov) = self.oov {
            out.push(("oov", oov_name(oov).to_string()));
        }
        let s = &self.synth;
        out.extend([
            ("epsilon", self.epsilon.to_string()),
            ("synth-groups", s.num_groups.to_string()),
            ("synth-classes", s.classes_per_group.to_string()),
            ("synth-predicates", s.num_predicates.to_string()),
            ("synth-dim", s.dim.to_string()),
            ("synth-spread", s.intra_group_spread.to_string()),
            ("synth-separation", s.inter_group_separation.to_string()),
            ("synth-train-images", s.images_train.to_string()),
            ("synth-test-images", s.images_test.to_string()),
            ("synth-held-out", s.held_out_fraction.to_string()),
        ]);
        out
    }

    /// The effective config as a file [`RunConfig::apply_file`] accepts.
    pub fn render(&self) -> String {
        let mut text = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(text, "{k} = {v}");
        }
        text
    }

    /// SHA-256 over the non-path settings, so moved inputs hash the same.
    pub fn settings_hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            if !PATH_KEYS.contains(&k) {
                h.update(format!("{k} = {v}\n"));
            }
        }
        hex::encode(h.finalize())
    }

    /// `oov` if set, else `fallback`.
    pub fn oov_or(&self, fallback: OovPolicy) -> OovPolicy {
        self.oov.unwrap_or(fallback)
    }

    pub fn training(&self, hidden_dim: usize, oov: OovPolicy) -> TrainingConfig {
        TrainingConfig {
            learning_rate: self.lr,
            batch_size: self.batch,
            max_epochs: self.epochs,
            clip_norm: self.clip,
            neg_ratio: self.neg_ratio,
            seed: self.seed,
            shuffle: self.shuffle,
            hidden_dim,
            oov,
        }
    }

    pub fn ks(&self) -> Vec<usize> {
        self.k.clone().unwrap_or_else(|| DEFAULT_KS.to_vec())
    }

    pub fn max_k(&self) -> usize {
        self.ks().into_iter().max().unwrap_or(1)
    }
}
