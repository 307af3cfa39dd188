use std::fs;
use std::path::{Path, PathBuf};

use relnet::brnn::{grad_check, BrnnParams, NetworkDims, DEFAULT_HIDDEN};
use relnet::checkpoint::{load_checkpoint, save_checkpoint};
use relnet::dataset::{
    derive_zero_shot_split, load_annotations, ImageRecord, LoadOptions, RelationshipTriplet,
    Vocabulary,
};
use relnet::embeddings::{
    analogy, cosine_distance, load_embeddings_file, lookup_class_vector, nearest, EmbeddingTable,
    OovPolicy,
};
use relnet::evaluation::{
    group_by_image, per_type_accuracy, predicate_recall, recall_at_k_with, reports_to_json,
    write_per_type_csv, write_recall_csv, RecallReport, TaskMode, TypeRecall,
};
use relnet::inference::{write_prediction_dump, Predictor};
use relnet::synthbench::{generate_world, write_world};
use relnet::trainer::train_with;
use sha2::{Digest, Sha256};

use crate::{CliError, EmbedQuery, RunConfig};

/// Threshold for `gradcheck` to succeed.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Cut-off of the per-predicate table.
pub const PER_TYPE_K: usize = 5;

fn require<'a>(value: &'a Option<PathBuf>, flag: &'static str) -> Result<&'a Path, CliError> {
    value.as_deref().ok_or(CliError::Missing(flag))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Creates the output directory and echoes the effective config into it.
fn prepare_out(cfg: &RunConfig, command: &str) -> Result<PathBuf, CliError> {
    let dir = cfg.out.clone();
    fs::create_dir_all(&dir).map_err(|e| CliError::Io {
        path: dir.clone(),
        source: e,
    })?;
    write_file(&dir.join(format!("{command}_config.txt")), cfg.render())?;
    Ok(dir)
}

fn load_options(cfg: &RunConfig) -> LoadOptions {
    LoadOptions {
        min_edge_px: cfg.min_edge_px,
    }
}

fn json_bytes(value: &serde_json::Value) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(relnet::Error::from)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let objects = Vocabulary::load(require(&cfg.objects, "objects")?)?;
    let predicates = Vocabulary::load(require(&cfg.predicates, "predicates")?)?;
    let table: EmbeddingTable<f64> = load_embeddings_file(
        require(&cfg.embeddings, "embeddings")?,
        cfg.dims.map(|d| d.0),
    )?;
    if let Some((_, _, out)) = cfg.dims {
        if out != predicates.output_dim() {
            return Err(CliError::Config(format!(
                "dims OUT is {out} but {} predicates need {}",
                predicates.len(),
                predicates.output_dim()
            )));
        }
    }
    let records = load_annotations(
        require(&cfg.train, "train")?,
        &predicates,
        &objects,
        load_options(cfg),
    )?;
    let hidden = cfg.dims.map_or(DEFAULT_HIDDEN, |d| d.1);
    let tc = cfg.training(hidden, cfg.oov_or(OovPolicy::Error));

    let (params, history) = train_with(&records, &table, &objects, &predicates, &tc, |r| {
        eprintln!(
            "epoch {:>4}  loss {:.6}  accuracy {:.4}",
            r.epoch, r.mean_loss, r.accuracy
        );
    })?;

    let dir = prepare_out(cfg, "train")?;
    let ckpt = cfg
        .checkpoint
        .clone()
        .unwrap_or_else(|| dir.join("checkpoint.json"));
    save_checkpoint(&params, &predicates, &ckpt)?;

    let mut csv = String::from("epoch,mean_loss,accuracy\n");
    for (i, (l, a)) in history
        .epoch_loss
        .iter()
        .zip(&history.epoch_accuracy)
        .enumerate()
    {
        csv.push_str(&format!("{},{l},{a}\n", i + 1));
    }
    write_file(&dir.join("training_history.csv"), csv)?;
    let report = serde_json::json!({
        "initial_loss": history.initial_loss,
        "final_epoch_loss": history.epoch_loss.last(),
        "epochs": history.epochs(),
        "num_examples": history.num_examples,
        "negative_shortfall": history.negative_shortfall,
        "checkpoint_sha256": sha256_file(&ckpt)?,
        "config_sha256": cfg.settings_hash(),
    });
    write_file(&dir.join("train_report.json"), json_bytes(&report)?)?;
    println!(
        "trained on {} examples for {} epochs, loss {:.6} -> {:.6}; checkpoint {}",
        history.num_examples,
        history.epochs(),
        history.initial_loss,
        history
            .epoch_loss
            .last()
            .copied()
            .unwrap_or(history.initial_loss),
        ckpt.display()
    );
    Ok(())
}

struct Model {
    params: BrnnParams<f64>,
    predicates: Vocabulary,
    objects: Vocabulary,
    table: EmbeddingTable<f64>,
    checkpoint_hash: String,
}

fn load_model(cfg: &RunConfig) -> Result<Model, CliError> {
    let ckpt = require(&cfg.checkpoint, "checkpoint")?;
    let (params, dims, predicates) = load_checkpoint::<f64>(ckpt)?;
    if let Some(path) = &cfg.predicates {
        if Vocabulary::load(path)? != predicates {
            return Err(CliError::Config(format!(
                "{} differs from the checkpoint's predicate list",
                path.display()
            )));
        }
    }
    if let Some(d) = cfg.dims {
        if d != (dims.input_dim, dims.hidden_dim, dims.output_dim) {
            return Err(CliError::Config(format!(
                "dims {:?} do not match the checkpoint ({}, {}, {})",
                d, dims.input_dim, dims.hidden_dim, dims.output_dim
            )));
        }
    }
    let objects = Vocabulary::load(require(&cfg.objects, "objects")?)?;
    let table = load_embeddings_file(
        require(&cfg.embeddings, "embeddings")?,
        Some(dims.input_dim),
    )?;
    Ok(Model {
        params,
        predicates,
        objects,
        table,
        checkpoint_hash: sha256_file(ckpt)?,
    })
}

fn evaluate(
    cfg: &RunConfig,
    predictor: &Predictor<'_, f64>,
    records: &[ImageRecord],
    gts: &[Vec<RelationshipTriplet>],
) -> Result<(Vec<RecallReport>, Vec<TypeRecall>), CliError> {
    let pairs = predictor.predict_all_gt_pairs(records)?;
    let per_type = per_type_accuracy(&pairs, gts, PER_TYPE_K)?;
    let reports = if cfg.mode == TaskMode::PredicateDetection {
        cfg.ks()
            .into_iter()
            .map(|k| predicate_recall(&pairs, gts, k, cfg.pooling))
            .collect::<Result<_, _>>()?
    } else {
        let lists = predictor.rank_all(records, cfg.max_k(), cfg.det_threshold)?;
        cfg.ks()
            .into_iter()
            .map(|k| recall_at_k_with(&lists, gts, k, cfg.mode, cfg.iou_threshold))
            .collect::<Result<_, _>>()?
    };
    Ok((reports, per_type))
}

fn write_reports(
    cfg: &RunConfig,
    dir: &Path,
    prefix: &str,
    model: &Model,
    reports: &[RecallReport],
    per_type: &[TypeRecall],
) -> Result<(), CliError> {
    let config_hash = cfg.settings_hash();
    let extra = [
        ("checkpoint_sha256", model.checkpoint_hash.as_str()),
        ("config_sha256", config_hash.as_str()),
    ];
    let mut buf = Vec::new();
    write_recall_csv(reports, &extra, &mut buf)?;
    write_file(&dir.join(format!("{prefix}recall.csv")), &buf)?;
    let mut buf = Vec::new();
    write_per_type_csv(per_type, PER_TYPE_K, &model.predicates, &extra, &mut buf)?;
    write_file(&dir.join(format!("{prefix}per_type.csv")), &buf)?;

    let per_type_json: serde_json::Map<String, serde_json::Value> = per_type
        .iter()
        .map(|t| {
            let name = model
                .predicates
                .name(t.predicate)
                .unwrap_or_default()
                .to_string();
            (
                name,
                serde_json::json!({ "recall": t.recall, "gt_count": t.gt_count }),
            )
        })
        .collect();
    let report = serde_json::json!({
        "checkpoint_sha256": model.checkpoint_hash,
        "config_sha256": config_hash,
        "reports": reports_to_json(reports, &model.predicates),
        "per_type_k": PER_TYPE_K,
        "per_type": per_type_json,
    });
    write_file(
        &dir.join(format!("{prefix}report.json")),
        json_bytes(&report)?,
    )?;

    for r in reports {
        let pooling = r
            .pooling
            .map_or(String::new(), |p| format!(", {}", p.name()));
        println!(
            "{}{} Rec@{} = {:.4} ({}/{}{pooling})",
            prefix.replace('_', " "),
            r.mode,
            r.k,
            r.recall,
            r.num_matched,
            r.num_gt
        );
    }
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> Result<(), CliError> {
    let model = load_model(cfg)?;
    let records = load_annotations(
        require(&cfg.test, "test")?,
        &model.predicates,
        &model.objects,
        load_options(cfg),
    )?;
    let predictor = Predictor::new(
        &model.params,
        &model.table,
        &model.objects,
        cfg.oov_or(OovPolicy::Error),
    )?
    .with_pruning(cfg.prune_no_relation);
    let gts: Vec<Vec<RelationshipTriplet>> =
        records.iter().map(|r| r.gt_triplets.clone()).collect();
    let (reports, per_type) = evaluate(cfg, &predictor, &records, &gts)?;
    let dir = prepare_out(cfg, "eval")?;
    write_reports(cfg, &dir, "", &model, &reports, &per_type)
}

pub fn zeroshot(cfg: &RunConfig) -> Result<(), CliError> {
    let model = load_model(cfg)?;
    let opts = load_options(cfg);
    let train = load_annotations(
        require(&cfg.train, "train")?,
        &model.predicates,
        &model.objects,
        opts,
    )?;
    let test = load_annotations(
        require(&cfg.test, "test")?,
        &model.predicates,
        &model.objects,
        opts,
    )?;
    let split = derive_zero_shot_split(&train, &test);
    let gts = group_by_image(&test, &split)?;
    let predictor = Predictor::new(
        &model.params,
        &model.table,
        &model.objects,
        cfg.oov_or(OovPolicy::Error),
    )?
    .with_pruning(cfg.prune_no_relation);
    let (reports, per_type) = evaluate(cfg, &predictor, &test, &gts)?;
    let dir = prepare_out(cfg, "zeroshot")?;
    if split.is_empty() {
        eprintln!("warning: the test set has no zero-shot triplets; recall is reported as 0");
    }
    write_reports(cfg, &dir, "zeroshot_", &model, &reports, &per_type)
}

pub fn predict(cfg: &RunConfig) -> Result<(), CliError> {
    let model = load_model(cfg)?;
    let records = load_annotations(
        require(&cfg.test, "test")?,
        &model.predicates,
        &model.objects,
        load_options(cfg),
    )?;
    let predictor = Predictor::new(
        &model.params,
        &model.table,
        &model.objects,
        cfg.oov_or(OovPolicy::Zero),
    )?
    .with_pruning(cfg.prune_no_relation);
    let lists = predictor.rank_all(&records, cfg.max_k(), cfg.det_threshold)?;
    let total: usize = lists.iter().map(Vec::len).sum();
    let dump: Vec<_> = records
        .iter()
        .map(|r| r.image_id.clone())
        .zip(lists)
        .collect();
    let dir = prepare_out(cfg, "predict")?;
    let path = dir.join("predictions.json");
    let mut buf = Vec::new();
    write_prediction_dump(&dump, &model.objects, &model.predicates, &mut buf)?;
    write_file(&path, buf)?;
    println!(
        "wrote {total} predictions for {} images to {}",
        records.len(),
        path.display()
    );
    Ok(())
}

pub fn gradcheck(cfg: &RunConfig) -> Result<(), CliError> {
    let (d, h, o) = cfg.dims.unwrap_or((4, 3, 3));
    let report = grad_check(NetworkDims::new(d, h, o)?, cfg.seed, cfg.epsilon)?;
    println!(
        "max relative error {:.3e} over {} coordinates (worst: {}[{}])",
        report.max_relative_error, report.coordinates, report.worst.0, report.worst.1
    );
    if report.max_relative_error < GRADCHECK_TOLERANCE {
        Ok(())
    } else {
        Err(CliError::GradCheck {
            error: report.max_relative_error,
            tolerance: GRADCHECK_TOLERANCE,
        })
    }
}

pub fn synth(cfg: &RunConfig) -> Result<(), CliError> {
    let mut sc = cfg.synth.clone();
    sc.seed = cfg.seed;
    if let Some((d, _, o)) = cfg.dims {
        sc.dim = d;
        sc.num_predicates = o - 1;
    }
    let world = generate_world(&sc)?;
    let dir = prepare_out(cfg, "synth")?;
    write_world(&world, &dir)?;
    println!(
        "wrote a world of {} classes in {} groups, {} predicates, {} train and {} test images, {} zero-shot types to {}",
        world.objects.len(),
        sc.num_groups,
        world.predicates.len(),
        world.train.len(),
        world.test.len(),
        world.zero_shot_types.len(),
        dir.display()
    );
    Ok(())
}

pub fn embed(cfg: &RunConfig, query: &EmbedQuery) -> Result<(), CliError> {
    let table: EmbeddingTable<f64> = load_embeddings_file(
        require(&cfg.embeddings, "embeddings")?,
        cfg.dims.map(|d| d.0),
    )?;
    let oov = cfg.oov_or(OovPolicy::Zero);
    let count = cfg
        .k
        .as_ref()
        .and_then(|k| k.first().copied())
        .unwrap_or(10);
    let print_list = |list: Vec<(String, f64)>| {
        for (token, dist) in list {
            println!("{token}\t{dist:.6}");
        }
    };
    match query {
        EmbedQuery::Distance { a, b } => {
            let va = lookup_class_vector(&table, a, oov)?;
            let vb = lookup_class_vector(&table, b, oov)?;
            println!("{:.6}", cosine_distance(&va, &vb)?);
        }
        EmbedQuery::Analogy { a, b, c } => print_list(analogy(&table, a, b, c, count)?),
        EmbedQuery::Nearest { word } => {
            let v = lookup_class_vector(&table, word, oov)?;
            print_list(nearest(&table, &v, count, &[word.as_str()])?);
        }
    }
    Ok(())
}
