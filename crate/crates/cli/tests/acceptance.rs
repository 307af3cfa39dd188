//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Criterion 10 (full VRD reproduction) needs external data and is not gated.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relnet::brnn::{forward, grad_check, init_params, softmax, BrnnParams, NetworkDims};
use relnet::checkpoint::{from_json, load_checkpoint, save_checkpoint, to_json};
use relnet::dataset::{
    load_annotations, AnnotationImage, ImageRecord, LoadOptions, RelationshipTriplet, Vocabulary,
};
use relnet::embeddings::{load_embeddings_file, OovPolicy};
use relnet::evaluation::{iou, predicate_recall, recall_at_k, Pooling, TaskMode};
use relnet::geometry::BoundingBox;
use relnet::inference::{predict_predicate, PredictionItem, Predictor};
use relnet::synthbench::{self, generate_world, shuffled_embeddings, SynthConfig, SynthWorld};
use relnet::trainer::{mean_loss, prepare_examples, train, train_with, TrainingConfig};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// 1. Gradient fidelity

fn gradient_fidelity() -> Outcome {
    let dims = NetworkDims::new(4, 3, 3).map_err(fail)?;
    let start = Instant::now();
    let report = grad_check(dims, 7, 1e-5).map_err(fail)?;
    let elapsed = start.elapsed();
    check(
        report.max_relative_error < 1e-4
            && report.coordinates == dims.num_parameters()
            && elapsed < Duration::from_secs(5),
        format!(
            "max relative error {:.3e} over {}/{} coordinates in {:.2?}",
            report.max_relative_error,
            report.coordinates,
            dims.num_parameters(),
            elapsed
        ),
    )
}

// 2. Softmax

fn softmax_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..1000 {
        let len = rng.random_range(2..=71);
        let scale = if case % 10 == 0 { 500.0 } else { 30.0 };
        let logits: Vec<f64> = (0..len).map(|_| rng.random_range(-scale..=scale)).collect();
        let p = softmax(&logits);
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || p.iter().any(|v| !v.is_finite()) {
            return Err(format!("case {case}: sum {sum}"));
        }
        for i in 0..len {
            for j in 0..len {
                let ordered = if logits[i] < logits[j] {
                    p[i] <= p[j]
                } else if logits[i] == logits[j] {
                    p[i] == p[j]
                } else {
                    true
                };
                if !ordered {
                    return Err(format!("case {case}: order broken at ({i}, {j})"));
                }
            }
        }
    }
    let p = softmax(&[1000.0f64, 0.0]);
    check(
        p[0] == 1.0 && p[1] >= 0.0 && p[1] < 1e-300,
        format!(
            "1000 vectors normalized and ordered; [1000, 0] -> [{}, {:e}]",
            p[0], p[1]
        ),
    )
}

// 3. Forward oracle

/// Eqs. (1)-(4) for D = 2, H = 1, unit weights, zero biases, evaluated
/// scalar by scalar.
fn oracle_logits(x: [[f64; 2]; 3]) -> [f64; 2] {
    const W: f64 = 1.0;
    const B: f64 = 0.0;
    let relu = |v: f64| v.max(0.0);

    let mut f1 = [0.0; 3];
    let mut prev = 0.0;
    for t in 0..3 {
        f1[t] = relu(W * x[t][0] + W * x[t][1] + W * prev + B);
        prev = f1[t];
    }
    let mut b1 = [0.0; 3];
    prev = 0.0;
    for t in (0..3).rev() {
        b1[t] = relu(W * x[t][0] + W * x[t][1] + W * prev + B);
        prev = b1[t];
    }
    // layer 2 sees [forward; backward] of layer 1
    let z: Vec<[f64; 2]> = (0..3).map(|t| [f1[t], b1[t]]).collect();
    let mut f2 = [0.0; 3];
    prev = 0.0;
    for t in 0..3 {
        f2[t] = relu(W * z[t][0] + W * z[t][1] + W * prev + B);
        prev = f2[t];
    }
    let mut b2 = [0.0; 3];
    prev = 0.0;
    for t in (0..3).rev() {
        b2[t] = relu(W * z[t][0] + W * z[t][1] + W * prev + B);
        prev = b2[t];
    }
    let y = (W * f2[0] + W * f2[1] + W * f2[2]) + (W * b2[0] + W * b2[1] + W * b2[2]) + B;
    [y, y]
}

fn forward_oracle() -> Outcome {
    let dims = NetworkDims::new(2, 1, 2).map_err(fail)?;
    let mut params: BrnnParams<f64> = BrnnParams::zeros(dims);
    for t in params.tensors_mut() {
        let value = if t.name.ends_with("b_h") || t.name.ends_with("b_y") {
            0.0
        } else {
            1.0
        };
        t.data.iter_mut().for_each(|v| *v = value);
    }
    let x = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
    let trace = forward(&params, &x[0], &x[1], &x[2]).map_err(fail)?;
    let expected = oracle_logits(x);
    check(
        trace.logits == expected && trace.probs == [0.5, 0.5],
        format!("logits {:?}, oracle {:?}", trace.logits, expected),
    )
}

// 4 and 6. Overfit and order sensitivity

fn overfit_world() -> Result<SynthWorld, String> {
    generate_world(&SynthConfig {
        num_groups: 3,
        classes_per_group: 4,
        num_predicates: 5,
        held_out_fraction: 0.05,
        images_train: 100,
        images_test: 50,
        ..SynthConfig::default()
    })
    .map_err(fail)
}

fn overfit_config() -> TrainingConfig {
    TrainingConfig {
        learning_rate: 0.05,
        batch_size: 32,
        max_epochs: 500,
        hidden_dim: 32,
        seed: 3,
        ..TrainingConfig::default()
    }
}

fn gt_lists(records: &[ImageRecord]) -> Vec<Vec<RelationshipTriplet>> {
    records.iter().map(|r| r.gt_triplets.clone()).collect()
}

fn pair_rec1(
    params: &BrnnParams<f64>,
    world: &SynthWorld,
    records: &[ImageRecord],
    gts: &[Vec<RelationshipTriplet>],
) -> Result<f64, String> {
    let predictor =
        Predictor::new(params, &world.table, &world.objects, OovPolicy::Error).map_err(fail)?;
    let pairs = predictor.predict_all_gt_pairs(records).map_err(fail)?;
    Ok(predicate_recall(&pairs, gts, 1, Pooling::PerPair)
        .map_err(fail)?
        .recall)
}

fn overfit(world: &SynthWorld) -> Result<(Outcome, BrnnParams<f64>), String> {
    let config = overfit_config();
    let prepared = prepare_examples(
        &world.train,
        &world.table,
        &world.objects,
        &world.predicates,
        &config,
    )
    .map_err(fail)?;
    let gts = gt_lists(&world.train);

    let start = Instant::now();
    let mut checkpoints: Vec<(usize, f64, f64)> = Vec::new();
    let mut failure = None;
    let (params, history) = train_with(
        &world.train,
        &world.table,
        &world.objects,
        &world.predicates,
        &config,
        |r| {
            if r.epoch % 50 != 0 || failure.is_some() {
                return;
            }
            let step = mean_loss(r.params, &prepared.vectors, &prepared.examples)
                .map_err(fail)
                .and_then(|l| {
                    pair_rec1(r.params, world, &world.train, &gts).map(|rec| (r.epoch, l, rec))
                });
            match step {
                Ok(c) => checkpoints.push(c),
                Err(e) => failure = Some(e),
            }
        },
    )
    .map_err(fail)?;
    let elapsed = start.elapsed();
    if let Some(e) = failure {
        return Err(e);
    }

    let first_perfect = checkpoints.iter().find(|c| c.2 == 1.0).map(|c| c.0);
    let below_initial = checkpoints.iter().all(|c| c.1 < history.initial_loss);
    let outcome = check(
        prepared.examples.len() == 200
            && world.predicates.len() == 5
            && first_perfect.is_some()
            && checkpoints.last().is_some_and(|c| c.2 == 1.0)
            && below_initial
            && elapsed < Duration::from_secs(60),
        format!(
            "{} examples, K = {}; Rec@1 = 1 from epoch {:?}; loss {:.4} -> {:.2e} (below initial at all {} checkpoints: {below_initial}); {:.2?}",
            prepared.examples.len(),
            world.predicates.len(),
            first_perfect,
            history.initial_loss,
            checkpoints.last().map_or(f64::NAN, |c| c.1),
            checkpoints.len(),
            elapsed
        ),
    );
    Ok((outcome, params))
}

fn order_sensitivity(world: &SynthWorld, params: &BrnnParams<f64>) -> Outcome {
    let on = world.predicates.index_of("on").ok_or("no 'on' predicate")?;
    let under = world
        .predicates
        .index_of("under")
        .ok_or("no 'under' predicate")?;
    let seen: std::collections::HashSet<_> = world
        .train
        .iter()
        .flat_map(|r| r.gt_triplets.iter().map(RelationshipTriplet::kind))
        .collect();
    let argmax = |p: &[f64]| (0..p.len()).fold(0, |best, i| if p[i] > p[best] { i } else { best });

    let (mut total, mut flipped) = (0, 0);
    for t in world.test.iter().flat_map(|r| &r.gt_triplets) {
        if !(t.predicate == on || t.predicate == under) || !seen.contains(&t.kind()) {
            continue;
        }
        let s = world
            .objects
            .name(t.subject_label)
            .ok_or("bad subject label")?;
        let o = world
            .objects
            .name(t.object_label)
            .ok_or("bad object label")?;
        let forward_probs = predict_predicate(
            params,
            &world.table,
            s,
            &t.subject_box,
            o,
            &t.object_box,
            OovPolicy::Error,
        )
        .map_err(fail)?;
        let swapped_probs = predict_predicate(
            params,
            &world.table,
            o,
            &t.object_box,
            s,
            &t.subject_box,
            OovPolicy::Error,
        )
        .map_err(fail)?;
        let partner = if t.predicate == on { under } else { on };
        total += 1;
        if argmax(&forward_probs) == t.predicate && argmax(&swapped_probs) == partner {
            flipped += 1;
        }
    }
    check(
        total > 0 && flipped == total,
        format!("{flipped}/{total} held-in on/under pairs flip"),
    )
}

// 5. Zero-shot transfer

fn zero_shot_rec1(world: &SynthWorld, table: &relnet::Table) -> Result<f64, String> {
    let config = TrainingConfig {
        learning_rate: 0.05,
        batch_size: 32,
        max_epochs: 100,
        hidden_dim: 32,
        seed: 3,
        ..TrainingConfig::default()
    };
    let (params, _) = train(
        &world.train,
        table,
        &world.objects,
        &world.predicates,
        &config,
    )
    .map_err(fail)?;
    let zero_shot: std::collections::HashSet<_> = world.zero_shot_types.iter().copied().collect();
    let gts: Vec<Vec<RelationshipTriplet>> = world
        .test
        .iter()
        .map(|r| {
            r.gt_triplets
                .iter()
                .filter(|t| zero_shot.contains(&t.kind()))
                .copied()
                .collect()
        })
        .collect();
    let predictor =
        Predictor::new(&params, table, &world.objects, OovPolicy::Error).map_err(fail)?;
    let pairs = predictor.predict_all_gt_pairs(&world.test).map_err(fail)?;
    let report = predicate_recall(&pairs, &gts, 1, Pooling::PerPair).map_err(fail)?;
    if report.num_gt == 0 {
        return Err("no zero-shot ground truth".into());
    }
    Ok(report.recall)
}

fn zero_shot_transfer() -> Outcome {
    let start = Instant::now();
    let world = generate_world(&SynthConfig::default()).map_err(fail)?;
    let real = zero_shot_rec1(&world, &world.table)?;
    let shuffled = shuffled_embeddings(&world.table, 99).map_err(fail)?;
    let control = zero_shot_rec1(&world, &shuffled)?;
    let bound = 2.0 / world.predicates.output_dim() as f64;
    let elapsed = start.elapsed();
    check(
        real >= 0.9 && control <= bound && elapsed < Duration::from_secs(180),
        format!(
            "{} zero-shot types; Rec@1 {real:.3}, shuffled control {control:.3} (bound {bound:.3}); {:.2?}",
            world.zero_shot_types.len(),
            elapsed
        ),
    )
}

// 7. Metric oracle

fn oracle_iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let w = (a[0] + a[2]).min(b[0] + b[2]) - a[0].max(b[0]);
    let h = (a[1] + a[3]).min(b[1] + b[3]) - a[1].max(b[1]);
    let inter = w.max(0.0) * h.max(0.0);
    let union = a[2] * a[3] + b[2] * b[3] - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

fn oracle_union(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    let x = a[0].min(b[0]);
    let y = a[1].min(b[1]);
    [
        x,
        y,
        (a[0] + a[2]).max(b[0] + b[2]) - x,
        (a[1] + a[3]).max(b[1] + b[3]) - y,
    ]
}

fn oracle_eligible(p: &PredictionItem, g: &RelationshipTriplet, mode: TaskMode) -> bool {
    if (p.subject_label, p.predicate, p.object_label)
        != (g.subject_label, g.predicate, g.object_label)
    {
        return false;
    }
    let (ps, po, gs, go) = (
        p.subject_box.to_array(),
        p.object_box.to_array(),
        g.subject_box.to_array(),
        g.object_box.to_array(),
    );
    match mode {
        TaskMode::PredicateDetection => {
            p.subject_det == g.subject_index && p.object_det == g.object_index
        }
        TaskMode::PhraseDetection => oracle_iou(oracle_union(ps, po), oracle_union(gs, go)) >= 0.5,
        TaskMode::RelationshipDetection => oracle_iou(ps, gs) >= 0.5 && oracle_iou(po, go) >= 0.5,
    }
}

/// Maximum matching by exhaustive search.
fn optimal_matching(eligible: &[Vec<bool>], pred: usize, used: &mut Vec<bool>) -> usize {
    if pred == eligible.len() {
        return 0;
    }
    let mut best = optimal_matching(eligible, pred + 1, used);
    for g in 0..used.len() {
        if eligible[pred][g] && !used[g] {
            used[g] = true;
            best = best.max(1 + optimal_matching(eligible, pred + 1, used));
            used[g] = false;
        }
    }
    best
}

fn random_box(rng: &mut ChaCha8Rng) -> BoundingBox {
    let cell = |rng: &mut ChaCha8Rng| rng.random_range(0..4) as f64 * 0.1;
    let size = |rng: &mut ChaCha8Rng| rng.random_range(1..=4) as f64 * 0.1;
    BoundingBox::new(cell(rng), cell(rng), size(rng), size(rng)).expect("grid boxes are valid")
}

fn random_case(
    rng: &mut ChaCha8Rng,
) -> (
    Vec<PredictionItem>,
    Vec<RelationshipTriplet>,
    usize,
    TaskMode,
) {
    let mode = [
        TaskMode::PredicateDetection,
        TaskMode::PhraseDetection,
        TaskMode::RelationshipDetection,
    ][rng.random_range(0..3)];
    let mut gts: Vec<RelationshipTriplet> = Vec::new();
    for _ in 0..rng.random_range(1..=5) {
        // near-duplicates make one prediction eligible for several ground truths
        let g = if !gts.is_empty() && rng.random_bool(0.4) {
            let mut g = gts[rng.random_range(0..gts.len())];
            if mode != TaskMode::PredicateDetection {
                g.subject_index = rng.random_range(0..3);
                if rng.random_bool(0.5) {
                    let b = g.subject_box;
                    g.subject_box = BoundingBox::new(b.x + 0.1, b.y, b.w, b.h)
                        .expect("shifted grid box is valid");
                }
            }
            g
        } else {
            RelationshipTriplet {
                subject_index: rng.random_range(0..3),
                object_index: rng.random_range(0..3),
                subject_label: rng.random_range(0..2),
                predicate: rng.random_range(0..2),
                object_label: rng.random_range(0..2),
                subject_box: random_box(rng),
                object_box: random_box(rng),
            }
        };
        gts.push(g);
    }
    let mut preds: Vec<PredictionItem> = (0..rng.random_range(1..=5))
        .map(|_| {
            // copy a ground truth half the time so matches are common
            let base = if rng.random_bool(0.5) {
                let g = gts[rng.random_range(0..gts.len())];
                (
                    g.subject_index,
                    g.subject_label,
                    g.predicate,
                    g.object_index,
                    g.object_label,
                    g.subject_box,
                    g.object_box,
                )
            } else {
                (
                    rng.random_range(0..3),
                    rng.random_range(0..2),
                    rng.random_range(0..2),
                    rng.random_range(0..3),
                    rng.random_range(0..2),
                    random_box(rng),
                    random_box(rng),
                )
            };
            PredictionItem {
                subject_det: base.0,
                subject_label: base.1,
                predicate: base.2,
                object_det: base.3,
                object_label: base.4,
                score: rng.random_range(0.0..1.0),
                subject_box: base.5,
                object_box: base.6,
            }
        })
        .collect();
    preds.sort_by(|a, b| b.score.total_cmp(&a.score));
    let k = rng.random_range(1..=5);
    (preds, gts, k, mode)
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut dominated, mut general, mut strictly_below) = (0, 0, 0);
    while dominated < 100 || general < 100 {
        let (preds, gts, k, mode) = random_case(&mut rng);
        let eligible: Vec<Vec<bool>> = preds
            .iter()
            .take(k)
            .map(|p| gts.iter().map(|g| oracle_eligible(p, g, mode)).collect())
            .collect();
        let optimal = optimal_matching(&eligible, 0, &mut vec![false; gts.len()]);
        let report = recall_at_k(&[preds], std::slice::from_ref(&gts), k, mode).map_err(fail)?;
        // every prediction has at most one eligible ground truth, so the
        // first-come assignment is already a maximum matching
        if eligible
            .iter()
            .all(|row| row.iter().filter(|&&e| e).count() <= 1)
        {
            if dominated == 100 {
                continue;
            }
            dominated += 1;
            if report.num_matched != optimal {
                return Err(format!(
                    "dominated case {dominated}: greedy {} vs optimal {optimal}",
                    report.num_matched
                ));
            }
        } else {
            if general == 100 {
                continue;
            }
            general += 1;
            if report.num_matched > optimal {
                return Err(format!(
                    "greedy {} exceeds optimal {optimal}",
                    report.num_matched
                ));
            }
            strictly_below += usize::from(report.num_matched < optimal);
        }
        let expected = optimal as f64 / gts.len() as f64;
        if report.num_matched == optimal && (report.recall - expected).abs() > 1e-15 {
            return Err(format!("recall {} vs {expected}", report.recall));
        }
    }

    let b = |x, y, w, h| BoundingBox::new(x, y, w, h).expect("valid box");

    // Greedy strictly below optimal: the first prediction overlaps both
    // ground truths (IoU 0.6 each), the second only the first (IoU 1 vs 1/3).
    let gt = |index, sx| RelationshipTriplet {
        subject_index: index,
        object_index: 2,
        subject_label: 0,
        predicate: 0,
        object_label: 0,
        subject_box: b(sx, 0.0, 0.4, 0.4),
        object_box: b(0.5, 0.5, 0.4, 0.4),
    };
    let pred = |sx, score| PredictionItem {
        subject_det: 0,
        subject_label: 0,
        predicate: 0,
        object_det: 2,
        object_label: 0,
        score,
        subject_box: b(sx, 0.0, 0.4, 0.4),
        object_box: b(0.5, 0.5, 0.4, 0.4),
    };
    let gts = vec![gt(0, 0.0), gt(1, 0.2)];
    let preds = vec![pred(0.1, 0.9), pred(0.0, 0.8)];
    let eligible: Vec<Vec<bool>> = preds
        .iter()
        .map(|p| {
            gts.iter()
                .map(|g| oracle_eligible(p, g, TaskMode::RelationshipDetection))
                .collect()
        })
        .collect();
    let optimal = optimal_matching(&eligible, 0, &mut vec![false; 2]);
    let greedy = recall_at_k(&[preds], &[gts], 2, TaskMode::RelationshipDetection)
        .map_err(fail)?
        .num_matched;
    if !(greedy == 1 && optimal == 2) {
        return Err(format!(
            "constructed case: greedy {greedy}, optimal {optimal}"
        ));
    }
    strictly_below += 1;
    let units: [f64; 3] = [
        iou(&b(0.1, 0.2, 0.3, 0.4), &b(0.1, 0.2, 0.3, 0.4)),
        iou(&b(0.0, 0.0, 0.2, 0.2), &b(0.5, 0.5, 0.2, 0.2)),
        iou(&b(0.0, 0.0, 0.2, 0.2), &b(0.1, 0.1, 0.2, 0.2)),
    ];
    let iou_ok = (units[0] - 1.0).abs() <= 1e-12
        && units[1].abs() <= 1e-12
        && (units[2] - 1.0 / 7.0).abs() <= 1e-12;
    check(
        iou_ok,
        format!(
            "{dominated} dominated cases equal the oracle; {general} others never exceed it ({strictly_below} below); IoU units {units:?}"
        ),
    )
}

// 8. Determinism

fn relnet(args: &[&str], dir: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_relnet"))
        .args(args)
        .env("RELNET_OUT", dir.join("out"))
        .output()
        .map_err(fail)?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "relnet {} failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

/// Runs synth, train and eval in `dir`; returns every output keyed by name.
fn pipeline(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let world = dir.join("world");
    let w = |f: &str| world.join(f).display().to_string();
    let out = dir.join("out").display().to_string();
    relnet(
        &[
            "synth",
            "--seed",
            "11",
            "--out",
            &world.display().to_string(),
        ],
        dir,
    )?;
    let common = [
        "--embeddings",
        &w("embeddings.txt"),
        "--objects",
        &w("objects.txt"),
        "--predicates",
        &w("predicates.txt"),
        "--out",
        &out,
    ];
    let (train_json, test_json) = (w("train.json"), w("test.json"));
    let mut train_args = vec![
        "train",
        "--train",
        &train_json,
        "--seed",
        "4",
        "--epochs",
        "5",
        "--dims",
        "16,16,13",
    ];
    train_args.extend(common);
    relnet(&train_args, dir)?;
    let ckpt = dir.join("out/checkpoint.json").display().to_string();
    let mut eval_args = vec![
        "eval",
        "--test",
        &test_json,
        "--checkpoint",
        &ckpt,
        "--k",
        "1",
        "--k",
        "5",
    ];
    eval_args.extend(common);
    relnet(&eval_args, dir)?;

    let mut files = BTreeMap::new();
    for sub in ["world", "out"] {
        for entry in std::fs::read_dir(dir.join(sub)).map_err(fail)? {
            let path = entry.map_err(fail)?.path();
            let name = path
                .file_name()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned();
            // run configs record the paths, which differ between runs
            if !name.ends_with("_config.txt") {
                files.insert(format!("{sub}/{name}"), std::fs::read(&path).map_err(fail)?);
            }
        }
    }
    Ok(files)
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(fail)?;
    let b = tempfile::tempdir().map_err(fail)?;
    let first = pipeline(a.path())?;
    let second = pipeline(b.path())?;
    let required = [
        "out/checkpoint.json",
        "out/recall.csv",
        "out/per_type.csv",
        "out/report.json",
    ];
    let missing: Vec<_> = required
        .iter()
        .filter(|f| !first.contains_key(**f))
        .collect();
    let differing: Vec<_> = first
        .keys()
        .filter(|k| first.get(*k) != second.get(*k))
        .collect();
    check(
        missing.is_empty() && differing.is_empty() && first.len() == second.len(),
        format!(
            "{} files compared; missing {missing:?}; differing {differing:?}",
            first.len()
        ),
    )
}

// 9. Format round-trips

fn round_trips() -> Outcome {
    let dims = NetworkDims::new(6, 5, 4).map_err(fail)?;
    let params: BrnnParams<f64> = init_params(dims, 21).map_err(fail)?;
    let predicates = Vocabulary::new(&["on", "under", "near"]).map_err(fail)?;
    let dir = tempfile::tempdir().map_err(fail)?;
    let path = dir.path().join("ckpt.json");
    save_checkpoint(&params, &predicates, &path).map_err(fail)?;
    let (loaded, loaded_dims, loaded_preds) = load_checkpoint::<f64>(&path).map_err(fail)?;
    let bits = |p: &BrnnParams<f64>| p.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let ckpt_ok =
        bits(&loaded) == bits(&params) && loaded_dims == dims && loaded_preds == predicates;
    let text = to_json(&params, &predicates).map_err(fail)?;
    let text_ok = from_json::<f64>(&text).map_err(fail)?.0 == params;

    let world = generate_world(&SynthConfig {
        images_train: 40,
        images_test: 20,
        ..SynthConfig::default()
    })
    .map_err(fail)?;
    let wdir = dir.path().join("world");
    synthbench::write_world(&world, &wdir).map_err(fail)?;
    let table = load_embeddings_file::<f64>(
        wdir.join(synthbench::EMBEDDINGS_FILE),
        Some(world.config.dim),
    )
    .map_err(fail)?;
    let objects = Vocabulary::load(wdir.join(synthbench::OBJECTS_FILE)).map_err(fail)?;
    let preds = Vocabulary::load(wdir.join(synthbench::PREDICATES_FILE)).map_err(fail)?;
    let read = |f: &str| std::fs::read_to_string(wdir.join(f)).map_err(fail);
    let train_raw: Vec<AnnotationImage> =
        serde_json::from_str(&read(synthbench::TRAIN_FILE)?).map_err(fail)?;
    let test_raw: Vec<AnnotationImage> =
        serde_json::from_str(&read(synthbench::TEST_FILE)?).map_err(fail)?;
    let train = load_annotations(
        wdir.join(synthbench::TRAIN_FILE),
        &preds,
        &objects,
        LoadOptions::default(),
    )
    .map_err(fail)?;
    let test = load_annotations(
        wdir.join(synthbench::TEST_FILE),
        &preds,
        &objects,
        LoadOptions::default(),
    )
    .map_err(fail)?;
    let zero_shot: Vec<[String; 3]> =
        serde_json::from_str(&read(synthbench::ZERO_SHOT_FILE)?).map_err(fail)?;
    let expected_zero_shot: Vec<[String; 3]> = world
        .zero_shot_types
        .iter()
        .map(|&(s, p, o)| {
            [
                world.objects.name(s).unwrap_or_default().to_string(),
                world.predicates.name(p).unwrap_or_default().to_string(),
                world.objects.name(o).unwrap_or_default().to_string(),
            ]
        })
        .collect();
    let files_ok = table == world.table
        && objects == world.objects
        && preds == world.predicates
        && train_raw == world.train_annotations
        && test_raw == world.test_annotations
        && train == world.train
        && test == world.test
        && zero_shot == expected_zero_shot;
    check(
        ckpt_ok && text_ok && files_ok,
        format!(
            "checkpoint bit-exact: {ckpt_ok}, text: {text_ok}; synthbench files equal: {files_ok}"
        ),
    )
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = vec![
        ("1 gradient fidelity", gradient_fidelity()),
        ("2 softmax suite", softmax_suite()),
        ("3 forward oracle", forward_oracle()),
    ];
    match overfit_world() {
        Ok(world) => match overfit(&world) {
            Ok((outcome, params)) => {
                results.push(("4 overfit", outcome));
                results.push(("6 order sensitivity", order_sensitivity(&world, &params)));
            }
            Err(e) => {
                results.push(("4 overfit", Err(e.clone())));
                results.push(("6 order sensitivity", Err(e)));
            }
        },
        Err(e) => {
            results.push(("4 overfit", Err(e.clone())));
            results.push(("6 order sensitivity", Err(e)));
        }
    }
    results.push(("5 zero-shot transfer", zero_shot_transfer()));
    results.push(("7 metric oracle", metric_oracle()));
    results.push(("8 determinism", determinism()));
    results.push(("9 format round-trips", round_trips()));
    results.sort_by_key(|r| r.0.split(' ').next().and_then(|n| n.parse::<u32>().ok()));

    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("SKIP  10 full-data reference: needs VRD annotations and a detector, not gated");
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
