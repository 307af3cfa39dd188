//! Mini-batch SGD with global-norm clipping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::brnn::{
    argmax, backward_acc, forward, init_params, loss, BrnnParams, Gradients, NetworkDims,
    DEFAULT_HIDDEN,
};
use crate::dataset::{
    sample_training_pairs, ImageRecord, ObjectVocabulary, PredicateVocabulary, TrainingExample,
};
use crate::embeddings::{lookup_class_vector, EmbeddingTable, OovPolicy};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Examples per parallel work unit. The unit boundaries are fixed, so the
/// gradient sum is associated the same way whatever the thread count.
const CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub clip_norm: f64,
    pub neg_ratio: f64,
    pub seed: u64,
    pub shuffle: bool,
    pub hidden_dim: usize,
    pub oov: OovPolicy,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 128,
            max_epochs: 50,
            clip_norm: 5.0,
            neg_ratio: 1.0,
            seed: 0,
            shuffle: true,
            hidden_dim: DEFAULT_HIDDEN,
            oov: OovPolicy::Error,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(Error::Config(format!(
                "clip norm must be positive, got {}",
                self.clip_norm
            )));
        }
        if !(self.neg_ratio >= 0.0 && self.neg_ratio.is_finite()) {
            return Err(Error::Config(format!(
                "neg_ratio must be non-negative, got {}",
                self.neg_ratio
            )));
        }
        if self.hidden_dim == 0 {
            return Err(Error::Config("hidden dimension must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingHistory {
    /// Mean loss over all examples under the initial parameters.
    pub initial_loss: f64,
    /// Per epoch, the mean of each batch's loss taken before its update.
    pub epoch_loss: Vec<f64>,
    /// Fraction of examples whose argmax (over all outputs) hit the target.
    pub epoch_accuracy: Vec<f64>,
    pub num_examples: usize,
    pub negative_shortfall: usize,
}

impl TrainingHistory {
    pub fn epochs(&self) -> usize {
        self.epoch_loss.len()
    }
}

/// Scales the gradients down to `max_norm` when their global norm exceeds it.
pub fn clip_gradients<T: Scalar>(grads: Gradients<T>, max_norm: T) -> Gradients<T> {
    let norm = grads.global_norm();
    if norm <= max_norm {
        return grads;
    }
    let mut clipped = grads;
    clipped.scale(max_norm / norm);
    clipped
}

/// `params - lr * grads`
pub fn sgd_step<T: Scalar>(
    params: &BrnnParams<T>,
    grads: &Gradients<T>,
    lr: T,
) -> Result<BrnnParams<T>> {
    let mut next = params.clone();
    next.axpy(-lr, grads)?;
    Ok(next)
}

/// Word vector per object-class index.
pub fn class_vectors<T: Scalar>(
    table: &EmbeddingTable<T>,
    objects: &ObjectVocabulary,
    oov: OovPolicy,
) -> Result<Vec<Vec<T>>> {
    objects
        .names()
        .iter()
        .map(|name| lookup_class_vector(table, name, oov).map(|v| v.into_inner()))
        .collect()
}

/// A training example with its spatial vector built.
#[derive(Debug, Clone)]
pub struct EncodedExample<T> {
    pub subject_class: usize,
    pub object_class: usize,
    pub spatial: Vec<T>,
    pub target: usize,
}

impl<T: Scalar> EncodedExample<T> {
    pub fn encode(example: &TrainingExample, dim: usize) -> Result<Self> {
        Ok(Self {
            subject_class: example.subject_class,
            object_class: example.object_class,
            spatial: example.spatial(dim)?,
            target: example.target,
        })
    }
}

struct BatchSums<T> {
    loss: f64,
    correct: usize,
    grads: Gradients<T>,
}

fn accumulate<T: Scalar>(
    params: &BrnnParams<T>,
    vectors: &[Vec<T>],
    examples: &[&EncodedExample<T>],
) -> Result<BatchSums<T>> {
    let partials: Vec<Result<BatchSums<T>>> = examples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut sums = BatchSums {
                loss: 0.0,
                correct: 0,
                grads: BrnnParams::zeros(params.dims()),
            };
            for ex in chunk {
                let trace = forward(
                    params,
                    &vectors[ex.subject_class],
                    &ex.spatial,
                    &vectors[ex.object_class],
                )?;
                sums.loss += loss(&trace, ex.target)?.as_f64();
                sums.correct += usize::from(argmax(&trace.probs) == ex.target);
                backward_acc(params, &trace, ex.target, &mut sums.grads)?;
            }
            Ok(sums)
        })
        .collect();
    let mut total = BatchSums {
        loss: 0.0,
        correct: 0,
        grads: BrnnParams::zeros(params.dims()),
    };
    for part in partials {
        let part = part?;
        total.loss += part.loss;
        total.correct += part.correct;
        total.grads.axpy(T::one(), &part.grads)?;
    }
    Ok(total)
}

/// Mean loss of `params` over `examples`.
pub fn mean_loss<T: Scalar>(
    params: &BrnnParams<T>,
    vectors: &[Vec<T>],
    examples: &[EncodedExample<T>],
) -> Result<f64> {
    let refs: Vec<&EncodedExample<T>> = examples.iter().collect();
    let losses: Vec<Result<f64>> = refs
        .par_chunks(CHUNK)
        .map(|chunk| {
            chunk.iter().try_fold(0.0, |acc, ex| {
                let trace = forward(
                    params,
                    &vectors[ex.subject_class],
                    &ex.spatial,
                    &vectors[ex.object_class],
                )?;
                Ok(acc + loss(&trace, ex.target)?.as_f64())
            })
        })
        .collect();
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / examples.len().max(1) as f64)
}

/// Per-epoch progress passed to a [`train_with`] observer.
pub struct EpochReport<'a, T> {
    pub epoch: usize,
    pub mean_loss: f64,
    pub accuracy: f64,
    pub params: &'a BrnnParams<T>,
}

pub fn train<T: Scalar>(
    records: &[ImageRecord],
    table: &EmbeddingTable<T>,
    objects: &ObjectVocabulary,
    predicates: &PredicateVocabulary,
    config: &TrainingConfig,
) -> Result<(BrnnParams<T>, TrainingHistory)> {
    train_with(records, table, objects, predicates, config, |_| {})
}

/// Encoded training set: class vectors plus positives and sampled negatives.
#[derive(Debug, Clone)]
pub struct PreparedData<T> {
    pub dims: NetworkDims,
    /// Word vector per object-class index.
    pub vectors: Vec<Vec<T>>,
    pub examples: Vec<EncodedExample<T>>,
    pub shortfall: usize,
}

/// Samples and encodes the training examples exactly as [`train_with`] does.
pub fn prepare_examples<T: Scalar>(
    records: &[ImageRecord],
    table: &EmbeddingTable<T>,
    objects: &ObjectVocabulary,
    predicates: &PredicateVocabulary,
    config: &TrainingConfig,
) -> Result<PreparedData<T>> {
    config.validate()?;
    let dims = NetworkDims::new(table.dim(), config.hidden_dim, predicates.output_dim())?;
    let vectors = class_vectors(table, objects, config.oov)?;

    let mut sample_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut examples = Vec::new();
    let mut shortfall = 0;
    for record in records {
        let sampled = sample_training_pairs(
            record,
            config.neg_ratio,
            predicates.no_relation_index(),
            &mut sample_rng,
        )?;
        shortfall += sampled.shortfall;
        for ex in &sampled.examples {
            if ex.subject_class >= vectors.len() || ex.object_class >= vectors.len() {
                return Err(Error::Record {
                    image_id: record.image_id.clone(),
                    message: "object class index outside the vocabulary".into(),
                });
            }
            examples.push(EncodedExample::encode(ex, dims.input_dim)?);
        }
    }
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(PreparedData {
        dims,
        vectors,
        examples,
        shortfall,
    })
}

/// Trains from scratch, calling `observer` after every epoch.
pub fn train_with<T: Scalar, F: FnMut(&EpochReport<'_, T>)>(
    records: &[ImageRecord],
    table: &EmbeddingTable<T>,
    objects: &ObjectVocabulary,
    predicates: &PredicateVocabulary,
    config: &TrainingConfig,
    mut observer: F,
) -> Result<(BrnnParams<T>, TrainingHistory)> {
    let PreparedData {
        dims,
        vectors,
        examples,
        shortfall,
    } = prepare_examples(records, table, objects, predicates, config)?;

    let mut params: BrnnParams<T> = init_params(dims, config.seed.wrapping_add(1))?;
    let mut history = TrainingHistory {
        initial_loss: mean_loss(&params, &vectors, &examples)?,
        num_examples: examples.len(),
        negative_shortfall: shortfall,
        ..Default::default()
    };

    let lr = T::lit(config.learning_rate);
    let clip = T::lit(config.clip_norm);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2));
    for epoch in 0..config.max_epochs {
        if config.shuffle {
            order.shuffle(&mut shuffle_rng);
        }
        let mut epoch_loss = 0.0;
        let mut correct = 0;
        for batch in order.chunks(config.batch_size) {
            let refs: Vec<&EncodedExample<T>> = batch.iter().map(|&i| &examples[i]).collect();
            let mut sums = accumulate(&params, &vectors, &refs)?;
            epoch_loss += sums.loss;
            correct += sums.correct;
            sums.grads.scale(T::one() / T::lit(batch.len() as f64));
            let grads = clip_gradients(sums.grads, clip);
            params.axpy(-lr, &grads)?;
        }
        let n = examples.len() as f64;
        history.epoch_loss.push(epoch_loss / n);
        history.epoch_accuracy.push(correct as f64 / n);
        observer(&EpochReport {
            epoch: epoch + 1,
            mean_loss: epoch_loss / n,
            accuracy: correct as f64 / n,
            params: &params,
        });
    }
    Ok((params, history))
}
