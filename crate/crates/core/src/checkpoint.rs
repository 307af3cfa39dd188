//! Versioned JSON checkpoints.
//!
//! Values are written with the shortest decimal form that parses back to the
//! same `f64`, so a save/load cycle is bit-exact.

use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::brnn::{BrnnParams, NetworkDims, NUM_LAYERS};
use crate::dataset::PredicateVocabulary;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DimsRecord {
    #[serde(rename = "D")]
    input_dim: usize,
    #[serde(rename = "H")]
    hidden_dim: usize,
    #[serde(rename = "L")]
    num_layers: usize,
    output_dim: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorRecord {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format_version: u64,
    dims: DimsRecord,
    predicate_names: Vec<String>,
    tensors: IndexMap<String, TensorRecord>,
}

/// Serializes parameters and the predicate vocabulary to checkpoint JSON.
pub fn to_json<T: Scalar>(
    params: &BrnnParams<T>,
    predicates: &PredicateVocabulary,
) -> Result<String> {
    let dims = params.dims();
    if predicates.output_dim() != dims.output_dim {
        return Err(Error::Shape(format!(
            "{} predicates need output dimension {}, network has {}",
            predicates.len(),
            predicates.output_dim(),
            dims.output_dim
        )));
    }
    let file = CheckpointFile {
        format_version: FORMAT_VERSION,
        dims: DimsRecord {
            input_dim: dims.input_dim,
            hidden_dim: dims.hidden_dim,
            num_layers: NUM_LAYERS,
            output_dim: dims.output_dim,
        },
        predicate_names: predicates.names().to_vec(),
        tensors: params
            .tensors()
            .into_iter()
            .map(|t| {
                let data = t.data.iter().map(|v| v.as_f64()).collect();
                (
                    t.name,
                    TensorRecord {
                        shape: t.shape,
                        data,
                    },
                )
            })
            .collect(),
    };
    let mut text = serde_json::to_string(&file)?;
    text.push('\n');
    Ok(text)
}

pub fn from_json<T: Scalar>(
    text: &str,
) -> Result<(BrnnParams<T>, NetworkDims, PredicateVocabulary)> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::CheckpointCorrupt(e.to_string()))?;
    let version = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::CheckpointCorrupt("missing format_version".into()))?;
    if version != FORMAT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let file: CheckpointFile =
        serde_json::from_value(value).map_err(|e| Error::CheckpointCorrupt(e.to_string()))?;

    if file.dims.num_layers != NUM_LAYERS {
        return Err(Error::CheckpointShape(format!(
            "{} layers, only {NUM_LAYERS} are supported",
            file.dims.num_layers
        )));
    }
    let dims = NetworkDims::new(
        file.dims.input_dim,
        file.dims.hidden_dim,
        file.dims.output_dim,
    )
    .map_err(|e| Error::CheckpointShape(e.to_string()))?;
    let vocab = PredicateVocabulary::new(&file.predicate_names)
        .map_err(|e| Error::CheckpointCorrupt(e.to_string()))?;
    if vocab.output_dim() != dims.output_dim {
        return Err(Error::CheckpointShape(format!(
            "{} predicate names but output dimension {}",
            vocab.len(),
            dims.output_dim
        )));
    }

    let mut params = BrnnParams::<T>::zeros(dims);
    let expected = params.tensors().len();
    if file.tensors.len() != expected {
        return Err(Error::CheckpointShape(format!(
            "{} tensors present, {expected} expected",
            file.tensors.len()
        )));
    }
    for slot in params.tensors_mut() {
        let record = file
            .tensors
            .get(&slot.name)
            .ok_or_else(|| Error::CheckpointShape(format!("missing tensor `{}`", slot.name)))?;
        if record.shape != slot.shape || record.data.len() != slot.data.len() {
            return Err(Error::CheckpointShape(format!(
                "tensor `{}` has shape {:?} with {} values, expected {:?}",
                slot.name,
                record.shape,
                record.data.len(),
                slot.shape
            )));
        }
        for (dst, &src) in slot.data.iter_mut().zip(&record.data) {
            *dst = T::lit(src);
        }
    }
    Ok((params, dims, vocab))
}

pub fn save_checkpoint<T: Scalar>(
    params: &BrnnParams<T>,
    predicates: &PredicateVocabulary,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let text = to_json(params, predicates)?;
    std::fs::write(path, text).map_err(|e| Error::from(e).in_file(path))
}

/// Loads a checkpoint. Version, shape and syntax problems surface as
/// [`Error::CheckpointVersion`], [`Error::CheckpointShape`] and
/// [`Error::CheckpointCorrupt`] respectively.
pub fn load_checkpoint<T: Scalar>(
    path: impl AsRef<Path>,
) -> Result<(BrnnParams<T>, NetworkDims, PredicateVocabulary)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
    from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brnn::init_params;
    use crate::dataset::Vocabulary;

    fn fixture() -> (BrnnParams, PredicateVocabulary) {
        let dims = NetworkDims::new(5, 3, 3).unwrap();
        (
            init_params(dims, 9).unwrap(),
            Vocabulary::new(&["on", "under"]).unwrap(),
        )
    }

    #[test]
    fn round_trip_is_bitwise() {
        let (p, v) = fixture();
        let text = to_json(&p, &v).unwrap();
        let (q, dims, vocab) = from_json::<f64>(&text).unwrap();
        assert_eq!(dims, p.dims());
        assert_eq!(vocab, v);
        let bits = |x: &BrnnParams| x.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&p), bits(&q));
    }

    #[test]
    fn version_bump_is_rejected() {
        let (p, v) = fixture();
        let text =
            to_json(&p, &v)
                .unwrap()
                .replacen("\"format_version\":1", "\"format_version\":2", 1);
        assert!(matches!(
            from_json::<f64>(&text),
            Err(Error::CheckpointVersion {
                found: 2,
                expected: 1
            })
        ));
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let (p, v) = fixture();
        let text = to_json(&p, &v).unwrap();
        let cut = &text[..text.len() / 2];
        assert!(matches!(
            from_json::<f64>(cut),
            Err(Error::CheckpointCorrupt(_))
        ));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let (p, v) = fixture();
        let text = to_json(&p, &v).unwrap().replacen("\"H\":3", "\"H\":4", 1);
        assert!(matches!(
            from_json::<f64>(&text),
            Err(Error::CheckpointShape(_))
        ));
        let wrong_vocab = Vocabulary::new(&["on"]).unwrap();
        assert!(to_json(&p, &wrong_vocab).is_err());
    }
}
