//! Pretrained word vectors in GloVe text format, class-name resolution and
//! cosine queries over the vector space.

use std::io::{BufRead, Write};
use std::ops::Deref;
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::scalar::{dot, norm, Scalar};

/// Dimension of the pretrained vectors used throughout.
pub const DEFAULT_DIM: usize = 300;

/// A single embedding vector.
#[derive(Debug, Clone, PartialEq)]
pub struct WordVector<T = f64>(Vec<T>);

impl<T: Scalar> WordVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain {
                what: "word vector components must be finite",
                value: f64::NAN,
            });
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![T::zero(); dim])
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }

    pub fn norm(&self) -> T {
        norm(&self.0)
    }
}

impl<T> Deref for WordVector<T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        &self.0
    }
}

/// What to do when a class name token is missing from the table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OovPolicy {
    #[default]
    Error,
    Zero,
}

/// Lowercased, trimmed form under which tokens are stored and looked up.
pub fn normalize_token(token: &str) -> String {
    token.trim().to_lowercase()
}

/// Token to vector map with a fixed dimension. Insertion order is kept so
/// that ties in nearest-neighbour queries resolve deterministically.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<T = f64> {
    dim: usize,
    entries: IndexMap<String, WordVector<T>>,
    duplicates: usize,
}

impl<T: Scalar> EmbeddingTable<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: IndexMap::new(),
            duplicates: 0,
        }
    }

    /// Inserts a vector; a token already present keeps its first vector and
    /// bumps the duplicate tally. Returns whether the token was new.
    pub fn insert(&mut self, token: &str, vector: WordVector<T>) -> Result<bool> {
        if vector.len() != self.dim {
            return Err(Error::Shape(format!(
                "vector for `{token}` has length {}, table dimension is {}",
                vector.len(),
                self.dim
            )));
        }
        let key = normalize_token(token);
        if key.is_empty() {
            return Err(Error::Vocabulary("empty token".into()));
        }
        if self.entries.contains_key(&key) {
            self.duplicates += 1;
            return Ok(false);
        }
        self.entries.insert(key, vector);
        Ok(true)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of duplicate tokens dropped while loading.
    pub fn duplicates(&self) -> usize {
        self.duplicates
    }

    pub fn get(&self, token: &str) -> Option<&WordVector<T>> {
        self.entries.get(&normalize_token(token))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &WordVector<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Writes the table back out in GloVe text format.
    pub fn write_glove<W: Write>(&self, mut out: W) -> Result<()> {
        for (token, vector) in &self.entries {
            write!(out, "{token}")?;
            for v in vector.iter() {
                write!(out, " {v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Parses GloVe text: `token v1 ... vD` per line, no header.
///
/// Blank lines are skipped. Runs of whitespace between fields are tolerated.
pub fn load_embeddings<T: Scalar, R: BufRead>(
    source: R,
    expected_dim: usize,
) -> Result<EmbeddingTable<T>> {
    if expected_dim == 0 {
        return Err(Error::Config("embedding dimension must be positive".into()));
    }
    let mut table = EmbeddingTable::new(expected_dim);
    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let mut fields = line.split_ascii_whitespace();
        let Some(token) = fields.next() else {
            continue;
        };
        let mut values = Vec::with_capacity(expected_dim);
        for field in fields {
            let v: T = field.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("unparseable float `{field}`"),
            })?;
            values.push(v);
        }
        if values.len() != expected_dim {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {expected_dim} floats, found {}", values.len()),
            });
        }
        let vector = WordVector::new(values).map_err(|_| Error::Parse {
            line: line_no,
            message: "non-finite component".into(),
        })?;
        table.insert(token, vector).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
    }
    if table.is_empty() {
        return Err(Error::EmptySource);
    }
    Ok(table)
}

/// Loads a GloVe file. With `expected_dim` unset, the dimension is taken
/// from the first non-blank line.
pub fn load_embeddings_file<T: Scalar>(
    path: impl AsRef<Path>,
    expected_dim: Option<usize>,
) -> Result<EmbeddingTable<T>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
    let dim = match expected_dim {
        Some(d) => d,
        None => text
            .lines()
            .find(|l| !l.trim().is_empty())
            .map(|l| l.split_ascii_whitespace().count() - 1)
            .ok_or_else(|| Error::EmptySource.in_file(path))?,
    };
    load_embeddings(text.as_bytes(), dim).map_err(|e| e.in_file(path))
}

/// Resolves a class name to a vector.
///
/// Multi-word names ("skate board") average their constituent vectors. A
/// missing constituent counts as a zero vector under [`OovPolicy::Zero`].
pub fn lookup_class_vector<T: Scalar>(
    table: &EmbeddingTable<T>,
    class_name: &str,
    oov: OovPolicy,
) -> Result<WordVector<T>> {
    let tokens: Vec<&str> = class_name.split_whitespace().collect();
    if tokens.is_empty() {
        return Err(Error::UnknownClass(class_name.to_string()));
    }
    if let [single] = tokens.as_slice() {
        return match (table.get(single), oov) {
            (Some(v), _) => Ok(v.clone()),
            (None, OovPolicy::Zero) => Ok(WordVector::zeros(table.dim())),
            (None, OovPolicy::Error) => Err(Error::UnknownClass(class_name.to_string())),
        };
    }
    let mut sum = vec![T::zero(); table.dim()];
    for token in &tokens {
        match table.get(token) {
            Some(v) => sum.iter_mut().zip(v.iter()).for_each(|(s, &x)| *s = *s + x),
            None if oov == OovPolicy::Zero => {}
            None => return Err(Error::UnknownClass(class_name.to_string())),
        }
    }
    let n = T::lit(tokens.len() as f64);
    Ok(WordVector(sum.into_iter().map(|s| s / n).collect()))
}

/// `1 - cos(u, v)`, in `[0, 2]`.
pub fn cosine_distance<T: Scalar>(u: &[T], v: &[T]) -> Result<T> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!(
            "vector lengths {} and {} differ",
            u.len(),
            v.len()
        )));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == T::zero() || nv == T::zero() {
        return Err(Error::DegenerateVector);
    }
    let sim = dot(u, v) / (nu * nv);
    let two = T::lit(2.0);
    Ok((T::one() - sim).max(T::zero()).min(two))
}

/// Tokens nearest to `query` by cosine distance, ascending, skipping
/// `exclude` and zero vectors. Ties keep table order.
pub fn nearest<T: Scalar>(
    table: &EmbeddingTable<T>,
    query: &[T],
    k: usize,
    exclude: &[&str],
) -> Result<Vec<(String, T)>> {
    let excluded: Vec<String> = exclude.iter().map(|t| normalize_token(t)).collect();
    let mut scored = Vec::with_capacity(table.len());
    for (token, vector) in table.iter() {
        if excluded.iter().any(|e| e == token) || vector.norm() == T::zero() {
            continue;
        }
        scored.push((token.to_string(), cosine_distance(query, vector)?));
    }
    scored.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("distances are finite"));
    scored.truncate(k);
    Ok(scored)
}

/// Answers "a is to b as c is to ?" with the `k` tokens nearest `b - a + c`.
pub fn analogy<T: Scalar>(
    table: &EmbeddingTable<T>,
    a: &str,
    b: &str,
    c: &str,
    k: usize,
) -> Result<Vec<(String, T)>> {
    let get = |t: &str| {
        table
            .get(t)
            .ok_or_else(|| Error::UnknownClass(t.to_string()))
    };
    let (va, vb, vc) = (get(a)?, get(b)?, get(c)?);
    let query: Vec<T> = va
        .iter()
        .zip(vb.iter())
        .zip(vc.iter())
        .map(|((&x, &y), &z)| y - x + z)
        .collect();
    nearest(table, &query, k, &[a, b, c])
}
