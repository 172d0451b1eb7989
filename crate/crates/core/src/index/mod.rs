//! Sparse cube index.
//!
//! Each cube keeps, per axis, a map from normalized value to the sorted set
//! of documents tagged with it, plus the per-document tag records those
//! postings were built from. A document only occupies storage for the
//! (dimension, value) pairs it actually instantiates.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{self, EmbeddingBackend, LlmError};
use crate::normalize::normalize_value;
use crate::schema::{CubeSpec, SchemaError};

mod persist;
mod store;
mod tagging;

pub use persist::FORMAT_VERSION;
pub use store::IndexStore;
pub(crate) use tagging::reply_values;
pub use tagging::{
    build_index, parse_tag_reply, tag_corpus, tag_document, BuildOptions, BuildReport, TagFailure,
    TaggedDocument,
};

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("document {0:?} is already indexed")]
    DuplicateDocument(String),
    #[error("cube {cube} has no axis {dimension:?}")]
    UnknownDimension { cube: String, dimension: String },
    #[error("value {value:?} on {dimension:?} is not in normalized form")]
    Unnormalized { dimension: String, value: String },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("embedding backend failed: {0}")]
    Backend(#[from] LlmError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt index file {file}: {reason}")]
    Corrupt { file: String, reason: String },
    #[error("index format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
}

/// Values extracted for one document within one cube, keyed by axis name.
/// Values are normalized; dimensions without values are absent.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DimensionTags(BTreeMap<String, BTreeSet<String>>);

impl DimensionTags {
    pub fn new() -> Self {
        Self::default()
    }

    /// Normalizes and adds `raw`. Returns false when the value normalizes to
    /// nothing or was already present.
    pub fn insert(&mut self, dimension: &str, raw: &str) -> bool {
        let value = normalize_value(raw);
        if value.is_empty() {
            return false;
        }
        self.0.entry(dimension.to_string()).or_default().insert(value)
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let mut tags = Self::new();
        for (dim, value) in pairs {
            tags.insert(dim, value);
        }
        tags
    }

    pub fn get(&self, dimension: &str) -> Option<&BTreeSet<String>> {
        self.0.get(dimension)
    }

    pub fn contains(&self, dimension: &str, value: &str) -> bool {
        self.0.get(dimension).is_some_and(|v| v.contains(value))
    }

    /// First dimension (in name order) holding `value`.
    pub fn dimension_of(&self, value: &str) -> Option<&str> {
        self.0
            .iter()
            .find(|(_, values)| values.contains(value))
            .map(|(dim, _)| dim.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &BTreeSet<String>)> {
        self.0.iter().map(|(d, v)| (d.as_str(), v))
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0
            .iter()
            .flat_map(|(d, vs)| vs.iter().map(move |v| (d.as_str(), v.as_str())))
    }

    pub fn dimensions(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of (dimension, value) assignments.
    pub fn len(&self) -> usize {
        self.0.values().map(BTreeSet::len).sum()
    }

    fn validate(&self, spec: &CubeSpec) -> Result<(), IndexError> {
        for (dim, values) in &self.0 {
            if !spec.has_axis(dim) {
                return Err(IndexError::UnknownDimension {
                    cube: spec.name.clone(),
                    dimension: dim.clone(),
                });
            }
            for v in values {
                if v.is_empty() || normalize_value(v) != *v {
                    return Err(IndexError::Unnormalized {
                        dimension: dim.clone(),
                        value: v.clone(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Unit-norm embeddings of distinct cube values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueEmbeddings {
    dim: usize,
    vectors: BTreeMap<String, Vec<f32>>,
}

impl ValueEmbeddings {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, value: &str) -> Option<&[f32]> {
        self.vectors.get(value).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.vectors.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Stores `vector` rescaled to unit norm.
    pub fn insert(&mut self, value: String, vector: &[f32]) -> Result<(), LlmError> {
        if vector.len() != self.dim {
            return Err(LlmError::DimensionMismatch {
                expected: self.dim,
                got: vector.len(),
            });
        }
        let unit = llm::unit_vector(vector)
            .ok_or_else(|| LlmError::BadResponse(format!("zero vector for {value:?}")))?;
        self.vectors.insert(value, unit);
        Ok(())
    }
}

type Postings = BTreeMap<String, BTreeMap<String, BTreeSet<String>>>;

#[derive(Debug, Clone, PartialEq)]
pub struct CubeIndex {
    spec: CubeSpec,
    postings: Postings,
    doc_tags: BTreeMap<String, DimensionTags>,
    embeddings: Option<ValueEmbeddings>,
}

pub const EMBED_BATCH: usize = 128;

impl CubeIndex {
    pub fn new(spec: CubeSpec) -> Self {
        Self {
            spec,
            postings: BTreeMap::new(),
            doc_tags: BTreeMap::new(),
            embeddings: None,
        }
    }

    pub fn spec(&self) -> &CubeSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    /// Adds one document's cells. A document with empty tags is recorded in
    /// `doc_tags` but occupies no postings.
    pub fn insert_document(&mut self, doc_id: &str, tags: DimensionTags) -> Result<(), IndexError> {
        if self.doc_tags.contains_key(doc_id) {
            return Err(IndexError::DuplicateDocument(doc_id.to_string()));
        }
        tags.validate(&self.spec)?;
        for (dim, value) in tags.pairs() {
            self.postings
                .entry(dim.to_string())
                .or_default()
                .entry(value.to_string())
                .or_default()
                .insert(doc_id.to_string());
        }
        self.doc_tags.insert(doc_id.to_string(), tags);
        Ok(())
    }

    /// Documents in the cell `(dimension, value)`; `value` must be normalized.
    pub fn cell(&self, dimension: &str, value: &str) -> Option<&BTreeSet<String>> {
        self.postings.get(dimension)?.get(value)
    }

    pub fn dimension_postings(&self, dimension: &str) -> Option<&BTreeMap<String, BTreeSet<String>>> {
        self.postings.get(dimension)
    }

    /// Dimensions holding at least one value, with their value maps.
    pub fn postings(&self) -> impl Iterator<Item = (&str, &BTreeMap<String, BTreeSet<String>>)> {
        self.postings.iter().map(|(d, m)| (d.as_str(), m))
    }

    pub fn doc_tags(&self, doc_id: &str) -> Option<&DimensionTags> {
        self.doc_tags.get(doc_id)
    }

    pub fn documents(&self) -> impl Iterator<Item = (&str, &DimensionTags)> {
        self.doc_tags.iter().map(|(d, t)| (d.as_str(), t))
    }

    pub fn document_count(&self) -> usize {
        self.doc_tags.len()
    }

    /// Total (document, dimension, value) assignments.
    pub fn assignment_count(&self) -> usize {
        self.doc_tags.values().map(DimensionTags::len).sum()
    }

    /// Posting entries per dimension, for build summaries.
    pub fn posting_counts(&self) -> BTreeMap<&str, usize> {
        self.spec
            .axes()
            .map(|d| {
                let n = self
                    .postings
                    .get(&d.name)
                    .map_or(0, |m| m.values().map(BTreeSet::len).sum());
                (d.name.as_str(), n)
            })
            .collect()
    }

    pub fn distinct_values(&self) -> BTreeSet<&str> {
        self.postings
            .values()
            .flat_map(|m| m.keys().map(String::as_str))
            .collect()
    }

    pub fn embeddings(&self) -> Option<&ValueEmbeddings> {
        self.embeddings.as_ref()
    }

    /// Embeds every distinct value that has no vector yet. Returns how many
    /// values were embedded.
    pub fn embed_missing_values(&mut self, embed: &dyn EmbeddingBackend) -> Result<usize, IndexError> {
        let missing: Vec<String> = self
            .distinct_values()
            .into_iter()
            .filter(|v| self.embeddings.as_ref().is_none_or(|e| e.get(v).is_none()))
            .map(str::to_string)
            .collect();
        for batch in missing.chunks(EMBED_BATCH) {
            let vectors = llm::embed(embed, batch)?;
            let table = self
                .embeddings
                .get_or_insert_with(|| ValueEmbeddings::new(vectors[0].len()));
            for (value, vector) in batch.iter().zip(&vectors) {
                table.insert(value.clone(), vector)?;
            }
        }
        Ok(missing.len())
    }

    #[cfg(test)]
    pub(crate) fn set_embeddings(&mut self, embeddings: Option<ValueEmbeddings>) {
        self.embeddings = embeddings;
    }

    /// Checks the postings/doc-tags bijection, canonical forms and
    /// embedding norms.
    pub fn check_consistency(&self) -> Result<(), String> {
        let mut from_tags = 0usize;
        for (doc, tags) in &self.doc_tags {
            tags.validate(&self.spec).map_err(|e| e.to_string())?;
            for (dim, value) in tags.pairs() {
                if !self.cell(dim, value).is_some_and(|ids| ids.contains(doc)) {
                    return Err(format!("{doc} tagged {dim}={value} but missing from postings"));
                }
                from_tags += 1;
            }
        }
        let mut from_postings = 0usize;
        for (dim, values) in &self.postings {
            if values.is_empty() {
                return Err(format!("empty dimension entry {dim}"));
            }
            for (value, ids) in values {
                if ids.is_empty() {
                    return Err(format!("empty cell {dim}={value}"));
                }
                for id in ids {
                    if !self.doc_tags.get(id).is_some_and(|t| t.contains(dim, value)) {
                        return Err(format!("posting {dim}={value} lists {id} without a tag"));
                    }
                }
                from_postings += ids.len();
            }
        }
        if from_tags != from_postings {
            return Err(format!("{from_tags} tag assignments vs {from_postings} postings"));
        }
        if let Some(emb) = &self.embeddings {
            for (value, v) in emb.iter() {
                if v.len() != emb.dim() {
                    return Err(format!("embedding for {value:?} has width {}", v.len()));
                }
                let norm = v.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > 1e-6 {
                    return Err(format!("embedding for {value:?} has norm {norm}"));
                }
            }
        }
        Ok(())
    }
}
