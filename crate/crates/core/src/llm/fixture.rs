use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::time::Duration;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::{sleep_if_positive, unit_vector, EmbeddingBackend, LlmError};
use crate::normalize::normalize_value;

/// Table-driven embedder. Known strings (looked up verbatim, then in
/// normalized form) get their table vector; anything else gets a unit vector
/// derived from SHA-256 of the text, so the same input always maps to the
/// same vector.
#[derive(Debug, Clone)]
pub struct FixtureEmbedder {
    dim: usize,
    table: HashMap<String, Vec<f32>>,
    delay: Duration,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TableFile {
    dim: usize,
    #[serde(default)]
    vectors: HashMap<String, Vec<f32>>,
}

impl FixtureEmbedder {
    /// An embedder with an empty table: every input is hash-derived.
    pub fn hashed(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self {
            dim,
            table: HashMap::new(),
            delay: Duration::ZERO,
        }
    }

    pub fn with_vector(mut self, text: &str, vector: Vec<f32>) -> Result<Self, LlmError> {
        self.insert(text, vector)?;
        Ok(self)
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn insert(&mut self, text: &str, vector: Vec<f32>) -> Result<(), LlmError> {
        if vector.len() != self.dim {
            return Err(LlmError::DimensionMismatch {
                expected: self.dim,
                got: vector.len(),
            });
        }
        let unit = unit_vector(&vector)
            .ok_or_else(|| LlmError::Config(format!("zero vector for {text:?}")))?;
        self.table.insert(text.to_string(), unit);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `{"dim": 2, "vectors": {"text": [1.0, 0.0], ...}}`
    pub fn from_json(raw: &str) -> Result<Self, LlmError> {
        let file: TableFile = serde_json::from_str(raw)
            .map_err(|e| LlmError::Config(format!("embedding table: {e}")))?;
        if file.dim == 0 {
            return Err(LlmError::Config("embedding table: dim must be positive".into()));
        }
        let mut embedder = Self::hashed(file.dim);
        for (text, vector) in file.vectors {
            embedder.insert(&text, vector)?;
        }
        Ok(embedder)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path)
            .map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&raw)
    }

    pub fn vector(&self, text: &str) -> Vec<f32> {
        if let Some(v) = self.table.get(text) {
            return v.clone();
        }
        if let Some(v) = self.table.get(&normalize_value(text)) {
            return v.clone();
        }
        self.hashed_vector(text)
    }

    fn hashed_vector(&self, text: &str) -> Vec<f32> {
        let mut raw = Vec::with_capacity(self.dim);
        let mut block = 0u32;
        while raw.len() < self.dim {
            let mut hasher = Sha256::new();
            hasher.update(block.to_le_bytes());
            hasher.update(text.as_bytes());
            let digest = hasher.finalize();
            for chunk in digest.chunks_exact(4) {
                if raw.len() == self.dim {
                    break;
                }
                let bits = u32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
                raw.push((f64::from(bits) / f64::from(u32::MAX) * 2.0 - 1.0) as f32);
            }
            block += 1;
        }
        // An all-zero draw is astronomically unlikely; fall back to an axis.
        unit_vector(&raw).unwrap_or_else(|| {
            let mut axis = vec![0.0; self.dim];
            axis[0] = 1.0;
            axis
        })
    }
}

impl EmbeddingBackend for FixtureEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, LlmError> {
        sleep_if_positive(self.delay);
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}
