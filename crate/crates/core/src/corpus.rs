//! Document corpus: line-delimited ingestion, lookup by id, and append.
//!
//! A corpus file holds one JSON object per line with `id`, `text` and an
//! optional `title`. Unknown fields are ignored. Blank lines are skipped.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("duplicate document id {0:?}")]
    DuplicateId(String),
    #[error("invalid document {doc_id:?}: {reason}")]
    InvalidDocument { doc_id: String, reason: String },
}

/// One retrieval unit. `title: None` and `title: Some("")` are distinct.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    #[serde(rename = "id")]
    pub doc_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub text: String,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            title: None,
            text: text.into(),
        }
    }

    pub fn with_title(mut self, title: impl Into<String>) -> Self {
        self.title = Some(title.into());
        self
    }

    fn validate(&self) -> Result<(), String> {
        if self.doc_id.is_empty() {
            return Err("empty id".into());
        }
        if self.text.is_empty() {
            return Err("empty text".into());
        }
        Ok(())
    }
}

/// Ordered, id-addressable document set.
///
/// Appending returns a new corpus; an existing `Corpus` never changes after
/// construction, so shared references can be read from any thread.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    documents: Vec<Document>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn from_documents(docs: Vec<Document>) -> Result<Self, CorpusError> {
        Corpus::default().append_documents(docs)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&raw)
    }

    pub fn parse(raw: &str) -> Result<Self, CorpusError> {
        let mut docs = Vec::new();
        for (i, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let doc: Document = serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
                line: i + 1,
                reason: e.to_string(),
            })?;
            doc.validate().map_err(|reason| CorpusError::Malformed {
                line: i + 1,
                reason,
            })?;
            docs.push(doc);
        }
        Self::from_documents(docs)
    }

    /// Returns a corpus extended by `docs`. Fails without appending anything
    /// if any id collides with an existing one or with another new doc.
    pub fn append_documents(
        &self,
        docs: impl IntoIterator<Item = Document>,
    ) -> Result<Corpus, CorpusError> {
        let mut next = self.clone();
        for doc in docs {
            doc.validate().map_err(|reason| CorpusError::InvalidDocument {
                doc_id: doc.doc_id.clone(),
                reason,
            })?;
            if next.by_id.contains_key(&doc.doc_id) {
                return Err(CorpusError::DuplicateId(doc.doc_id));
            }
            next.by_id.insert(doc.doc_id.clone(), next.documents.len());
            next.documents.push(doc);
        }
        Ok(next)
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.by_id.get(doc_id).map(|&i| &self.documents[i])
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.by_id.contains_key(doc_id)
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn iter(&self) -> impl Iterator<Item = &Document> {
        self.documents.iter()
    }

    /// Writes the corpus in the same line format [`Corpus::load`] reads.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for doc in &self.documents {
            serde_json::to_writer(&mut out, doc)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let path = path.as_ref();
        fs::write(path, self.to_jsonl()).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}
