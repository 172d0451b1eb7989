//! A corpus, its schema and one index per cube, saved together.
//!
//! ```text
//! <dir>/store            sha256 of the body, newline, JSON body
//! <dir>/corpus.jsonl
//! <dir>/schema.json
//! <dir>/cubes/00_NAME/   one cube index directory each
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::persist::{checksummed, sha256_hex, verify_checksummed};
use super::tagging::{absorb, tag_corpus};
use super::{BuildOptions, BuildReport, CubeIndex, IndexError, FORMAT_VERSION};
use crate::corpus::{Corpus, Document};
use crate::llm::{ChatBackend, EmbeddingBackend};
use crate::schema::CubeRegistry;

const STORE: &str = "store";
const CORPUS: &str = "corpus.jsonl";
const SCHEMA: &str = "schema.json";

#[derive(Serialize, Deserialize)]
struct StoreManifest {
    format_version: u32,
    corpus_sha256: String,
    schema_sha256: String,
    cubes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexStore {
    pub corpus: Corpus,
    pub registry: CubeRegistry,
    pub indexes: BTreeMap<String, CubeIndex>,
}

fn cube_dir_name(i: usize, name: &str) -> String {
    let safe: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
        .collect();
    format!("{i:02}_{safe}")
}

impl IndexStore {
    pub fn build(
        corpus: Corpus,
        registry: CubeRegistry,
        chat: &dyn ChatBackend,
        embed: Option<&dyn EmbeddingBackend>,
        opts: &BuildOptions,
    ) -> Result<(Self, BuildReport), IndexError> {
        let (indexes, report) = super::build_index(&corpus, &registry, chat, embed, opts)?;
        Ok((
            Self {
                corpus,
                registry,
                indexes,
            },
            report,
        ))
    }

    /// Tags and inserts new documents. Either every new document is added
    /// to the corpus or none is; documents that fail tagging are added to
    /// the corpus but reported and left out of the cubes.
    pub fn append_documents(
        &mut self,
        docs: Vec<Document>,
        chat: &dyn ChatBackend,
        embed: Option<&dyn EmbeddingBackend>,
        opts: &BuildOptions,
    ) -> Result<BuildReport, IndexError> {
        let corpus = self.corpus.append_documents(docs.clone())?;
        let mut indexes = self.indexes.clone();
        let mut report = BuildReport::default();
        absorb(
            &mut indexes,
            tag_corpus(&docs, &self.registry, chat, opts.workers),
            &mut report,
        )?;
        if let Some(embed) = embed {
            for index in indexes.values_mut() {
                if index.embeddings().is_some() || index.assignment_count() > 0 {
                    report.embedded_values += index.embed_missing_values(embed)?;
                }
            }
        }
        self.corpus = corpus;
        self.indexes = indexes;
        Ok(report)
    }

    pub fn index(&self, cube: &str) -> Option<&CubeIndex> {
        self.indexes.get(cube)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), IndexError> {
        let dir = dir.as_ref();
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| IndexError::Io { path, source }
        };
        let cubes_dir = dir.join("cubes");
        if cubes_dir.exists() {
            fs::remove_dir_all(&cubes_dir).map_err(io(&cubes_dir))?;
        }
        fs::create_dir_all(&cubes_dir).map_err(io(&cubes_dir))?;

        let corpus = self.corpus.to_jsonl().into_bytes();
        let schema = self.registry.to_json().into_bytes();
        fs::write(dir.join(CORPUS), &corpus).map_err(io(&dir.join(CORPUS)))?;
        fs::write(dir.join(SCHEMA), &schema).map_err(io(&dir.join(SCHEMA)))?;

        let mut cubes = BTreeMap::new();
        for (i, spec) in self.registry.iter().enumerate() {
            let sub = cube_dir_name(i, &spec.name);
            let index = self
                .indexes
                .get(&spec.name)
                .cloned()
                .unwrap_or_else(|| CubeIndex::new(spec.clone()));
            index.save(cubes_dir.join(&sub))?;
            cubes.insert(spec.name.clone(), sub);
        }
        let manifest = StoreManifest {
            format_version: FORMAT_VERSION,
            corpus_sha256: sha256_hex(&corpus),
            schema_sha256: sha256_hex(&schema),
            cubes,
        };
        let mut body = serde_json::to_vec(&manifest).expect("manifest serializes");
        body.push(b'\n');
        fs::write(dir.join(STORE), checksummed(&body)).map_err(io(&dir.join(STORE)))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, IndexError> {
        let dir = dir.as_ref();
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read(&path).map_err(|source| IndexError::Io { path, source })
        };
        let corrupt = |file: &str, reason: String| IndexError::Corrupt {
            file: file.to_string(),
            reason,
        };
        let raw = read(STORE)?;
        let body = verify_checksummed(STORE, &raw)?;
        let manifest: StoreManifest =
            serde_json::from_slice(body).map_err(|e| corrupt(STORE, e.to_string()))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(IndexError::VersionMismatch {
                found: manifest.format_version,
                expected: FORMAT_VERSION,
            });
        }
        let corpus_bytes = read(CORPUS)?;
        if sha256_hex(&corpus_bytes) != manifest.corpus_sha256 {
            return Err(corrupt(CORPUS, "checksum mismatch".into()));
        }
        let schema_bytes = read(SCHEMA)?;
        if sha256_hex(&schema_bytes) != manifest.schema_sha256 {
            return Err(corrupt(SCHEMA, "checksum mismatch".into()));
        }
        let corpus = Corpus::parse(&String::from_utf8_lossy(&corpus_bytes))?;
        let registry = CubeRegistry::from_json(&String::from_utf8_lossy(&schema_bytes))?;

        let mut indexes = BTreeMap::new();
        for spec in registry.iter() {
            let sub = manifest
                .cubes
                .get(&spec.name)
                .ok_or_else(|| corrupt(STORE, format!("cube {} not listed", spec.name)))?;
            let index = CubeIndex::load(dir.join("cubes").join(sub))?;
            if index.spec() != spec {
                return Err(corrupt(sub, "spec differs from schema.json".into()));
            }
            if let Some((doc, _)) = index.documents().find(|(d, _)| !corpus.contains(d)) {
                return Err(corrupt(sub, format!("document {doc} is not in the corpus")));
            }
            indexes.insert(spec.name.clone(), index);
        }
        Ok(Self {
            corpus,
            registry,
            indexes,
        })
    }
}
