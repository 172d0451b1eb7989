//! Single-pass document tagging and index construction.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde_json::Value;

use super::{CubeIndex, DimensionTags, IndexError};
use crate::corpus::{Corpus, Document};
use crate::llm::{self, ChatBackend, ChatRequest, EmbeddingBackend};
use crate::prompts::{extract_json_object, tagging_prompt};
use crate::schema::{CubeRegistry, CubeSpec};

/// Tags for one document across every cube, plus anything dropped while
/// parsing the reply.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggedDocument {
    pub doc_id: String,
    pub cubes: BTreeMap<String, DimensionTags>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagFailure {
    pub doc_id: String,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct BuildOptions {
    /// Concurrent tagging calls.
    pub workers: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self { workers: 4 }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuildReport {
    pub documents: usize,
    pub tagged: usize,
    pub failures: Vec<TagFailure>,
    pub warnings: Vec<String>,
    pub embedded_values: usize,
}

fn find_cube<'a>(registry: &'a CubeRegistry, key: &str) -> Option<&'a CubeSpec> {
    registry
        .get(key)
        .or_else(|| registry.iter().find(|c| c.name.eq_ignore_ascii_case(key.trim())))
}

pub(crate) fn reply_values(v: &Value) -> Option<Vec<String>> {
    match v {
        Value::String(s) => Some(vec![s.clone()]),
        Value::Number(n) => Some(vec![n.to_string()]),
        Value::Null => Some(Vec::new()),
        Value::Array(items) => items
            .iter()
            .map(|i| match i {
                Value::String(s) => Some(s.clone()),
                Value::Number(n) => Some(n.to_string()),
                _ => None,
            })
            .collect(),
        _ => None,
    }
}

/// Parses a tagging reply into per-cube tags. Every registry cube gets an
/// entry; unknown cubes, unknown dimensions and non-string values are
/// dropped with a warning.
#[allow(clippy::type_complexity)]
pub fn parse_tag_reply(
    reply: &str,
    registry: &CubeRegistry,
) -> Result<(BTreeMap<String, DimensionTags>, Vec<String>), String> {
    let obj = extract_json_object(reply).ok_or_else(|| "reply holds no JSON object".to_string())?;
    let mut cubes: BTreeMap<String, DimensionTags> = registry
        .names()
        .map(|n| (n.to_string(), DimensionTags::new()))
        .collect();
    let mut warnings = Vec::new();
    for (cube_key, dims) in &obj {
        let Some(spec) = find_cube(registry, cube_key) else {
            warnings.push(format!("unknown cube {cube_key:?} dropped"));
            continue;
        };
        let Value::Object(dims) = dims else {
            warnings.push(format!("cube {cube_key:?} is not an object"));
            continue;
        };
        let tags = cubes.get_mut(&spec.name).expect("seeded from registry");
        for (dim_key, values) in dims {
            let Some(dim) = spec.resolve_axis(dim_key).map(|d| d.name.as_str()) else {
                warnings.push(format!("unknown dimension {dim_key:?} in {} dropped", spec.name));
                continue;
            };
            let Some(values) = reply_values(values) else {
                warnings.push(format!("{}.{dim_key}: values must be strings", spec.name));
                continue;
            };
            for v in values {
                tags.insert(dim, &v);
            }
        }
    }
    Ok((cubes, warnings))
}

/// Tags `doc` against every cube with one backend call.
pub fn tag_document(
    doc: &Document,
    registry: &CubeRegistry,
    chat: &dyn ChatBackend,
) -> Result<TaggedDocument, TagFailure> {
    let specs: Vec<&CubeSpec> = registry.iter().collect();
    let fail = |error: String| TagFailure {
        doc_id: doc.doc_id.clone(),
        error,
    };
    let reply = llm::complete(chat, &ChatRequest::new(tagging_prompt(doc, &specs)))
        .map_err(|e| fail(e.to_string()))?;
    let (cubes, warnings) = parse_tag_reply(&reply.text, registry).map_err(fail)?;
    let warnings = warnings
        .into_iter()
        .map(|w| format!("{}: {w}", doc.doc_id))
        .collect();
    Ok(TaggedDocument {
        doc_id: doc.doc_id.clone(),
        cubes,
        warnings,
    })
}

/// Tags documents on `workers` threads. Results come back in input order.
pub fn tag_corpus(
    docs: &[Document],
    registry: &CubeRegistry,
    chat: &dyn ChatBackend,
    workers: usize,
) -> Vec<Result<TaggedDocument, TagFailure>> {
    let workers = workers.clamp(1, docs.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<TaggedDocument, TagFailure>>>> =
        Mutex::new((0..docs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(doc) = docs.get(i) else { break };
                let result = tag_document(doc, registry, chat);
                if let Err(f) = &result {
                    tracing::warn!(doc = %f.doc_id, error = %f.error, "tagging failed");
                }
                slots.lock().unwrap()[i] = Some(result);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

/// Inserts tagged results into `indexes`, recording failures in `report`.
pub(crate) fn absorb(
    indexes: &mut BTreeMap<String, CubeIndex>,
    results: Vec<Result<TaggedDocument, TagFailure>>,
    report: &mut BuildReport,
) -> Result<(), IndexError> {
    for result in results {
        report.documents += 1;
        match result {
            Ok(tagged) => {
                report.warnings.extend(tagged.warnings);
                for (cube, tags) in tagged.cubes {
                    if tags.is_empty() {
                        continue;
                    }
                    if let Some(index) = indexes.get_mut(&cube) {
                        index.insert_document(&tagged.doc_id, tags)?;
                    }
                }
                report.tagged += 1;
            }
            Err(failure) => report.failures.push(failure),
        }
    }
    Ok(())
}

/// Tags the whole corpus once and builds one index per cube. A document
/// lands in every cube it has tags for; untagged documents are reported.
pub fn build_index(
    corpus: &Corpus,
    registry: &CubeRegistry,
    chat: &dyn ChatBackend,
    embed: Option<&dyn EmbeddingBackend>,
    opts: &BuildOptions,
) -> Result<(BTreeMap<String, CubeIndex>, BuildReport), IndexError> {
    if corpus.is_empty() {
        return Err(IndexError::EmptyCorpus);
    }
    let mut indexes: BTreeMap<String, CubeIndex> = registry
        .iter()
        .map(|spec| (spec.name.clone(), CubeIndex::new(spec.clone())))
        .collect();
    let mut report = BuildReport::default();
    let results = tag_corpus(corpus.documents(), registry, chat, opts.workers);
    absorb(&mut indexes, results, &mut report)?;
    if let Some(embed) = embed {
        for index in indexes.values_mut() {
            report.embedded_values += index.embed_missing_values(embed)?;
        }
    }
    tracing::info!(
        documents = report.documents,
        tagged = report.tagged,
        failures = report.failures.len(),
        "index built"
    );
    Ok((indexes, report))
}
