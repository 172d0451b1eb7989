#![allow(dead_code)]
pub mod synth;

use std::path::PathBuf;

use cuberag::corpus::Corpus;
use cuberag::index::{BuildOptions, IndexStore};
use cuberag::llm::config::Backends;
use cuberag::llm::BackendConfig;
use cuberag::schema::CubeRegistry;

pub const CASE_QUERY: &str =
    "Which film whose director was born first, El Tonto or The Heart Of Doreon?";

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/case_study")
}

pub fn fixture(name: &str) -> PathBuf {
    fixture_dir().join(name)
}

pub fn backends() -> Backends {
    BackendConfig::load(fixture("backend.json"))
        .unwrap()
        .build()
        .unwrap()
}

pub fn case_store(backends: &Backends) -> IndexStore {
    let corpus = Corpus::load(fixture("corpus.jsonl")).unwrap();
    let registry = CubeRegistry::load(fixture("schema.json")).unwrap();
    let (store, report) = IndexStore::build(
        corpus,
        registry,
        backends.chat.as_ref(),
        backends.embed.as_deref(),
        &BuildOptions::default(),
    )
    .unwrap();
    assert!(report.failures.is_empty(), "{:?}", report.failures);
    assert!(report.warnings.is_empty(), "{:?}", report.warnings);
    store
}

/// Wraps the case-study chat. Next-question prompts get `probe N` (or the
/// final token once `finish_after` answers exist), sub-answer prompts get
/// `answer to <subquery>`, and the `fail_on`-th call whose prompt contains
/// the given marker fails. Every prompt is logged.
pub struct Adversary<C> {
    pub inner: C,
    pub finish_after: Option<usize>,
    pub fail_on: Option<(&'static str, usize)>,
    pub log: std::sync::Mutex<Vec<String>>,
}

impl<C> Adversary<C> {
    pub fn new(inner: C) -> Self {
        Self {
            inner,
            finish_after: None,
            fail_on: None,
            log: Default::default(),
        }
    }

    pub fn prompts_with(&self, marker: &str) -> Vec<String> {
        self.log.lock().unwrap().iter().filter(|p| p.contains(marker)).cloned().collect()
    }
}

pub const NEXT_MARKER: &str = "next logical question";
pub const ANSWER_MARKER: &str = "Answer the question using the retrieved passages";

impl<C: ChatBackend> ChatBackend for Adversary<C> {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let prompt = req.user.clone();
        let seen = {
            let mut log = self.log.lock().unwrap();
            log.push(prompt.clone());
            self.fail_on
                .map(|(m, _)| log.iter().filter(|p| p.contains(m)).count())
        };
        if let Some((marker, nth)) = self.fail_on {
            if prompt.contains(marker) && seen == Some(nth) {
                return Err(LlmError::Status { status: 400, body: "injected".into() });
            }
        }
        if prompt.contains(NEXT_MARKER) {
            let answered = prompt.lines().filter(|l| l.starts_with("Answer ")).count();
            return Ok(ChatResponse::text(match self.finish_after {
                Some(n) if answered >= n => "FINAL ANSWER".to_string(),
                _ => format!("probe {}", answered + 1),
            }));
        }
        if prompt.contains(ANSWER_MARKER) {
            let q = prompt.rsplit("Question:").next().unwrap_or("").trim();
            return Ok(ChatResponse::text(format!("answer to {q}")));
        }
        self.inner.complete(req)
    }
}

use cuberag::llm::{ChatBackend, ChatRequest, ChatResponse, LlmError};
