//! The iterative question-answering loop.
//!
//! A question is answered one hop at a time: the model proposes a subquery,
//! the router picks a cube, the subquery is decomposed against that cube and
//! retrieved, and the model answers it from the passages. The loop stops
//! when the model replies `FINAL ANSWER` to the next-subquery prompt or the
//! iteration limit is hit, then a final answer is generated from every
//! (subquery, answer) pair.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Document};
use crate::index::{CubeIndex, IndexStore};
use crate::llm::{self, ChatBackend, ChatRequest, EmbeddingBackend, LlmError};
use crate::prompts::PromptLibrary;
use crate::retriever::{
    decompose_query, rank, retrieve, QueryDecomposition, RetrievalConfig, RetrievalHit,
};
use crate::schema::CubeRegistry;

pub const FINAL_TOKEN: &str = "FINAL ANSWER";
pub const DEFAULT_MAX_ITERATIONS: usize = 5;
const SNIPPET_CHARS: usize = 240;

#[derive(Debug, Error)]
pub enum ReasoningError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("history is empty")]
    EmptyHistory,
    #[error("invalid loop config: {0}")]
    InvalidConfig(String),
    #[error("no index for cube {0}")]
    MissingIndex(String),
    #[error("{stage}: {source}")]
    Backend {
        stage: &'static str,
        #[source]
        source: LlmError,
    },
    #[error("{0} returned an empty reply")]
    EmptyReply(&'static str),
}

fn backend(stage: &'static str) -> impl FnOnce(LlmError) -> ReasoningError {
    move |source| ReasoningError::Backend { stage, source }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub max_iterations: usize,
    pub retrieval: RetrievalConfig,
    /// Extra router attempts after an unusable reply.
    pub router_retry: u32,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            max_iterations: DEFAULT_MAX_ITERATIONS,
            retrieval: RetrievalConfig::default(),
            router_retry: 1,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<(), ReasoningError> {
        if self.max_iterations == 0 {
            return Err(ReasoningError::InvalidConfig(
                "max_iterations must be at least 1".into(),
            ));
        }
        self.retrieval
            .validate()
            .map_err(|e| ReasoningError::InvalidConfig(e.to_string()))
    }
}

/// Where a subquery was sent. `All` is the fallback when the router reply
/// names no known cube.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", from = "String")]
pub enum Route {
    Cube(String),
    All,
}

impl From<Route> for String {
    fn from(r: Route) -> String {
        r.to_string()
    }
}

impl From<String> for Route {
    fn from(s: String) -> Route {
        if s == "ALL" {
            Route::All
        } else {
            Route::Cube(s)
        }
    }
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Route::Cube(name) => f.write_str(name),
            Route::All => f.write_str("ALL"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteDecision {
    pub route: Route,
    pub replies: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback_reason: Option<String>,
}

pub enum NextStep {
    Subquery(String),
    Finished,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    FinalToken,
    IterationLimit,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedDoc {
    pub doc_id: String,
    pub cube: String,
    pub score: f64,
    pub snippet: String,
}

/// Wall time per phase, in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub subquery: f64,
    pub route: f64,
    pub decompose: f64,
    pub retrieve: f64,
    pub answer: f64,
    pub final_answer: f64,
    pub total: f64,
}

impl PhaseTimings {
    fn add(&mut self, other: &PhaseTimings) {
        self.subquery += other.subquery;
        self.route += other.route;
        self.decompose += other.decompose;
        self.retrieve += other.retrieve;
        self.answer += other.answer;
        self.final_answer += other.final_answer;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub index: usize,
    pub subquery: String,
    pub route: RouteDecision,
    /// Decomposition per cube searched.
    pub decompositions: BTreeMap<String, QueryDecomposition>,
    /// Query entities that matched at least one retrieved document, per
    /// dimension.
    pub search_keys: BTreeMap<String, Vec<String>>,
    /// Stored (dimension, value) cells those matches landed on.
    pub activated_cells: BTreeMap<String, Vec<String>>,
    pub hits: Vec<RetrievalHit>,
    pub retrieved: Vec<RetrievedDoc>,
    pub sub_answer: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    pub timings: PhaseTimings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningTrace {
    pub query: String,
    pub iterations: Vec<IterationRecord>,
    pub final_answer: String,
    pub stop_reason: StopReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub timings: PhaseTimings,
}

impl ReasoningTrace {
    pub fn history(&self) -> Vec<(String, String)> {
        self.iterations
            .iter()
            .map(|r| (r.subquery.clone(), r.sub_answer.clone()))
            .collect()
    }

    /// Clears every timing field, for comparing traces across runs.
    pub fn without_timings(mut self) -> Self {
        self.timings = PhaseTimings::default();
        for it in &mut self.iterations {
            it.timings = PhaseTimings::default();
        }
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }
}

fn first_line(reply: &str) -> Option<String> {
    reply
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .map(str::to_string)
}

/// True when the reply carries the `FINAL ANSWER` sentinel, ignoring case,
/// spacing, quotes and punctuation.
pub fn is_final_token(reply: &str) -> bool {
    let squashed: String = reply
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect::<Vec<_>>()
        .join(" ");
    format!(" {squashed} ").contains(" final answer ")
}

fn ask(chat: &dyn ChatBackend, prompt: String, stage: &'static str) -> Result<String, ReasoningError> {
    Ok(llm::complete(chat, &ChatRequest::new(prompt))
        .map_err(backend(stage))?
        .text)
}

pub fn initial_subquery(
    query: &str,
    chat: &dyn ChatBackend,
    prompts: &PromptLibrary,
) -> Result<String, ReasoningError> {
    if query.trim().is_empty() {
        return Err(ReasoningError::EmptyQuery);
    }
    let reply = ask(chat, prompts.initial(query), "initial subquery")?;
    first_line(&reply).ok_or(ReasoningError::EmptyReply("initial subquery"))
}

pub fn next_subquery(
    query: &str,
    history: &[(String, String)],
    chat: &dyn ChatBackend,
    prompts: &PromptLibrary,
) -> Result<NextStep, ReasoningError> {
    if history.is_empty() {
        return Err(ReasoningError::EmptyHistory);
    }
    let reply = ask(chat, prompts.next(query, history), "next subquery")?;
    if is_final_token(&reply) {
        return Ok(NextStep::Finished);
    }
    first_line(&reply)
        .map(NextStep::Subquery)
        .ok_or(ReasoningError::EmptyReply("next subquery"))
}

/// Cube named by a router reply: an exact (case-insensitive) name, or the
/// only registry name mentioned in it.
pub fn parse_route(reply: &str, registry: &CubeRegistry) -> Option<String> {
    let cleaned = reply
        .trim()
        .trim_matches(|c: char| !c.is_alphanumeric() && c != '_')
        .to_string();
    if let Some(name) = registry.names().find(|n| n.eq_ignore_ascii_case(&cleaned)) {
        return Some(name.to_string());
    }
    let upper = reply.to_uppercase();
    let mentioned: Vec<&str> = registry
        .names()
        .filter(|n| {
            upper.match_indices(&n.to_uppercase()).any(|(i, m)| {
                let before = upper[..i].chars().next_back();
                let after = upper[i + m.len()..].chars().next();
                let edge = |c: Option<char>| c.is_none_or(|c| !c.is_alphanumeric() && c != '_');
                edge(before) && edge(after)
            })
        })
        .collect();
    match mentioned.as_slice() {
        [one] => Some(one.to_string()),
        _ => None,
    }
}

/// Asks the router up to `1 + retries` times; falls back to every cube.
pub fn route(
    subquery: &str,
    registry: &CubeRegistry,
    chat: &dyn ChatBackend,
    prompts: &PromptLibrary,
    retries: u32,
) -> RouteDecision {
    let prompt = prompts.router(subquery, registry);
    let mut replies = Vec::new();
    let mut last_problem = String::new();
    for _ in 0..=retries {
        match llm::complete(chat, &ChatRequest::new(prompt.clone())) {
            Ok(resp) => {
                let parsed = parse_route(&resp.text, registry);
                replies.push(resp.text);
                if let Some(name) = parsed {
                    return RouteDecision {
                        route: Route::Cube(name),
                        replies,
                        fallback_reason: None,
                    };
                }
                last_problem = "reply names no known cube".into();
            }
            Err(e) => last_problem = e.to_string(),
        }
    }
    tracing::warn!(%subquery, reason = %last_problem, "router fell back to all cubes");
    RouteDecision {
        route: Route::All,
        replies,
        fallback_reason: Some(last_problem),
    }
}

pub fn answer_subquery(
    subquery: &str,
    passages: &[&Document],
    chat: &dyn ChatBackend,
    prompts: &PromptLibrary,
) -> Result<String, ReasoningError> {
    Ok(ask(chat, prompts.subanswer(subquery, passages), "sub-answer")?
        .trim()
        .to_string())
}

pub fn final_answer(
    query: &str,
    history: &[(String, String)],
    chat: &dyn ChatBackend,
    prompts: &PromptLibrary,
) -> Result<String, ReasoningError> {
    let reply = ask(chat, prompts.final_answer(query, history), "final answer")?;
    let reply = reply.trim();
    if reply.is_empty() {
        return Err(ReasoningError::EmptyReply("final answer"));
    }
    Ok(reply.to_string())
}

fn snippet(text: &str) -> String {
    match text.char_indices().nth(SNIPPET_CHARS) {
        Some((i, _)) => format!("{}...", &text[..i]),
        None => text.to_string(),
    }
}

/// Everything one query needs: the corpus, cubes, backends and prompts.
pub struct Engine<'a> {
    pub corpus: &'a Corpus,
    pub registry: &'a CubeRegistry,
    pub indexes: &'a BTreeMap<String, CubeIndex>,
    pub chat: &'a dyn ChatBackend,
    pub embed: Option<&'a dyn EmbeddingBackend>,
    pub prompts: PromptLibrary,
}

impl<'a> Engine<'a> {
    pub fn new(
        store: &'a IndexStore,
        chat: &'a dyn ChatBackend,
        embed: Option<&'a dyn EmbeddingBackend>,
    ) -> Self {
        Self {
            corpus: &store.corpus,
            registry: &store.registry,
            indexes: &store.indexes,
            chat,
            embed,
            prompts: PromptLibrary::default(),
        }
    }

    /// Same engine over a narrower registry (for cube ablations).
    pub fn with_registry(mut self, registry: &'a CubeRegistry) -> Self {
        self.registry = registry;
        self
    }

    pub fn with_prompts(mut self, prompts: PromptLibrary) -> Self {
        self.prompts = prompts;
        self
    }

    fn check(&self) -> Result<(), ReasoningError> {
        match self.registry.names().find(|n| !self.indexes.contains_key(*n)) {
            Some(missing) => Err(ReasoningError::MissingIndex(missing.to_string())),
            None => Ok(()),
        }
    }

    /// Answers `query`. Backend failures end the loop with
    /// [`StopReason::Error`] and a partial trace; only bad input is `Err`.
    pub fn run(&self, query: &str, cfg: &LoopConfig) -> Result<ReasoningTrace, ReasoningError> {
        if query.trim().is_empty() {
            return Err(ReasoningError::EmptyQuery);
        }
        cfg.validate()?;
        self.check()?;
        let started = Instant::now();
        let mut trace = ReasoningTrace {
            query: query.to_string(),
            iterations: Vec::new(),
            final_answer: String::new(),
            stop_reason: StopReason::Error,
            error: None,
            timings: PhaseTimings::default(),
        };
        let outcome = self.drive(query, cfg, &mut trace);
        for it in &trace.iterations {
            let t = it.timings;
            trace.timings.add(&t);
        }
        if let Err(e) = outcome {
            tracing::warn!(%query, error = %e, "reasoning loop aborted");
            trace.stop_reason = StopReason::Error;
            trace.error = Some(e.to_string());
        }
        trace.timings.total = started.elapsed().as_secs_f64();
        Ok(trace)
    }

    fn drive(&self, query: &str, cfg: &LoopConfig, trace: &mut ReasoningTrace) -> Result<(), ReasoningError> {
        let t = Instant::now();
        let mut subquery = initial_subquery(query, self.chat, &self.prompts)?;
        trace.timings.subquery += t.elapsed().as_secs_f64();

        for i in 1..=cfg.max_iterations {
            let record = self.iteration(i, &subquery, cfg)?;
            trace.iterations.push(record);

            let t = Instant::now();
            let next = next_subquery(query, &trace.history(), self.chat, &self.prompts);
            trace.timings.subquery += t.elapsed().as_secs_f64();
            match next? {
                NextStep::Finished => {
                    trace.stop_reason = StopReason::FinalToken;
                    break;
                }
                NextStep::Subquery(_) if i == cfg.max_iterations => {
                    trace.stop_reason = StopReason::IterationLimit;
                }
                NextStep::Subquery(s) => subquery = s,
            }
        }

        let t = Instant::now();
        let answer = final_answer(query, &trace.history(), self.chat, &self.prompts);
        trace.timings.final_answer += t.elapsed().as_secs_f64();
        trace.final_answer = answer?;
        Ok(())
    }

    fn iteration(&self, index: usize, subquery: &str, cfg: &LoopConfig) -> Result<IterationRecord, ReasoningError> {
        let mut timings = PhaseTimings::default();
        let mut warnings = Vec::new();

        let t = Instant::now();
        let decision = route(subquery, self.registry, self.chat, &self.prompts, cfg.router_retry);
        timings.route = t.elapsed().as_secs_f64();

        let cubes: Vec<&str> = match &decision.route {
            Route::Cube(name) => vec![name.as_str()],
            Route::All => self.registry.names().collect(),
        };
        let mut decompositions = BTreeMap::new();
        let mut hits: Vec<RetrievalHit> = Vec::new();
        for cube in cubes {
            let index = self
                .indexes
                .get(cube)
                .ok_or_else(|| ReasoningError::MissingIndex(cube.to_string()))?;
            let t = Instant::now();
            let decomp = decompose_query(subquery, index.spec(), self.chat).map_err(backend("decomposition"))?;
            timings.decompose += t.elapsed().as_secs_f64();
            if decomp.raw_reply.is_some() {
                warnings.push(format!("{cube}: decomposition reply was not understood"));
            }

            let t = Instant::now();
            let outcome = retrieve(index, &decomp, &cfg.retrieval, self.embed)
                .map_err(|e| ReasoningError::InvalidConfig(e.to_string()))?;
            timings.retrieve += t.elapsed().as_secs_f64();
            warnings.extend(outcome.warnings);
            hits.extend(outcome.hits);
            decompositions.insert(cube.to_string(), decomp);
        }
        rank(&mut hits);
        let mut seen = BTreeSet::new();
        hits.retain(|h| seen.insert(h.doc_id.clone()));
        hits.truncate(cfg.retrieval.k);

        let mut search_keys: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut activated: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for m in hits.iter().flat_map(|h| &h.matches) {
            let keys = search_keys.entry(m.dimension.clone()).or_default();
            if !keys.contains(&m.entity) {
                keys.push(m.entity.clone());
            }
            activated.entry(m.dimension.clone()).or_default().insert(m.value.clone());
        }

        let mut passages = Vec::new();
        let mut retrieved = Vec::new();
        for h in &hits {
            match self.corpus.get(&h.doc_id) {
                Some(doc) => {
                    passages.push(doc);
                    retrieved.push(RetrievedDoc {
                        doc_id: h.doc_id.clone(),
                        cube: h.cube.clone(),
                        score: h.score,
                        snippet: snippet(&doc.text),
                    });
                }
                None => warnings.push(format!("indexed document {} is not in the corpus", h.doc_id)),
            }
        }

        let t = Instant::now();
        let sub_answer = answer_subquery(subquery, &passages, self.chat, &self.prompts)?;
        timings.answer = t.elapsed().as_secs_f64();

        Ok(IterationRecord {
            index,
            subquery: subquery.to_string(),
            route: decision,
            decompositions,
            search_keys,
            activated_cells: activated
                .into_iter()
                .map(|(d, v)| (d, v.into_iter().collect()))
                .collect(),
            hits,
            retrieved,
            sub_answer,
            warnings,
            timings,
        })
    }
}
