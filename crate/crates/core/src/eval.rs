//! Answer metrics and the batched benchmark driver.
//!
//! Answers are compared after the usual QA normalization: lowercase, ASCII
//! punctuation removed, the articles a/an/the removed, whitespace collapsed.
//! F1 is computed over token multisets and takes the best gold answer.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{LazyLock, Mutex};
use std::time::Instant;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reasoning::{Engine, LoopConfig, StopReason};
use crate::retriever::MatchMode;
use crate::schema::SchemaError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("invalid benchmark config: {0}")]
    Config(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

static ARTICLES: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b(a|an|the)\b").unwrap());

pub fn normalize_answer(s: &str) -> String {
    let lower = s.to_lowercase();
    let no_punct: String = lower.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    let no_articles = ARTICLES.replace_all(&no_punct, " ");
    no_articles.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// 1.0 when the normalized prediction equals any normalized gold answer.
pub fn exact_match(prediction: &str, gold_answers: &[String]) -> f64 {
    let p = normalize_answer(prediction);
    if gold_answers.iter().any(|g| normalize_answer(g) == p) {
        1.0
    } else {
        0.0
    }
}

fn token_f1(prediction: &str, gold: &str) -> f64 {
    let p = normalize_answer(prediction);
    let g = normalize_answer(gold);
    let pt: Vec<&str> = p.split_whitespace().collect();
    let gt: Vec<&str> = g.split_whitespace().collect();
    if pt.is_empty() || gt.is_empty() {
        return if pt.is_empty() && gt.is_empty() { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gt {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &pt {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pt.len() as f64;
    let recall = common as f64 / gt.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Best token F1 over the gold answers.
pub fn f1(prediction: &str, gold_answers: &[String]) -> f64 {
    gold_answers
        .iter()
        .map(|g| token_f1(prediction, g))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAExample {
    pub question: String,
    #[serde(alias = "gold_answers")]
    pub answers: Vec<String>,
}

impl QAExample {
    pub fn new(question: impl Into<String>, answers: &[&str]) -> Self {
        Self {
            question: question.into(),
            answers: answers.iter().map(|a| a.to_string()).collect(),
        }
    }
}

/// Parses line-delimited `{"question": ..., "answers": [...]}` records.
pub fn parse_dataset(raw: &str) -> Result<Vec<QAExample>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| EvalError::Malformed { line: i + 1, reason };
        let ex: QAExample = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        if ex.question.trim().is_empty() {
            return Err(malformed("question is empty".into()));
        }
        if ex.answers.is_empty() {
            return Err(malformed("answers is empty".into()));
        }
        out.push(ex);
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<QAExample>, EvalError> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_dataset(&raw)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub disabled_cubes: BTreeSet<String>,
    pub mode: Option<MatchMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub loop_config: LoopConfig,
    pub batch_size: usize,
    pub ablation: AblationConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            loop_config: LoopConfig::default(),
            batch_size: 1,
            ablation: AblationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub index: usize,
    pub question: String,
    pub gold_answers: Vec<String>,
    pub prediction: String,
    pub em: f64,
    pub f1: f64,
    /// Index lookup and scoring only; model calls excluded.
    pub retrieval_seconds: f64,
    pub end_to_end_seconds: f64,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_reason: Option<StopReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub count: usize,
    pub errors: usize,
    pub em: f64,
    pub f1: f64,
    pub em_percent: f64,
    pub f1_percent: f64,
    pub mean_retrieval_seconds: f64,
    pub mean_end_to_end_seconds: f64,
    pub p50_end_to_end_seconds: f64,
    pub p95_end_to_end_seconds: f64,
    pub p50_retrieval_seconds: f64,
    pub p95_retrieval_seconds: f64,
    /// Wall time of the whole run.
    pub wall_seconds: f64,
    /// Wall time divided by the number of questions; drops as batch size
    /// grows.
    pub amortized_seconds_per_query: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub k: usize,
    pub tau: f64,
    pub mode: MatchMode,
    pub max_iterations: usize,
    pub router_retry: u32,
    pub batch_size: usize,
    pub disabled_cubes: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: ConfigSnapshot,
    pub aggregates: Aggregates,
    pub examples: Vec<ExampleRecord>,
}

/// Nearest-rank percentile; 0 for an empty slice.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

impl Aggregates {
    pub fn from_records(records: &[ExampleRecord], wall_seconds: f64) -> Self {
        let em = mean(records.iter().map(|r| r.em));
        let f1 = mean(records.iter().map(|r| r.f1));
        let e2e: Vec<f64> = records.iter().map(|r| r.end_to_end_seconds).collect();
        let ret: Vec<f64> = records.iter().map(|r| r.retrieval_seconds).collect();
        Self {
            count: records.len(),
            errors: records.iter().filter(|r| r.error.is_some()).count(),
            em,
            f1,
            em_percent: em * 100.0,
            f1_percent: f1 * 100.0,
            mean_retrieval_seconds: mean(ret.iter().copied()),
            mean_end_to_end_seconds: mean(e2e.iter().copied()),
            p50_end_to_end_seconds: percentile(&e2e, 0.5),
            p95_end_to_end_seconds: percentile(&e2e, 0.95),
            p50_retrieval_seconds: percentile(&ret, 0.5),
            p95_retrieval_seconds: percentile(&ret, 0.95),
            wall_seconds,
            amortized_seconds_per_query: if records.is_empty() {
                0.0
            } else {
                wall_seconds / records.len() as f64
            },
        }
    }
}

impl EvalReport {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self).expect("report serializes");
        fs::write(path, json + "\n").map_err(|source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn summary_line(&self) -> String {
        let a = &self.aggregates;
        format!(
            "n={} EM={:.1} F1={:.1} errors={} mean_retrieval={:.4}s mean_e2e={:.3}s amortized={:.3}s bs={}",
            a.count,
            a.em_percent,
            a.f1_percent,
            a.errors,
            a.mean_retrieval_seconds,
            a.mean_end_to_end_seconds,
            a.amortized_seconds_per_query,
            self.config.batch_size
        )
    }
}

fn run_one(engine: &Engine<'_>, index: usize, ex: &QAExample, cfg: &LoopConfig) -> ExampleRecord {
    let started = Instant::now();
    let result = engine.run(&ex.question, cfg);
    let elapsed = started.elapsed().as_secs_f64();
    let mut record = ExampleRecord {
        index,
        question: ex.question.clone(),
        gold_answers: ex.answers.clone(),
        prediction: String::new(),
        em: 0.0,
        f1: 0.0,
        retrieval_seconds: 0.0,
        end_to_end_seconds: elapsed,
        iterations: 0,
        stop_reason: None,
        error: None,
    };
    match result {
        Ok(trace) => {
            record.retrieval_seconds = trace.timings.retrieve.min(elapsed);
            record.iterations = trace.iterations.len();
            record.stop_reason = Some(trace.stop_reason);
            if trace.stop_reason == StopReason::Error {
                record.error = trace.error.or_else(|| Some("loop failed".into()));
            } else {
                record.em = exact_match(&trace.final_answer, &ex.answers);
                record.f1 = f1(&trace.final_answer, &ex.answers);
            }
            record.prediction = trace.final_answer;
        }
        Err(e) => record.error = Some(e.to_string()),
    }
    record
}

/// Runs every example through `engine` on `batch_size` concurrent workers.
/// Cube ablations and the mode override are applied first; failures are
/// recorded per example and never stop the run.
pub fn run_benchmark(
    examples: &[QAExample],
    engine: &Engine<'_>,
    cfg: &BenchmarkConfig,
) -> Result<EvalReport, EvalError> {
    if cfg.batch_size == 0 {
        return Err(EvalError::Config("batch size must be at least 1".into()));
    }
    let mut loop_cfg = cfg.loop_config;
    if let Some(mode) = cfg.ablation.mode {
        loop_cfg.retrieval.mode = mode;
    }
    loop_cfg
        .validate()
        .map_err(|e| EvalError::Config(e.to_string()))?;
    let registry = engine
        .registry
        .without(cfg.ablation.disabled_cubes.iter().map(String::as_str))?;
    let engine = Engine {
        corpus: engine.corpus,
        registry: &registry,
        indexes: engine.indexes,
        chat: engine.chat,
        embed: engine.embed,
        prompts: engine.prompts.clone(),
    };

    let started = Instant::now();
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<ExampleRecord>>> = Mutex::new(vec![None; examples.len()]);
    std::thread::scope(|s| {
        for _ in 0..cfg.batch_size.min(examples.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(ex) = examples.get(i) else { break };
                let record = run_one(&engine, i, ex, &loop_cfg);
                slots.lock().unwrap()[i] = Some(record);
            });
        }
    });
    let wall = started.elapsed().as_secs_f64();
    let records: Vec<ExampleRecord> = slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every example ran"))
        .collect();

    Ok(EvalReport {
        config: ConfigSnapshot {
            k: loop_cfg.retrieval.k,
            tau: loop_cfg.retrieval.tau,
            mode: loop_cfg.retrieval.mode,
            max_iterations: loop_cfg.max_iterations,
            router_retry: loop_cfg.router_retry,
            batch_size: cfg.batch_size,
            disabled_cubes: cfg.ablation.disabled_cubes.clone(),
        },
        aggregates: Aggregates::from_records(&records, wall),
        examples: records,
    })
}
