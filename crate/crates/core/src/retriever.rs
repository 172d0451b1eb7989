//! Query decomposition and cube retrieval.
//!
//! A query is split into entities placed on cube axes. Documents score one
//! point per entity found among their values on that axis (entities the
//! model could not place match any axis). Entities without an exact hit may
//! instead contribute the best cosine between their embedding and the
//! document's value embeddings, when it reaches the threshold `tau`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::index::{reply_values, CubeIndex, DimensionTags, ValueEmbeddings};
use crate::llm::{self, ChatBackend, ChatRequest, EmbeddingBackend, LlmError};
use crate::normalize::normalize_value;
use crate::prompts::{decomposition_prompt, extract_json_object};
use crate::schema::CubeSpec;

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_TAU: f64 = 0.8;

#[derive(Debug, Error)]
pub enum RetrieveError {
    #[error("invalid retrieval config: {0}")]
    InvalidConfig(String),
}

/// Query entities per cube axis.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryDecomposition {
    pub entities: BTreeMap<String, Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unassigned: Vec<String>,
    /// The model reply, kept when it could not be parsed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_reply: Option<String>,
}

impl QueryDecomposition {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a normalized entity to `dimension`, ignoring blanks and repeats.
    pub fn assign(&mut self, dimension: &str, raw: &str) -> &mut Self {
        let e = normalize_value(raw);
        if !e.is_empty() {
            let list = self.entities.entry(dimension.to_string()).or_default();
            if !list.contains(&e) {
                list.push(e);
            }
        }
        self
    }

    pub fn unassign(&mut self, raw: &str) -> &mut Self {
        let e = normalize_value(raw);
        if !e.is_empty() && !self.unassigned.contains(&e) {
            self.unassigned.push(e);
        }
        self
    }

    pub fn with(mut self, dimension: &str, raw: &str) -> Self {
        self.assign(dimension, raw);
        self
    }

    pub fn with_unassigned(mut self, raw: &str) -> Self {
        self.unassign(raw);
        self
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty() && self.unassigned.is_empty()
    }

    /// Every query entity with its axis (`None` for unassigned).
    pub fn query_entities(&self) -> impl Iterator<Item = (Option<&str>, &str)> {
        self.entities
            .iter()
            .flat_map(|(d, es)| es.iter().map(move |e| (Some(d.as_str()), e.as_str())))
            .chain(self.unassigned.iter().map(|e| (None, e.as_str())))
    }

    pub fn len(&self) -> usize {
        self.query_entities().count()
    }

    fn distinct_texts(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.query_entities().map(|(_, e)| e).collect();
        set.into_iter().map(str::to_string).collect()
    }
}

/// Parses a decomposition reply. Keys naming no axis of `spec` are kept as
/// unassigned entities rather than lost. `None` when the reply holds no JSON
/// object.
pub fn parse_decomposition(reply: &str, spec: &CubeSpec) -> Option<QueryDecomposition> {
    let obj = extract_json_object(reply)?;
    let mut d = QueryDecomposition::new();
    for (key, value) in &obj {
        let values = reply_values(value).unwrap_or_default();
        let axis = spec.resolve_axis(key).map(|a| a.name.clone());
        for v in values {
            match &axis {
                Some(axis) => d.assign(axis, &v),
                None => d.unassign(&v),
            };
        }
    }
    Some(d)
}

/// Asks the model to place the query's entities on `spec`'s axes.
pub fn decompose_query(
    query: &str,
    spec: &CubeSpec,
    chat: &dyn ChatBackend,
) -> Result<QueryDecomposition, LlmError> {
    if query.trim().is_empty() {
        return Ok(QueryDecomposition::new());
    }
    let reply = llm::complete(chat, &ChatRequest::new(decomposition_prompt(query, spec)))?;
    Ok(parse_decomposition(&reply.text, spec).unwrap_or_else(|| {
        tracing::warn!(cube = %spec.name, "unparseable decomposition reply");
        QueryDecomposition {
            raw_reply: Some(reply.text),
            ..QueryDecomposition::new()
        }
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    ExactOnly,
    SemanticOnly,
    #[default]
    Hybrid,
}

impl MatchMode {
    fn exact(self) -> bool {
        self != MatchMode::SemanticOnly
    }

    fn semantic(self) -> bool {
        self != MatchMode::ExactOnly
    }
}

impl fmt::Display for MatchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatchMode::ExactOnly => "exact_only",
            MatchMode::SemanticOnly => "semantic_only",
            MatchMode::Hybrid => "hybrid",
        })
    }
}

impl FromStr for MatchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "exact_only" | "exact" => Ok(MatchMode::ExactOnly),
            "semantic_only" | "semantic" => Ok(MatchMode::SemanticOnly),
            "hybrid" => Ok(MatchMode::Hybrid),
            other => Err(format!("unknown match mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub k: usize,
    /// Minimum cosine for a semantic match. Values above 1 switch semantic
    /// matching off.
    pub tau: f64,
    pub mode: MatchMode,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            tau: DEFAULT_TAU,
            mode: MatchMode::Hybrid,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), RetrieveError> {
        if self.k == 0 {
            return Err(RetrieveError::InvalidConfig("k must be at least 1".into()));
        }
        if !self.tau.is_finite() || self.tau < 0.0 {
            return Err(RetrieveError::InvalidConfig(format!(
                "tau must be a non-negative number, got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchKind {
    Exact,
    Semantic,
}

/// One query entity matched against one document value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub dimension: String,
    pub entity: String,
    pub value: String,
    pub kind: MatchKind,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub cube: String,
    pub doc_id: String,
    pub score: f64,
    pub matches: Vec<Match>,
}

impl RetrievalHit {
    /// Score recomputed from the match list.
    pub fn match_total(&self) -> f64 {
        self.matches.iter().map(|m| m.similarity).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalOutcome {
    pub hits: Vec<RetrievalHit>,
    pub warnings: Vec<String>,
}

fn exact_match(tags: &DimensionTags, dim: Option<&str>, entity: &str) -> Option<Match> {
    let dim = match dim {
        Some(d) => tags.contains(d, entity).then_some(d)?,
        None => tags.dimension_of(entity)?,
    };
    Some(Match {
        dimension: dim.to_string(),
        entity: entity.to_string(),
        value: entity.to_string(),
        kind: MatchKind::Exact,
        similarity: 1.0,
    })
}

/// Exact matches of the query entities against one document's tags.
pub fn exact_matches(tags: &DimensionTags, decomp: &QueryDecomposition) -> Vec<Match> {
    decomp
        .query_entities()
        .filter_map(|(dim, e)| exact_match(tags, dim, e))
        .collect()
}

/// Number of query entities found among the document's values.
pub fn exact_score(tags: &DimensionTags, decomp: &QueryDecomposition) -> usize {
    exact_matches(tags, decomp).len()
}

/// Unit embeddings of query entity strings.
pub type EntityVectors = HashMap<String, Vec<f32>>;

/// Embeds every distinct query entity in one call. On failure the map is
/// empty and the error is returned alongside, so scoring degrades to exact.
pub fn embed_entities(
    decomp: &QueryDecomposition,
    embed: &dyn EmbeddingBackend,
) -> (EntityVectors, Option<LlmError>) {
    let texts = decomp.distinct_texts();
    if texts.is_empty() {
        return (EntityVectors::new(), None);
    }
    match llm::embed(embed, &texts) {
        Ok(vectors) => (texts.into_iter().zip(vectors).collect(), None),
        Err(e) => (EntityVectors::new(), Some(e)),
    }
}

/// Best cosine between the entity and the document's values in scope
/// (the entity's axis, or every axis when unassigned), if it reaches `tau`.
fn semantic_match(
    tags: &DimensionTags,
    dim: Option<&str>,
    entity: &str,
    values: &ValueEmbeddings,
    entity_vectors: &EntityVectors,
    tau: f64,
) -> Option<Match> {
    let ev = entity_vectors.get(entity)?;
    let scoped: Box<dyn Iterator<Item = (&str, &str)>> = match dim {
        Some(d) => Box::new(tags.get(d).into_iter().flatten().map(move |v| (d, v.as_str()))),
        None => Box::new(tags.pairs()),
    };
    let mut best: Option<(&str, &str, f64)> = None;
    for (d, v) in scoped {
        let Some(vv) = values.get(v) else { continue };
        if vv.len() != ev.len() {
            continue;
        }
        let sim = llm::cosine(ev, vv);
        if best.is_none_or(|b| sim > b.2) {
            best = Some((d, v, sim));
        }
    }
    let (d, v, sim) = best?;
    (sim >= tau && sim > 0.0).then(|| Match {
        dimension: d.to_string(),
        entity: entity.to_string(),
        value: v.to_string(),
        kind: MatchKind::Semantic,
        similarity: sim,
    })
}

/// Sum of semantic contributions for entities without an exact match.
pub fn semantic_score(
    tags: &DimensionTags,
    decomp: &QueryDecomposition,
    values: &ValueEmbeddings,
    entity_vectors: &EntityVectors,
    tau: f64,
) -> f64 {
    decomp
        .query_entities()
        .filter(|&(dim, e)| exact_match(tags, dim, e).is_none())
        .filter_map(|(dim, e)| semantic_match(tags, dim, e, values, entity_vectors, tau))
        .map(|m| m.similarity)
        .sum()
}

/// All matches for one document under `mode`. Exact hits are never also
/// scored semantically.
pub fn score_document(
    tags: &DimensionTags,
    decomp: &QueryDecomposition,
    mode: MatchMode,
    tau: f64,
    values: Option<&ValueEmbeddings>,
    entity_vectors: &EntityVectors,
) -> Vec<Match> {
    let mut matches = Vec::new();
    for (dim, e) in decomp.query_entities() {
        if mode.exact() {
            if let Some(m) = exact_match(tags, dim, e) {
                matches.push(m);
                continue;
            }
        }
        if let (true, Some(values)) = (mode.semantic(), values) {
            matches.extend(semantic_match(tags, dim, e, values, entity_vectors, tau));
        }
    }
    matches
}

fn candidates(
    index: &CubeIndex,
    decomp: &QueryDecomposition,
    cfg: &RetrievalConfig,
    entity_vectors: &EntityVectors,
) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut add_cell = |dim: Option<&str>, value: &str| match dim {
        Some(d) => {
            if let Some(ids) = index.cell(d, value) {
                out.extend(ids.iter().cloned());
            }
        }
        None => {
            for (_, values) in index.postings() {
                if let Some(ids) = values.get(value) {
                    out.extend(ids.iter().cloned());
                }
            }
        }
    };
    if cfg.mode.exact() {
        for (dim, e) in decomp.query_entities() {
            add_cell(dim, e);
        }
    }
    if cfg.mode.semantic() && cfg.tau <= 1.0 {
        if let Some(values) = index.embeddings() {
            let entities: Vec<(Option<&str>, &[f32])> = decomp
                .query_entities()
                .filter_map(|(d, e)| entity_vectors.get(e).map(|v| (d, v.as_slice())))
                .collect();
            for (value, vv) in values.iter() {
                for &(dim, ev) in &entities {
                    if ev.len() == vv.len() {
                        let sim = llm::cosine(ev, vv);
                        if sim >= cfg.tau && sim > 0.0 {
                            add_cell(dim, value);
                        }
                    }
                }
            }
        }
    }
    out
}

/// Orders hits by score descending then doc id ascending.
pub fn rank(hits: &mut [RetrievalHit]) {
    hits.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.doc_id.cmp(&b.doc_id))
    });
}

/// Top-`k` documents of one cube for `decomp`.
pub fn retrieve(
    index: &CubeIndex,
    decomp: &QueryDecomposition,
    cfg: &RetrievalConfig,
    embed: Option<&dyn EmbeddingBackend>,
) -> Result<RetrievalOutcome, RetrieveError> {
    cfg.validate()?;
    let mut outcome = RetrievalOutcome::default();
    if decomp.is_empty() {
        return Ok(outcome);
    }
    let mut entity_vectors = EntityVectors::new();
    if cfg.mode.semantic() && cfg.tau <= 1.0 {
        match (index.embeddings(), embed) {
            (Some(_), Some(embed)) => {
                let (vectors, err) = embed_entities(decomp, embed);
                entity_vectors = vectors;
                if let Some(err) = err {
                    outcome
                        .warnings
                        .push(format!("{}: entity embedding failed: {err}", index.name()));
                }
            }
            (None, _) if index.assignment_count() > 0 => outcome
                .warnings
                .push(format!("{}: index has no value embeddings", index.name())),
            (Some(_), None) => outcome
                .warnings
                .push(format!("{}: no embedding backend for semantic matching", index.name())),
            _ => {}
        }
    }
    let values = index.embeddings();
    let mut hits: Vec<RetrievalHit> = candidates(index, decomp, cfg, &entity_vectors)
        .into_iter()
        .filter_map(|doc_id| {
            let tags = index.doc_tags(&doc_id)?;
            let matches = score_document(tags, decomp, cfg.mode, cfg.tau, values, &entity_vectors);
            let score: f64 = matches.iter().map(|m| m.similarity).sum();
            (score > 0.0).then(|| RetrievalHit {
                cube: index.name().to_string(),
                doc_id,
                score,
                matches,
            })
        })
        .collect();
    rank(&mut hits);
    hits.truncate(cfg.k);
    outcome.hits = hits;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{FixtureEmbedder, ScriptRule, ScriptedBackend};
    use crate::schema::DimensionSpec;

    fn spec() -> CubeSpec {
        CubeSpec::from_dimensions(
            "CULTURAL_PRODUCT",
            vec![
                DimensionSpec::subject("name"),
                DimensionSpec::attribute("genre"),
                DimensionSpec::relation("relation-to-person"),
            ],
        )
        .unwrap()
    }

    fn doreon_tags() -> DimensionTags {
        DimensionTags::from_pairs([
            ("name", "the heart of doreon"),
            ("genre", "film"),
            ("genre", "romantic drama film"),
            ("relation-to-person", "produced by"),
            ("relation-to-person", "directed"),
        ])
    }

    #[test]
    fn exact_score_counts_scoped_hits() {
        let d = QueryDecomposition::new()
            .with("name", "The Heart Of Doreon")
            .with("genre", "film")
            .with("relation-to-person", "directed");
        assert_eq!(exact_score(&doreon_tags(), &d), 3);
        assert_eq!(exact_score(&doreon_tags(), &QueryDecomposition::new()), 0);
        let wrong_axis = QueryDecomposition::new().with("genre", "the heart of doreon");
        assert_eq!(exact_score(&doreon_tags(), &wrong_axis), 0);
        let loose = QueryDecomposition::new().with_unassigned("the heart of doreon");
        assert_eq!(exact_score(&doreon_tags(), &loose), 1);
    }

    #[test]
    fn semantic_takes_best_cosine_above_tau() {
        let tags = DimensionTags::from_pairs([("genre", "v")]);
        let mut values = ValueEmbeddings::new(2);
        values.insert("v".into(), &[1.0, 1.0]).unwrap();
        let d = QueryDecomposition::new().with("genre", "e");
        let vectors: EntityVectors = [("e".to_string(), vec![1.0f32, 0.0])].into();
        let half = std::f64::consts::FRAC_1_SQRT_2;
        let got = semantic_score(&tags, &d, &values, &vectors, half - 1e-6);
        assert!((got - half).abs() < 1e-6);
        assert_eq!(semantic_score(&tags, &d, &values, &vectors, 0.71), 0.0);
        let ortho: EntityVectors = [("e".to_string(), vec![1.0f32, -1.0])].into();
        assert_eq!(semantic_score(&tags, &d, &values, &ortho, 0.0), 0.0);
    }

    #[test]
    fn exact_hits_are_not_scored_twice() {
        let tags = DimensionTags::from_pairs([("genre", "film")]);
        let embedder = FixtureEmbedder::hashed(8);
        let mut values = ValueEmbeddings::new(8);
        values.insert("film".into(), &embedder.vector("film")).unwrap();
        let d = QueryDecomposition::new().with("genre", "film");
        let (vectors, _) = embed_entities(&d, &embedder);
        assert_eq!(semantic_score(&tags, &d, &values, &vectors, 0.5), 0.0);
        let m = score_document(&tags, &d, MatchMode::Hybrid, 0.5, Some(&values), &vectors);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].kind, MatchKind::Exact);
        let m = score_document(&tags, &d, MatchMode::SemanticOnly, 0.5, Some(&values), &vectors);
        assert_eq!(m[0].kind, MatchKind::Semantic);
        assert!((m[0].similarity - 1.0).abs() < 1e-6);
    }

    fn index() -> CubeIndex {
        let mut idx = CubeIndex::new(spec());
        idx.insert_document("b", DimensionTags::from_pairs([("genre", "film"), ("name", "x")]))
            .unwrap();
        idx.insert_document("a", DimensionTags::from_pairs([("genre", "film"), ("name", "x")]))
            .unwrap();
        idx.insert_document("c", DimensionTags::from_pairs([("genre", "film")])).unwrap();
        idx
    }

    #[test]
    fn ties_break_by_doc_id() {
        let d = QueryDecomposition::new().with("genre", "film").with("name", "x");
        let out = retrieve(&index(), &d, &RetrievalConfig::default(), None).unwrap();
        let ids: Vec<_> = out.hits.iter().map(|h| h.doc_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(out.hits[0].score, 2.0);
        assert!(out.hits.iter().all(|h| h.score == h.match_total()));
    }

    #[test]
    fn exact_only_without_matches_is_empty() {
        let d = QueryDecomposition::new().with("genre", "novel");
        let cfg = RetrievalConfig {
            mode: MatchMode::ExactOnly,
            ..Default::default()
        };
        assert!(retrieve(&index(), &d, &cfg, None).unwrap().hits.is_empty());
        assert!(retrieve(&index(), &QueryDecomposition::new(), &cfg, None).unwrap().hits.is_empty());
    }

    #[test]
    fn k_truncates_and_config_is_checked() {
        let d = QueryDecomposition::new().with("genre", "film");
        let cfg = RetrievalConfig { k: 1, ..Default::default() };
        assert_eq!(retrieve(&index(), &d, &cfg, None).unwrap().hits.len(), 1);
        let bad = RetrievalConfig { k: 0, ..Default::default() };
        assert!(retrieve(&index(), &d, &bad, None).is_err());
        let bad = RetrievalConfig { tau: -0.1, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn semantic_candidates_come_from_the_value_table() {
        let embedder = FixtureEmbedder::hashed(4)
            .with_vector("robert north bradbury", vec![1.0, 0.2, 0.0, 0.0])
            .unwrap()
            .with_vector("robert n. bradbury", vec![1.0, 0.0, 0.0, 0.0])
            .unwrap();
        let mut idx = CubeIndex::new(spec());
        idx.insert_document("brad", DimensionTags::from_pairs([("name", "Robert N. Bradbury")]))
            .unwrap();
        idx.embed_missing_values(&embedder).unwrap();
        let d = QueryDecomposition::new().with("name", "Robert North Bradbury");
        let out = retrieve(&idx, &d, &RetrievalConfig::default(), Some(&embedder)).unwrap();
        assert_eq!(out.hits.len(), 1);
        assert_eq!(out.hits[0].matches[0].kind, MatchKind::Semantic);
        let exact = RetrievalConfig { mode: MatchMode::ExactOnly, ..Default::default() };
        assert!(retrieve(&idx, &d, &exact, Some(&embedder)).unwrap().hits.is_empty());
        let unreachable = RetrievalConfig { tau: 1.5, ..Default::default() };
        assert!(retrieve(&idx, &d, &unreachable, Some(&embedder)).unwrap().hits.is_empty());
    }

    #[test]
    fn decomposition_parsing() {
        let chat = ScriptedBackend::new(vec![ScriptRule::contains(
            ["El Tonto"],
            r#"{"name": ["El Tonto"], "Genre": "film", "relation-to-person": ["directed"], "director": ["someone"]}"#,
        )]);
        let d = decompose_query("who directed El Tonto?", &spec(), &chat).unwrap();
        assert_eq!(d.entities["name"], ["el tonto"]);
        assert_eq!(d.entities["genre"], ["film"]);
        assert_eq!(d.entities["relation-to-person"], ["directed"]);
        assert_eq!(d.unassigned, ["someone"]);
        assert!(decompose_query("  ", &spec(), &chat).unwrap().is_empty());

        let chat = ScriptedBackend::new(vec![]).with_default("no idea");
        let d = decompose_query("anything", &spec(), &chat).unwrap();
        assert!(d.is_empty());
        assert_eq!(d.raw_reply.as_deref(), Some("no idea"));
    }

    #[test]
    fn modes_parse() {
        assert_eq!("exact-only".parse::<MatchMode>().unwrap(), MatchMode::ExactOnly);
        assert_eq!("hybrid".parse::<MatchMode>().unwrap().to_string(), "hybrid");
        assert!("fuzzy".parse::<MatchMode>().is_err());
    }
}
