//! Prompt templates.
//!
//! Templates use `{name}` placeholders. [`PromptLibrary`] holds the five
//! templates the reasoning loop renders; the ontology, tagging and
//! decomposition prompts are built by functions below because their bodies
//! are generated from cube specs.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;
use crate::schema::{CubeRegistry, CubeSpec};

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("template {template} is missing placeholder {{{placeholder}}}")]
    MissingPlaceholder {
        template: &'static str,
        placeholder: &'static str,
    },
    #[error("template {template} uses unknown placeholder {{{placeholder}}}")]
    UnknownPlaceholder {
        template: &'static str,
        placeholder: String,
    },
}

pub const INITIAL_SUBQUERY: &str = "\
You are breaking a multi-hop question into one-hop subqueries.

Original query: {original_query}

What is the first, most direct and simplest single-hop question you need to ask to begin answering it?
Ask exactly one hop. Do not use relative or attributive clauses.
A question such as \"What is the capital of the state where person A was born?\" covers two hops: ask where person A was born first.
If the query compares people or events (who is younger, who died earlier, which came first), start by asking for the relevant date.
Output only the question.";

pub const NEXT_SUBQUERY: &str = "\
Original query: {original_query}

Intermediate steps so far:
{intermediate_answers}

What is the next logical question to ask to continue solving the original query?
Ask exactly one hop and keep it simple. Do not use relative or attributive clauses.
If the steps above already answer the original query, reply with 'FINAL ANSWER' and nothing else.
For example, once the steps contain someone's father's father, a question about that person's paternal grandfather is answered: reply 'FINAL ANSWER'.
Otherwise output only the next question.";

pub const ROUTER: &str = "\
Choose the cube whose subjects the query is centered on.

{cube_descriptions}

Only output {cube_options}.

Query: {query}";

pub const SUBANSWER: &str = "\
Answer the question using the retrieved passages. Reply with one short sentence.

Retrieved passages:
{passages}

Question: {subquery}";

pub const FINAL_ANSWER: &str = "\
Using the information gathered:
{intermediate_answers}

provide a final answer to the original query: {original_query}
Output the answer alone, with no explanation.
For dates or places, output only the date or place; for a city, omit the country.
For a yes/no query, output only yes or no. For a who-query, output only the name.
For a comparison, output only the option that is correct. For nationality, output the country name.";

/// The loop's five templates. Construct through [`PromptLibrary::new`] to
/// have placeholders checked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptLibrary {
    pub initial_subquery: String,
    pub next_subquery: String,
    pub final_answer: String,
    pub router: String,
    pub subanswer: String,
}

impl Default for PromptLibrary {
    fn default() -> Self {
        Self {
            initial_subquery: INITIAL_SUBQUERY.into(),
            next_subquery: NEXT_SUBQUERY.into(),
            final_answer: FINAL_ANSWER.into(),
            router: ROUTER.into(),
            subanswer: SUBANSWER.into(),
        }
    }
}

const INITIAL_KEYS: &[&str] = &["original_query"];
const NEXT_KEYS: &[&str] = &["original_query", "intermediate_answers"];
const FINAL_KEYS: &[&str] = &["original_query", "intermediate_answers"];
const ROUTER_KEYS: &[&str] = &["cube_descriptions", "cube_options", "query"];
const SUBANSWER_KEYS: &[&str] = &["passages", "subquery"];

impl PromptLibrary {
    pub fn new(
        initial_subquery: String,
        next_subquery: String,
        final_answer: String,
        router: String,
        subanswer: String,
    ) -> Result<Self, PromptError> {
        let lib = Self {
            initial_subquery,
            next_subquery,
            final_answer,
            router,
            subanswer,
        };
        lib.validate()?;
        Ok(lib)
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        check("initial_subquery", &self.initial_subquery, INITIAL_KEYS)?;
        check("next_subquery", &self.next_subquery, NEXT_KEYS)?;
        check("final_answer", &self.final_answer, FINAL_KEYS)?;
        check("router", &self.router, ROUTER_KEYS)?;
        check("subanswer", &self.subanswer, SUBANSWER_KEYS)
    }

    pub fn initial(&self, query: &str) -> String {
        render(&self.initial_subquery, &[("original_query", query)])
    }

    pub fn next(&self, query: &str, history: &[(String, String)]) -> String {
        render(
            &self.next_subquery,
            &[
                ("original_query", query),
                ("intermediate_answers", &render_history(history)),
            ],
        )
    }

    pub fn final_answer(&self, query: &str, history: &[(String, String)]) -> String {
        render(
            &self.final_answer,
            &[
                ("original_query", query),
                ("intermediate_answers", &render_history(history)),
            ],
        )
    }

    pub fn router(&self, subquery: &str, registry: &CubeRegistry) -> String {
        let descriptions = registry
            .iter()
            .map(|cube| {
                let subject = &cube.subject;
                let mut line = format!("- {}: {}", cube.name, subject.description);
                if !subject.examples.is_empty() {
                    let _ = write!(line, " (e.g. {})", subject.examples.join(", "));
                }
                line
            })
            .collect::<Vec<_>>()
            .join("\n");
        let options = registry
            .names()
            .map(|n| format!("\"{n}\""))
            .collect::<Vec<_>>()
            .join(" or ");
        render(
            &self.router,
            &[
                ("cube_descriptions", &descriptions),
                ("cube_options", &options),
                ("query", subquery),
            ],
        )
    }

    /// Passages appear verbatim, in the order given.
    pub fn subanswer(&self, subquery: &str, passages: &[&Document]) -> String {
        render(
            &self.subanswer,
            &[("passages", &render_passages(passages)), ("subquery", subquery)],
        )
    }
}

pub const NO_CONTEXT: &str = "(no relevant passages were found)";

fn render_passages(passages: &[&Document]) -> String {
    if passages.is_empty() {
        return NO_CONTEXT.to_string();
    }
    let mut out = String::new();
    for (i, doc) in passages.iter().enumerate() {
        let _ = match &doc.title {
            Some(title) => writeln!(out, "[{}] {}: {}", i + 1, title, doc.text),
            None => writeln!(out, "[{}] {}", i + 1, doc.text),
        };
    }
    out.trim_end().to_string()
}

/// `(subquery, sub-answer)` pairs, numbered from 1.
pub fn render_history(history: &[(String, String)]) -> String {
    let mut out = String::new();
    for (i, (sq, sa)) in history.iter().enumerate() {
        let _ = writeln!(out, "Subquery {}: {}", i + 1, sq);
        let _ = writeln!(out, "Answer {}: {}", i + 1, sa);
    }
    out.trim_end().to_string()
}

/// Single-pass substitution: values containing braces are never re-expanded.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                let key = &after[..close];
                match vars.iter().find(|(k, _)| *k == key) {
                    Some((_, v)) => out.push_str(v),
                    None => {
                        out.push('{');
                        out.push_str(key);
                        out.push('}');
                    }
                }
                rest = &after[close + 1..];
            }
            None => {
                out.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

fn placeholders(template: &str) -> Vec<String> {
    let mut found = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let Some(close) = after.find('}') else { break };
        let key = &after[..close];
        if !key.is_empty() && key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            found.push(key.to_string());
        }
        rest = &after[close + 1..];
    }
    found
}

fn check(name: &'static str, template: &str, keys: &[&'static str]) -> Result<(), PromptError> {
    let used = placeholders(template);
    for key in keys {
        if !used.iter().any(|u| u == key) {
            return Err(PromptError::MissingPlaceholder {
                template: name,
                placeholder: key,
            });
        }
    }
    if let Some(unknown) = used.into_iter().find(|u| !keys.contains(&u.as_str())) {
        return Err(PromptError::UnknownPlaceholder {
            template: name,
            placeholder: unknown,
        });
    }
    Ok(())
}

/// Ontology drafting prompt over a document sample.
pub fn ontology_prompt(sample: &[Document]) -> String {
    let mut docs = String::new();
    for (i, doc) in sample.iter().enumerate() {
        let _ = writeln!(docs, "Document {}: {}", i + 1, doc.text);
    }
    format!(
        "Read the documents below and extract their ontology: the subjects they describe, \
and for each subject its attribute types and relation types.\n\n\
Answer as a two-level tree, one subject class per Level 1 line:\n\
Level 1: <subject class>\n\
Level 2: <attribute type>, <attribute type>, ...\n\
Level 2: <relation type>, <relation type>, ...\n\n\
Similar topics may share one general subject class.\n\nDocuments:\n{}",
        docs.trim_end()
    )
}

fn describe_dimensions(out: &mut String, cube: &CubeSpec) {
    for dim in cube.axes() {
        let _ = write!(out, "  - \"{}\" ({}): {}", dim.name, dim.kind, dim.description);
        if !dim.examples.is_empty() {
            let _ = write!(out, " e.g. {}", dim.examples.join(", "));
        }
        out.push('\n');
    }
}

/// One tagging prompt covering every cube's dimensions at once.
pub fn tagging_prompt(doc: &Document, cubes: &[&CubeSpec]) -> String {
    let mut dims = String::new();
    for cube in cubes {
        let _ = writeln!(dims, "Cube {}:", cube.name);
        describe_dimensions(&mut dims, cube);
    }
    let body = match &doc.title {
        Some(t) => format!("{t}: {}", doc.text),
        None => doc.text.clone(),
    };
    format!(
        "Extract dimension values from the document for every cube below.\n\
Reply with a JSON object mapping cube name to an object mapping dimension name to a list of \
short values copied from the document. Leave out dimensions the document does not mention, \
and leave out cubes that do not apply.\n\n{}\nDocument: {}",
        dims.trim_end(),
        body
    )
}

/// Query decomposition prompt against one cube.
pub fn decomposition_prompt(query: &str, cube: &CubeSpec) -> String {
    let mut dims = String::new();
    describe_dimensions(&mut dims, cube);
    format!(
        "Decompose the query into entities and phrases aligned with the dimensions of cube {}.\n\
Dimensions:\n{}\n\
Reply with a JSON object mapping dimension name to a list of values. Leave out dimensions the \
query does not mention. Put entities that fit no dimension under \"unassigned\".\n\n\
Query: {}",
        cube.name,
        dims.trim_end(),
        query
    )
}

/// First JSON object in a model reply, tolerating code fences and prose
/// around it.
pub fn extract_json_object(reply: &str) -> Option<serde_json::Map<String, serde_json::Value>> {
    let start = reply.find('{')?;
    let end = reply.rfind('}')?;
    if end < start {
        return None;
    }
    match serde_json::from_str(&reply[start..=end]) {
        Ok(serde_json::Value::Object(map)) => Some(map),
        _ => None,
    }
}
