use std::fs;
use std::path::Path;
use std::time::Duration;

use regex::Regex;
use serde::Deserialize;

use super::{sleep_if_positive, ChatBackend, ChatRequest, ChatResponse, LlmError};

/// How a rule recognizes a prompt.
#[derive(Debug, Clone)]
pub enum Matcher {
    /// Every substring must occur in the user prompt.
    AllOf(Vec<String>),
    Pattern(Regex),
}

impl Matcher {
    fn matches(&self, prompt: &str) -> bool {
        match self {
            Matcher::AllOf(parts) => parts.iter().all(|p| prompt.contains(p.as_str())),
            Matcher::Pattern(re) => re.is_match(prompt),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScriptRule {
    pub matcher: Matcher,
    pub reply: String,
}

impl ScriptRule {
    pub fn contains<I, S>(parts: I, reply: impl Into<String>) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            matcher: Matcher::AllOf(parts.into_iter().map(Into::into).collect()),
            reply: reply.into(),
        }
    }

    pub fn pattern(pattern: &str, reply: impl Into<String>) -> Result<Self, LlmError> {
        let re = Regex::new(pattern).map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(Self {
            matcher: Matcher::Pattern(re),
            reply: reply.into(),
        })
    }
}

/// Deterministic chat backend: the first rule whose matcher accepts the user
/// prompt supplies the reply. With no match and no default reply the call
/// fails with [`LlmError::NoMatch`].
///
/// `delay` simulates backend latency and is applied to every call.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    rules: Vec<ScriptRule>,
    default_reply: Option<String>,
    delay: Duration,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptFile {
    rules: Vec<RuleFile>,
    #[serde(default)]
    default_reply: Option<String>,
    #[serde(default)]
    delay_ms: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleFile {
    #[serde(default)]
    contains: Vec<String>,
    #[serde(default)]
    pattern: Option<String>,
    reply: String,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        Self {
            rules,
            ..Self::default()
        }
    }

    pub fn with_default(mut self, reply: impl Into<String>) -> Self {
        self.default_reply = Some(reply.into());
        self
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn push(&mut self, rule: ScriptRule) {
        self.rules.push(rule);
    }

    pub fn rules(&self) -> &[ScriptRule] {
        &self.rules
    }

    /// Parses the JSON rule file format:
    /// `{"rules": [{"contains": [..], "reply": ".."} | {"pattern": "..", "reply": ".."}],
    ///   "default_reply": "..", "delay_ms": 0}`.
    pub fn from_json(raw: &str) -> Result<Self, LlmError> {
        let file: ScriptFile =
            serde_json::from_str(raw).map_err(|e| LlmError::Config(format!("rule file: {e}")))?;
        let mut rules = Vec::with_capacity(file.rules.len());
        for (i, rule) in file.rules.into_iter().enumerate() {
            let parsed = match (rule.pattern, rule.contains.is_empty()) {
                (Some(p), true) => ScriptRule::pattern(&p, rule.reply)?,
                (None, false) => ScriptRule::contains(rule.contains, rule.reply),
                _ => {
                    return Err(LlmError::Config(format!(
                        "rule {i}: give exactly one of `contains` or `pattern`"
                    )))
                }
            };
            rules.push(parsed);
        }
        Ok(Self {
            rules,
            default_reply: file.default_reply,
            delay: Duration::from_millis(file.delay_ms),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path)
            .map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&raw)
    }

    fn reply_for(&self, prompt: &str) -> Option<&str> {
        self.rules
            .iter()
            .find(|r| r.matcher.matches(prompt))
            .map(|r| r.reply.as_str())
            .or(self.default_reply.as_deref())
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        sleep_if_positive(self.delay);
        match self.reply_for(&req.user) {
            Some(reply) => Ok(ChatResponse::text(reply)),
            None => Err(LlmError::NoMatch {
                prompt: truncate(&req.user, 160),
            }),
        }
    }
}

fn truncate(s: &str, max_chars: usize) -> String {
    match s.char_indices().nth(max_chars) {
        Some((idx, _)) => format!("{}...", &s[..idx]),
        None => s.to_string(),
    }
}
