use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;

use super::{ChatBackend, EmbeddingBackend, FixtureEmbedder, HttpConfig, LlmError, OpenAiCompatible, ScriptedBackend};

/// Backend selection file.
///
/// ```json
/// {
///   "chat": {"kind": "scripted", "rules": "chat_rules.json"},
///   "embeddings": {"kind": "fixture", "table": "embeddings.json"}
/// }
/// ```
///
/// `kind: "openai"` accepts the [`HttpConfig`] fields, overlaid with the
/// `CUBERAG_*` environment variables. Relative paths resolve against the
/// config file's directory.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub chat: ChatConfig,
    #[serde(default)]
    pub embeddings: Option<EmbeddingConfig>,
    #[serde(skip)]
    base_dir: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ChatConfig {
    Scripted { rules: PathBuf },
    Openai(#[serde(default)] HttpConfig),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EmbeddingConfig {
    Fixture { table: PathBuf },
    Hashed { dim: usize },
    Openai(#[serde(default)] HttpConfig),
}

pub struct Backends {
    pub chat: Arc<dyn ChatBackend>,
    pub embed: Option<Arc<dyn EmbeddingBackend>>,
}

impl BackendConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path)
            .map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: BackendConfig = serde_json::from_str(&raw)
            .map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// Remote chat and embeddings configured purely from the environment.
    pub fn from_env() -> Self {
        Self {
            chat: ChatConfig::Openai(HttpConfig::default()),
            embeddings: Some(EmbeddingConfig::Openai(HttpConfig::default())),
            base_dir: PathBuf::new(),
        }
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn build(&self) -> Result<Backends, LlmError> {
        let chat: Arc<dyn ChatBackend> = match &self.chat {
            ChatConfig::Scripted { rules } => Arc::new(ScriptedBackend::load(self.resolve(rules))?),
            ChatConfig::Openai(http) => Arc::new(OpenAiCompatible::new(http.clone().with_env()?)?),
        };
        let embed: Option<Arc<dyn EmbeddingBackend>> = match &self.embeddings {
            None => None,
            Some(EmbeddingConfig::Fixture { table }) => {
                Some(Arc::new(FixtureEmbedder::load(self.resolve(table))?))
            }
            Some(EmbeddingConfig::Hashed { dim }) => {
                if *dim == 0 {
                    return Err(LlmError::Config("hashed embedder needs dim > 0".into()));
                }
                Some(Arc::new(FixtureEmbedder::hashed(*dim)))
            }
            Some(EmbeddingConfig::Openai(http)) => {
                Some(Arc::new(OpenAiCompatible::new(http.clone().with_env()?)?))
            }
        };
        Ok(Backends { chat, embed })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{complete, ChatRequest};

    #[test]
    fn resolves_relative_paths_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("rules.json"),
            r#"{"rules":[{"contains":["ping"],"reply":"pong"}]}"#,
        )
        .unwrap();
        fs::write(
            dir.path().join("backend.json"),
            r#"{"chat":{"kind":"scripted","rules":"rules.json"},"embeddings":{"kind":"hashed","dim":8}}"#,
        )
        .unwrap();
        let backends = BackendConfig::load(dir.path().join("backend.json"))
            .unwrap()
            .build()
            .unwrap();
        let reply = complete(backends.chat.as_ref(), &ChatRequest::new("ping")).unwrap();
        assert_eq!(reply.text, "pong");
        let v = backends.embed.unwrap().embed(&["x".into()]).unwrap();
        assert_eq!(v[0].len(), 8);
    }

    #[test]
    fn openai_kind_accepts_partial_fields() {
        let cfg: BackendConfig = serde_json::from_str(
            r#"{"chat":{"kind":"openai","base_url":"http://localhost:8000/v1","chat_model":"llama"}}"#,
        )
        .unwrap();
        match cfg.chat {
            ChatConfig::Openai(http) => {
                assert_eq!(http.chat_model, "llama");
                assert_eq!(http.max_attempts, HttpConfig::default().max_attempts);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
