//! OpenAI-compatible `/chat/completions` and `/embeddings` client.

use std::env;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::retry::RetryPolicy;
use super::{ChatBackend, ChatRequest, ChatResponse, EmbeddingBackend, LlmError, Usage};

pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    pub base_url: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub chat_model: String,
    pub embedding_model: String,
    pub timeout_secs: u64,
    pub max_attempts: u32,
    pub concurrency: usize,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            base_url: DEFAULT_BASE_URL.into(),
            api_key: None,
            chat_model: "gpt-4o-mini".into(),
            embedding_model: "text-embedding-3-small".into(),
            timeout_secs: 60,
            max_attempts: 4,
            concurrency: 8,
        }
    }
}

impl HttpConfig {
    /// Overlays `CUBERAG_*` environment variables on `self`. The API key
    /// falls back to `OPENAI_API_KEY`.
    pub fn with_env(mut self) -> Result<Self, LlmError> {
        fn var(name: &str) -> Option<String> {
            env::var(name).ok().filter(|v| !v.is_empty())
        }
        fn parse<T: std::str::FromStr>(name: &str) -> Result<Option<T>, LlmError> {
            var(name)
                .map(|v| {
                    v.parse()
                        .map_err(|_| LlmError::Config(format!("{name}: cannot parse {v:?}")))
                })
                .transpose()
        }
        if let Some(v) = var("CUBERAG_BASE_URL") {
            self.base_url = v;
        }
        if let Some(v) = var("CUBERAG_API_KEY").or_else(|| var("OPENAI_API_KEY")) {
            self.api_key = Some(v);
        }
        if let Some(v) = var("CUBERAG_CHAT_MODEL") {
            self.chat_model = v;
        }
        if let Some(v) = var("CUBERAG_EMBEDDING_MODEL") {
            self.embedding_model = v;
        }
        if let Some(v) = parse("CUBERAG_TIMEOUT_SECS")? {
            self.timeout_secs = v;
        }
        if let Some(v) = parse("CUBERAG_MAX_ATTEMPTS")? {
            self.max_attempts = v;
        }
        if let Some(v) = parse("CUBERAG_CONCURRENCY")? {
            self.concurrency = v;
        }
        Ok(self)
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut free = self.0.free.lock().unwrap_or_else(|e| e.into_inner());
        *free += 1;
        self.0.cv.notify_one();
    }
}

pub struct OpenAiCompatible {
    config: HttpConfig,
    retry: RetryPolicy,
    client: reqwest::blocking::Client,
    gate: Gate,
}

impl std::fmt::Debug for OpenAiCompatible {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OpenAiCompatible")
            .field("base_url", &self.config.base_url)
            .field("chat_model", &self.config.chat_model)
            .finish_non_exhaustive()
    }
}

#[derive(Deserialize)]
struct CompletionBody {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<UsageBody>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct UsageBody {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

#[derive(Deserialize)]
struct EmbeddingBody {
    data: Vec<EmbeddingRow>,
}

#[derive(Deserialize)]
struct EmbeddingRow {
    #[serde(default)]
    index: usize,
    embedding: Vec<f32>,
}

impl OpenAiCompatible {
    pub fn new(config: HttpConfig) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs.max(1)))
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        let retry = RetryPolicy {
            max_attempts: config.max_attempts.max(1),
            ..RetryPolicy::default()
        };
        Ok(Self {
            gate: Gate::new(config.concurrency),
            config,
            retry,
            client,
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    fn endpoint(&self, path: &str) -> String {
        format!("{}/{}", self.config.base_url.trim_end_matches('/'), path)
    }

    /// Request body for a chat call, exposed for inspection.
    pub fn chat_body(&self, req: &ChatRequest) -> Value {
        let mut messages = Vec::new();
        if let Some(system) = &req.system {
            messages.push(json!({"role": "system", "content": system}));
        }
        messages.push(json!({"role": "user", "content": req.user}));
        json!({
            "model": self.config.chat_model,
            "messages": messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        })
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, LlmError> {
        let url = self.endpoint(path);
        let _permit = self.gate.acquire();
        self.retry.run(
            |_| {
                let mut builder = self.client.post(&url).json(body);
                if let Some(key) = &self.config.api_key {
                    builder = builder.bearer_auth(key);
                }
                let resp = builder.send().map_err(classify_transport)?;
                let status = resp.status().as_u16();
                let text = resp.text().map_err(classify_transport)?;
                match status {
                    200..=299 => serde_json::from_str(&text)
                        .map_err(|e| LlmError::BadResponse(format!("{e}: {text}"))),
                    401 | 403 => Err(LlmError::Auth { status }),
                    _ => Err(LlmError::Status { status, body: text }),
                }
            },
            std::thread::sleep,
        )
    }
}

fn classify_transport(e: reqwest::Error) -> LlmError {
    if e.is_timeout() {
        LlmError::Timeout
    } else {
        LlmError::Transport(e.to_string())
    }
}

impl ChatBackend for OpenAiCompatible {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let value = self.post("chat/completions", &self.chat_body(req))?;
        let body: CompletionBody =
            serde_json::from_value(value).map_err(|e| LlmError::BadResponse(e.to_string()))?;
        let text = body
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::BadResponse("no message content".into()))?;
        Ok(ChatResponse {
            text,
            usage: body.usage.map(|u| Usage {
                prompt_tokens: u.prompt_tokens,
                completion_tokens: u.completion_tokens,
            }),
        })
    }
}

impl EmbeddingBackend for OpenAiCompatible {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, LlmError> {
        let body = json!({"model": self.config.embedding_model, "input": texts});
        let value = self.post("embeddings", &body)?;
        let mut body: EmbeddingBody =
            serde_json::from_value(value).map_err(|e| LlmError::BadResponse(e.to_string()))?;
        body.data.sort_by_key(|row| row.index);
        Ok(body.data.into_iter().map(|row| row.embedding).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::mpsc;
    use std::thread;

    /// Serves canned `(status, body)` responses in order and reports each
    /// request body it received.
    fn serve(responses: Vec<(u16, String)>) -> (String, mpsc::Receiver<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut content_length = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        content_length = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; content_length];
                reader.read_exact(&mut buf).unwrap();
                tx.send(String::from_utf8(buf).unwrap()).unwrap();
                let resp = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(resp.as_bytes()).unwrap();
            }
        });
        (format!("http://{addr}/v1"), rx)
    }

    fn backend(base_url: String) -> OpenAiCompatible {
        OpenAiCompatible::new(HttpConfig {
            base_url,
            api_key: Some("test-key".into()),
            ..HttpConfig::default()
        })
        .unwrap()
        .with_retry(RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_millis(1),
            max_delay: Duration::from_millis(2),
        })
    }

    const OK_CHAT: &str =
        r#"{"choices":[{"message":{"content":"hello"}}],"usage":{"prompt_tokens":7,"completion_tokens":1}}"#;

    #[test]
    fn chat_request_carries_model_messages_and_temperature() {
        let (url, rx) = serve(vec![(200, OK_CHAT.into())]);
        let b = backend(url);
        let resp = b
            .complete(&ChatRequest::new("hi there").with_system("be brief"))
            .unwrap();
        assert_eq!(resp.text, "hello");
        assert_eq!(resp.usage, Some(Usage { prompt_tokens: 7, completion_tokens: 1 }));
        let sent: Value = serde_json::from_str(&rx.recv().unwrap()).unwrap();
        assert_eq!(sent["temperature"], json!(0.0));
        assert_eq!(sent["model"], json!("gpt-4o-mini"));
        assert_eq!(sent["messages"][0]["role"], json!("system"));
        assert_eq!(sent["messages"][1]["content"], json!("hi there"));
    }

    #[test]
    fn retries_429_then_succeeds() {
        let (url, rx) = serve(vec![(429, "{}".into()), (500, "{}".into()), (200, OK_CHAT.into())]);
        let resp = backend(url).complete(&ChatRequest::new("x")).unwrap();
        assert_eq!(resp.text, "hello");
        assert_eq!(rx.try_iter().count(), 3);
    }

    #[test]
    fn does_not_retry_client_errors() {
        let (url, _rx) = serve(vec![(400, r#"{"error":"bad"}"#.into())]);
        let err = backend(url).complete(&ChatRequest::new("x")).unwrap_err();
        assert!(matches!(err, LlmError::Status { status: 400, .. }));

        let (url, _rx) = serve(vec![(401, "{}".into())]);
        let err = backend(url).complete(&ChatRequest::new("x")).unwrap_err();
        assert!(matches!(err, LlmError::Auth { status: 401 }));
    }

    #[test]
    fn embeddings_are_reordered_by_index() {
        let body = r#"{"data":[{"index":1,"embedding":[0,1]},{"index":0,"embedding":[1,0]}]}"#;
        let (url, rx) = serve(vec![(200, body.into())]);
        let out = backend(url)
            .embed(&["a".to_string(), "b".to_string()])
            .unwrap();
        assert_eq!(out, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let sent: Value = serde_json::from_str(&rx.recv().unwrap()).unwrap();
        assert_eq!(sent["input"], json!(["a", "b"]));
    }

    #[test]
    fn gate_bounds_concurrency() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        use std::sync::Arc;
        let gate = Arc::new(Gate::new(2));
        let live = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let handles: Vec<_> = (0..6)
            .map(|_| {
                let (gate, live, peak) = (gate.clone(), live.clone(), peak.clone());
                thread::spawn(move || {
                    let _p = gate.acquire();
                    let now = live.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    thread::sleep(Duration::from_millis(10));
                    live.fetch_sub(1, Ordering::SeqCst);
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
