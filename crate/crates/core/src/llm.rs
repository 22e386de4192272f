//! Language model access with live, record and replay transports.
//!
//! Every agent step is a single-shot prompt. The live transport posts an
//! OpenAI-style chat-completion request; record does the same and appends
//! the exchange to a cassette; replay answers from the cassette without
//! touching the network.
//!
//! # Cassette format
//!
//! UTF-8 text. The file starts with the line `# geodata cassette v1`, then
//! zero or more exchanges:
//!
//! ```text
//! @@@ exchange
//! algorithm: sha256
//! digest: <64 hex chars>
//! sequence: <n>
//! latency: <seconds>
//! prompt-bytes: <N>
//! reply-bytes: <M>
//! @@@ prompt
//! <exactly N bytes of prompt text>
//! @@@ reply
//! <exactly M bytes of reply text>
//! @@@ end
//! ```
//!
//! Each sentinel line is preceded by a newline that is not part of the
//! payload. Byte counts make the payloads opaque to the sentinels.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompting::RenderedPrompt;
use crate::secrets::Secret;

pub const DIGEST_ALGORITHM: &str = "sha256";
const CASSETTE_HEADER: &str = "# geodata cassette v1\n";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LlmError {
    #[error("transport error: {0}")]
    TransportError(String),
    #[error("model returned an empty reply")]
    EmptyReply,
    #[error("no recorded reply for prompt digest {0}")]
    CassetteMiss(String),
    #[error("rate limited (retry after {retry_after:?} s)")]
    RateLimited { retry_after: Option<u64> },
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("cassette {path}: {reason}")]
    Cassette { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TransportMode {
    Live,
    Record,
    Replay,
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub endpoint: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_reply_tokens: u32,
    pub timeout: Duration,
    pub transport: TransportMode,
    pub cassette_path: Option<PathBuf>,
    pub api_key: Option<Secret>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model_name: "gpt-4o".into(),
            temperature: 0.0,
            max_reply_tokens: 4096,
            timeout: Duration::from_secs(300),
            transport: TransportMode::Live,
            cassette_path: None,
            api_key: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(LlmError::Config("temperature must be >= 0".into()));
        }
        if self.max_reply_tokens == 0 {
            return Err(LlmError::Config("max_reply_tokens must be positive".into()));
        }
        if self.transport != TransportMode::Live && self.cassette_path.is_none() {
            return Err(LlmError::Config(
                "record and replay transports need a cassette path".into(),
            ));
        }
        if self.transport != TransportMode::Replay {
            url::Url::parse(&self.endpoint)
                .map_err(|e| LlmError::Config(format!("bad endpoint: {e}")))?;
        }
        Ok(())
    }
}

/// Hex SHA-256 over the prompt with line endings normalized to LF and
/// trailing whitespace trimmed from every line.
pub fn canonical_digest(text: &str) -> String {
    let normalized = text.replace("\r\n", "\n").replace('\r', "\n");
    let mut hasher = Sha256::new();
    for (i, line) in normalized.split('\n').enumerate() {
        if i > 0 {
            hasher.update(b"\n");
        }
        hasher.update(line.trim_end().as_bytes());
    }
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatExchange {
    pub prompt_digest: String,
    pub prompt_text: String,
    pub reply_text: String,
    pub latency: f64,
    pub sequence_index: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Cassette {
    pub exchanges: Vec<ChatExchange>,
}

impl Cassette {
    pub fn push(&mut self, prompt: &str, reply: &str, latency: f64) {
        self.exchanges.push(ChatExchange {
            prompt_digest: canonical_digest(prompt),
            prompt_text: prompt.to_string(),
            reply_text: reply.to_string(),
            latency,
            sequence_index: self.exchanges.len(),
        });
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(CASSETTE_HEADER);
        for ex in &self.exchanges {
            out.push_str("@@@ exchange\n");
            out.push_str(&format!("algorithm: {DIGEST_ALGORITHM}\n"));
            out.push_str(&format!("digest: {}\n", ex.prompt_digest));
            out.push_str(&format!("sequence: {}\n", ex.sequence_index));
            out.push_str(&format!("latency: {:.3}\n", ex.latency));
            out.push_str(&format!("prompt-bytes: {}\n", ex.prompt_text.len()));
            out.push_str(&format!("reply-bytes: {}\n", ex.reply_text.len()));
            out.push_str("@@@ prompt\n");
            out.push_str(&ex.prompt_text);
            out.push_str("\n@@@ reply\n");
            out.push_str(&ex.reply_text);
            out.push_str("\n@@@ end\n");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut rest = text
            .strip_prefix(CASSETTE_HEADER)
            .ok_or("missing cassette header line")?;
        let mut exchanges = Vec::new();
        while !rest.trim().is_empty() {
            rest = rest.strip_prefix("@@@ exchange\n").ok_or_else(|| {
                format!("expected exchange sentinel at exchange {}", exchanges.len())
            })?;
            let mut fields = HashMap::new();
            loop {
                let (line, tail) = rest.split_once('\n').ok_or("truncated exchange header")?;
                rest = tail;
                if line == "@@@ prompt" {
                    break;
                }
                let (k, v) = line
                    .split_once(": ")
                    .ok_or_else(|| format!("bad header line {line:?}"))?;
                fields.insert(k.to_string(), v.to_string());
            }
            let field = |k: &str| fields.get(k).ok_or_else(|| format!("missing {k}"));
            let count = |k: &str| -> Result<usize, String> {
                field(k)?.parse().map_err(|_| format!("bad {k}"))
            };
            if field("algorithm")? != DIGEST_ALGORITHM {
                return Err(format!(
                    "unsupported digest algorithm {}",
                    field("algorithm")?
                ));
            }
            let prompt_len = count("prompt-bytes")?;
            let reply_len = count("reply-bytes")?;
            let take = |s: &'_ str, n: usize, sentinel: &str| -> Result<(String, usize), String> {
                let payload = s.get(..n).ok_or("payload shorter than declared")?;
                if !s[n..].starts_with(sentinel) {
                    return Err(format!("expected {sentinel:?} after payload"));
                }
                Ok((payload.to_string(), n + sentinel.len()))
            };
            let (prompt_text, used) = take(rest, prompt_len, "\n@@@ reply\n")?;
            rest = &rest[used..];
            let (reply_text, used) = take(rest, reply_len, "\n@@@ end\n")?;
            rest = &rest[used..];
            let digest = field("digest")?.clone();
            if digest != canonical_digest(&prompt_text) {
                return Err(format!("digest mismatch in exchange {}", exchanges.len()));
            }
            exchanges.push(ChatExchange {
                prompt_digest: digest,
                prompt_text,
                reply_text,
                latency: field("latency")?.parse().map_err(|_| "bad latency")?,
                sequence_index: count("sequence")?,
            });
        }
        Ok(Self { exchanges })
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path).map_err(|e| LlmError::Cassette {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::parse(&text).map_err(|reason| LlmError::Cassette {
            path: path.display().to_string(),
            reason,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), LlmError> {
        std::fs::write(path, self.to_text()).map_err(|e| LlmError::Cassette {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }
}

/// Anything that turns a prompt into reply text.
pub trait ChatModel {
    fn complete(&self, prompt: &RenderedPrompt) -> Result<String, LlmError>;
}

struct ReplayState {
    by_digest: HashMap<String, Vec<usize>>,
    consumed: HashMap<String, usize>,
}

enum Backend {
    Live(reqwest::blocking::Client),
    Record {
        http: reqwest::blocking::Client,
        cassette: Mutex<Cassette>,
    },
    Replay {
        cassette: Cassette,
        state: Mutex<ReplayState>,
    },
}

pub struct LlmClient {
    config: ModelConfig,
    backend: Backend,
}

impl LlmClient {
    pub fn new(config: ModelConfig) -> Result<Self, LlmError> {
        config.validate()?;
        let http = || {
            reqwest::blocking::Client::builder()
                .timeout(config.timeout)
                .build()
                .map_err(|e| LlmError::TransportError(e.to_string()))
        };
        let backend = match config.transport {
            TransportMode::Live => Backend::Live(http()?),
            TransportMode::Record => {
                let path = config.cassette_path.as_deref().expect("validated");
                let cassette = if path.exists() {
                    Cassette::load(path)?
                } else {
                    Cassette::default()
                };
                Backend::Record {
                    http: http()?,
                    cassette: Mutex::new(cassette),
                }
            }
            TransportMode::Replay => {
                let path = config.cassette_path.as_deref().expect("validated");
                let cassette = Cassette::load(path)?;
                let mut order: Vec<usize> = (0..cassette.exchanges.len()).collect();
                order.sort_by_key(|&i| cassette.exchanges[i].sequence_index);
                let mut by_digest: HashMap<String, Vec<usize>> = HashMap::new();
                for idx in order {
                    by_digest
                        .entry(cassette.exchanges[idx].prompt_digest.clone())
                        .or_default()
                        .push(idx);
                }
                Backend::Replay {
                    cassette,
                    state: Mutex::new(ReplayState {
                        by_digest,
                        consumed: HashMap::new(),
                    }),
                }
            }
        };
        Ok(Self { config, backend })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn post(&self, http: &reqwest::blocking::Client, prompt: &str) -> Result<String, LlmError> {
        let body = serde_json::json!({
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_reply_tokens,
        });
        let mut req = http.post(&self.config.endpoint).json(&body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key.expose());
        }
        let resp = req
            .send()
            .map_err(|e| LlmError::TransportError(e.without_url().to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 {
            let retry_after = resp
                .headers()
                .get(reqwest::header::RETRY_AFTER)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse().ok());
            return Err(LlmError::RateLimited { retry_after });
        }
        if !status.is_success() {
            return Err(LlmError::TransportError(format!(
                "HTTP {}",
                status.as_u16()
            )));
        }
        let value: serde_json::Value = resp
            .json()
            .map_err(|e| LlmError::TransportError(format!("bad response body: {e}")))?;
        let content = value
            .pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .unwrap_or_default();
        if content.trim().is_empty() {
            return Err(LlmError::EmptyReply);
        }
        Ok(content.to_string())
    }
}

impl ChatModel for LlmClient {
    fn complete(&self, prompt: &RenderedPrompt) -> Result<String, LlmError> {
        let text = prompt.full_text();
        if text.trim().is_empty() {
            return Err(LlmError::Config("prompt is empty".into()));
        }
        match &self.backend {
            Backend::Live(http) => self.post(http, text),
            Backend::Record { http, cassette } => {
                let started = Instant::now();
                let reply = self.post(http, text)?;
                let mut cassette = cassette.lock().expect("cassette lock");
                cassette.push(text, &reply, started.elapsed().as_secs_f64());
                cassette.save(self.config.cassette_path.as_deref().expect("validated"))?;
                Ok(reply)
            }
            Backend::Replay { cassette, state } => {
                let digest = canonical_digest(text);
                let mut state = state.lock().expect("replay lock");
                let ReplayState {
                    by_digest,
                    consumed,
                } = &mut *state;
                let slots = by_digest
                    .get(&digest)
                    .ok_or_else(|| LlmError::CassetteMiss(digest.clone()))?;
                let next = consumed.entry(digest.clone()).or_insert(0);
                let idx = *slots
                    .get(*next)
                    .ok_or_else(|| LlmError::CassetteMiss(digest.clone()))?;
                *next += 1;
                log::debug!(
                    "replaying exchange {} for digest {}",
                    cassette.exchanges[idx].sequence_index,
                    &digest[..12]
                );
                Ok(cassette.exchanges[idx].reply_text.clone())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_normalizes_line_endings_and_trailing_space() {
        assert_eq!(canonical_digest("a\r\nb  \n"), canonical_digest("a\nb\n"));
        assert_eq!(canonical_digest("x"), canonical_digest("x"));
    }

    #[test]
    fn digest_distinguishes_visible_change() {
        // sha256 of the two normalized strings, computed independently with
        // `printf 'hello world' | sha256sum` and `printf 'hello World' | sha256sum`.
        assert_eq!(
            canonical_digest("hello world"),
            "b94d27b9934d3e08a52e52d7da7dabfac484efe37a5380ee9088f7ace2efcde9"
        );
        assert_eq!(
            canonical_digest("hello World"),
            "db4067cec62c58bf8b2f8982071e77c082da9e00924bf3631f3b024fa54e7d7e"
        );
    }

    #[test]
    fn cassette_text_round_trip_with_hostile_payloads() {
        let mut c = Cassette::default();
        c.push("prompt with\n@@@ reply\ninside", "reply\n@@@ end\n", 0.5);
        c.push("second", "", 0.0);
        let parsed = Cassette::parse(&c.to_text()).unwrap();
        assert_eq!(parsed, c);
    }

    #[test]
    fn cassette_rejects_tampered_digest() {
        let mut c = Cassette::default();
        c.push("abc", "def", 0.0);
        let tampered = c.to_text().replacen("abc", "abd", 1);
        assert!(Cassette::parse(&tampered)
            .unwrap_err()
            .contains("digest mismatch"));
    }

    #[test]
    fn record_and_replay_need_cassette() {
        let cfg = ModelConfig {
            transport: TransportMode::Replay,
            ..ModelConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(LlmError::Config(_))));
    }

    #[test]
    fn config_debug_hides_api_key() {
        let cfg = ModelConfig {
            api_key: Some(Secret::new("sk-verysecret")),
            ..ModelConfig::default()
        };
        assert!(!format!("{cfg:?}").contains("sk-verysecret"));
    }
}
