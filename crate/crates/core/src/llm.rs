//! Completion clients: a chat-completion HTTP client with retry and
//! record/replay, and a deterministic mock that answers from the prompt's
//! first path.
//!
//! Replay files are JSON Lines with one record per completion:
//! `{"prompt_hash": <sha256 hex>, "prompt": ..., "completion": ..., "timestamp": <unix seconds>}`.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::prompt::{live_paths, parse_path_text, RenderedPrompt};

/// Mock answer when the prompt lists no paths.
pub const UNKNOWN_ANSWER: &str = "unknown";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClientMode {
    Live,
    Mock,
    Replay,
}

impl std::str::FromStr for ClientMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "live" => Ok(ClientMode::Live),
            "mock" => Ok(ClientMode::Mock),
            "replay" => Ok(ClientMode::Replay),
            other => Err(Error::Config(format!("unknown client mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientConfig {
    pub mode: ClientMode,
    /// Full URL of the chat-completions endpoint.
    pub endpoint: Option<String>,
    pub model: Option<String>,
    /// Environment variable holding the bearer token.
    pub token_env: String,
    pub temperature: f64,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub base_backoff_ms: u64,
    pub max_backoff_ms: u64,
    /// Minimum spacing between live requests.
    pub min_interval_ms: u64,
    /// Replay mode reads from this file.
    pub replay_path: Option<PathBuf>,
    /// When set, every completion is appended here.
    pub record_path: Option<PathBuf>,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            mode: ClientMode::Mock,
            endpoint: None,
            model: None,
            token_env: "OPENAI_API_KEY".into(),
            temperature: 0.0,
            timeout_secs: 60,
            max_retries: 3,
            base_backoff_ms: 500,
            max_backoff_ms: 30_000,
            min_interval_ms: 0,
            replay_path: None,
            record_path: None,
        }
    }
}

impl ClientConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(Error::Config("temperature must be >= 0".into()));
        }
        match self.mode {
            ClientMode::Live if self.endpoint.is_none() || self.model.is_none() => Err(
                Error::Config("live mode needs an endpoint and a model".into()),
            ),
            ClientMode::Replay if self.replay_path.is_none() => {
                Err(Error::Config("replay mode needs a replay file".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub prompt_hash: String,
    pub prompt: String,
    pub completion: String,
    pub timestamp: u64,
}

pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

pub fn load_replay(path: impl AsRef<Path>) -> Result<Vec<ReplayRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(path, i + 1, e.to_string())))
        .collect()
}

/// Shareable completion client.
pub struct LlmClient {
    cfg: ClientConfig,
    token: Option<String>,
    replay: HashMap<String, String>,
    last_request: Mutex<Option<Instant>>,
    recorder: Mutex<()>,
}

impl LlmClient {
    /// Validates the config; live mode also requires the token variable to be
    /// set, checked before any network activity.
    pub fn new(cfg: ClientConfig) -> Result<Self> {
        cfg.validate()?;
        let token = match cfg.mode {
            ClientMode::Live => Some(std::env::var(&cfg.token_env).map_err(|_| {
                Error::Config(format!("environment variable {} is not set", cfg.token_env))
            })?),
            _ => None,
        };
        let mut replay = HashMap::new();
        if cfg.mode == ClientMode::Replay {
            let path = cfg.replay_path.as_ref().expect("validated");
            for rec in load_replay(path)? {
                // Later records win, matching append-only semantics.
                replay.insert(rec.prompt_hash, rec.completion);
            }
        }
        Ok(Self {
            cfg,
            token,
            replay,
            last_request: Mutex::new(None),
            recorder: Mutex::new(()),
        })
    }

    pub fn config(&self) -> &ClientConfig {
        &self.cfg
    }

    pub fn complete(&self, prompt: &RenderedPrompt) -> Result<String> {
        let completion = match self.cfg.mode {
            ClientMode::Mock => mock_complete(prompt)?,
            ClientMode::Replay => {
                let h = prompt_hash(&prompt.text);
                self.replay
                    .get(&h)
                    .cloned()
                    .ok_or_else(|| Error::Data(format!("no recorded completion for prompt {h}")))?
            }
            ClientMode::Live => self.complete_live(&prompt.text)?,
        };
        if let Some(path) = &self.cfg.record_path {
            self.record(path, &prompt.text, &completion)?;
        }
        Ok(completion)
    }

    fn record(&self, path: &Path, prompt: &str, completion: &str) -> Result<()> {
        let _guard = self.recorder.lock().expect("recorder lock");
        let rec = ReplayRecord {
            prompt_hash: prompt_hash(prompt),
            prompt: prompt.to_string(),
            completion: completion.to_string(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        };
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let line = serde_json::to_string(&rec).expect("record serializes");
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))
    }

    fn throttle(&self) {
        if self.cfg.min_interval_ms == 0 {
            return;
        }
        let mut last = self.last_request.lock().expect("rate limiter lock");
        let gap = Duration::from_millis(self.cfg.min_interval_ms);
        if let Some(prev) = *last {
            let elapsed = prev.elapsed();
            if elapsed < gap {
                thread::sleep(gap - elapsed);
            }
        }
        *last = Some(Instant::now());
    }

    fn backoff(&self, attempt: u32, retry_after: Option<Duration>) -> Duration {
        let cap = Duration::from_millis(self.cfg.max_backoff_ms);
        match retry_after {
            Some(d) => d.min(cap),
            None => {
                let exp = self
                    .cfg
                    .base_backoff_ms
                    .saturating_mul(1u64 << attempt.saturating_sub(1).min(20));
                Duration::from_millis(exp).min(cap)
            }
        }
    }

    fn complete_live(&self, prompt: &str) -> Result<String> {
        let endpoint = self.cfg.endpoint.as_deref().expect("validated");
        let body = serde_json::json!({
            "model": self.cfg.model.as_deref().expect("validated"),
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.cfg.temperature,
        });
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(self.cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let auth = format!("Bearer {}", self.token.as_deref().unwrap_or_default());

        let mut attempt = 0u32;
        loop {
            attempt += 1;
            self.throttle();
            let outcome = agent
                .post(endpoint)
                .header("Authorization", &auth)
                .send_json(&body);
            let (retryable, msg, retry_after) = match outcome {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    if (200..300).contains(&status) {
                        let value: serde_json::Value =
                            resp.body_mut().read_json().map_err(|e| Error::Transport {
                                attempts: attempt,
                                msg: format!("invalid response body: {e}"),
                            })?;
                        return extract_content(&value).ok_or_else(|| Error::Transport {
                            attempts: attempt,
                            msg: "response has no choices[0].message.content".into(),
                        });
                    }
                    let retry_after = resp
                        .headers()
                        .get("retry-after")
                        .and_then(|v| v.to_str().ok())
                        .and_then(|v| v.trim().parse::<u64>().ok())
                        .map(Duration::from_secs);
                    let text = resp.body_mut().read_to_string().unwrap_or_default();
                    (
                        status == 429 || status >= 500,
                        format!(
                            "HTTP {status}: {}",
                            text.chars().take(200).collect::<String>()
                        ),
                        retry_after,
                    )
                }
                Err(e) => (true, e.to_string(), None),
            };
            if !retryable || attempt > self.cfg.max_retries {
                return Err(Error::Transport {
                    attempts: attempt,
                    msg,
                });
            }
            let delay = self.backoff(attempt, retry_after);
            log::warn!("completion attempt {attempt} failed ({msg}); retrying in {delay:?}");
            thread::sleep(delay);
        }
    }
}

fn extract_content(v: &serde_json::Value) -> Option<String> {
    v.get("choices")?
        .get(0)?
        .get("message")?
        .get("content")?
        .as_str()
        .map(str::to_string)
}

/// Sends `prompt` through a client built from `cfg`.
pub fn complete(prompt: &RenderedPrompt, cfg: &ClientConfig) -> Result<String> {
    LlmClient::new(cfg.clone())?.complete(prompt)
}

/// Terminal entity of the first live-question path, or [`UNKNOWN_ANSWER`].
pub fn mock_complete(prompt: &RenderedPrompt) -> Result<String> {
    let paths = live_paths(&prompt.text)?;
    match paths.first() {
        None => Ok(UNKNOWN_ANSWER.to_string()),
        Some(p) => {
            let (entities, _) = parse_path_text(p)?;
            Ok(entities.last().expect("parsed path has entities").clone())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnswerSet {
    pub answers: Vec<String>,
    pub raw: String,
}

impl AnswerSet {
    pub fn contains(&self, normalized: &str) -> bool {
        self.answers.iter().any(|a| a == normalized)
    }
}

/// Normalizes one answer string: trim, lowercase, drop an `answer:` prefix,
/// surrounding quotes and trailing periods, until nothing changes.
pub fn normalize_answer(s: &str) -> String {
    let mut cur = s.trim().to_lowercase();
    loop {
        let mut next = cur.as_str();
        if let Some(rest) = next.strip_prefix("answer:") {
            next = rest;
        }
        next = next.trim();
        for q in ['"', '\'', '`'] {
            if next.len() >= 2 && next.starts_with(q) && next.ends_with(q) {
                next = &next[1..next.len() - 1];
            }
        }
        next = next.trim_end_matches('.').trim();
        if next == cur {
            return cur;
        }
        cur = next.to_string();
    }
}

/// Splits a completion on commas and newlines into normalized, deduplicated
/// answers in order of appearance.
pub fn parse_answer(completion: &str) -> AnswerSet {
    let mut answers: Vec<String> = Vec::new();
    for piece in completion.split([',', '\n']) {
        let a = normalize_answer(piece);
        if !a.is_empty() && !answers.contains(&a) {
            answers.push(a);
        }
    }
    AnswerSet {
        answers,
        raw: completion.to_string(),
    }
}
