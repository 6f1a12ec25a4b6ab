use std::collections::BTreeMap;
use std::fs;
use std::io::BufRead;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{domain, Error, Result};
use crate::util::{atomic_write, sha256_hex};

pub const DEFAULT_TEMPERATURE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    pub user: String,
    /// Distinguishes repeated draws of an identical prompt.
    pub repetition: u32,
}

impl ChatRequest {
    /// Hex SHA-256 over system prompt, user message, model, temperature and
    /// repetition.
    pub fn key(&self) -> String {
        let canon = json!([self.system, self.user, self.model, self.temperature, self.repetition]);
        sha256_hex(canon.to_string().as_bytes())
    }

    pub fn body(&self) -> Value {
        let mut messages = Vec::new();
        if let Some(s) = &self.system {
            messages.push(json!({"role": "system", "content": s}));
        }
        messages.push(json!({"role": "user", "content": self.user}));
        json!({"model": self.model, "temperature": self.temperature, "messages": messages})
    }
}

pub trait ChatClient: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String>;
}

/// Chat-completion endpoint over HTTP with bearer authentication.
pub struct HttpClient {
    agent: ureq::Agent,
    url: String,
    token: Option<String>,
    pub max_attempts: u32,
    pub backoff: Duration,
}

impl HttpClient {
    /// Reads the bearer token from `token_env` when that variable is set.
    pub fn new(url: impl Into<String>, token_env: &str, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder().timeout_global(Some(timeout)).build();
        Self {
            agent: ureq::Agent::new_with_config(config),
            url: url.into(),
            token: std::env::var(token_env).ok().filter(|t| !t.is_empty()),
            max_attempts: 3,
            backoff: Duration::from_millis(500),
        }
    }

    fn attempt(&self, request: &ChatRequest) -> Result<String> {
        let mut req = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req.send_json(request.body()).map_err(|e| Error::Transport(e.to_string()))?;
        let v: Value = resp.body_mut().read_json().map_err(|e| Error::Transport(e.to_string()))?;
        extract_content(&v)
    }
}

pub fn extract_content(v: &Value) -> Result<String> {
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| Error::Transport("response has no choices[0].message.content".into()))
}

impl ChatClient for HttpClient {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let mut last = None;
        for attempt in 0..self.max_attempts.max(1) {
            if attempt > 0 {
                std::thread::sleep(self.backoff * attempt);
            }
            match self.attempt(request) {
                Ok(s) => return Ok(s),
                Err(e) => last = Some(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteHeader {
    pub cassette_version: u32,
    pub model: String,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub key: String,
    pub request: ChatRequest,
    pub response: String,
    /// Seconds since the Unix epoch at recording time.
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cassette {
    pub header: CassetteHeader,
    pub entries: BTreeMap<String, CassetteEntry>,
}

impl Cassette {
    pub fn new(model: impl Into<String>, temperature: f64) -> Self {
        Self {
            header: CassetteHeader { cassette_version: 1, model: model.into(), temperature },
            entries: BTreeMap::new(),
        }
    }

    /// Adds an entry; an existing key must carry the identical request and
    /// response.
    pub fn insert(&mut self, entry: CassetteEntry) -> Result<()> {
        if entry.key != entry.request.key() {
            return Err(Error::Integrity(format!("entry key {} does not hash its request", entry.key)));
        }
        match self.entries.get(&entry.key) {
            Some(prev) if prev.request != entry.request || prev.response != entry.response => {
                Err(Error::Integrity(format!("key {} recorded with two different payloads", entry.key)))
            }
            Some(_) => Ok(()),
            None => {
                self.entries.insert(entry.key.clone(), entry);
                Ok(())
            }
        }
    }

    pub fn read(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines().enumerate().filter(|(_, l)| l.as_ref().map_or(true, |l| !crate::util::skip_line(l)));
        let header: CassetteHeader = match lines.next() {
            Some((_, l)) => serde_json::from_str(&l?).map_err(|e| domain(format!("cassette header: {e}")))?,
            None => return Err(domain("cassette is empty")),
        };
        let mut c = Cassette { header, entries: BTreeMap::new() };
        for (i, l) in lines {
            let e: CassetteEntry = serde_json::from_str(&l?).map_err(|e| domain(format!("cassette line {}: {e}", i + 1)))?;
            c.insert(e)?;
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(std::io::BufReader::new(fs::File::open(path)?))
    }

    /// Header line, then entries in key order.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&self.header)?;
        out.push('\n');
        for e in self.entries.values() {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, self.to_jsonl()?.as_bytes())
    }
}

/// Serves recorded responses; a request without a recording is an error.
pub struct ReplayClient {
    cassette: Cassette,
}

impl ReplayClient {
    pub fn new(cassette: Cassette) -> Self {
        Self { cassette }
    }
}

impl ChatClient for ReplayClient {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let key = request.key();
        self.cassette.entries.get(&key).map(|e| e.response.clone()).ok_or(Error::CassetteMiss(key))
    }
}

/// Forwards to a live client and records every successful exchange.
pub struct RecordingClient<C> {
    inner: C,
    cassette: Mutex<Cassette>,
}

impl<C: ChatClient> RecordingClient<C> {
    pub fn new(inner: C, model: impl Into<String>, temperature: f64) -> Self {
        Self { inner, cassette: Mutex::new(Cassette::new(model, temperature)) }
    }

    pub fn into_cassette(self) -> Cassette {
        self.cassette.into_inner().expect("cassette lock poisoned")
    }
}

impl<C: ChatClient> ChatClient for RecordingClient<C> {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let response = self.inner.complete(request)?;
        let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        self.cassette.lock().expect("cassette lock poisoned").insert(CassetteEntry {
            key: request.key(),
            request: request.clone(),
            response: response.clone(),
            timestamp,
        })?;
        Ok(response)
    }
}

/// Issues every request through `client` and stores the exchanges.
pub fn record_cassette(requests: &[ChatRequest], client: &dyn ChatClient, model: &str, temperature: f64) -> Result<Cassette> {
    let rec = RecordingClient::new(ClientRef(client), model, temperature);
    for r in requests {
        rec.complete(r)?;
    }
    Ok(rec.into_cassette())
}

struct ClientRef<'a>(&'a dyn ChatClient);

impl ChatClient for ClientRef<'_> {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        self.0.complete(request)
    }
}
