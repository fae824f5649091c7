//! LLM gateway: chat completions and embeddings behind one interface.
//!
//! Three modes cover the deployment spectrum:
//!
//! * **live** — an OpenAI-compatible HTTP endpoint, with bounded retries
//!   and a content-addressed response cache;
//! * **replay** — cache hits only; a miss is an error, making runs
//!   byte-reproducible offline;
//! * **stub** — scripted responses matched on prompt markers, for tests
//!   and committed fixtures.
//!
//! Every completion carries per-token logprobs when the provider returns
//! them; downstream confidence scoring consumes them.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embed::{Embedder, HashingEmbedder};
use crate::error::{DqError, Result};

pub const DEFAULT_RETRIES: usize = 3;
pub const DEFAULT_IN_FLIGHT_CAP: usize = 4;
const BACKOFF_BASE_MS: u64 = 250;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GatewayMode {
    Live,
    Replay,
    Stub,
}

impl std::str::FromStr for GatewayMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "live" => Ok(GatewayMode::Live),
            "replay" => Ok(GatewayMode::Replay),
            "stub" => Ok(GatewayMode::Stub),
            other => Err(format!("unknown gateway mode `{other}`")),
        }
    }
}

/// One chat request. The serialized form doubles as the cache identity,
/// so every field that affects the response must live here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub model: String,
    pub system: String,
    pub user: String,
    pub temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
    pub want_logprobs: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl PromptRequest {
    pub fn new(model: impl Into<String>, system: impl Into<String>, user: impl Into<String>) -> Self {
        PromptRequest {
            model: model.into(),
            system: system.into(),
            user: user.into(),
            temperature: 0.0,
            max_tokens: None,
            want_logprobs: true,
            seed: None,
        }
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    /// Hex digest of the canonical serialization; stable across runs.
    pub fn cache_key(&self) -> String {
        let canonical = serde_json::to_string(self).expect("request serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        format!("{:x}", hasher.finalize())
    }

    fn combined_prompt(&self) -> String {
        format!("{}\n{}", self.system, self.user)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    /// Per-token log probabilities, each `<= 0`; empty when unavailable.
    pub token_logprobs: Vec<f64>,
    pub model: String,
    pub cached: bool,
}

/// Raw provider access; the gateway layers retries and caching on top.
pub trait ChatTransport: Send + Sync {
    fn chat_once(&self, request: &PromptRequest) -> Result<Completion>;
    fn embed_once(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>>;
}

// ---------------------------------------------------------------- http

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatBody<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_tokens: Option<u32>,
    logprobs: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    model: Option<String>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
    #[serde(default)]
    logprobs: Option<LogprobBlock>,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct LogprobBlock {
    #[serde(default)]
    content: Option<Vec<TokenLogprob>>,
}

#[derive(Deserialize)]
struct TokenLogprob {
    logprob: f64,
}

#[derive(Serialize)]
struct EmbedBody<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedDatum>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    embedding: Vec<f64>,
}

/// OpenAI-compatible chat-completions and embeddings endpoint.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: Option<String>,
}

impl HttpTransport {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(120))
            .build()
            .map_err(|e| DqError::Gateway(format!("http client: {e}")))?;
        Ok(HttpTransport { client, endpoint: endpoint.into().trim_end_matches('/').to_string(), api_key })
    }

    fn post(&self, path: &str, body: &impl Serialize) -> Result<serde_json::Value> {
        let mut req = self.client.post(format!("{}{path}", self.endpoint)).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let response = req.send().map_err(|e| DqError::Gateway(format!("request: {e}")))?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| DqError::Gateway(format!("response body: {e}")))?;
        if !status.is_success() {
            return Err(DqError::Gateway(format!("status {status}: {text}")));
        }
        serde_json::from_str(&text)
            .map_err(|e| DqError::Gateway(format!("malformed response: {e}")))
    }
}

impl ChatTransport for HttpTransport {
    fn chat_once(&self, request: &PromptRequest) -> Result<Completion> {
        let mut messages = Vec::new();
        if !request.system.is_empty() {
            messages.push(WireMessage { role: "system", content: &request.system });
        }
        messages.push(WireMessage { role: "user", content: &request.user });
        let body = ChatBody {
            model: &request.model,
            messages,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
            logprobs: request.want_logprobs,
            seed: request.seed,
        };
        let value = self.post("/chat/completions", &body)?;
        let parsed: ChatResponse = serde_json::from_value(value)
            .map_err(|e| DqError::Gateway(format!("chat response shape: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| DqError::Gateway("empty choices".to_string()))?;
        let token_logprobs = choice
            .logprobs
            .and_then(|b| b.content)
            .map(|tokens| tokens.into_iter().map(|t| t.logprob).collect())
            .unwrap_or_default();
        Ok(Completion {
            text: choice.message.content.unwrap_or_default(),
            token_logprobs,
            model: parsed.model.unwrap_or_else(|| request.model.clone()),
            cached: false,
        })
    }

    fn embed_once(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let value = self.post("/embeddings", &EmbedBody { model, input: texts })?;
        let parsed: EmbedResponse = serde_json::from_value(value)
            .map_err(|e| DqError::Gateway(format!("embed response shape: {e}")))?;
        if parsed.data.len() != texts.len() {
            return Err(DqError::Gateway(format!(
                "embedding count {} != input count {}",
                parsed.data.len(),
                texts.len()
            )));
        }
        Ok(parsed.data.into_iter().map(|d| d.embedding).collect())
    }
}

// ---------------------------------------------------------------- stub

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StubRoute {
    /// All markers must appear in the combined system+user prompt.
    #[serde(rename = "match")]
    pub markers: Vec<String>,
    pub response: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub logprobs: Vec<f64>,
}

/// Scripted responses: the first route whose markers all match wins.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ScriptedStub {
    pub routes: Vec<StubRoute>,
}

impl ScriptedStub {
    pub fn new() -> Self {
        ScriptedStub::default()
    }

    pub fn route(mut self, markers: &[&str], response: impl Into<String>) -> Self {
        self.routes.push(StubRoute {
            markers: markers.iter().map(|m| m.to_string()).collect(),
            response: response.into(),
            logprobs: Vec::new(),
        });
        self
    }

    pub fn route_with_logprobs(
        mut self,
        markers: &[&str],
        response: impl Into<String>,
        logprobs: Vec<f64>,
    ) -> Self {
        self.routes.push(StubRoute {
            markers: markers.iter().map(|m| m.to_string()).collect(),
            response: response.into(),
            logprobs,
        });
        self
    }

    pub fn from_fixture_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DqError::io(path.display().to_string(), e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn respond(&self, request: &PromptRequest) -> Result<Completion> {
        let prompt = request.combined_prompt();
        let route = self
            .routes
            .iter()
            .find(|r| r.markers.iter().all(|m| prompt.contains(m)))
            .ok_or(DqError::StubMiss)?;
        Ok(Completion {
            text: route.response.clone(),
            token_logprobs: route.logprobs.clone(),
            model: request.model.clone(),
            cached: false,
        })
    }
}

// --------------------------------------------------------------- cache

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    request: PromptRequest,
    text: String,
    token_logprobs: Vec<f64>,
    model: String,
}

fn cache_path(dir: &Path, key: &str) -> PathBuf {
    dir.join(format!("{key}.json"))
}

fn cache_read(dir: &Path, request: &PromptRequest) -> Option<Completion> {
    let path = cache_path(dir, &request.cache_key());
    let text = std::fs::read_to_string(&path).ok()?;
    let entry: CacheEntry = serde_json::from_str(&text).ok()?;
    Some(Completion {
        text: entry.text,
        token_logprobs: entry.token_logprobs,
        model: entry.model,
        cached: true,
    })
}

/// Writes through a temp file in the same directory, then renames, so
/// concurrent readers never observe a partial entry.
fn cache_write(dir: &Path, request: &PromptRequest, completion: &Completion) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| DqError::io(dir.display().to_string(), e))?;
    let entry = CacheEntry {
        request: request.clone(),
        text: completion.text.clone(),
        token_logprobs: completion.token_logprobs.clone(),
        model: completion.model.clone(),
    };
    let body = serde_json::to_string_pretty(&entry)?;
    let tmp = tempfile::NamedTempFile::new_in(dir)
        .map_err(|e| DqError::io(dir.display().to_string(), e))?;
    std::fs::write(tmp.path(), body)
        .map_err(|e| DqError::io(tmp.path().display().to_string(), e))?;
    let path = cache_path(dir, &request.cache_key());
    tmp.persist(&path)
        .map_err(|e| DqError::io(path.display().to_string(), e.error))?;
    Ok(())
}

// ----------------------------------------------------------- semaphore

struct Semaphore {
    permits: Mutex<usize>,
    available: Condvar,
}

impl Semaphore {
    fn new(cap: usize) -> Self {
        Semaphore { permits: Mutex::new(cap.max(1)), available: Condvar::new() }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.available.wait(permits).unwrap();
        }
        *permits -= 1;
        SemaphoreGuard { semaphore: self }
    }
}

struct SemaphoreGuard<'a> {
    semaphore: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        let mut permits = self.semaphore.permits.lock().unwrap();
        *permits += 1;
        self.semaphore.available.notify_one();
    }
}

// ------------------------------------------------------------- gateway

pub struct ChatGateway {
    mode: GatewayMode,
    cache_dir: Option<PathBuf>,
    transport: Option<Box<dyn ChatTransport>>,
    stub: Option<ScriptedStub>,
    embed_model: Option<String>,
    retries: usize,
    semaphore: Semaphore,
    fallback_embedder: HashingEmbedder,
}

impl ChatGateway {
    pub fn live(
        transport: Box<dyn ChatTransport>,
        cache_dir: Option<PathBuf>,
        embed_model: Option<String>,
    ) -> Self {
        ChatGateway {
            mode: GatewayMode::Live,
            cache_dir,
            transport: Some(transport),
            stub: None,
            embed_model,
            retries: DEFAULT_RETRIES,
            semaphore: Semaphore::new(DEFAULT_IN_FLIGHT_CAP),
            fallback_embedder: HashingEmbedder::default(),
        }
    }

    pub fn replay(cache_dir: PathBuf) -> Self {
        ChatGateway {
            mode: GatewayMode::Replay,
            cache_dir: Some(cache_dir),
            transport: None,
            stub: None,
            embed_model: None,
            retries: DEFAULT_RETRIES,
            semaphore: Semaphore::new(DEFAULT_IN_FLIGHT_CAP),
            fallback_embedder: HashingEmbedder::default(),
        }
    }

    pub fn stub(stub: ScriptedStub) -> Self {
        ChatGateway {
            mode: GatewayMode::Stub,
            cache_dir: None,
            transport: None,
            stub: Some(stub),
            embed_model: None,
            retries: DEFAULT_RETRIES,
            semaphore: Semaphore::new(DEFAULT_IN_FLIGHT_CAP),
            fallback_embedder: HashingEmbedder::default(),
        }
    }

    pub fn with_retries(mut self, retries: usize) -> Self {
        self.retries = retries.max(1);
        self
    }

    pub fn with_in_flight_cap(mut self, cap: usize) -> Self {
        self.semaphore = Semaphore::new(cap);
        self
    }

    pub fn mode(&self) -> GatewayMode {
        self.mode
    }

    /// Issues one chat request per the gateway mode. Live responses are
    /// cached by request digest; replay serves only cached responses.
    pub fn chat(&self, request: &PromptRequest) -> Result<Completion> {
        match self.mode {
            GatewayMode::Stub => {
                self.stub.as_ref().ok_or(DqError::StubMiss)?.respond(request)
            }
            GatewayMode::Replay => {
                let dir = self.cache_dir.as_ref().ok_or_else(|| {
                    DqError::Config("replay mode requires a cache dir".to_string())
                })?;
                cache_read(dir, request).ok_or_else(|| DqError::ReplayMiss {
                    key: request.cache_key(),
                })
            }
            GatewayMode::Live => {
                if let Some(dir) = &self.cache_dir {
                    if let Some(hit) = cache_read(dir, request) {
                        return Ok(hit);
                    }
                }
                let completion = self.call_with_retries(request)?;
                if let Some(dir) = &self.cache_dir {
                    cache_write(dir, request, &completion)?;
                }
                Ok(completion)
            }
        }
    }

    fn call_with_retries(&self, request: &PromptRequest) -> Result<Completion> {
        let transport = self
            .transport
            .as_ref()
            .ok_or_else(|| DqError::Config("live mode requires a transport".to_string()))?;
        let _permit = self.semaphore.acquire();
        let mut last = None;
        for attempt in 0..self.retries {
            match transport.chat_once(request) {
                Ok(completion) => return Ok(completion),
                Err(e) => {
                    log::warn!("chat attempt {} failed: {e}", attempt + 1);
                    last = Some(e);
                    if attempt + 1 < self.retries {
                        std::thread::sleep(std::time::Duration::from_millis(
                            BACKOFF_BASE_MS << attempt,
                        ));
                    }
                }
            }
        }
        Err(last.unwrap_or_else(|| DqError::Gateway("no attempts made".to_string())))
    }

    /// Chat plus JSON extraction, with one automatic reprompt asking for
    /// valid JSON when the first response cannot be parsed.
    pub fn chat_json(&self, request: &PromptRequest) -> Result<(serde_json::Value, Completion)> {
        let completion = self.chat(request)?;
        match extract_json_block(&completion.text) {
            Ok(value) => Ok((value, completion)),
            Err(first_err) => {
                log::warn!("json extraction failed, reprompting once");
                let mut retry = request.clone();
                retry.user = format!("{}\n\nReturn only valid JSON.", request.user);
                let completion = self.chat(&retry).map_err(|_| first_err)?;
                let value = extract_json_block(&completion.text)?;
                Ok((value, completion))
            }
        }
    }

    /// Embeds texts with the live provider when configured; otherwise the
    /// deterministic hashing embedder stands in.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        if let (GatewayMode::Live, Some(transport), Some(model)) =
            (self.mode, self.transport.as_ref(), self.embed_model.as_ref())
        {
            let _permit = self.semaphore.acquire();
            let mut last = None;
            for attempt in 0..self.retries {
                match transport.embed_once(model, texts) {
                    Ok(vectors) => return Ok(vectors),
                    Err(e) => {
                        log::warn!("embed attempt {} failed: {e}", attempt + 1);
                        last = Some(e);
                    }
                }
            }
            return Err(last.unwrap_or_else(|| DqError::Gateway("no attempts".to_string())));
        }
        if self.mode == GatewayMode::Live {
            log::warn!("no embedding model configured; using hashing fallback");
        }
        self.fallback_embedder.embed(texts)
    }
}

impl Embedder for ChatGateway {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        ChatGateway::embed(self, texts)
    }

    fn dim(&self) -> usize {
        self.fallback_embedder.dim()
    }
}

// ------------------------------------------------------ json extraction

/// Pulls the first parseable JSON value out of a completion: fenced
/// ```json blocks first, then the whole text, then the first balanced
/// object or array. The error keeps the raw text for diagnostics.
pub fn extract_json_block(text: &str) -> Result<serde_json::Value> {
    for block in fenced_blocks(text) {
        if let Ok(value) = serde_json::from_str(block.trim()) {
            return Ok(value);
        }
    }
    if let Ok(value) = serde_json::from_str(text.trim()) {
        return Ok(value);
    }
    if let Some(candidate) = balanced_json_span(text) {
        if let Ok(value) = serde_json::from_str(candidate) {
            return Ok(value);
        }
    }
    Err(DqError::JsonExtract { raw: text.to_string() })
}

fn fenced_blocks(text: &str) -> Vec<&str> {
    let mut blocks = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find("```") {
        let after = &rest[start + 3..];
        let body_start = after.find('\n').map(|i| i + 1).unwrap_or(0);
        let body = &after[body_start..];
        match body.find("```") {
            Some(end) => {
                blocks.push(&body[..end]);
                rest = &body[end + 3..];
            }
            None => break,
        }
    }
    blocks
}

/// Finds the first top-level `{...}` or `[...]` span, tracking strings
/// and escapes so braces inside values do not confuse the depth count.
fn balanced_json_span(text: &str) -> Option<&str> {
    let bytes = text.as_bytes();
    let start = text.find(|c| c == '{' || c == '[')?;
    let open = bytes[start];
    let close = if open == b'{' { b'}' } else { b']' };
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            _ if b == open => depth += 1,
            _ if b == close => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..=i]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Pulls the first fenced code block, preferring fences tagged with the
/// given language. Used for generated validator scripts.
pub fn extract_code_block(text: &str, language: &str) -> Option<String> {
    let tagged = format!("```{language}");
    if let Some(start) = text.find(&tagged) {
        let after = &text[start + tagged.len()..];
        let body_start = after.find('\n').map(|i| i + 1).unwrap_or(0);
        let body = &after[body_start..];
        if let Some(end) = body.find("```") {
            return Some(body[..end].trim_end().to_string());
        }
    }
    fenced_blocks(text).first().map(|b| b.trim_end().to_string())
}

// ------------------------------------------------------------- testing

/// Transport double that replays a queue of results; used by unit tests
/// to exercise retry and caching behavior without a network.
pub struct QueueTransport {
    responses: Mutex<VecDeque<Result<Completion>>>,
    pub calls: Mutex<usize>,
}

impl QueueTransport {
    pub fn new(responses: Vec<Result<Completion>>) -> Self {
        QueueTransport {
            responses: Mutex::new(responses.into_iter().collect()),
            calls: Mutex::new(0),
        }
    }
}

impl ChatTransport for QueueTransport {
    fn chat_once(&self, request: &PromptRequest) -> Result<Completion> {
        *self.calls.lock().unwrap() += 1;
        self.responses
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or_else(|| {
                Ok(Completion {
                    text: String::new(),
                    token_logprobs: Vec::new(),
                    model: request.model.clone(),
                    cached: false,
                })
            })
    }

    fn embed_once(&self, _model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        *self.calls.lock().unwrap() += 1;
        Ok(texts.iter().map(|_| vec![1.0, 0.0]).collect())
    }
}
