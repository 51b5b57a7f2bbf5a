//! Chat-completion backends and video frame selection.
//!
//! Media travel as reference strings only; nothing here decodes video.

use std::collections::HashMap;
use std::fs;
use std::hash::Hasher;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use twox_hash::XxHash64;

use crate::http::{self, HttpTransport, InFlightLimit, TransportError, UreqTransport};
use crate::prompting::{letter_for, MAX_OPTIONS};

/// Frames sent per video item.
pub const FRAMES_PER_CLIP: usize = 8;
/// Frame resolution the reference model was run at. Recorded, not enforced.
pub const FRAME_RESOLUTION: (u32, u32) = (640, 480);
pub const DEFAULT_MAX_TOKENS: u32 = 1024;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend unavailable after {attempts} attempts: {last}")]
    Unavailable { attempts: u32, last: String },
    #[error("request rejected with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    Protocol(String),
    #[error("cannot load mock script: {0}")]
    Script(String),
}

/// Evenly spaced, endpoint-inclusive frame indices.
///
/// `k == 1` picks the middle frame. With fewer frames than `k`, indices repeat.
pub fn sample_frame_indices(n_frames: usize, k: usize) -> Result<Vec<usize>, BackendError> {
    if n_frames == 0 || k == 0 {
        return Err(BackendError::InvalidRequest(format!(
            "frame sampling needs n_frames >= 1 and k >= 1 (got {n_frames}, {k})"
        )));
    }
    if k == 1 {
        return Ok(vec![(n_frames - 1) / 2]);
    }
    let span = (n_frames - 1) as u128;
    let steps = (k - 1) as u128;
    Ok((0..k as u128).map(|j| (j * span / steps) as usize).collect())
}

/// Chooses up to [`FRAMES_PER_CLIP`] media references for one item.
///
/// With a known source frame count, indices are sampled over it and mapped to
/// `media[i]`, or to `frame:<i>` when no reference list covers the index.
pub fn select_media(media: &[String], n_source_frames: Option<usize>) -> Result<Vec<String>, BackendError> {
    let pick = |n: usize| -> Result<Vec<String>, BackendError> {
        Ok(sample_frame_indices(n, FRAMES_PER_CLIP)?
            .into_iter()
            .map(|i| media.get(i).cloned().unwrap_or_else(|| format!("frame:{i}")))
            .collect())
    };
    match n_source_frames {
        Some(n) => pick(n),
        None if media.len() > FRAMES_PER_CLIP => pick(media.len()),
        None => Ok(media.to_vec()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub prompt: String,
    pub media_refs: Vec<String>,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Routing key for scripted mocks. Not sent to remote services.
    #[serde(skip)]
    pub item_id: Option<String>,
}

impl ModelRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        ModelRequest {
            prompt: prompt.into(),
            media_refs: Vec::new(),
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
            item_id: None,
        }
    }

    pub fn with_media(mut self, media: Vec<String>) -> Self {
        self.media_refs = media;
        self
    }

    pub fn with_item_id(mut self, id: impl Into<String>) -> Self {
        self.item_id = Some(id.into());
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.media_refs.len() > FRAMES_PER_CLIP {
            return Err(BackendError::InvalidRequest(format!(
                "{} media refs exceed the limit of {FRAMES_PER_CLIP}",
                self.media_refs.len()
            )));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(BackendError::InvalidRequest(format!(
                "temperature must be finite and >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelResponse {
    pub text: String,
    pub latency_ms: u64,
    pub backend_id: String,
}

pub trait Backend: Send + Sync {
    fn id(&self) -> &str;
    fn query(&self, request: &ModelRequest) -> Result<ModelResponse, BackendError>;
}

/// Sends `request` to `backend` after validating it.
pub fn query_model(request: &ModelRequest, backend: &dyn Backend) -> Result<ModelResponse, BackendError> {
    request.validate()?;
    backend.query(request)
}

fn respond(id: &str, started: Instant, text: String) -> ModelResponse {
    ModelResponse {
        text,
        latency_ms: started.elapsed().as_millis() as u64,
        backend_id: id.to_string(),
    }
}

/// Replies with a fixed text per item id.
#[derive(Debug, Clone, Default)]
pub struct ScriptedMock {
    id: String,
    responses: HashMap<String, String>,
    default: Option<String>,
}

impl ScriptedMock {
    pub fn new(responses: HashMap<String, String>) -> Self {
        ScriptedMock {
            id: "mock:scripted".into(),
            responses,
            default: None,
        }
    }

    /// Text returned for items with no script entry. Without one, such items
    /// get an empty reply.
    pub fn with_default(mut self, text: impl Into<String>) -> Self {
        self.default = Some(text.into());
        self
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    /// Loads a JSON object mapping item id to reply text. The key `"*"`, if
    /// present, becomes the default reply.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|e| BackendError::Script(format!("{}: {e}", path.display())))?;
        let mut responses: HashMap<String, String> =
            serde_json::from_str(&raw).map_err(|e| BackendError::Script(format!("{}: {e}", path.display())))?;
        let fallback = responses.remove("*");
        let mock = Self::new(responses);
        Ok(match fallback {
            Some(text) => mock.with_default(text),
            None => mock,
        })
    }
}

impl Backend for ScriptedMock {
    fn id(&self) -> &str {
        &self.id
    }

    fn query(&self, request: &ModelRequest) -> Result<ModelResponse, BackendError> {
        let started = Instant::now();
        let text = request
            .item_id
            .as_ref()
            .and_then(|id| self.responses.get(id))
            .or(self.default.as_ref())
            .cloned()
            .unwrap_or_default();
        Ok(respond(&self.id, started, text))
    }
}

/// Answers `Answer: X` with X uniform over the first `n_options` letters.
///
/// Requests carrying an item id draw from a generator keyed by `(seed, id)`,
/// so results do not depend on call order. Others share one seeded stream.
#[derive(Debug)]
pub struct UniformRandomMock {
    id: String,
    seed: u64,
    n_options: usize,
    stream: Mutex<ChaCha8Rng>,
}

impl UniformRandomMock {
    pub fn new(seed: u64, n_options: usize) -> Result<Self, BackendError> {
        if !(1..=MAX_OPTIONS).contains(&n_options) {
            return Err(BackendError::InvalidRequest(format!(
                "uniform mock needs 1..={MAX_OPTIONS} options, got {n_options}"
            )));
        }
        Ok(UniformRandomMock {
            id: format!("mock:uniform:{n_options}"),
            seed,
            n_options,
            stream: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn draw(&self, item_id: Option<&str>) -> usize {
        match item_id {
            Some(id) => {
                let mut h = XxHash64::with_seed(self.seed);
                h.write(id.as_bytes());
                ChaCha8Rng::seed_from_u64(h.finish()).gen_range(0..self.n_options)
            }
            None => self.stream.lock().unwrap().gen_range(0..self.n_options),
        }
    }
}

impl Backend for UniformRandomMock {
    fn id(&self) -> &str {
        &self.id
    }

    fn query(&self, request: &ModelRequest) -> Result<ModelResponse, BackendError> {
        let started = Instant::now();
        let letter = letter_for(self.draw(request.item_id.as_deref())).unwrap();
        Ok(respond(&self.id, started, format!("Answer: {letter}")))
    }
}

/// One decisive fact for one item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedFact {
    pub item_id: String,
    pub fact: String,
    pub answer_index: usize,
}

/// Answers correctly only when the item's decisive fact text appears in the
/// prompt; otherwise commits to a fixed fallback option.
#[derive(Debug, Clone)]
pub struct KnowledgeAwareMock {
    id: String,
    facts: HashMap<String, PlantedFact>,
    fallback_index: usize,
}

impl KnowledgeAwareMock {
    pub fn new(facts: impl IntoIterator<Item = PlantedFact>, fallback_index: usize) -> Self {
        KnowledgeAwareMock {
            id: "mock:knowledge".into(),
            facts: facts.into_iter().map(|f| (f.item_id.clone(), f)).collect(),
            fallback_index,
        }
    }

    pub fn fallback_index(&self) -> usize {
        self.fallback_index
    }

    /// Loads `{"fallback_index": n, "facts": [{item_id, fact, answer_index}, ...]}`.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        #[derive(Deserialize)]
        struct Script {
            fallback_index: usize,
            facts: Vec<PlantedFact>,
        }
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|e| BackendError::Script(format!("{}: {e}", path.display())))?;
        let s: Script =
            serde_json::from_str(&raw).map_err(|e| BackendError::Script(format!("{}: {e}", path.display())))?;
        Ok(Self::new(s.facts, s.fallback_index))
    }
}

impl Backend for KnowledgeAwareMock {
    fn id(&self) -> &str {
        &self.id
    }

    fn query(&self, request: &ModelRequest) -> Result<ModelResponse, BackendError> {
        let started = Instant::now();
        let choice = request
            .item_id
            .as_ref()
            .and_then(|id| self.facts.get(id))
            .filter(|f| request.prompt.contains(&f.fact))
            .map_or(self.fallback_index, |f| f.answer_index);
        let letter =
            letter_for(choice).ok_or_else(|| BackendError::Script(format!("choice {choice} has no letter")))?;
        Ok(respond(&self.id, started, format!("Answer: {letter}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            initial_backoff: Duration::from_millis(250),
        }
    }
}

#[derive(Serialize)]
struct ChatBody<'a> {
    prompt: &'a str,
    media: &'a [String],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatReply {
    text: String,
}

/// Client for the `POST {endpoint}/v1/chat` wire contract.
///
/// Connection failures, 429 and 5xx are retried with doubling backoff. Other
/// non-2xx statuses fail immediately.
pub struct RemoteBackend<T: HttpTransport = UreqTransport> {
    id: String,
    url: String,
    transport: T,
    api_key: Option<String>,
    retry: RetryPolicy,
    limit: InFlightLimit,
}

impl RemoteBackend<UreqTransport> {
    pub fn connect(endpoint: &str, timeout: Duration) -> Self {
        Self::with_transport(endpoint, UreqTransport::new(timeout))
    }
}

impl<T: HttpTransport> RemoteBackend<T> {
    pub fn with_transport(endpoint: &str, transport: T) -> Self {
        RemoteBackend {
            id: format!("remote:{}", endpoint.trim_end_matches('/')),
            url: http::join_url(endpoint, "/v1/chat"),
            transport,
            api_key: http::api_key_from_env(),
            retry: RetryPolicy::default(),
            limit: InFlightLimit::new(http::DEFAULT_MAX_IN_FLIGHT),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, max: usize) -> Self {
        self.limit = InFlightLimit::new(max);
        self
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    pub fn max_in_flight(&self) -> usize {
        self.limit.max()
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<Result<String, BackendError>, String> {
        let reply = {
            let _slot = self.limit.acquire();
            self.transport.post_json(&self.url, body, self.api_key.as_deref())
        };
        match reply {
            Err(e @ (TransportError::Connection(_) | TransportError::Timeout)) => Err(e.to_string()),
            Ok(r) if r.status == 429 || r.status >= 500 => Err(format!("status {}: {}", r.status, r.body)),
            Ok(r) if !(200..300).contains(&r.status) => Ok(Err(BackendError::Rejected {
                status: r.status,
                body: r.body,
            })),
            Ok(r) => Ok(serde_json::from_str::<ChatReply>(&r.body)
                .map(|c| c.text)
                .map_err(|e| BackendError::Protocol(e.to_string()))),
        }
    }
}

impl<T: HttpTransport> Backend for RemoteBackend<T> {
    fn id(&self) -> &str {
        &self.id
    }

    fn query(&self, request: &ModelRequest) -> Result<ModelResponse, BackendError> {
        request.validate()?;
        let started = Instant::now();
        let body = serde_json::to_value(ChatBody {
            prompt: &request.prompt,
            media: &request.media_refs,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        })
        .expect("chat body serializes");

        let attempts = self.retry.max_attempts.max(1);
        let mut backoff = self.retry.initial_backoff;
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.attempt(&body) {
                Ok(done) => return done.map(|text| respond(&self.id, started, text)),
                Err(transient) => last = transient,
            }
            if attempt < attempts {
                std::thread::sleep(backoff);
                backoff *= 2;
            }
        }
        Err(BackendError::Unavailable { attempts, last })
    }
}
