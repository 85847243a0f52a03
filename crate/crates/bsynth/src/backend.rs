//! Generator backends: remote chat-completion client, simulator and replay,
//! plus the admission throttle for remote calls.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use bsynth_core::prompt::{BackendError, GenerationRequest, Generator, SimulatorGenerator};
use bsynth_core::Vocabularies;

pub const DEFAULT_MODEL: &str = "gpt-4o-2024-0806";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    RemoteChat,
    #[default]
    Simulator,
    Replay,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "remote_chat" => Ok(Self::RemoteChat),
            "simulator" => Ok(Self::Simulator),
            "replay" => Ok(Self::Replay),
            other => Err(format!(
                "unknown backend kind {other:?} (remote_chat, simulator, replay)"
            )),
        }
    }
}

/// The API key itself never appears here, only the name of the environment
/// variable holding it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint_url: Option<String>,
    pub model_name: String,
    pub api_key_env_var: Option<String>,
    pub temperature: f64,
    pub request_timeout_secs: f64,
    /// Retries after a transport error, timeout, 429 or 5xx.
    pub max_retries: u32,
    pub max_inflight: usize,
    pub replay_path: Option<PathBuf>,
    /// Simulator backend fidelity; the seed comes from the run config.
    pub routine_strength: f64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Simulator,
            endpoint_url: None,
            model_name: DEFAULT_MODEL.into(),
            api_key_env_var: None,
            temperature: 0.7,
            request_timeout_secs: 120.0,
            max_retries: 2,
            max_inflight: 4,
            replay_path: None,
            routine_strength: 0.9,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_inflight == 0 {
            return Err("backend.max_inflight must be at least 1".into());
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(format!(
                "backend.temperature {} must be a finite value >= 0",
                self.temperature
            ));
        }
        match self.kind {
            BackendKind::RemoteChat => {
                if self.endpoint_url.as_deref().is_none_or(str::is_empty) {
                    return Err("remote_chat backend requires backend.endpoint_url".into());
                }
                if self.model_name.is_empty() {
                    return Err("remote_chat backend requires backend.model_name".into());
                }
                if self.api_key_env_var.as_deref().is_none_or(str::is_empty) {
                    return Err("remote_chat backend requires backend.api_key_env_var".into());
                }
                if !(self.request_timeout_secs > 0.0 && self.request_timeout_secs.is_finite()) {
                    return Err("backend.request_timeout_secs must be positive".into());
                }
            }
            BackendKind::Replay => {
                if self.replay_path.is_none() {
                    return Err("replay backend requires backend.replay_path".into());
                }
            }
            BackendKind::Simulator => {
                if !(0.0..=1.0).contains(&self.routine_strength) {
                    return Err(format!(
                        "backend.routine_strength {} outside [0,1]",
                        self.routine_strength
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 2],
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    content: Option<String>,
}

/// Client for a chat-completion style HTTP endpoint.
pub struct RemoteChat {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    temperature: f64,
    api_key: String,
    max_retries: u32,
}

impl std::fmt::Debug for RemoteChat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteChat")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("temperature", &self.temperature)
            .finish_non_exhaustive()
    }
}

impl RemoteChat {
    /// Reads the key from the configured environment variable; a missing or
    /// empty variable is a configuration error raised before any request.
    pub fn from_config(cfg: &BackendConfig) -> Result<Self, BackendError> {
        cfg.validate().map_err(|message| BackendError::Config { message })?;
        let var = cfg.api_key_env_var.clone().unwrap_or_default();
        let api_key = std::env::var(&var)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| BackendError::Config {
                message: format!("environment variable {var} is not set"),
            })?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.request_timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            endpoint: cfg.endpoint_url.clone().unwrap_or_default(),
            model: cfg.model_name.clone(),
            temperature: cfg.temperature,
            api_key,
            max_retries: cfg.max_retries,
        })
    }

    fn once(&self, body: &str) -> Result<String, (BackendError, bool)> {
        let resp = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .header("Content-Type", "application/json")
            .send(body);
        let mut resp = match resp {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Err((BackendError::Timeout, true)),
            Err(e) => return Err((BackendError::Transport { message: e.to_string() }, true)),
        };
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| {
            (
                BackendError::Transport {
                    message: format!("reading response body: {e}"),
                },
                true,
            )
        })?;
        if !(200..300).contains(&status) {
            log::warn!("endpoint returned {status}: {text}");
            let retry = status == 429 || status >= 500;
            return Err((
                BackendError::Status {
                    code: status,
                    body: text,
                },
                retry,
            ));
        }
        let parsed: ChatResponse = serde_json::from_str(&text).map_err(|e| {
            (
                BackendError::Transport {
                    message: format!("unexpected response document: {e}"),
                },
                false,
            )
        })?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| {
                (
                    BackendError::Transport {
                        message: "response has no message content".into(),
                    },
                    false,
                )
            })
    }
}

impl Generator for RemoteChat {
    fn complete(&self, req: &GenerationRequest<'_>) -> Result<String, BackendError> {
        let body = ChatRequest {
            model: &self.model,
            messages: [
                ChatMessage {
                    role: "system",
                    content: &req.bundle.system_text,
                },
                ChatMessage {
                    role: "user",
                    content: &req.bundle.user_text,
                },
            ],
            temperature: self.temperature,
        };
        let body = serde_json::to_string(&body).expect("serializable request");
        let mut attempt = 0;
        loop {
            match self.once(&body) {
                Ok(text) => return Ok(text),
                Err((err, retry)) if retry && attempt < self.max_retries => {
                    attempt += 1;
                    log::warn!(
                        "request for {} failed ({err}); retry {attempt}/{}",
                        req.user_id,
                        self.max_retries
                    );
                    std::thread::sleep(Duration::from_millis(200 << attempt.min(6)));
                }
                Err((err, _)) => return Err(err),
            }
        }
    }
}

/// One canned response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayRecord {
    #[serde(default)]
    pub run_index: u32,
    pub user_id: String,
    pub segment_index: u32,
    pub response: String,
}

type ReplayKey = (u32, String, u32);

/// Serves queued responses per `(run, user, segment)` in file order; each
/// call consumes one.
#[derive(Debug)]
pub struct Replay {
    queues: Mutex<BTreeMap<ReplayKey, VecDeque<String>>>,
}

impl Replay {
    pub fn new(records: Vec<ReplayRecord>) -> Self {
        let mut queues: BTreeMap<ReplayKey, VecDeque<String>> = BTreeMap::new();
        for r in records {
            queues
                .entry((r.run_index, r.user_id, r.segment_index))
                .or_default()
                .push_back(r.response);
        }
        Self {
            queues: Mutex::new(queues),
        }
    }

    /// Reads a JSON-lines replay file.
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = fs::read_to_string(path).map_err(|e| BackendError::Config {
            message: format!("{}: {e}", path.display()),
        })?;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: ReplayRecord = serde_json::from_str(line).map_err(|e| BackendError::Config {
                message: format!("{}: line {}: {e}", path.display(), i + 1),
            })?;
            records.push(r);
        }
        Ok(Self::new(records))
    }
}

impl Generator for Replay {
    fn complete(&self, req: &GenerationRequest<'_>) -> Result<String, BackendError> {
        let mut q = self.queues.lock().expect("replay lock");
        q.get_mut(&(req.run_index, req.user_id.to_string(), req.segment_index))
            .and_then(VecDeque::pop_front)
            .ok_or_else(|| BackendError::ReplayExhausted {
                user_id: req.user_id.into(),
                segment_index: req.segment_index,
            })
    }
}

#[derive(Debug, Default)]
struct ThrottleState {
    next_ticket: u64,
    serving: u64,
    inflight: usize,
    peak: usize,
}

/// Admission control: at most `limit` holders at once, admitted in arrival
/// order.
#[derive(Debug)]
pub struct Throttle {
    limit: usize,
    state: Mutex<ThrottleState>,
    cv: Condvar,
}

/// Releases its slot on drop.
#[derive(Debug)]
pub struct Permit<'a> {
    throttle: &'a Throttle,
}

impl Throttle {
    pub fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            state: Mutex::new(ThrottleState::default()),
            cv: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut s = self.state.lock().expect("throttle lock");
        let ticket = s.next_ticket;
        s.next_ticket += 1;
        // a caller enters only when it is next in line and a slot is free
        while !(s.serving == ticket && s.inflight < self.limit) {
            s = self.cv.wait(s).expect("throttle lock");
        }
        s.serving += 1;
        s.inflight += 1;
        s.peak = s.peak.max(s.inflight);
        drop(s);
        self.cv.notify_all();
        Permit { throttle: self }
    }

    /// Callers currently waiting for admission.
    pub fn queued(&self) -> usize {
        let s = self.state.lock().expect("throttle lock");
        (s.next_ticket - s.serving) as usize
    }

    /// Highest number of simultaneous holders seen so far.
    pub fn peak(&self) -> usize {
        self.state.lock().expect("throttle lock").peak
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut s = self.throttle.state.lock().expect("throttle lock");
        s.inflight -= 1;
        drop(s);
        self.throttle.cv.notify_all();
    }
}

/// A generator whose calls pass through a [`Throttle`].
#[derive(Debug)]
pub struct Throttled<G> {
    pub inner: G,
    pub throttle: Throttle,
}

impl<G: Generator> Generator for Throttled<G> {
    fn complete(&self, req: &GenerationRequest<'_>) -> Result<String, BackendError> {
        let _permit = self.throttle.acquire();
        self.inner.complete(req)
    }
}

pub type SharedGenerator = Box<dyn Generator + Send + Sync>;

/// Builds the configured backend. Remote clients are wrapped in a throttle
/// of `max_inflight`.
pub fn build_backend(cfg: &BackendConfig, seed: u64, vocab: &Vocabularies) -> Result<SharedGenerator, BackendError> {
    cfg.validate().map_err(|message| BackendError::Config { message })?;
    Ok(match cfg.kind {
        BackendKind::RemoteChat => Box::new(Throttled {
            inner: RemoteChat::from_config(cfg)?,
            throttle: Throttle::new(cfg.max_inflight),
        }),
        BackendKind::Simulator => Box::new(SimulatorGenerator::new(seed, cfg.routine_strength, vocab)),
        BackendKind::Replay => Box::new(Replay::load(cfg.replay_path.as_deref().expect("validated"))?),
    })
}
