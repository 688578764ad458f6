//! Uniform access to generation backends: live HTTP endpoints,
//! deterministic replay fixtures, and scripted mocks.
//!
//! The wire protocol is a single JSON POST with body
//! `{model_id?, prompt, audio_ref, temperature, max_tokens, seed}` and
//! response `{text}`. Replay fixtures are JSONL lines
//! `{sample_id, role, seed, text, audio_ref?}`; lookups try the exact
//! audio_ref first and fall back to the ref-free entry, so enhanced-audio
//! decodes can be keyed by the enhanced reference.
//!
//! Replay and scripted backends report zero latency so replayed runs are
//! byte-stable across reruns and worker counts.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::{self, JsonlError};
use crate::prompt::PromptBundle;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("backend {backend_id}: request timed out")]
    Timeout { backend_id: String },
    #[error("backend {backend_id}: HTTP status {code}")]
    HttpStatus { backend_id: String, code: u16 },
    #[error("backend {backend_id}: malformed response: {message}")]
    MalformedResponse {
        backend_id: String,
        message: String,
    },
    #[error("backend {backend_id}: transport error: {message}")]
    Transport {
        backend_id: String,
        message: String,
    },
    #[error("backend {backend_id}: no fixture entry for ({sample_id}, {role}, {seed})")]
    FixtureMiss {
        backend_id: String,
        sample_id: String,
        role: BackendRole,
        seed: u64,
    },
    #[error("scripted backend {backend_id}: {message}")]
    Scripted {
        backend_id: String,
        message: String,
    },
    #[error("no backend configured for role {0}")]
    UnresolvedBackend(BackendRole),
    #[error("invalid sampling request: {0}")]
    InvalidSampling(String),
    #[error("invalid backend spec {backend_id}: {message}")]
    InvalidSpec {
        backend_id: String,
        message: String,
    },
    #[error(transparent)]
    Fixture(#[from] JsonlError),
}

impl GatewayError {
    /// Clone-ish summary for trace sidecars (the error itself is not Clone).
    pub fn summary(&self) -> String {
        self.to_string()
    }
}

/// Which slot of the pipeline a request serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendRole {
    Internal,
    External,
    Ger,
    Arbiter,
    Rewrite,
}

impl BackendRole {
    pub fn as_str(&self) -> &'static str {
        match self {
            BackendRole::Internal => "internal",
            BackendRole::External => "external",
            BackendRole::Ger => "ger",
            BackendRole::Arbiter => "arbiter",
            BackendRole::Rewrite => "rewrite",
        }
    }

    pub fn all() -> [BackendRole; 5] {
        [
            BackendRole::Internal,
            BackendRole::External,
            BackendRole::Ger,
            BackendRole::Arbiter,
            BackendRole::Rewrite,
        ]
    }
}

impl std::fmt::Display for BackendRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Decode parameters forwarded to backends. Greedy decoding
/// (temperature 0) is the default for arbiter calls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_ms: u64,
    pub retries: u32,
}

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams {
            temperature: 0.0,
            max_tokens: 256,
            timeout_ms: 10_000,
            retries: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Replay,
    Scripted,
}

/// Builtin scripted behaviours expressible from a config file.
/// Programmatic closures go through [`ScriptedBackend::new`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "script")]
pub enum ScriptSpec {
    /// Return the request role name as the text.
    EchoRole,
    /// Return a constant text.
    Constant { text: String },
    /// Return the flattened prompt text.
    EchoPrompt,
}

/// Declarative backend description (the config-file form).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSpec {
    pub backend_id: String,
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    #[serde(default, flatten)]
    pub script: Option<ScriptSpec>,
    #[serde(default)]
    pub decode: DecodeParams,
}

impl BackendSpec {
    pub fn validate(&self) -> Result<(), GatewayError> {
        let fail = |message: &str| {
            Err(GatewayError::InvalidSpec {
                backend_id: self.backend_id.clone(),
                message: message.to_string(),
            })
        };
        match self.kind {
            BackendKind::Http => {
                if self.endpoint_url.is_none() {
                    return fail("http backend requires endpoint_url");
                }
                if self.fixture_path.is_some() {
                    return fail("http backend must not set fixture_path");
                }
            }
            BackendKind::Replay => {
                if self.fixture_path.is_none() {
                    return fail("replay backend requires fixture_path");
                }
                if self.endpoint_url.is_some() {
                    return fail("replay backend must not set endpoint_url");
                }
            }
            BackendKind::Scripted => {
                if self.script.is_none() {
                    return fail("scripted backend requires a script");
                }
            }
        }
        Ok(())
    }
}

/// Prompt payload of a request: a structured bundle or a raw instruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RequestPrompt {
    Bundle(PromptBundle),
    Raw(String),
}

impl RequestPrompt {
    /// The flat string actually sent over the wire.
    pub fn wire_text(&self) -> String {
        match self {
            RequestPrompt::Bundle(bundle) => bundle.render_flat(),
            RequestPrompt::Raw(text) => text.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub sample_id: String,
    pub role: BackendRole,
    pub prompt: RequestPrompt,
    pub audio_ref: String,
    pub seed: u64,
}

/// A backend emission, text byte-preserved.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    pub latency_ms: u64,
    pub backend_id: String,
    pub seed: u64,
    pub truncated: bool,
}

pub trait Generator: Send + Sync {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResult, GatewayError>;
    fn backend_id(&self) -> &str;
}

// ---------------------------------------------------------------------------
// HTTP backend

#[derive(Serialize)]
struct WireRequest<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    model_id: Option<&'a str>,
    prompt: String,
    audio_ref: &'a str,
    temperature: f64,
    max_tokens: u32,
    seed: u64,
}

#[derive(Deserialize)]
struct WireResponse {
    text: String,
    #[serde(default)]
    truncated: bool,
}

pub struct HttpBackend {
    spec: BackendSpec,
    client: reqwest::blocking::Client,
    auth_token: Option<String>,
}

impl HttpBackend {
    pub fn new(spec: BackendSpec, auth_token: Option<String>) -> Result<Self, GatewayError> {
        spec.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_millis(spec.decode.timeout_ms))
            .build()
            .map_err(|e| GatewayError::Transport {
                backend_id: spec.backend_id.clone(),
                message: e.to_string(),
            })?;
        Ok(HttpBackend {
            spec,
            client,
            auth_token,
        })
    }

    fn attempt(&self, req: &GenerationRequest) -> Result<WireResponse, GatewayError> {
        let backend_id = self.spec.backend_id.clone();
        let body = WireRequest {
            model_id: self.spec.model_id.as_deref(),
            prompt: req.prompt.wire_text(),
            audio_ref: &req.audio_ref,
            temperature: self.spec.decode.temperature,
            max_tokens: self.spec.decode.max_tokens,
            seed: req.seed,
        };
        let url = self.spec.endpoint_url.as_deref().expect("validated");
        let mut http_req = self.client.post(url).json(&body);
        if let Some(token) = &self.auth_token {
            http_req = http_req.bearer_auth(token);
        }
        let response = http_req.send().map_err(|e| {
            if e.is_timeout() {
                GatewayError::Timeout {
                    backend_id: backend_id.clone(),
                }
            } else {
                GatewayError::Transport {
                    backend_id: backend_id.clone(),
                    message: e.to_string(),
                }
            }
        })?;
        let status = response.status();
        if !status.is_success() {
            return Err(GatewayError::HttpStatus {
                backend_id,
                code: status.as_u16(),
            });
        }
        response
            .json::<WireResponse>()
            .map_err(|e| GatewayError::MalformedResponse {
                backend_id,
                message: e.to_string(),
            })
    }
}

impl Generator for HttpBackend {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResult, GatewayError> {
        let start = Instant::now();
        let mut last_err = None;
        for _ in 0..=self.spec.decode.retries {
            match self.attempt(req) {
                Ok(wire) => {
                    return Ok(GenerationResult {
                        text: wire.text,
                        latency_ms: start.elapsed().as_millis() as u64,
                        backend_id: self.spec.backend_id.clone(),
                        seed: req.seed,
                        truncated: wire.truncated,
                    })
                }
                Err(e) => {
                    let retryable = match &e {
                        GatewayError::Timeout { .. } | GatewayError::Transport { .. } => true,
                        GatewayError::HttpStatus { code, .. } => *code >= 500,
                        _ => false,
                    };
                    last_err = Some(e);
                    if !retryable {
                        break;
                    }
                }
            }
        }
        Err(last_err.expect("at least one attempt"))
    }

    fn backend_id(&self) -> &str {
        &self.spec.backend_id
    }
}

// ---------------------------------------------------------------------------
// Replay backend

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayLine {
    pub sample_id: String,
    pub role: BackendRole,
    pub seed: u64,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_ref: Option<String>,
}

type ReplayKey = (String, BackendRole, u64, Option<String>);

pub struct ReplayBackend {
    backend_id: String,
    entries: HashMap<ReplayKey, String>,
}

impl ReplayBackend {
    pub fn from_file(backend_id: &str, path: &Path) -> Result<Self, GatewayError> {
        let lines: Vec<ReplayLine> = jsonl::read_jsonl(path)?;
        Ok(Self::from_lines(backend_id, lines))
    }

    pub fn from_lines(backend_id: &str, lines: Vec<ReplayLine>) -> Self {
        let mut entries = HashMap::new();
        for line in lines {
            entries.insert(
                (line.sample_id, line.role, line.seed, line.audio_ref),
                line.text,
            );
        }
        ReplayBackend {
            backend_id: backend_id.to_string(),
            entries,
        }
    }
}

impl Generator for ReplayBackend {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResult, GatewayError> {
        let exact = (
            req.sample_id.clone(),
            req.role,
            req.seed,
            Some(req.audio_ref.clone()),
        );
        let fallback = (req.sample_id.clone(), req.role, req.seed, None);
        let text = self
            .entries
            .get(&exact)
            .or_else(|| self.entries.get(&fallback))
            .ok_or_else(|| GatewayError::FixtureMiss {
                backend_id: self.backend_id.clone(),
                sample_id: req.sample_id.clone(),
                role: req.role,
                seed: req.seed,
            })?;
        Ok(GenerationResult {
            text: text.clone(),
            latency_ms: 0,
            backend_id: self.backend_id.clone(),
            seed: req.seed,
            truncated: false,
        })
    }

    fn backend_id(&self) -> &str {
        &self.backend_id
    }
}

// ---------------------------------------------------------------------------
// Scripted backend

type ScriptFn = dyn Fn(&GenerationRequest) -> Result<String, GatewayError> + Send + Sync;

pub struct ScriptedBackend {
    backend_id: String,
    func: Arc<ScriptFn>,
}

impl ScriptedBackend {
    pub fn new<F>(backend_id: &str, func: F) -> Self
    where
        F: Fn(&GenerationRequest) -> Result<String, GatewayError> + Send + Sync + 'static,
    {
        ScriptedBackend {
            backend_id: backend_id.to_string(),
            func: Arc::new(func),
        }
    }

    pub fn from_spec(backend_id: &str, spec: &ScriptSpec) -> Self {
        match spec {
            ScriptSpec::EchoRole => {
                ScriptedBackend::new(backend_id, |req| Ok(req.role.as_str().to_string()))
            }
            ScriptSpec::Constant { text } => {
                let text = text.clone();
                ScriptedBackend::new(backend_id, move |_| Ok(text.clone()))
            }
            ScriptSpec::EchoPrompt => {
                ScriptedBackend::new(backend_id, |req| Ok(req.prompt.wire_text()))
            }
        }
    }
}

impl Generator for ScriptedBackend {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResult, GatewayError> {
        let text = (self.func)(req)?;
        Ok(GenerationResult {
            text,
            latency_ms: 0,
            backend_id: self.backend_id.clone(),
            seed: req.seed,
            truncated: false,
        })
    }

    fn backend_id(&self) -> &str {
        &self.backend_id
    }
}

// ---------------------------------------------------------------------------
// k-sample decoding

/// Decode `seeds.len()` times. Results come back in seed order regardless
/// of completion order; a failed slot stays a per-slot error rather than
/// truncating the list.
pub fn sample_k(
    generator: &dyn Generator,
    req: &GenerationRequest,
    seeds: &[u64],
) -> Result<Vec<Result<GenerationResult, GatewayError>>, GatewayError> {
    if seeds.is_empty() {
        return Err(GatewayError::InvalidSampling("k must be >= 1".to_string()));
    }
    let mut unique = std::collections::HashSet::new();
    for seed in seeds {
        if !unique.insert(*seed) {
            return Err(GatewayError::InvalidSampling(format!(
                "duplicate seed {seed}"
            )));
        }
    }
    use rayon::prelude::*;
    let results: Vec<Result<GenerationResult, GatewayError>> = seeds
        .par_iter()
        .map(|seed| {
            let slot_req = GenerationRequest {
                seed: *seed,
                ..req.clone()
            };
            generator.generate(&slot_req)
        })
        .collect();
    Ok(results)
}

// ---------------------------------------------------------------------------
// Gateway

struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore {
            permits: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.cv.wait(permits).unwrap();
        }
        *permits -= 1;
        SemaphoreGuard(self)
    }
}

struct SemaphoreGuard<'a>(&'a Semaphore);

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

/// Role-indexed backend table, shareable across workers. An optional
/// global in-flight limit caps concurrent backend calls.
pub struct Gateway {
    backends: BTreeMap<BackendRole, Arc<dyn Generator>>,
    limiter: Option<Semaphore>,
}

impl Default for Gateway {
    fn default() -> Self {
        Gateway::new()
    }
}

impl Gateway {
    pub fn new() -> Self {
        Gateway {
            backends: BTreeMap::new(),
            limiter: None,
        }
    }

    pub fn with_max_in_flight(mut self, limit: usize) -> Self {
        if limit > 0 {
            self.limiter = Some(Semaphore::new(limit));
        }
        self
    }

    pub fn insert(&mut self, role: BackendRole, generator: Arc<dyn Generator>) {
        self.backends.insert(role, generator);
    }

    pub fn has(&self, role: BackendRole) -> bool {
        self.backends.contains_key(&role)
    }

    pub fn resolve(&self, role: BackendRole) -> Result<&Arc<dyn Generator>, GatewayError> {
        self.backends
            .get(&role)
            .ok_or(GatewayError::UnresolvedBackend(role))
    }

    pub fn generate(
        &self,
        role: BackendRole,
        req: &GenerationRequest,
    ) -> Result<GenerationResult, GatewayError> {
        let backend = self.resolve(role)?;
        let _guard = self.limiter.as_ref().map(|l| l.acquire());
        backend.generate(req)
    }

    pub fn sample_k(
        &self,
        role: BackendRole,
        req: &GenerationRequest,
        seeds: &[u64],
    ) -> Result<Vec<Result<GenerationResult, GatewayError>>, GatewayError> {
        let backend = self.resolve(role)?;
        // The limiter applies per slot, not around the whole fan-out.
        if self.limiter.is_some() {
            if seeds.is_empty() {
                return Err(GatewayError::InvalidSampling("k must be >= 1".to_string()));
            }
            let limited = LimitedGenerator {
                inner: backend.clone(),
                gateway: self,
            };
            sample_k(&limited, req, seeds)
        } else {
            sample_k(backend.as_ref(), req, seeds)
        }
    }
}

struct LimitedGenerator<'a> {
    inner: Arc<dyn Generator>,
    gateway: &'a Gateway,
}

impl Generator for LimitedGenerator<'_> {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResult, GatewayError> {
        let _guard = self.gateway.limiter.as_ref().map(|l| l.acquire());
        self.inner.generate(req)
    }

    fn backend_id(&self) -> &str {
        self.inner.backend_id()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(sample_id: &str, role: BackendRole, seed: u64) -> GenerationRequest {
        GenerationRequest {
            sample_id: sample_id.to_string(),
            role,
            prompt: RequestPrompt::Raw("go".to_string()),
            audio_ref: format!("audio/{sample_id}.wav"),
            seed,
        }
    }

    fn replay_with(entries: &[(&str, BackendRole, u64, &str)]) -> ReplayBackend {
        ReplayBackend::from_lines(
            "replay-test",
            entries
                .iter()
                .map(|(sid, role, seed, text)| ReplayLine {
                    sample_id: sid.to_string(),
                    role: *role,
                    seed: *seed,
                    text: text.to_string(),
                    audio_ref: None,
                })
                .collect(),
        )
    }

    #[test]
    fn replay_lookup_hits() {
        let backend = replay_with(&[("s1", BackendRole::Internal, 0, "hello")]);
        let result = backend.generate(&req("s1", BackendRole::Internal, 0)).unwrap();
        assert_eq!(result.text, "hello");
        assert_eq!(result.latency_ms, 0);
    }

    #[test]
    fn replay_miss_is_error() {
        let backend = replay_with(&[("s1", BackendRole::Internal, 0, "hello")]);
        let err = backend
            .generate(&req("s1", BackendRole::Internal, 1))
            .unwrap_err();
        assert!(matches!(err, GatewayError::FixtureMiss { seed: 1, .. }));
    }

    #[test]
    fn replay_prefers_audio_ref_specific_entry() {
        let backend = ReplayBackend::from_lines(
            "replay-test",
            vec![
                ReplayLine {
                    sample_id: "s1".to_string(),
                    role: BackendRole::Internal,
                    seed: 0,
                    text: "noisy".to_string(),
                    audio_ref: None,
                },
                ReplayLine {
                    sample_id: "s1".to_string(),
                    role: BackendRole::Internal,
                    seed: 0,
                    text: "clean".to_string(),
                    audio_ref: Some("audio/s1.bnr.wav".to_string()),
                },
            ],
        );
        let mut request = req("s1", BackendRole::Internal, 0);
        assert_eq!(backend.generate(&request).unwrap().text, "noisy");
        request.audio_ref = "audio/s1.bnr.wav".to_string();
        assert_eq!(backend.generate(&request).unwrap().text, "clean");
    }

    #[test]
    fn scripted_echo_role() {
        let backend = ScriptedBackend::from_spec("sb", &ScriptSpec::EchoRole);
        let result = backend.generate(&req("s1", BackendRole::Ger, 0)).unwrap();
        assert_eq!(result.text, "ger");
    }

    #[test]
    fn sample_k_returns_in_seed_order_despite_delays() {
        let backend = ScriptedBackend::new("slow", |r| {
            // Later seeds finish first.
            std::thread::sleep(std::time::Duration::from_millis(20u64.saturating_sub(r.seed * 4)));
            Ok(format!("out-{}", r.seed))
        });
        let results = sample_k(&backend, &req("s1", BackendRole::External, 0), &[1, 2, 3, 4, 5])
            .unwrap();
        let texts: Vec<String> = results
            .into_iter()
            .map(|r| r.unwrap().text)
            .collect();
        assert_eq!(texts, vec!["out-1", "out-2", "out-3", "out-4", "out-5"]);
    }

    #[test]
    fn sample_k_partial_failure_keeps_slots() {
        let backend = replay_with(&[
            ("s1", BackendRole::External, 1, "C"),
            ("s1", BackendRole::External, 2, "C"),
            ("s1", BackendRole::External, 4, "B"),
            ("s1", BackendRole::External, 5, "D"),
        ]);
        let results =
            sample_k(&backend, &req("s1", BackendRole::External, 0), &[1, 2, 3, 4, 5]).unwrap();
        assert_eq!(results.len(), 5);
        assert!(results[2].is_err());
        assert_eq!(results[0].as_ref().unwrap().text, "C");
        assert_eq!(results[4].as_ref().unwrap().text, "D");
    }

    #[test]
    fn sample_k_k1_equals_generate() {
        let backend = replay_with(&[("s1", BackendRole::External, 7, "only")]);
        let results = sample_k(&backend, &req("s1", BackendRole::External, 0), &[7]).unwrap();
        assert_eq!(results.len(), 1);
        assert_eq!(results[0].as_ref().unwrap().text, "only");
        let direct = backend.generate(&req("s1", BackendRole::External, 7)).unwrap();
        assert_eq!(results[0].as_ref().unwrap(), &direct);
    }

    #[test]
    fn sample_k_rejects_duplicate_seeds() {
        let backend = replay_with(&[]);
        let err = sample_k(&backend, &req("s1", BackendRole::External, 0), &[1, 1]).unwrap_err();
        assert!(matches!(err, GatewayError::InvalidSampling(_)));
        let err = sample_k(&backend, &req("s1", BackendRole::External, 0), &[]).unwrap_err();
        assert!(matches!(err, GatewayError::InvalidSampling(_)));
    }

    #[test]
    fn spec_validation() {
        let mut spec = BackendSpec {
            backend_id: "b".to_string(),
            kind: BackendKind::Http,
            endpoint_url: None,
            fixture_path: None,
            model_id: None,
            script: None,
            decode: DecodeParams::default(),
        };
        assert!(spec.validate().is_err());
        spec.endpoint_url = Some("http://localhost:9/generate".to_string());
        assert!(spec.validate().is_ok());
        spec.kind = BackendKind::Replay;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn in_flight_limit_serializes_backend_calls() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        let active = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let (active_c, peak_c) = (active.clone(), peak.clone());
        let mut gateway = Gateway::new().with_max_in_flight(1);
        gateway.insert(
            BackendRole::External,
            Arc::new(ScriptedBackend::new("slow", move |r| {
                let now = active_c.fetch_add(1, Ordering::SeqCst) + 1;
                peak_c.fetch_max(now, Ordering::SeqCst);
                std::thread::sleep(std::time::Duration::from_millis(2));
                active_c.fetch_sub(1, Ordering::SeqCst);
                Ok(format!("out-{}", r.seed))
            })),
        );
        let results = gateway
            .sample_k(
                BackendRole::External,
                &req("s1", BackendRole::External, 0),
                &[1, 2, 3, 4, 5, 6],
            )
            .unwrap();
        assert!(results.iter().all(|r| r.is_ok()));
        assert_eq!(peak.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn gateway_resolves_roles() {
        let mut gateway = Gateway::new();
        gateway.insert(
            BackendRole::Internal,
            Arc::new(ScriptedBackend::from_spec("sb", &ScriptSpec::EchoRole)),
        );
        assert!(gateway.has(BackendRole::Internal));
        let out = gateway
            .generate(BackendRole::Internal, &req("s1", BackendRole::Internal, 0))
            .unwrap();
        assert_eq!(out.text, "internal");
        assert!(matches!(
            gateway.generate(BackendRole::Ger, &req("s1", BackendRole::Ger, 0)),
            Err(GatewayError::UnresolvedBackend(BackendRole::Ger))
        ));
    }
}
