//! Run configuration: a single TOML file describing backends by role,
//! the arbitration policy, normalization, seeds, and knobs.
//!
//! Relative fixture paths resolve against the config file's directory.
//! `SHH_BACKEND_<ROLE>_URL` environment variables override a role's
//! backend with a live HTTP endpoint; `SHH_AUTH_TOKEN` is forwarded as a
//! bearer token on HTTP calls.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::TaskKind;
use crate::gateway::{
    BackendKind, BackendRole, BackendSpec, Gateway, GatewayError, HttpBackend, ReplayBackend,
    ScriptedBackend,
};
use crate::router::ArbitrationPolicy;
use crate::text_metrics::NormalizationPolicy;
use crate::tools::{ToolError, ToolRegistry, ToolSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Tool(#[from] ToolError),
}

/// Optional pre-arbiter tool hint: when the internal first pass contains
/// one of the markers (case-insensitive), the router applies the tool
/// before asking the arbiter. A hint that cannot fire (unregistered tool,
/// failed enhancement, depth exhausted) is annotated and ignored; it is
/// never a hard rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolHint {
    pub tool: String,
    pub internal_markers: Vec<String>,
}

/// Seeds for every pipeline role. External seeds are positional: slot i
/// of a k-sample decode uses `external[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeedPlan {
    pub internal: u64,
    pub external: Vec<u64>,
    pub ger: u64,
    pub arbiter: u64,
    pub rewrite: u64,
}

impl Default for SeedPlan {
    fn default() -> Self {
        SeedPlan {
            internal: 0,
            external: vec![1, 2, 3, 4, 5],
            ger: 6,
            arbiter: 7,
            rewrite: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Task the labeling rule applies to; routing reads each sample's own
    /// task instead.
    pub task: Option<TaskKind>,
    /// Number of external samples per decode (N-best size for ASR,
    /// majority-vote width for QA).
    pub k: usize,
    pub max_tool_depth: usize,
    pub strict: bool,
    pub workers: usize,
    /// When the arbiter already emitted `<rewrite> text`, reuse that text
    /// as the final answer instead of a separate rewrite call.
    pub reuse_rewrite_payload: bool,
    pub max_in_flight: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub policy: ArbitrationPolicy,
    pub normalization: NormalizationPolicy,
    pub seeds: SeedPlan,
    pub backends: BTreeMap<BackendRole, BackendSpec>,
    pub tools: BTreeMap<String, ToolSpec>,
    pub tool_hint: Option<ToolHint>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: None,
            k: 5,
            max_tool_depth: 1,
            strict: false,
            workers: 1,
            reuse_rewrite_payload: true,
            max_in_flight: None,
            out_dir: None,
            policy: ArbitrationPolicy::default(),
            normalization: NormalizationPolicy::default(),
            seeds: SeedPlan::default(),
            backends: BTreeMap::new(),
            tools: BTreeMap::new(),
            tool_hint: None,
        }
    }
}

impl RunConfig {
    /// Parse a TOML config file, resolve relative fixture paths against
    /// the file's directory, apply environment overrides, and validate.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: RunConfig = toml::from_str(&raw).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.resolve_paths(base);
        config.apply_env_overrides();
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        for spec in self.backends.values_mut() {
            if let Some(fixture) = &spec.fixture_path {
                if fixture.is_relative() {
                    spec.fixture_path = Some(base.join(fixture));
                }
            }
        }
    }

    fn apply_env_overrides(&mut self) {
        for role in BackendRole::all() {
            let var = format!("SHH_BACKEND_{}_URL", role.as_str().to_uppercase());
            if let Ok(url) = std::env::var(&var) {
                if url.is_empty() {
                    continue;
                }
                let spec = self
                    .backends
                    .entry(role)
                    .or_insert_with(|| BackendSpec {
                        backend_id: format!("{role}-http"),
                        kind: BackendKind::Http,
                        endpoint_url: None,
                        fixture_path: None,
                        model_id: None,
                        script: None,
                        decode: Default::default(),
                    });
                spec.kind = BackendKind::Http;
                spec.endpoint_url = Some(url);
                spec.fixture_path = None;
                spec.script = None;
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.k == 0 {
            return Err(ConfigError::Invalid("k must be >= 1".to_string()));
        }
        if self.seeds.external.len() < self.k {
            return Err(ConfigError::Invalid(format!(
                "k = {} but only {} external seeds configured",
                self.k,
                self.seeds.external.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for seed in self.external_seed_slice() {
            if !seen.insert(*seed) {
                return Err(ConfigError::Invalid(format!(
                    "duplicate external seed {seed}"
                )));
            }
        }
        if self.workers == 0 {
            return Err(ConfigError::Invalid("workers must be >= 1".to_string()));
        }
        self.policy
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for spec in self.backends.values() {
            spec.validate()?;
        }
        Ok(())
    }

    /// The first k external seeds.
    pub fn external_seed_slice(&self) -> &[u64] {
        &self.seeds.external[..self.k.min(self.seeds.external.len())]
    }

    pub fn temperature(&self, role: BackendRole) -> f64 {
        self.backends
            .get(&role)
            .map(|spec| spec.decode.temperature)
            .unwrap_or(0.0)
    }

    /// Require that backends exist for the given roles.
    pub fn require_backends(&self, roles: &[BackendRole]) -> Result<(), ConfigError> {
        for role in roles {
            if !self.backends.contains_key(role) {
                return Err(ConfigError::Invalid(format!(
                    "no backend configured for role {role}"
                )));
            }
        }
        Ok(())
    }

    /// Instantiate the gateway from the backend specs.
    pub fn build_gateway(&self) -> Result<Gateway, ConfigError> {
        let auth_token = std::env::var("SHH_AUTH_TOKEN").ok().filter(|t| !t.is_empty());
        let mut gateway = Gateway::new();
        if let Some(limit) = self.max_in_flight {
            gateway = gateway.with_max_in_flight(limit);
        }
        for (role, spec) in &self.backends {
            let generator: Arc<dyn crate::gateway::Generator> = match spec.kind {
                BackendKind::Http => {
                    Arc::new(HttpBackend::new(spec.clone(), auth_token.clone())?)
                }
                BackendKind::Replay => {
                    let path = spec.fixture_path.as_ref().expect("validated");
                    Arc::new(ReplayBackend::from_file(&spec.backend_id, path)?)
                }
                BackendKind::Scripted => {
                    let script = spec.script.as_ref().expect("validated");
                    Arc::new(ScriptedBackend::from_spec(&spec.backend_id, script))
                }
            };
            gateway.insert(*role, generator);
        }
        Ok(gateway)
    }

    /// Instantiate the tool registry; map keys become tool names.
    pub fn build_tool_registry(&self) -> Result<ToolRegistry, ConfigError> {
        let mut registry = ToolRegistry::new();
        for (name, entry) in &self.tools {
            let mut spec = entry.clone();
            spec.tool_name = name.clone();
            registry.register(spec)?;
        }
        Ok(registry)
    }

    /// Canonical JSON used for hashing; map ordering is stable and
    /// execution-only knobs (workers, in-flight limit, strictness,
    /// output path) are normalized away so they cannot change the run's
    /// identity.
    pub fn canonical_json(&self) -> String {
        let mut canon = self.clone();
        canon.workers = 1;
        canon.max_in_flight = None;
        canon.strict = false;
        canon.out_dir = None;
        serde_json::to_string(&canon).expect("config serializes")
    }

    pub fn sha256(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.canonical_json().as_bytes());
        hex_digest(hasher)
    }
}

pub(crate) fn hex_digest(hasher: Sha256) -> String {
    let bytes = hasher.finalize();
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
    }
    out
}
