//! Run manifest: everything needed to show two runs were the same run.
//!
//! A manifest records the config hash, dataset and fixture digests, the
//! seed plan, and template versions. It deliberately carries no
//! timestamps or host details, so reruns of the same inputs produce
//! byte-identical manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{hex_digest, RunConfig, SeedPlan};
use crate::prompt::template_versions;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_sha256: Option<String>,
    /// Digest of each replay fixture file, keyed by backend role.
    pub fixture_sha256: BTreeMap<String, String>,
    pub policy: String,
    pub k: usize,
    pub seeds: SeedPlan,
    pub template_versions: BTreeMap<String, String>,
}

pub fn file_sha256(path: &Path) -> Result<String, ManifestError> {
    let bytes = std::fs::read(path).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hex_digest(hasher))
}

impl RunManifest {
    pub fn build(config: &RunConfig, dataset_path: Option<&Path>) -> Result<Self, ManifestError> {
        let mut fixture_sha256 = BTreeMap::new();
        for (role, spec) in &config.backends {
            if let Some(path) = &spec.fixture_path {
                fixture_sha256.insert(role.to_string(), file_sha256(path)?);
            }
        }
        let dataset_sha256 = dataset_path.map(file_sha256).transpose()?;
        Ok(RunManifest {
            config_sha256: config.sha256(),
            dataset_sha256,
            fixture_sha256,
            policy: config.policy.kind_str().to_string(),
            k: config.k,
            seeds: config.seeds.clone(),
            template_versions: template_versions(),
        })
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}
