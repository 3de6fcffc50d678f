//! TOML run configuration. Unknown keys anywhere are rejected.
//!
//! A spec file holds a `[spec]` table; a risk file holds optional `[risk]`
//! and `[replay]` tables. [`RunConfig`] is the union of both.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::model::VariantSpec;
use crate::replay::{BatchRun, ReplayConfig};
use crate::risk::RiskConfig;

use super::{load_data_dir, IoError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecFile {
    pub spec: VariantSpec,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskFile {
    #[serde(default)]
    pub risk: RiskConfig,
    #[serde(default)]
    pub replay: ReplayConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub spec: VariantSpec,
    #[serde(default)]
    pub risk: RiskConfig,
    #[serde(default)]
    pub replay: ReplayConfig,
}

impl RunConfig {
    pub fn from_toml(s: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(s)
    }

    pub fn to_toml(&self) -> Result<String, toml::ser::Error> {
        toml::to_string(self)
    }
}

fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    toml::from_str(&text).map_err(|e| IoError::Config {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn load_spec_file(path: impl AsRef<Path>) -> Result<VariantSpec, IoError> {
    read_toml::<SpecFile>(path.as_ref()).map(|f| f.spec)
}

pub fn load_risk_file(path: impl AsRef<Path>) -> Result<RiskFile, IoError> {
    read_toml(path.as_ref())
}

/// Spec file plus an optional risk file; defaults fill whatever is absent.
pub fn load_run_config(spec: impl AsRef<Path>, risk: Option<&Path>) -> Result<RunConfig, IoError> {
    let spec = load_spec_file(spec)?;
    let rf = match risk {
        Some(p) => load_risk_file(p)?,
        None => RiskFile::default(),
    };
    Ok(RunConfig {
        spec,
        risk: rf.risk,
        replay: rf.replay,
    })
}

// --- batch manifests

/// One `[[run]]` entry. Paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRun {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub spec: PathBuf,
    pub data: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub risk: Option<PathBuf>,
    /// Overrides `replay.seed` from the risk file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchManifest {
    #[serde(default)]
    pub run: Vec<ManifestRun>,
}

/// Reads a manifest and loads every referenced spec, risk file and data
/// directory. Unlabelled runs are named `run<N>` by position.
pub fn load_batch_manifest(path: impl AsRef<Path>) -> Result<Vec<BatchRun>, IoError> {
    let path = path.as_ref();
    let manifest: BatchManifest = read_toml(path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    manifest
        .run
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let risk = r.risk.as_ref().map(|p| base.join(p));
            let cfg = load_run_config(base.join(&r.spec), risk.as_deref())?;
            let data = load_data_dir(base.join(&r.data))?;
            let mut config = cfg.replay;
            if let Some(seed) = r.seed {
                config.seed = seed;
            }
            Ok(BatchRun {
                label: r.label.clone().unwrap_or_else(|| format!("run{i:03}")),
                spec: cfg.spec,
                data,
                risk: cfg.risk,
                config,
            })
        })
        .collect()
}
