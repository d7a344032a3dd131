//! Run configuration, seed splitting, atomic writes and the write-once
//! store of frozen oracle values.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::exact_oracle::EnumLimits;

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("config field `{field}`: {reason}")]
    Field { field: &'static str, reason: String },
    #[error("fixture `{0}` is missing; run the fixture bootstrap")]
    Missing(String),
    #[error("fixture `{key}` already holds {stored:?}, refusing {offered:?}")]
    Overwrite {
        key: String,
        stored: Vec<f64>,
        offered: Vec<f64>,
    },
    #[error("fixture file: {0}")]
    Format(String),
}

/// Writes `bytes` to a temporary file beside `path`, then renames it over
/// `path`, so readers never see a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), RuntimeError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let wrap = |source| RuntimeError::Write {
        path: path.to_path_buf(),
        source,
    };
    fs::create_dir_all(dir).map_err(wrap)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(wrap)?;
    tmp.write_all(bytes).map_err(wrap)?;
    tmp.as_file().sync_all().map_err(wrap)?;
    tmp.persist(path).map_err(|e| wrap(e.error))?;
    Ok(())
}

/// Derives an independent stream seed from a base seed and point labels
/// (SplitMix64 finalizer over each label).
pub fn split_seed(seed: u64, labels: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    labels.iter().fold(mix(seed), |acc, &l| mix(acc ^ mix(l)))
}

/// Record output format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

impl FromStr for OutputFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            other => Err(format!("unknown format `{other}` (json or csv)")),
        }
    }
}

impl OutputFormat {
    /// Format implied by a file extension, if any.
    pub fn from_path(path: &Path) -> Option<OutputFormat> {
        path.extension()?.to_str()?.parse().ok()
    }
}

/// Validated parameters of a run. Every field has a default; a config file
/// overrides the defaults and command-line flags override the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub d: usize,
    pub p: Vec<f64>,
    #[serde(rename = "L")]
    pub l: Vec<i64>,
    pub seed: u64,
    /// Total sweeps per replica, burn-in included.
    pub sweeps: u64,
    pub burn_in: u64,
    pub replicas: u64,
    /// Cap on unpruned enumeration sites.
    pub max_enum: usize,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub format: OutputFormat,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            d: 2,
            p: vec![0.95],
            l: vec![10],
            seed: 1,
            sweeps: 100_000,
            burn_in: 10_000,
            replicas: 4,
            max_enum: EnumLimits::default().full_cap,
            threads: None,
            out: None,
            format: OutputFormat::Json,
        }
    }
}

/// Partial settings from one source; `None` leaves the lower layer as is.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    pub d: Option<usize>,
    pub p: Option<OneOrMany<f64>>,
    #[serde(rename = "L")]
    pub l: Option<OneOrMany<i64>>,
    pub seed: Option<u64>,
    pub sweeps: Option<u64>,
    pub burn_in: Option<u64>,
    pub replicas: Option<u64>,
    pub max_enum: Option<usize>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub format: Option<OutputFormat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn into_vec(self) -> Vec<T> {
        match self {
            OneOrMany::One(x) => vec![x],
            OneOrMany::Many(v) => v,
        }
    }
}

impl ConfigLayer {
    pub fn parse(text: &str) -> Result<ConfigLayer, RuntimeError> {
        toml::from_str(text).map_err(|e| RuntimeError::Syntax(e.to_string()))
    }

    fn apply(self, cfg: &mut RunConfig) {
        if let Some(v) = self.d {
            cfg.d = v;
        }
        if let Some(v) = self.p {
            cfg.p = v.into_vec();
        }
        if let Some(v) = self.l {
            cfg.l = v.into_vec();
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.sweeps {
            cfg.sweeps = v;
        }
        if let Some(v) = self.burn_in {
            cfg.burn_in = v;
        }
        if let Some(v) = self.replicas {
            cfg.replicas = v;
        }
        if let Some(v) = self.max_enum {
            cfg.max_enum = v;
        }
        if self.threads.is_some() {
            cfg.threads = self.threads;
        }
        if let Some(v) = self.out {
            cfg.out = Some(v);
        }
        if let Some(v) = self.format {
            cfg.format = v;
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), RuntimeError> {
        let bad = |field, reason: String| Err(RuntimeError::Field { field, reason });
        if !(1..=8).contains(&self.d) {
            return bad("d", format!("dimension must be in 1..=8, got {}", self.d));
        }
        if self.p.is_empty() {
            return bad("p", "at least one probability is required".into());
        }
        if let Some(p) = self.p.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return bad("p", format!("probabilities must lie in (0, 1), got {p}"));
        }
        if self.l.is_empty() {
            return bad("L", "at least one volume size is required".into());
        }
        if let Some(l) = self.l.iter().find(|l| **l < 1) {
            return bad("L", format!("volume sizes must be positive, got {l}"));
        }
        if self.sweeps == 0 {
            return bad("sweeps", "must be positive".into());
        }
        if self.burn_in >= self.sweeps {
            return bad(
                "burn_in",
                format!("must be below sweeps ({}), got {}", self.sweeps, self.burn_in),
            );
        }
        if self.replicas == 0 {
            return bad("replicas", "must be positive".into());
        }
        if self.max_enum == 0 || self.max_enum > 40 {
            return bad("max_enum", format!("must be in 1..=40, got {}", self.max_enum));
        }
        if self.threads == Some(0) {
            return bad("threads", "must be positive".into());
        }
        Ok(())
    }

    /// Enumeration limits with this config's unpruned cap.
    pub fn limits(&self) -> EnumLimits {
        EnumLimits {
            full_cap: self.max_enum,
            ..EnumLimits::default()
        }
    }

    /// Output format: explicit setting, else the extension of `out`.
    pub fn output_format(&self) -> OutputFormat {
        self.out
            .as_deref()
            .and_then(OutputFormat::from_path)
            .unwrap_or(self.format)
    }
}

/// Defaults, then the file at `path` (if given), then `flags`; validated.
pub fn load_config(path: Option<&Path>, flags: ConfigLayer) -> Result<RunConfig, RuntimeError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = path {
        let text = fs::read_to_string(path).map_err(|source| RuntimeError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        ConfigLayer::parse(&text)?.apply(&mut cfg);
    }
    flags.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

/// Where a frozen value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    /// Stated outright in the source material.
    Published,
    /// Immediate from the definitions.
    Trivial,
    /// Computed by an independent oracle in test code.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub operation: String,
    /// Canonical JSON of the inputs the digest was taken over.
    pub inputs: serde_json::Value,
    pub value: Vec<f64>,
    pub provenance: Provenance,
    pub note: String,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct FixtureFile {
    fixtures: BTreeMap<String, Fixture>,
}

/// Outcome of recording a fixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recorded {
    Stored,
    AlreadyPresent,
}

/// Write-once map from `(operation, input digest)` to a frozen value,
/// persisted as sorted JSON after every insertion.
#[derive(Debug)]
pub struct FixtureStore {
    path: PathBuf,
    file: FixtureFile,
}

impl FixtureStore {
    /// Path of the store shipped with this crate.
    pub fn default_path() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/derived.json")
    }

    /// Opens the store at `path`; a missing file is an empty store.
    pub fn open(path: &Path) -> Result<FixtureStore, RuntimeError> {
        let file = match fs::read_to_string(path) {
            Ok(text) => {
                serde_json::from_str(&text).map_err(|e| RuntimeError::Format(e.to_string()))?
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => FixtureFile::default(),
            Err(source) => {
                return Err(RuntimeError::Read {
                    path: path.to_path_buf(),
                    source,
                })
            }
        };
        Ok(FixtureStore {
            path: path.to_path_buf(),
            file,
        })
    }

    /// `operation/` followed by the first 16 hex digits of SHA-256 over the
    /// canonical JSON of `inputs`.
    pub fn key(operation: &str, inputs: &serde_json::Value) -> String {
        let canonical = serde_json::to_string(inputs).expect("JSON values serialize");
        let digest = Sha256::digest(canonical.as_bytes());
        let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
        format!("{operation}/{hex}")
    }

    pub fn len(&self) -> usize {
        self.file.fixtures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.file.fixtures.is_empty()
    }

    pub fn get(&self, operation: &str, inputs: &serde_json::Value) -> Option<&Fixture> {
        self.file.fixtures.get(&Self::key(operation, inputs))
    }

    /// Stores a value once. Re-recording an identical value is a no-op;
    /// a differing value is refused.
    pub fn record(
        &mut self,
        operation: &str,
        inputs: serde_json::Value,
        value: Vec<f64>,
        provenance: Provenance,
        note: &str,
    ) -> Result<Recorded, RuntimeError> {
        let key = Self::key(operation, &inputs);
        if let Some(old) = self.file.fixtures.get(&key) {
            if old.value == value {
                return Ok(Recorded::AlreadyPresent);
            }
            return Err(RuntimeError::Overwrite {
                key,
                stored: old.value.clone(),
                offered: value,
            });
        }
        self.file.fixtures.insert(
            key,
            Fixture {
                operation: operation.to_string(),
                inputs,
                value,
                provenance,
                note: note.to_string(),
            },
        );
        let text = serde_json::to_string_pretty(&self.file)
            .map_err(|e| RuntimeError::Format(e.to_string()))?;
        atomic_write(&self.path, format!("{text}\n").as_bytes())?;
        Ok(Recorded::Stored)
    }

    /// Whether `value` matches the stored fixture entrywise within
    /// `tolerance`. A missing fixture is an error, never a pass.
    pub fn verify(
        &self,
        operation: &str,
        inputs: &serde_json::Value,
        value: &[f64],
        tolerance: f64,
    ) -> Result<bool, RuntimeError> {
        let fx = self
            .get(operation, inputs)
            .ok_or_else(|| RuntimeError::Missing(Self::key(operation, inputs)))?;
        Ok(fx.value.len() == value.len()
            && fx
                .value
                .iter()
                .zip(value)
                .all(|(a, b)| (a - b).abs() <= tolerance))
    }
}
