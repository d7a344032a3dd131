//! Versioned experiment records with CSV and JSON round-trips.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::runtime::{atomic_write, OutputFormat, RuntimeError};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported schema version {0}")]
    Schema(u32),
    #[error("record `{experiment}`: {reason}")]
    Invalid { experiment: String, reason: String },
    #[error("bad column `{0}`")]
    Column(String),
}

/// One reported number with its uncertainty class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Quantity {
    /// Monte Carlo estimate with its standard error.
    Stochastic { value: f64, se: f64 },
    /// Enumeration result with an absolute tolerance.
    Exact { value: f64, tolerance: f64 },
    /// Closed-form or derived bound.
    Bound { value: f64 },
}

impl Quantity {
    pub fn value(&self) -> f64 {
        match *self {
            Quantity::Stochastic { value, .. }
            | Quantity::Exact { value, .. }
            | Quantity::Bound { value } => value,
        }
    }
}

/// One row: an experiment at one parameter point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub experiment: String,
    pub mode: String,
    pub seed: Option<u64>,
    pub params: BTreeMap<String, f64>,
    pub results: BTreeMap<String, Quantity>,
    /// Free-form classification, such as a phase band.
    pub label: String,
    pub wall_time_s: f64,
}

impl ExperimentRecord {
    pub fn new(experiment: &str, mode: &str, seed: Option<u64>) -> ExperimentRecord {
        ExperimentRecord {
            experiment: experiment.into(),
            mode: mode.into(),
            seed,
            params: BTreeMap::new(),
            results: BTreeMap::new(),
            label: String::new(),
            wall_time_s: 0.0,
        }
    }

    pub fn param(mut self, name: &str, value: f64) -> Self {
        self.params.insert(name.into(), value);
        self
    }

    pub fn result(mut self, name: &str, q: Quantity) -> Self {
        self.results.insert(name.into(), q);
        self
    }

    pub fn label(mut self, label: &str) -> Self {
        self.label = label.into();
        self
    }

    /// Stochastic results need a seed; every number must be finite and
    /// every uncertainty nonnegative.
    pub fn validate(&self) -> Result<(), RecordError> {
        let fail = |reason: String| {
            Err(RecordError::Invalid {
                experiment: self.experiment.clone(),
                reason,
            })
        };
        for (name, q) in &self.results {
            let (ok, unc) = match *q {
                Quantity::Stochastic { value, se } => (value.is_finite(), se),
                Quantity::Exact { value, tolerance } => (value.is_finite(), tolerance),
                Quantity::Bound { value } => (!value.is_nan(), 0.0),
            };
            if !ok || !(unc >= 0.0) || !unc.is_finite() {
                return fail(format!("result `{name}` = {q:?} is not well formed"));
            }
            if matches!(q, Quantity::Stochastic { .. }) && self.seed.is_none() {
                return fail(format!("stochastic result `{name}` has no seed"));
            }
        }
        if let Some((name, v)) = self.params.iter().find(|(_, v)| !v.is_finite()) {
            return fail(format!("parameter `{name}` = {v}"));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct JsonDoc {
    schema_version: u32,
    records: Vec<ExperimentRecord>,
}

const FIXED_COLUMNS: [&str; 6] = [
    "schema_version",
    "experiment",
    "mode",
    "seed",
    "label",
    "wall_time_s",
];

/// Serializes records. CSV columns: the fixed columns, then `param:NAME`
/// for every parameter, then `NAME`, `NAME:se`, `NAME:tol` for every
/// result, each group sorted by name.
pub fn to_string(records: &[ExperimentRecord], format: OutputFormat) -> Result<String, RecordError> {
    for r in records {
        r.validate()?;
    }
    match format {
        OutputFormat::Json => Ok(serde_json::to_string_pretty(&JsonDoc {
            schema_version: SCHEMA_VERSION,
            records: records.to_vec(),
        })? + "\n"),
        OutputFormat::Csv => to_csv(records),
    }
}

fn to_csv(records: &[ExperimentRecord]) -> Result<String, RecordError> {
    let params: BTreeSet<&str> = records
        .iter()
        .flat_map(|r| r.params.keys().map(String::as_str))
        .collect();
    let results: BTreeSet<&str> = records
        .iter()
        .flat_map(|r| r.results.keys().map(String::as_str))
        .collect();
    let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(params.iter().map(|p| format!("param:{p}")));
    for r in &results {
        header.extend([r.to_string(), format!("{r}:se"), format!("{r}:tol")]);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header)?;
    for rec in records {
        let mut row = vec![
            SCHEMA_VERSION.to_string(),
            rec.experiment.clone(),
            rec.mode.clone(),
            rec.seed.map(|s| s.to_string()).unwrap_or_default(),
            rec.label.clone(),
            rec.wall_time_s.to_string(),
        ];
        row.extend(
            params
                .iter()
                .map(|p| rec.params.get(*p).map(|v| v.to_string()).unwrap_or_default()),
        );
        for r in &results {
            let (v, se, tol) = match rec.results.get(*r) {
                None => (String::new(), String::new(), String::new()),
                Some(Quantity::Stochastic { value, se }) => {
                    (value.to_string(), se.to_string(), String::new())
                }
                Some(Quantity::Exact { value, tolerance }) => {
                    (value.to_string(), String::new(), tolerance.to_string())
                }
                Some(Quantity::Bound { value }) => (value.to_string(), String::new(), String::new()),
            };
            row.extend([v, se, tol]);
        }
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| RecordError::Column(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn from_str(text: &str, format: OutputFormat) -> Result<Vec<ExperimentRecord>, RecordError> {
    match format {
        OutputFormat::Json => {
            let doc: JsonDoc = serde_json::from_str(text)?;
            if doc.schema_version != SCHEMA_VERSION {
                return Err(RecordError::Schema(doc.schema_version));
            }
            Ok(doc.records)
        }
        OutputFormat::Csv => from_csv(text),
    }
}

fn from_csv(text: &str) -> Result<Vec<ExperimentRecord>, RecordError> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = rd.headers()?.iter().map(String::from).collect();
    if header.len() < FIXED_COLUMNS.len() || header[..FIXED_COLUMNS.len()] != FIXED_COLUMNS {
        return Err(RecordError::Column("fixed columns".into()));
    }
    let num = |s: &str| -> Result<f64, RecordError> {
        s.parse().map_err(|_| RecordError::Column(s.to_string()))
    };
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row?;
        let version: u32 = row[0].parse().map_err(|_| RecordError::Column(row[0].into()))?;
        if version != SCHEMA_VERSION {
            return Err(RecordError::Schema(version));
        }
        let mut rec = ExperimentRecord::new(&row[1], &row[2], None);
        if !row[3].is_empty() {
            rec.seed = Some(row[3].parse().map_err(|_| RecordError::Column(row[3].into()))?);
        }
        rec.label = row[4].to_string();
        rec.wall_time_s = num(&row[5])?;
        let mut i = FIXED_COLUMNS.len();
        while i < header.len() {
            if let Some(name) = header[i].strip_prefix("param:") {
                if !row[i].is_empty() {
                    rec.params.insert(name.to_string(), num(&row[i])?);
                }
                i += 1;
                continue;
            }
            let name = &header[i];
            if header.get(i + 1) != Some(&format!("{name}:se"))
                || header.get(i + 2) != Some(&format!("{name}:tol"))
            {
                return Err(RecordError::Column(name.clone()));
            }
            let (v, se, tol) = (&row[i], &row[i + 1], &row[i + 2]);
            if !v.is_empty() {
                let value = num(v)?;
                let q = match (se.is_empty(), tol.is_empty()) {
                    (false, _) => Quantity::Stochastic { value, se: num(se)? },
                    (true, false) => Quantity::Exact {
                        value,
                        tolerance: num(tol)?,
                    },
                    (true, true) => Quantity::Bound { value },
                };
                rec.results.insert(name.clone(), q);
            }
            i += 3;
        }
        out.push(rec);
    }
    Ok(out)
}

/// Writes records to `path` atomically.
pub fn emit(records: &[ExperimentRecord], format: OutputFormat, path: &Path) -> Result<(), RecordError> {
    let text = to_string(records, format)?;
    atomic_write(path, text.as_bytes())?;
    Ok(())
}

pub fn read_records(path: &Path, format: OutputFormat) -> Result<Vec<ExperimentRecord>, RecordError> {
    let text = std::fs::read_to_string(path).map_err(|source| RuntimeError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    from_str(&text, format)
}
