//! On-disk formats: JSON documents for models, stores and reports, JSONL
//! for traces and samples.
//!
//! Every writer can prepend provenance metadata (tool, version, creation
//! time); suppressing it makes repeated runs byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latency::{ConversionTable, LatencyCoefficients, RoiSpec};
use crate::pipeline::{AccumulationFn, DependencyGraph};
use crate::planner::ClusterStore;
use crate::sim::{FrameRecord, RunReport, SampleRecord};

/// Provenance header carried by output files unless suppressed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileMeta {
    pub tool: String,
    pub version: String,
    pub created_unix: u64,
}

impl FileMeta {
    pub fn now() -> FileMeta {
        FileMeta {
            tool: "safesim".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    /// `Some(meta)` unless headers are disabled.
    pub fn unless(no_header: bool) -> Option<FileMeta> {
        if no_header {
            None
        } else {
            Some(FileMeta::now())
        }
    }
}

/// Fitted latency model for every module, with everything a prediction
/// needs to agree with the fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<FileMeta>,
    pub roi: RoiSpec,
    /// Log convention the features were built with.
    pub log_convention: String,
    pub ridge: f64,
    pub coefficients: BTreeMap<String, LatencyCoefficients>,
    pub conversion: ConversionTable,
    /// Fitted accumulation functions (override the graph's when present).
    #[serde(default)]
    pub accumulation: BTreeMap<String, AccumulationFn>,
    /// Critical set implied by the fitting data, in topological order.
    pub critical: Vec<String>,
    /// Per-module training MSE of the baseline fit.
    #[serde(default)]
    pub training_mse: BTreeMap<String, f64>,
}

impl ModelFile {
    /// Graph with the model's fitted accumulation functions substituted in.
    pub fn apply_to_graph(&self, g: &DependencyGraph) -> DependencyGraph {
        let mut out = g.clone();
        for m in &mut out.modules {
            if let Some(w) = self.accumulation.get(&m.name) {
                m.accumulation = *w;
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.roi.validate()?;
        if self.log_convention != crate::latency::LOG_CONVENTION {
            return Err(Error::InvalidConfig(format!(
                "model uses log convention '{}', this build expects '{}'",
                self.log_convention,
                crate::latency::LOG_CONVENTION
            )));
        }
        for (name, c) in &self.coefficients {
            c.validate()?;
            if c.density_len() != self.roi.vector_len() {
                return Err(Error::InvalidConfig(format!(
                    "coefficients for '{name}' have dimension {}, ROI implies {}",
                    c.density_len(),
                    self.roi.vector_len()
                )));
            }
        }
        self.conversion.validate()
    }
}

/// Cluster store document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<FileMeta>,
    pub store: ClusterStore,
}

/// Run report document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<FileMeta>,
    pub report: RunReport,
}

/// Dependency graph document (the graph serializes directly).
pub type GraphFile = DependencyGraph;

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::InvalidConfig(format!("{}: {e}", path.display()))
}

fn parse_err(path: &Path, e: serde_json::Error) -> Error {
    Error::MalformedData(format!("{}: malformed JSON: {e}", path.display()))
}

/// Write a JSON document.
pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = serde_json::to_string(value).map_err(|e| parse_err(path, e))?;
    out.push('\n');
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Read a JSON document.
pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e))
}

const META_KEY: &str = "_meta";

/// Write records as JSON Lines, optionally preceded by a metadata line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T], meta: Option<&FileMeta>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    if let Some(m) = meta {
        let mut line = BTreeMap::new();
        line.insert(META_KEY, m);
        serde_json::to_writer(&mut w, &line).map_err(|e| parse_err(path, e))?;
        w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    }
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| parse_err(path, e))?;
        w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Read JSON Lines, skipping a leading metadata line if present.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if i == 0 {
            if let Ok(v) = serde_json::from_str::<serde_json::Value>(&line) {
                if v.get(META_KEY).is_some() {
                    continue;
                }
            }
        }
        out.push(serde_json::from_str(&line).map_err(|e| parse_err(path, e))?);
    }
    Ok(out)
}

pub fn save_trace(path: &Path, trace: &[FrameRecord], meta: Option<&FileMeta>) -> Result<()> {
    write_jsonl(path, trace, meta)
}

pub fn load_trace(path: &Path) -> Result<Vec<FrameRecord>> {
    read_jsonl(path)
}

pub fn save_samples(path: &Path, samples: &[SampleRecord], meta: Option<&FileMeta>) -> Result<()> {
    write_jsonl(path, samples, meta)
}

pub fn load_samples(path: &Path) -> Result<Vec<SampleRecord>> {
    read_jsonl(path)
}
