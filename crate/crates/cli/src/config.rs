//! Run configuration file: one JSON document covering the generator, the
//! safety weights, the machine, fitting and planning knobs, and default
//! paths. Every field has a built-in default, so a partial (or absent)
//! config works.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use safesim_core::error::Result;
use safesim_core::files;
use safesim_core::latency::ConversionTable;
use safesim_core::pipeline::{CriticalityConfig, DependencyGraph};
use safesim_core::presets;
use safesim_core::safety::ScoreWeights;
use safesim_core::sim::{MachineSpec, NominalScenario, TraceConfig, TruthConfig};

/// Priority dimension of the offline plan search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorityPolicyChoice {
    TopoFixed,
    CriticalFirst,
    All,
}

/// File locations consumed and produced by the subcommands; flags override.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub graph: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub samples: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub store: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub generator: TraceConfig,
    /// Hidden per-module latency truths behind synthesized samples.
    pub truths: BTreeMap<String, TruthConfig>,
    /// Noise on the synthesized system response time, seconds.
    pub response_noise: f64,
    pub weights: ScoreWeights,
    pub machine: MachineSpec,
    pub criticality: CriticalityConfig,
    pub conversion: ConversionTable,
    /// Scenario the offline plan search scores against.
    pub nominal: NominalScenario,
    pub ridge: f64,
    /// Continuous-timeout trigger threshold.
    pub h: u32,
    /// Response-time penalty charged to the frame after a plan switch.
    pub switch_penalty: f64,
    /// Managed runs start on this cluster; absent = match the first frame.
    pub initial_cluster: Option<usize>,
    /// Keep every k-th frame as an offline-planning sample.
    pub plan_stride: usize,
    pub priority_policy: PriorityPolicyChoice,
    /// Min-max scale feature blocks before cluster matching.
    pub feature_scaling_minmax: bool,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            generator: presets::default_trace_config(),
            truths: presets::default_truths(),
            response_noise: presets::DEFAULT_RESPONSE_NOISE,
            weights: presets::default_weights(),
            machine: presets::default_machine(),
            criticality: presets::default_criticality(),
            conversion: presets::default_conversion(),
            nominal: presets::default_nominal(),
            ridge: presets::DEFAULT_RIDGE,
            h: presets::DEFAULT_H,
            switch_penalty: 0.0,
            initial_cluster: None,
            plan_stride: 1,
            priority_policy: PriorityPolicyChoice::CriticalFirst,
            feature_scaling_minmax: false,
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        match path {
            Some(p) => files::load_json(p),
            None => Ok(RunConfig::default()),
        }
    }

    /// The dependency graph: from `paths.graph` when set, else the built-in
    /// ten-module pipeline.
    pub fn graph(&self) -> Result<DependencyGraph> {
        let g: DependencyGraph = match &self.paths.graph {
            Some(p) => files::load_json(p)?,
            None => presets::default_graph(),
        };
        g.validate()?;
        Ok(g)
    }
}
