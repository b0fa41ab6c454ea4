//! Built-in defaults: a ten-module LiDAR-perception-shaped pipeline, its
//! synthetic latency ground truth, and a three-segment traffic scenario.
//!
//! The CLI falls back to these when no config file is given, and the test
//! suites build their scenarios from them.

use std::collections::BTreeMap;

use crate::latency::{ConversionTable, RoiSpec};
use crate::pipeline::{AccumulationFn, CriticalityConfig, DependencyGraph, ModuleSpec};
use crate::safety::{DrivingState, ObstacleState, ScenarioMode, ScoreWeights};
use crate::sim::{AvConfig, MachineSpec, NominalScenario, SegmentConfig, TraceConfig, TruthConfig};

/// Default continuous-timeout threshold.
pub const DEFAULT_H: u32 = 100;

/// Default ridge strength for the latency fits.
pub const DEFAULT_RIDGE: f64 = 1e-6;

/// Measurement noise on the synthesized system response time, in seconds.
pub const DEFAULT_RESPONSE_NOISE: f64 = 0.002;

fn module(
    name: &str,
    resources: &[u32],
    slope_above: f64,
    deep_learning: bool,
) -> ModuleSpec {
    ModuleSpec {
        name: name.to_string(),
        sampling_interval: Some(0.1),
        supported_resources: resources.to_vec(),
        accumulation: AccumulationFn {
            threshold: 0.1,
            slope_below: 1.0,
            slope_above,
        },
        deep_learning,
    }
}

/// Ten-module LiDAR perception pipeline: driver feeding a labeling stage
/// with four sub-labelers, segmentation fanning out into merge, filter and
/// an occupancy grid.
pub fn default_graph() -> DependencyGraph {
    let modules = vec![
        module("lidar_driver", &[0], 2.0, false),
        module("labeling", &[0, 1], 2.0, false),
        module("label_ground", &[0], 1.5, false),
        module("label_curb", &[0], 1.5, false),
        module("label_objects", &[0, 1], 1.5, true),
        module("label_noise", &[0], 1.5, false),
        module("segmentation", &[0, 1], 3.0, true),
        module("merge", &[0, 1], 2.0, false),
        module("filter", &[0, 1], 2.0, false),
        module("occupancy_grid", &[0], 2.0, false),
    ];
    let edges = [
        ("lidar_driver", "labeling"),
        ("labeling", "label_ground"),
        ("labeling", "label_curb"),
        ("labeling", "label_objects"),
        ("labeling", "label_noise"),
        ("label_ground", "segmentation"),
        ("label_curb", "segmentation"),
        ("label_objects", "segmentation"),
        ("label_noise", "segmentation"),
        ("segmentation", "merge"),
        ("segmentation", "occupancy_grid"),
        ("merge", "filter"),
    ];
    DependencyGraph {
        modules,
        edges: edges
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect(),
    }
}

fn truth(
    base: f64,
    near_weight: f64,
    total_weight: f64,
    total_log_weight: f64,
    noise_sd: f64,
) -> TruthConfig {
    TruthConfig {
        base,
        near_weight,
        proximity_scale: 12.0,
        total_weight,
        total_log_weight,
        noise_sd,
    }
}

/// Hidden per-module latency generators behind the synthetic traces.
pub fn default_truths() -> BTreeMap<String, TruthConfig> {
    [
        ("lidar_driver", truth(0.010, 0.0001, 0.00005, 0.0, 0.001)),
        ("labeling", truth(0.014, 0.0005, 0.00010, 0.0001, 0.0015)),
        ("label_ground", truth(0.006, 0.0002, 0.00005, 0.0, 0.001)),
        ("label_curb", truth(0.005, 0.0002, 0.00004, 0.0, 0.001)),
        ("label_objects", truth(0.009, 0.0006, 0.00010, 0.0001, 0.0015)),
        ("label_noise", truth(0.004, 0.0001, 0.00003, 0.0, 0.001)),
        ("segmentation", truth(0.022, 0.0012, 0.00020, 0.0003, 0.002)),
        ("merge", truth(0.010, 0.0003, 0.00010, 0.0001, 0.001)),
        ("filter", truth(0.009, 0.0002, 0.00008, 0.0, 0.001)),
        ("occupancy_grid", truth(0.007, 0.0002, 0.00012, 0.0001, 0.0015)),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// GPU conversion ratios; resource 0 is the identity baseline everywhere.
pub fn default_conversion() -> ConversionTable {
    let gpu: BTreeMap<&str, f64> = [
        ("labeling", 0.50),
        ("label_objects", 0.40),
        ("segmentation", 0.35),
        ("merge", 0.60),
        ("filter", 0.70),
    ]
    .into_iter()
    .collect();
    let mut table = ConversionTable::default();
    for m in default_graph().modules {
        let per = table.ratio.entry(m.name.clone()).or_default();
        per.insert(0, 1.0);
        if let Some(nu) = gpu.get(m.name.as_str()) {
            per.insert(1, *nu);
        }
    }
    table
}

pub fn default_machine() -> MachineSpec {
    MachineSpec {
        cpu_slots: 2,
        gpu_slots: 1,
        power: [(0, 65.0), (1, 220.0)].into_iter().collect(),
    }
}

pub fn default_weights() -> ScoreWeights {
    ScoreWeights {
        sigma: 0.05,
        eta: 0.1,
        d_mu: 2.0,
        score_cap: 1e6,
    }
}

pub fn default_obstacle() -> ObstacleState {
    ObstacleState {
        v_o: 8.0,
        a_max_accel_o: 1.0,
        a_min_brake_o: 3.0,
        a_max_brake_o: 6.0,
        response_time_o: 0.5,
    }
}

pub fn default_criticality() -> CriticalityConfig {
    CriticalityConfig::default()
}

/// Scenario the offline planner scores plans under.
pub fn default_nominal() -> NominalScenario {
    NominalScenario {
        av: DrivingState {
            v: 12.0,
            a_max_accel: 2.0,
            a_min_brake: 4.0,
        },
        obstacle: default_obstacle(),
        mode: ScenarioMode::SameDirection,
        distance: 30.0,
    }
}

/// Three cycling traffic segments: light cruising, an opposing-traffic rush
/// burst, and a dense close-quarters stretch.
pub fn default_trace_config() -> TraceConfig {
    TraceConfig {
        roi: RoiSpec::default(),
        frames: 5000,
        sensor_interval: 0.1,
        av: AvConfig {
            v0: 10.0,
            v_bounds: (6.0, 16.0),
            v_step: 0.3,
            a_max_accel: 2.0,
            a_min_brake: 4.0,
        },
        obstacle: default_obstacle(),
        segments: vec![
            SegmentConfig {
                frames: 600,
                mode: ScenarioMode::SameDirection,
                base_intensity: 0.10,
                decay_scale: 15.0,
                near_boost: 1.0,
                near_radius: 10.0,
                distance: (50.0, 70.0),
                distance_step: 0.8,
            },
            SegmentConfig {
                frames: 400,
                mode: ScenarioMode::Opposing,
                base_intensity: 0.50,
                decay_scale: 20.0,
                near_boost: 1.2,
                near_radius: 12.0,
                distance: (45.0, 65.0),
                distance_step: 0.8,
            },
            SegmentConfig {
                frames: 200,
                mode: ScenarioMode::SameDirection,
                base_intensity: 0.70,
                decay_scale: 6.0,
                near_boost: 4.0,
                near_radius: 10.0,
                distance: (20.0, 32.0),
                distance_step: 0.5,
            },
        ],
    }
}
