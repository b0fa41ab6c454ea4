//! Trace-driven simulation harness.
//!
//! Generates synthetic frame traces, schedules the module graph on a
//! CPU/GPU machine under a resource plan, derives per-frame response times
//! and safety scores, and compares policies on latency, safety, and energy
//! metrics.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latency::{
    apply_conversion, build_density_vector, predict_baseline, ConversionTable, DensityVector,
    LatencyCoefficients, RoiSpec,
};
use crate::pipeline::{
    critical_modules, instantaneous_response_time, CriticalSet, CriticalityConfig,
    DependencyGraph,
};
use crate::planner::{
    current_feature, match_cluster, ClusterStore, ResourcePlan, TimeoutMonitor, TimeoutPattern,
    TimeoutTracker,
};
use crate::safety::{
    quad_with_obstacle, response_time_window, safety_score, DrivingState, ObstacleState,
    ScenarioMode, ScoreWeights,
};
use crate::stats::{self, LatencySummary};

/// Execution slots and power ratings of the simulated machine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineSpec {
    pub cpu_slots: usize,
    pub gpu_slots: usize,
    /// resource index -> watts drawn while a module runs there.
    pub power: BTreeMap<u32, f64>,
}

impl Default for MachineSpec {
    fn default() -> Self {
        MachineSpec {
            cpu_slots: 2,
            gpu_slots: 1,
            power: [(0, 60.0), (1, 250.0)].into_iter().collect(),
        }
    }
}

impl MachineSpec {
    pub fn validate(&self) -> Result<()> {
        if self.cpu_slots < 1 {
            return Err(Error::InvalidConfig("machine needs at least one CPU slot".into()));
        }
        for (r, w) in &self.power {
            if !(*w > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "power for resource {r} must be positive"
                )));
            }
        }
        Ok(())
    }

    pub fn slots(&self, resource: u32) -> usize {
        match resource {
            0 => self.cpu_slots,
            1 => self.gpu_slots,
            _ => 0,
        }
    }
}

/// One sensor frame of the synthetic trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: u64,
    pub timestamp: f64,
    /// Obstacle positions in ROI coordinates (x across width, y ahead).
    pub positions: Vec<(f64, f64)>,
    pub av: DrivingState,
    pub obstacle: ObstacleState,
    pub mode: ScenarioMode,
    /// Current distance to the obstacle-of-attention in meters.
    pub distance: f64,
}

/// One observed sample for model fitting: the density the perception saw,
/// the measured per-module baseline latencies, and the measured system
/// response time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub density: DensityVector,
    pub latencies: BTreeMap<String, f64>,
    pub response_time: f64,
}

/// Traffic segment of the trace generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentConfig {
    pub frames: u64,
    pub mode: ScenarioMode,
    /// Expected obstacles per fine cell right next to the AV.
    pub base_intensity: f64,
    /// Exponential decay scale of intensity with distance, in meters.
    pub decay_scale: f64,
    /// Intensity multiplier inside `near_radius` (rush-hour burst).
    pub near_boost: f64,
    pub near_radius: f64,
    /// Bounds of the gap to the obstacle-of-attention.
    pub distance: (f64, f64),
    /// Max per-frame change of the gap.
    pub distance_step: f64,
}

/// AV kinematics evolution for the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvConfig {
    pub v0: f64,
    pub v_bounds: (f64, f64),
    /// Max per-frame speed change.
    pub v_step: f64,
    pub a_max_accel: f64,
    pub a_min_brake: f64,
}

impl Default for AvConfig {
    fn default() -> Self {
        AvConfig {
            v0: 10.0,
            v_bounds: (5.0, 20.0),
            v_step: 0.3,
            a_max_accel: 2.0,
            a_min_brake: 4.0,
        }
    }
}

/// Full generator configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceConfig {
    pub roi: RoiSpec,
    pub frames: u64,
    pub sensor_interval: f64,
    pub av: AvConfig,
    pub obstacle: ObstacleState,
    pub segments: Vec<SegmentConfig>,
}

impl TraceConfig {
    pub fn validate(&self) -> Result<()> {
        self.roi.validate()?;
        if self.frames == 0 {
            return Err(Error::InvalidConfig("frame count must be >= 1".into()));
        }
        if !(self.sensor_interval > 0.0) {
            return Err(Error::InvalidConfig("sensor interval must be positive".into()));
        }
        if self.segments.is_empty() {
            return Err(Error::InvalidConfig("at least one segment required".into()));
        }
        for s in &self.segments {
            if s.frames == 0 {
                return Err(Error::InvalidConfig("segment frame count must be >= 1".into()));
            }
            if s.distance.1 < s.distance.0 {
                return Err(Error::InvalidConfig("segment distance bounds inverted".into()));
            }
        }
        self.obstacle.validate()?;
        Ok(())
    }
}

fn poisson_count(rng: &mut ChaCha8Rng, lambda: f64) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    let dist = Poisson::new(lambda).expect("positive lambda");
    dist.sample(rng) as u64
}

/// Generate a reproducible synthetic trace. Obstacle intensity decays with
/// distance from the AV; segments cycle until the frame budget is spent.
pub fn generate_trace(cfg: &TraceConfig, seed: u64) -> Result<Vec<FrameRecord>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let roi = &cfg.roi;
    let fine_len = roi.fine_len();
    // Per-cell intensity shape is segment-independent; scale per segment.
    let proximity: Vec<f64> = (0..fine_len)
        .map(|i| roi.fine_distance_from_av(i))
        .collect();

    let mut frames = Vec::with_capacity(cfg.frames as usize);
    let mut v = cfg.av.v0.clamp(cfg.av.v_bounds.0, cfg.av.v_bounds.1);
    let mut segment_idx = 0usize;
    let mut left_in_segment = cfg.segments[0].frames;
    let mut distance = midpoint(cfg.segments[0].distance);

    for frame in 0..cfg.frames {
        if left_in_segment == 0 {
            segment_idx = (segment_idx + 1) % cfg.segments.len();
            left_in_segment = cfg.segments[segment_idx].frames;
            distance = midpoint(cfg.segments[segment_idx].distance);
        }
        let seg = &cfg.segments[segment_idx];
        left_in_segment -= 1;

        let mut positions = Vec::new();
        for (i, dist) in proximity.iter().enumerate() {
            let boost = if *dist < seg.near_radius {
                seg.near_boost
            } else {
                1.0
            };
            let lambda = seg.base_intensity * (-dist / seg.decay_scale).exp() * boost;
            let count = poisson_count(&mut rng, lambda);
            if count == 0 {
                continue;
            }
            let (cx, cy) = roi.fine_center(i);
            let (w, d) = roi.fine_cell;
            for _ in 0..count {
                let x = cx - w / 2.0 + rng.gen_range(0.0..w);
                let y = cy - d / 2.0 + rng.gen_range(0.0..d);
                positions.push((x, y));
            }
        }

        v = (v + rng.gen_range(-cfg.av.v_step..=cfg.av.v_step))
            .clamp(cfg.av.v_bounds.0, cfg.av.v_bounds.1);
        distance = (distance + rng.gen_range(-seg.distance_step..=seg.distance_step))
            .clamp(seg.distance.0, seg.distance.1);

        frames.push(FrameRecord {
            frame,
            timestamp: frame as f64 * cfg.sensor_interval,
            positions,
            av: DrivingState {
                v,
                a_max_accel: cfg.av.a_max_accel,
                a_min_brake: cfg.av.a_min_brake,
            },
            obstacle: cfg.obstacle,
            mode: seg.mode,
            distance,
        });
    }
    Ok(frames)
}

fn midpoint(bounds: (f64, f64)) -> f64 {
    (bounds.0 + bounds.1) / 2.0
}

/// Compact ground truth for one module's synthetic baseline latency; the
/// expanded coefficients live in the model family the fitter recovers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthConfig {
    /// Intercept seconds.
    pub base: f64,
    /// Weight of near obstacles (per fine-cell count, decayed by distance).
    pub near_weight: f64,
    /// Decay scale in meters for `near_weight`.
    pub proximity_scale: f64,
    /// Linear weight on the whole-ROI total.
    pub total_weight: f64,
    /// x*log(x) weight on the whole-ROI total.
    pub total_log_weight: f64,
    /// Gaussian measurement noise on the observed latency.
    pub noise_sd: f64,
}

/// Expand the compact truth into full latency coefficients.
pub fn expand_truth(roi: &RoiSpec, t: &TruthConfig) -> LatencyCoefficients {
    let d = roi.vector_len();
    let mut c = LatencyCoefficients::zeros(d);
    for i in 0..roi.fine_len() {
        let dist = roi.fine_distance_from_av(i);
        c.c_vec[i] = t.near_weight * (-dist / t.proximity_scale).exp();
    }
    let total_idx = d - 1;
    c.c_vec[total_idx] = t.total_weight;
    c.b_vec[total_idx] = t.total_log_weight;
    c.e = t.base;
    c
}

/// Synthesize observed samples (baseline latencies + system response) for a
/// trace from hidden per-module truths. Returns the samples and the
/// critical set implied by the observed latencies.
pub fn synthesize_samples(
    trace: &[FrameRecord],
    g: &DependencyGraph,
    truths: &BTreeMap<String, TruthConfig>,
    roi: &RoiSpec,
    crit_cfg: &CriticalityConfig,
    response_noise_sd: f64,
    seed: u64,
) -> Result<(Vec<SampleRecord>, CriticalSet)> {
    for m in &g.modules {
        if !truths.contains_key(&m.name) {
            return Err(Error::InvalidConfig(format!(
                "no latency truth for module '{}'",
                m.name
            )));
        }
    }
    let expanded: BTreeMap<&str, LatencyCoefficients> = truths
        .iter()
        .map(|(n, t)| (n.as_str(), expand_truth(roi, t)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a5a_5a5a);

    let mut densities = Vec::with_capacity(trace.len());
    let mut latencies: Vec<BTreeMap<String, f64>> = Vec::with_capacity(trace.len());
    for f in trace {
        let density = build_density_vector(&f.positions, roi)?;
        let mut per_module = BTreeMap::new();
        for m in &g.modules {
            let clean = predict_baseline(&expanded[m.name.as_str()], &density)?;
            let sd = truths[&m.name].noise_sd;
            let noisy = if sd > 0.0 {
                let noise = Normal::new(0.0, sd)
                    .map_err(|_| Error::InvalidConfig("invalid noise sd".into()))?;
                (clean + noise.sample(&mut rng)).max(0.0)
            } else {
                clean
            };
            per_module.insert(m.name.clone(), noisy);
        }
        densities.push(density);
        latencies.push(per_module);
    }

    let stats_map = latency_stats(&latencies, g);
    let crit = critical_modules(g, &stats_map, crit_cfg)?;

    let response_noise = if response_noise_sd > 0.0 {
        Some(
            Normal::new(0.0, response_noise_sd)
                .map_err(|_| Error::InvalidConfig("invalid response noise sd".into()))?,
        )
    } else {
        None
    };
    let mut samples = Vec::with_capacity(trace.len());
    for (density, per_module) in densities.into_iter().zip(latencies) {
        let mut response = instantaneous_response_time(&per_module, &crit, g)?;
        if let Some(n) = &response_noise {
            response = (response + n.sample(&mut rng)).max(0.0);
        }
        samples.push(SampleRecord {
            density,
            latencies: per_module,
            response_time: response,
        });
    }
    Ok((samples, crit))
}

/// Per-module latency summaries across frames.
pub fn latency_stats(
    frames: &[BTreeMap<String, f64>],
    g: &DependencyGraph,
) -> BTreeMap<String, LatencySummary> {
    let mut out = BTreeMap::new();
    for m in &g.modules {
        let series: Vec<f64> = frames
            .iter()
            .filter_map(|f| f.get(&m.name))
            .cloned()
            .collect();
        out.insert(m.name.clone(), LatencySummary::from_series(&series));
    }
    out
}

/// Per-module latency summaries of a sample file.
pub fn sample_stats(
    samples: &[SampleRecord],
    g: &DependencyGraph,
) -> BTreeMap<String, LatencySummary> {
    let frames: Vec<BTreeMap<String, f64>> =
        samples.iter().map(|s| s.latencies.clone()).collect();
    latency_stats(&frames, g)
}

/// Where and when one module ran within a frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModuleSchedule {
    /// When all dependencies had finished.
    pub ready: f64,
    pub start: f64,
    pub finish: f64,
    pub resource: u32,
}

/// Nonpreemptive insertion scheduling in a fixed dispatch order.
///
/// The dispatch order is the topological order with ready-set ties broken
/// by plan priority. Each module starts at the later of its dependencies'
/// completion and its resource's earliest free slot. `t_i` is
/// `finish - ready`, so queueing counts against the module.
pub fn schedule_frame(
    g: &DependencyGraph,
    compute: &BTreeMap<String, f64>,
    plan: &ResourcePlan,
    machine: &MachineSpec,
) -> Result<BTreeMap<String, ModuleSchedule>> {
    let rank = plan.rank();
    let order = g.topo_order_by(|m| *rank.get(m.name.as_str()).unwrap_or(&usize::MAX))?;
    let preds = g.predecessors()?;
    let mut pools: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    let mut schedules: Vec<Option<ModuleSchedule>> = vec![None; g.modules.len()];

    for idx in order {
        let name = &g.modules[idx].name;
        let resource = *plan
            .allocation
            .get(name)
            .ok_or_else(|| Error::Unschedulable {
                module: name.clone(),
            })?;
        let slots = machine.slots(resource);
        if slots == 0 {
            return Err(Error::Unschedulable {
                module: name.clone(),
            });
        }
        let pool = pools
            .entry(resource)
            .or_insert_with(|| vec![0.0; slots]);
        let duration = *compute
            .get(name)
            .ok_or_else(|| Error::MissingLatency(name.clone()))?;
        let ready = preds[idx]
            .iter()
            .map(|p| schedules[*p].expect("topological order").finish)
            .fold(0.0, f64::max);
        let (slot, free_at) = pool
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).expect("finite slot time"))
            .map(|(i, t)| (i, *t))
            .expect("nonempty pool");
        let start = ready.max(free_at);
        let finish = start + duration;
        pool[slot] = finish;
        schedules[idx] = Some(ModuleSchedule {
            ready,
            start,
            finish,
            resource,
        });
    }
    Ok(g
        .modules
        .iter()
        .enumerate()
        .map(|(i, m)| (m.name.clone(), schedules[i].expect("all scheduled")))
        .collect())
}

/// Everything a simulation run needs besides the trace and the plan.
pub struct SimContext<'a> {
    pub graph: &'a DependencyGraph,
    pub roi: &'a RoiSpec,
    pub coefficients: &'a BTreeMap<String, LatencyCoefficients>,
    pub conversion: &'a ConversionTable,
    pub machine: &'a MachineSpec,
    pub weights: &'a ScoreWeights,
    pub crit: &'a CriticalSet,
}

impl<'a> SimContext<'a> {
    fn validate(&self) -> Result<()> {
        self.graph.validate()?;
        self.machine.validate()?;
        self.weights.validate()?;
        self.conversion.validate()?;
        if self.crit.is_empty() {
            return Err(Error::EmptyCriticalSet);
        }
        for m in &self.graph.modules {
            if !self.coefficients.contains_key(&m.name) {
                return Err(Error::MissingStats(m.name.clone()));
            }
        }
        Ok(())
    }

    /// Baseline latency per module for one frame's density.
    pub fn baselines(&self, density: &DensityVector) -> Result<BTreeMap<String, f64>> {
        self.graph
            .modules
            .iter()
            .map(|m| {
                predict_baseline(&self.coefficients[&m.name], density).map(|t| (m.name.clone(), t))
            })
            .collect()
    }
}

/// Outcome of one simulated frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    pub frame: u64,
    /// Contended latency per module (queueing included).
    pub latencies: BTreeMap<String, f64>,
    /// Pure compute time per module (for the energy account).
    pub compute: BTreeMap<String, f64>,
    pub resources: BTreeMap<String, u32>,
    pub response_time: f64,
    pub theta: f64,
    pub score: f64,
    /// Any watched module exceeded its sampling interval.
    pub timeout: bool,
    /// Cluster index in effect (managed runs) or 0.
    pub plan_index: usize,
    pub switched: bool,
}

/// Simulate one frame under a plan given precomputed baseline latencies.
pub fn simulate_frame_with_baselines(
    f: &FrameRecord,
    baselines: &BTreeMap<String, f64>,
    plan: &ResourcePlan,
    ctx: &SimContext,
    extra_response_penalty: f64,
) -> Result<FrameResult> {
    let mut compute = BTreeMap::new();
    for m in &ctx.graph.modules {
        let tau = baselines[&m.name];
        let resource = *plan.allocation.get(&m.name).ok_or_else(|| Error::Unschedulable {
            module: m.name.clone(),
        })?;
        compute.insert(
            m.name.clone(),
            apply_conversion(tau, &m.name, resource, ctx.conversion)?,
        );
    }
    let schedule = schedule_frame(ctx.graph, &compute, plan, ctx.machine)?;
    let latencies: BTreeMap<String, f64> = schedule
        .iter()
        .map(|(n, s)| (n.clone(), s.finish - s.ready))
        .collect();
    let resources: BTreeMap<String, u32> =
        schedule.iter().map(|(n, s)| (n.clone(), s.resource)).collect();

    let response_time =
        instantaneous_response_time(&latencies, ctx.crit, ctx.graph)? + extra_response_penalty;

    let q = quad_with_obstacle(&f.av, &f.obstacle, f.mode, ctx.weights)?;
    let theta = match response_time_window(f.distance, &q) {
        Ok(t) => t,
        Err(Error::AlreadyUnsafe { .. }) => 0.0,
        Err(e) => return Err(e),
    };
    let score = safety_score(response_time, theta, &q, ctx.weights);

    let timeout = ctx.graph.modules.iter().any(|m| {
        ctx.crit.contains(&m.name)
            && m.sampling_interval
                .map(|s| latencies[&m.name] > s)
                .unwrap_or(false)
    });

    Ok(FrameResult {
        frame: f.frame,
        latencies,
        compute,
        resources,
        response_time,
        theta,
        score,
        timeout,
        plan_index: 0,
        switched: false,
    })
}

/// Simulate one frame under a plan from the raw frame record.
pub fn simulate_frame(
    f: &FrameRecord,
    plan: &ResourcePlan,
    ctx: &SimContext,
) -> Result<FrameResult> {
    let density = build_density_vector(&f.positions, ctx.roi)?;
    let baselines = ctx.baselines(&density)?;
    simulate_frame_with_baselines(f, &baselines, plan, ctx, 0.0)
}

/// Aggregate metrics of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub frame_count: usize,
    pub mean_response: f64,
    pub max_response: f64,
    pub p95_response: f64,
    pub p99_response: f64,
    pub mean_score: f64,
    pub energy_joules: f64,
    pub edp_joule_seconds: f64,
    pub timeout_frames: usize,
    pub switches: usize,
}

/// Report of one policy run over a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub policy: String,
    pub frames: Vec<FrameResult>,
    pub aggregates: Aggregates,
}

/// Recompute aggregates from per-frame rows.
pub fn aggregate(frames: &[FrameResult], machine: &MachineSpec) -> Result<Aggregates> {
    let responses: Vec<f64> = frames.iter().map(|f| f.response_time).collect();
    let scores: Vec<f64> = frames.iter().map(|f| f.score).collect();
    let mut energy = 0.0;
    for f in frames {
        for (name, secs) in &f.compute {
            let resource = f.resources[name];
            let watts = machine
                .power
                .get(&resource)
                .ok_or(Error::MissingPower(resource))?;
            energy += watts * secs;
        }
    }
    let mean_response = stats::mean(&responses);
    Ok(Aggregates {
        frame_count: frames.len(),
        mean_response,
        max_response: responses.iter().cloned().fold(0.0, f64::max),
        p95_response: stats::percentile(&responses, 95.0),
        p99_response: stats::percentile(&responses, 99.0),
        mean_score: stats::mean(&scores),
        energy_joules: energy,
        edp_joule_seconds: energy * mean_response,
        timeout_frames: frames.iter().filter(|f| f.timeout).count(),
        switches: frames.iter().filter(|f| f.switched).count(),
    })
}

/// Total energy and energy-delay product of a run.
pub fn edp(report: &RunReport, machine: &MachineSpec) -> Result<(f64, f64)> {
    let agg = aggregate(&report.frames, machine)?;
    Ok((agg.energy_joules, agg.edp_joule_seconds))
}

/// Resource management policy of a run.
#[derive(Debug, Clone)]
pub enum Policy<'a> {
    /// Everything on the CPU, tail-latency priority.
    CpuOnly,
    /// Deep-learning modules on the GPU, tail-latency priority.
    CpuGpuStatic,
    /// A fixed explicit plan.
    Static(&'a ResourcePlan),
    /// Monitor-triggered plan switching against a cluster store.
    Managed {
        store: &'a ClusterStore,
        /// Cluster the run starts on; `None` matches the first frame's
        /// feature (with an all-zero timeout pattern) instead.
        initial_cluster: Option<usize>,
        /// Response-time penalty charged to the frame right after a switch.
        switch_penalty: f64,
        /// Override of the store's monitor threshold.
        h: Option<u32>,
    },
}

impl Policy<'_> {
    pub fn label(&self) -> &'static str {
        match self {
            Policy::CpuOnly => "cpu",
            Policy::CpuGpuStatic => "cpu-gpu",
            Policy::Static(_) => "static",
            Policy::Managed { .. } => "managed",
        }
    }
}

/// Priority order by descending predicted tail latency (p95 over the
/// trace), names ascending on ties.
fn tail_latency_priority(
    g: &DependencyGraph,
    baselines: &[BTreeMap<String, f64>],
) -> Vec<String> {
    let stats_map = latency_stats(baselines, g);
    let mut names: Vec<&String> = g.modules.iter().map(|m| &m.name).collect();
    names.sort_by(|a, b| {
        let pa = stats_map[*a].p95;
        let pb = stats_map[*b].p95;
        pb.partial_cmp(&pa)
            .expect("finite p95")
            .then_with(|| a.cmp(b))
    });
    names.into_iter().cloned().collect()
}

fn cpu_only_plan(g: &DependencyGraph, priority: Vec<String>) -> ResourcePlan {
    ResourcePlan {
        allocation: g.modules.iter().map(|m| (m.name.clone(), 0)).collect(),
        priority,
    }
}

fn cpu_gpu_plan(g: &DependencyGraph, priority: Vec<String>) -> ResourcePlan {
    ResourcePlan {
        allocation: g
            .modules
            .iter()
            .map(|m| {
                let r = if m.deep_learning && m.supported_resources.contains(&1) {
                    1
                } else {
                    0
                };
                (m.name.clone(), r)
            })
            .collect(),
        priority,
    }
}

/// Run a whole trace under one policy.
///
/// Static policies are pure per-frame evaluations. The managed policy keeps
/// monitor state across frames and applies a matched plan at the next frame
/// boundary after a trigger.
pub fn run_config(trace: &[FrameRecord], policy: &Policy, ctx: &SimContext) -> Result<RunReport> {
    ctx.validate()?;
    let densities: Vec<DensityVector> = trace
        .iter()
        .map(|f| build_density_vector(&f.positions, ctx.roi))
        .collect::<Result<_>>()?;
    let baselines: Vec<BTreeMap<String, f64>> = densities
        .iter()
        .map(|d| ctx.baselines(d))
        .collect::<Result<_>>()?;

    let frames = match policy {
        Policy::CpuOnly => {
            let plan = cpu_only_plan(ctx.graph, tail_latency_priority(ctx.graph, &baselines));
            plan.validate(ctx.graph)?;
            run_static(trace, &baselines, &plan, ctx)?
        }
        Policy::CpuGpuStatic => {
            let plan = cpu_gpu_plan(ctx.graph, tail_latency_priority(ctx.graph, &baselines));
            plan.validate(ctx.graph)?;
            run_static(trace, &baselines, &plan, ctx)?
        }
        Policy::Static(plan) => {
            plan.validate(ctx.graph)?;
            run_static(trace, &baselines, plan, ctx)?
        }
        Policy::Managed {
            store,
            initial_cluster,
            switch_penalty,
            h,
        } => run_managed(
            trace,
            &densities,
            &baselines,
            store,
            *initial_cluster,
            *switch_penalty,
            *h,
            ctx,
        )?,
    };

    let aggregates = aggregate(&frames, ctx.machine)?;
    Ok(RunReport {
        policy: policy.label().to_string(),
        frames,
        aggregates,
    })
}

fn run_static(
    trace: &[FrameRecord],
    baselines: &[BTreeMap<String, f64>],
    plan: &ResourcePlan,
    ctx: &SimContext,
) -> Result<Vec<FrameResult>> {
    trace
        .iter()
        .zip(baselines)
        .map(|(f, b)| simulate_frame_with_baselines(f, b, plan, ctx, 0.0))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn run_managed(
    trace: &[FrameRecord],
    densities: &[DensityVector],
    baselines: &[BTreeMap<String, f64>],
    store: &ClusterStore,
    initial_cluster: Option<usize>,
    switch_penalty: f64,
    h_override: Option<u32>,
    ctx: &SimContext,
) -> Result<Vec<FrameResult>> {
    if store.clusters.is_empty() {
        return Err(Error::EmptyStore);
    }
    let h = h_override.unwrap_or(store.h);
    let mut monitor = TimeoutMonitor::new(h)?;
    let mut tracker = TimeoutTracker::new(ctx.crit.names().to_vec(), h as u64);
    let mut current = match initial_cluster {
        Some(i) => {
            if i >= store.clusters.len() {
                return Err(Error::InvalidConfig(format!(
                    "initial cluster {} out of range ({} clusters)",
                    i,
                    store.clusters.len()
                )));
            }
            i
        }
        None => match densities.first() {
            Some(d) => {
                let boot = current_feature(
                    d,
                    &TimeoutPattern::zeros(store.k_dim),
                    store.s_dim,
                    store.k_dim,
                )?;
                match_cluster(store, &boot)?.0
            }
            None => 0,
        },
    };
    let mut pending: Option<usize> = None;
    let mut out = Vec::with_capacity(trace.len());

    for ((f, density), base) in trace.iter().zip(densities).zip(baselines) {
        let mut penalty = 0.0;
        let mut switched = false;
        if let Some(next) = pending.take() {
            current = next;
            switched = true;
            penalty = switch_penalty;
        }
        let plan = &store.clusters[current].plan;
        plan.validate(ctx.graph)?;
        let mut result = simulate_frame_with_baselines(f, base, plan, ctx, penalty)?;
        result.plan_index = current;
        result.switched = switched;

        let latencies = result.latencies.clone();
        let graph = ctx.graph;
        tracker.observe(&|name: &str| {
            graph
                .module(name)
                .and_then(|m| m.sampling_interval)
                .map(|s| latencies.get(name).map(|t| *t > s).unwrap_or(false))
                .unwrap_or(false)
        });
        if monitor.step(result.timeout) {
            let pattern = pad_pattern(tracker.pattern(), store.k_dim);
            let feature = current_feature(density, &pattern, store.s_dim, store.k_dim)?;
            let (idx, _) = match_cluster(store, &feature)?;
            if idx != current {
                pending = Some(idx);
            }
        }
        out.push(result);
    }
    Ok(out)
}

fn pad_pattern(mut p: TimeoutPattern, width: usize) -> TimeoutPattern {
    p.counts.resize(width, 0.0);
    p
}

/// Fixed kinematic scenario the offline planner scores plans under.
///
/// The plan search ranks plans per obstacle distribution; the response
/// window comes from this configured scenario, not from individual frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NominalScenario {
    pub av: DrivingState,
    pub obstacle: ObstacleState,
    pub mode: ScenarioMode,
    pub distance: f64,
}

/// Total scoring function over (graph, plan, density) for offline planning.
/// Internal failures (unschedulable plans) score negative infinity.
pub fn plan_score_fn<'a>(
    ctx: &'a SimContext<'a>,
    nominal: &NominalScenario,
) -> Result<impl Fn(&DependencyGraph, &ResourcePlan, &DensityVector) -> f64 + Sync + 'a> {
    let q = quad_with_obstacle(&nominal.av, &nominal.obstacle, nominal.mode, ctx.weights)?;
    let theta = match response_time_window(nominal.distance, &q) {
        Ok(t) => t,
        Err(Error::AlreadyUnsafe { .. }) => 0.0,
        Err(e) => return Err(e),
    };
    let weights = *ctx.weights;
    // Baseline latencies depend only on the density, not the plan; the
    // exhaustive search re-scores each sample once per plan.
    let cache: std::sync::RwLock<std::collections::HashMap<Vec<u32>, BTreeMap<String, f64>>> =
        std::sync::RwLock::new(std::collections::HashMap::new());
    Ok(move |g: &DependencyGraph, plan: &ResourcePlan, s: &DensityVector| -> f64 {
        let result = (|| -> Result<f64> {
            let cached = cache.read().expect("cache lock").get(&s.counts).cloned();
            let baselines = match cached {
                Some(b) => b,
                None => {
                    let b = ctx.baselines(s)?;
                    cache
                        .write()
                        .expect("cache lock")
                        .insert(s.counts.clone(), b.clone());
                    b
                }
            };
            let mut compute = BTreeMap::new();
            for m in &g.modules {
                let resource = *plan.allocation.get(&m.name).ok_or_else(|| {
                    Error::Unschedulable {
                        module: m.name.clone(),
                    }
                })?;
                compute.insert(
                    m.name.clone(),
                    apply_conversion(baselines[&m.name], &m.name, resource, ctx.conversion)?,
                );
            }
            let schedule = schedule_frame(g, &compute, plan, ctx.machine)?;
            let latencies: BTreeMap<String, f64> = schedule
                .iter()
                .map(|(n, sched)| (n.clone(), sched.finish - sched.ready))
                .collect();
            let t = instantaneous_response_time(&latencies, ctx.crit, g)?;
            Ok(safety_score(t, theta, &q, &weights))
        })();
        match result {
            Ok(score) => score,
            Err(e) => {
                log::debug!("plan scored -inf: {e}");
                f64::NEG_INFINITY
            }
        }
    })
}

/// Ranking of reports under one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRanking {
    pub metric: String,
    /// True when larger raw values are better (safety); false for latency.
    pub higher_better: bool,
    pub best_index: usize,
    pub values: Vec<f64>,
    /// Goodness normalized so the best report scores 1.0.
    pub normalized: Vec<f64>,
}

/// Per-metric best plans and normalized columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingTable {
    pub labels: Vec<String>,
    pub entries: Vec<MetricRanking>,
}

fn normalize_column(values: &[f64], higher_better: bool) -> (usize, Vec<f64>) {
    let best_index = if higher_better {
        values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite metric"))
            .map(|(i, _)| {
                // lowest index wins exact ties
                values
                    .iter()
                    .position(|v| v == &values[i])
                    .unwrap_or(i)
            })
            .unwrap_or(0)
    } else {
        values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).expect("finite metric"))
            .map(|(i, _)| values.iter().position(|v| v == &values[i]).unwrap_or(i))
            .unwrap_or(0)
    };
    let best = values[best_index];
    let normalized = values
        .iter()
        .map(|v| {
            if higher_better {
                if best > 0.0 {
                    v / best
                } else if best < 0.0 {
                    best / v
                } else if *v == 0.0 {
                    1.0
                } else {
                    0.0
                }
            } else if *v > 0.0 {
                best / v
            } else if best == 0.0 {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    (best_index, normalized)
}

/// Rank labeled reports per metric. All reports must cover the same trace.
pub fn compare_metrics(reports: &[(String, &RunReport)]) -> Result<RankingTable> {
    if reports.len() < 2 {
        return Err(Error::TooFewSamples(reports.len()));
    }
    let len0 = reports[0].1.frames.len();
    for (_, r) in reports {
        if r.frames.len() != len0 {
            return Err(Error::TraceMismatch(len0, r.frames.len()));
        }
    }
    let columns: [(&str, bool, fn(&Aggregates) -> f64); 5] = [
        ("safety", true, |a| a.mean_score),
        ("p95", false, |a| a.p95_response),
        ("p99", false, |a| a.p99_response),
        ("avg", false, |a| a.mean_response),
        ("max", false, |a| a.max_response),
    ];
    let entries = columns
        .iter()
        .map(|(name, higher, extract)| {
            let values: Vec<f64> = reports.iter().map(|(_, r)| extract(&r.aggregates)).collect();
            let (best_index, normalized) = normalize_column(&values, *higher);
            MetricRanking {
                metric: name.to_string(),
                higher_better: *higher,
                best_index,
                values,
                normalized,
            }
        })
        .collect();
    Ok(RankingTable {
        labels: reports.iter().map(|(l, _)| l.clone()).collect(),
        entries,
    })
}
