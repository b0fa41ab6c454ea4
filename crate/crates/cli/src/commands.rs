//! The five workflows behind the subcommands: trace generation, model
//! fitting, offline planning, simulation runs, report comparison, plus the
//! score-curve plot data.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use safesim_core::error::{Error, Result};
use safesim_core::files::{self, FileMeta, ModelFile, ReportFile, StoreFile};
use safesim_core::latency::{build_density_vector, LOG_CONVENTION};
use safesim_core::pipeline::{
    critical_modules, fit_accumulation_joint, CriticalSet, DependencyGraph,
};
use safesim_core::planner::{enumerate_plans, ClusterStore, PriorityPolicy, TimeoutTracker};
use safesim_core::safety::{
    quad_with_obstacle, response_time_window, score_curve, DrivingState, ScenarioMode,
};
use safesim_core::sim::{
    plan_score_fn, run_config, sample_stats, synthesize_samples, FrameRecord, Policy, RunReport,
    SampleRecord, SimContext,
};
use safesim_core::{latency, sim};

use crate::config::{PriorityPolicyChoice, RunConfig};

fn require(path: Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    path.or_else(|| fallback.clone())
        .ok_or_else(|| Error::InvalidConfig(format!("no {what} path given (flag or config)")))
}

pub fn cmd_gen(
    cfg: &RunConfig,
    frames: Option<u64>,
    seed: Option<u64>,
    out: &Path,
    samples_out: Option<&Path>,
    no_header: bool,
) -> Result<()> {
    let mut gen_cfg = cfg.generator.clone();
    if let Some(f) = frames {
        gen_cfg.frames = f;
    }
    let seed = seed.unwrap_or(cfg.seed);
    let trace = sim::generate_trace(&gen_cfg, seed)?;
    files::save_trace(out, &trace, FileMeta::unless(no_header).as_ref())?;
    println!("gen: wrote {} frames to {}", trace.len(), out.display());

    if let Some(samples_path) = samples_out {
        let graph = cfg.graph()?;
        let (samples, crit) = synthesize_samples(
            &trace,
            &graph,
            &cfg.truths,
            &gen_cfg.roi,
            &cfg.criticality,
            cfg.response_noise,
            seed,
        )?;
        files::save_samples(samples_path, &samples, FileMeta::unless(no_header).as_ref())?;
        println!(
            "gen: wrote {} samples to {} (critical set: {})",
            samples.len(),
            samples_path.display(),
            crit.names().join(", ")
        );
    }
    Ok(())
}

pub fn cmd_fit(
    cfg: &RunConfig,
    samples_path: Option<PathBuf>,
    ridge: Option<f64>,
    holdout: f64,
    out: &Path,
    no_header: bool,
) -> Result<()> {
    let samples_path = require(samples_path, &cfg.paths.samples, "samples")?;
    let samples: Vec<SampleRecord> = files::load_samples(&samples_path)?;
    if samples.is_empty() {
        return Err(Error::InvalidConfig("samples file is empty".into()));
    }
    if !(0.0..1.0).contains(&holdout) {
        return Err(Error::InvalidConfig(format!(
            "holdout fraction {holdout} must be in [0, 1)"
        )));
    }
    let graph = cfg.graph()?;
    let ridge = ridge.unwrap_or(cfg.ridge);
    let roi = cfg.generator.roi;
    let expected = roi.vector_len();
    for s in &samples {
        if s.density.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: s.density.len(),
            });
        }
    }

    let n_test = ((samples.len() as f64) * holdout).floor() as usize;
    let n_train = samples.len() - n_test;
    if n_train == 0 {
        return Err(Error::InsufficientData("holdout leaves no training rows".into()));
    }
    let (train, test) = samples.split_at(n_train);

    let densities: Vec<latency::DensityVector> =
        train.iter().map(|s| s.density.clone()).collect();
    let mut targets: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for m in &graph.modules {
        let series = train
            .iter()
            .map(|s| {
                s.latencies
                    .get(&m.name)
                    .copied()
                    .ok_or_else(|| Error::MissingLatency(m.name.clone()))
            })
            .collect::<Result<Vec<f64>>>()?;
        targets.insert(m.name.clone(), series);
    }
    let coefficients = latency::fit_baseline_multi(&densities, &targets, ridge)?;

    let mut training_mse = BTreeMap::new();
    for (name, coef) in &coefficients {
        let train_pairs: Vec<(latency::DensityVector, f64)> = train
            .iter()
            .map(|s| (s.density.clone(), s.latencies[name]))
            .collect();
        let mse = latency::model_mse(coef, &train_pairs)?;
        training_mse.insert(name.clone(), mse);
        if n_test > 0 {
            let test_pairs: Vec<(latency::DensityVector, f64)> = test
                .iter()
                .map(|s| (s.density.clone(), s.latencies[name]))
                .collect();
            let hold = latency::model_mse(coef, &test_pairs)?;
            println!("fit {name}: train_mse={mse:.3e} holdout_mse={hold:.3e}");
        } else {
            println!("fit {name}: train_mse={mse:.3e}");
        }
    }

    let stats = sample_stats(&samples, &graph);
    let crit = critical_modules(&graph, &stats, &cfg.criticality)?;
    let rows: Vec<(BTreeMap<String, f64>, f64)> = train
        .iter()
        .map(|s| (s.latencies.clone(), s.response_time))
        .collect();
    let accumulation = fit_accumulation_joint(&rows, &graph, crit.names())?;

    let model = ModelFile {
        meta: FileMeta::unless(no_header),
        roi,
        log_convention: LOG_CONVENTION.to_string(),
        ridge,
        coefficients,
        conversion: cfg.conversion.clone(),
        accumulation,
        critical: crit.names().to_vec(),
        training_mse,
    };
    model.validate()?;
    files::save_json(out, &model)?;
    println!(
        "fit: wrote model for {} modules to {} (critical: {})",
        model.coefficients.len(),
        out.display(),
        model.critical.join(", ")
    );
    Ok(())
}

/// Pieces shared by `plan` and `run`: the effective graph, the critical
/// set, and the fitted model.
struct Artifacts {
    graph: DependencyGraph,
    model: ModelFile,
    crit: CriticalSet,
}

fn load_artifacts(cfg: &RunConfig, model_path: Option<PathBuf>) -> Result<Artifacts> {
    let model_path = require(model_path, &cfg.paths.model, "model")?;
    let model: ModelFile = files::load_json(&model_path)?;
    model.validate()?;
    let graph = model.apply_to_graph(&cfg.graph()?);
    graph.validate()?;
    let crit = CriticalSet::new(model.critical.clone(), &graph)?;
    if crit.is_empty() {
        return Err(Error::EmptyCriticalSet);
    }
    Ok(Artifacts { graph, model, crit })
}

fn load_trace_checked(cfg: &RunConfig, trace_path: Option<PathBuf>) -> Result<Vec<FrameRecord>> {
    let trace_path = require(trace_path, &cfg.paths.trace, "trace")?;
    let trace = files::load_trace(&trace_path)?;
    if trace.is_empty() {
        return Err(Error::InvalidConfig("trace file is empty".into()));
    }
    Ok(trace)
}

/// Timeout patterns per frame, collected by replaying the trace under the
/// native CPU+GPU policy (the data-collection configuration).
fn collect_timeout_patterns(
    trace: &[FrameRecord],
    ctx: &SimContext,
    window: u64,
) -> Result<Vec<safesim_core::planner::TimeoutPattern>> {
    let report = run_config(trace, &Policy::CpuGpuStatic, ctx)?;
    let mut tracker = TimeoutTracker::new(ctx.crit.names().to_vec(), window);
    let mut out = Vec::with_capacity(trace.len());
    for frame in &report.frames {
        let graph = ctx.graph;
        let latencies = &frame.latencies;
        tracker.observe(&|name: &str| {
            graph
                .module(name)
                .and_then(|m| m.sampling_interval)
                .map(|s| latencies.get(name).map(|t| *t > s).unwrap_or(false))
                .unwrap_or(false)
        });
        out.push(tracker.pattern());
    }
    Ok(out)
}

pub fn cmd_plan(
    cfg: &RunConfig,
    trace_path: Option<PathBuf>,
    model_path: Option<PathBuf>,
    h: Option<u32>,
    stride: Option<usize>,
    out: &Path,
    no_header: bool,
) -> Result<()> {
    let trace = load_trace_checked(cfg, trace_path)?;
    let artifacts = load_artifacts(cfg, model_path)?;
    let h = h.unwrap_or(cfg.h);
    let stride = stride.unwrap_or(cfg.plan_stride).max(1);

    let ctx = SimContext {
        graph: &artifacts.graph,
        roi: &artifacts.model.roi,
        coefficients: &artifacts.model.coefficients,
        conversion: &artifacts.model.conversion,
        machine: &cfg.machine,
        weights: &cfg.weights,
        crit: &artifacts.crit,
    };

    let patterns = collect_timeout_patterns(&trace, &ctx, h as u64)?;
    let mut samples = Vec::new();
    for (i, f) in trace.iter().enumerate() {
        if i % stride != 0 {
            continue;
        }
        let density = build_density_vector(&f.positions, &artifacts.model.roi)?;
        samples.push((density, patterns[i].clone()));
    }

    let policy = match cfg.priority_policy {
        PriorityPolicyChoice::TopoFixed => PriorityPolicy::TopoFixed,
        PriorityPolicyChoice::CriticalFirst => {
            PriorityPolicy::CriticalFirst(artifacts.crit.clone())
        }
        PriorityPolicyChoice::All => PriorityPolicy::All,
    };
    let plans = enumerate_plans(&artifacts.graph, &policy)?;
    let score = plan_score_fn(&ctx, &cfg.nominal)?;
    let store = safesim_core::planner::offline_plan(
        &samples,
        &artifacts.graph,
        &plans,
        cfg.feature_scaling_minmax,
        h,
        score,
    )?;
    println!(
        "plan: {} plans, {} samples -> {} clusters",
        plans.len(),
        samples.len(),
        store.clusters.len()
    );
    let file = StoreFile {
        meta: FileMeta::unless(no_header),
        store,
    };
    files::save_json(out, &file)?;
    println!("plan: wrote store to {}", out.display());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PolicyChoice {
    Cpu,
    CpuGpu,
    Managed,
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_run(
    cfg: &RunConfig,
    trace_path: Option<PathBuf>,
    model_path: Option<PathBuf>,
    policy: PolicyChoice,
    store_path: Option<PathBuf>,
    h: Option<u32>,
    initial_cluster: Option<usize>,
    out: &Path,
    csv: Option<&Path>,
    no_header: bool,
) -> Result<()> {
    let trace = load_trace_checked(cfg, trace_path)?;
    let artifacts = load_artifacts(cfg, model_path)?;
    let ctx = SimContext {
        graph: &artifacts.graph,
        roi: &artifacts.model.roi,
        coefficients: &artifacts.model.coefficients,
        conversion: &artifacts.model.conversion,
        machine: &cfg.machine,
        weights: &cfg.weights,
        crit: &artifacts.crit,
    };

    let store: Option<ClusterStore> = match policy {
        PolicyChoice::Managed => {
            let path = require(store_path, &cfg.paths.store, "store")?;
            let file: StoreFile = files::load_json(&path)?;
            Some(file.store)
        }
        _ => None,
    };
    let policy = match policy {
        PolicyChoice::Cpu => Policy::CpuOnly,
        PolicyChoice::CpuGpu => Policy::CpuGpuStatic,
        PolicyChoice::Managed => Policy::Managed {
            store: store.as_ref().expect("store loaded above"),
            initial_cluster: initial_cluster.or(cfg.initial_cluster),
            switch_penalty: cfg.switch_penalty,
            h,
        },
    };
    let report = run_config(&trace, &policy, &ctx)?;
    let a = &report.aggregates;
    println!(
        "run {}: frames={} mean_t={:.4}s p95={:.4}s p99={:.4}s max={:.4}s mean_score={:.4} \
         timeouts={} switches={} energy={:.1}J edp={:.2}",
        report.policy,
        a.frame_count,
        a.mean_response,
        a.p95_response,
        a.p99_response,
        a.max_response,
        a.mean_score,
        a.timeout_frames,
        a.switches,
        a.energy_joules,
        a.edp_joule_seconds
    );
    if let Some(csv_path) = csv {
        write_frames_csv(csv_path, &report, no_header)?;
    }
    let file = ReportFile {
        meta: FileMeta::unless(no_header),
        report,
    };
    files::save_json(out, &file)?;
    println!("run: wrote report to {}", out.display());
    Ok(())
}

fn write_frames_csv(path: &Path, report: &RunReport, no_header: bool) -> Result<()> {
    let mut w = csv_writer(path, no_header)?;
    writeln!(
        w,
        "frame,response_time,theta,score,timeout,plan_index,switched"
    )
    .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    for f in &report.frames {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            f.frame, f.response_time, f.theta, f.score, f.timeout as u8, f.plan_index,
            f.switched as u8
        )
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn csv_writer(path: &Path, no_header: bool) -> Result<std::io::BufWriter<fs::File>> {
    let file = fs::File::create(path)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    let mut w = std::io::BufWriter::new(file);
    if !no_header {
        let meta = FileMeta::now();
        writeln!(w, "# {} {} created_unix={}", meta.tool, meta.version, meta.created_unix)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    }
    Ok(w)
}

pub fn cmd_compare(
    report_paths: &[PathBuf],
    out: &Path,
    no_header: bool,
) -> Result<()> {
    if report_paths.len() < 2 {
        return Err(Error::InvalidConfig(
            "compare needs at least two report files".into(),
        ));
    }
    let mut loaded: Vec<(String, ReportFile)> = Vec::new();
    for p in report_paths {
        let label = p
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| p.display().to_string());
        loaded.push((label, files::load_json(p)?));
    }
    let reports: Vec<(String, &RunReport)> = loaded
        .iter()
        .map(|(l, f)| (l.clone(), &f.report))
        .collect();
    let table = sim::compare_metrics(&reports)?;

    let mut w = csv_writer(out, no_header)?;
    writeln!(w, "metric,label,value,normalized,best")
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", out.display())))?;
    for entry in &table.entries {
        for (i, label) in table.labels.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{}",
                entry.metric,
                label,
                entry.values[i],
                entry.normalized[i],
                (i == entry.best_index) as u8
            )
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", out.display())))?;
        }
        println!(
            "compare {}: best={}",
            entry.metric, table.labels[entry.best_index]
        );
    }
    println!("compare: wrote ranking to {}", out.display());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModeChoice {
    Opposing,
    SameDirection,
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_curve(
    cfg: &RunConfig,
    v: f64,
    a_accel: f64,
    a_brake: f64,
    d: f64,
    mode: Option<ModeChoice>,
    t_max: f64,
    step: f64,
    out: &Path,
    no_header: bool,
) -> Result<()> {
    let av = DrivingState {
        v,
        a_max_accel: a_accel,
        a_min_brake: a_brake,
    };
    av.validate()?;
    let mode = match mode {
        Some(ModeChoice::Opposing) => ScenarioMode::Opposing,
        Some(ModeChoice::SameDirection) => ScenarioMode::SameDirection,
        None => cfg.nominal.mode,
    };
    let q = quad_with_obstacle(&av, &cfg.nominal.obstacle, mode, &cfg.weights)?;
    let theta = response_time_window(d, &q)?;
    let points = score_curve(0.0, t_max, step, &q, &cfg.weights, theta)?;
    let mut w = csv_writer(out, no_header)?;
    writeln!(w, "t,score").map_err(|e| Error::InvalidConfig(format!("{}: {e}", out.display())))?;
    for (t, s) in &points {
        writeln!(w, "{t},{s}")
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", out.display())))?;
    }
    println!(
        "curve: theta={theta:.6}s, {} points written to {}",
        points.len(),
        out.display()
    );
    Ok(())
}
