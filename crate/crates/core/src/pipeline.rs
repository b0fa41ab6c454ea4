//! Software-module dependency graph and the instantaneous response time.
//!
//! The system response time for one sensor frame is the sum of per-module
//! accumulation functions applied to the latencies of the safety-critical
//! modules. Accumulation is piecewise linear with a knee at the module's
//! sampling interval: past the knee a lagging module delays subsequent
//! frames and its dependents, so the contribution grows faster.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solve;
use crate::stats::LatencySummary;

/// Two-segment piecewise-linear latency accumulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccumulationFn {
    /// Knee position in seconds.
    pub threshold: f64,
    /// Slope below the knee.
    pub slope_below: f64,
    /// Slope above the knee; at least `slope_below`.
    pub slope_above: f64,
}

impl AccumulationFn {
    /// Identity contribution (no accumulation effect).
    pub fn identity() -> AccumulationFn {
        AccumulationFn {
            threshold: 0.0,
            slope_below: 1.0,
            slope_above: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold >= 0.0
            && self.slope_below > 0.0
            && self.slope_above >= self.slope_below)
        {
            return Err(Error::InvalidConfig(format!(
                "invalid accumulation fn: threshold {}, slopes {}/{}",
                self.threshold, self.slope_below, self.slope_above
            )));
        }
        Ok(())
    }
}

/// Contribution of one module latency to the system response time.
pub fn accumulate(w: &AccumulationFn, t_i: f64) -> f64 {
    if t_i <= w.threshold {
        w.slope_below * t_i
    } else {
        w.slope_below * w.threshold + w.slope_above * (t_i - w.threshold)
    }
}

/// One software module of the perception pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleSpec {
    pub name: String,
    /// Sensor sampling interval in seconds for sensor-driven modules; a
    /// latency above it counts as a timeout.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling_interval: Option<f64>,
    /// Resource indices this module can execute on (0 = baseline/CPU).
    pub supported_resources: Vec<u32>,
    pub accumulation: AccumulationFn,
    /// Marks deep-learning workloads, which the static CPU+GPU policy
    /// pins to the GPU.
    #[serde(default)]
    pub deep_learning: bool,
}

impl ModuleSpec {
    pub fn validate(&self) -> Result<()> {
        if let Some(s) = self.sampling_interval {
            if !(s > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "module '{}': sampling interval must be positive",
                    self.name
                )));
            }
        }
        if self.supported_resources.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "module '{}': no supported resources",
                self.name
            )));
        }
        self.accumulation.validate()
    }
}

/// Producer -> consumer dependency graph over the software modules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependencyGraph {
    pub modules: Vec<ModuleSpec>,
    /// (producer, consumer) pairs.
    pub edges: Vec<(String, String)>,
}

impl DependencyGraph {
    pub fn new(modules: Vec<ModuleSpec>, edges: Vec<(String, String)>) -> Result<DependencyGraph> {
        let g = DependencyGraph { modules, edges };
        g.validate()?;
        Ok(g)
    }

    pub fn module(&self, name: &str) -> Option<&ModuleSpec> {
        self.modules.iter().find(|m| m.name == name)
    }

    fn index_of(&self) -> HashMap<&str, usize> {
        self.modules
            .iter()
            .enumerate()
            .map(|(i, m)| (m.name.as_str(), i))
            .collect()
    }

    /// Direct consumers per module index.
    fn successors(&self) -> Result<Vec<Vec<usize>>> {
        let index = self.index_of();
        let mut succ = vec![Vec::new(); self.modules.len()];
        for (from, to) in &self.edges {
            let f = *index
                .get(from.as_str())
                .ok_or_else(|| Error::DanglingEdge(from.clone()))?;
            let t = *index
                .get(to.as_str())
                .ok_or_else(|| Error::DanglingEdge(to.clone()))?;
            succ[f].push(t);
        }
        Ok(succ)
    }

    /// Direct producers per module index.
    pub(crate) fn predecessors(&self) -> Result<Vec<Vec<usize>>> {
        let index = self.index_of();
        let mut pred = vec![Vec::new(); self.modules.len()];
        for (from, to) in &self.edges {
            let f = *index
                .get(from.as_str())
                .ok_or_else(|| Error::DanglingEdge(from.clone()))?;
            let t = *index
                .get(to.as_str())
                .ok_or_else(|| Error::DanglingEdge(to.clone()))?;
            pred[t].push(f);
        }
        Ok(pred)
    }

    /// Checks well-formedness: unique names, valid modules, edge endpoints
    /// exist, and no cycles. A cycle error names the modules on it.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for m in &self.modules {
            m.validate()?;
            if !seen.insert(m.name.as_str()) {
                return Err(Error::DuplicateModule(m.name.clone()));
            }
        }
        let order = self.topo_order_by(|_| 0)?;
        debug_assert_eq!(order.len(), self.modules.len());
        Ok(())
    }

    /// Topological order with ties broken by ascending `rank` then name.
    ///
    /// Returns the module indices. Fails with the offending cycle when the
    /// graph is not acyclic.
    pub fn topo_order_by<F>(&self, rank: F) -> Result<Vec<usize>>
    where
        F: Fn(&ModuleSpec) -> usize,
    {
        use std::cmp::Reverse;
        let succ = self.successors()?;
        let mut indegree = vec![0usize; self.modules.len()];
        for out in &succ {
            for &t in out {
                indegree[t] += 1;
            }
        }
        let mut heap: BinaryHeap<Reverse<(usize, &str, usize)>> = BinaryHeap::new();
        for (i, m) in self.modules.iter().enumerate() {
            if indegree[i] == 0 {
                heap.push(Reverse((rank(m), m.name.as_str(), i)));
            }
        }
        let mut order = Vec::with_capacity(self.modules.len());
        while let Some(Reverse((_, _, i))) = heap.pop() {
            order.push(i);
            for &t in &succ[i] {
                indegree[t] -= 1;
                if indegree[t] == 0 {
                    let m = &self.modules[t];
                    heap.push(Reverse((rank(m), m.name.as_str(), t)));
                }
            }
        }
        if order.len() != self.modules.len() {
            let mut cycle: Vec<String> = indegree
                .iter()
                .enumerate()
                .filter(|(_, d)| **d > 0)
                .map(|(i, _)| self.modules[i].name.clone())
                .collect();
            cycle.sort();
            return Err(Error::CycleDetected(cycle));
        }
        Ok(order)
    }

    /// Lexicographic topological order of module names.
    pub fn topo_names(&self) -> Result<Vec<String>> {
        Ok(self
            .topo_order_by(|_| 0)?
            .into_iter()
            .map(|i| self.modules[i].name.clone())
            .collect())
    }

    /// Number of transitive dependents (consumers, direct or indirect) per
    /// module name.
    pub fn transitive_dependents(&self) -> Result<BTreeMap<String, usize>> {
        let succ = self.successors()?;
        let n = self.modules.len();
        let mut out = BTreeMap::new();
        for start in 0..n {
            let mut seen = vec![false; n];
            let mut stack = succ[start].clone();
            let mut count = 0usize;
            while let Some(i) = stack.pop() {
                if seen[i] {
                    continue;
                }
                seen[i] = true;
                count += 1;
                stack.extend_from_slice(&succ[i]);
            }
            out.insert(self.modules[start].name.clone(), count);
        }
        Ok(out)
    }
}

/// Validate the dependency graph, reporting the offending cycle or edge.
pub fn validate_graph(g: &DependencyGraph) -> Result<()> {
    g.validate()
}

/// Ordered set of safety-critical modules; its length is the N of the
/// response-time sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalSet {
    names: Vec<String>,
}

impl CriticalSet {
    pub fn new(names: Vec<String>, g: &DependencyGraph) -> Result<CriticalSet> {
        for n in &names {
            if g.module(n).is_none() {
                return Err(Error::MissingStats(n.clone()));
            }
        }
        Ok(CriticalSet { names })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.names.iter().any(|n| n == name)
    }
}

/// Cutoffs for the criticality rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalityConfig {
    /// Modules whose max latency sits at or above this quantile of all
    /// module max latencies are critical. 0.7 keeps roughly the top 30%.
    pub max_latency_quantile: f64,
    /// Modules with at least this many transitive dependents are critical
    /// regardless of latency.
    pub fanout_cutoff: usize,
}

impl Default for CriticalityConfig {
    fn default() -> Self {
        CriticalityConfig {
            max_latency_quantile: 0.7,
            fanout_cutoff: 2,
        }
    }
}

/// Select safety-critical modules: long maximum latency (quantile rule) or
/// strict inter-dependency (transitive fan-out rule). Output is in
/// topological order and independent of the stats map iteration order.
pub fn critical_modules(
    g: &DependencyGraph,
    stats: &BTreeMap<String, LatencySummary>,
    cfg: &CriticalityConfig,
) -> Result<CriticalSet> {
    for m in &g.modules {
        if !stats.contains_key(&m.name) {
            return Err(Error::MissingStats(m.name.clone()));
        }
    }
    let mut maxes: Vec<f64> = g.modules.iter().map(|m| stats[&m.name].max).collect();
    maxes.sort_by(|a, b| a.partial_cmp(b).expect("non-finite max latency"));
    let n = maxes.len();
    let threshold = if n == 0 {
        f64::INFINITY
    } else {
        let idx = ((cfg.max_latency_quantile * n as f64).ceil() as usize).min(n - 1);
        maxes[idx]
    };
    let fanout = g.transitive_dependents()?;
    let mut names = Vec::new();
    for i in g.topo_order_by(|_| 0)? {
        let m = &g.modules[i];
        let by_latency = stats[&m.name].max >= threshold;
        let by_fanout = fanout[&m.name] >= cfg.fanout_cutoff;
        if by_latency || by_fanout {
            names.push(m.name.clone());
        }
    }
    CriticalSet::new(names, g)
}

/// Instantaneous system response time: sum of accumulated latencies over
/// the critical set.
pub fn instantaneous_response_time(
    latencies: &BTreeMap<String, f64>,
    crit: &CriticalSet,
    g: &DependencyGraph,
) -> Result<f64> {
    if crit.is_empty() {
        return Err(Error::EmptyCriticalSet);
    }
    let mut total = 0.0;
    for name in crit.names() {
        let t_i = *latencies
            .get(name)
            .ok_or_else(|| Error::MissingLatency(name.clone()))?;
        let module = g
            .module(name)
            .ok_or_else(|| Error::MissingLatency(name.clone()))?;
        total += accumulate(&module.accumulation, t_i);
    }
    Ok(total)
}

/// Least-squares fit of one module's accumulation function from
/// (latency, contribution) points.
///
/// With a known knee the two slopes come from a linear fit on the hinge
/// basis `[min(t, knee), max(t - knee, 0)]`. Without one, the knee is found
/// by a 1-D grid search over observed latencies minimizing the SSE. Points
/// never crossing the knee leave the upper slope unidentified; it then
/// defaults to the lower slope.
pub fn fit_accumulation(points: &[(f64, f64)], knee: Option<f64>) -> Result<AccumulationFn> {
    if points.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "need at least 4 points, got {}",
            points.len()
        )));
    }
    if points
        .iter()
        .any(|(t, y)| !t.is_finite() || !y.is_finite())
    {
        return Err(Error::NonFinite("accumulation fit input"));
    }
    match knee {
        Some(k) => fit_with_knee(points, k),
        None => {
            let mut candidates: Vec<f64> = points.iter().map(|(t, _)| *t).collect();
            candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
            candidates.dedup();
            // Interior candidates only; a knee at either extreme degenerates
            // to a single segment.
            let interior = &candidates[1..candidates.len().saturating_sub(1).max(1)];
            let mut best: Option<(f64, AccumulationFn)> = None;
            for &k in interior {
                if let Ok(fit) = fit_with_knee(points, k) {
                    let sse = sse_of(points, &fit);
                    if best.as_ref().map(|(b, _)| sse < *b).unwrap_or(true) {
                        best = Some((sse, fit));
                    }
                }
            }
            best.map(|(_, f)| f)
                .ok_or_else(|| Error::InsufficientData("degenerate accumulation data".into()))
        }
    }
}

/// Jointly fit the accumulation functions of several modules from frames of
/// (per-module latency, system response time).
///
/// The response is modeled as the sum of per-module hinge contributions
/// `s_b*min(t, knee) + s_a*max(t - knee, 0)`, linear in the slopes once the
/// knees are fixed. Knees default to each module's sampling interval; a
/// module without one gets its knee from a grid search over its observed
/// latencies minimizing the joint SSE.
pub fn fit_accumulation_joint(
    rows: &[(BTreeMap<String, f64>, f64)],
    g: &DependencyGraph,
    modules: &[String],
) -> Result<BTreeMap<String, AccumulationFn>> {
    if rows.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "need at least 4 frames, got {}",
            rows.len()
        )));
    }
    for name in modules {
        if g.module(name).is_none() {
            return Err(Error::MissingStats(name.clone()));
        }
        for (lat, _) in rows {
            if !lat.contains_key(name) {
                return Err(Error::MissingLatency(name.clone()));
            }
        }
    }
    let mut knees: BTreeMap<String, f64> = BTreeMap::new();
    let mut unknown: Vec<String> = Vec::new();
    for name in modules {
        match g.module(name).and_then(|m| m.sampling_interval) {
            Some(k) => {
                knees.insert(name.clone(), k);
            }
            None => unknown.push(name.clone()),
        }
    }
    // Seed unknown knees at the median observed latency, then refine each
    // by grid search in sorted order.
    for name in &unknown {
        let mut series: Vec<f64> = rows.iter().map(|(lat, _)| lat[name]).collect();
        series.sort_by(|a, b| a.partial_cmp(b).unwrap());
        knees.insert(name.clone(), series[series.len() / 2]);
    }
    for name in &unknown {
        let mut candidates: Vec<f64> = rows.iter().map(|(lat, _)| lat[name]).collect();
        candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
        candidates.dedup();
        let interior = &candidates[1..candidates.len().saturating_sub(1).max(1)];
        let mut best: Option<(f64, f64)> = None;
        for &k in interior {
            knees.insert(name.clone(), k);
            if let Ok(fit) = joint_solve(rows, modules, &knees) {
                let sse = joint_sse(rows, modules, &fit);
                if best.map(|(b, _)| sse < b).unwrap_or(true) {
                    best = Some((sse, k));
                }
            }
        }
        let k = best
            .map(|(_, k)| k)
            .ok_or_else(|| Error::InsufficientData("degenerate accumulation data".into()))?;
        knees.insert(name.clone(), k);
    }
    joint_solve(rows, modules, &knees)
}

fn joint_solve(
    rows: &[(BTreeMap<String, f64>, f64)],
    modules: &[String],
    knees: &BTreeMap<String, f64>,
) -> Result<BTreeMap<String, AccumulationFn>> {
    use ndarray::{Array1, Array2, Axis};
    let n = rows.len();
    let p = 2 * modules.len();
    let mut x = Array2::<f64>::zeros((n, p));
    let mut y = Array1::<f64>::zeros(n);
    for (r, (lat, response)) in rows.iter().enumerate() {
        for (j, name) in modules.iter().enumerate() {
            let t = lat[name];
            let k = knees[name];
            x[(r, 2 * j)] = t.min(k);
            x[(r, 2 * j + 1)] = (t - k).max(0.0);
        }
        y[r] = *response;
    }
    let ys = y.insert_axis(Axis(1));
    let coefs = solve::ridge_fit_multi(&x, &ys, 0.0, None)?;
    let mut out = BTreeMap::new();
    for (j, name) in modules.iter().enumerate() {
        let below = coefs[(2 * j, 0)];
        let above = coefs[(2 * j + 1, 0)];
        // An all-zero hinge column solves to 0; fall back to the lower
        // slope there, and keep the convexity invariant.
        let crossings = rows.iter().filter(|(lat, _)| lat[name] > knees[name]).count();
        let slope_below = if below > 0.0 { below } else { f64::EPSILON };
        let slope_above = if crossings == 0 {
            slope_below
        } else {
            above.max(slope_below)
        };
        out.insert(
            name.clone(),
            AccumulationFn {
                threshold: knees[name],
                slope_below,
                slope_above,
            },
        );
    }
    Ok(out)
}

fn joint_sse(
    rows: &[(BTreeMap<String, f64>, f64)],
    modules: &[String],
    fits: &BTreeMap<String, AccumulationFn>,
) -> f64 {
    rows.iter()
        .map(|(lat, response)| {
            let pred: f64 = modules
                .iter()
                .map(|name| accumulate(&fits[name], lat[name]))
                .sum();
            let r = response - pred;
            r * r
        })
        .sum()
}

fn sse_of(points: &[(f64, f64)], w: &AccumulationFn) -> f64 {
    points
        .iter()
        .map(|(t, y)| {
            let r = y - accumulate(w, *t);
            r * r
        })
        .sum()
}

fn fit_with_knee(points: &[(f64, f64)], knee: f64) -> Result<AccumulationFn> {
    let below_only = points.iter().all(|(t, _)| *t <= knee);
    if below_only {
        // Single identified slope through the origin.
        let num: f64 = points.iter().map(|(t, y)| t * y).sum();
        let den: f64 = points.iter().map(|(t, _)| t * t).sum();
        if den == 0.0 {
            return Err(Error::InsufficientData(
                "all latencies zero; slope unidentified".into(),
            ));
        }
        let s = num / den;
        let s = if s > 0.0 { s } else { f64::EPSILON };
        return Ok(AccumulationFn {
            threshold: knee,
            slope_below: s,
            slope_above: s,
        });
    }
    let rows: Vec<[f64; 2]> = points
        .iter()
        .map(|(t, _)| [t.min(knee), (t - knee).max(0.0)])
        .collect();
    let ys: Vec<f64> = points.iter().map(|(_, y)| *y).collect();
    let coef = solve::least_squares_2(&rows, &ys)?;
    let slope_below = if coef[0] > 0.0 { coef[0] } else { f64::EPSILON };
    let slope_above = coef[1].max(slope_below);
    Ok(AccumulationFn {
        threshold: knee,
        slope_below,
        slope_above,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand::Rng as _;
    use rand_chacha::ChaCha8Rng;

    fn module(name: &str) -> ModuleSpec {
        ModuleSpec {
            name: name.to_string(),
            sampling_interval: None,
            supported_resources: vec![0],
            accumulation: AccumulationFn::identity(),
            deep_learning: false,
        }
    }

    fn graph(names: &[&str], edges: &[(&str, &str)]) -> DependencyGraph {
        DependencyGraph {
            modules: names.iter().map(|n| module(n)).collect(),
            edges: edges
                .iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect(),
        }
    }

    /// Ten modules shaped like a LiDAR perception pipeline: a driver feeding
    /// a labeling stage with four sub-labelers, then segmentation fanning
    /// out into merge/filter/occupancy stages.
    pub(crate) fn lidar_like_graph() -> DependencyGraph {
        graph(
            &[
                "lidar_driver",
                "labeling",
                "label_ground",
                "label_curb",
                "label_objects",
                "label_noise",
                "segmentation",
                "merge",
                "filter",
                "occupancy_grid",
            ],
            &[
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
            ],
        )
    }

    #[test]
    fn empty_graph_is_valid() {
        assert!(validate_graph(&graph(&[], &[])).is_ok());
    }

    #[test]
    fn two_cycle_is_reported() {
        let g = graph(&["a", "b"], &[("a", "b"), ("b", "a")]);
        match validate_graph(&g) {
            Err(Error::CycleDetected(names)) => assert_eq!(names, vec!["a", "b"]),
            other => panic!("expected cycle error, got {other:?}"),
        }
    }

    #[test]
    fn dangling_edge_is_reported() {
        let g = graph(&["a"], &[("a", "ghost")]);
        assert!(matches!(
            validate_graph(&g),
            Err(Error::DanglingEdge(n)) if n == "ghost"
        ));
    }

    #[test]
    fn lidar_fixture_is_valid_and_topo_ordered() {
        let g = lidar_like_graph();
        assert!(validate_graph(&g).is_ok());
        let order = g.topo_names().unwrap();
        assert_eq!(order[0], "lidar_driver");
        let pos = |n: &str| order.iter().position(|x| x == n).unwrap();
        assert!(pos("segmentation") < pos("merge"));
        assert!(pos("merge") < pos("filter"));
    }

    #[test]
    fn transitive_dependents_counts_reachability() {
        let g = lidar_like_graph();
        let deps = g.transitive_dependents().unwrap();
        assert_eq!(deps["segmentation"], 3); // merge, filter, occupancy_grid
        assert_eq!(deps["filter"], 0);
        assert_eq!(deps["lidar_driver"], 9);
    }

    fn uniform_stats(g: &DependencyGraph, max: f64) -> BTreeMap<String, LatencySummary> {
        g.modules
            .iter()
            .map(|m| {
                (
                    m.name.clone(),
                    LatencySummary {
                        max,
                        mean: max / 2.0,
                        p95: max,
                    },
                )
            })
            .collect()
    }

    #[test]
    fn uniform_stats_with_zero_fanout_cutoff_selects_all() {
        let g = lidar_like_graph();
        let stats = uniform_stats(&g, 0.05);
        let crit = critical_modules(
            &g,
            &stats,
            &CriticalityConfig {
                max_latency_quantile: 0.7,
                fanout_cutoff: 0,
            },
        )
        .unwrap();
        assert_eq!(crit.len(), g.modules.len());
    }

    #[test]
    fn dominant_max_latency_is_selected_at_top_decile() {
        let g = lidar_like_graph();
        let mut stats = uniform_stats(&g, 0.05);
        stats.get_mut("occupancy_grid").unwrap().max = 0.5;
        let crit = critical_modules(
            &g,
            &stats,
            &CriticalityConfig {
                max_latency_quantile: 0.9,
                fanout_cutoff: usize::MAX,
            },
        )
        .unwrap();
        assert_eq!(crit.names(), ["occupancy_grid"]);
    }

    #[test]
    fn high_fanout_node_selected_regardless_of_latency() {
        // labeling has 4 direct dependents here.
        let g = graph(
            &["labeling", "a", "b", "c", "d"],
            &[
                ("labeling", "a"),
                ("labeling", "b"),
                ("labeling", "c"),
                ("labeling", "d"),
            ],
        );
        let mut stats = uniform_stats(&g, 0.05);
        stats.get_mut("labeling").unwrap().max = 1e-6; // fastest of all
        let crit = critical_modules(
            &g,
            &stats,
            &CriticalityConfig {
                max_latency_quantile: 1.0,
                fanout_cutoff: 3,
            },
        )
        .unwrap();
        assert!(crit.contains("labeling"));
    }

    #[test]
    fn criticality_invariant_under_module_reordering() {
        let g = lidar_like_graph();
        let mut shuffled = g.clone();
        shuffled.modules.reverse();
        shuffled.edges.reverse();
        let mut stats = uniform_stats(&g, 0.05);
        stats.get_mut("segmentation").unwrap().max = 0.2;
        let cfg = CriticalityConfig::default();
        let a = critical_modules(&g, &stats, &cfg).unwrap();
        let b = critical_modules(&shuffled, &stats, &cfg).unwrap();
        assert_eq!(a.names(), b.names());
    }

    #[test]
    fn accumulate_below_and_above_threshold() {
        let w = AccumulationFn {
            threshold: 0.1,
            slope_below: 1.0,
            slope_above: 1.0,
        };
        assert_abs_diff_eq!(accumulate(&w, 0.08), 0.08);
        let w = AccumulationFn {
            threshold: 0.1,
            slope_below: 1.0,
            slope_above: 3.0,
        };
        assert_abs_diff_eq!(accumulate(&w, 0.12), 0.16, epsilon = 1e-12);
        // Continuity at the knee.
        assert_abs_diff_eq!(accumulate(&w, 0.1), 0.1, epsilon = 1e-15);
    }

    #[test]
    fn response_time_sums_identity_contributions() {
        let g = graph(&["a", "b", "c"], &[]);
        let crit = CriticalSet::new(
            vec!["a".into(), "b".into(), "c".into()],
            &g,
        )
        .unwrap();
        let lat: BTreeMap<String, f64> = [("a", 0.03), ("b", 0.04), ("c", 0.02)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let t = instantaneous_response_time(&lat, &crit, &g).unwrap();
        assert_abs_diff_eq!(t, 0.09, epsilon = 1e-12);
    }

    #[test]
    fn response_time_reflects_knee_contribution() {
        let mut g = graph(&["a", "b"], &[]);
        g.modules[0].accumulation = AccumulationFn {
            threshold: 0.1,
            slope_below: 1.0,
            slope_above: 3.0,
        };
        let crit = CriticalSet::new(vec!["a".into(), "b".into()], &g).unwrap();
        let lat: BTreeMap<String, f64> = [("a", 0.12), ("b", 0.04)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let t = instantaneous_response_time(&lat, &crit, &g).unwrap();
        assert_abs_diff_eq!(t, 0.16 + 0.04, epsilon = 1e-12);
    }

    #[test]
    fn response_time_rejects_empty_critical_set() {
        let g = graph(&["a"], &[]);
        let crit = CriticalSet::new(vec![], &g).unwrap();
        assert!(matches!(
            instantaneous_response_time(&BTreeMap::new(), &crit, &g),
            Err(Error::EmptyCriticalSet)
        ));
    }

    #[test]
    fn response_time_rejects_missing_latency() {
        let g = graph(&["a", "b"], &[]);
        let crit = CriticalSet::new(vec!["a".into(), "b".into()], &g).unwrap();
        let lat: BTreeMap<String, f64> = [("a".to_string(), 0.1)].into_iter().collect();
        assert!(matches!(
            instantaneous_response_time(&lat, &crit, &g),
            Err(Error::MissingLatency(n)) if n == "b"
        ));
    }

    fn synth_points(w: &AccumulationFn, n: usize, noise: f64, seed: u64) -> Vec<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let t: f64 = rng.gen_range(0.0..0.3);
                let eps = if noise > 0.0 {
                    rng.gen_range(-noise..noise)
                } else {
                    0.0
                };
                (t, accumulate(w, t) + eps)
            })
            .collect()
    }

    #[test]
    fn fit_recovers_noiseless_generator() {
        let truth = AccumulationFn {
            threshold: 0.1,
            slope_below: 1.0,
            slope_above: 3.0,
        };
        let pts = synth_points(&truth, 200, 0.0, 7);
        let fit = fit_accumulation(&pts, Some(0.1)).unwrap();
        assert_abs_diff_eq!(fit.slope_below, 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(fit.slope_above, 3.0, epsilon = 1e-6);
    }

    #[test]
    fn fit_without_knee_grid_searches_it() {
        let truth = AccumulationFn {
            threshold: 0.1,
            slope_below: 1.0,
            slope_above: 3.0,
        };
        let pts = synth_points(&truth, 400, 0.0, 11);
        let fit = fit_accumulation(&pts, None).unwrap();
        assert_relative_eq!(fit.slope_below, 1.0, max_relative = 0.01);
        assert_relative_eq!(fit.slope_above, 3.0, max_relative = 0.01);
        assert_abs_diff_eq!(fit.threshold, 0.1, epsilon = 0.01);
    }

    #[test]
    fn fit_with_all_points_below_knee_defaults_upper_slope() {
        let pts: Vec<(f64, f64)> = (1..20).map(|i| (i as f64 * 0.004, i as f64 * 0.004)).collect();
        let fit = fit_accumulation(&pts, Some(0.1)).unwrap();
        assert_abs_diff_eq!(fit.slope_below, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(fit.slope_above, fit.slope_below);
    }

    #[test]
    fn fit_tolerates_millisecond_noise() {
        let truth = AccumulationFn {
            threshold: 0.1,
            slope_below: 1.0,
            slope_above: 3.0,
        };
        let pts = synth_points(&truth, 500, 0.001, 13);
        let fit = fit_accumulation(&pts, Some(0.1)).unwrap();
        assert_relative_eq!(fit.slope_below, 1.0, max_relative = 0.1);
        assert_relative_eq!(fit.slope_above, 3.0, max_relative = 0.1);
    }

    #[test]
    fn fit_rejects_tiny_input() {
        assert!(fit_accumulation(&[(0.1, 0.1)], Some(0.1)).is_err());
    }

    #[test]
    fn joint_fit_recovers_two_modules() {
        let mut g = graph(&["alpha", "beta"], &[]);
        g.modules[0].sampling_interval = Some(0.1);
        g.modules[1].sampling_interval = Some(0.05);
        let truth_a = AccumulationFn {
            threshold: 0.1,
            slope_below: 1.0,
            slope_above: 3.0,
        };
        let truth_b = AccumulationFn {
            threshold: 0.05,
            slope_below: 1.0,
            slope_above: 2.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let rows: Vec<(BTreeMap<String, f64>, f64)> = (0..300)
            .map(|_| {
                let ta: f64 = rng.gen_range(0.0..0.25);
                let tb: f64 = rng.gen_range(0.0..0.15);
                let response = accumulate(&truth_a, ta) + accumulate(&truth_b, tb);
                (
                    [("alpha".to_string(), ta), ("beta".to_string(), tb)].into(),
                    response,
                )
            })
            .collect();
        let modules = vec!["alpha".to_string(), "beta".to_string()];
        let fits = fit_accumulation_joint(&rows, &g, &modules).unwrap();
        assert_abs_diff_eq!(fits["alpha"].slope_below, 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(fits["alpha"].slope_above, 3.0, epsilon = 1e-6);
        assert_abs_diff_eq!(fits["beta"].slope_below, 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(fits["beta"].slope_above, 2.0, epsilon = 1e-6);
    }

    #[test]
    fn joint_fit_grid_searches_missing_interval() {
        let g = graph(&["alpha"], &[]); // no sampling interval
        let truth = AccumulationFn {
            threshold: 0.08,
            slope_below: 1.0,
            slope_above: 4.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let rows: Vec<(BTreeMap<String, f64>, f64)> = (0..400)
            .map(|_| {
                let t: f64 = rng.gen_range(0.0..0.2);
                (
                    [("alpha".to_string(), t)].into(),
                    accumulate(&truth, t),
                )
            })
            .collect();
        let fits =
            fit_accumulation_joint(&rows, &g, &["alpha".to_string()]).unwrap();
        assert_abs_diff_eq!(fits["alpha"].threshold, 0.08, epsilon = 0.01);
        assert_relative_eq!(fits["alpha"].slope_above, 4.0, max_relative = 0.05);
    }

    proptest! {
        #[test]
        fn accumulate_is_monotone_and_continuous(
            threshold in 0.0..0.5f64,
            s_below in 0.1..2.0f64,
            extra in 0.0..4.0f64,
            t1 in 0.0..1.0f64,
            t2 in 0.0..1.0f64,
        ) {
            let w = AccumulationFn { threshold, slope_below: s_below, slope_above: s_below + extra };
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(accumulate(&w, lo) <= accumulate(&w, hi) + 1e-12);
            // continuity at the knee
            let eps = 1e-9;
            let jump = (accumulate(&w, threshold + eps) - accumulate(&w, threshold)).abs();
            prop_assert!(jump <= (w.slope_above + 1.0) * eps * 2.0);
        }

        #[test]
        fn identity_accumulation_is_plain_summation(
            lats in proptest::collection::vec(0.0..0.5f64, 1..8)
        ) {
            let names: Vec<String> = (0..lats.len()).map(|i| format!("m{i}")).collect();
            let g = DependencyGraph {
                modules: names.iter().map(|n| module(n)).collect(),
                edges: vec![],
            };
            let crit = CriticalSet::new(names.clone(), &g).unwrap();
            let map: BTreeMap<String, f64> =
                names.iter().cloned().zip(lats.iter().cloned()).collect();
            let t = instantaneous_response_time(&map, &crit, &g).unwrap();
            let plain: f64 = lats.iter().sum();
            prop_assert!((t - plain).abs() < 1e-12);
        }

        #[test]
        fn response_time_monotone_in_each_latency(
            base in proptest::collection::vec(0.0..0.3f64, 3),
            bump in 0.0..0.3f64,
            which in 0usize..3,
        ) {
            let mut g = graph(&["a", "b", "c"], &[]);
            for m in &mut g.modules {
                m.accumulation = AccumulationFn { threshold: 0.1, slope_below: 1.0, slope_above: 3.0 };
            }
            let names = ["a", "b", "c"];
            let crit = CriticalSet::new(names.iter().map(|s| s.to_string()).collect(), &g).unwrap();
            let map: BTreeMap<String, f64> = names
                .iter()
                .zip(&base)
                .map(|(n, v)| (n.to_string(), *v))
                .collect();
            let mut bumped = map.clone();
            *bumped.get_mut(names[which]).unwrap() += bump;
            let t0 = instantaneous_response_time(&map, &crit, &g).unwrap();
            let t1 = instantaneous_response_time(&bumped, &crit, &g).unwrap();
            prop_assert!(t1 + 1e-12 >= t0);
        }
    }
}
