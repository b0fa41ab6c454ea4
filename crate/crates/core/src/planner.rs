//! Two-phase compute resource management.
//!
//! Offline: exhaustively score every resource management plan against every
//! sample, group samples by their winning plan, and keep one averaged
//! feature vector per group. Online: count continuous perception timeouts;
//! once `h` in a row occur, match the current feature against the stored
//! clusters and adopt that cluster's plan.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latency::{DensityVector, ResourceIndexVector};
use crate::pipeline::{CriticalSet, DependencyGraph};

/// Upper bound on modules for the full-permutation priority search.
pub const ALL_PRIORITIES_LIMIT: usize = 8;

/// A resource management plan: where each module runs and in which order
/// ready modules are dispatched.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourcePlan {
    /// module -> resource index.
    pub allocation: ResourceIndexVector,
    /// Module names, highest dispatch priority first. A permutation of the
    /// graph's modules.
    pub priority: Vec<String>,
}

impl ResourcePlan {
    pub fn validate(&self, g: &DependencyGraph) -> Result<()> {
        if self.priority.len() != g.modules.len() {
            return Err(Error::InvalidConfig(format!(
                "priority lists {} modules, graph has {}",
                self.priority.len(),
                g.modules.len()
            )));
        }
        for m in &g.modules {
            if !self.priority.iter().any(|p| p == &m.name) {
                return Err(Error::InvalidConfig(format!(
                    "priority misses module '{}'",
                    m.name
                )));
            }
            let r = self
                .allocation
                .get(&m.name)
                .ok_or_else(|| Error::InvalidConfig(format!(
                    "allocation misses module '{}'",
                    m.name
                )))?;
            if !m.supported_resources.contains(r) {
                return Err(Error::InvalidConfig(format!(
                    "module '{}' cannot run on resource {r}",
                    m.name
                )));
            }
        }
        Ok(())
    }

    /// Dispatch rank per module (0 = first).
    pub fn rank(&self) -> BTreeMap<&str, usize> {
        self.priority
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect()
    }
}

/// How the priority dimension of the plan space is explored.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorityPolicy {
    /// One order: the lexicographic topological order.
    TopoFixed,
    /// One order: the given critical modules first (in topological order),
    /// the rest after (in topological order).
    CriticalFirst(CriticalSet),
    /// Every permutation of the module names. Only for small graphs.
    All,
}

fn priority_orders(g: &DependencyGraph, policy: &PriorityPolicy) -> Result<Vec<Vec<String>>> {
    match policy {
        PriorityPolicy::TopoFixed => Ok(vec![g.topo_names()?]),
        PriorityPolicy::CriticalFirst(crit) => {
            let topo = g.topo_names()?;
            let mut order: Vec<String> =
                topo.iter().filter(|n| crit.contains(n)).cloned().collect();
            order.extend(topo.iter().filter(|n| !crit.contains(n)).cloned());
            Ok(vec![order])
        }
        PriorityPolicy::All => {
            let n = g.modules.len();
            if n > ALL_PRIORITIES_LIMIT {
                return Err(Error::PrioritySpaceTooLarge {
                    modules: n,
                    limit: ALL_PRIORITIES_LIMIT,
                });
            }
            let mut names: Vec<String> = g.modules.iter().map(|m| m.name.clone()).collect();
            names.sort();
            Ok(permutations_lex(&names))
        }
    }
}

/// All permutations in lexicographic order.
fn permutations_lex(sorted: &[String]) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    let mut current = sorted.to_vec();
    loop {
        out.push(current.clone());
        // next_permutation
        let n = current.len();
        if n < 2 {
            break;
        }
        let Some(i) = (0..n - 1).rev().find(|&i| current[i] < current[i + 1]) else {
            break;
        };
        let j = (i + 1..n).rev().find(|&j| current[j] > current[i]).unwrap();
        current.swap(i, j);
        current[i + 1..].reverse();
    }
    out
}

/// Enumerate the plan space: the Cartesian product of each module's allowed
/// resources with the priority orders selected by the policy. Deterministic
/// order: allocations as an odometer over name-sorted modules (resources
/// ascending, last module fastest), priorities innermost.
pub fn enumerate_plans(
    g: &DependencyGraph,
    policy: &PriorityPolicy,
) -> Result<Vec<ResourcePlan>> {
    g.validate()?;
    if g.modules.is_empty() {
        return Err(Error::EmptyPlanSpace);
    }
    let mut named: Vec<(&str, Vec<u32>)> = g
        .modules
        .iter()
        .map(|m| {
            let mut r = m.supported_resources.clone();
            r.sort_unstable();
            r.dedup();
            (m.name.as_str(), r)
        })
        .collect();
    named.sort_by_key(|(n, _)| *n);
    let priorities = priority_orders(g, policy)?;

    let mut plans = Vec::new();
    let mut digits = vec![0usize; named.len()];
    'outer: loop {
        let allocation: ResourceIndexVector = named
            .iter()
            .zip(&digits)
            .map(|((n, res), &d)| (n.to_string(), res[d]))
            .collect();
        for priority in &priorities {
            plans.push(ResourcePlan {
                allocation: allocation.clone(),
                priority: priority.clone(),
            });
        }
        // advance the odometer, last module fastest
        for pos in (0..digits.len()).rev() {
            digits[pos] += 1;
            if digits[pos] < named[pos].1.len() {
                continue 'outer;
            }
            digits[pos] = 0;
        }
        break;
    }
    if plans.is_empty() {
        return Err(Error::EmptyPlanSpace);
    }
    Ok(plans)
}

/// Per-critical-module continuous-timeout counts, flattened to a fixed
/// width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeoutPattern {
    pub counts: Vec<f64>,
}

impl TimeoutPattern {
    pub fn zeros(width: usize) -> TimeoutPattern {
        TimeoutPattern {
            counts: vec![0.0; width],
        }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// Tracks consecutive timeout run lengths per watched module and flattens
/// them into a [`TimeoutPattern`], capping each count at `window`.
#[derive(Debug, Clone)]
pub struct TimeoutTracker {
    modules: Vec<String>,
    counters: Vec<u64>,
    window: u64,
}

impl TimeoutTracker {
    pub fn new(modules: Vec<String>, window: u64) -> TimeoutTracker {
        let n = modules.len();
        TimeoutTracker {
            modules,
            counters: vec![0; n],
            window,
        }
    }

    /// Advance one frame given which modules timed out.
    pub fn observe(&mut self, timed_out: &dyn Fn(&str) -> bool) {
        for (name, counter) in self.modules.iter().zip(self.counters.iter_mut()) {
            if timed_out(name) {
                *counter += 1;
            } else {
                *counter = 0;
            }
        }
    }

    pub fn pattern(&self) -> TimeoutPattern {
        TimeoutPattern {
            counts: self
                .counters
                .iter()
                .map(|c| (*c).min(self.window) as f64)
                .collect(),
        }
    }
}

/// Concatenated density + timeout feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

/// Optional feature scaling applied on both sides of the distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FeatureScaling {
    None,
    /// Min-max scaling per block (density block and timeout block).
    PerBlockMinMax {
        s_min: f64,
        s_max: f64,
        k_min: f64,
        k_max: f64,
    },
}

impl FeatureScaling {
    fn apply(&self, values: &[f64], s_dim: usize) -> Vec<f64> {
        match self {
            FeatureScaling::None => values.to_vec(),
            FeatureScaling::PerBlockMinMax {
                s_min,
                s_max,
                k_min,
                k_max,
            } => {
                let scale = |v: f64, lo: f64, hi: f64| {
                    if hi > lo {
                        (v - lo) / (hi - lo)
                    } else {
                        0.0
                    }
                };
                values
                    .iter()
                    .enumerate()
                    .map(|(i, v)| {
                        if i < s_dim {
                            scale(*v, *s_min, *s_max)
                        } else {
                            scale(*v, *k_min, *k_max)
                        }
                    })
                    .collect()
            }
        }
    }
}

/// Concatenate the current density vector and timeout pattern.
pub fn current_feature(
    s: &DensityVector,
    k: &TimeoutPattern,
    s_dim: usize,
    k_dim: usize,
) -> Result<FeatureVector> {
    if s.len() != s_dim {
        return Err(Error::DimensionMismatch {
            expected: s_dim,
            got: s.len(),
        });
    }
    if k.len() != k_dim {
        return Err(Error::DimensionMismatch {
            expected: k_dim,
            got: k.len(),
        });
    }
    let mut values = s.to_f64();
    values.extend_from_slice(&k.counts);
    Ok(FeatureVector { values })
}

/// One cluster of the offline plan dictionary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    /// Element-wise mean of the member features (unscaled).
    pub feature: Vec<f64>,
    pub plan: ResourcePlan,
    pub member_count: usize,
}

/// Offline planning output: plan dictionary plus per-cluster features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterStore {
    pub s_dim: usize,
    pub k_dim: usize,
    pub scaling: FeatureScaling,
    /// Continuous-timeout trigger threshold the store was built for.
    pub h: u32,
    pub clusters: Vec<Cluster>,
}

impl ClusterStore {
    pub fn feature_dim(&self) -> usize {
        self.s_dim + self.k_dim
    }
}

/// Offline planning: per sample, pick the plan maximizing `score_fn`
/// (ties to the lowest plan index), then average the features of each
/// plan's samples. Clusters come out ordered by plan index.
pub fn offline_plan<F>(
    samples: &[(DensityVector, TimeoutPattern)],
    g: &DependencyGraph,
    plans: &[ResourcePlan],
    scaling_minmax: bool,
    h: u32,
    score_fn: F,
) -> Result<ClusterStore>
where
    F: Fn(&DependencyGraph, &ResourcePlan, &DensityVector) -> f64 + Sync,
{
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    if plans.is_empty() {
        return Err(Error::EmptyPlanSpace);
    }
    let s_dim = samples[0].0.len();
    let k_dim = samples[0].1.len();
    for (s, k) in samples {
        if s.len() != s_dim || k.len() != k_dim {
            return Err(Error::DimensionMismatch {
                expected: s_dim + k_dim,
                got: s.len() + k.len(),
            });
        }
    }

    // Winner per sample; samples are independent, order restored by collect.
    let winners: Vec<usize> = samples
        .par_iter()
        .map(|(s, _)| {
            let mut best = 0usize;
            let mut best_score = f64::NEG_INFINITY;
            for (j, plan) in plans.iter().enumerate() {
                let score = score_fn(g, plan, s);
                if score > best_score {
                    best_score = score;
                    best = j;
                }
            }
            best
        })
        .collect();

    let mut sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for ((s, k), &winner) in samples.iter().zip(&winners) {
        let feature = current_feature(s, k, s_dim, k_dim)?;
        let entry = sums
            .entry(winner)
            .or_insert_with(|| (vec![0.0; s_dim + k_dim], 0));
        for (acc, v) in entry.0.iter_mut().zip(&feature.values) {
            *acc += v;
        }
        entry.1 += 1;
    }

    let scaling = if scaling_minmax {
        let mut s_min = f64::INFINITY;
        let mut s_max = f64::NEG_INFINITY;
        let mut k_min = f64::INFINITY;
        let mut k_max = f64::NEG_INFINITY;
        for (s, k) in samples {
            for c in &s.counts {
                s_min = s_min.min(*c as f64);
                s_max = s_max.max(*c as f64);
            }
            for c in &k.counts {
                k_min = k_min.min(*c);
                k_max = k_max.max(*c);
            }
        }
        if k_dim == 0 {
            k_min = 0.0;
            k_max = 0.0;
        }
        FeatureScaling::PerBlockMinMax {
            s_min,
            s_max,
            k_min,
            k_max,
        }
    } else {
        FeatureScaling::None
    };

    let clusters = sums
        .into_iter()
        .map(|(plan_index, (sum, count))| Cluster {
            feature: sum.iter().map(|v| v / count as f64).collect(),
            plan: plans[plan_index].clone(),
            member_count: count,
        })
        .collect();

    Ok(ClusterStore {
        s_dim,
        k_dim,
        scaling,
        h,
        clusters,
    })
}

/// Euclidean-nearest cluster; exact ties resolve to the lowest index.
pub fn match_cluster<'a>(
    store: &'a ClusterStore,
    f: &FeatureVector,
) -> Result<(usize, &'a ResourcePlan)> {
    if store.clusters.is_empty() {
        return Err(Error::EmptyStore);
    }
    if f.values.len() != store.feature_dim() {
        return Err(Error::DimensionMismatch {
            expected: store.feature_dim(),
            got: f.values.len(),
        });
    }
    let query = store.scaling.apply(&f.values, store.s_dim);
    let mut best = 0usize;
    let mut best_dist = f64::INFINITY;
    for (i, cluster) in store.clusters.iter().enumerate() {
        let stored = store.scaling.apply(&cluster.feature, store.s_dim);
        let dist: f64 = stored
            .iter()
            .zip(&query)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if dist < best_dist {
            best_dist = dist;
            best = i;
        }
    }
    Ok((best, &store.clusters[best].plan))
}

/// Continuous-timeout monitor with trigger threshold `h`.
///
/// The counter climbs on every timeout frame and resets on a clean frame.
/// The trigger fires exactly on the transition to `h` consecutive timeouts
/// and stays quiet until a reset re-arms it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeoutMonitor {
    counter: u64,
    h: u32,
    armed: bool,
}

impl TimeoutMonitor {
    pub fn new(h: u32) -> Result<TimeoutMonitor> {
        if h == 0 {
            return Err(Error::InvalidConfig("monitor threshold h must be >= 1".into()));
        }
        Ok(TimeoutMonitor {
            counter: 0,
            h,
            armed: true,
        })
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Advance one frame; returns whether the trigger fired.
    pub fn step(&mut self, frame_timeout: bool) -> bool {
        if !frame_timeout {
            self.counter = 0;
            self.armed = true;
            return false;
        }
        self.counter += 1;
        if self.armed && self.counter == self.h as u64 {
            self.armed = false;
            return true;
        }
        false
    }
}

/// Functional wrapper over [`TimeoutMonitor::step`].
pub fn monitor_step(m: &TimeoutMonitor, frame_timeout: bool) -> (TimeoutMonitor, bool) {
    let mut next = m.clone();
    let triggered = next.step(frame_timeout);
    (next, triggered)
}
