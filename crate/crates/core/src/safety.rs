//! RSS-derived safety math.
//!
//! The safe-distance rule collapses, for a fixed obstacle, into a quadratic
//! in the AV response time: `d_min(t) = alpha*t^2 + beta*t + gamma + gamma_const`.
//! Solving `d_min(theta) = d` for the current gap `d` gives the response
//! time window `theta`, and the safety score compares the actual computing
//! system response time `t` against that window.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kinematic state of the AV.
///
/// Accelerations are magnitudes: `a_max_accel` is the worst-case speed-up
/// while the system is still reacting, `a_min_brake` the weakest braking the
/// AV is guaranteed to achieve afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrivingState {
    /// Speed in m/s.
    pub v: f64,
    /// Max speed-up acceleration in m/s^2.
    pub a_max_accel: f64,
    /// Min slow-down acceleration in m/s^2. Must be positive.
    pub a_min_brake: f64,
}

impl DrivingState {
    pub fn validate(&self) -> Result<()> {
        if !(self.v >= 0.0 && self.a_max_accel >= 0.0 && self.a_min_brake >= 0.0) {
            return Err(Error::InvalidConfig(
                "driving state fields must be nonnegative".into(),
            ));
        }
        if self.a_min_brake <= 0.0 {
            return Err(Error::NonPositiveBraking(self.a_min_brake));
        }
        Ok(())
    }
}

/// Kinematic state of the obstacle-of-attention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstacleState {
    /// Speed in m/s.
    pub v_o: f64,
    /// Max speed-up acceleration in m/s^2.
    pub a_max_accel_o: f64,
    /// Min slow-down acceleration in m/s^2 (adverse braking, opposing traffic).
    pub a_min_brake_o: f64,
    /// Max slow-down acceleration in m/s^2 (adverse braking, same-direction traffic).
    pub a_max_brake_o: f64,
    /// Response time of the obstacle before it starts braking, in seconds.
    pub response_time_o: f64,
}

impl ObstacleState {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.v_o,
            self.a_max_accel_o,
            self.a_min_brake_o,
            self.a_max_brake_o,
            self.response_time_o,
        ];
        if fields.iter().any(|f| !(*f >= 0.0)) {
            return Err(Error::InvalidConfig(
                "obstacle state fields must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Relative driving direction of AV and obstacle-of-attention.
///
/// The mode fixes the `(m, n)` pair of the safe-distance rule and which
/// braking acceleration the obstacle is assumed to use:
/// `Opposing` is `(m=1, n=1)` with the obstacle braking as weakly as allowed;
/// `SameDirection` is `(m=0, n=-1)` with the obstacle braking instantly and
/// as hard as possible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioMode {
    Opposing,
    SameDirection,
}

impl ScenarioMode {
    /// The (m, n) direction coefficients implied by the mode.
    pub fn direction_coefficients(self) -> (f64, f64) {
        match self {
            ScenarioMode::Opposing => (1.0, 1.0),
            ScenarioMode::SameDirection => (0.0, -1.0),
        }
    }
}

/// Reward/penalty weights of the safety score plus the full-stop gap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreWeights {
    /// Reward coefficient applied while the response time is inside the window.
    pub sigma: f64,
    /// Penalty coefficient applied once the window is exceeded.
    pub eta: f64,
    /// Minimum gap between the vehicles at full stop, in meters.
    pub d_mu: f64,
    /// Score returned when the window is unbounded (stationary AV that
    /// cannot accelerate).
    #[serde(default = "default_score_cap")]
    pub score_cap: f64,
}

fn default_score_cap() -> f64 {
    1e6
}

impl Default for ScoreWeights {
    fn default() -> Self {
        ScoreWeights {
            sigma: 0.05,
            eta: 0.1,
            d_mu: 2.0,
            score_cap: default_score_cap(),
        }
    }
}

impl ScoreWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.eta > 0.0 && self.d_mu >= 0.0) {
            return Err(Error::InvalidConfig(
                "score weights require sigma > 0, eta > 0, d_mu >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Coefficients of the collapsed safe-distance quadratic.
///
/// `alpha`, `beta`, `gamma` depend only on the AV state. `gamma_const`
/// optionally carries the obstacle terms plus `d_mu`, so that
/// `alpha*t^2 + beta*t + gamma + gamma_const` equals the full safe-distance
/// rule; it defaults to 0, which leaves the literal AV-only quadratic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadCoefficients {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    #[serde(default)]
    pub gamma_const: f64,
}

impl QuadCoefficients {
    /// The constant term of the full quadratic.
    pub fn constant(&self) -> f64 {
        self.gamma + self.gamma_const
    }

    /// Evaluate `alpha*t^2 + beta*t + gamma + gamma_const`.
    pub fn min_distance_at(&self, t: f64) -> f64 {
        self.alpha * t * t + self.beta * t + self.constant()
    }
}

/// Tolerance used to pick the reward branch when `t == theta` up to rounding.
pub const BRANCH_TOLERANCE: f64 = 1e-12;

/// Collapse the AV driving state into the quadratic coefficients.
pub fn quad_coefficients(av: &DrivingState) -> Result<QuadCoefficients> {
    if av.a_min_brake <= 0.0 {
        return Err(Error::NonPositiveBraking(av.a_min_brake));
    }
    let a = av.a_max_accel;
    let b = av.a_min_brake;
    Ok(QuadCoefficients {
        alpha: 0.5 * a + a * a / (2.0 * b),
        beta: av.v + av.v * a / b,
        gamma: av.v * av.v / (2.0 * b),
        gamma_const: 0.0,
    })
}

/// Obstacle contribution to the safe distance (everything that does not
/// depend on the AV response time), including `d_mu`.
pub fn obstacle_terms(obs: &ObstacleState, mode: ScenarioMode, w: &ScoreWeights) -> Result<f64> {
    let (m, n) = mode.direction_coefficients();
    let (t_o, brake) = match mode {
        ScenarioMode::Opposing => (obs.response_time_o, obs.a_min_brake_o),
        ScenarioMode::SameDirection => (0.0, obs.a_max_brake_o),
    };
    if brake <= 0.0 {
        return Err(Error::NonPositiveBraking(brake));
    }
    let travel = m * (obs.v_o * t_o + 0.5 * obs.a_max_accel_o * t_o * t_o);
    let v_end = obs.v_o + t_o * obs.a_max_accel_o;
    let stop = n * v_end * v_end / (2.0 * brake);
    Ok(travel + stop + w.d_mu)
}

/// Quadratic whose constant carries the obstacle terms, so that
/// `min_distance_at(t)` reproduces the full safe-distance rule.
pub fn quad_with_obstacle(
    av: &DrivingState,
    obs: &ObstacleState,
    mode: ScenarioMode,
    w: &ScoreWeights,
) -> Result<QuadCoefficients> {
    let mut q = quad_coefficients(av)?;
    q.gamma_const = obstacle_terms(obs, mode, w)?;
    Ok(q)
}

/// Minimum distance the AV needs to avoid a collision, given its response
/// time `t_av`.
pub fn min_safe_distance(
    av: &DrivingState,
    obs: &ObstacleState,
    mode: ScenarioMode,
    t_av: f64,
    w: &ScoreWeights,
) -> Result<f64> {
    Ok(quad_with_obstacle(av, obs, mode, w)?.min_distance_at(t_av))
}

/// Solve `alpha*theta^2 + beta*theta + gamma + gamma_const = d` for the
/// unique nonnegative root.
///
/// Returns `+inf` when the quadratic is constant (`alpha == beta == 0`) and
/// the distance strictly exceeds it: a stationary AV that cannot accelerate
/// never closes the gap.
pub fn response_time_window(d: f64, q: &QuadCoefficients) -> Result<f64> {
    let c = q.constant();
    if d < c {
        return Err(Error::AlreadyUnsafe { deficit: c - d });
    }
    let rhs = d - c;
    if q.alpha == 0.0 {
        if q.beta > 0.0 {
            return Ok(rhs / q.beta);
        }
        return if rhs > 0.0 {
            Ok(f64::INFINITY)
        } else {
            Ok(0.0)
        };
    }
    // alpha > 0: positive root of alpha*x^2 + beta*x - rhs = 0. The stable
    // form avoids cancellation when beta dominates.
    let disc = q.beta * q.beta + 4.0 * q.alpha * rhs;
    let root = (2.0 * rhs) / (q.beta + disc.sqrt());
    Ok(root.max(0.0))
}

/// Safety score of response time `t` against window `theta`.
///
/// Positive iff `t < theta`; zero at the crossing; the reward branch is
/// taken on equality within [`BRANCH_TOLERANCE`].
pub fn safety_score(t: f64, theta: f64, q: &QuadCoefficients, w: &ScoreWeights) -> f64 {
    if theta.is_infinite() {
        return w.score_cap;
    }
    let core = q.alpha * (theta * theta - t * t) + q.beta * (theta - t);
    if t < theta + BRANCH_TOLERANCE {
        w.sigma * core
    } else {
        w.eta * core
    }
}

/// Dense sampling of the safety score over `[t_start, t_end]`.
///
/// Points are `t_start + k*step` for `k = 0, 1, ...` while the point stays
/// inside the range (inclusive, with a small slack so the end point is kept
/// despite rounding).
pub fn score_curve(
    t_start: f64,
    t_end: f64,
    step: f64,
    q: &QuadCoefficients,
    w: &ScoreWeights,
    theta: f64,
) -> Result<Vec<(f64, f64)>> {
    if step <= 0.0 {
        return Err(Error::InvalidConfig("curve step must be positive".into()));
    }
    if t_end < t_start {
        return Ok(Vec::new());
    }
    let mut points = Vec::new();
    let mut k = 0u64;
    loop {
        let t = t_start + k as f64 * step;
        if t > t_end + step * 1e-9 {
            break;
        }
        points.push((t, safety_score(t, theta, q, w)));
        k += 1;
    }
    Ok(points)
}
