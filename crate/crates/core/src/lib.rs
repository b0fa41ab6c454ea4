//! Safety-score driven simulation of autonomous-vehicle computing systems.
//!
//! The crate models three coupled pieces:
//!
//! * a safety score derived from minimum-safe-distance rules: the response
//!   time window `theta` a frame leaves the computing system, and a
//!   reward/penalty on the margin between `theta` and the achieved
//!   response time ([`safety`]);
//! * a perception latency model mapping obstacle density hierarchies to
//!   per-module baseline latencies, with resource conversion ratios
//!   ([`latency`]) and the dependency-graph response-time accumulation
//!   ([`pipeline`]);
//! * two-phase resource management: offline exhaustive plan search with
//!   cluster features, and an online continuous-timeout monitor with
//!   nearest-cluster plan matching ([`planner`]), evaluated by a
//!   trace-driven scheduler simulation ([`sim`]).

pub mod error;
pub mod files;
pub mod latency;
pub mod pipeline;
pub mod planner;
pub mod presets;
pub mod safety;
pub mod sim;
pub mod solve;
pub mod stats;

pub use error::{Error, Result};
