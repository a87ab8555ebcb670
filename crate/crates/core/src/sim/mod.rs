//! Deterministic discrete-event harness.
//!
//! A [`Scenario`](scenario::Scenario) describes sites, workloads, workflows,
//! and fault windows; [`engine::run_scenario`] drives them on a single
//! integer clock and emits a totally ordered [`log::EventLog`]. Identical
//! scenario + seed produces byte-identical logs.

pub mod backend;
pub mod engine;
pub mod log;
pub mod scenario;

pub use engine::{run_scenario, Engine, RunOutput, SimError};
pub use log::{EventLog, LogError, LogRecord, RecordBody};
pub use scenario::{
    DeviceSpec, FailureMode, FailureSpec, Knobs, NodeSpec, ProjectSpec, Scenario, ScenarioError,
    Sites, Window, WorkflowEntry,
};

use rand::RngCore;

/// Draw an integer queue delay from a uniform window around the mean.
///
/// Consumes exactly one generator draw regardless of the distribution
/// parameters, so callers can rely on a fixed draw budget per event. The
/// draw maps to `u` in [0,1) with 53-bit precision, then to
/// `mean - jitter + u * 2 * jitter`, rounded half-up to whole sim-seconds.
pub fn sample_delay(rng: &mut impl RngCore, dist: crate::offload::DelayDist) -> u64 {
    let draw = rng.next_u64();
    let u = (draw >> 11) as f64 / (1u64 << 53) as f64;
    let lo = dist.mean as f64 - dist.jitter as f64;
    let v = lo + u * 2.0 * dist.jitter as f64;
    (v + 0.5).floor() as u64
}
