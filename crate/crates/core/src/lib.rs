//! Win-stay lose-shift usage of congestible common goods, instantiated as
//! server selection by mobile users.
//!
//! - [`queueing`]: failure probability of one server under load.
//! - [`dynamics`]: mean-field ODEs, equilibria and the Lyapunov probe.
//! - [`ifd`]: equalized-quality distributions and tolerance planning.
//! - [`simulator`]: agent-based discrete-event simulation.
//! - [`metrics`]: smoothing, tail statistics and CSV/JSON output.
//! - [`cli`]: the `wsls` command-line driver.

// `!(x > 0.0)` is the NaN-rejecting form used for argument checks.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod dynamics;
pub mod error;
pub mod ifd;
pub mod metrics;
pub mod model;
pub mod queueing;
pub mod simulator;

pub use error::{Error, Result};
pub use model::{
    AdaptiveConfig, DelayModel, GoodSpec, LossNotification, PopulationState, ScenarioConfig, ShiftPolicy,
    ToleranceProfile, TypeSpec, WorkloadSchedule,
};
