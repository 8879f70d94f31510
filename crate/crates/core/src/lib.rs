//! Distributed identification of ARX systems with unknown orders.
//!
//! Sensors on a connected graph run diffusion least squares for every candidate
//! order, diffuse the sufficient statistics of a weighted prediction-error sum,
//! and pick orders by minimizing a local information criterion. Two selection
//! procedures are provided: one for known upper bounds on the orders, one that
//! grows its search range with `ln t` when no bounds are known.
//!
//! Modules, bottom up:
//!
//! - [`graph`]: topologies, Metropolis weights, weight-matrix powers.
//! - [`arx`]: the ARX data generator and regressor extraction.
//! - [`dls`]: per-candidate diffusion least squares.
//! - [`lic`]: diffused criterion statistics, gain schedules, order selection.
//! - [`excitation`]: cooperative excitation diagnostics.
//! - [`harness`]: experiment configs, end-to-end runs, oracle checks, CSV output.

pub mod arx;
pub mod dls;
pub mod error;
pub mod excitation;
pub mod graph;
pub mod harness;
pub mod lic;
pub mod linalg;

pub use arx::{ArxSystem, InputModel, NoiseModel, SensorTraces, SignalModels};
pub use dls::{IntermediateState, LsState};
pub use error::{Error, Result};
pub use excitation::ExcitationReport;
pub use graph::{Topology, TopologyKind};
pub use harness::{ExperimentConfig, RunResult};
pub use lic::{GainSchedule, OrderEstimate, SigmaStats};
