//! Vehicle dynamic models with learned residual correction.
//!
//! An open-loop dynamic model (rule based or a small MLP) predicts
//! acceleration and heading rate per tick; integrating it drifts. A residual
//! correction model, a sequence encoder feeding a sparse variational GP,
//! predicts the position error accumulated over the trailing window and
//! corrects the integrated pose. The crate also ships a synthetic oracle
//! vehicle for ground truth, the data pipeline, and trajectory metrics.

pub mod config;
pub mod datapipe;
pub mod dynamics;
pub mod encoders;
pub mod error;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod plot;
pub mod rcm;
pub mod scenarios;
pub mod stats;
pub mod svgp;
pub mod vehicle;

pub use error::{DrfError, Result};
pub use vehicle::{integrate_step, wrap_angle, ControlCommand, LogRecord, Pose, Trajectory, VehicleState};
