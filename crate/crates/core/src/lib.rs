//! Reset-free agile driving on a slippery track.
//!
//! The crate bundles everything the reset-free training loop needs:
//!
//! - [`dynamics`]: kinematic bicycle model (the planner's predictive model) and a
//!   slip-aware single-track model used as ground truth.
//! - [`track`]: closed track geometry, 2D LiDAR raycasting and the scan-based
//!   collision indicator.
//! - [`mppi`]: the sampling-based planner used as base policy, reset policy and
//!   non-learning baseline.
//! - [`env`]: observation assembly, reward, residual action composition with
//!   collision override, and the autonomous reset state machine.
//! - [`agent`]: forward policies (zero, random, replay, evolution strategies).
//! - [`harness`]: experiment runner, per-episode logs and trace export.
//! - [`protocol`]: message types of the line-delimited agent protocol.

pub mod agent;
pub mod config;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod export;
pub mod geometry;
pub mod harness;
pub mod mppi;
pub mod protocol;
pub mod record;
pub mod rng;
pub mod track;

pub use error::{Error, Result};
