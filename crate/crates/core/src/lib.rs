//! Multi-target tracking laboratory built on sequential Monte Carlo.
//!
//! The crate is organised bottom-up:
//!
//! - [`models`]: constant-velocity and coordinated-turn dynamics, process noise,
//!   range/bearing and bearings-only measurement models.
//! - [`particles`]: weighted particle sets in the log domain, effective sample
//!   size, multinomial/systematic resampling, index samplers, roughening and
//!   weighted resampling.
//! - [`filters`]: SIS, generic and bootstrap particle filters, the EKF baseline
//!   and the bearings-only (moving ownship) variants.
//! - [`ippf`]: the independent partition particle filter.
//! - [`mmpf`]: regime-switching multiple model particle filter.
//! - [`jpda`]: association hypotheses, gating, marginal association
//!   probabilities and the MC-JPDAF / MC-MMJPDAF filters.
//! - [`sim`]: ground truth, clutter and detection simulation.
//! - [`harness`]: scenario files, Monte-Carlo execution and metrics.

pub mod error;
pub mod filters;
pub mod harness;
pub mod ippf;
pub mod jpda;
pub mod mmpf;
pub mod models;
pub mod particles;
pub mod sim;

pub use error::{Error, Result};
pub use models::StateVec;
