//! Multi-target tracking with unknown measurement origin.

pub mod association;
pub mod filter;
pub mod hypothesis;

pub use association::{AssociationModel, BetaMatrix, GateParams};
pub use filter::{
    mcjpdaf_step, mcmmjpdaf_step, JpdaConfig, JpdaUpdate, ObservationFrame, Observer,
};
pub use hypothesis::{M2THypothesis, T2MHypothesis};
