//! Simulation and estimation engine for heterogeneous, history-dependent
//! treatment effects in short dynamic panels.
//!
//! The crate is organised around four layers:
//!
//! * [`path`], [`world`], [`panel`] and [`report`]: domain types. A
//!   [`PotentialOutcomeWorld`] holds every potential outcome `Y_t(d^t)` of every
//!   unit; an [`ObservedPanel`] is what a researcher would see.
//! * [`dgp`]: seeded generators for the linear dynamic model, the learning
//!   model, sequential randomisation and a free-form designer regime.
//! * [`estimators`]: saturated first-difference 2SLS (direct and FWL forms),
//!   projection weights, adjusted IPW, transformed 2SLS and Arellano–Bond GMM.
//!   Estimators only ever read an [`ObservedPanel`].
//! * [`oracles`]: ground truth computed from the complete counterfactual record,
//!   plus empirical checkers for exchangeability, parallel trends and the
//!   Arellano–Bond moment conditions.

pub mod dgp;
pub mod error;
pub mod estimators;
pub mod oracles;
pub mod panel;
pub mod path;
pub mod report;
pub mod rng;
pub mod stats;
pub mod world;

pub use error::{Error, Result};
pub use panel::{first_difference, realize_observed, Differenced, ObservedPanel};
pub use path::TreatmentPath;
pub use report::{CausalTargets, EstimatorReport};
pub use rng::StreamKey;
pub use world::{Latent, PotentialOutcomeWorld};
