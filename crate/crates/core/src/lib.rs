//! Degradation-aware maintenance and capacity planning.
//!
//! The pipeline runs offline and online:
//!
//! * [`features`] turns raw vibration windows into eleven time-domain descriptors.
//! * [`iohmm`] learns a left-to-right input-output HMM whose transition
//!   matrices depend on the operating condition.
//! * [`gmm`] maps continuous features onto a discrete observation alphabet.
//! * [`pomdp`] assembles a POMDP over capacity and preventive-maintenance
//!   actions and solves it with point-based value iteration.
//! * [`runtime`] turns a live window into an action.
//! * [`sim`] evaluates policies by Monte-Carlo simulation and computes
//!   model diagnostics.

pub mod features;
pub mod fixtures;
pub mod gaussian;
pub mod gmm;
pub mod io;
pub mod iohmm;
pub mod kmeans;
pub mod pomdp;
pub mod runtime;
pub mod sim;
