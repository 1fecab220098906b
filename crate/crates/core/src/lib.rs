//! Two-layer home battery control for keeping aggregated residential demand
//! inside substation bounds.
//!
//! A substation coordinator splits the substation envelope into per-house
//! power limits; each house plans its stationary battery and plug-in vehicle
//! with a receding-horizon MILP that tracks those limits. A perfect-foresight
//! centralized MILP and an unmanaged baseline provide the reference points for
//! the constraints-management efficiency metric.

pub mod metrics;
pub mod milp;
pub mod baselines;
pub mod cli;
pub mod coordinator;
pub mod house;
pub mod io;
pub mod model;
pub mod sim;
pub mod synth;
