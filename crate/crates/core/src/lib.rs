//! Finite-horizon stochastic inventory control with fixed ordering costs
//! and a per-period order capacity: exact dynamic programming, extraction
//! of multi-(s,S) threshold policies, and simulation of heuristics.

pub mod cex;
pub mod demand;
pub mod heuristic;
pub mod io;
pub mod policy;
pub mod scalar;
pub mod sdp;
pub mod simulate;
pub mod testbed;

pub use demand::{DemandPmf, DemandSpec, Family};
pub use heuristic::{modified_ss_from_tables, ModifiedSsPolicy};
pub use policy::{check_cop, extract_policy, extract_thresholds, ThresholdPolicy};
pub use scalar::Scalar;
pub use sdp::{solve, Capacity, Grid, Instance, ValueTables};
pub use simulate::{optimality_gap, simulate_policy, SimulationConfig, SimulationEstimate};

pub type Pmf64 = DemandPmf<f64>;
pub type Pmf32 = DemandPmf<f32>;
pub type Instance64 = Instance<f64>;
pub type Instance32 = Instance<f32>;
pub type Tables64 = ValueTables<f64>;
pub type Tables32 = ValueTables<f32>;
