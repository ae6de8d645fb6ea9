//! Distributed online aggregative optimization.
//!
//! `N` agents on an undirected graph jointly minimize
//! `Σ_i f_{i,t}(x_i, σ_t(x))` where `σ_t(x) = (1/N) Σ_i φ_{i,t}(x_i)` and
//! every ingredient may change from round to round. The crate provides the
//! projected aggregative tracking algorithm with a synchronous simulator, a
//! centralized reference solver, regret/violation metrics, per-step
//! inequality monitors and the stability certificate used to choose the
//! step sizes, plus two ready-made scenarios.
//!
//! Everything numerical is generic over [`Scalar`] (`f32`/`f64`); the
//! aliases below fix `f64`, which is what the simulator and CLI use.

pub mod algorithm;
pub mod costs;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod linalg;
pub mod metrics;
pub mod oracle;
pub mod problem;
pub mod projection;
pub mod scenarios;
pub mod scalar;
pub mod stability;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Network = graph::Network<f64>;
pub type ConvexSet = projection::ConvexSet<f64>;
pub type ProblemInstant = problem::ProblemInstant<f64>;
pub type ProblemConstants = problem::ProblemConstants<f64>;
pub type VariationBounds = problem::VariationBounds<f64>;
pub type AgentState = algorithm::AgentState<f64>;
pub type AlgorithmParams = algorithm::AlgorithmParams<f64>;
pub type RoundRecord = algorithm::RoundRecord<f64>;
pub type OracleSolution = oracle::OracleSolution<f64>;
pub type RoundTrace = metrics::RoundTrace<f64>;
pub type StabilityModel = stability::StabilityModel<f64>;
