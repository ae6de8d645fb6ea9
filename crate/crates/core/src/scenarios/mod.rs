//! Problem generators: a random quadratic family with exact constants, the
//! multi-robot surveillance and basketball defense scenarios, and the
//! Monte Carlo runner used for both.
//!
//! Generators are fixed to `f64`.

pub mod basketball;
pub mod montecarlo;
pub mod quadratic;
pub mod surveillance;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{self, GraphSpec, Network};
use crate::linalg::Blocks;
use crate::oracle::OracleMethod;
use crate::problem::ProblemStream;

pub use basketball::{BasketballConfig, BasketballStream};
pub use montecarlo::{monte_carlo, MonteCarlo, TrialOutcome};
pub use quadratic::{QuadraticConfig, QuadraticFamily};
pub use surveillance::{SurveillanceConfig, SurveillanceStream, WeightRule};

/// Communication graph of a scenario. Weights are Metropolis unless the
/// explicit spec says otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphConfig {
    Ring,
    Path,
    Complete,
    /// `G(N, p)` drawn from its own seed so the network is shared by all trials.
    ErdosRenyi { p: f64, seed: u64 },
    Explicit { spec: GraphSpec },
}

impl GraphConfig {
    pub fn build(&self, n: usize) -> Result<Network<f64>> {
        let edges = match self {
            GraphConfig::Ring => graph::ring_edges(n),
            GraphConfig::Path => graph::path_edges(n),
            GraphConfig::Complete => graph::complete_edges(n),
            GraphConfig::ErdosRenyi { p, seed } => {
                graph::erdos_renyi_edges(n, *p, &mut ChaCha8Rng::seed_from_u64(*seed))?
            }
            GraphConfig::Explicit { spec } => {
                if spec.n_agents != n {
                    return Err(Error::InvalidConfig(format!(
                        "graph has {} agents, scenario has {n}",
                        spec.n_agents
                    )));
                }
                return spec.build();
            }
        };
        Network::metropolis(n, &edges)
    }
}

/// A labelled planar point for the position export.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Landmark {
    pub kind: &'static str,
    pub index: usize,
    pub position: [f64; 2],
}

pub type LandmarkFn = Arc<dyn Fn(usize) -> Vec<Landmark> + Send + Sync>;

/// Everything needed to run one trial of a scenario.
#[derive(Clone)]
pub struct Scenario {
    pub name: String,
    pub stream: Arc<dyn ProblemStream<f64>>,
    pub network: Network<f64>,
    pub x0: Blocks<f64>,
    /// Step constant for the centralized solver; an upper bound on the
    /// gradient Lipschitz constant.
    pub oracle_lipschitz: f64,
    pub oracle_method: OracleMethod,
    /// Non-agent positions per round (targets, intruders, ball); `None` for
    /// problems without a planar picture.
    pub landmarks: Option<LandmarkFn>,
}

impl std::fmt::Debug for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Scenario")
            .field("name", &self.name)
            .field("n_agents", &self.network.n_agents())
            .field("horizon", &self.stream.horizon())
            .field("oracle_lipschitz", &self.oracle_lipschitz)
            .finish_non_exhaustive()
    }
}

pub(crate) fn check_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{name} must be finite, got {v}")))
    }
}

pub(crate) fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")))
    }
}
