//! Strongly convex quadratic aggregative problems with closed-form constants.
//!
//! Agent `i` has `f_i = ½xᵀP_i x + q_{i,t}ᵀx + (c_i/2)‖σ − b_t‖²` and
//! `φ_i = B_i x + r_{i,t}`. The drifting parts follow
//! `b_t[k] = b[k] + A_b sin(νt + k)`, `q_{i,t}[k] = q_i[k] + A_q sin(νt + k + i)`
//! and `r_{i,t}[k] = r_i[k] + A_r cos(νt + k + i)`.
//!
//! With `Bᵀ B` the `Nn × Nn` matrix of blocks `B_iᵀ B_k`, the global Hessian
//! is `H = blkdiag(P_i) + (Σc_i / N²) BᵀB`, so
//!
//! * `μ = λ_min(H)`
//! * `L₁ = max(λ_max(H), √λ_max(blkdiag(P_i²) + (Σc_i² / N²) BᵀB))`
//! * `L₂ = max c_i`, `L₃ = max ‖B_i‖₂`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_finite, check_positive, GraphConfig, Scenario};
use crate::costs::{LinearAggregation, QuadraticCost};
use crate::error::{Error, Result};
use crate::linalg::{dist, Blocks, Matrix};
use crate::oracle::OracleMethod;
use crate::problem::{
    AffineConstraint, AgentProblem, Aggregation, LocalCost, MeasuredVariation, ProblemConstants, ProblemInstant,
    ProblemStream, VariationBounds,
};
use crate::projection::ConvexSet;

/// Fixed data of one agent.
#[derive(Clone, Debug)]
pub struct QuadraticAgent {
    pub hessian: Matrix<f64>,
    pub linear: Vec<f64>,
    pub coupling: f64,
    pub agg: Matrix<f64>,
    pub offset: Vec<f64>,
    /// Static box `[lower, upper]`; `None` means unconstrained.
    pub bounds: Option<(Vec<f64>, Vec<f64>)>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Drift {
    pub target: f64,
    pub linear: f64,
    pub offset: f64,
    pub frequency: f64,
}

#[derive(Clone, Debug)]
pub struct QuadraticFamily {
    agents: Vec<QuadraticAgent>,
    target: Vec<f64>,
    drift: Drift,
    horizon: usize,
    constants: ProblemConstants<f64>,
}

/// Serializable recipe for a random member of the family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadraticConfig {
    pub n_agents: usize,
    pub dim: usize,
    pub agg_dim: usize,
    /// Half-width of the random boxes; `None` leaves agents unconstrained.
    pub box_half_width: Option<f64>,
    pub drift: Drift,
    pub graph: GraphConfig,
}

impl Default for QuadraticConfig {
    fn default() -> Self {
        Self {
            n_agents: 4,
            dim: 2,
            agg_dim: 2,
            box_half_width: None,
            drift: Drift {
                target: 0.5,
                linear: 0.5,
                offset: 0.2,
                frequency: 0.01,
            },
            graph: GraphConfig::Ring,
        }
    }
}

impl QuadraticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 || self.dim == 0 || self.agg_dim == 0 {
            return Err(Error::InvalidConfig("quadratic: n_agents, dim and agg_dim must be positive".into()));
        }
        if let Some(w) = self.box_half_width {
            check_positive("box_half_width", w)?;
        }
        for (name, v) in [
            ("drift.target", self.drift.target),
            ("drift.linear", self.drift.linear),
            ("drift.offset", self.drift.offset),
            ("drift.frequency", self.drift.frequency),
        ] {
            check_finite(name, v)?;
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

impl QuadraticFamily {
    pub fn new(agents: Vec<QuadraticAgent>, target: Vec<f64>, drift: Drift, horizon: usize) -> Result<Self> {
        if agents.is_empty() {
            return Err(Error::InvalidConfig("no agents".into()));
        }
        let d = target.len();
        for a in &agents {
            let n = a.hessian.rows();
            let shape_ok = a.hessian.cols() == n
                && a.linear.len() == n
                && a.agg.rows() == d
                && a.agg.cols() == n
                && a.offset.len() == d
                && a.bounds.as_ref().map_or(true, |(l, u)| l.len() == n && u.len() == n);
            if !shape_ok {
                return Err(Error::InvalidConfig("quadratic agent data has inconsistent shapes".into()));
            }
            if !a.hessian.is_symmetric(1e-12) {
                return Err(Error::InvalidConfig("quadratic hessian must be symmetric".into()));
            }
            if !(a.coupling >= 0.0) {
                return Err(Error::InvalidConfig("coupling must be nonnegative".into()));
            }
            if let Some((l, u)) = &a.bounds {
                if l.iter().zip(u).any(|(lo, hi)| lo > hi) {
                    return Err(Error::InvalidSet("box lower bound exceeds upper bound".into()));
                }
            }
        }
        let constants = exact_constants(&agents)?;
        Ok(Self {
            agents,
            target,
            drift,
            horizon,
            constants,
        })
    }

    /// Draws `P_i = GGᵀ/n + m_i I` with `m_i ∈ [0.5, 1.5]`, entries of `G`,
    /// `B_i` in `[−1, 1]`, `q_i ∈ [−2, 2]`, `r_i ∈ [−½, ½]`, `c_i ∈ [0.2, 1.5]`
    /// and `b ∈ [−1, 1]`.
    pub fn random(cfg: &QuadraticConfig, horizon: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, d) = (cfg.dim, cfg.agg_dim);
        let agents = (0..cfg.n_agents)
            .map(|_| {
                let mut g = Matrix::zeros(n, n);
                for r in 0..n {
                    for c in 0..n {
                        g[(r, c)] = uniform(&mut rng, -1.0, 1.0);
                    }
                }
                let m = uniform(&mut rng, 0.5, 1.5);
                let ggt = g.matmul(&g.transpose()).scaled(1.0 / n as f64);
                let mut hessian = ggt.add(&Matrix::scaled_identity(n, m));
                // exact symmetry
                for r in 0..n {
                    for c in 0..r {
                        let v = 0.5 * (hessian[(r, c)] + hessian[(c, r)]);
                        hessian[(r, c)] = v;
                        hessian[(c, r)] = v;
                    }
                }
                let linear = (0..n).map(|_| uniform(&mut rng, -2.0, 2.0)).collect();
                let coupling = uniform(&mut rng, 0.2, 1.5);
                let mut agg = Matrix::zeros(d, n);
                for r in 0..d {
                    for c in 0..n {
                        agg[(r, c)] = uniform(&mut rng, -1.0, 1.0);
                    }
                }
                let offset = (0..d).map(|_| uniform(&mut rng, -0.5, 0.5)).collect();
                let bounds = cfg.box_half_width.map(|w| {
                    let centre: Vec<f64> = (0..n).map(|_| uniform(&mut rng, -0.5, 0.5)).collect();
                    let half: Vec<f64> = (0..n).map(|_| w * uniform(&mut rng, 0.5, 1.5)).collect();
                    (
                        centre.iter().zip(&half).map(|(c, h)| c - h).collect(),
                        centre.iter().zip(&half).map(|(c, h)| c + h).collect(),
                    )
                });
                QuadraticAgent {
                    hessian,
                    linear,
                    coupling,
                    agg,
                    offset,
                    bounds,
                }
            })
            .collect();
        let target = (0..d).map(|_| uniform(&mut rng, -1.0, 1.0)).collect();
        Self::new(agents, target, cfg.drift, horizon)
    }

    /// `N = 1`, `f = ½x² + ½σ²`, `σ = x`: `μ = L₁ = 2`, `L₂ = L₃ = 1`.
    pub fn scalar(horizon: usize) -> Self {
        let agent = QuadraticAgent {
            hessian: Matrix::identity(1),
            linear: vec![0.0],
            coupling: 1.0,
            agg: Matrix::identity(1),
            offset: vec![0.0],
            bounds: None,
        };
        Self::new(vec![agent], vec![0.0], Drift::default(), horizon).expect("scalar instance is valid")
    }

    /// `f_i = ½(x_i − c_i)² + ½(σ − b)²` with `σ` the plain average.
    pub fn two_agent(anchors: [f64; 2], target: f64, bounds: Option<(f64, f64)>, horizon: usize) -> Self {
        let agents = anchors
            .iter()
            .map(|&c| QuadraticAgent {
                hessian: Matrix::identity(1),
                linear: vec![-c],
                coupling: 1.0,
                agg: Matrix::identity(1),
                offset: vec![0.0],
                bounds: bounds.map(|(l, u)| (vec![l], vec![u])),
            })
            .collect();
        Self::new(agents, vec![target], Drift::default(), horizon).expect("two-agent instance is valid")
    }

    pub fn agents(&self) -> &[QuadraticAgent] {
        &self.agents
    }

    pub fn drift(&self) -> Drift {
        self.drift
    }

    pub fn target_at(&self, t: usize) -> Vec<f64> {
        let w = self.drift.frequency * t as f64;
        self.target
            .iter()
            .enumerate()
            .map(|(k, &b)| b + self.drift.target * (w + k as f64).sin())
            .collect()
    }

    pub fn linear_at(&self, i: usize, t: usize) -> Vec<f64> {
        let w = self.drift.frequency * t as f64;
        self.agents[i]
            .linear
            .iter()
            .enumerate()
            .map(|(k, &q)| q + self.drift.linear * (w + (k + i) as f64).sin())
            .collect()
    }

    pub fn offset_at(&self, i: usize, t: usize) -> Vec<f64> {
        let w = self.drift.frequency * t as f64;
        self.agents[i]
            .offset
            .iter()
            .enumerate()
            .map(|(k, &r)| r + self.drift.offset * (w + (k + i) as f64).cos())
            .collect()
    }

    fn is_drifting(&self) -> bool {
        self.drift.frequency != 0.0 && (self.drift.target != 0.0 || self.drift.linear != 0.0 || self.drift.offset != 0.0)
    }

    /// A feasible start: box centres, or the origin when unconstrained.
    pub fn default_start(&self) -> Blocks<f64> {
        self.agents
            .iter()
            .map(|a| match &a.bounds {
                Some((l, u)) => l.iter().zip(u).map(|(lo, hi)| 0.5 * (lo + hi)).collect(),
                None => vec![0.0; a.hessian.rows()],
            })
            .collect()
    }

    /// Uniform start inside each box (inside `[−1, 1]ⁿ` when unconstrained).
    pub fn random_start(&self, seed: u64) -> Blocks<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.agents
            .iter()
            .map(|a| {
                let n = a.hessian.rows();
                (0..n)
                    .map(|k| match &a.bounds {
                        Some((l, u)) => uniform(&mut rng, l[k], u[k]),
                        None => uniform(&mut rng, -1.0, 1.0),
                    })
                    .collect()
            })
            .collect()
    }

    pub fn into_scenario(self, network: crate::graph::Network<f64>, x0: Blocks<f64>) -> Result<Scenario> {
        if network.n_agents() != self.agents.len() {
            return Err(Error::DimensionMismatch {
                expected: self.agents.len(),
                found: network.n_agents(),
            });
        }
        let l1 = self.constants.l1;
        Ok(Scenario {
            name: "quadratic".into(),
            stream: Arc::new(self),
            network,
            x0,
            oracle_lipschitz: l1,
            oracle_method: OracleMethod::ProjectedGradient,
            landmarks: None,
        })
    }
}

/// Builds the random scenario described by `cfg` with a random feasible start.
pub fn build(cfg: &QuadraticConfig, horizon: usize, seed: u64) -> Result<Scenario> {
    let family = QuadraticFamily::random(cfg, horizon, seed)?;
    let network = cfg.graph.build(cfg.n_agents)?;
    let x0 = family.random_start(seed.wrapping_add(0x5eed));
    family.into_scenario(network, x0)
}

fn exact_constants(agents: &[QuadraticAgent]) -> Result<ProblemConstants<f64>> {
    let n_agents = agents.len();
    let dims: Vec<usize> = agents.iter().map(|a| a.hessian.rows()).collect();
    let total: usize = dims.iter().sum();
    let starts: Vec<usize> = dims
        .iter()
        .scan(0, |acc, &n| {
            let s = *acc;
            *acc += n;
            Some(s)
        })
        .collect();
    let n2 = (n_agents * n_agents) as f64;
    let sum_c: f64 = agents.iter().map(|a| a.coupling).sum();
    let sum_c2: f64 = agents.iter().map(|a| a.coupling * a.coupling).sum();

    // BᵀB and the two block-diagonal parts
    let mut btb = Matrix::zeros(total, total);
    for (i, ai) in agents.iter().enumerate() {
        for (k, ak) in agents.iter().enumerate() {
            let block = ai.agg.transpose().matmul(&ak.agg);
            for r in 0..dims[i] {
                for c in 0..dims[k] {
                    btb[(starts[i] + r, starts[k] + c)] = block[(r, c)];
                }
            }
        }
    }
    let mut p = Matrix::zeros(total, total);
    let mut p2 = Matrix::zeros(total, total);
    for (i, a) in agents.iter().enumerate() {
        let sq = a.hessian.matmul(&a.hessian);
        for r in 0..dims[i] {
            for c in 0..dims[i] {
                p[(starts[i] + r, starts[i] + c)] = a.hessian[(r, c)];
                p2[(starts[i] + r, starts[i] + c)] = sq[(r, c)];
            }
        }
    }
    let h = p.add(&btb.scaled(sum_c / n2));
    let joint = p2.add(&btb.scaled(sum_c2 / n2));
    let eig_h = h.symmetric_eigenvalues();
    let eig_joint = joint.symmetric_eigenvalues();
    let mu = eig_h[0];
    let l1 = eig_h[total - 1].max(eig_joint[total - 1].max(0.0).sqrt());
    let l2 = agents.iter().map(|a| a.coupling).fold(0.0, f64::max);
    let l3 = agents.iter().map(|a| a.agg.spectral_norm()).fold(0.0, f64::max);
    let c = ProblemConstants {
        mu,
        l1,
        l2,
        l3,
        exact: true,
    };
    c.validate()?;
    Ok(c)
}

impl ProblemStream<f64> for QuadraticFamily {
    fn instant(&self, t: usize) -> ProblemInstant<f64> {
        let b = self.target_at(t);
        let agents = self
            .agents
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let cost = QuadraticCost {
                    hessian: a.hessian.clone(),
                    linear: self.linear_at(i, t),
                    constant: 0.0,
                    coupling: a.coupling,
                    target: b.clone(),
                };
                let (feasible, constraint) = match &a.bounds {
                    Some((l, u)) => (
                        ConvexSet::Box {
                            lower: l.clone(),
                            upper: u.clone(),
                        },
                        Some(AffineConstraint::from_box(l, u)),
                    ),
                    None => (ConvexSet::WholeSpace, None),
                };
                AgentProblem {
                    cost: Arc::new(cost) as Arc<dyn LocalCost<f64>>,
                    aggregation: Arc::new(LinearAggregation::new(a.agg.clone(), self.offset_at(i, t)))
                        as Arc<dyn Aggregation<f64>>,
                    feasible,
                    constraint,
                }
            })
            .collect();
        ProblemInstant::new(agents).expect("validated at construction")
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn n_agents(&self) -> usize {
        self.agents.len()
    }

    fn constants(&self) -> Option<ProblemConstants<f64>> {
        Some(self.constants)
    }

    /// Each drifting coordinate changes by at most `ν` times its amplitude.
    fn declared_bounds(&self) -> Option<VariationBounds<f64>> {
        let nu = self.drift.frequency.abs().min(2.0);
        let d = self.target.len() as f64;
        let l2 = self.constants.l2;
        Some(VariationBounds {
            eta: l2 * self.drift.target.abs() * nu * d.sqrt(),
            omega: self.drift.offset.abs() * nu * d.sqrt(),
            gamma: 0.0,
            zeta: if self.is_drifting() { None } else { Some(0.0) },
        })
    }

    /// `∇₂f_i` and `φ_i` shift by constants independent of `(x, z)`, so the
    /// suprema are attained everywhere.
    fn exact_variation(&self, t: usize) -> Option<MeasuredVariation<f64>> {
        let db = dist(&self.target_at(t + 1), &self.target_at(t));
        let eta = self.agents.iter().map(|a| a.coupling * db).fold(0.0, f64::max);
        let omega = (0..self.agents.len())
            .map(|i| dist(&self.offset_at(i, t + 1), &self.offset_at(i, t)))
            .fold(0.0, f64::max);
        Some(MeasuredVariation { eta, omega, gamma: 0.0 })
    }

    fn is_static(&self) -> bool {
        !self.is_drifting()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{measure_variations, VariationSamples};

    #[test]
    fn scalar_constants() {
        let c = QuadraticFamily::scalar(10).constants().unwrap();
        assert!((c.mu - 2.0).abs() < 1e-14 && (c.l1 - 2.0).abs() < 1e-14);
        assert_eq!((c.l2, c.l3), (1.0, 1.0));
    }

    #[test]
    fn two_agent_constants() {
        // H = I + (2/4)·11ᵀ has eigenvalues 1 and 2
        let c = QuadraticFamily::two_agent([1.0, -1.0], 0.0, None, 10).constants().unwrap();
        assert!((c.mu - 1.0).abs() < 1e-12 && (c.l1 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn random_family_is_valid_and_deterministic() {
        let cfg = QuadraticConfig::default();
        let a = QuadraticFamily::random(&cfg, 50, 9).unwrap();
        let b = QuadraticFamily::random(&cfg, 50, 9).unwrap();
        assert_eq!(a.constants(), b.constants());
        let c = a.constants().unwrap();
        assert!(c.mu > 0.0 && c.mu <= c.l1);
        let x = a.random_start(1);
        let g = a.instant(3).check_gradients(&x, 1e-5).unwrap();
        assert!(g.worst() < 1e-6);
    }

    #[test]
    fn exact_variation_dominates_samples() {
        let cfg = QuadraticConfig {
            box_half_width: Some(1.0),
            ..QuadraticConfig::default()
        };
        let fam = QuadraticFamily::random(&cfg, 50, 4).unwrap();
        let samples = VariationSamples {
            points: (0..fam.n_agents()).map(|i| vec![fam.random_start(i as u64)[i].clone()]).collect(),
            aggregates: vec![vec![0.0, 0.0], vec![3.0, -1.0]],
        };
        for t in [0, 7, 31] {
            let m = measure_variations(&fam, t, &samples).unwrap();
            let e = fam.exact_variation(t).unwrap();
            assert!((m.eta - e.eta).abs() < 1e-12 && (m.omega - e.omega).abs() < 1e-12);
            let d = fam.declared_bounds().unwrap();
            assert!(e.eta <= d.eta + 1e-15 && e.omega <= d.omega + 1e-15);
        }
    }

    #[test]
    fn zero_drift_is_static() {
        let cfg = QuadraticConfig {
            drift: Drift::default(),
            ..QuadraticConfig::default()
        };
        assert!(QuadraticFamily::random(&cfg, 5, 0).unwrap().is_static());
    }
}
