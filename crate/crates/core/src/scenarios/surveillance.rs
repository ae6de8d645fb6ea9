//! Multi-robot surveillance: agent `i` shadows intruder `i` while the
//! weighted team barycenter stays close to a protected target.
//!
//! `f_{i,t} = ½‖x_i − p_{i,t}‖² + (γ₁/2)‖x_i − b_t‖² + (γ₂/2N)‖σ − b_t‖²`,
//! `φ_{i,t}(x_i) = β_{i,t} x_i`, and every agent lives in a drifting box
//! `[d_t, u_t]`. Intruders circle their centres,
//! `p_{i,t} = p_{i,c} + r(cos νt, sin νt)`; the target circles its own centre
//! with a configurable radius and phase.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_finite, check_positive, GraphConfig, Landmark, Scenario};
use crate::costs::{LinearAggregation, QuadraticCost};
use crate::error::{Error, Result};
use crate::linalg::{Blocks, Matrix};
use crate::oracle::OracleMethod;
use crate::problem::{
    AffineConstraint, AgentProblem, Aggregation, LocalCost, MeasuredVariation, ProblemConstants, ProblemInstant,
    ProblemStream, VariationBounds,
};
use crate::projection::ConvexSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightRule {
    /// `β = min(1/‖p − b‖², β_max)`: intruders near the target weigh more.
    InverseSquare,
    /// `β = min(‖p − b‖², β_max)`.
    SquaredDistance,
    /// `β = 1`.
    Constant,
}

/// Piecewise-linear drift of both box corners through random waypoints.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxDrift {
    /// Rounds between waypoints.
    pub period: usize,
    /// Waypoints lie within `±amplitude` of the initial corners, per coordinate.
    pub amplitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurveillanceConfig {
    pub n_agents: usize,
    /// Intruder circle radius `r`.
    pub radius: f64,
    /// Angular speed `ν` in radians per round.
    pub angular_rate: f64,
    pub target_radius: f64,
    /// Phase of the target on its circle relative to the intruders.
    pub target_phase: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub beta_max: f64,
    pub weights: WeightRule,
    /// Region `[lo, hi]` for the intruder centres `p_{i,c}`.
    pub intruder_region: [[f64; 2]; 2],
    pub target_region: [[f64; 2]; 2],
    pub box_lower: [f64; 2],
    pub box_upper: [f64; 2],
    pub box_drift: Option<BoxDrift>,
    pub graph: GraphConfig,
    /// Round frozen by static mode.
    pub static_round: usize,
}

impl Default for SurveillanceConfig {
    fn default() -> Self {
        Self {
            n_agents: 50,
            radius: 1.0,
            angular_rate: 0.01,
            target_radius: 1.0,
            target_phase: PI,
            gamma1: 1.0,
            gamma2: 10.0,
            beta_max: 1.0,
            weights: WeightRule::InverseSquare,
            intruder_region: [[2.0, 2.0], [18.0, 18.0]],
            target_region: [[5.0, 5.0], [15.0, 15.0]],
            box_lower: [0.0, 0.0],
            box_upper: [20.0, 20.0],
            box_drift: Some(BoxDrift {
                period: 200,
                amplitude: 2.0,
            }),
            graph: GraphConfig::ErdosRenyi { p: 0.2, seed: 1 },
            static_round: 0,
        }
    }
}

impl SurveillanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 {
            return Err(Error::InvalidConfig("surveillance: n_agents must be positive".into()));
        }
        check_finite("radius", self.radius)?;
        check_finite("angular_rate", self.angular_rate)?;
        check_finite("target_radius", self.target_radius)?;
        check_finite("target_phase", self.target_phase)?;
        check_positive("gamma1", self.gamma1)?;
        check_finite("gamma2", self.gamma2)?;
        if self.gamma2 < 0.0 {
            return Err(Error::InvalidConfig("gamma2 must be nonnegative".into()));
        }
        check_positive("beta_max", self.beta_max)?;
        for [lo, hi] in [self.intruder_region, self.target_region] {
            if (0..2).any(|k| !(lo[k] <= hi[k]) || !lo[k].is_finite() || !hi[k].is_finite()) {
                return Err(Error::InvalidConfig(format!("region {lo:?}..{hi:?} is empty or not finite")));
            }
        }
        let margin = self.box_drift.map_or(0.0, |d| 2.0 * d.amplitude);
        if (0..2).any(|k| !(self.box_upper[k] - self.box_lower[k] >= margin)) {
            return Err(Error::InvalidConfig(
                "box must stay nonempty: upper − lower must be at least twice the drift amplitude".into(),
            ));
        }
        if let Some(d) = self.box_drift {
            if d.period == 0 {
                return Err(Error::InvalidConfig("box_drift.period must be positive".into()));
            }
            check_finite("box_drift.amplitude", d.amplitude)?;
            if d.amplitude < 0.0 {
                return Err(Error::InvalidConfig("box_drift.amplitude must be nonnegative".into()));
            }
        }
        Ok(())
    }

    /// Upper bound on `β_{i,t}`.
    pub fn beta_bound(&self) -> f64 {
        match self.weights {
            WeightRule::Constant => 1.0,
            _ => self.beta_max,
        }
    }

    /// Lipschitz constant of `β` as a function of `‖p − b‖`.
    fn beta_slope(&self) -> f64 {
        match self.weights {
            WeightRule::InverseSquare => 2.0 * self.beta_max.powf(1.5),
            WeightRule::SquaredDistance => 2.0 * self.beta_max.sqrt(),
            WeightRule::Constant => 0.0,
        }
    }

    pub fn weight(&self, distance_sq: f64) -> f64 {
        match self.weights {
            WeightRule::InverseSquare => {
                if distance_sq * self.beta_max <= 1.0 {
                    self.beta_max
                } else {
                    1.0 / distance_sq
                }
            }
            WeightRule::SquaredDistance => distance_sq.min(self.beta_max),
            WeightRule::Constant => 1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SurveillanceStream {
    cfg: SurveillanceConfig,
    horizon: usize,
    frozen: bool,
    centres: Vec<[f64; 2]>,
    target_centre: [f64; 2],
    lower_waypoints: Vec<[f64; 2]>,
    upper_waypoints: Vec<[f64; 2]>,
    /// Corners of the box containing every drifted box.
    hull: ([f64; 2], [f64; 2]),
}

fn draw(rng: &mut ChaCha8Rng, [lo, hi]: [[f64; 2]; 2]) -> [f64; 2] {
    [0, 1].map(|k| lo[k] + (hi[k] - lo[k]) * rng.gen::<f64>())
}

fn lerp(a: [f64; 2], b: [f64; 2], s: f64) -> [f64; 2] {
    [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]
}

fn norm2(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

impl SurveillanceStream {
    /// `frozen` pins every round to `cfg.static_round`.
    pub fn new(cfg: SurveillanceConfig, horizon: usize, seed: u64, frozen: bool) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centres = (0..cfg.n_agents).map(|_| draw(&mut rng, cfg.intruder_region)).collect();
        let target_centre = draw(&mut rng, cfg.target_region);
        let (lower_waypoints, upper_waypoints, amp) = match cfg.box_drift {
            Some(d) => {
                let count = (horizon.max(cfg.static_round) + 2) / d.period + 2;
                let mut lo = vec![cfg.box_lower];
                let mut hi = vec![cfg.box_upper];
                for _ in 1..count {
                    let a = d.amplitude;
                    lo.push(draw(&mut rng, [[cfg.box_lower[0] - a, cfg.box_lower[1] - a], [cfg.box_lower[0] + a, cfg.box_lower[1] + a]]));
                    hi.push(draw(&mut rng, [[cfg.box_upper[0] - a, cfg.box_upper[1] - a], [cfg.box_upper[0] + a, cfg.box_upper[1] + a]]));
                }
                (lo, hi, d.amplitude)
            }
            None => (vec![cfg.box_lower], vec![cfg.box_upper], 0.0),
        };
        let hull = (
            [cfg.box_lower[0] - amp, cfg.box_lower[1] - amp],
            [cfg.box_upper[0] + amp, cfg.box_upper[1] + amp],
        );
        Ok(Self {
            cfg,
            horizon,
            frozen,
            centres,
            target_centre,
            lower_waypoints,
            upper_waypoints,
            hull,
        })
    }

    pub fn config(&self) -> &SurveillanceConfig {
        &self.cfg
    }

    fn round(&self, t: usize) -> usize {
        if self.frozen {
            self.cfg.static_round
        } else {
            t
        }
    }

    pub fn intruder(&self, i: usize, t: usize) -> [f64; 2] {
        let w = self.cfg.angular_rate * self.round(t) as f64;
        let c = self.centres[i];
        [c[0] + self.cfg.radius * w.cos(), c[1] + self.cfg.radius * w.sin()]
    }

    pub fn target(&self, t: usize) -> [f64; 2] {
        let w = self.cfg.angular_rate * self.round(t) as f64 + self.cfg.target_phase;
        let c = self.target_centre;
        [c[0] + self.cfg.target_radius * w.cos(), c[1] + self.cfg.target_radius * w.sin()]
    }

    /// Box corners `(d_t, u_t)`; waypoints are held after the last one.
    pub fn bounds(&self, t: usize) -> ([f64; 2], [f64; 2]) {
        let t = self.round(t);
        match self.cfg.box_drift {
            None => (self.cfg.box_lower, self.cfg.box_upper),
            Some(d) => {
                let last = self.lower_waypoints.len() - 1;
                let k = t / d.period;
                if k >= last {
                    return (self.lower_waypoints[last], self.upper_waypoints[last]);
                }
                let s = (t % d.period) as f64 / d.period as f64;
                (
                    lerp(self.lower_waypoints[k], self.lower_waypoints[k + 1], s),
                    lerp(self.upper_waypoints[k], self.upper_waypoints[k + 1], s),
                )
            }
        }
    }

    pub fn beta(&self, i: usize, t: usize) -> f64 {
        let p = self.intruder(i, t);
        let b = self.target(t);
        let d = [p[0] - b[0], p[1] - b[1]];
        self.cfg.weight(d[0] * d[0] + d[1] * d[1])
    }

    /// Largest `‖x‖` over the hull of all boxes, which contains every iterate.
    fn hull_radius(&self) -> f64 {
        let (lo, hi) = self.hull;
        norm2([lo[0].abs().max(hi[0].abs()), lo[1].abs().max(hi[1].abs())])
    }

    /// Uniform start inside the initial box.
    pub fn random_start(&self, seed: u64) -> Blocks<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lo, hi) = self.bounds(0);
        (0..self.cfg.n_agents).map(|_| draw(&mut rng, [lo, hi]).to_vec()).collect()
    }

    pub fn landmarks(&self, t: usize) -> Vec<Landmark> {
        let mut out: Vec<Landmark> = (0..self.cfg.n_agents)
            .map(|i| Landmark {
                kind: "intruder",
                index: i,
                position: self.intruder(i, t),
            })
            .collect();
        out.push(Landmark {
            kind: "target",
            index: 0,
            position: self.target(t),
        });
        let (lo, hi) = self.bounds(t);
        out.push(Landmark {
            kind: "box_lower",
            index: 0,
            position: lo,
        });
        out.push(Landmark {
            kind: "box_upper",
            index: 0,
            position: hi,
        });
        out
    }
}

impl ProblemStream<f64> for SurveillanceStream {
    fn instant(&self, t: usize) -> ProblemInstant<f64> {
        let c = &self.cfg;
        let b = self.target(t);
        let (lo, hi) = self.bounds(t);
        let agents = (0..c.n_agents)
            .map(|i| {
                let p = self.intruder(i, t);
                let cost = QuadraticCost {
                    hessian: Matrix::scaled_identity(2, 1.0 + c.gamma1),
                    linear: vec![-(p[0] + c.gamma1 * b[0]), -(p[1] + c.gamma1 * b[1])],
                    constant: 0.5 * (p[0] * p[0] + p[1] * p[1]) + 0.5 * c.gamma1 * (b[0] * b[0] + b[1] * b[1]),
                    coupling: c.gamma2 / c.n_agents as f64,
                    target: b.to_vec(),
                };
                AgentProblem {
                    cost: Arc::new(cost) as Arc<dyn LocalCost<f64>>,
                    aggregation: Arc::new(LinearAggregation::scaled_identity(2, self.beta(i, t)))
                        as Arc<dyn Aggregation<f64>>,
                    feasible: ConvexSet::Box {
                        lower: lo.to_vec(),
                        upper: hi.to_vec(),
                    },
                    constraint: Some(AffineConstraint::from_box(&lo, &hi)),
                }
            })
            .collect();
        ProblemInstant::new(agents).expect("surveillance instants are well formed")
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn n_agents(&self) -> usize {
        self.cfg.n_agents
    }

    /// With `β̄` the weight bound, `‖β‖² ≤ Nβ̄²` gives
    /// `λ_max(H) ≤ 1 + γ₁ + γ₂β̄²/N` and the joint Lipschitz condition
    /// `√((1 + γ₁)² + γ₂²β̄²/N²)`; `μ = 1 + γ₁` from the block-diagonal part.
    fn constants(&self) -> Option<ProblemConstants<f64>> {
        let c = &self.cfg;
        let n = c.n_agents as f64;
        let bb = c.beta_bound();
        let a = 1.0 + c.gamma1;
        let l1 = (a + c.gamma2 * bb * bb / n).max((a * a + (c.gamma2 * bb / n).powi(2)).sqrt());
        Some(ProblemConstants {
            mu: a,
            l1,
            l2: c.gamma2 / n,
            l3: bb,
            exact: true,
        })
    }

    fn declared_bounds(&self) -> Option<VariationBounds<f64>> {
        if self.frozen {
            return Some(VariationBounds::zero());
        }
        let c = &self.cfg;
        let n = c.n_agents as f64;
        let half = (0.5 * c.angular_rate.abs()).min(0.5 * PI).sin();
        // p − b circles with radius |r − r_b e^{iθ}|
        let rel = (c.radius - c.target_radius * c.target_phase.cos()).hypot(c.target_radius * c.target_phase.sin());
        let gamma = c.box_drift.map_or(0.0, |d| 4.0 * d.amplitude / d.period as f64);
        Some(VariationBounds {
            eta: c.gamma2 / n * 2.0 * c.target_radius.abs() * half,
            omega: c.beta_slope() * 2.0 * rel * half * self.hull_radius(),
            gamma,
            zeta: None,
        })
    }

    fn exact_variation(&self, t: usize) -> Option<MeasuredVariation<f64>> {
        if self.frozen {
            return Some(MeasuredVariation::default());
        }
        let c = &self.cfg;
        let (b0, b1) = (self.target(t), self.target(t + 1));
        let eta = c.gamma2 / c.n_agents as f64 * norm2([b1[0] - b0[0], b1[1] - b0[1]]);
        let dbeta = (0..c.n_agents)
            .map(|i| (self.beta(i, t + 1) - self.beta(i, t)).abs())
            .fold(0.0, f64::max);
        let ((l0, u0), (l1, u1)) = (self.bounds(t), self.bounds(t + 1));
        let gamma = [l1[0] - l0[0], l1[1] - l0[1], u1[0] - u0[0], u1[1] - u0[1]]
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        Some(MeasuredVariation {
            eta,
            omega: dbeta * self.hull_radius(),
            gamma,
        })
    }

    fn is_static(&self) -> bool {
        self.frozen
    }
}

/// Builds a surveillance trial: the network comes from the graph config, the
/// scene and the start from `seed`.
pub fn build(cfg: &SurveillanceConfig, horizon: usize, seed: u64, frozen: bool) -> Result<Scenario> {
    let network = cfg.graph.build(cfg.n_agents)?;
    let stream = Arc::new(SurveillanceStream::new(cfg.clone(), horizon, seed, frozen)?);
    let x0 = stream.random_start(seed ^ 0x9e37_79b9_7f4a_7c15);
    let l1 = stream.constants().map_or(1.0, |c| c.l1);
    let marks = Arc::clone(&stream);
    Ok(Scenario {
        name: if frozen { "surveillance-static" } else { "surveillance" }.into(),
        stream,
        network,
        x0,
        oracle_lipschitz: l1,
        oracle_method: OracleMethod::ProjectedGradient,
        landmarks: Some(Arc::new(move |t| marks.landmarks(t))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{measure_variations, VariationSamples};

    fn small() -> SurveillanceConfig {
        SurveillanceConfig {
            n_agents: 5,
            graph: GraphConfig::Ring,
            ..SurveillanceConfig::default()
        }
    }

    #[test]
    fn intruders_follow_circle() {
        let s = SurveillanceStream::new(small(), 100, 3, false).unwrap();
        let c = s.intruder(2, 0);
        let p = s.intruder(2, 157);
        let centre = [c[0] - 1.0, c[1]];
        assert!((norm2([p[0] - centre[0], p[1] - centre[1]]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn box_starts_at_configured_corners_and_stays_nonempty() {
        let s = SurveillanceStream::new(small(), 2000, 3, false).unwrap();
        assert_eq!(s.bounds(0), ([0.0, 0.0], [20.0, 20.0]));
        for t in 0..2100 {
            let (lo, hi) = s.bounds(t);
            assert!(lo[0] <= hi[0] && lo[1] <= hi[1]);
        }
    }

    #[test]
    fn weights_saturate_and_stay_positive() {
        let cfg = small();
        assert_eq!(cfg.weight(0.0), cfg.beta_max);
        assert!((cfg.weight(4.0) - 0.25).abs() < 1e-15);
        let lit = SurveillanceConfig {
            weights: WeightRule::SquaredDistance,
            beta_max: 3.0,
            ..small()
        };
        assert_eq!(lit.weight(2.0), 2.0);
        assert_eq!(lit.weight(9.0), 3.0);
        let s = SurveillanceStream::new(small(), 100, 1, false).unwrap();
        for t in 0..100 {
            for i in 0..5 {
                let b = s.beta(i, t);
                assert!(b > 0.0 && b <= cfg.beta_max);
            }
        }
    }

    #[test]
    fn static_mode_has_zero_variation() {
        let s = SurveillanceStream::new(small(), 100, 1, true).unwrap();
        let samples = VariationSamples {
            points: s.random_start(2).into_iter().map(|x| vec![x]).collect(),
            aggregates: vec![vec![1.0, 2.0], vec![10.0, 10.0]],
        };
        for t in [0, 5, 50] {
            assert_eq!(measure_variations(&s, t, &samples).unwrap(), MeasuredVariation::default());
        }
    }

    #[test]
    fn measured_variation_below_declared() {
        let s = SurveillanceStream::new(small(), 1000, 7, false).unwrap();
        let d = s.declared_bounds().unwrap();
        let hull = s.hull;
        let corners: Vec<Vec<f64>> = vec![
            vec![hull.0[0], hull.0[1]],
            vec![hull.1[0], hull.1[1]],
            vec![hull.0[0], hull.1[1]],
            vec![10.0, 10.0],
        ];
        let samples = VariationSamples {
            points: vec![corners; 5],
            aggregates: vec![vec![0.0, 0.0], vec![5.0, 5.0]],
        };
        for t in (0..1000).step_by(37) {
            let e = s.exact_variation(t).unwrap();
            let m = measure_variations(&s, t, &samples).unwrap();
            assert!(m.eta <= e.eta * (1.0 + 1e-9) + 1e-15, "eta at {t}");
            assert!(m.omega <= e.omega * (1.0 + 1e-9) + 1e-15, "omega at {t}");
            assert!(m.gamma <= e.gamma * (1.0 + 1e-9) + 1e-15, "gamma at {t}");
            assert!(e.eta <= d.eta * (1.0 + 1e-9));
            assert!(e.omega <= d.omega * (1.0 + 1e-9));
            assert!(e.gamma <= d.gamma * (1.0 + 1e-9));
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let s = SurveillanceStream::new(small(), 100, 1, false).unwrap();
        let x = s.random_start(4);
        assert!(s.instant(17).check_gradients(&x, 1e-5).unwrap().worst() < 1e-5);
    }

    #[test]
    fn main_configuration_defaults() {
        let c = SurveillanceConfig::default();
        assert_eq!((c.n_agents, c.gamma1, c.gamma2), (50, 1.0, 10.0));
    }
}
