//! Robotic basketball defense. Defender `i` marks offender `i`, staying
//! between it and the defended basket, while the weighted team barycenter
//! follows the ball.
//!
//! `f_{i,t} = H(x_i − p_{i,t}) + (γ/N) H(σ − b_t)` with `H` the
//! Huber-smoothed Euclidean norm, `φ_{i,t}(x_i) = β_{i,t} x_i` and
//! `β_{i,t} = min(1/‖p_{i,t} − basket‖², β_max)`. Positions are `(h, v)`:
//! `h` along the court towards the defended basket, `v` across it.
//!
//! Feasible set: the field box intersected with
//! `[x]_h ≥ [p]_h + ε_h` and `[x]_v` between `[p]_v` and `v_B`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_finite, check_positive, GraphConfig, Landmark, Scenario};
use crate::costs::{HuberTrackingCost, LinearAggregation};
use crate::error::{Error, Result};
use crate::linalg::{Blocks, Matrix};
use crate::oracle::OracleMethod;
use crate::problem::{AffineConstraint, AgentProblem, Aggregation, LocalCost, ProblemInstant, ProblemStream};
use crate::projection::ConvexSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasketballConfig {
    pub n_players: usize,
    pub field_lower: [f64; 2],
    pub field_upper: [f64; 2],
    /// `(h_B, v_B)`
    pub basket: [f64; 2],
    pub beta_max: f64,
    pub eps_h: f64,
    pub gamma: f64,
    /// Huber radius of the smoothed norm.
    pub smoothing: f64,
    /// Rounds between offender waypoints.
    pub waypoint_period: usize,
    /// Offender speed per round as a fraction of `ε_h δ`, in `(0, 1]`.
    pub speed_fraction: f64,
    /// Rounds between passes.
    pub pass_period: usize,
    /// Rounds the ball takes to travel between holders.
    pub pass_duration: usize,
    /// Region of the offenders' starting positions.
    pub start_region: [[f64; 2]; 2],
    pub graph: GraphConfig,
}

impl Default for BasketballConfig {
    fn default() -> Self {
        Self {
            n_players: 5,
            field_lower: [0.0, 0.0],
            field_upper: [28.0, 15.0],
            basket: [26.425, 7.5],
            beta_max: 1.0,
            eps_h: 0.5,
            gamma: 2.0,
            smoothing: 1e-3,
            waypoint_period: 200,
            speed_fraction: 0.9,
            pass_period: 150,
            pass_duration: 30,
            start_region: [[6.0, 1.0], [14.0, 14.0]],
            graph: GraphConfig::Complete,
        }
    }
}

impl BasketballConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_players == 0 {
            return Err(Error::InvalidConfig("basketball: n_players must be positive".into()));
        }
        check_positive("eps_h", self.eps_h)?;
        check_positive("beta_max", self.beta_max)?;
        check_positive("smoothing", self.smoothing)?;
        check_finite("gamma", self.gamma)?;
        if self.gamma < 0.0 {
            return Err(Error::InvalidConfig("gamma must be nonnegative".into()));
        }
        if !(self.speed_fraction > 0.0 && self.speed_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "speed_fraction must lie in (0, 1], got {}",
                self.speed_fraction
            )));
        }
        if self.waypoint_period == 0 || self.pass_period == 0 || self.pass_duration > self.pass_period {
            return Err(Error::InvalidConfig(
                "waypoint_period and pass_period must be positive, pass_duration at most pass_period".into(),
            ));
        }
        let (lo, hi) = (self.field_lower, self.field_upper);
        if (0..2).any(|k| !(lo[k] < hi[k])) {
            return Err(Error::InvalidConfig("field box is empty".into()));
        }
        if (0..2).any(|k| !(self.basket[k] >= lo[k] && self.basket[k] <= hi[k])) {
            return Err(Error::InvalidConfig("basket lies outside the field".into()));
        }
        let region = self.offender_region();
        let [s_lo, s_hi] = self.start_region;
        if (0..2).any(|k| !(s_lo[k] <= s_hi[k]) || s_lo[k] < region[0][k] || s_hi[k] > region[1][k]) {
            return Err(Error::InvalidConfig(format!(
                "start_region must lie inside the offender region {region:?}"
            )));
        }
        Ok(())
    }

    /// Offenders stay where the restricted constraint leaves room for a defender.
    pub fn offender_region(&self) -> [[f64; 2]; 2] {
        [self.field_lower, [self.field_upper[0] - self.eps_h, self.field_upper[1]]]
    }

    pub fn weight(&self, p: [f64; 2]) -> f64 {
        let d2 = (p[0] - self.basket[0]).powi(2) + (p[1] - self.basket[1]).powi(2);
        if d2 * self.beta_max <= 1.0 {
            self.beta_max
        } else {
            1.0 / d2
        }
    }
}

#[derive(Clone, Debug)]
pub struct BasketballStream {
    cfg: BasketballConfig,
    horizon: usize,
    /// `waypoints[i][k]` is offender `i` at round `k·waypoint_period`.
    waypoints: Vec<Vec<[f64; 2]>>,
    /// Ball holder during pass interval `k`.
    holders: Vec<usize>,
    speed_cap: f64,
}

fn lerp(a: [f64; 2], b: [f64; 2], s: f64) -> [f64; 2] {
    [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]
}

impl BasketballStream {
    /// `delta` enters through the speed cap `speed_fraction·ε_h·δ`.
    pub fn new(cfg: BasketballConfig, horizon: usize, delta: f64, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(Error::InvalidConfig(format!("delta must lie in (0, 1], got {delta}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let region = cfg.offender_region();
        let speed_cap = cfg.speed_fraction * cfg.eps_h * delta;
        let max_leg = speed_cap * cfg.waypoint_period as f64;
        let legs = horizon / cfg.waypoint_period + 2;
        let mut unit = |lo: f64, hi: f64| lo + (hi - lo) * rng.gen::<f64>();
        let mut waypoints = Vec::with_capacity(cfg.n_players);
        for _ in 0..cfg.n_players {
            let [s_lo, s_hi] = cfg.start_region;
            let mut w = vec![[unit(s_lo[0], s_hi[0]), unit(s_lo[1], s_hi[1])]];
            for _ in 0..legs {
                let prev = *w.last().expect("nonempty");
                // aim at a random spot, then clip each coordinate of the leg
                let aim = [unit(region[0][0], region[1][0]), unit(region[0][1], region[1][1])];
                let next = [0, 1].map(|k| {
                    let step = (aim[k] - prev[k]).clamp(-max_leg, max_leg);
                    (prev[k] + step).clamp(region[0][k], region[1][k])
                });
                w.push(next);
            }
            waypoints.push(w);
        }
        let passes = horizon / cfg.pass_period + 3;
        let mut holders = vec![rng.gen_range(0..cfg.n_players)];
        for _ in 1..passes {
            let prev = *holders.last().expect("nonempty");
            let next = if cfg.n_players == 1 {
                0
            } else {
                let k = rng.gen_range(0..cfg.n_players - 1);
                if k >= prev {
                    k + 1
                } else {
                    k
                }
            };
            holders.push(next);
        }
        Ok(Self {
            cfg,
            horizon,
            waypoints,
            holders,
            speed_cap,
        })
    }

    pub fn config(&self) -> &BasketballConfig {
        &self.cfg
    }

    /// Per-round horizontal speed bound the offenders respect.
    pub fn speed_cap(&self) -> f64 {
        self.speed_cap
    }

    pub fn offender(&self, i: usize, t: usize) -> [f64; 2] {
        let w = &self.waypoints[i];
        let k = t / self.cfg.waypoint_period;
        if k + 1 >= w.len() {
            return w[w.len() - 1];
        }
        let s = (t % self.cfg.waypoint_period) as f64 / self.cfg.waypoint_period as f64;
        lerp(w[k], w[k + 1], s)
    }

    pub fn holder(&self, t: usize) -> usize {
        self.holders[(t / self.cfg.pass_period).min(self.holders.len() - 1)]
    }

    /// The ball rides with its holder and travels linearly to the next one
    /// during the first `pass_duration` rounds of each pass interval.
    pub fn ball(&self, t: usize) -> [f64; 2] {
        let k = (t / self.cfg.pass_period).min(self.holders.len() - 1);
        let from = self.holders[k.saturating_sub(1)];
        let to = self.holders[k];
        let into = t - k * self.cfg.pass_period;
        if k == 0 || self.cfg.pass_duration == 0 || into >= self.cfg.pass_duration {
            return self.offender(to, t);
        }
        let s = into as f64 / self.cfg.pass_duration as f64;
        lerp(self.offender(from, t), self.offender(to, t), s)
    }

    pub fn beta(&self, i: usize, t: usize) -> f64 {
        self.cfg.weight(self.offender(i, t))
    }

    /// `(h ≥ p_h + ε_h, v_lo ≤ v ≤ v_hi)` as `Gx − g ≤ 0`.
    pub fn constraint(&self, i: usize, t: usize) -> AffineConstraint<f64> {
        let p = self.offender(i, t);
        let vb = self.cfg.basket[1];
        let (v_lo, v_hi) = (p[1].min(vb), p[1].max(vb));
        let g = Matrix::from_rows(&[vec![-1.0, 0.0], vec![0.0, -1.0], vec![0.0, 1.0]]).expect("rectangular");
        AffineConstraint {
            matrix: g,
            offset: vec![-(p[0] + self.cfg.eps_h), -v_lo, v_hi],
        }
    }

    pub fn feasible_set(&self, i: usize, t: usize) -> ConvexSet<f64> {
        let field = ConvexSet::Box {
            lower: self.cfg.field_lower.to_vec(),
            upper: self.cfg.field_upper.to_vec(),
        };
        let mut members = vec![field];
        members.extend(self.constraint(i, t).halfspaces().expect("nonzero rows"));
        ConvexSet::intersection(members).expect("matching dimensions")
    }

    /// Each defender starts one unit in front of its offender, clipped to its set.
    pub fn start(&self) -> Blocks<f64> {
        (0..self.cfg.n_players)
            .map(|i| {
                let p = self.offender(i, 0);
                let guess = vec![p[0] + self.cfg.eps_h + 1.0, p[1]];
                self.feasible_set(i, 0).project(&guess).expect("projection onto a nonempty set")
            })
            .collect()
    }

    /// Upper bound on the gradient Lipschitz constant:
    /// `(1 + γβ_max²/N)/r` with `r` the Huber radius.
    pub fn lipschitz_bound(&self) -> f64 {
        let c = &self.cfg;
        (1.0 + c.gamma * c.beta_max * c.beta_max / c.n_players as f64) / c.smoothing
    }

    pub fn landmarks(&self, t: usize) -> Vec<Landmark> {
        let mut out: Vec<Landmark> = (0..self.cfg.n_players)
            .map(|i| Landmark {
                kind: "offender",
                index: i,
                position: self.offender(i, t),
            })
            .collect();
        out.push(Landmark {
            kind: "ball",
            index: self.holder(t),
            position: self.ball(t),
        });
        out
    }
}

impl ProblemStream<f64> for BasketballStream {
    fn instant(&self, t: usize) -> ProblemInstant<f64> {
        let c = &self.cfg;
        let b = self.ball(t).to_vec();
        let agents = (0..c.n_players)
            .map(|i| {
                let cost = HuberTrackingCost {
                    anchor: self.offender(i, t).to_vec(),
                    target: b.clone(),
                    weight: c.gamma / c.n_players as f64,
                    radius: c.smoothing,
                };
                AgentProblem {
                    cost: Arc::new(cost) as Arc<dyn LocalCost<f64>>,
                    aggregation: Arc::new(LinearAggregation::scaled_identity(2, self.beta(i, t)))
                        as Arc<dyn Aggregation<f64>>,
                    feasible: self.feasible_set(i, t),
                    constraint: Some(self.constraint(i, t)),
                }
            })
            .collect();
        ProblemInstant::new(agents).expect("basketball instants are well formed")
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn n_agents(&self) -> usize {
        self.cfg.n_players
    }
}

pub fn build(cfg: &BasketballConfig, horizon: usize, delta: f64, seed: u64) -> Result<Scenario> {
    let network = cfg.graph.build(cfg.n_players)?;
    let stream = Arc::new(BasketballStream::new(cfg.clone(), horizon, delta, seed)?);
    let marks = Arc::clone(&stream);
    Ok(Scenario {
        name: "basketball".into(),
        x0: stream.start(),
        oracle_lipschitz: stream.lipschitz_bound(),
        oracle_method: OracleMethod::Accelerated,
        stream,
        network,
        landmarks: Some(Arc::new(move |t| marks.landmarks(t))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream() -> BasketballStream {
        BasketballStream::new(BasketballConfig::default(), 1000, 0.1, 11).unwrap()
    }

    #[test]
    fn weight_saturates_at_basket() {
        let cfg = BasketballConfig::default();
        assert_eq!(cfg.weight(cfg.basket), cfg.beta_max);
        assert!((cfg.weight([cfg.basket[0] - 4.0, cfg.basket[1]]) - 1.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn offender_speed_respects_cap() {
        let s = stream();
        let cap = 0.5 * 0.1;
        for i in 0..5 {
            for t in 0..1000 {
                let (a, b) = (s.offender(i, t), s.offender(i, t + 1));
                assert!((b[0] - a[0]).abs() <= cap * (1.0 + 1e-12), "player {i} round {t}");
            }
        }
    }

    #[test]
    fn vertical_band_below_basket_line() {
        let s = stream();
        let vb = s.config().basket[1];
        for t in (0..1000).step_by(50) {
            for i in 0..5 {
                let p = s.offender(i, t);
                let set = s.feasible_set(i, t);
                let (lo, hi) = (p[1].min(vb), p[1].max(vb));
                let inside = [p[0] + 1.0, 0.5 * (lo + hi)];
                assert!(set.contains(&inside, 1e-9).unwrap());
                if p[1] <= vb {
                    assert!(!set.contains(&[p[0] + 1.0, p[1] - 0.1], 1e-9).unwrap());
                    assert!(!set.contains(&[p[0] + 1.0, vb + 0.1], 1e-9).unwrap());
                }
                assert!(!set.contains(&[p[0], 0.5 * (lo + hi)], 1e-9).unwrap());
            }
        }
    }

    #[test]
    fn ball_is_continuous_and_held() {
        let s = stream();
        for t in 0..999 {
            let (a, b) = (s.ball(t), s.ball(t + 1));
            assert!((a[0] - b[0]).hypot(a[1] - b[1]) < 1.0, "ball jumps at {t}");
        }
        let t = 3 * 150 + 40;
        assert_eq!(s.ball(t), s.offender(s.holder(t), t));
    }

    #[test]
    fn start_is_feasible() {
        let s = stream();
        let x0 = s.start();
        assert!(s.instant(0).contains(&x0, 1e-9).unwrap());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let s = stream();
        let x = s.start();
        assert!(s.instant(0).check_gradients(&x, 1e-6).unwrap().worst() < 1e-4);
    }
}
