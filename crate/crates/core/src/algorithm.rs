//! Projected aggregative tracking and its synchronous round simulator.
//!
//! Every agent keeps `(x_i, s_i, y_i)`. One round reads the neighbors'
//! trackers of round `t` from a [`MessageBuffer`], computes the local
//! update and only then writes the round-`t + 1` values back, so the result
//! does not depend on the order in which agents are processed.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Network;
use crate::linalg::{all_finite, axpy, blocks_mean, consensus_error, dist, norm, Blocks};
use crate::problem::{AgentProblem, ProblemConstants, ProblemInstant, ProblemStream};
use crate::scalar::Scalar;

/// Step size `α` and convex-combination weight `δ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmParams<T> {
    pub alpha: T,
    pub delta: T,
    pub seed: u64,
}

impl<T: Scalar> AlgorithmParams<T> {
    pub fn new(alpha: T, delta: T, seed: u64) -> Result<Self> {
        let p = Self { alpha, delta, seed };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > T::zero()) || !self.alpha.is_finite() {
            return Err(Error::InvalidParams(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.delta > T::zero() && self.delta < T::one()) {
            return Err(Error::InvalidParams(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        Ok(())
    }

    /// A warning when `α` exceeds `1/L₁`, outside the range the convergence
    /// analysis covers. The run still proceeds.
    pub fn alpha_warning(&self, constants: &ProblemConstants<T>) -> Option<String> {
        (!constants.admits_alpha(self.alpha)).then(|| {
            format!(
                "alpha = {} exceeds 1/L1 = {}; the regret and lemma bounds do not apply",
                self.alpha,
                constants.max_alpha()
            )
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentState<T> {
    pub x: Vec<T>,
    pub s: Vec<T>,
    pub y: Vec<T>,
    pub t: usize,
}

/// Which tracker a message carried.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variable {
    S,
    Y,
}

/// One read from the message buffer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Access {
    pub round: usize,
    pub reader: usize,
    pub sender: usize,
    pub variable: Variable,
}

/// Round-`t` trackers published by every agent. Only `s_j` and `y_j` are
/// ever published; local estimates `x_j` never leave their agent.
pub struct MessageBuffer<T> {
    s: Blocks<T>,
    y: Blocks<T>,
    round: usize,
    log: Option<Vec<Access>>,
}

impl<T: Scalar> MessageBuffer<T> {
    fn new(record: bool) -> Self {
        Self {
            s: Vec::new(),
            y: Vec::new(),
            round: 0,
            log: record.then(Vec::new),
        }
    }

    fn publish(&mut self, round: usize, states: &[AgentState<T>]) {
        self.round = round;
        self.s = states.iter().map(|a| a.s.clone()).collect();
        self.y = states.iter().map(|a| a.y.clone()).collect();
    }

    fn read(&mut self, reader: usize, sender: usize, variable: Variable) -> &[T] {
        if let Some(log) = &mut self.log {
            log.push(Access {
                round: self.round,
                reader,
                sender,
                variable,
            });
        }
        match variable {
            Variable::S => &self.s[sender],
            Variable::Y => &self.y[sender],
        }
    }

    /// `(Σ_j a_ij s_j, Σ_j a_ij y_j)` over the closed neighborhood of `i`.
    fn mix(&mut self, net: &Network<T>, i: usize) -> (Vec<T>, Vec<T>) {
        let d = self.s[i].len();
        let mut ms = vec![T::zero(); d];
        let mut my = vec![T::zero(); d];
        let senders = std::iter::once(i).chain(net.neighbors(i).iter().copied());
        for j in senders {
            let a = net.weight(i, j);
            axpy(&mut ms, a, self.read(i, j, Variable::S));
            axpy(&mut my, a, self.read(i, j, Variable::Y));
        }
        (ms, my)
    }
}

/// Knobs of the simulator that do not change the iterates.
#[derive(Clone, Copy, Debug)]
pub struct SimOptions<T> {
    /// Keep a log of every message-buffer read.
    pub record_access: bool,
    /// Fail the step when a tracking identity drifts beyond tolerance.
    pub check_tracking: bool,
    /// Tracking tolerance is `tracking_abs + tracking_per_round · t`, relative.
    pub tracking_abs: T,
    pub tracking_per_round: T,
    /// Allowed distance of `x_{i,0}` from `X_{i,0}`.
    pub start_tol: T,
    /// Compute per-agent updates on the rayon pool.
    pub parallel: bool,
}

impl<T: Scalar> Default for SimOptions<T> {
    fn default() -> Self {
        Self {
            record_access: false,
            check_tracking: true,
            tracking_abs: T::tol_floor(1e-9, 64.0),
            tracking_per_round: T::tol_floor(1e-12, 1.0),
            start_tol: T::tol_floor(1e-9, 64.0),
            parallel: false,
        }
    }
}

/// Relative deviations of the tracker means from the quantities they track.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackingError<T> {
    /// `‖s̄_t − σ_t(x_t)‖ / scale`
    pub s: T,
    /// `‖ȳ_t − (1/N)Σ ∇₂f_{i,t}(x_i, s_i)‖ / scale`
    pub y: T,
    pub tol: T,
}

impl<T: Scalar> TrackingError<T> {
    pub fn ok(&self) -> bool {
        self.s <= self.tol && self.y <= self.tol
    }
}

/// State at the start of round `t` together with what the round produced.
#[derive(Clone, Debug)]
pub struct RoundRecord<T> {
    pub t: usize,
    pub x: Blocks<T>,
    pub s: Blocks<T>,
    pub y: Blocks<T>,
    /// Projected points `x̃_{i,t} ∈ X_{i,t}`.
    pub x_tilde: Blocks<T>,
    pub x_next: Blocks<T>,
    /// `σ_t(x_t)`
    pub sigma: Vec<T>,
    /// `Σ_i f_{i,t}(x_{i,t}, σ_t(x_t))`
    pub cost: T,
    /// `Σ_i [h_{i,t}(x_{i,t})]^+`
    pub violation: Vec<T>,
    /// `‖s_t − 1s̄_t‖`
    pub err_s: T,
    /// `‖y_t − 1ȳ_t‖`
    pub err_y: T,
    pub tracking: TrackingError<T>,
}

impl<T: Scalar> RoundRecord<T> {
    /// `‖x_{t+1} − x_t‖`
    pub fn step_norm(&self) -> T {
        self.x
            .iter()
            .zip(&self.x_next)
            .map(|(a, b)| {
                let d = dist(a, b);
                d * d
            })
            .sum::<T>()
            .sqrt()
    }
}

/// A run of the algorithm over one network and one problem stream.
pub struct SimulationRun<'a, T: Scalar, S: ProblemStream<T> + ?Sized> {
    network: &'a Network<T>,
    stream: &'a S,
    params: AlgorithmParams<T>,
    options: SimOptions<T>,
    states: Vec<AgentState<T>>,
    current: ProblemInstant<T>,
    buffer: MessageBuffer<T>,
    t: usize,
    warnings: Vec<String>,
}

struct AgentUpdate<T> {
    x_tilde: Vec<T>,
    x: Vec<T>,
    s: Vec<T>,
    y: Vec<T>,
}

impl<'a, T: Scalar, S: ProblemStream<T> + ?Sized> SimulationRun<'a, T, S> {
    /// Initializes `s_{i,0} = φ_{i,0}(x_{i,0})` and
    /// `y_{i,0} = ∇₂f_{i,0}(x_{i,0}, s_{i,0})`.
    pub fn init(
        network: &'a Network<T>,
        stream: &'a S,
        params: AlgorithmParams<T>,
        x0: Blocks<T>,
        options: SimOptions<T>,
    ) -> Result<Self> {
        params.validate()?;
        if stream.n_agents() != network.n_agents() {
            return Err(Error::DimensionMismatch {
                expected: network.n_agents(),
                found: stream.n_agents(),
            });
        }
        let current = stream.instant(0);
        current.check_blocks(&x0)?;
        let mut infeasible = Vec::new();
        for (i, (a, xi)) in current.agents().iter().zip(&x0).enumerate() {
            let p = a.feasible.project(xi)?;
            if !all_finite(xi) || dist(&p, xi) > options.start_tol {
                infeasible.push(i);
            }
        }
        if !infeasible.is_empty() {
            return Err(Error::InfeasibleStart { agents: infeasible });
        }
        let states = current
            .agents()
            .iter()
            .zip(x0)
            .map(|(a, x)| {
                let s = a.aggregation.apply(&x);
                let y = a.cost.grad_sigma(&x, &s);
                AgentState { x, s, y, t: 0 }
            })
            .collect();
        let mut warnings = Vec::new();
        if let Some(c) = stream.constants() {
            warnings.extend(params.alpha_warning(&c));
        }
        Ok(Self {
            network,
            stream,
            params,
            options,
            states,
            current,
            buffer: MessageBuffer::new(options.record_access),
            t: 0,
            warnings,
        })
    }

    pub fn round(&self) -> usize {
        self.t
    }

    pub fn states(&self) -> &[AgentState<T>] {
        &self.states
    }

    pub fn params(&self) -> &AlgorithmParams<T> {
        &self.params
    }

    pub fn network(&self) -> &Network<T> {
        self.network
    }

    /// The instant of the current round.
    pub fn instant(&self) -> &ProblemInstant<T> {
        &self.current
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn access_log(&self) -> Option<&[Access]> {
        self.buffer.log.as_deref()
    }

    pub fn x(&self) -> Blocks<T> {
        self.states.iter().map(|a| a.x.clone()).collect()
    }

    /// Tracking-identity residuals at the current round.
    pub fn tracking_error(&self) -> TrackingError<T> {
        let inst = &self.current;
        let n = self.states.len();
        let one = T::one();
        let xs: Blocks<T> = self.x();
        let s: Blocks<T> = self.states.iter().map(|a| a.s.clone()).collect();
        let y: Blocks<T> = self.states.iter().map(|a| a.y.clone()).collect();
        let sigma = blocks_mean(&inst.agents().iter().zip(&xs).map(|(a, x)| a.aggregation.apply(x)).collect::<Vec<_>>());
        let grads: Blocks<T> = (0..n)
            .map(|i| inst.agent(i).cost.grad_sigma(&xs[i], &s[i]))
            .collect();
        let gbar = blocks_mean(&grads);
        let scale_s = s.iter().fold(one.max(norm(&sigma)), |m, v| m.max(norm(v)));
        let scale_y = y.iter().fold(one.max(norm(&gbar)), |m, v| m.max(norm(v)));
        TrackingError {
            s: dist(&blocks_mean(&s), &sigma) / scale_s,
            y: dist(&blocks_mean(&y), &gbar) / scale_y,
            tol: self.options.tracking_abs + self.options.tracking_per_round * T::from_count(self.t),
        }
    }

    /// Executes round `t` and advances to `t + 1`.
    pub fn step(&mut self) -> Result<RoundRecord<T>> {
        let t = self.t;
        let tracking = self.tracking_error();
        if self.options.check_tracking && !tracking.ok() {
            let (tracker, error) = if tracking.s > tracking.tol {
                ("s", tracking.s)
            } else {
                ("y", tracking.y)
            };
            return Err(Error::TrackingDrift {
                round: t,
                tracker: tracker.into(),
                error: error.as_f64(),
                tol: tracking.tol.as_f64(),
            });
        }
        let next = self.stream.instant(t + 1);
        if next.n_agents() != self.states.len() {
            return Err(Error::DimensionMismatch {
                expected: self.states.len(),
                found: next.n_agents(),
            });
        }

        // read phase: every agent gathers its neighbors' round-t trackers
        self.buffer.publish(t, &self.states);
        let n = self.states.len();
        let mixes: Vec<(Vec<T>, Vec<T>)> = (0..n).map(|i| self.buffer.mix(self.network, i)).collect();

        // compute phase: purely local
        let params = self.params;
        let compute = |i: usize| {
            agent_update(
                self.current.agent(i),
                next.agent(i),
                &self.states[i],
                &mixes[i],
                &params,
            )
            .map_err(|e| match e {
                Error::OracleFailure { message, .. } => Error::OracleFailure { round: t, agent: i, message },
                other => other,
            })
        };
        let updates: Vec<AgentUpdate<T>> = if self.options.parallel {
            (0..n).into_par_iter().map(compute).collect::<Result<_>>()?
        } else {
            (0..n).map(compute).collect::<Result<_>>()?
        };

        let x: Blocks<T> = self.x();
        let s: Blocks<T> = self.states.iter().map(|a| a.s.clone()).collect();
        let y: Blocks<T> = self.states.iter().map(|a| a.y.clone()).collect();
        let sigma = self.current.aggregate(&x)?;
        let cost = self.current.global_cost(&x)?;
        let violation = self.current.violation(&x);
        let record = RoundRecord {
            t,
            err_s: consensus_error(&s),
            err_y: consensus_error(&y),
            x,
            s,
            y,
            x_tilde: updates.iter().map(|u| u.x_tilde.clone()).collect(),
            x_next: updates.iter().map(|u| u.x.clone()).collect(),
            sigma,
            cost,
            violation,
            tracking,
        };

        // write phase
        for (state, u) in self.states.iter_mut().zip(updates) {
            state.x = u.x;
            state.s = u.s;
            state.y = u.y;
            state.t = t + 1;
        }
        self.current = next;
        self.t = t + 1;
        Ok(record)
    }

    /// Runs `horizon` rounds, handing every record to `sink`.
    pub fn run_with(&mut self, horizon: usize, mut sink: impl FnMut(RoundRecord<T>) -> Result<()>) -> Result<()> {
        for _ in 0..horizon {
            let rec = self.step()?;
            sink(rec)?;
        }
        Ok(())
    }

    pub fn run_horizon(&mut self, horizon: usize) -> Result<Vec<RoundRecord<T>>> {
        if horizon == 0 {
            return Err(Error::InvalidParams("horizon must be at least 1".into()));
        }
        let mut out = Vec::with_capacity(horizon);
        self.run_with(horizon, |r| {
            out.push(r);
            Ok(())
        })?;
        Ok(out)
    }
}

fn agent_update<T: Scalar>(
    now: &AgentProblem<T>,
    next: &AgentProblem<T>,
    state: &AgentState<T>,
    mix: &(Vec<T>, Vec<T>),
    params: &AlgorithmParams<T>,
) -> Result<AgentUpdate<T>> {
    let fail = |what: &str| Error::OracleFailure {
        round: 0,
        agent: 0,
        message: format!("{what} returned a non-finite value"),
    };
    let dir = now.local_direction(&state.x, &state.s, &state.y);
    if !all_finite(&dir) {
        return Err(fail("descent direction"));
    }
    let mut trial = state.x.clone();
    axpy(&mut trial, -params.alpha, &dir);
    let x_tilde = now.feasible.project(&trial)?;
    let mut x = state.x.clone();
    for (xk, (&xt, &x0)) in x.iter_mut().zip(x_tilde.iter().zip(&state.x)) {
        *xk = x0 + params.delta * (xt - x0);
    }

    let mut s = mix.0.clone();
    axpy(&mut s, T::one(), &next.aggregation.apply(&x));
    axpy(&mut s, -T::one(), &now.aggregation.apply(&state.x));
    if !all_finite(&s) {
        return Err(fail("aggregation map"));
    }

    let mut y = mix.1.clone();
    axpy(&mut y, T::one(), &next.cost.grad_sigma(&x, &s));
    axpy(&mut y, -T::one(), &now.cost.grad_sigma(&state.x, &state.s));
    if !all_finite(&y) || !all_finite(&x) {
        return Err(fail("aggregate gradient"));
    }
    Ok(AgentUpdate { x_tilde, x, s, y })
}
