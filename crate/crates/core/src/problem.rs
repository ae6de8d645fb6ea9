//! Time-varying aggregative problems.
//!
//! At round `t` agent `i` privately holds a cost `f_{i,t}(x_i, σ)`, an
//! aggregation map `φ_{i,t}`, a feasible set `X_{i,t}` and (optionally) an
//! affine functional constraint `h_{i,t}(x_i) ≤ 0`. The aggregate is
//! `σ_t(x) = (1/N) Σ_i φ_{i,t}(x_i)`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, blocks_mean, dist, norm, Blocks, Matrix};
use crate::projection::ConvexSet;
use crate::scalar::{positive_part, Scalar};

/// Local cost `f_i(x_i, σ)` with analytic gradients in both arguments.
pub trait LocalCost<T>: Send + Sync {
    fn value(&self, x: &[T], sigma: &[T]) -> T;
    /// `∇₁f_i(x_i, σ)`, length `n_i`.
    fn grad_x(&self, x: &[T], sigma: &[T]) -> Vec<T>;
    /// `∇₂f_i(x_i, σ)`, length `d`.
    fn grad_sigma(&self, x: &[T], sigma: &[T]) -> Vec<T>;
}

/// Aggregation map `φ_i : ℝ^{n_i} → ℝ^d`.
pub trait Aggregation<T: Scalar>: Send + Sync {
    fn dim_in(&self) -> usize;
    fn dim_out(&self) -> usize;
    fn apply(&self, x: &[T]) -> Vec<T>;
    /// `∇φ_i(x)`, an `n_i × d` matrix.
    fn jacobian(&self, x: &[T]) -> Matrix<T>;
    /// `∇φ_i(x) v` for `v ∈ ℝ^d`.
    fn jacobian_apply(&self, x: &[T], v: &[T]) -> Vec<T> {
        self.jacobian(x).mul_vec(v)
    }
}

/// `h(x) = G x − g`; the constraint reads `h(x) ≤ 0` componentwise.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineConstraint<T> {
    pub matrix: Matrix<T>,
    pub offset: Vec<T>,
}

impl<T: Scalar> AffineConstraint<T> {
    pub fn new(matrix: Matrix<T>, offset: Vec<T>) -> Result<Self> {
        if matrix.rows() != offset.len() {
            return Err(Error::DimensionMismatch {
                expected: matrix.rows(),
                found: offset.len(),
            });
        }
        Ok(Self { matrix, offset })
    }

    /// Box `lower ≤ x ≤ upper` as `(lower − x, x − upper) ≤ 0`.
    pub fn from_box(lower: &[T], upper: &[T]) -> Self {
        let n = lower.len();
        let matrix = Matrix::from_fn(2 * n, n, |r, c| {
            if r < n && r == c {
                -T::one()
            } else if r >= n && r - n == c {
                T::one()
            } else {
                T::zero()
            }
        });
        let offset = lower
            .iter()
            .map(|&l| -l)
            .chain(upper.iter().copied())
            .collect();
        Self { matrix, offset }
    }

    pub fn n_constraints(&self) -> usize {
        self.offset.len()
    }

    pub fn eval(&self, x: &[T]) -> Vec<T> {
        self.matrix
            .mul_vec(x)
            .into_iter()
            .zip(&self.offset)
            .map(|(gx, &g)| gx - g)
            .collect()
    }

    /// The constraint rows as halfspaces (rows with zero normal are skipped).
    pub fn halfspaces(&self) -> Result<Vec<ConvexSet<T>>> {
        (0..self.n_constraints())
            .filter(|&r| self.matrix.row(r).iter().any(|&a| a != T::zero()))
            .map(|r| ConvexSet::halfspace(self.matrix.row(r).to_vec(), self.offset[r]))
            .collect()
    }
}

/// Everything agent `i` privately knows at one round.
#[derive(Clone)]
pub struct AgentProblem<T: Scalar> {
    pub cost: Arc<dyn LocalCost<T>>,
    pub aggregation: Arc<dyn Aggregation<T>>,
    /// `X_{i,t}`, the set the agent projects onto.
    pub feasible: ConvexSet<T>,
    pub constraint: Option<AffineConstraint<T>>,
}

impl<T: Scalar> AgentProblem<T> {
    pub fn dim(&self) -> usize {
        self.aggregation.dim_in()
    }

    /// Descent direction `∇₁f_i(x, s) + ∇φ_i(x) y` used by the tracking update.
    pub fn local_direction(&self, x: &[T], s: &[T], y: &[T]) -> Vec<T> {
        let mut d = self.cost.grad_x(x, s);
        let corr = self.aggregation.jacobian_apply(x, y);
        axpy(&mut d, T::one(), &corr);
        d
    }
}

/// The problem at one round.
#[derive(Clone)]
pub struct ProblemInstant<T: Scalar> {
    agents: Vec<AgentProblem<T>>,
    agg_dim: usize,
    n_constraints: usize,
}

impl<T: Scalar> ProblemInstant<T> {
    pub fn new(agents: Vec<AgentProblem<T>>) -> Result<Self> {
        let first = agents
            .first()
            .ok_or_else(|| Error::InvalidConfig("problem needs at least one agent".into()))?;
        let agg_dim = first.aggregation.dim_out();
        let mut n_constraints = 0;
        for a in &agents {
            if a.aggregation.dim_out() != agg_dim {
                return Err(Error::DimensionMismatch {
                    expected: agg_dim,
                    found: a.aggregation.dim_out(),
                });
            }
            if let Some(d) = a.feasible.dim() {
                if d != a.dim() {
                    return Err(Error::DimensionMismatch { expected: a.dim(), found: d });
                }
            }
            if let Some(h) = &a.constraint {
                if h.matrix.cols() != a.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: a.dim(),
                        found: h.matrix.cols(),
                    });
                }
                if n_constraints != 0 && h.n_constraints() != n_constraints {
                    return Err(Error::DimensionMismatch {
                        expected: n_constraints,
                        found: h.n_constraints(),
                    });
                }
                n_constraints = h.n_constraints();
            }
        }
        Ok(Self {
            agents,
            agg_dim,
            n_constraints,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn agg_dim(&self) -> usize {
        self.agg_dim
    }

    /// Number of functional constraint components `S` (0 if none).
    pub fn n_constraints(&self) -> usize {
        self.n_constraints
    }

    pub fn dims(&self) -> Vec<usize> {
        self.agents.iter().map(AgentProblem::dim).collect()
    }

    pub fn agent(&self, i: usize) -> &AgentProblem<T> {
        &self.agents[i]
    }

    pub fn agents(&self) -> &[AgentProblem<T>] {
        &self.agents
    }

    pub fn check_blocks(&self, x: &[Vec<T>]) -> Result<()> {
        if x.len() != self.agents.len() {
            return Err(Error::DimensionMismatch {
                expected: self.agents.len(),
                found: x.len(),
            });
        }
        for (a, xi) in self.agents.iter().zip(x) {
            if xi.len() != a.dim() {
                return Err(Error::DimensionMismatch {
                    expected: a.dim(),
                    found: xi.len(),
                });
            }
        }
        Ok(())
    }

    /// `σ_t(x) = (1/N) Σ φ_i(x_i)`.
    pub fn aggregate(&self, x: &[Vec<T>]) -> Result<Vec<T>> {
        self.check_blocks(x)?;
        Ok(self.aggregate_unchecked(x))
    }

    fn aggregate_unchecked(&self, x: &[Vec<T>]) -> Vec<T> {
        let contributions: Vec<Vec<T>> = self
            .agents
            .iter()
            .zip(x)
            .map(|(a, xi)| a.aggregation.apply(xi))
            .collect();
        blocks_mean(&contributions)
    }

    /// `Σ_i f_i(x_i, σ(x))`.
    pub fn global_cost(&self, x: &[Vec<T>]) -> Result<T> {
        let sigma = self.aggregate(x)?;
        Ok(self
            .agents
            .iter()
            .zip(x)
            .map(|(a, xi)| a.cost.value(xi, &sigma))
            .sum())
    }

    /// Gradient of `x ↦ Σ_i f_i(x_i, σ(x))`:
    /// block `i` is `∇₁f_i(x_i, σ) + ∇φ_i(x_i) (1/N) Σ_j ∇₂f_j(x_j, σ)`.
    pub fn global_grad(&self, x: &[Vec<T>]) -> Result<Blocks<T>> {
        let sigma = self.aggregate(x)?;
        Ok(self.grad_at_sigma(x, &sigma))
    }

    fn grad_at_sigma(&self, x: &[Vec<T>], sigma: &[T]) -> Blocks<T> {
        let grads2: Vec<Vec<T>> = self
            .agents
            .iter()
            .zip(x)
            .map(|(a, xi)| a.cost.grad_sigma(xi, sigma))
            .collect();
        let mean2 = blocks_mean(&grads2);
        self.agents
            .iter()
            .zip(x)
            .map(|(a, xi)| {
                let mut g = a.cost.grad_x(xi, sigma);
                axpy(&mut g, T::one(), &a.aggregation.jacobian_apply(xi, &mean2));
                g
            })
            .collect()
    }

    /// Blockwise projection onto `X_t = X_{1,t} × … × X_{N,t}`.
    pub fn project(&self, x: &[Vec<T>]) -> Result<Blocks<T>> {
        self.check_blocks(x)?;
        self.agents
            .iter()
            .zip(x)
            .map(|(a, xi)| a.feasible.project(xi))
            .collect()
    }

    pub fn contains(&self, x: &[Vec<T>], tol: T) -> Result<bool> {
        self.check_blocks(x)?;
        for (a, xi) in self.agents.iter().zip(x) {
            if !a.feasible.contains(xi, tol)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// `Σ_i [h_{i,t}(x_i)]^+`, componentwise (length `S`).
    pub fn violation(&self, x: &[Vec<T>]) -> Vec<T> {
        let mut total = vec![T::zero(); self.n_constraints];
        for (a, xi) in self.agents.iter().zip(x) {
            if let Some(h) = &a.constraint {
                for (acc, v) in total.iter_mut().zip(h.eval(xi)) {
                    *acc = *acc + positive_part(v);
                }
            }
        }
        total
    }

    /// Compares every analytic derivative with central finite differences at
    /// `x`. Costs `O(n)` cost evaluations; meant for validation runs.
    pub fn check_gradients(&self, x: &[Vec<T>], step: T) -> Result<GradientCheck<T>> {
        self.check_blocks(x)?;
        let sigma = self.aggregate_unchecked(x);
        let two = T::lit(2.0);
        let mut worst_local = T::zero();
        let mut worst_jac = T::zero();
        for (a, xi) in self.agents.iter().zip(x) {
            let gx = a.cost.grad_x(xi, &sigma);
            let fd_x = central_diff(|v| a.cost.value(v, &sigma), xi, step);
            worst_local = worst_local.max(rel_err(&fd_x, &gx));
            let gs = a.cost.grad_sigma(xi, &sigma);
            let fd_s = central_diff(|v| a.cost.value(xi, v), &sigma, step);
            worst_local = worst_local.max(rel_err(&fd_s, &gs));
            let jac = a.aggregation.jacobian(xi);
            for k in 0..xi.len() {
                let mut plus = xi.clone();
                let mut minus = xi.clone();
                plus[k] = plus[k] + step;
                minus[k] = minus[k] - step;
                let fp = a.aggregation.apply(&plus);
                let fm = a.aggregation.apply(&minus);
                let fd_row: Vec<T> = fp.iter().zip(&fm).map(|(&p, &m)| (p - m) / (two * step)).collect();
                worst_jac = worst_jac.max(rel_err(&fd_row, jac.row(k)));
            }
        }
        let grad = self.grad_at_sigma(x, &sigma);
        let mut worst_global = T::zero();
        for (i, xi) in x.iter().enumerate() {
            let fd = central_diff(
                |v| {
                    let mut xx = x.to_vec();
                    xx[i] = v.to_vec();
                    let s = self.aggregate_unchecked(&xx);
                    self.agents
                        .iter()
                        .zip(&xx)
                        .map(|(a, xj)| a.cost.value(xj, &s))
                        .sum()
                },
                xi,
                step,
            );
            worst_global = worst_global.max(rel_err(&fd, &grad[i]));
        }
        Ok(GradientCheck {
            local: worst_local,
            jacobian: worst_jac,
            global: worst_global,
        })
    }
}

fn central_diff<T: Scalar>(f: impl Fn(&[T]) -> T, x: &[T], h: T) -> Vec<T> {
    let two = T::lit(2.0);
    (0..x.len())
        .map(|k| {
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[k] = p[k] + h;
            m[k] = m[k] - h;
            (f(&p) - f(&m)) / (two * h)
        })
        .collect()
}

/// `‖a − b‖∞ / max(1, ‖b‖∞)`
fn rel_err<T: Scalar>(a: &[T], b: &[T]) -> T {
    let diff = a
        .iter()
        .zip(b)
        .fold(T::zero(), |acc, (&x, &y)| acc.max((x - y).abs()));
    let scale = b.iter().fold(T::one(), |acc, &y| acc.max(y.abs()));
    diff / scale
}

/// Worst relative finite-difference discrepancies found by
/// [`ProblemInstant::check_gradients`].
#[derive(Clone, Copy, Debug)]
pub struct GradientCheck<T> {
    pub local: T,
    pub jacobian: T,
    pub global: T,
}

impl<T: Scalar> GradientCheck<T> {
    pub fn worst(&self) -> T {
        self.local.max(self.jacobian).max(self.global)
    }
}

/// A deterministic sequence of instants: `instant(t)` is a pure function of `t`.
pub trait ProblemStream<T: Scalar>: Send + Sync {
    fn instant(&self, t: usize) -> ProblemInstant<T>;
    fn horizon(&self) -> usize;
    fn n_agents(&self) -> usize;
    /// Strong convexity and Lipschitz constants, when the generator knows them.
    fn constants(&self) -> Option<ProblemConstants<T>> {
        None
    }
    /// Uniform variation bounds declared by the generator.
    fn declared_bounds(&self) -> Option<VariationBounds<T>> {
        None
    }
    /// Exact `(η_t, ω_t, γ_t)` between rounds `t` and `t + 1`, for generators
    /// that can compute the suprema in closed form.
    fn exact_variation(&self, _t: usize) -> Option<MeasuredVariation<T>> {
        None
    }
    /// True when every round returns the same instant.
    fn is_static(&self) -> bool {
        false
    }
}

impl<T: Scalar, S: ProblemStream<T> + ?Sized> ProblemStream<T> for Arc<S> {
    fn instant(&self, t: usize) -> ProblemInstant<T> {
        (**self).instant(t)
    }
    fn horizon(&self) -> usize {
        (**self).horizon()
    }
    fn n_agents(&self) -> usize {
        (**self).n_agents()
    }
    fn constants(&self) -> Option<ProblemConstants<T>> {
        (**self).constants()
    }
    fn declared_bounds(&self) -> Option<VariationBounds<T>> {
        (**self).declared_bounds()
    }
    fn exact_variation(&self, t: usize) -> Option<MeasuredVariation<T>> {
        (**self).exact_variation(t)
    }
    fn is_static(&self) -> bool {
        (**self).is_static()
    }
}

/// Stream built from a closure; handy for ad-hoc problems.
pub struct FnStream<F> {
    f: F,
    horizon: usize,
    n_agents: usize,
    is_static: bool,
}

impl<F> FnStream<F> {
    pub fn new(n_agents: usize, horizon: usize, f: F) -> Self {
        Self {
            f,
            horizon,
            n_agents,
            is_static: false,
        }
    }

    pub fn fixed(n_agents: usize, horizon: usize, f: F) -> Self {
        Self {
            f,
            horizon,
            n_agents,
            is_static: true,
        }
    }
}

impl<T: Scalar, F: Fn(usize) -> ProblemInstant<T> + Send + Sync> ProblemStream<T> for FnStream<F> {
    fn instant(&self, t: usize) -> ProblemInstant<T> {
        (self.f)(if self.is_static { 0 } else { t })
    }
    fn horizon(&self) -> usize {
        self.horizon
    }
    fn n_agents(&self) -> usize {
        self.n_agents
    }
    fn is_static(&self) -> bool {
        self.is_static
    }
}

/// Strong convexity `μ` and Lipschitz constants `L₁, L₂, L₃`.
///
/// `exact` marks constants that are provably valid for the problem (derived
/// from its structure) rather than estimated; only exact constants turn the
/// per-step inequality monitors into hard assertions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants<T> {
    pub mu: T,
    pub l1: T,
    pub l2: T,
    pub l3: T,
    pub exact: bool,
}

impl<T: Scalar> ProblemConstants<T> {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: T| v.is_finite() && v >= T::zero();
        if !(self.mu > T::zero()) || !(self.l1 > T::zero()) || !ok(self.l2) || !ok(self.l3) {
            return Err(Error::InvalidConstants(format!(
                "need mu > 0, L1 > 0, L2 >= 0, L3 >= 0 (got mu={}, L1={}, L2={}, L3={})",
                self.mu, self.l1, self.l2, self.l3
            )));
        }
        if self.mu > self.l1 * (T::one() + T::lit(1e-12)) {
            return Err(Error::InvalidConstants(format!(
                "mu = {} exceeds L1 = {}",
                self.mu, self.l1
            )));
        }
        Ok(())
    }

    /// Largest step size covered by the analysis, `1/L₁`.
    pub fn max_alpha(&self) -> T {
        T::one() / self.l1
    }

    pub fn admits_alpha(&self, alpha: T) -> bool {
        alpha <= self.max_alpha() * (T::one() + T::lit(1e-12))
    }
}

/// Uniform bounds `η, ω, γ, ζ` on the round-to-round variation. `ζ` is
/// usually unknown up front and comes from consecutive oracle solutions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VariationBounds<T> {
    pub eta: T,
    pub omega: T,
    pub gamma: T,
    pub zeta: Option<T>,
}

impl<T: Scalar> VariationBounds<T> {
    pub fn zero() -> Self {
        Self {
            eta: T::zero(),
            omega: T::zero(),
            gamma: T::zero(),
            zeta: Some(T::zero()),
        }
    }
}

/// Per-round variation values `(η_t, ω_t, γ_t)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MeasuredVariation<T> {
    pub eta: T,
    pub omega: T,
    pub gamma: T,
}

/// Point samples for [`measure_variations`]: per-agent points in `X_i` and
/// aggregate values `z ∈ ℝ^d`.
#[derive(Clone, Debug)]
pub struct VariationSamples<T> {
    pub points: Vec<Vec<Vec<T>>>,
    pub aggregates: Vec<Vec<T>>,
}

/// Sampled maxima of the round-to-round changes between `t` and `t + 1`.
///
/// These are lower bounds of the true suprema over `X_i × ℝ^d`.
pub fn measure_variations<T: Scalar, S: ProblemStream<T> + ?Sized>(
    stream: &S,
    t: usize,
    samples: &VariationSamples<T>,
) -> Result<MeasuredVariation<T>> {
    if samples.aggregates.is_empty()
        || samples.points.len() != stream.n_agents()
        || samples.points.iter().any(Vec::is_empty)
    {
        return Err(Error::EmptySample);
    }
    let now = stream.instant(t);
    let next = stream.instant(t + 1);
    let mut out = MeasuredVariation::<T>::default();
    for (i, pts) in samples.points.iter().enumerate() {
        let (a, b) = (now.agent(i), next.agent(i));
        for x in pts {
            for z in &samples.aggregates {
                out.eta = out.eta.max(dist(&b.cost.grad_sigma(x, z), &a.cost.grad_sigma(x, z)));
            }
            out.omega = out
                .omega
                .max(dist(&b.aggregation.apply(x), &a.aggregation.apply(x)));
            out.gamma = out.gamma.max(constraint_change(a, b, x));
        }
    }
    Ok(out)
}

/// `‖h_{t+1}(x) − h_t(x)‖`; a constraint that appears or disappears counts
/// against an all-zero map.
pub(crate) fn constraint_change<T: Scalar>(now: &AgentProblem<T>, next: &AgentProblem<T>, x: &[T]) -> T {
    match (&now.constraint, &next.constraint) {
        (None, None) => T::zero(),
        (Some(h), None) | (None, Some(h)) => norm(&h.eval(x)),
        (Some(h0), Some(h1)) => dist(&h1.eval(x), &h0.eval(x)),
    }
}
