//! Centralized per-round solver: the `x*_t` every metric is measured against.

use crate::error::{Error, Result};
use crate::linalg::{axpy, blocks_dist, blocks_norm, Blocks};
use crate::problem::{ProblemInstant, ProblemStream};
use crate::scalar::Scalar;

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OracleMethod {
    /// Projected gradient with step `1/L₁`.
    ProjectedGradient,
    /// Nesterov-accelerated projected gradient with gradient-based adaptive
    /// restart; for instants that are only weakly convex or badly conditioned.
    Accelerated,
}

#[derive(Clone, Copy, Debug)]
pub struct OracleOptions<T> {
    /// Gradient Lipschitz constant `L₁`; the step is `1/L₁`.
    pub lipschitz: T,
    /// Stop when `‖x − P[x − g/L₁]‖ ≤ tol`.
    pub tol: T,
    pub max_iter: usize,
    pub method: OracleMethod,
}

impl<T: Scalar> OracleOptions<T> {
    pub fn new(lipschitz: T) -> Self {
        Self {
            lipschitz,
            tol: T::tol_floor(DEFAULT_TOL, 64.0),
            max_iter: DEFAULT_MAX_ITER,
            method: OracleMethod::ProjectedGradient,
        }
    }

    pub fn with_tol(mut self, tol: T) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_method(mut self, method: OracleMethod) -> Self {
        self.method = method;
        self
    }
}

#[derive(Clone, Debug)]
pub struct OracleSolution<T> {
    pub x_star: Blocks<T>,
    pub sigma_star: Vec<T>,
    /// Global gradient at the solution.
    pub g_star: Blocks<T>,
    pub cost: T,
    /// Fixed-point gap `‖x* − P[x* − g*/L₁]‖`.
    pub residual: T,
    pub iterations: usize,
}

/// `‖x − P_X[x − step·g]‖` for the stacked vector.
pub fn fixed_point_residual<T: Scalar>(instant: &ProblemInstant<T>, x: &[Vec<T>], g: &[Vec<T>], step: T) -> Result<T> {
    let trial: Blocks<T> = x
        .iter()
        .zip(g)
        .map(|(xi, gi)| {
            let mut v = xi.clone();
            axpy(&mut v, -step, gi);
            v
        })
        .collect();
    let p = instant.project(&trial)?;
    Ok(blocks_dist(&p, x))
}

fn descend<T: Scalar>(instant: &ProblemInstant<T>, x: &[Vec<T>], g: &[Vec<T>], step: T) -> Result<Blocks<T>> {
    let trial: Blocks<T> = x
        .iter()
        .zip(g)
        .map(|(xi, gi)| {
            let mut v = xi.clone();
            axpy(&mut v, -step, gi);
            v
        })
        .collect();
    instant.project(&trial)
}

/// Minimizes `Σ_i f_i(x_i, σ(x))` over `X_t` from `warm_start`.
pub fn solve_instant<T: Scalar>(
    instant: &ProblemInstant<T>,
    warm_start: &[Vec<T>],
    opts: &OracleOptions<T>,
) -> Result<OracleSolution<T>> {
    instant.check_blocks(warm_start)?;
    if !(opts.lipschitz > T::zero()) || !opts.lipschitz.is_finite() {
        return Err(Error::InvalidConstants(format!("oracle needs L1 > 0, got {}", opts.lipschitz)));
    }
    if warm_start.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("oracle warm start is not finite".into()));
    }
    let step = T::one() / opts.lipschitz;
    let mut x = instant.project(warm_start)?;
    let mut x_prev = x.clone();
    let mut theta = T::one();
    let mut residual = T::infinity();
    for it in 0..=opts.max_iter {
        let g = instant.global_grad(&x)?;
        let next = descend(instant, &x, &g, step)?;
        residual = blocks_dist(&next, &x);
        if residual <= opts.tol {
            return Ok(OracleSolution {
                sigma_star: instant.aggregate(&x)?,
                cost: instant.global_cost(&x)?,
                g_star: g,
                x_star: x,
                residual,
                iterations: it,
            });
        }
        if !residual.is_finite() {
            break;
        }
        match opts.method {
            OracleMethod::ProjectedGradient => x = next,
            OracleMethod::Accelerated => {
                let theta_next = (T::one() + (T::one() + T::lit(4.0) * theta * theta).sqrt()) / T::lit(2.0);
                let beta = (theta - T::one()) / theta_next;
                let y: Blocks<T> = x
                    .iter()
                    .zip(&x_prev)
                    .map(|(a, b)| a.iter().zip(b).map(|(&u, &v)| u + beta * (u - v)).collect())
                    .collect();
                let gy = instant.global_grad(&y)?;
                let candidate = descend(instant, &y, &gy, step)?;
                // restart when the momentum step points uphill
                let uphill: T = y
                    .iter()
                    .zip(&candidate)
                    .zip(&x)
                    .flat_map(|((yi, ci), xi)| {
                        yi.iter().zip(ci).zip(xi).map(|((&a, &b), &c)| (a - b) * (b - c))
                    })
                    .sum();
                x_prev = std::mem::replace(&mut x, if uphill > T::zero() { next } else { candidate });
                theta = if uphill > T::zero() { T::one() } else { theta_next };
            }
        }
    }
    Err(Error::NoConvergence {
        round: 0,
        iterations: opts.max_iter,
        residual: residual.as_f64(),
    })
}

/// Per-round solutions of a whole stream and the drift `ζ_t = ‖x*_{t+1} − x*_t‖`.
#[derive(Clone, Debug)]
pub struct OracleTrajectory<T> {
    pub solutions: Vec<OracleSolution<T>>,
    pub zeta: Vec<T>,
}

impl<T: Scalar> OracleTrajectory<T> {
    /// `ζ = max_t ζ_t` (0 for a single round).
    pub fn zeta_max(&self) -> T {
        self.zeta.iter().fold(T::zero(), |m, &z| m.max(z))
    }

    pub fn len(&self) -> usize {
        self.solutions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.solutions.is_empty()
    }
}

/// Solves rounds `0..=horizon` (one more than the run length, so the drift
/// after the last simulated round is known), warm-starting each round from
/// the previous solution. Static streams are solved once.
pub fn solve_stream<T: Scalar, S: ProblemStream<T> + ?Sized>(
    stream: &S,
    rounds: usize,
    warm_start: &[Vec<T>],
    opts: &OracleOptions<T>,
) -> Result<OracleTrajectory<T>> {
    if rounds == 0 {
        return Err(Error::InvalidParams("oracle needs at least one round".into()));
    }
    let tag = |t: usize, e: Error| match e {
        Error::NoConvergence { iterations, residual, .. } => Error::NoConvergence {
            round: t,
            iterations,
            residual,
        },
        other => other,
    };
    let mut solutions: Vec<OracleSolution<T>> = Vec::with_capacity(rounds);
    if stream.is_static() {
        let sol = solve_instant(&stream.instant(0), warm_start, opts).map_err(|e| tag(0, e))?;
        solutions.resize(rounds, sol);
        return Ok(OracleTrajectory {
            solutions,
            zeta: vec![T::zero(); rounds - 1],
        });
    }
    let mut warm = warm_start.to_vec();
    for t in 0..rounds {
        let sol = solve_instant(&stream.instant(t), &warm, opts).map_err(|e| tag(t, e))?;
        warm.clone_from(&sol.x_star);
        solutions.push(sol);
    }
    let zeta = solutions
        .windows(2)
        .map(|w| blocks_dist(&w[1].x_star, &w[0].x_star))
        .collect();
    Ok(OracleTrajectory { solutions, zeta })
}

/// `‖x_t − x*‖ / ‖x*‖` with the denominator floored at machine precision.
pub fn relative_error<T: Scalar>(x: &[Vec<T>], x_star: &[Vec<T>]) -> T {
    blocks_dist(x, x_star) / blocks_norm(x_star).max(T::epsilon())
}
