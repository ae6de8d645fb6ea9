//! The three-dimensional comparison system behind the regret bound.
//!
//! The error vector `z_t = (‖x_t − x*_t‖, ‖s_t − 1s̄_t‖, ‖y_t − 1ȳ_t‖)`
//! satisfies `z_{t+1} ≤ M(δ) z_t + B u` with `M(δ) = M₀ + δE`. A `δ` for which
//! `M(δ)` is Schur yields the per-round cost-gap and cumulative regret bounds
//! computed here.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{spectral_radius3, Mat3};
use crate::problem::{ProblemConstants, VariationBounds};
use crate::scalar::Scalar;

/// Margin below 1 required to call `λ(δ)` Schur.
pub const SCHUR_MARGIN: f64 = 1e-12;
pub const GRID_STEP: f64 = 1e-4;
pub const REFINE_TOL: f64 = 1e-8;

/// Which `x`-coefficient enters the gradient-tracker row.
///
/// The published statement carries `(2 + αL₁ + αL₁)(L₂ + L₂L₃)`; by analogy
/// with the sibling lemma the intended factor may be `(2 + αL₁ + αL₁L₃)`.
/// Both are available; `Printed` is the default.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingForm {
    #[default]
    Printed,
    WithL3,
}

impl CouplingForm {
    /// `(2 + αL₁ + αL₁)` or `(2 + αL₁ + αL₁L₃)`.
    pub fn factor<T: Scalar>(self, alpha: T, l1: T, l3: T) -> T {
        let two = T::lit(2.0);
        match self {
            CouplingForm::Printed => two + alpha * l1 + alpha * l1,
            CouplingForm::WithL3 => two + alpha * l1 + alpha * l1 * l3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaTarget {
    /// Largest `δ` with `λ(δ) < 1`.
    LargestSchur,
    /// The `δ` minimizing `λ(δ)` (fastest certified contraction).
    MinimizeLambda,
}

#[derive(Clone, Debug)]
pub struct StabilityModel<T> {
    pub constants: ProblemConstants<T>,
    pub rho: T,
    pub alpha: T,
    pub n_agents: usize,
    pub form: CouplingForm,
    pub m0: Mat3<T>,
    pub e: Mat3<T>,
    pub b: Mat3<T>,
    /// `(ζ, √N η, √N ω)`
    pub u: [T; 3],
}

/// Builds `M₀`, `E`, `B` and `u`. Requires `μ > 0`, `0 ≤ ρ < 1` and
/// `0 < α ≤ 1/L₁`.
pub fn build_model<T: Scalar>(
    constants: &ProblemConstants<T>,
    bounds: &VariationBounds<T>,
    rho: T,
    alpha: T,
    n_agents: usize,
) -> Result<StabilityModel<T>> {
    build_model_with(constants, bounds, rho, alpha, n_agents, CouplingForm::default())
}

pub fn build_model_with<T: Scalar>(
    constants: &ProblemConstants<T>,
    bounds: &VariationBounds<T>,
    rho: T,
    alpha: T,
    n_agents: usize,
    form: CouplingForm,
) -> Result<StabilityModel<T>> {
    if !constants.admits_alpha(alpha) {
        return Err(Error::InvalidConstants(format!(
            "alpha = {alpha} exceeds 1/L1 = {}",
            constants.max_alpha()
        )));
    }
    build_model_relaxed(constants, bounds, rho, alpha, n_agents, form)
}

/// As [`build_model_with`] but without the `α ≤ 1/L₁` precondition, for
/// exploring `λ(δ)` outside the analyzed regime. Bounds derived from such a
/// model carry no guarantee.
pub fn build_model_relaxed<T: Scalar>(
    constants: &ProblemConstants<T>,
    bounds: &VariationBounds<T>,
    rho: T,
    alpha: T,
    n_agents: usize,
    form: CouplingForm,
) -> Result<StabilityModel<T>> {
    constants.validate()?;
    if !(rho >= T::zero() && rho < T::one()) {
        return Err(Error::InvalidConstants(format!("rho must lie in [0, 1), got {rho}")));
    }
    if !(alpha > T::zero()) || !alpha.is_finite() {
        return Err(Error::InvalidConstants(format!("alpha must be positive, got {alpha}")));
    }
    if n_agents == 0 {
        return Err(Error::InvalidConstants("need at least one agent".into()));
    }
    let zeta = bounds
        .zeta
        .ok_or_else(|| Error::InvalidConstants("zeta is unknown; solve the stream first".into()))?;
    for (name, v) in [("eta", bounds.eta), ("omega", bounds.omega), ("zeta", zeta)] {
        if !(v >= T::zero()) || !v.is_finite() {
            return Err(Error::InvalidConstants(format!("{name} must be finite and nonnegative, got {v}")));
        }
    }
    let ProblemConstants { mu, l1, l2, l3, .. } = *constants;
    let z = T::zero();
    let one = T::one();
    let two = T::lit(2.0);
    let l2c = l2 + l2 * l3;
    let m0 = [[one, z, z], [z, rho, z], [z, two * l2, rho]];
    let e = [
        [-mu * alpha, alpha * l1, alpha * l3],
        [
            two * l3 + alpha * l1 * l3 + alpha * l1 * l3 * l3,
            alpha * l1 * l3,
            alpha * l3 * l3,
        ],
        [form.factor(alpha, l1, l3) * l2c, alpha * l1 * l2c, alpha * l3 * l2c],
    ];
    let b = [[one, z, z], [z, one, one], [z, one, l2]];
    let sqrt_n = T::from_count(n_agents).sqrt();
    Ok(StabilityModel {
        constants: *constants,
        rho,
        alpha,
        n_agents,
        form,
        m0,
        e,
        b,
        u: [zeta, sqrt_n * bounds.eta, sqrt_n * bounds.omega],
    })
}

fn mat_vec3<T: Scalar>(m: &Mat3<T>, v: &[T; 3]) -> [T; 3] {
    [0, 1, 2].map(|r| m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2])
}

impl<T: Scalar> StabilityModel<T> {
    /// `M(δ) = M₀ + δE`
    pub fn matrix(&self, delta: T) -> Mat3<T> {
        let mut m = self.m0;
        for (row, erow) in m.iter_mut().zip(&self.e) {
            for (v, &ev) in row.iter_mut().zip(erow) {
                *v = *v + delta * ev;
            }
        }
        m
    }

    /// `λ(δ)`, the spectral radius of `M(δ)`.
    pub fn spectral_radius(&self, delta: T) -> T {
        spectral_radius3(&self.matrix(delta))
    }

    pub fn is_schur(&self, delta: T) -> bool {
        self.spectral_radius(delta) < T::one() - T::lit(SCHUR_MARGIN)
    }

    /// `B u` for a given input vector.
    pub fn forcing(&self, u: &[T; 3]) -> [T; 3] {
        mat_vec3(&self.b, u)
    }

    /// `M(δ) z + B u`
    pub fn propagate(&self, delta: T, z: &[T; 3], u: &[T; 3]) -> [T; 3] {
        let mz = mat_vec3(&self.matrix(delta), z);
        let bu = self.forcing(u);
        [0, 1, 2].map(|k| mz[k] + bu[k])
    }

    /// `Q = ‖Bu‖`
    pub fn q(&self) -> T {
        let bu = self.forcing(&self.u);
        (bu[0] * bu[0] + bu[1] * bu[1] + bu[2] * bu[2]).sqrt()
    }

    /// `√(ζ² + N(η+ω)² + N(η+L₂ω)²)` written out from the constants.
    pub fn q_closed_form(&self, bounds: &VariationBounds<T>) -> T {
        let n = T::from_count(self.n_agents);
        let zeta = bounds.zeta.unwrap_or_else(T::zero);
        let a = bounds.eta + bounds.omega;
        let c = bounds.eta + self.constants.l2 * bounds.omega;
        (zeta * zeta + n * a * a + n * c * c).sqrt()
    }

    /// Second-order one-sided difference of `λ` at `δ = 0`.
    pub fn lambda_slope_at_zero(&self, h: T) -> T {
        let l0 = self.spectral_radius(T::zero());
        let l1 = self.spectral_radius(h);
        let l2 = self.spectral_radius(h + h);
        (T::lit(-3.0) * l0 + T::lit(4.0) * l1 - l2) / (h + h)
    }

    /// Grid search over `(0, 1)` at spacing 1e-4 followed by refinement to 1e-8.
    pub fn find_delta(&self, target: DeltaTarget) -> Result<DeltaSearch<T>> {
        let step = T::lit(GRID_STEP);
        let n = (1.0 / GRID_STEP).round() as usize;
        let grid: Vec<(T, T)> = (1..n)
            .map(|k| {
                let d = step * T::from_count(k);
                (d, self.spectral_radius(d))
            })
            .collect();
        let (argmin, &(d_min, l_min)) = grid
            .iter()
            .enumerate()
            .min_by(|a, b| a.1 .1.partial_cmp(&b.1 .1).unwrap_or(std::cmp::Ordering::Equal))
            .expect("grid is nonempty");
        let limit = T::one() - T::lit(SCHUR_MARGIN);
        if !(l_min < limit) {
            return Err(Error::NoStableDelta {
                min_lambda: l_min.as_f64(),
                at_delta: d_min.as_f64(),
            });
        }
        let (delta, lambda) = match target {
            DeltaTarget::LargestSchur => {
                let last = grid.iter().rposition(|&(_, l)| l < limit).expect("some point is Schur");
                let mut lo = grid[last].0;
                let mut hi = grid.get(last + 1).map_or(T::one(), |p| p.0);
                while hi - lo > T::lit(REFINE_TOL) {
                    let mid = (lo + hi) / T::lit(2.0);
                    if self.spectral_radius(mid) < limit {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                (lo, self.spectral_radius(lo))
            }
            DeltaTarget::MinimizeLambda => {
                let lo = if argmin == 0 { T::lit(REFINE_TOL) } else { grid[argmin - 1].0 };
                let hi = grid.get(argmin + 1).map_or(T::one() - T::lit(REFINE_TOL), |p| p.0);
                let d = golden_min(|d| self.spectral_radius(d), lo, hi, T::lit(REFINE_TOL));
                let l = self.spectral_radius(d);
                if l <= l_min {
                    (d, l)
                } else {
                    (d_min, l_min)
                }
            }
        };
        let stride = 100;
        let curve = grid.iter().step_by(stride).copied().collect();
        Ok(DeltaSearch { delta, lambda, curve })
    }

    /// Per-round cost-gap bounds for `t = 0..=horizon` and the cumulative
    /// regret bound for `horizon` rounds.
    pub fn theoretical_bounds(&self, delta: T, horizon: usize, u0: T) -> Result<TheoreticalBounds<T>> {
        let lambda = self.spectral_radius(delta);
        if !(lambda < T::one() - T::lit(SCHUR_MARGIN)) {
            return Err(Error::NotSchur {
                delta: delta.as_f64(),
                lambda: lambda.as_f64(),
            });
        }
        let q = self.q();
        let l1 = self.constants.l1;
        let half = T::lit(0.5);
        let one = T::one();
        let gap = one - lambda;
        let per_round = (0..=horizon)
            .map(|t| {
                let lt = lambda.powi(t as i32);
                half * l1 * (lt * lt * u0 * u0 + T::lit(2.0) * lt * u0 * q / gap + q * q / (gap * gap))
            })
            .collect();
        Ok(TheoreticalBounds {
            lambda,
            u0,
            q,
            l1,
            per_round,
            cumulative: cumulative_regret_bound(l1, lambda, u0, q, horizon),
            average_limit: half * l1 * q * q / (gap * gap),
        })
    }
}

/// Minimizer of a unimodal function on `[lo, hi]` by golden-section search.
fn golden_min<T: Scalar>(f: impl Fn(T) -> T, mut lo: T, mut hi: T, tol: T) -> T {
    let inv_phi = T::lit((5f64.sqrt() - 1.0) / 2.0);
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while hi - lo > tol {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    (lo + hi) / T::lit(2.0)
}

/// `(L₁/2)(U₀²/(1−λ²) + 2U₀Q/(1−λ)² + T·Q²/(1−λ)²)`
pub fn cumulative_regret_bound<T: Scalar>(l1: T, lambda: T, u0: T, q: T, horizon: usize) -> T {
    let one = T::one();
    let gap = one - lambda;
    T::lit(0.5)
        * l1
        * (u0 * u0 / (one - lambda * lambda)
            + T::lit(2.0) * u0 * q / (gap * gap)
            + T::from_count(horizon) * q * q / (gap * gap))
}

#[derive(Clone, Debug)]
pub struct DeltaSearch<T> {
    pub delta: T,
    pub lambda: T,
    /// `(δ, λ(δ))` samples every 0.01.
    pub curve: Vec<(T, T)>,
}

#[derive(Clone, Debug)]
pub struct TheoreticalBounds<T> {
    pub lambda: T,
    pub u0: T,
    pub q: T,
    pub l1: T,
    /// Cost-gap bound at `t = 0..=horizon`.
    pub per_round: Vec<T>,
    /// Bound on `R_T` for the full horizon.
    pub cumulative: T,
    /// Limit of the average-regret bound, `L₁Q²/(2(1−λ)²)`.
    pub average_limit: T,
}

impl<T: Scalar> TheoreticalBounds<T> {
    /// Bound on `R_t` for any `t`.
    pub fn cumulative_at(&self, t: usize) -> T {
        cumulative_regret_bound(self.l1, self.lambda, self.u0, self.q, t)
    }
}

/// Machine-readable certification report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StabilityReport {
    pub constants: ProblemConstants<f64>,
    pub bounds: VariationBounds<f64>,
    pub rho: f64,
    pub alpha: f64,
    pub n_agents: usize,
    pub coupling_form: CouplingForm,
    pub alpha_admissible: bool,
    pub configured_delta: f64,
    pub configured_lambda: f64,
    pub configured_schur: bool,
    pub search_target: DeltaTarget,
    pub search_delta: Option<f64>,
    pub search_lambda: Option<f64>,
    pub search_error: Option<String>,
    pub curve: Vec<[f64; 2]>,
    pub u0: Option<f64>,
    pub q: f64,
    pub average_regret_limit: Option<f64>,
}

impl StabilityReport {
    pub fn new(
        model: &StabilityModel<f64>,
        bounds: &VariationBounds<f64>,
        configured_delta: f64,
        target: DeltaTarget,
        u0: Option<f64>,
    ) -> Self {
        let search = model.find_delta(target);
        let configured_lambda = model.spectral_radius(configured_delta);
        let configured_schur = model.is_schur(configured_delta);
        let alpha_admissible = model.constants.admits_alpha(model.alpha);
        let q = model.q();
        let average_regret_limit = configured_schur.then(|| {
            let gap = 1.0 - configured_lambda;
            0.5 * model.constants.l1 * q * q / (gap * gap)
        });
        let (search_delta, search_lambda, search_error, curve) = match &search {
            Ok(s) => (
                Some(s.delta),
                Some(s.lambda),
                None,
                s.curve.iter().map(|&(d, l)| [d, l]).collect(),
            ),
            Err(e) => (None, None, Some(e.to_string()), Vec::new()),
        };
        Self {
            constants: model.constants,
            bounds: *bounds,
            rho: model.rho,
            alpha: model.alpha,
            n_agents: model.n_agents,
            coupling_form: model.form,
            alpha_admissible,
            configured_delta,
            configured_lambda,
            configured_schur,
            search_target: target,
            search_delta,
            search_lambda,
            search_error,
            curve,
            u0,
            q,
            average_regret_limit,
        }
    }

    /// Certified iff `α ≤ 1/L₁` and the configured `δ` is Schur.
    pub fn certified(&self) -> bool {
        self.alpha_admissible && self.configured_schur
    }
}
