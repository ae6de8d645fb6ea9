//! Regret, constraint violation, consensus errors and the per-step
//! inequality monitors, all computed from simulator records and oracle
//! solutions.
//!
//! Rounds are indexed from 0. Regret and cumulative violation sum over
//! rounds `1..=T`, so the row of round 0 carries a zero cumulative value and
//! no average.

use std::io::Write;

use serde::Serialize;

use crate::algorithm::RoundRecord;
use crate::error::{Error, Result};
use crate::linalg::blocks_dist;
use crate::oracle::OracleSolution;
use crate::problem::{MeasuredVariation, ProblemConstants, ProblemStream, VariationBounds};
use crate::scalar::Scalar;
use crate::stability::{CouplingForm, StabilityModel, TheoreticalBounds};

/// One row of the per-round trace.
#[derive(Clone, Debug)]
pub struct RoundTrace<T> {
    pub t: usize,
    /// `Σ_i f_{i,t}(x_{i,t}, σ_t(x_t))`
    pub cost_alg: T,
    pub cost_opt: Option<T>,
    pub regret_inc: Option<T>,
    /// `R_t = Σ_{k=1..t} (cost_alg − cost_opt)`
    pub cum_regret: Option<T>,
    /// `R_t / t`, undefined at `t = 0`.
    pub avg_regret: Option<T>,
    /// `‖x_t − x*_t‖`
    pub err_x: Option<T>,
    /// `‖s_t − 1s̄_t‖`
    pub err_s: T,
    /// `‖y_t − 1ȳ_t‖`
    pub err_y: T,
    /// `‖x_{t+1} − x_t‖`
    pub step_norm: T,
    /// `Σ_i [h_{i,t}(x_{i,t})]^+`, componentwise.
    pub violation: Vec<T>,
    /// Slack of the four per-step inequalities evaluated from this round to
    /// the next; filled in by [`LemmaReport::attach`].
    pub lemma_slack: [Option<T>; 4],
    pub tracking_s: T,
    pub tracking_y: T,
}

impl<T: Scalar> RoundTrace<T> {
    pub fn violation_sum(&self) -> T {
        self.violation.iter().copied().sum()
    }

    /// The comparison-system state `z_t`, when the oracle is known.
    pub fn z(&self) -> Option<[T; 3]> {
        self.err_x.map(|ex| [ex, self.err_s, self.err_y])
    }
}

/// Builds traces incrementally so long runs need not keep every record.
#[derive(Debug, Default)]
pub struct TraceBuilder<T> {
    cum: T,
    traces: Vec<RoundTrace<T>>,
}

impl<T: Scalar> TraceBuilder<T> {
    pub fn new() -> Self {
        Self {
            cum: T::zero(),
            traces: Vec::new(),
        }
    }

    pub fn push(&mut self, rec: &RoundRecord<T>, oracle: Option<&OracleSolution<T>>) -> &RoundTrace<T> {
        let cost_opt = oracle.map(|o| o.cost);
        let regret_inc = cost_opt.map(|c| rec.cost - c);
        let (cum_regret, avg_regret) = match regret_inc {
            Some(inc) => {
                if rec.t > 0 {
                    self.cum = self.cum + inc;
                }
                let avg = (rec.t > 0).then(|| self.cum / T::from_count(rec.t));
                (Some(self.cum), avg)
            }
            None => (None, None),
        };
        self.traces.push(RoundTrace {
            t: rec.t,
            cost_alg: rec.cost,
            cost_opt,
            regret_inc,
            cum_regret,
            avg_regret,
            err_x: oracle.map(|o| blocks_dist(&rec.x, &o.x_star)),
            err_s: rec.err_s,
            err_y: rec.err_y,
            step_norm: rec.step_norm(),
            violation: rec.violation.clone(),
            lemma_slack: [None; 4],
            tracking_s: rec.tracking.s,
            tracking_y: rec.tracking.y,
        });
        self.traces.last().expect("just pushed")
    }

    pub fn finish(self) -> Vec<RoundTrace<T>> {
        self.traces
    }
}

/// `R_T` over all rows after round 0.
pub fn dynamic_regret<T: Scalar>(traces: &[RoundTrace<T>]) -> Result<T> {
    if traces.is_empty() {
        return Err(Error::MissingOracle(0));
    }
    traces
        .iter()
        .filter(|tr| tr.t > 0)
        .map(|tr| tr.regret_inc.ok_or(Error::MissingOracle(tr.t)))
        .sum()
}

/// `R_t / t` for every row after round 0.
pub fn average_regret<T: Scalar>(traces: &[RoundTrace<T>]) -> Result<Vec<T>> {
    if traces.is_empty() {
        return Err(Error::MissingOracle(0));
    }
    let mut cum = T::zero();
    traces
        .iter()
        .filter(|tr| tr.t > 0)
        .map(|tr| {
            let inc = tr.regret_inc.ok_or(Error::MissingOracle(tr.t))?;
            cum = cum + inc;
            Ok(cum / T::from_count(tr.t))
        })
        .collect()
}

/// `γN(1 − (1−δ)^t)/δ`
pub fn violation_bound<T: Scalar>(gamma: T, n_agents: usize, delta: T, t: usize) -> T {
    gamma * T::from_count(n_agents) * (T::one() - (T::one() - delta).powi(t as i32)) / delta
}

/// `Σ_{t=1..T} γN(1 − (1−δ)^t)/δ = γN(Tδ + δ − 1 + (1−δ)^{T+1})/δ²`.
pub fn cumulative_violation_bound<T: Scalar>(gamma: T, n_agents: usize, delta: T, horizon: usize) -> T {
    let one = T::one();
    let tt = T::from_count(horizon);
    gamma * T::from_count(n_agents) * (tt * delta + delta - one + (one - delta).powi(horizon as i32 + 1)) / (delta * delta)
}

#[derive(Clone, Debug)]
pub struct ViolationProfile<T> {
    /// Per round, componentwise.
    pub per_round: Vec<Vec<T>>,
    /// Sum over rounds `1..=t`, componentwise.
    pub cumulative: Vec<Vec<T>>,
    pub bound: Option<Vec<T>>,
    pub cumulative_bound: Option<Vec<T>>,
}

impl<T: Scalar> ViolationProfile<T> {
    /// First `(round, component, value, bound)` where the per-round or
    /// cumulative profile exceeds its bound by more than `tol`.
    pub fn first_excess(&self, tol: T) -> Option<(usize, usize, T, T)> {
        let check = |rows: &[Vec<T>], bound: &Option<Vec<T>>| {
            let b = bound.as_ref()?;
            rows.iter().zip(b).enumerate().find_map(|(t, (row, &bt))| {
                row.iter()
                    .enumerate()
                    .find(|(_, &v)| v > bt + tol)
                    .map(|(k, &v)| (t, k, v, bt))
            })
        };
        check(&self.per_round, &self.bound).or_else(|| check(&self.cumulative, &self.cumulative_bound))
    }

    pub fn max_violation(&self) -> T {
        self.per_round
            .iter()
            .flatten()
            .fold(T::zero(), |m, &v| m.max(v))
    }
}

/// Violation series with the theoretical right-hand sides when `γ` is known.
pub fn violation_profile<T: Scalar>(
    traces: &[RoundTrace<T>],
    gamma: Option<T>,
    delta: T,
    n_agents: usize,
) -> ViolationProfile<T> {
    let s = traces.first().map_or(0, |tr| tr.violation.len());
    let mut acc = vec![T::zero(); s];
    let mut cumulative = Vec::with_capacity(traces.len());
    for tr in traces {
        if tr.t > 0 {
            for (a, &v) in acc.iter_mut().zip(&tr.violation) {
                *a = *a + v;
            }
        }
        cumulative.push(acc.clone());
    }
    let bound = gamma.map(|g| traces.iter().map(|tr| violation_bound(g, n_agents, delta, tr.t)).collect());
    let cumulative_bound = gamma.map(|g| {
        traces
            .iter()
            .map(|tr| cumulative_violation_bound(g, n_agents, delta, tr.t))
            .collect()
    });
    ViolationProfile {
        per_round: traces.iter().map(|tr| tr.violation.clone()).collect(),
        cumulative,
        bound,
        cumulative_bound,
    }
}

/// Per-round variation values for rounds `0..rounds-1`: exact values from the
/// generator when available, the declared uniform bounds otherwise.
pub fn variation_series<T: Scalar, S: ProblemStream<T> + ?Sized>(
    stream: &S,
    rounds: usize,
    declared: Option<&VariationBounds<T>>,
) -> Option<Vec<MeasuredVariation<T>>> {
    (0..rounds)
        .map(|t| {
            stream.exact_variation(t).or_else(|| {
                declared.map(|b| MeasuredVariation {
                    eta: b.eta,
                    omega: b.omega,
                    gamma: b.gamma,
                })
            })
        })
        .collect()
}

/// Inputs for the per-step inequality monitors.
#[derive(Clone, Debug)]
pub struct LemmaInputs<'a, T> {
    pub constants: ProblemConstants<T>,
    pub rho: T,
    pub alpha: T,
    pub delta: T,
    pub n_agents: usize,
    /// `ζ_t` for each round transition.
    pub zeta: &'a [T],
    /// `(η_t, ω_t, γ_t)` for each round transition.
    pub variation: &'a [MeasuredVariation<T>],
    pub form: CouplingForm,
    /// Negative slack down to `−tol·(1 + RHS)` counts as satisfied.
    pub tol: T,
}

#[derive(Clone, Debug)]
pub struct LemmaRound<T> {
    pub t: usize,
    pub lhs: [T; 4],
    pub rhs: [T; 4],
}

impl<T: Scalar> LemmaRound<T> {
    pub fn slack(&self) -> [T; 4] {
        [0, 1, 2, 3].map(|k| self.rhs[k] - self.lhs[k])
    }
}

#[derive(Clone, Debug)]
pub struct LemmaReport<T> {
    pub rounds: Vec<LemmaRound<T>>,
    /// `(round, lemma index 0..4)` of every inequality that failed.
    pub violations: Vec<(usize, usize)>,
    /// Whether the constants were exact; only then is a violation an error.
    pub exact: bool,
}

impl<T: Scalar> LemmaReport<T> {
    pub fn min_slack(&self) -> [T; 4] {
        let mut out = [T::infinity(); 4];
        for r in &self.rounds {
            for (o, s) in out.iter_mut().zip(r.slack()) {
                *o = o.min(s);
            }
        }
        out
    }

    /// Copies the slack into the trace rows.
    pub fn attach(&self, traces: &mut [RoundTrace<T>]) {
        for r in &self.rounds {
            if let Some(tr) = traces.iter_mut().find(|tr| tr.t == r.t) {
                tr.lemma_slack = r.slack().map(Some);
            }
        }
    }

    /// Hard check for exact constants; a diagnostic otherwise.
    pub fn verdict(&self) -> Result<()> {
        match self.violations.first() {
            Some(&(round, lemma)) if self.exact => Err(Error::InvariantViolation {
                round,
                message: format!("per-step inequality {} has negative slack", lemma + 1),
            }),
            _ => Ok(()),
        }
    }
}

/// Evaluates the four per-step inequalities between consecutive rounds:
///
/// 1. `e_x⁺ ≤ (1−δμα)e_x + δαL₁e_s + δαL₃e_y + ζ_t`
/// 2. `‖x⁺−x‖ ≤ δ(2+αL₁+αL₁L₃)e_x + δαL₁e_s + δαL₃e_y`
/// 3. `e_s⁺ ≤ (ρ+δαL₁L₃)e_s + δ(2L₃+αL₁L₃+αL₁L₃²)e_x + δαL₃²e_y + √N ω_t`
/// 4. `e_y⁺ ≤ (ρ+δαL₃(L₂+L₂L₃))e_y + δc(L₂+L₂L₃)e_x + (δαL₁(L₂+L₂L₃)+2L₂)e_s + L₂√N ω_t + √N η_t`
///
/// with `c` the coefficient selected by `form`.
pub fn lemma_monitors<T: Scalar>(traces: &[RoundTrace<T>], inputs: &LemmaInputs<'_, T>) -> Result<LemmaReport<T>> {
    inputs.constants.validate()?;
    let ProblemConstants { mu, l1, l2, l3, exact } = inputs.constants;
    let (a, d, rho) = (inputs.alpha, inputs.delta, inputs.rho);
    let two = T::lit(2.0);
    let sqrt_n = T::from_count(inputs.n_agents).sqrt();
    let l2c = l2 + l2 * l3;
    let mut rounds = Vec::new();
    let mut violations = Vec::new();
    for (k, w) in traces.windows(2).enumerate() {
        let (now, next) = (&w[0], &w[1]);
        let ex = now.err_x.ok_or(Error::MissingOracle(now.t))?;
        let ex1 = next.err_x.ok_or(Error::MissingOracle(next.t))?;
        let zeta = *inputs.zeta.get(k).ok_or(Error::MissingOracle(next.t))?;
        let var = inputs.variation.get(k).ok_or(Error::MissingConstants)?;
        let (es, ey) = (now.err_s, now.err_y);
        let rhs = [
            (T::one() - d * mu * a) * ex + d * a * l1 * es + d * a * l3 * ey + zeta,
            d * (two + a * l1 + a * l1 * l3) * ex + d * a * l1 * es + d * a * l3 * ey,
            (rho + d * a * l1 * l3) * es
                + d * (two * l3 + a * l1 * l3 + a * l1 * l3 * l3) * ex
                + d * a * l3 * l3 * ey
                + sqrt_n * var.omega,
            (rho + d * a * l3 * l2c) * ey
                + d * inputs.form.factor(a, l1, l3) * l2c * ex
                + (d * a * l1 * l2c + two * l2) * es
                + l2 * sqrt_n * var.omega
                + sqrt_n * var.eta,
        ];
        let lhs = [ex1, now.step_norm, next.err_s, next.err_y];
        for j in 0..4 {
            if lhs[j] - rhs[j] > inputs.tol * (T::one() + rhs[j].abs()) {
                violations.push((now.t, j));
            }
        }
        rounds.push(LemmaRound { t: now.t, lhs, rhs });
    }
    Ok(LemmaReport {
        rounds,
        violations,
        exact,
    })
}

/// Componentwise slack of `z_{t+1} ≤ M(δ)z_t + Bu_t` with per-round
/// `u_t = (ζ_t, √N η_t, √N ω_t)`.
pub fn comparison_slack<T: Scalar>(
    traces: &[RoundTrace<T>],
    model: &StabilityModel<T>,
    delta: T,
    zeta: &[T],
    variation: &[MeasuredVariation<T>],
) -> Result<Vec<[T; 3]>> {
    let sqrt_n = T::from_count(model.n_agents).sqrt();
    traces
        .windows(2)
        .enumerate()
        .map(|(k, w)| {
            let z = w[0].z().ok_or(Error::MissingOracle(w[0].t))?;
            let z1 = w[1].z().ok_or(Error::MissingOracle(w[1].t))?;
            let v = variation.get(k).ok_or(Error::MissingConstants)?;
            let u = [
                *zeta.get(k).ok_or(Error::MissingOracle(w[1].t))?,
                sqrt_n * v.eta,
                sqrt_n * v.omega,
            ];
            let rhs = model.propagate(delta, &z, &u);
            Ok([0, 1, 2].map(|j| rhs[j] - z1[j]))
        })
        .collect()
}

/// `(L₁/2)‖x_t − x*_t‖² − (cost_alg − cost_opt)` per round. Meaningful as an
/// inequality only when the optimum is unconstrained (`∇f(x*) = 0`).
pub fn cost_gap_slack<T: Scalar>(traces: &[RoundTrace<T>], l1: T) -> Result<Vec<T>> {
    traces
        .iter()
        .map(|tr| {
            let ex = tr.err_x.ok_or(Error::MissingOracle(tr.t))?;
            let gap = tr.regret_inc.ok_or(Error::MissingOracle(tr.t))?;
            Ok(T::lit(0.5) * l1 * ex * ex - gap)
        })
        .collect()
}

/// Slack of the per-round cost-gap bound and the cumulative regret bound.
pub fn bound_slack<T: Scalar>(traces: &[RoundTrace<T>], bounds: &TheoreticalBounds<T>) -> Result<(Vec<T>, Vec<T>)> {
    let mut per_round = Vec::with_capacity(traces.len());
    let mut cumulative = Vec::with_capacity(traces.len());
    for tr in traces {
        let gap = tr.regret_inc.ok_or(Error::MissingOracle(tr.t))?;
        let b = *bounds.per_round.get(tr.t).ok_or(Error::MissingConstants)?;
        per_round.push(b - gap);
        let r = tr.cum_regret.ok_or(Error::MissingOracle(tr.t))?;
        cumulative.push(bounds.cumulative_at(tr.t) - r);
    }
    Ok((per_round, cumulative))
}

/// Per-index mean and population standard deviation across equally long series.
#[derive(Clone, Debug, Serialize)]
pub struct SeriesStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub trials: usize,
}

impl SeriesStats {
    pub fn from_series(series: &[Vec<f64>]) -> Result<Self> {
        let first = series.first().ok_or(Error::EmptySample)?;
        let len = first.len();
        if series.iter().any(|s| s.len() != len) {
            return Err(Error::DimensionMismatch {
                expected: len,
                found: series.iter().map(Vec::len).find(|&l| l != len).unwrap_or(len),
            });
        }
        let n = series.len() as f64;
        let mut mean = vec![0.0; len];
        let mut std = vec![0.0; len];
        for k in 0..len {
            let m = series.iter().map(|s| s[k]).sum::<f64>() / n;
            let v = series.iter().map(|s| (s[k] - m) * (s[k] - m)).sum::<f64>() / n;
            mean[k] = m;
            std[k] = v.sqrt();
        }
        Ok(Self {
            mean,
            std,
            trials: series.len(),
        })
    }
}

/// Formats a float with 17 significant digits; `None` becomes an empty field.
pub fn fmt_float(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.16e}"),
        None => String::new(),
    }
}

pub const TRACE_HEADER: [&str; 14] = [
    "t",
    "cost_alg",
    "cost_opt",
    "regret_inc",
    "cum_regret",
    "avg_regret",
    "err_x",
    "err_s",
    "err_y",
    "violation_sum",
    "lemma1_slack",
    "lemma2_slack",
    "lemma3_slack",
    "lemma4_slack",
];

/// Writes the trace as RFC-4180 CSV.
pub fn write_trace_csv<T: Scalar, W: Write>(traces: &[RoundTrace<T>], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    let f = |v: Option<T>| fmt_float(v.map(Scalar::as_f64));
    for tr in traces {
        let mut row = vec![
            tr.t.to_string(),
            f(Some(tr.cost_alg)),
            f(tr.cost_opt),
            f(tr.regret_inc),
            f(tr.cum_regret),
            f(tr.avg_regret),
            f(tr.err_x),
            f(Some(tr.err_s)),
            f(Some(tr.err_y)),
            f(Some(tr.violation_sum())),
        ];
        row.extend(tr.lemma_slack.iter().map(|&s| f(s)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `t, <name>_mean, <name>_std` rows.
pub fn write_stats_csv<W: Write>(name: &str, first_t: usize, stats: &SeriesStats, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", &format!("{name}_mean"), &format!("{name}_std")])?;
    for (k, (m, s)) in stats.mean.iter().zip(&stats.std).enumerate() {
        w.write_record([(first_t + k).to_string(), fmt_float(Some(*m)), fmt_float(Some(*s))])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(t: usize, alg: f64, opt: f64, viol: f64) -> RoundTrace<f64> {
        RoundTrace {
            t,
            cost_alg: alg,
            cost_opt: Some(opt),
            regret_inc: Some(alg - opt),
            cum_regret: None,
            avg_regret: None,
            err_x: Some(0.0),
            err_s: 0.0,
            err_y: 0.0,
            step_norm: 0.0,
            violation: vec![viol],
            lemma_slack: [None; 4],
            tracking_s: 0.0,
            tracking_y: 0.0,
        }
    }

    #[test]
    fn regret_skips_round_zero() {
        let traces = vec![row(0, 10.0, 1.0, 0.0), row(1, 3.0, 1.0, 0.0), row(2, 2.0, 1.0, 0.0)];
        assert_eq!(dynamic_regret(&traces).unwrap(), 3.0);
        assert_eq!(average_regret(&traces).unwrap(), vec![2.0, 1.5]);
    }

    #[test]
    fn regret_requires_oracle() {
        let mut traces = vec![row(0, 1.0, 1.0, 0.0), row(1, 1.0, 1.0, 0.0)];
        traces[1].regret_inc = None;
        assert_eq!(dynamic_regret(&traces), Err(Error::MissingOracle(1)));
        assert_eq!(dynamic_regret::<f64>(&[]), Err(Error::MissingOracle(0)));
    }

    #[test]
    fn violation_bounds_closed_forms() {
        let (g, n, d) = (0.3, 4, 0.25);
        assert_eq!(violation_bound(g, n, d, 0), 0.0);
        assert!((violation_bound(g, n, d, 1) - g * n as f64).abs() < 1e-15);
        // direct summation of the per-round bound
        for horizon in [1usize, 2, 7, 50] {
            let direct: f64 = (1..=horizon).map(|t| violation_bound(g, n, d, t)).sum();
            let closed = cumulative_violation_bound(g, n, d, horizon);
            assert!((direct - closed).abs() < 1e-10 * direct.max(1.0), "T={horizon}: {direct} vs {closed}");
        }
    }

    #[test]
    fn zero_profile_for_feasible_run() {
        let traces = vec![row(0, 1.0, 1.0, 0.0), row(1, 1.0, 1.0, 0.0)];
        let p = violation_profile(&traces, Some(0.0), 0.5, 3);
        assert_eq!(p.max_violation(), 0.0);
        assert!(p.first_excess(0.0).is_none());
        let bad = vec![row(0, 1.0, 1.0, 0.0), row(1, 1.0, 1.0, 1e-3)];
        let p = violation_profile(&bad, Some(0.0), 0.5, 3);
        assert_eq!(p.first_excess(1e-12).map(|e| e.0), Some(1));
    }

    #[test]
    fn stats_single_trial_has_zero_std() {
        let s = SeriesStats::from_series(&[vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(s.std, vec![0.0; 3]);
        let s = SeriesStats::from_series(&[vec![1.0], vec![3.0]]).unwrap();
        assert_eq!((s.mean[0], s.std[0]), (2.0, 1.0));
        assert!(SeriesStats::from_series(&[]).is_err());
    }

    #[test]
    fn csv_uses_empty_fields_for_missing_values() {
        let mut tr = row(0, 1.0, 0.5, 0.0);
        tr.cum_regret = Some(0.0);
        let mut buf = Vec::new();
        write_trace_csv(&[tr], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0].split(',').count(), TRACE_HEADER.len());
        let fields: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(fields[1], "1.0000000000000000e0");
        assert_eq!(fields[5], "");
    }
}
