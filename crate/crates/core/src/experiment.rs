//! End-to-end runs: scenario, centralized oracle, simulator, metrics and
//! certification, driven by a JSON [`ExperimentConfig`].
//!
//! A run of horizon `T` simulates rounds `0..=T`, so regret and cumulative
//! violation cover rounds `1..=T`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::algorithm::{AlgorithmParams, SimOptions, SimulationRun};
use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::metrics::{
    bound_slack, comparison_slack, lemma_monitors, variation_series, violation_profile, write_stats_csv,
    write_trace_csv, fmt_float, LemmaInputs, LemmaReport, RoundTrace, SeriesStats, TraceBuilder, ViolationProfile,
};
use crate::oracle::{solve_stream, OracleMethod, OracleOptions};
use crate::problem::{MeasuredVariation, ProblemConstants, VariationBounds};
use crate::scenarios::{
    basketball, monte_carlo, quadratic, surveillance, BasketballConfig, MonteCarlo, QuadraticConfig, QuadraticFamily,
    Scenario, SurveillanceConfig,
};
use crate::stability::{build_model_relaxed, CouplingForm, DeltaTarget, StabilityReport, TheoreticalBounds};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioConfig {
    /// One agent, `f = ½x² + ½σ²`, `σ = x`.
    Scalar,
    /// `f_i = ½(x_i − c_i)² + ½(σ − b)²` with an optional common box.
    TwoAgent {
        anchors: [f64; 2],
        target: f64,
        #[serde(default)]
        bounds: Option<[f64; 2]>,
    },
    Quadratic(QuadraticConfig),
    Surveillance(SurveillanceConfig),
    Basketball(BasketballConfig),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Online,
    /// Freeze the problem at one round.
    Static,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMethodConfig {
    ProjectedGradient,
    Accelerated,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Fixed-point tolerance; 1e-9 online and 1e-12 in static mode by default.
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    /// Defaults to the scenario's choice.
    pub method: Option<OracleMethodConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub tracking_abs: f64,
    pub tracking_per_round: f64,
    /// Relative slack allowed in the per-step inequalities.
    pub lemma: f64,
    /// Relative slack allowed in the violation bounds.
    pub violation: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            tracking_abs: 1e-9,
            tracking_per_round: 1e-12,
            lemma: 1e-9,
            violation: 1e-9,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub alpha: Vec<f64>,
    pub delta: Vec<f64>,
}

fn default_trials() -> usize {
    1
}

fn default_true() -> bool {
    true
}

fn default_target() -> DeltaTarget {
    DeltaTarget::MinimizeLambda
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub alpha: f64,
    pub delta: f64,
    pub horizon: usize,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub coupling_form: CouplingForm,
    #[serde(default = "default_target")]
    pub delta_target: DeltaTarget,
    /// Evaluate the per-step inequalities when constants are known.
    #[serde(default = "default_true")]
    pub check_lemmas: bool,
    /// Export agent and landmark positions of the first trial.
    #[serde(default = "default_true")]
    pub positions: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepGrid>,
}

impl ExperimentConfig {
    /// Parses JSON, reporting the line and column of syntax and schema errors.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| {
            Error::InvalidConfig(format!("line {} column {}: {e}", e.line(), e.column()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        AlgorithmParams::new(self.alpha, self.delta, self.seed)?;
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("horizon must be at least 1".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        let t = &self.tolerances;
        for (name, v) in [
            ("tolerances.tracking_abs", t.tracking_abs),
            ("tolerances.tracking_per_round", t.tracking_per_round),
            ("tolerances.lemma", t.lemma),
            ("tolerances.violation", t.violation),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be finite and nonnegative")));
            }
        }
        if let Some(tol) = self.oracle.tol {
            if !(tol > 0.0) {
                return Err(Error::InvalidConfig("oracle.tol must be positive".into()));
            }
        }
        match &self.scenario {
            ScenarioConfig::Quadratic(q) => q.validate()?,
            ScenarioConfig::Surveillance(s) => s.validate()?,
            ScenarioConfig::Basketball(b) => {
                b.validate()?;
                if self.mode == Mode::Static {
                    return Err(Error::InvalidConfig("basketball has no static mode".into()));
                }
            }
            ScenarioConfig::TwoAgent { bounds: Some([l, u]), .. } if !(l <= u) => {
                return Err(Error::InvalidConfig("two_agent bounds must satisfy lower <= upper".into()));
            }
            _ => {}
        }
        if let Some(g) = &self.sweep {
            if g.alpha.is_empty() || g.delta.is_empty() {
                return Err(Error::InvalidConfig("sweep grids must be nonempty".into()));
            }
        }
        Ok(())
    }

    pub fn settings(&self) -> RunSettings {
        RunSettings {
            alpha: self.alpha,
            delta: self.delta,
            horizon: self.horizon,
            oracle_tol: self.oracle.tol.unwrap_or(match self.mode {
                Mode::Online => 1e-9,
                Mode::Static => 1e-12,
            }),
            oracle_max_iter: self.oracle.max_iter.unwrap_or(crate::oracle::DEFAULT_MAX_ITER),
            oracle_method: self.oracle.method.map(|m| match m {
                OracleMethodConfig::ProjectedGradient => OracleMethod::ProjectedGradient,
                OracleMethodConfig::Accelerated => OracleMethod::Accelerated,
            }),
            tolerances: self.tolerances.clone(),
            coupling_form: self.coupling_form,
            check_lemmas: self.check_lemmas,
            positions: false,
            enforce: true,
        }
    }

    /// The scenario of one trial.
    pub fn build_scenario(&self, seed: u64) -> Result<Scenario> {
        let frozen = self.mode == Mode::Static;
        match &self.scenario {
            ScenarioConfig::Scalar => {
                let fam = QuadraticFamily::scalar(self.horizon);
                let net = crate::graph::Network::metropolis(1, &[])?;
                fam.into_scenario(net, vec![vec![1.0]])
            }
            ScenarioConfig::TwoAgent { anchors, target, bounds } => {
                let fam = QuadraticFamily::two_agent(*anchors, *target, bounds.map(|[l, u]| (l, u)), self.horizon);
                let net = crate::graph::Network::metropolis(2, &[(0, 1)])?;
                let x0 = fam.random_start(seed);
                fam.into_scenario(net, x0)
            }
            ScenarioConfig::Quadratic(q) => {
                let q = if frozen {
                    QuadraticConfig {
                        drift: Default::default(),
                        ..q.clone()
                    }
                } else {
                    q.clone()
                };
                quadratic::build(&q, self.horizon, seed)
            }
            ScenarioConfig::Surveillance(s) => surveillance::build(s, self.horizon, seed, frozen),
            ScenarioConfig::Basketball(b) => basketball::build(b, self.horizon, self.delta, seed),
        }
    }
}

/// Everything a single run needs besides the scenario.
#[derive(Clone, Debug)]
pub struct RunSettings {
    pub alpha: f64,
    pub delta: f64,
    pub horizon: usize,
    pub oracle_tol: f64,
    pub oracle_max_iter: usize,
    /// Overrides the scenario's oracle method.
    pub oracle_method: Option<OracleMethod>,
    pub tolerances: Tolerances,
    pub coupling_form: CouplingForm,
    pub check_lemmas: bool,
    pub positions: bool,
    /// Turn tracking drift, failed per-step inequalities (exact constants,
    /// `α ≤ 1/L₁`) and exceeded violation bounds into errors.
    pub enforce: bool,
}

impl RunSettings {
    pub fn new(alpha: f64, delta: f64, horizon: usize) -> Self {
        Self {
            alpha,
            delta,
            horizon,
            oracle_tol: 1e-9,
            oracle_max_iter: crate::oracle::DEFAULT_MAX_ITER,
            oracle_method: None,
            tolerances: Tolerances::default(),
            coupling_form: CouplingForm::default(),
            check_lemmas: true,
            positions: false,
            enforce: true,
        }
    }
}

/// One row of the position export.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PositionRow {
    pub t: usize,
    pub kind: &'static str,
    pub index: usize,
    pub x: f64,
    pub y: f64,
}

/// Theoretical bounds evaluated on a run.
#[derive(Clone, Debug)]
pub struct BoundCheck {
    pub bounds: TheoreticalBounds<f64>,
    /// Slack of the per-round cost-gap bound, per round.
    pub per_round_slack: Vec<f64>,
    /// Slack of `R_t` against the cumulative bound, per round.
    pub cumulative_slack: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct TrialResult {
    pub seed: u64,
    pub n_agents: usize,
    pub rho: f64,
    pub constants: Option<ProblemConstants<f64>>,
    pub traces: Vec<RoundTrace<f64>>,
    /// `‖x_t − x*_t‖ / ‖x*_t‖`
    pub rel_err: Vec<f64>,
    /// `ζ_t` for transitions `t → t + 1`, `t < T`.
    pub zeta: Vec<f64>,
    /// `(η_t, ω_t, γ_t)` for the same transitions, when known.
    pub variation: Option<Vec<MeasuredVariation<f64>>>,
    /// Largest `γ_t` over the run (exact when the generator provides it).
    pub gamma: Option<f64>,
    pub violation: ViolationProfile<f64>,
    pub lemma: Option<LemmaReport<f64>>,
    /// Componentwise slack of the comparison system, per transition.
    pub comparison: Option<Vec<[f64; 3]>>,
    pub bound_check: Option<BoundCheck>,
    /// `‖z_0‖`
    pub u0: Option<f64>,
    pub positions: Vec<PositionRow>,
    pub oracle_iterations: usize,
    pub oracle_residual: f64,
    pub warnings: Vec<String>,
}

fn fold_max(it: impl IntoIterator<Item = f64>) -> f64 {
    it.into_iter().fold(0.0, f64::max)
}

/// Runs one trial: oracle for rounds `0..=T`, the algorithm for rounds
/// `0..=T`, then every metric that the scenario's data supports.
pub fn run_scenario(scn: &Scenario, settings: &RunSettings) -> Result<TrialResult> {
    let params = AlgorithmParams::new(settings.alpha, settings.delta, 0)?;
    let horizon = settings.horizon;
    let rounds = horizon + 1;
    let stream = &*scn.stream;
    let n_agents = scn.network.n_agents();
    let rho = scn.network.rho();
    let constants = stream.constants();

    let opts = OracleOptions {
        max_iter: settings.oracle_max_iter,
        ..OracleOptions::new(scn.oracle_lipschitz)
            .with_tol(settings.oracle_tol)
            .with_method(settings.oracle_method.unwrap_or(scn.oracle_method))
    };
    let traj = solve_stream(stream, rounds, &scn.x0, &opts)?;
    let oracle_iterations = traj.solutions.iter().map(|s| s.iterations).max().unwrap_or(0);
    let oracle_residual = fold_max(traj.solutions.iter().map(|s| s.residual));

    let sim_opts = SimOptions {
        check_tracking: settings.enforce,
        tracking_abs: settings.tolerances.tracking_abs,
        tracking_per_round: settings.tolerances.tracking_per_round,
        ..SimOptions::default()
    };
    let mut sim = SimulationRun::init(&scn.network, stream, params, scn.x0.clone(), sim_opts)?;
    let mut builder = TraceBuilder::new();
    let mut positions = Vec::new();
    let planar = scn.x0.iter().all(|x| x.len() == 2);
    let mut rel_err = Vec::with_capacity(rounds);
    sim.run_with(rounds, |rec| {
        let sol = &traj.solutions[rec.t];
        builder.push(&rec, Some(sol));
        rel_err.push(crate::oracle::relative_error(&rec.x, &sol.x_star));
        if settings.positions && planar {
            for (i, x) in rec.x.iter().enumerate() {
                positions.push(PositionRow {
                    t: rec.t,
                    kind: "agent",
                    index: i,
                    x: x[0],
                    y: x[1],
                });
            }
            if let Some(marks) = &scn.landmarks {
                positions.extend((marks)(rec.t).into_iter().map(|m| PositionRow {
                    t: rec.t,
                    kind: m.kind,
                    index: m.index,
                    x: m.position[0],
                    y: m.position[1],
                }));
            }
        }
        Ok(())
    })?;
    let warnings = sim.warnings().to_vec();
    let mut traces = builder.finish();
    let zeta = traj.zeta.clone();
    let first = traces.first().expect("at least one round");
    let u0 = first.z().map(|z| norm(&z));

    let declared = stream.declared_bounds();
    let variation = variation_series(stream, horizon, declared.as_ref());
    let gamma = variation
        .as_ref()
        .map(|v| fold_max(v.iter().map(|m| m.gamma)))
        .or(declared.map(|d| d.gamma));
    let violation = violation_profile(&traces, gamma, settings.delta, n_agents);

    let mut lemma = None;
    let mut comparison = None;
    let mut bound_check = None;
    if let (Some(c), Some(var)) = (constants, variation.as_ref()) {
        if settings.check_lemmas {
            let inputs = LemmaInputs {
                constants: c,
                rho,
                alpha: settings.alpha,
                delta: settings.delta,
                n_agents,
                zeta: &zeta,
                variation: var,
                form: settings.coupling_form,
                tol: settings.tolerances.lemma,
            };
            let mut report = lemma_monitors(&traces, &inputs)?;
            report.attach(&mut traces);
            // the inequalities are only claimed for α ≤ 1/L₁
            report.exact = c.exact && c.admits_alpha(settings.alpha);
            lemma = Some(report);
        }
        let measured = VariationBounds {
            eta: fold_max(var.iter().map(|m| m.eta)),
            omega: fold_max(var.iter().map(|m| m.omega)),
            gamma: gamma.unwrap_or(0.0),
            zeta: Some(traj.zeta_max()),
        };
        if let Ok(model) = build_model_relaxed(&c, &measured, rho, settings.alpha, n_agents, settings.coupling_form) {
            comparison = Some(comparison_slack(&traces, &model, settings.delta, &zeta, var)?);
            if c.admits_alpha(settings.alpha) {
                if let (Some(u0), true) = (u0, model.is_schur(settings.delta)) {
                    let bounds = model.theoretical_bounds(settings.delta, horizon, u0)?;
                    let (per_round_slack, cumulative_slack) = bound_slack(&traces, &bounds)?;
                    bound_check = Some(BoundCheck {
                        bounds,
                        per_round_slack,
                        cumulative_slack,
                    });
                }
            }
        }
    }

    if settings.enforce {
        if let Some(report) = &lemma {
            report.verdict()?;
        }
        let tol = settings.tolerances.violation;
        if let Some((t, k, v, b)) = violation.first_excess(tol) {
            return Err(Error::InvariantViolation {
                round: t,
                message: format!("constraint violation component {k} is {v:e}, above the bound {b:e}"),
            });
        }
    }

    Ok(TrialResult {
        seed: 0,
        n_agents,
        rho,
        constants,
        traces,
        rel_err,
        zeta,
        variation,
        gamma,
        violation,
        lemma,
        comparison,
        bound_check,
        u0,
        positions,
        oracle_iterations,
        oracle_residual,
        warnings,
    })
}

/// Builds the scenario for `seed` and runs it.
pub fn run_trial(cfg: &ExperimentConfig, seed: u64, positions: bool) -> Result<TrialResult> {
    let scn = cfg.build_scenario(seed)?;
    let settings = RunSettings {
        positions,
        ..cfg.settings()
    };
    let mut r = run_scenario(&scn, &settings)?;
    r.seed = seed;
    Ok(r)
}

/// Scalar results of one trial for the summary.
#[derive(Clone, Debug, Serialize)]
pub struct TrialSummary {
    pub trial: usize,
    pub seed: u64,
    pub final_cost: f64,
    pub final_cum_regret: Option<f64>,
    pub final_avg_regret: Option<f64>,
    pub final_err_x: Option<f64>,
    pub final_rel_err: f64,
    pub max_tracking_s: f64,
    pub max_tracking_y: f64,
    pub max_violation: f64,
    pub gamma: Option<f64>,
    pub zeta_max: f64,
    pub lemma_min_slack: Option<[f64; 4]>,
    pub lemma_violations: Option<usize>,
    pub comparison_min_slack: Option<[f64; 3]>,
    pub lambda: Option<f64>,
    pub q: Option<f64>,
    pub u0: Option<f64>,
    pub average_regret_limit: Option<f64>,
    pub cumulative_regret_bound: Option<f64>,
    pub per_round_bound_min_slack: Option<f64>,
    pub cumulative_bound_min_slack: Option<f64>,
    pub oracle_max_iterations: usize,
    pub oracle_max_residual: f64,
    pub warnings: Vec<String>,
}

fn min_f(it: impl IntoIterator<Item = f64>) -> Option<f64> {
    it.into_iter().fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v))))
}

impl TrialResult {
    pub fn summary(&self, trial: usize) -> TrialSummary {
        let last = self.traces.last().expect("nonempty trace");
        let bc = self.bound_check.as_ref();
        TrialSummary {
            trial,
            seed: self.seed,
            final_cost: last.cost_alg,
            final_cum_regret: last.cum_regret,
            final_avg_regret: last.avg_regret,
            final_err_x: last.err_x,
            final_rel_err: *self.rel_err.last().expect("nonempty"),
            max_tracking_s: fold_max(self.traces.iter().map(|t| t.tracking_s)),
            max_tracking_y: fold_max(self.traces.iter().map(|t| t.tracking_y)),
            max_violation: self.violation.max_violation(),
            gamma: self.gamma,
            zeta_max: fold_max(self.zeta.iter().copied()),
            lemma_min_slack: self.lemma.as_ref().map(LemmaReport::min_slack),
            lemma_violations: self.lemma.as_ref().map(|l| l.violations.len()),
            comparison_min_slack: self.comparison.as_ref().map(|rows| {
                let mut m = [f64::INFINITY; 3];
                for r in rows {
                    for k in 0..3 {
                        m[k] = m[k].min(r[k]);
                    }
                }
                m
            }),
            lambda: bc.map(|b| b.bounds.lambda),
            q: bc.map(|b| b.bounds.q),
            u0: self.u0,
            average_regret_limit: bc.map(|b| b.bounds.average_limit),
            cumulative_regret_bound: bc.map(|b| b.bounds.cumulative),
            per_round_bound_min_slack: bc.and_then(|b| min_f(b.per_round_slack.iter().copied())),
            cumulative_bound_min_slack: bc.and_then(|b| min_f(b.cumulative_slack.iter().copied())),
            oracle_max_iterations: self.oracle_iterations,
            oracle_max_residual: self.oracle_residual,
            warnings: self.warnings.clone(),
        }
    }

    /// `R_t / t` for `t = 1..=T`.
    pub fn avg_regret_series(&self) -> Vec<f64> {
        self.traces.iter().filter_map(|t| t.avg_regret).collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FailedTrial {
    pub trial: usize,
    pub seed: u64,
    pub error: String,
    pub invariant: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct CampaignSummary {
    pub scenario: String,
    pub mode: Mode,
    pub horizon: usize,
    pub alpha: f64,
    pub delta: f64,
    pub n_agents: usize,
    pub rho: Option<f64>,
    pub constants: Option<ProblemConstants<f64>>,
    pub trials: usize,
    pub succeeded: usize,
    pub failed: Vec<FailedTrial>,
    /// Name of the averaged series in `montecarlo.csv`.
    pub series: String,
    pub series_final_mean: Option<f64>,
    pub series_final_std: Option<f64>,
    pub per_trial: Vec<TrialSummary>,
}

pub struct Campaign {
    pub summary: CampaignSummary,
    /// Mean/std of the campaign series and its first round index.
    pub stats: Option<(SeriesStats, usize)>,
    /// Full result of the lowest-indexed successful trial.
    pub first: Option<TrialResult>,
}

impl Campaign {
    /// First invariant failure across trials, if any.
    pub fn invariant_failure(&self) -> Option<&FailedTrial> {
        self.summary.failed.iter().find(|f| f.invariant)
    }
}

/// Series averaged across trials: `R_t/t` online, relative error in static mode.
pub fn campaign_series(mode: Mode) -> (&'static str, usize) {
    match mode {
        Mode::Online => ("avg_regret", 1),
        Mode::Static => ("rel_err", 0),
    }
}

/// Runs `cfg.trials` trials with seeds `cfg.seed + k`.
pub fn run_campaign(cfg: &ExperimentConfig) -> Result<Campaign> {
    let mc: MonteCarlo<TrialResult> = monte_carlo(cfg.trials, cfg.seed, |k, seed| run_trial(cfg, seed, k == 0 && cfg.positions))?;
    let (name, first_t) = campaign_series(cfg.mode);
    let series = |r: &TrialResult| match cfg.mode {
        Mode::Online => r.avg_regret_series(),
        Mode::Static => r.rel_err.clone(),
    };
    let stats = mc.stats(series).ok().map(|s| (s, first_t));
    let failed: Vec<FailedTrial> = mc
        .failures()
        .map(|(t, e)| FailedTrial {
            trial: t.trial,
            seed: t.seed,
            error: e.to_string(),
            invariant: e.is_invariant(),
        })
        .collect();
    if failed.len() == cfg.trials {
        if let Some((_, e)) = mc.failures().find(|(_, e)| !e.is_invariant()) {
            return Err(e.clone());
        }
    }
    let per_trial: Vec<TrialSummary> = mc.successes().map(|(t, r)| r.summary(t.trial)).collect();
    let first_ok = mc.successes().next().map(|(_, r)| r);
    let summary = CampaignSummary {
        scenario: scenario_name(&cfg.scenario).into(),
        mode: cfg.mode,
        horizon: cfg.horizon,
        alpha: cfg.alpha,
        delta: cfg.delta,
        n_agents: first_ok.map_or(0, |r| r.n_agents),
        rho: first_ok.map(|r| r.rho),
        constants: first_ok.and_then(|r| r.constants),
        trials: cfg.trials,
        succeeded: per_trial.len(),
        failed,
        series: name.into(),
        series_final_mean: stats.as_ref().and_then(|(s, _)| s.mean.last().copied()),
        series_final_std: stats.as_ref().and_then(|(s, _)| s.std.last().copied()),
        per_trial,
    };
    let first = mc.trials.into_iter().find_map(|t| t.result.ok());
    Ok(Campaign { summary, stats, first })
}

pub fn scenario_name(s: &ScenarioConfig) -> &'static str {
    match s {
        ScenarioConfig::Scalar => "scalar",
        ScenarioConfig::TwoAgent { .. } => "two_agent",
        ScenarioConfig::Quadratic(_) => "quadratic",
        ScenarioConfig::Surveillance(_) => "surveillance",
        ScenarioConfig::Basketball(_) => "basketball",
    }
}

/// Writes `t, kind, index, x, y` rows.
pub fn write_positions_csv<W: Write>(rows: &[PositionRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "kind", "index", "x", "y"])?;
    for r in rows {
        w.write_record([
            r.t.to_string(),
            r.kind.to_string(),
            r.index.to_string(),
            fmt_float(Some(r.x)),
            fmt_float(Some(r.y)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `trace.csv`, `montecarlo.csv`, `summary.json` and, when recorded,
/// `positions.csv` into `dir`.
pub fn write_campaign(dir: &std::path::Path, campaign: &Campaign) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    if let Some(first) = &campaign.first {
        write_trace_csv(&first.traces, std::io::BufWriter::new(std::fs::File::create(dir.join("trace.csv"))?))?;
        if !first.positions.is_empty() {
            write_positions_csv(
                &first.positions,
                std::io::BufWriter::new(std::fs::File::create(dir.join("positions.csv"))?),
            )?;
        }
    }
    if let Some((stats, first_t)) = &campaign.stats {
        write_stats_csv(
            &campaign.summary.series,
            *first_t,
            stats,
            std::io::BufWriter::new(std::fs::File::create(dir.join("montecarlo.csv"))?),
        )?;
    }
    let json = serde_json::to_string_pretty(&campaign.summary).expect("summary serializes");
    std::fs::write(dir.join("summary.json"), json + "\n")?;
    Ok(())
}

/// Stability certificate for a configuration: constants from the scenario,
/// `ρ` from its network, `ζ` from the oracle over the horizon and `U₀` from
/// the initial state.
#[derive(Clone, Debug, Serialize)]
pub struct Certificate {
    pub report: StabilityReport,
    /// `1 − δμα`, the first-order behaviour of `λ(δ)` near 0.
    pub first_order_lambda: f64,
    pub cumulative_regret_bound: Option<f64>,
}

impl Certificate {
    pub fn certified(&self) -> bool {
        self.report.certified()
    }
}

pub fn certify(cfg: &ExperimentConfig) -> Result<Certificate> {
    let scn = cfg.build_scenario(cfg.seed)?;
    let stream = &*scn.stream;
    let constants = stream.constants().ok_or(Error::MissingConstants)?;
    let rho = scn.network.rho();
    let n = scn.network.n_agents();
    let settings = cfg.settings();
    let opts = OracleOptions {
        max_iter: settings.oracle_max_iter,
        ..OracleOptions::new(scn.oracle_lipschitz)
            .with_tol(settings.oracle_tol)
            .with_method(settings.oracle_method.unwrap_or(scn.oracle_method))
    };
    let traj = solve_stream(stream, cfg.horizon + 1, &scn.x0, &opts)?;
    let declared = stream.declared_bounds().unwrap_or_default();
    let variation = variation_series(stream, cfg.horizon, Some(&declared)).unwrap_or_default();
    let bounds = VariationBounds {
        eta: fold_max(variation.iter().map(|m| m.eta)),
        omega: fold_max(variation.iter().map(|m| m.omega)),
        gamma: fold_max(variation.iter().map(|m| m.gamma)),
        zeta: Some(traj.zeta_max()),
    };
    let model = build_model_relaxed(&constants, &bounds, rho, cfg.alpha, n, cfg.coupling_form)?;
    let params = AlgorithmParams::new(cfg.alpha, cfg.delta, cfg.seed)?;
    let sim = SimulationRun::init(&scn.network, stream, params, scn.x0.clone(), SimOptions::default())?;
    let s: Vec<Vec<f64>> = sim.states().iter().map(|a| a.s.clone()).collect();
    let y: Vec<Vec<f64>> = sim.states().iter().map(|a| a.y.clone()).collect();
    let ex = crate::linalg::blocks_dist(&scn.x0, &traj.solutions[0].x_star);
    let u0 = norm(&[ex, crate::linalg::consensus_error(&s), crate::linalg::consensus_error(&y)]);
    let report = StabilityReport::new(&model, &bounds, cfg.delta, cfg.delta_target, Some(u0));
    let cumulative_regret_bound = (report.certified())
        .then(|| model.theoretical_bounds(cfg.delta, cfg.horizon, u0).ok().map(|b| b.cumulative))
        .flatten();
    Ok(Certificate {
        first_order_lambda: 1.0 - cfg.delta * constants.mu * cfg.alpha,
        report,
        cumulative_regret_bound,
    })
}

/// One cell of an `(α, δ)` sweep.
#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub delta: f64,
    pub lambda: Option<f64>,
    pub certified: bool,
    pub succeeded: usize,
    pub failed: usize,
    pub series_final_mean: Option<f64>,
    pub max_violation: Option<f64>,
}

pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let grid = cfg
        .sweep
        .clone()
        .ok_or_else(|| Error::InvalidConfig("sweep requires a \"sweep\" section with alpha and delta lists".into()))?;
    let mut rows = Vec::new();
    for &alpha in &grid.alpha {
        for &delta in &grid.delta {
            let cell = ExperimentConfig {
                alpha,
                delta,
                positions: false,
                sweep: None,
                ..cfg.clone()
            };
            cell.validate()?;
            let cert = certify(&cell).ok();
            let camp = run_campaign(&cell)?;
            rows.push(SweepRow {
                alpha,
                delta,
                lambda: cert.as_ref().map(|c| c.report.configured_lambda),
                certified: cert.as_ref().is_some_and(Certificate::certified),
                succeeded: camp.summary.succeeded,
                failed: camp.summary.failed.len(),
                series_final_mean: camp.summary.series_final_mean,
                max_violation: camp
                    .summary
                    .per_trial
                    .iter()
                    .map(|t| t.max_violation)
                    .reduce(f64::max),
            });
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "alpha",
        "delta",
        "lambda",
        "certified",
        "succeeded",
        "failed",
        "series_final_mean",
        "max_violation",
    ])?;
    for r in rows {
        w.write_record([
            fmt_float(Some(r.alpha)),
            fmt_float(Some(r.delta)),
            fmt_float(r.lambda),
            r.certified.to_string(),
            r.succeeded.to_string(),
            r.failed.to_string(),
            fmt_float(r.series_final_mean),
            fmt_float(r.max_violation),
        ])?;
    }
    w.flush()?;
    Ok(())
}
