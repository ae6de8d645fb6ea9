//! `aggtrack`: run scenarios and Monte Carlo campaigns, certify step sizes,
//! sweep `(α, δ)` grids and replay earlier runs from their manifest.
//!
//! Exit codes: 0 success, 1 bad configuration or I/O, 2 invariant violation,
//! 3 configuration not certified (`certify` only).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use aggtrack::experiment::{
    certify, run_campaign, run_sweep, write_campaign, write_sweep_csv, Campaign, Certificate, ExperimentConfig, Mode,
};
use aggtrack::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

const EXIT_CONFIG: u8 = 1;
const EXIT_INVARIANT: u8 = 2;
const EXIT_NOT_CERTIFIED: u8 = 3;

#[derive(Parser)]
#[command(name = "aggtrack", version, about = "Distributed online aggregative optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario (oracle, algorithm, metrics) over one or more trials.
    Run(CommonArgs),
    /// Report constants, the δ search and the bound constants; exit 3 when the
    /// configured (α, δ) is not certified.
    Certify(CommonArgs),
    /// Run every (α, δ) pair of the config's "sweep" grid.
    Sweep(CommonArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Args, Clone, Debug)]
struct CommonArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Base seed; trial k uses seed + k.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Only print errors.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args, Clone, Debug)]
struct ReplayArgs {
    /// A manifest.json written by an earlier run.
    manifest: PathBuf,
    /// Write to this directory instead of the recorded one.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Online,
    Static,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Kind {
    Run,
    Certify,
    Sweep,
}

/// Written next to every output; enough to regenerate the outputs.
#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    command: Kind,
    config_path: PathBuf,
    /// The effective config, command-line overrides applied.
    config: ExperimentConfig,
    seed: u64,
    out_dir: PathBuf,
    version: String,
    wall_clock_seconds: f64,
    exit_status: u8,
}

/// A failed command and its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_invariant() { EXIT_INVARIANT } else { EXIT_CONFIG };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

struct Output {
    quiet: bool,
}

impl Output {
    fn line(&self, s: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", s.as_ref());
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("AGGTRACK_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::config(format!("AGGTRACK_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::config(format!("cannot size the worker pool: {e}")))
}

fn load_config(args: &CommonArgs) -> Result<ExperimentConfig, Failure> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| Failure::config(format!("cannot read {}: {e}", args.config.display())))?;
    let mut cfg = ExperimentConfig::from_json(&text)
        .map_err(|e| Failure::config(format!("{}: {e}", args.config.display())))?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = args.trials {
        cfg.trials = trials;
    }
    if let Some(mode) = args.mode {
        cfg.mode = match mode {
            ModeArg::Online => Mode::Online,
            ModeArg::Static => Mode::Static,
        };
    }
    cfg.validate()
        .map_err(|e| Failure::config(format!("{}: {e}", args.config.display())))?;
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::config(format!("cannot write {}: {e}", path.display())))
}

fn prepare_dir(dir: &Path, cfg: &ExperimentConfig) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::config(format!("cannot create {}: {e}", dir.display())))?;
    write_text(&dir.join("config.json"), &(cfg.to_json() + "\n"))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.6e}"))
}

fn cmd_run(cfg: &ExperimentConfig, out_dir: &Path, out: &Output) -> Result<(), Failure> {
    prepare_dir(out_dir, cfg)?;
    let campaign: Campaign = run_campaign(cfg)?;
    write_campaign(out_dir, &campaign)?;
    let s = &campaign.summary;
    out.line(format!(
        "{} ({:?}) N={} T={} alpha={} delta={}",
        s.scenario, s.mode, s.n_agents, s.horizon, s.alpha, s.delta
    ));
    if let Some(c) = s.constants {
        out.line(format!(
            "constants: mu={:.6e} L1={:.6e} L2={:.6e} L3={:.6e} rho={}",
            c.mu,
            c.l1,
            c.l2,
            c.l3,
            fmt_opt(s.rho)
        ));
    }
    out.line(format!("trials: {} ok, {} failed", s.succeeded, s.failed.len()));
    out.line(format!(
        "{} at T: mean {} std {}",
        s.series,
        fmt_opt(s.series_final_mean),
        fmt_opt(s.series_final_std)
    ));
    if let Some(first) = s.per_trial.first() {
        for w in &first.warnings {
            if !out.quiet {
                eprintln!("warning: {w}");
            }
        }
    }
    out.line(format!("outputs written to {}", out_dir.display()));
    for f in &s.failed {
        eprintln!("trial {} (seed {}) failed: {}", f.trial, f.seed, f.error);
    }
    if let Some(f) = campaign.invariant_failure() {
        return Err(Failure {
            code: EXIT_INVARIANT,
            message: format!("invariant violated in trial {} (seed {}): {}", f.trial, f.seed, f.error),
        });
    }
    if s.succeeded == 0 {
        return Err(Failure::config("every trial failed"));
    }
    Ok(())
}

fn print_certificate(cert: &Certificate, out: &Output) {
    let r = &cert.report;
    let c = r.constants;
    out.line(format!("rho = {:.12e}", r.rho));
    out.line(format!(
        "mu = {:.12e}, L1 = {:.12e}, L2 = {:.12e}, L3 = {:.12e} ({})",
        c.mu,
        c.l1,
        c.l2,
        c.l3,
        if c.exact { "exact" } else { "estimated" }
    ));
    out.line(format!(
        "eta = {:.6e}, omega = {:.6e}, gamma = {:.6e}, zeta = {}",
        r.bounds.eta,
        r.bounds.omega,
        r.bounds.gamma,
        fmt_opt(r.bounds.zeta)
    ));
    out.line(format!(
        "alpha = {} ({} 1/L1 = {:.12e})",
        r.alpha,
        if r.alpha_admissible { "<=" } else { ">" },
        1.0 / c.l1
    ));
    match (r.search_delta, r.search_lambda, &r.search_error) {
        (Some(d), Some(l), _) => out.line(format!("delta search ({:?}): delta = {d:.8e}, lambda = {l:.12e}", r.search_target)),
        (_, _, Some(e)) => out.line(format!("delta search failed: {e}")),
        _ => {}
    }
    out.line(format!(
        "configured delta = {}: lambda = {:.12e} ({}), first-order 1 - delta*mu*alpha = {:.12e}",
        r.configured_delta,
        r.configured_lambda,
        if r.configured_schur { "Schur" } else { "not Schur" },
        cert.first_order_lambda
    ));
    out.line(format!("U0 = {}, Q = {:.12e}", fmt_opt(r.u0), r.q));
    out.line(format!(
        "average regret limit = {}, cumulative regret bound = {}",
        fmt_opt(r.average_regret_limit),
        fmt_opt(cert.cumulative_regret_bound)
    ));
    out.line(if cert.certified() { "certified" } else { "NOT certified" });
}

fn cmd_certify(cfg: &ExperimentConfig, out_dir: Option<&Path>, out: &Output) -> Result<(), Failure> {
    let cert = certify(cfg).map_err(|e| match e {
        Error::MissingConstants => Failure::config("certify needs a scenario with known constants"),
        other => Failure::from(other),
    })?;
    print_certificate(&cert, out);
    if let Some(dir) = out_dir {
        prepare_dir(dir, cfg)?;
        let json = serde_json::to_string_pretty(&cert).expect("certificate serializes");
        write_text(&dir.join("certificate.json"), &(json + "\n"))?;
    }
    if !cert.certified() {
        let r = &cert.report;
        let why = if r.alpha_admissible {
            format!(
                "delta = {} gives lambda = {:.12e} >= 1",
                r.configured_delta, r.configured_lambda
            )
        } else {
            format!("alpha = {} exceeds 1/L1 = {:.12e}", r.alpha, 1.0 / r.constants.l1)
        };
        return Err(Failure {
            code: EXIT_NOT_CERTIFIED,
            message: format!("not certified: {why}"),
        });
    }
    Ok(())
}

fn cmd_sweep(cfg: &ExperimentConfig, out_dir: &Path, out: &Output) -> Result<(), Failure> {
    prepare_dir(out_dir, cfg)?;
    let rows = run_sweep(cfg)?;
    let path = out_dir.join("sweep.csv");
    let file = fs::File::create(&path).map_err(|e| Failure::config(format!("cannot write {}: {e}", path.display())))?;
    write_sweep_csv(&rows, std::io::BufWriter::new(file))?;
    for r in &rows {
        out.line(format!(
            "alpha={} delta={} lambda={} certified={} final={}",
            r.alpha,
            r.delta,
            fmt_opt(r.lambda),
            r.certified,
            fmt_opt(r.series_final_mean)
        ));
    }
    out.line(format!("outputs written to {}", out_dir.display()));
    Ok(())
}

fn default_out() -> PathBuf {
    PathBuf::from("aggtrack-out")
}

/// Runs `kind` and records a manifest in the output directory, if any.
fn execute(kind: Kind, cfg: ExperimentConfig, config_path: PathBuf, out_dir: Option<PathBuf>, quiet: bool) -> u8 {
    let started = Instant::now();
    let out = Output { quiet };
    let result = match kind {
        Kind::Run => cmd_run(&cfg, out_dir.as_deref().expect("run has an output dir"), &out),
        Kind::Certify => cmd_certify(&cfg, out_dir.as_deref(), &out),
        Kind::Sweep => cmd_sweep(&cfg, out_dir.as_deref().expect("sweep has an output dir"), &out),
    };
    let code = match &result {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    };
    if let Some(dir) = out_dir.filter(|d| d.is_dir()) {
        let manifest = Manifest {
            command: kind,
            config_path,
            seed: cfg.seed,
            config: cfg,
            out_dir: dir.clone(),
            version: env!("CARGO_PKG_VERSION").into(),
            wall_clock_seconds: started.elapsed().as_secs_f64(),
            exit_status: code,
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        if let Err(e) = fs::write(dir.join("manifest.json"), json + "\n") {
            eprintln!("error: cannot write manifest: {e}");
            return code.max(EXIT_CONFIG);
        }
    }
    code
}

fn main_code() -> u8 {
    let cli = Cli::parse();
    if let Err(f) = configure_threads() {
        eprintln!("error: {}", f.message);
        return f.code;
    }
    match cli.command {
        Command::Replay(args) => {
            let text = match fs::read_to_string(&args.manifest) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: cannot read {}: {e}", args.manifest.display());
                    return EXIT_CONFIG;
                }
            };
            let manifest: Manifest = match serde_json::from_str(&text) {
                Ok(m) => m,
                Err(e) => {
                    eprintln!(
                        "error: {}: line {} column {}: {e}",
                        args.manifest.display(),
                        e.line(),
                        e.column()
                    );
                    return EXIT_CONFIG;
                }
            };
            if let Err(e) = manifest.config.validate() {
                eprintln!("error: {}: {e}", args.manifest.display());
                return EXIT_CONFIG;
            }
            let out_dir = args.out.unwrap_or(manifest.out_dir);
            execute(manifest.command, manifest.config, manifest.config_path, Some(out_dir), args.quiet)
        }
        Command::Run(args) => fresh(Kind::Run, args),
        Command::Certify(args) => fresh(Kind::Certify, args),
        Command::Sweep(args) => fresh(Kind::Sweep, args),
    }
}

fn fresh(kind: Kind, args: CommonArgs) -> u8 {
    let cfg = match load_config(&args) {
        Ok(c) => c,
        Err(f) => {
            eprintln!("error: {}", f.message);
            return f.code;
        }
    };
    let out_dir = match kind {
        Kind::Certify => args.out,
        _ => Some(args.out.unwrap_or_else(default_out)),
    };
    execute(kind, cfg, args.config, out_dir, args.quiet)
}

fn main() -> ExitCode {
    ExitCode::from(main_code())
}
