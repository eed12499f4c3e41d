//! Command-line front end.
//!
//! Every command loads a scenario, runs one operation on a dedicated rayon
//! pool and writes `<out>/<command>.json` (plus CSV where defined). The
//! echoed configuration leaves out the worker count and output directory so
//! reports are byte-identical across worker counts.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::envspec::{sample_environment, validate_spec, EnvironmentSpec, ValidationReport};
use crate::error::{Error, Result};
use crate::limits::{
    self, limit_probe, lp_sweep, quenched_mean_check, MeanCheckConfig, MeanMode, ProbeConfig, SweepConfig,
};
use crate::ranmat::{
    self, check_conditions, choose_horizon, forward_directions, kappa_estimate, lyapunov_estimate, perron,
    uniform_vector, KappaMode, KappaReport, PerronTriple,
};
use crate::rng::{self, domain};
use crate::sim::{self, decompose_trajectory, simulate_trajectory, ImmigrationMode, TagMode};

pub const DEFAULT_SEED: u64 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Parser)]
#[command(name = "mbprei", version, about = "Multi-type branching processes with immigration in random environments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub config: RunConfig,
}

#[derive(Debug, Clone, Args)]
pub struct Target {
    /// Scenario file (alternative to --scenario).
    #[arg(value_name = "SCENARIO")]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a scenario file against the model invariants.
    Validate(Target),
    /// Simulate one tagged trajectory.
    Simulate(Target),
    /// Certified horizon and direction table along one environment.
    Directions(Target),
    /// Lyapunov exponent of the mean-matrix products.
    EstimateGamma(Target),
    /// Moment-Lyapunov function at s.
    EstimateKappa(Target),
    /// Conditions on the mean matrices, offspring and immigration laws.
    CheckConditions(Target),
    /// Monte Carlo check of the exact mean formula of W_n.
    CheckMean(Target),
    /// E(W_n)^p along n, with the predicted verdict.
    SweepLp(Target),
    /// Survival, mean and median of the martingale without immigration.
    ProbeLimit(Target),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Validate(_) => "validate",
            Command::Simulate(_) => "simulate",
            Command::Directions(_) => "directions",
            Command::EstimateGamma(_) => "estimate-gamma",
            Command::EstimateKappa(_) => "estimate-kappa",
            Command::CheckConditions(_) => "check-conditions",
            Command::CheckMean(_) => "check-mean",
            Command::SweepLp(_) => "sweep-lp",
            Command::ProbeLimit(_) => "probe-limit",
        }
    }

    fn target(&self) -> &Target {
        match self {
            Command::Validate(t)
            | Command::Simulate(t)
            | Command::Directions(t)
            | Command::EstimateGamma(t)
            | Command::EstimateKappa(t)
            | Command::CheckConditions(t)
            | Command::CheckMean(t)
            | Command::SweepLp(t)
            | Command::ProbeLimit(t) => t,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunConfig {
    #[arg(long, global = true, value_name = "PATH")]
    pub scenario: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub reps: Option<usize>,
    #[arg(long, global = true)]
    pub n: Option<usize>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub n_list: Option<Vec<usize>>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub p: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub s: Option<f64>,
    #[arg(long, global = true)]
    pub eps: Option<f64>,
    #[arg(long, global = true, default_value_t = ranmat::DEFAULT_HORIZON_CAP)]
    pub horizon_cap: usize,
    /// Direction tolerance certified by the horizon search.
    #[arg(long, global = true, default_value_t = ranmat::DIRECTION_TOL)]
    pub tol: f64,
    #[arg(long, global = true, env = "MBPREI_WORKERS", default_value_t = 1)]
    pub workers: usize,
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Type of the initial ancestor (0-based).
    #[arg(long, global = true, default_value_t = 0)]
    pub initial_type: usize,
    /// check-mean mode: quenched-xiY, quenched-xi or annealed.
    #[arg(long, global = true)]
    pub mode: Option<String>,
    /// Fixed environment prefix as comma-separated state indices.
    #[arg(long, global = true, value_delimiter = ',')]
    pub environment: Option<Vec<usize>>,
    #[arg(long, global = true)]
    pub no_immigration: bool,
    /// estimate-kappa: average over all environment words instead of sampling.
    #[arg(long, global = true)]
    pub enumerate: bool,
    #[arg(long, global = true, default_value_t = 1 << 24)]
    pub max_words: u64,
}

/// The part of the configuration that determines the results.
#[derive(Debug, Serialize)]
struct Echo<'a> {
    scenario: String,
    seed: u64,
    reps: Option<usize>,
    n: Option<usize>,
    n_list: Option<&'a [usize]>,
    p: Option<f64>,
    s: Option<f64>,
    eps: Option<f64>,
    horizon_cap: usize,
    tol: f64,
    initial_type: usize,
    mode: Option<&'a str>,
    environment: Option<&'a [usize]>,
    immigration: bool,
    enumerate: bool,
    max_words: u64,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    command: &'a str,
    config: Echo<'a>,
    result: T,
}

/// What a command hands back to the dispatcher.
struct Outcome {
    json: serde_json::Value,
    csv: Option<Vec<u8>>,
    summary: String,
    passed: bool,
}

impl Outcome {
    fn new<T: Serialize>(result: &T, summary: String) -> Result<Self> {
        Ok(Self { json: serde_json::to_value(result)?, csv: None, summary, passed: true })
    }
}

/// Parses `args` (including the program name), runs the command and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_FAILURE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_FAILURE
            }
        }
    }
}

fn scenario_path(cli: &Cli) -> Result<&Path> {
    cli.command
        .target()
        .path
        .as_deref()
        .or(cli.config.scenario.as_deref())
        .ok_or_else(|| Error::InvalidArgument("no scenario given (positional or --scenario)".into()))
}

fn execute(cli: &Cli) -> Result<i32> {
    let cfg = &cli.config;
    if cfg.workers == 0 {
        return Err(Error::InvalidArgument("--workers must be at least 1".into()));
    }
    if cfg.reps == Some(0) {
        return Err(Error::InvalidArgument("--reps must be at least 1".into()));
    }
    let path = scenario_path(cli)?;
    let spec = EnvironmentSpec::from_path(path)?;
    let seed = cfg.seed.unwrap_or_else(|| {
        eprintln!("warning: no --seed given; using the default seed {DEFAULT_SEED}, which every unseeded run shares");
        DEFAULT_SEED
    });
    let name = cli.command.name();
    let report = validate_spec(&spec);
    let outcome = if let Command::Validate(_) = cli.command {
        validate_outcome(&report)?
    } else if !report.is_valid() {
        for v in &report.violations {
            eprintln!("invalid scenario: {v}");
        }
        return Ok(EXIT_FAILURE);
    } else {
        let spec = Arc::new(spec);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        pool.install(|| dispatch(&cli.command, cfg, &spec, seed))?
    };

    let echo = Echo {
        scenario: path.display().to_string(),
        seed,
        reps: cfg.reps,
        n: cfg.n,
        n_list: cfg.n_list.as_deref(),
        p: cfg.p,
        s: cfg.s,
        eps: cfg.eps,
        horizon_cap: cfg.horizon_cap,
        tol: cfg.tol,
        initial_type: cfg.initial_type,
        mode: cfg.mode.as_deref(),
        environment: cfg.environment.as_deref(),
        immigration: !cfg.no_immigration,
        enumerate: cfg.enumerate,
        max_words: cfg.max_words,
    };
    fs::create_dir_all(&cfg.out)?;
    let envelope = Envelope { command: name, config: echo, result: outcome.json };
    let mut text = serde_json::to_string_pretty(&envelope)?;
    text.push('\n');
    fs::write(cfg.out.join(format!("{name}.json")), text)?;
    if let Some(csv) = outcome.csv {
        fs::write(cfg.out.join(format!("{name}.csv")), csv)?;
    }
    println!("{name}: {}", outcome.summary);
    Ok(if outcome.passed { EXIT_OK } else { EXIT_FAILURE })
}

fn validate_outcome(report: &ValidationReport) -> Result<Outcome> {
    for v in &report.violations {
        eprintln!("violation: {v}");
    }
    let mut o = Outcome::new(
        report,
        if report.is_valid() {
            "scenario is valid".to_string()
        } else {
            format!("{} violation(s)", report.violations.len())
        },
    )?;
    o.passed = report.is_valid();
    Ok(o)
}

fn margin(spec: &Arc<EnvironmentSpec>, cfg: &RunConfig, seed: u64) -> Result<usize> {
    Ok(choose_horizon(spec, cfg.tol, cfg.horizon_cap, seed)?.horizon)
}

fn dispatch(command: &Command, cfg: &RunConfig, spec: &Arc<EnvironmentSpec>, seed: u64) -> Result<Outcome> {
    match command {
        Command::Validate(_) => unreachable!("handled before dispatch"),
        Command::Simulate(_) => simulate(cfg, spec, seed),
        Command::Directions(_) => directions(cfg, spec, seed),
        Command::EstimateGamma(_) => {
            let n = cfg.n.unwrap_or(1000);
            let reps = cfg.reps.unwrap_or(200);
            let r = lyapunov_estimate(spec, n, reps, seed)?;
            let summary = format!(
                "gamma_hat = {:.6} (se {:.2e}), cross-check {:.6}, {}",
                r.gamma_hat, r.std_error, r.cross_check, r.classification
            );
            Outcome::new(&r, summary)
        }
        Command::EstimateKappa(_) => estimate_kappa(cfg, spec, seed),
        Command::CheckConditions(_) => {
            let p_list: Vec<f64> = cfg.p.map_or_else(|| vec![2.0], |p| vec![p]);
            let r = check_conditions(spec, &p_list);
            let summary = format!(
                "H1 {}, H2 {}, H3 {}, H4 {}",
                if r.h1.is_finite() { "finite" } else { "infinite" },
                if r.h2 { "holds" } else { "fails" },
                if r.h3.holds() { "holds" } else { "fails" },
                if r.h4_holds { "finite" } else { "infinite" },
            );
            Outcome::new(&r, summary)
        }
        Command::CheckMean(_) => {
            let mode: MeanMode = cfg.mode.as_deref().unwrap_or("quenched-xi").parse()?;
            let mut mc =
                MeanCheckConfig::new(mode, cfg.initial_type, cfg.n.unwrap_or(10), cfg.reps.unwrap_or(10_000), seed);
            mc.margin = margin(spec, cfg, seed)?;
            mc.immigration = !cfg.no_immigration;
            mc.environment = cfg.environment.clone();
            let r = quenched_mean_check(spec, &mc)?;
            let summary = format!(
                "{} n={} formula {:.10} MC mean {:.10} (se {:.2e}) {}",
                r.mode,
                r.n,
                r.formula,
                r.mc_mean,
                r.std_error,
                if r.pass { "pass" } else { "FAIL" }
            );
            let mut o = Outcome::new(&r, summary)?;
            o.passed = r.pass;
            Ok(o)
        }
        Command::SweepLp(_) => {
            let sc = SweepConfig {
                initial_type: cfg.initial_type,
                p: cfg.p.unwrap_or(2.0),
                n_list: cfg.n_list.clone().unwrap_or_else(|| vec![5, 10, 15, 20]),
                reps: cfg.reps.unwrap_or(10_000),
                seed,
                margin: margin(spec, cfg, seed)?,
                immigration: !cfg.no_immigration,
            };
            let r = lp_sweep(spec, &sc)?;
            let mut csv = Vec::new();
            limits::write_lp_csv(&r, &mut csv)?;
            let summary = format!(
                "p={} predicted {}, observed {}{}",
                r.p,
                r.predicted,
                if r.observed_bounded { "bounded" } else { "growing" },
                if r.disagreement { " (disagreement)" } else { "" }
            );
            let mut o = Outcome::new(&r, summary)?;
            o.csv = Some(csv);
            Ok(o)
        }
        Command::ProbeLimit(_) => {
            let pc = ProbeConfig {
                initial_type: cfg.initial_type,
                n_list: cfg.n_list.clone().unwrap_or_else(|| limits::DEFAULT_N_LIST.to_vec()),
                reps: cfg.reps.unwrap_or(10_000),
                seed,
                eps: cfg.eps.unwrap_or(limits::DEFAULT_EPS),
                margin: margin(spec, cfg, seed)?,
            };
            let r = limit_probe(spec, &pc)?;
            let summary = format!(
                "{} (diagnostic), sup proxy {:.4}, medians {:?}",
                r.trend,
                r.sup_mean,
                r.points.iter().map(|q| q.median).collect::<Vec<_>>()
            );
            Outcome::new(&r, summary)
        }
    }
}

#[derive(Serialize)]
struct SimulateReport {
    environment: Vec<usize>,
    immigration: Vec<sim::PopulationVector>,
    totals: Vec<sim::PopulationVector>,
    conserved: bool,
    rows: Vec<sim::TrajectoryRow>,
}

fn simulate(cfg: &RunConfig, spec: &Arc<EnvironmentSpec>, seed: u64) -> Result<Outcome> {
    let n = cfg.n.unwrap_or(10);
    let env = match &cfg.environment {
        Some(prefix) => {
            let mut idx = prefix.clone();
            if idx.len() < n {
                let tail = sample_environment(spec, n - idx.len(), rng::derive_seed(seed, domain::ENVIRONMENT, 0))?;
                idx.extend(tail.indices);
            }
            crate::envspec::EnvironmentSequence::from_indices(Arc::clone(spec), idx)?
        }
        None => sample_environment(spec, n.max(1), rng::derive_seed(seed, domain::ENVIRONMENT, 0))?,
    };
    let mode = if cfg.no_immigration { ImmigrationMode::Disabled } else { ImmigrationMode::Sampled };
    let traj = simulate_trajectory(
        &env,
        cfg.initial_type,
        n,
        rng::derive_seed(seed, domain::TRAJECTORY, 0),
        &mode,
        TagMode::PerImmigrant,
    )?;
    let dec = decompose_trajectory(&traj)?;
    let report = SimulateReport {
        environment: env.indices[..n].to_vec(),
        immigration: traj.immigration.clone(),
        totals: traj.totals(),
        conserved: dec.conserved,
        rows: sim::trajectory_rows(&traj),
    };
    let summary =
        format!("{n} generations, final total {:?}, conserved {}", traj.generations[n].total.0, dec.conserved);
    let mut o = Outcome::new(&report, summary)?;
    if cfg.format == Format::Csv {
        let mut csv = Vec::new();
        sim::write_trajectory_csv(&traj, &mut csv)?;
        o.csv = Some(csv);
    }
    o.passed = dec.conserved;
    Ok(o)
}

#[derive(Serialize)]
struct StatePerron {
    state: usize,
    perron: Option<PerronTriple>,
    error: Option<String>,
}

#[derive(Serialize)]
struct DirectionsReport {
    horizon: ranmat::HorizonReport,
    environment: Vec<usize>,
    table: ranmat::DirectionTable,
    residual: f64,
    bracketed: bool,
    perron: Vec<StatePerron>,
}

fn directions(cfg: &RunConfig, spec: &Arc<EnvironmentSpec>, seed: u64) -> Result<Outcome> {
    let h = choose_horizon(spec, cfg.tol, cfg.horizon_cap, seed)?;
    let n = cfg.n.unwrap_or(10);
    let env = sample_environment(spec, n + h.horizon, rng::derive_seed(seed, domain::ENVIRONMENT, 0))?;
    let table = forward_directions(&env.mean_matrices()?, &uniform_vector(spec.d))?;
    let perron = spec
        .mean_matrices()?
        .iter()
        .enumerate()
        .map(|(state, m)| match perron(m, ranmat::PERRON_TOL, ranmat::PERRON_MAX_ITERS) {
            Ok(t) => StatePerron { state, perron: Some(t), error: None },
            Err(e) => StatePerron { state, perron: None, error: Some(e.to_string()) },
        })
        .collect();
    let report = DirectionsReport {
        residual: table.residual(),
        bracketed: table.bracketed(),
        horizon: h,
        environment: env.indices.clone(),
        table,
        perron,
    };
    let summary = format!(
        "certified horizon {} (contraction {:.3e}), residual {:.2e}",
        report.horizon.horizon, report.horizon.contraction_factor, report.residual
    );
    Outcome::new(&report, summary)
}

fn kappa_csv(r: &KappaReport) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(["n", "estimate", "ci_low", "ci_high"])?;
        for q in &r.points {
            w.write_record([q.n.to_string(), q.estimate.to_string(), q.ci_low.to_string(), q.ci_high.to_string()])?;
        }
        w.flush()?;
    }
    Ok(buf)
}

fn estimate_kappa(cfg: &RunConfig, spec: &Arc<EnvironmentSpec>, seed: u64) -> Result<Outcome> {
    let s = cfg.s.unwrap_or(-1.0);
    let n_list = match (&cfg.n_list, cfg.n) {
        (Some(list), _) => list.clone(),
        (None, Some(n)) => vec![n],
        (None, None) => vec![12],
    };
    let mode = if cfg.enumerate {
        KappaMode::Enumerate { max_words: cfg.max_words }
    } else {
        KappaMode::MonteCarlo { reps: cfg.reps.unwrap_or(10_000) }
    };
    let r = kappa_estimate(spec, s, &n_list, mode, seed)?;
    let summary = format!(
        "kappa({s}) = {:.6} [{:.6}, {:.6}] at n = {}",
        r.kappa_hat,
        r.ci_low,
        r.ci_high,
        r.points.last().map_or(0, |q| q.n)
    );
    let mut o = Outcome::new(&r, summary)?;
    if cfg.format == Format::Csv {
        o.csv = Some(kappa_csv(&r)?);
    }
    Ok(o)
}
