//! Normalized processes `W_n`, `W~_n` and the checks built on them: exact
//! quenched mean formulas, the immigrant decomposition, L^p sweeps and
//! non-degeneracy probes.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::envspec::{sample_environment, EnvironmentSequence, EnvironmentSpec};
use crate::error::{Error, Result};
use crate::ranmat::{
    check_conditions, forward_directions, in_interval, kappa_auto, lyapunov_estimate, uniform_vector, Criticality,
    DirectionTable, EnvelopeStatus, KappaReport,
};
use crate::rng::{self, domain};
use crate::sim::{
    decompose_trajectory, simulate_trajectory, ImmigrationMode, OriginTag, PopulationVector, TagMode, Trajectory,
};
use crate::stats::{self, median, MeanEstimate};

/// Relative tolerance of the decomposition identity.
pub const DECOMPOSITION_TOL: f64 = 1e-10;
/// Absolute slack added to the 4-SE band, relative to the formula value.
pub const MEAN_CHECK_FLOOR: f64 = 1e-12;
pub const DEFAULT_EPS: f64 = 1e-6;
pub const DEFAULT_N_LIST: [usize; 3] = [5, 10, 20];
/// Observed boundedness: spread over the top half of `n_list` below this many CI widths.
pub const BOUNDED_CI_WIDTHS: f64 = 3.0;
/// Relative median decline separating a real trend from noise.
pub const TREND_THRESHOLD: f64 = 0.05;
/// Generations used for precondition estimates of `kappa`.
pub const KAPPA_PRECHECK_N: usize = 12;
pub const KAPPA_PRECHECK_REPS: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub arrival: usize,
    pub kind: usize,
    pub index: u64,
    /// `W~_{n-k-1}` of the immigrant's own line.
    pub subtree: f64,
    /// `U_{k+1}(r) / (lambda_{0,k} U_0(i))`.
    pub weight: f64,
}

impl Contribution {
    pub fn value(&self) -> f64 {
        self.subtree * self.weight
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleSeries {
    pub initial_type: usize,
    pub horizon: usize,
    pub w: Vec<f64>,
    pub w_tilde: Vec<f64>,
    /// Per generation, one entry per immigrant line alive at that generation.
    pub contributions: Vec<Vec<Contribution>>,
}

fn check_table(traj: &Trajectory, dirs: &DirectionTable) -> Result<()> {
    if dirs.horizon < traj.len() {
        return Err(Error::HorizonTooShort { required: traj.len(), available: dirs.horizon });
    }
    if dirs.dim() != traj.dim() {
        return Err(Error::DimensionMismatch { expected: traj.dim(), found: dirs.dim() });
    }
    Ok(())
}

/// `W_n = <X_n, U_n> / (lambda_{0,n-1} U_0(i))` and the same for the initial line.
pub fn normalized_series(traj: &Trajectory, dirs: &DirectionTable) -> Result<MartingaleSeries> {
    check_table(traj, dirs)?;
    let i = traj.initial_type;
    let u0 = dirs.u_hat[0][i];
    let mut w = Vec::with_capacity(traj.len() + 1);
    let mut w_tilde = Vec::with_capacity(traj.len() + 1);
    let mut contributions = Vec::with_capacity(traj.len() + 1);
    for (n, g) in traj.generations.iter().enumerate() {
        let u = &dirs.u_hat[n];
        let denom = dirs.lambda_cum(n) * u0;
        w.push(g.total.dot(u) / denom);
        w_tilde.push(g.initial().dot(u) / denom);
        let mut row = Vec::new();
        for (tag, pop) in &g.components {
            if let OriginTag::Immigrant { arrival: k, kind: r, index } = *tag {
                let start = dirs.u_hat[k + 1][r];
                row.push(Contribution {
                    arrival: k,
                    kind: r,
                    index,
                    subtree: pop.dot(u) / (dirs.lambda_prod(k + 1, n as isize - 1) * start),
                    weight: start / (dirs.lambda_cum(k + 1) * u0),
                });
            }
        }
        contributions.push(row);
    }
    Ok(MartingaleSeries { initial_type: i, horizon: dirs.horizon, w, w_tilde, contributions })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    /// Integer identity `X_n = Z_n + sum_k Zhat_k` at every generation.
    pub integer_identity: bool,
    /// `|W_n - W~_n - sum of contributions| / W_n` per generation.
    pub relative_residuals: Vec<f64>,
    pub max_relative_residual: f64,
    pub tol: f64,
    pub pass: bool,
}

pub fn decomposition_identity_check(traj: &Trajectory, dirs: &DirectionTable) -> Result<DecompositionReport> {
    let dec = decompose_trajectory(traj)?;
    let series = normalized_series(traj, dirs)?;
    let relative_residuals: Vec<f64> = series
        .w
        .iter()
        .zip(&series.w_tilde)
        .zip(&series.contributions)
        .map(|((&w, &wt), cs)| {
            let rhs = wt + cs.iter().map(Contribution::value).sum::<f64>();
            if w == 0.0 {
                rhs.abs()
            } else {
                (w - rhs).abs() / w
            }
        })
        .collect();
    let max_relative_residual = relative_residuals.iter().copied().fold(0.0, f64::max);
    Ok(DecompositionReport {
        integer_identity: dec.conserved,
        max_relative_residual,
        pass: dec.conserved && max_relative_residual <= DECOMPOSITION_TOL,
        relative_residuals,
        tol: DECOMPOSITION_TOL,
    })
}

/// `1 + sum_{k<m} <y_k, U_{k+1}> / (lambda_{0,k} U_0(i))` for `m = 0..=n`.
pub fn mean_formula_partial_sums(dirs: &DirectionTable, ys: &[Vec<f64>], i: usize, n: usize) -> Vec<f64> {
    let u0 = dirs.u_hat[0][i];
    let mut acc = 1.0;
    let mut out = Vec::with_capacity(n + 1);
    out.push(acc);
    for (k, y) in ys.iter().enumerate().take(n) {
        let dot: f64 = y.iter().zip(&dirs.u_hat[k + 1]).map(|(a, b)| a * b).sum();
        acc += dot / (dirs.lambda_cum(k + 1) * u0);
        out.push(acc);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeanMode {
    /// Environment and immigration realization fixed.
    #[serde(rename = "quenched-xiY")]
    QuenchedXiY,
    /// Environment fixed, immigration random.
    #[serde(rename = "quenched-xi")]
    QuenchedXi,
    Annealed,
}

impl fmt::Display for MeanMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MeanMode::QuenchedXiY => "quenched-xiY",
            MeanMode::QuenchedXi => "quenched-xi",
            MeanMode::Annealed => "annealed",
        })
    }
}

impl std::str::FromStr for MeanMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quenched-xiY" | "quenched-xiy" => Ok(MeanMode::QuenchedXiY),
            "quenched-xi" => Ok(MeanMode::QuenchedXi),
            "annealed" => Ok(MeanMode::Annealed),
            other => Err(Error::InvalidArgument(format!("unknown mean-check mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanCheckConfig {
    pub mode: MeanMode,
    pub initial_type: usize,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    /// Extra generations of environment beyond `n` used for the directions.
    pub margin: usize,
    pub immigration: bool,
    /// Fixed environment prefix; drawn from the seed when absent.
    pub environment: Option<Vec<usize>>,
    /// Fixed immigration realization; drawn from the seed when absent.
    pub immigration_values: Option<Vec<Vec<u64>>>,
}

impl MeanCheckConfig {
    pub fn new(mode: MeanMode, initial_type: usize, n: usize, reps: usize, seed: u64) -> Self {
        Self {
            mode,
            initial_type,
            n,
            reps,
            seed,
            margin: 0,
            immigration: true,
            environment: None,
            immigration_values: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanCheckReport {
    pub mode: MeanMode,
    pub n: usize,
    pub reps: usize,
    pub initial_type: usize,
    pub immigration: bool,
    /// Exact formula (quenched) or its average over replicates (annealed).
    pub formula: f64,
    /// Quenched partial sums for `m = 0..=n`; empty when annealed.
    pub formula_partial_sums: Vec<f64>,
    pub mc_mean: f64,
    pub std_error: f64,
    pub difference: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub environment: Option<Vec<usize>>,
    pub immigration_values: Option<Vec<Vec<u64>>>,
    pub kappa_minus_one: Option<f64>,
}

/// Environment made of `prefix` followed by a seeded i.i.d. suffix up to `len`.
fn padded_environment(
    spec: &Arc<EnvironmentSpec>,
    prefix: &[usize],
    len: usize,
    seed: u64,
) -> Result<EnvironmentSequence> {
    let mut indices = prefix.to_vec();
    if indices.len() < len {
        let tail = sample_environment(spec, len - indices.len(), seed)?;
        indices.extend(tail.indices);
    }
    EnvironmentSequence::from_indices(Arc::clone(spec), indices)
}

fn table_for(env: &EnvironmentSequence) -> Result<DirectionTable> {
    forward_directions(&env.mean_matrices()?, &uniform_vector(env.spec().d))
}

/// Checks the preconditions of the annealed mean identity when immigrants arrive.
fn annealed_precondition(spec: &Arc<EnvironmentSpec>, seed: u64) -> Result<f64> {
    let conditions = check_conditions(spec, &[]);
    if conditions.immigration_mean.status != EnvelopeStatus::Finite {
        return Err(Error::Precondition(format!(
            "E |Y_0| / lambda_0 is not finite ({:?})",
            conditions.immigration_mean.status
        )));
    }
    if !in_interval(spec, -1.0)? {
        return Err(Error::Precondition("-1 is outside the finiteness interval".into()));
    }
    let kappa =
        kappa_auto(spec, -1.0, KAPPA_PRECHECK_N, KAPPA_PRECHECK_REPS, rng::derive_seed(seed, domain::PRECONDITION, 0))?;
    if kappa.kappa_hat >= 1.0 {
        return Err(Error::Precondition(format!("kappa(-1) estimate {} is not below 1", kappa.kappa_hat)));
    }
    Ok(kappa.kappa_hat)
}

pub fn quenched_mean_check(spec: &Arc<EnvironmentSpec>, cfg: &MeanCheckConfig) -> Result<MeanCheckReport> {
    if cfg.reps < 2 {
        return Err(Error::InvalidArgument("reps must be at least 2".into()));
    }
    let d = spec.d;
    let i = cfg.initial_type;
    let n = cfg.n;
    let len = (n + cfg.margin).max(1);
    let immigration = cfg.immigration && !spec.immigration_vanishes();

    let mut kappa_minus_one = None;
    if cfg.mode == MeanMode::Annealed && immigration {
        kappa_minus_one = Some(annealed_precondition(spec, cfg.seed)?);
    }

    let (formula, partial, mc, env_out, ys_out) = match cfg.mode {
        MeanMode::QuenchedXiY | MeanMode::QuenchedXi => {
            let prefix = cfg.environment.clone().unwrap_or_default();
            let env = padded_environment(
                spec,
                &prefix,
                len.max(prefix.len()),
                rng::derive_seed(cfg.seed, domain::QUENCHED_ENVIRONMENT, 0),
            )?;
            if env.len() < n {
                return Err(Error::EnvironmentTooShort { requested: n, available: env.len() });
            }
            let table = table_for(&env)?;
            let fixed_y: Option<Vec<PopulationVector>> = match (cfg.mode, immigration) {
                (MeanMode::QuenchedXiY, true) => Some(match &cfg.immigration_values {
                    Some(ys) => ys.iter().map(|y| PopulationVector(y.clone())).collect(),
                    None => {
                        let mut r = rng::replicate_rng(cfg.seed, domain::FIXED_IMMIGRATION, 0);
                        (0..n)
                            .map(|k| env.state(k).immigration.sample(&mut r).map(PopulationVector))
                            .collect::<Result<_>>()?
                    }
                }),
                _ => None,
            };
            if let Some(ys) = &fixed_y {
                if ys.len() < n {
                    return Err(Error::InvalidArgument(format!(
                        "{} immigration vectors for {n} generations",
                        ys.len()
                    )));
                }
            }
            let y_means: Vec<Vec<f64>> = match (&fixed_y, immigration) {
                (Some(ys), _) => ys.iter().map(|y| y.0.iter().map(|&x| x as f64).collect()).collect(),
                (None, true) => env.immigration_means(),
                (None, false) => vec![vec![0.0; d]; n],
            };
            let partial = mean_formula_partial_sums(&table, &y_means, i, n);
            let mode = match (&fixed_y, immigration) {
                (Some(ys), _) => ImmigrationMode::Fixed(ys.clone()),
                (None, true) => ImmigrationMode::Sampled,
                (None, false) => ImmigrationMode::Disabled,
            };
            let ws = stats::replicates(cfg.reps, |r| {
                let traj = simulate_trajectory(
                    &env,
                    i,
                    n,
                    rng::derive_seed(cfg.seed, domain::TRAJECTORY, r),
                    &mode,
                    TagMode::Pooled,
                )?;
                Ok(normalized_series(&traj, &table)?.w[n])
            })?;
            let diffs: Vec<f64> = ws.iter().map(|w| w - partial[n]).collect();
            (
                partial[n],
                partial.clone(),
                MeanEstimate::from_samples(&diffs),
                Some(env.indices[..n].to_vec()),
                fixed_y.map(|ys| ys.into_iter().map(|y| y.0).collect()),
            )
        }
        MeanMode::Annealed => {
            let mode = if immigration { ImmigrationMode::Sampled } else { ImmigrationMode::Disabled };
            let pairs = stats::replicates(cfg.reps, |r| {
                let env = sample_environment(spec, len, rng::derive_seed(cfg.seed, domain::ENVIRONMENT, r))?;
                let table = table_for(&env)?;
                let y_means = if immigration { env.immigration_means() } else { vec![vec![0.0; d]; n] };
                let formula = mean_formula_partial_sums(&table, &y_means, i, n)[n];
                let traj = simulate_trajectory(
                    &env,
                    i,
                    n,
                    rng::derive_seed(cfg.seed, domain::TRAJECTORY, r),
                    &mode,
                    TagMode::Pooled,
                )?;
                Ok((normalized_series(&traj, &table)?.w[n], formula))
            })?;
            let formulas: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            // paired differences remove the environment noise shared by both terms
            let diffs: Vec<f64> = pairs.iter().map(|(w, f)| w - f).collect();
            let formula = MeanEstimate::from_samples(&formulas).mean;
            (formula, Vec::new(), MeanEstimate::from_samples(&diffs), None, None)
        }
    };
    let difference = mc.mean;
    let tolerance = stats::CONFIDENCE_Z * mc.std_error + MEAN_CHECK_FLOOR * formula.abs().max(1.0);
    Ok(MeanCheckReport {
        mode: cfg.mode,
        n,
        reps: cfg.reps,
        initial_type: i,
        immigration,
        formula,
        formula_partial_sums: partial,
        mc_mean: formula + difference,
        std_error: mc.std_error,
        difference,
        tolerance,
        pass: difference.abs() <= tolerance,
        environment: env_out,
        immigration_values: ys_out,
        kappa_minus_one,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Bounded,
    Unbounded,
    Indeterminate,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Bounded => "bounded",
            Verdict::Unbounded => "unbounded",
            Verdict::Indeterminate => "indeterminate",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpPoint {
    pub n: usize,
    pub estimate: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaSummary {
    pub s: f64,
    pub kappa_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl From<&KappaReport> for KappaSummary {
    fn from(r: &KappaReport) -> Self {
        Self { s: r.s, kappa_hat: r.kappa_hat, ci_low: r.ci_low, ci_high: r.ci_high }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpReport {
    pub p: f64,
    pub initial_type: usize,
    pub reps: usize,
    pub immigration: bool,
    pub kappa_minus_p: Option<KappaSummary>,
    pub kappa_one_minus_p: Option<KappaSummary>,
    /// `max_{i,j} E (Z_1^i(j) / M_0(i,j))^p` is finite.
    pub offspring_moment_finite: Option<bool>,
    /// Status of `E (|Y_0| / lambda_0)^p`.
    pub immigration_moment: Option<EnvelopeStatus>,
    pub immigration_moment_bracket: Option<(f64, f64)>,
    pub predicted: Verdict,
    pub points: Vec<LpPoint>,
    /// Spread of the estimates over the top half of `n_list`.
    pub top_half_spread: f64,
    pub top_half_max_ci_width: f64,
    pub top_half_slope: f64,
    pub observed_bounded: bool,
    pub disagreement: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub initial_type: usize,
    pub p: f64,
    pub n_list: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub margin: usize,
    pub immigration: bool,
}

fn compare_to_one(k: &KappaReport) -> Option<bool> {
    if k.ci_high < 1.0 {
        Some(true)
    } else if k.ci_low > 1.0 {
        Some(false)
    } else {
        None
    }
}

/// Sorted, deduplicated, nonempty and positive.
fn normalize_n_list(n_list: &[usize]) -> Result<Vec<usize>> {
    let mut ns = n_list.to_vec();
    ns.sort_unstable();
    ns.dedup();
    if ns.is_empty() || ns[0] == 0 {
        return Err(Error::InvalidArgument("n_list must be nonempty and positive".into()));
    }
    Ok(ns)
}

/// Per replicate, `W_n` (or `W~_n`) at every generation up to `n_max`, under the annealed law.
fn annealed_paths(
    spec: &Arc<EnvironmentSpec>,
    i: usize,
    n_max: usize,
    reps: usize,
    seed: u64,
    margin: usize,
    immigration: bool,
) -> Result<Vec<Vec<f64>>> {
    let mode = if immigration { ImmigrationMode::Sampled } else { ImmigrationMode::Disabled };
    stats::replicates(reps, |r| {
        let env = sample_environment(spec, n_max + margin, rng::derive_seed(seed, domain::ENVIRONMENT, r))?;
        let table = table_for(&env)?;
        let traj =
            simulate_trajectory(&env, i, n_max, rng::derive_seed(seed, domain::TRAJECTORY, r), &mode, TagMode::Pooled)?;
        let series = normalized_series(&traj, &table)?;
        Ok(if immigration { series.w } else { series.w_tilde })
    })
}

pub fn lp_sweep(spec: &Arc<EnvironmentSpec>, cfg: &SweepConfig) -> Result<LpReport> {
    let p = cfg.p;
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::InvalidArgument(format!("p must be positive, got {p}")));
    }
    if cfg.reps < 2 {
        return Err(Error::InvalidArgument("reps must be at least 2".into()));
    }
    if !in_interval(spec, -p)? {
        return Err(Error::NotInInterval(-p));
    }
    let ns = normalize_n_list(&cfg.n_list)?;
    let immigration = cfg.immigration && !spec.immigration_vanishes();
    let conditions = check_conditions(spec, &[p]);
    let kseed = |k: u64| rng::derive_seed(cfg.seed, domain::PRECONDITION, k);

    let mut kappa_minus_p = None;
    let mut kappa_one_minus_p = None;
    let mut offspring_moment_finite = None;
    let mut immigration_moment = None;
    let mut immigration_moment_bracket = None;

    let predicted = if !immigration && p <= 1.0 {
        // E W~_n^p <= (E W~_n)^p = 1
        Verdict::Bounded
    } else {
        let offspring_finite = conditions.offspring_p[0].value.is_finite();
        let k1 = if p > 1.0 {
            let k = kappa_auto(spec, 1.0 - p, KAPPA_PRECHECK_N, KAPPA_PRECHECK_REPS, kseed(1))?;
            kappa_one_minus_p = Some(KappaSummary::from(&k));
            Some(compare_to_one(&k))
        } else {
            None
        };
        if p > 1.0 {
            offspring_moment_finite = Some(offspring_finite);
        }
        if !immigration {
            // no immigration, p > 1: finite normalized p-moments and kappa(1-p) < 1
            match (offspring_finite, k1.flatten()) {
                (true, Some(true)) => Verdict::Bounded,
                (_, Some(false)) => Verdict::Unbounded,
                _ => Verdict::Indeterminate,
            }
        } else {
            let k = kappa_auto(spec, -p, KAPPA_PRECHECK_N, KAPPA_PRECHECK_REPS, kseed(0))?;
            kappa_minus_p = Some(KappaSummary::from(&k));
            let kp = compare_to_one(&k);
            let imm = &conditions.immigration_p[0].value;
            immigration_moment = Some(imm.status);
            if let (Some(lo), Some(hi)) = (imm.lower, imm.upper) {
                immigration_moment_bracket = Some((lo, hi));
            }
            let imm_finite = imm.status == EnvelopeStatus::Finite;
            let imm_infinite = imm.status == EnvelopeStatus::Infinite;
            let sufficient = kp == Some(true) && imm_finite && (p <= 1.0 || offspring_finite);
            let necessary_fails = kp == Some(false) || imm_infinite || k1.flatten() == Some(false);
            if sufficient {
                Verdict::Bounded
            } else if necessary_fails {
                Verdict::Unbounded
            } else {
                Verdict::Indeterminate
            }
        }
    };

    let n_max = *ns.last().expect("nonempty");
    let paths = annealed_paths(spec, cfg.initial_type, n_max, cfg.reps, cfg.seed, cfg.margin, immigration)?;
    let points: Vec<LpPoint> = ns
        .iter()
        .map(|&n| {
            let xs: Vec<f64> = paths.iter().map(|w| w[n].powf(p)).collect();
            let e = MeanEstimate::from_samples(&xs);
            LpPoint { n, estimate: e.mean, std_error: e.std_error, ci_low: e.ci_low(), ci_high: e.ci_high() }
        })
        .collect();
    let top = &points[points.len() / 2..];
    let estimates: Vec<f64> = top.iter().map(|q| q.estimate).collect();
    let spread = estimates.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - estimates.iter().copied().fold(f64::INFINITY, f64::min);
    let width = top.iter().map(|q| q.ci_high - q.ci_low).fold(0.0, f64::max);
    let xs: Vec<f64> = top.iter().map(|q| q.n as f64).collect();
    let slope = stats::slope(&xs, &estimates);
    let observed_bounded = spread < BOUNDED_CI_WIDTHS * width || spread == 0.0;
    let disagreement = match predicted {
        Verdict::Bounded => !observed_bounded,
        Verdict::Unbounded => observed_bounded,
        Verdict::Indeterminate => false,
    };
    Ok(LpReport {
        p,
        initial_type: cfg.initial_type,
        reps: cfg.reps,
        immigration,
        kappa_minus_p,
        kappa_one_minus_p,
        offspring_moment_finite,
        immigration_moment,
        immigration_moment_bracket,
        predicted,
        points,
        top_half_spread: spread,
        top_half_max_ci_width: width,
        top_half_slope: slope,
        observed_bounded,
        disagreement,
    })
}

/// Sweep table with columns `n, estimate, ci_low, ci_high`.
pub fn write_lp_csv<W: Write>(report: &LpReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n", "estimate", "ci_low", "ci_high"])?;
    for q in &report.points {
        w.write_record([q.n.to_string(), q.estimate.to_string(), q.ci_low.to_string(), q.ci_high.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Trend {
    NonDegenerateConsistent,
    DegenerateConsistent,
    Inconclusive,
}

impl fmt::Display for Trend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Trend::NonDegenerateConsistent => "non-degenerate-consistent",
            Trend::DegenerateConsistent => "degenerate-consistent",
            Trend::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbePoint {
    pub n: usize,
    /// `P(W~_n > eps)`.
    pub survival: f64,
    pub survival_std_error: f64,
    pub mean: f64,
    pub mean_std_error: f64,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NondegeneracyReport {
    pub initial_type: usize,
    pub eps: f64,
    pub reps: usize,
    pub gamma_hat: f64,
    pub points: Vec<ProbePoint>,
    pub trend: Trend,
    /// `E max_{n <= n_max} W~_n`.
    pub sup_mean: f64,
    pub sup_ci_low: f64,
    pub sup_ci_high: f64,
    pub h4_holds: bool,
    pub kappa_minus_one: Option<f64>,
    /// `kappa(-1) < 1` (estimated) and the log-moment condition hold, so `E sup W~_n` is finite.
    pub sup_finite_guaranteed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub initial_type: usize,
    pub n_list: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub eps: f64,
    pub margin: usize,
}

/// Classifies the medians of `W~_n` along `n_list`.
pub fn classify_trend(medians: &[f64], eps: f64) -> Trend {
    let (Some(&first), Some(&last)) = (medians.first(), medians.last()) else {
        return Trend::Inconclusive;
    };
    let decreasing = medians.windows(2).all(|w| w[1] < w[0]);
    if decreasing && first > 0.0 && (first - last) / first > TREND_THRESHOLD {
        return Trend::DegenerateConsistent;
    }
    if first > 0.0 && ((last - first) / first).abs() <= TREND_THRESHOLD && last > eps {
        return Trend::NonDegenerateConsistent;
    }
    Trend::Inconclusive
}

pub fn limit_probe(spec: &Arc<EnvironmentSpec>, cfg: &ProbeConfig) -> Result<NondegeneracyReport> {
    if cfg.reps < 2 {
        return Err(Error::InvalidArgument("reps must be at least 2".into()));
    }
    let ns = normalize_n_list(&cfg.n_list)?;
    let gamma = lyapunov_estimate(spec, 200, 20, rng::derive_seed(cfg.seed, domain::PRECONDITION, 2))?;
    if gamma.classification != Criticality::Supercritical {
        return Err(Error::Precondition(format!("Lyapunov exponent estimate {} is not positive", gamma.gamma_hat)));
    }
    let conditions = check_conditions(spec, &[]);
    let kappa_minus_one = if in_interval(spec, -1.0)? {
        Some(
            kappa_auto(
                spec,
                -1.0,
                KAPPA_PRECHECK_N,
                KAPPA_PRECHECK_REPS,
                rng::derive_seed(cfg.seed, domain::PRECONDITION, 3),
            )?
            .kappa_hat,
        )
    } else {
        None
    };
    let n_max = *ns.last().expect("nonempty");
    let paths = annealed_paths(spec, cfg.initial_type, n_max, cfg.reps, cfg.seed, cfg.margin, false)?;
    let points = ns
        .iter()
        .map(|&n| {
            let xs: Vec<f64> = paths.iter().map(|w| w[n]).collect();
            let alive: Vec<f64> = xs.iter().map(|&x| if x > cfg.eps { 1.0 } else { 0.0 }).collect();
            let s = MeanEstimate::from_samples(&alive);
            let m = MeanEstimate::from_samples(&xs);
            ProbePoint {
                n,
                survival: s.mean,
                survival_std_error: s.std_error,
                mean: m.mean,
                mean_std_error: m.std_error,
                median: median(&xs),
            }
        })
        .collect::<Vec<_>>();
    let medians: Vec<f64> = points.iter().map(|q| q.median).collect();
    let sups: Vec<f64> = paths.iter().map(|w| w.iter().copied().fold(0.0, f64::max)).collect();
    let sup = MeanEstimate::from_samples(&sups);
    Ok(NondegeneracyReport {
        initial_type: cfg.initial_type,
        eps: cfg.eps,
        reps: cfg.reps,
        gamma_hat: gamma.gamma_hat,
        trend: classify_trend(&medians, cfg.eps),
        points,
        sup_mean: sup.mean,
        sup_ci_low: sup.ci_low(),
        sup_ci_high: sup.ci_high(),
        h4_holds: conditions.h4_holds,
        kappa_minus_one,
        sup_finite_guaranteed: conditions.h4_holds
            && conditions.h1.is_finite()
            && conditions.h3.holds()
            && kappa_minus_one.is_some_and(|k| k < 1.0),
    })
}

/// `E[(lambda_{0,n-1} U_0(i))^-1] / kappa(-1)^n` for each `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRatioReport {
    pub kappa: f64,
    pub ratios: Vec<(usize, f64)>,
    pub max_ratio: f64,
}

pub fn kappa_bound_ratios(
    spec: &Arc<EnvironmentSpec>,
    i: usize,
    kappa: f64,
    n_list: &[usize],
    reps: usize,
    seed: u64,
    margin: usize,
) -> Result<BoundRatioReport> {
    let ns = normalize_n_list(n_list)?;
    let rows = stats::replicates(reps, |r| {
        ns.iter()
            .map(|&n| {
                let env = sample_environment(spec, n + margin, rng::derive_seed(seed, domain::ENVIRONMENT, r))?;
                let t = table_for(&env)?;
                Ok(1.0 / (t.lambda_cum(n) * t.u_hat[0][i]))
            })
            .collect::<Result<Vec<f64>>>()
    })?;
    let ratios: Vec<(usize, f64)> = ns
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let xs: Vec<f64> = rows.iter().map(|row| row[k]).collect();
            (n, MeanEstimate::from_samples(&xs).mean / kappa.powi(n as i32))
        })
        .collect();
    let max_ratio = ratios.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok(BoundRatioReport { kappa, ratios, max_ratio })
}
