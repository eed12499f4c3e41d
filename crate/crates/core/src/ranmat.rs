//! Products of random mean matrices and the objects built from them:
//! Perron data, finite-horizon Hennion directions and pseudo spectral
//! radii, the Lyapunov exponent, the moment-Lyapunov function and the
//! condition checks.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::envspec::{log_plus, sample_environment, spec_moments, DiscreteLaw, EnvironmentSpec, Marginal, Moment};
use crate::error::{Error, Result};
use crate::rng::{self, domain};
use crate::stats::{self, MeanEstimate, CONFIDENCE_Z};

pub const DIRECTION_TOL: f64 = 1e-10;
pub const PERRON_TOL: f64 = 1e-12;
pub const PERRON_MAX_ITERS: usize = 100_000;
pub const DEFAULT_HORIZON_CAP: usize = 1000;
/// Environment suffixes sampled by [`choose_horizon`].
pub const HORIZON_SAMPLES: usize = 16;
/// Residual bound of the exact eigen-relation.
pub const RELATION_TOL: f64 = 1e-12;

/// Square matrix with nonnegative entries, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct MeanMatrix {
    d: usize,
    data: Vec<f64>,
}

impl TryFrom<Vec<Vec<f64>>> for MeanMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(rows)
    }
}

impl From<MeanMatrix> for Vec<Vec<f64>> {
    fn from(m: MeanMatrix) -> Self {
        m.data.chunks(m.d).map(<[f64]>::to_vec).collect()
    }
}

impl MeanMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let d = rows.len();
        if d == 0 {
            return Err(Error::InvalidArgument("matrix has no rows".into()));
        }
        let mut data = Vec::with_capacity(d * d);
        for row in rows {
            if row.len() != d {
                return Err(Error::DimensionMismatch { expected: d, found: row.len() });
            }
            if let Some(x) = row.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
                return Err(Error::InvalidArgument(format!("matrix entries must be finite and nonnegative, got {x}")));
            }
            data.extend(row);
        }
        Ok(Self { d, data })
    }

    pub fn identity(d: usize) -> Self {
        let mut data = vec![0.0; d * d];
        for i in 0..d {
            data[i * d + i] = 1.0;
        }
        Self { d, data }
    }

    pub fn constant(d: usize, value: f64) -> Self {
        Self { d, data: vec![value; d * d] }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.d + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn entries(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.clone().into()
    }

    pub fn scale(&self, c: f64) -> Self {
        Self { d: self.d, data: self.data.iter().map(|x| x * c).collect() }
    }

    pub fn transpose(&self) -> Self {
        let d = self.d;
        let mut data = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                data[j * d + i] = self.data[i * d + j];
            }
        }
        Self { d, data }
    }

    /// `self * other`.
    pub fn mul(&self, other: &MeanMatrix) -> Result<MeanMatrix> {
        if other.d != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, found: other.d });
        }
        let d = self.d;
        let mut data = vec![0.0; d * d];
        for i in 0..d {
            for k in 0..d {
                let a = self.data[i * d + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..d {
                    data[i * d + j] += a * other.data[k * d + j];
                }
            }
        }
        Ok(MeanMatrix { d, data })
    }

    /// Column vector product `M u`.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        (0..self.d).map(|i| self.row(i).iter().zip(u).map(|(a, b)| a * b).sum()).collect()
    }

    /// Row vector product `x M`.
    pub fn apply_left(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        for (i, &xi) in x.iter().enumerate() {
            for (o, &m) in out.iter_mut().zip(self.row(i)) {
                *o += xi * m;
            }
        }
        out
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.d];
        for i in 0..self.d {
            for (s, &m) in sums.iter_mut().zip(self.row(i)) {
                *s += m;
            }
        }
        sums
    }

    /// Operator norm induced by the L1 vector norm: the largest column sum.
    pub fn norm(&self) -> f64 {
        self.max_column_sum()
    }

    pub fn max_column_sum(&self) -> f64 {
        self.column_sums().into_iter().fold(0.0, f64::max)
    }

    pub fn min_column_sum(&self) -> f64 {
        self.column_sums().into_iter().fold(f64::INFINITY, f64::min)
    }

    /// Every row and every column has a positive entry.
    pub fn is_allowable(&self) -> bool {
        let d = self.d;
        (0..d).all(|i| self.row(i).iter().any(|&x| x > 0.0)) && (0..d).all(|j| (0..d).any(|i| self.get(i, j) > 0.0))
    }

    pub fn is_positive(&self) -> bool {
        self.data.iter().all(|&x| x > 0.0)
    }

    fn pattern(&self) -> Vec<bool> {
        self.data.iter().map(|&x| x > 0.0).collect()
    }
}

impl fmt::Display for MeanMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.to_rows())
    }
}

/// `mats[0] * mats[1] * ... * mats[last]`.
pub fn matprod(mats: &[MeanMatrix]) -> Result<MeanMatrix> {
    let (first, rest) = mats.split_first().ok_or(Error::EmptyProduct)?;
    rest.iter().try_fold(first.clone(), |acc, m| acc.mul(m))
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

fn l1_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn normalized(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let s = l1(&v);
    if !(s > 0.0 && s.is_finite()) {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= s);
    Some(v)
}

pub fn uniform_vector(d: usize) -> Vec<f64> {
    vec![1.0 / d as f64; d]
}

/// Spectral radius with right and left Perron vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerronTriple {
    pub rho: f64,
    /// `||u||_1 = 1`.
    pub u: Vec<f64>,
    /// `<v, u> = 1`.
    pub v: Vec<f64>,
    pub iterations: usize,
}

impl PerronTriple {
    /// `||M u - rho u||_1`.
    pub fn right_residual(&self, m: &MeanMatrix) -> f64 {
        let mu = m.apply(&self.u);
        mu.iter().zip(&self.u).map(|(a, b)| (a - self.rho * b).abs()).sum()
    }

    /// `||v^T M - rho v^T||_1`.
    pub fn left_residual(&self, m: &MeanMatrix) -> f64 {
        let vm = m.apply_left(&self.v);
        vm.iter().zip(&self.v).map(|(a, b)| (a - self.rho * b).abs()).sum()
    }
}

fn power_iteration(m: &MeanMatrix, tol: f64, max_iters: usize) -> Result<(Vec<f64>, usize)> {
    let d = m.dim();
    // a non-symmetric start so that a permutation matrix cannot sit at a fixed point
    let start: Vec<f64> = (1..=d).map(|k| k as f64).collect();
    let mut u = normalized(start).ok_or(Error::ZeroVector(0))?;
    let mut change = f64::INFINITY;
    for it in 1..=max_iters {
        let next = normalized(m.apply(&u)).ok_or(Error::ZeroVector(it))?;
        change = l1_dist(&next, &u);
        u = next;
        if change < tol {
            return Ok((u, it));
        }
    }
    Err(Error::NoConvergence { iterations: max_iters, last_change: change })
}

/// Perron root and vectors by power iteration on `M` and on `M^T`.
pub fn perron(m: &MeanMatrix, tol: f64, max_iters: usize) -> Result<PerronTriple> {
    if !m.is_allowable() {
        return Err(Error::NotAllowable(format!("{m}")));
    }
    let (u, it_right) = power_iteration(m, tol, max_iters)?;
    let (v, it_left) = power_iteration(&m.transpose(), tol, max_iters)?;
    let rho = l1(&m.apply(&u));
    let inner: f64 = v.iter().zip(&u).map(|(a, b)| a * b).sum();
    let v = v.iter().map(|x| x / inner).collect();
    Ok(PerronTriple { rho, u, v, iterations: it_right.max(it_left) })
}

/// Finite-horizon surrogates for the Hennion directions and the pseudo
/// spectral radii: `u_hat[n] = normalize(M_n ... M_{N-1} u_term)` and
/// `lambda_hat[n] = ||M_n u_hat[n+1]||_1`, so that
/// `M_n u_hat[n+1] = lambda_hat[n] u_hat[n]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionTable {
    pub horizon: usize,
    pub u_term: Vec<f64>,
    pub u_hat: Vec<Vec<f64>>,
    pub lambda_hat: Vec<f64>,
    /// `log lambda_hat_{0,n-1}` for `n = 0..=N`.
    pub log_lambda_cum: Vec<f64>,
    #[serde(skip)]
    mats: Vec<MeanMatrix>,
}

impl DirectionTable {
    pub fn dim(&self) -> usize {
        self.u_term.len()
    }

    /// `lambda_hat_k * ... * lambda_hat_m`; one when `m < k`.
    pub fn lambda_prod(&self, k: usize, m: isize) -> f64 {
        if m < k as isize {
            return 1.0;
        }
        self.lambda_hat[k..=m as usize].iter().product()
    }

    /// `lambda_hat_{0,n-1}`.
    pub fn lambda_cum(&self, n: usize) -> f64 {
        self.lambda_prod(0, n as isize - 1)
    }

    pub fn matrices(&self) -> &[MeanMatrix] {
        &self.mats
    }

    /// `max_n ||M_n u_hat[n+1] - lambda_hat[n] u_hat[n]||_1`.
    pub fn residual(&self) -> f64 {
        self.mats
            .iter()
            .enumerate()
            .map(|(n, m)| {
                let mu = m.apply(&self.u_hat[n + 1]);
                mu.iter().zip(&self.u_hat[n]).map(|(a, b)| (a - self.lambda_hat[n] * b).abs()).sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    /// True when every `lambda_hat[n]` lies between the smallest and largest column sum of `M_n`.
    pub fn bracketed(&self) -> bool {
        self.mats.iter().zip(&self.lambda_hat).all(|(m, &l)| {
            let slack = 1e-12 * l;
            m.min_column_sum() - slack <= l && l <= m.max_column_sum() + slack
        })
    }
}

/// Backward sweep over `mats` from the terminal vector.
pub fn forward_directions(mats: &[MeanMatrix], u_term: &[f64]) -> Result<DirectionTable> {
    let d = u_term.len();
    if d == 0 || u_term.iter().any(|&x| !(x > 0.0 && x.is_finite())) || (l1(u_term) - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidTerminal);
    }
    let horizon = mats.len();
    if let Some(m) = mats.iter().find(|m| m.dim() != d) {
        return Err(Error::DimensionMismatch { expected: d, found: m.dim() });
    }
    let mut u_hat = vec![Vec::new(); horizon + 1];
    let mut lambda_hat = vec![0.0; horizon];
    u_hat[horizon] = u_term.to_vec();
    for n in (0..horizon).rev() {
        let v = mats[n].apply(&u_hat[n + 1]);
        let lambda = l1(&v);
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::ZeroVector(n));
        }
        lambda_hat[n] = lambda;
        u_hat[n] = v.into_iter().map(|x| x / lambda).collect();
    }
    let mut log_lambda_cum = Vec::with_capacity(horizon + 1);
    let mut acc = 0.0;
    log_lambda_cum.push(acc);
    for &l in &lambda_hat {
        acc += l.ln();
        log_lambda_cum.push(acc);
    }
    Ok(DirectionTable { horizon, u_term: u_term.to_vec(), u_hat, lambda_hat, log_lambda_cum, mats: mats.to_vec() })
}

/// Outcome of the horizon search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonReport {
    pub horizon: usize,
    pub tol: f64,
    pub cap: usize,
    pub samples: usize,
    /// Largest probe discrepancy of the leading direction, for `K = 1..=horizon`.
    pub discrepancies: Vec<f64>,
    /// Geometric per-step decay of the discrepancy; zero after exact collapse.
    pub contraction_factor: f64,
}

/// Probe vectors near each vertex of the simplex.
fn vertex_probes(d: usize) -> Vec<Vec<f64>> {
    const EDGE: f64 = 1e-6;
    (0..d)
        .map(|j| {
            let mut b = vec![EDGE; d];
            b[j] = 1.0 - (d as f64 - 1.0) * EDGE;
            b
        })
        .collect()
}

/// Smallest `K <= cap` such that the direction at time 0 computed from `K`
/// future matrices moves by less than `tol` in L1 when the uniform terminal
/// vector is replaced by any probe near a vertex of the simplex. The image of
/// the simplex is the hull of the vertex images, so the discrepancy bounds
/// the distance to the limiting direction up to a factor two.
pub fn choose_horizon(spec: &Arc<EnvironmentSpec>, tol: f64, cap: usize, seed: u64) -> Result<HorizonReport> {
    if cap == 0 {
        return Err(Error::InvalidArgument("horizon cap must be at least 1".into()));
    }
    let per_state = spec.mean_matrices()?;
    if let Some(s) = spec.support().find(|&s| !per_state[s].is_allowable()) {
        return Err(Error::NotAllowable(format!("state {s}: {}", per_state[s])));
    }
    let d = spec.d;
    let samples = if spec.support().count() == 1 { 1 } else { HORIZON_SAMPLES };
    let probes = vertex_probes(d);
    let uniform = uniform_vector(d);
    let envs: Vec<Vec<usize>> = (0..samples)
        .map(|k| sample_environment(spec, cap, rng::derive_seed(seed, domain::HORIZON, k as u64)).map(|e| e.indices))
        .collect::<Result<_>>()?;
    let mut products: Vec<MeanMatrix> = vec![MeanMatrix::identity(d); samples];
    let mut discrepancies = Vec::new();
    for k in 1..=cap {
        let mut worst: f64 = 0.0;
        for (p, env) in products.iter_mut().zip(&envs) {
            let next = p.mul(&per_state[env[k - 1]])?;
            let c = next.norm();
            *p = next.scale(1.0 / c);
            let base = normalized(p.apply(&uniform)).ok_or(Error::ZeroVector(k))?;
            for b in &probes {
                let alt = normalized(p.apply(b)).ok_or(Error::ZeroVector(k))?;
                worst = worst.max(l1_dist(&base, &alt));
            }
        }
        discrepancies.push(worst);
        if worst < tol {
            let contraction_factor = contraction(&discrepancies);
            return Ok(HorizonReport { horizon: k, tol, cap, samples, discrepancies, contraction_factor });
        }
    }
    let best = discrepancies.iter().copied().fold(f64::INFINITY, f64::min);
    Err(Error::HorizonCapExceeded { cap, discrepancy: best })
}

fn contraction(discrepancies: &[f64]) -> f64 {
    // values near machine precision carry no rate information
    const FLOOR: f64 = 1e-14;
    let points: Vec<(f64, f64)> =
        discrepancies.iter().enumerate().filter(|(_, &x)| x > FLOOR).map(|(k, &x)| ((k + 1) as f64, x.ln())).collect();
    if points.len() < 2 {
        return if discrepancies.first().is_some_and(|&x| x > FLOOR) {
            // one informative step: decay from the diameter of the simplex
            (discrepancies.get(1).copied().unwrap_or(0.0) / discrepancies[0]).min(1.0)
        } else {
            0.0
        };
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = points.into_iter().unzip();
    stats::slope(&xs, &ys).exp()
}

/// Growth-rate estimate of the matrix products.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub gamma_hat: f64,
    pub std_error: f64,
    pub n: usize,
    pub reps: usize,
    /// Mean of `(1/n) log lambda_hat_{0,n-1}`.
    pub cross_check: f64,
    pub cross_check_std_error: f64,
    pub classification: Criticality,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criticality {
    Supercritical,
    Subcritical,
    /// The confidence interval contains zero.
    Indeterminate,
}

impl fmt::Display for Criticality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criticality::Supercritical => "supercritical",
            Criticality::Subcritical => "subcritical",
            Criticality::Indeterminate => "indeterminate",
        })
    }
}

/// `log ||M_{0,n-1}||` for the listed `n` (ascending), with running renormalization.
fn log_norms(per_state: &[MeanMatrix], env: &[usize], ns: &[usize]) -> Result<Vec<f64>> {
    let d = per_state[0].dim();
    let mut p = MeanMatrix::identity(d);
    let mut log_scale = 0.0;
    let mut out = Vec::with_capacity(ns.len());
    let mut next = ns.iter().peekable();
    for (k, &s) in env.iter().enumerate() {
        let q = p.mul(&per_state[s])?;
        let c = q.norm();
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::ZeroVector(k));
        }
        p = q.scale(1.0 / c);
        log_scale += c.ln();
        while next.peek() == Some(&&(k + 1)) {
            out.push(log_scale);
            next.next();
        }
    }
    Ok(out)
}

pub fn lyapunov_estimate(spec: &Arc<EnvironmentSpec>, n: usize, reps: usize, seed: u64) -> Result<SpectralReport> {
    if n == 0 || reps < 2 {
        return Err(Error::InvalidArgument("need n >= 1 and reps >= 2".into()));
    }
    let per_state = spec.mean_matrices()?;
    let uniform = uniform_vector(spec.d);
    let pairs = stats::replicates(reps, |r| {
        let env = sample_environment(spec, n, rng::derive_seed(seed, domain::LYAPUNOV, r))?;
        let log_norm = log_norms(&per_state, &env.indices, &[n])?[0];
        let mats: Vec<MeanMatrix> = env.indices.iter().map(|&s| per_state[s].clone()).collect();
        let table = forward_directions(&mats, &uniform)?;
        Ok((log_norm / n as f64, table.log_lambda_cum[n] / n as f64))
    })?;
    let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let est = MeanEstimate::from_samples(&a);
    let cross = MeanEstimate::from_samples(&b);
    let classification = if est.ci_low() > 0.0 {
        Criticality::Supercritical
    } else if est.ci_high() < 0.0 {
        Criticality::Subcritical
    } else {
        Criticality::Indeterminate
    };
    Ok(SpectralReport {
        gamma_hat: est.mean,
        std_error: est.std_error,
        n,
        reps,
        cross_check: cross.mean,
        cross_check_std_error: cross.std_error,
        classification,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum KappaMode {
    MonteCarlo {
        reps: usize,
    },
    /// Exact average over all environment words; refuses above `max_words`.
    Enumerate {
        max_words: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaPoint {
    pub n: usize,
    /// `E ||M_{0,n-1}||^s`.
    pub moment: f64,
    pub moment_std_error: f64,
    /// `moment^(1/n)`.
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaReport {
    pub s: f64,
    pub mode: KappaMode,
    pub points: Vec<KappaPoint>,
    /// Value at the largest `n`.
    pub kappa_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub in_interval: bool,
    /// No later point lies entirely below an earlier one.
    pub monotone_consistent: bool,
}

/// Whether `s` belongs to the finiteness interval: for `s < 0` every mean
/// entry of every charged state must be positive.
pub fn in_interval(spec: &EnvironmentSpec, s: f64) -> Result<bool> {
    if s > 0.0 {
        return Ok(false);
    }
    if s == 0.0 {
        return Ok(true);
    }
    let per_state = spec.mean_matrices()?;
    Ok(spec.support().all(|k| per_state[k].is_positive()))
}

pub fn kappa_estimate(
    spec: &Arc<EnvironmentSpec>,
    s: f64,
    n_list: &[usize],
    mode: KappaMode,
    seed: u64,
) -> Result<KappaReport> {
    if s.is_nan() || s > 0.0 {
        return Err(Error::InvalidArgument(format!("s must be <= 0, got {s}")));
    }
    if !in_interval(spec, s)? {
        return Err(Error::NotInInterval(s));
    }
    let mut ns: Vec<usize> = n_list.to_vec();
    ns.sort_unstable();
    ns.dedup();
    if ns.first().is_none_or(|&n| n == 0) {
        return Err(Error::InvalidArgument("n_list must be nonempty and positive".into()));
    }
    let per_state = spec.mean_matrices()?;
    let points = match mode {
        KappaMode::MonteCarlo { reps } => {
            if reps < 2 {
                return Err(Error::InvalidArgument("reps must be at least 2".into()));
            }
            kappa_monte_carlo(spec, &per_state, s, &ns, reps, seed)?
        }
        KappaMode::Enumerate { max_words } => ns
            .iter()
            .map(|&n| {
                let moment = enumerate_moment(spec, &per_state, s, n, max_words)?;
                let estimate = moment.powf(1.0 / n as f64);
                Ok(KappaPoint { n, moment, moment_std_error: 0.0, estimate, ci_low: estimate, ci_high: estimate })
            })
            .collect::<Result<Vec<_>>>()?,
    };
    let last = points.last().expect("n_list is nonempty");
    let monotone_consistent = points.windows(2).all(|w| w[1].ci_high >= w[0].ci_low * (1.0 - 1e-12));
    Ok(KappaReport {
        s,
        mode,
        kappa_hat: last.estimate,
        ci_low: last.ci_low,
        ci_high: last.ci_high,
        points,
        in_interval: true,
        monotone_consistent,
    })
}

fn kappa_monte_carlo(
    spec: &Arc<EnvironmentSpec>,
    per_state: &[MeanMatrix],
    s: f64,
    ns: &[usize],
    reps: usize,
    seed: u64,
) -> Result<Vec<KappaPoint>> {
    let n_max = *ns.last().expect("nonempty");
    // one environment per replicate, shared by every n through its prefixes
    let rows = stats::replicates(reps, |r| {
        let env = sample_environment(spec, n_max, rng::derive_seed(seed, domain::KAPPA, r))?;
        Ok(log_norms(per_state, &env.indices, ns)?.into_iter().map(|l| (s * l).exp()).collect::<Vec<f64>>())
    })?;
    Ok(ns
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let xs: Vec<f64> = rows.iter().map(|row| row[k]).collect();
            let est = MeanEstimate::from_samples(&xs);
            let inv = 1.0 / n as f64;
            let h = if est.mean > 0.0 { CONFIDENCE_Z * est.std_error / est.mean } else { 0.0 };
            KappaPoint {
                n,
                moment: est.mean,
                moment_std_error: est.std_error,
                estimate: est.mean.powf(inv),
                ci_low: (est.mean * (-h).exp()).powf(inv),
                ci_high: (est.mean * h.exp()).powf(inv),
            }
        })
        .collect())
}

/// `E ||M_{0,n-1}||^s` by depth-first enumeration with shared prefix products.
fn enumerate_moment(spec: &EnvironmentSpec, per_state: &[MeanMatrix], s: f64, n: usize, max_words: u64) -> Result<f64> {
    let support: Vec<usize> = spec.support().collect();
    let words = (support.len() as f64).powi(n as i32);
    if words > max_words as f64 {
        return Err(Error::EnumerationTooLarge { words, cap: max_words });
    }
    fn walk(
        spec: &EnvironmentSpec,
        per_state: &[MeanMatrix],
        support: &[usize],
        s: f64,
        remaining: usize,
        prefix: &MeanMatrix,
        prob: f64,
    ) -> Result<f64> {
        if remaining == 0 {
            return Ok(prob * prefix.norm().powf(s));
        }
        let mut total = 0.0;
        for &k in support {
            let next = prefix.mul(&per_state[k])?;
            total += walk(spec, per_state, support, s, remaining - 1, &next, prob * spec.state_probs[k])?;
        }
        Ok(total)
    }
    let mut total = 0.0;
    for &k in &support {
        total += walk(spec, per_state, &support, s, n - 1, &per_state[k], spec.state_probs[k])?;
    }
    Ok(total)
}

/// Picks exact enumeration when the word count allows it, Monte Carlo otherwise.
pub fn kappa_auto(spec: &Arc<EnvironmentSpec>, s: f64, n: usize, reps: usize, seed: u64) -> Result<KappaReport> {
    const MAX_WORDS: u64 = 1 << 16;
    let words = (spec.support().count() as f64).powi(n as i32);
    let mode = if words <= MAX_WORDS as f64 {
        KappaMode::Enumerate { max_words: MAX_WORDS }
    } else {
        KappaMode::MonteCarlo { reps }
    };
    kappa_estimate(spec, s, &[n], mode, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum H3Status {
    Holds { d_const: f64 },
    ZeroEntry { state: usize },
    InfiniteMean { state: usize },
}

impl H3Status {
    pub fn holds(&self) -> bool {
        matches!(self, H3Status::Holds { .. })
    }
}

/// A moment of `|Y_0| / lambda_0`, decided through `min col sum <= lambda_0 <= max col sum`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeMoment {
    pub status: EnvelopeStatus,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeStatus {
    Finite,
    Infinite,
    Indeterminate,
}

impl EnvelopeMoment {
    pub fn is_finite(&self) -> bool {
        self.status == EnvelopeStatus::Finite
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PMoment<T> {
    pub p: f64,
    pub value: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    /// `E log+ ||M_0||`.
    pub h1: Moment,
    pub allowable: Vec<bool>,
    /// Shortest product length of charged states that is strictly positive.
    pub primitivity_witness: Option<usize>,
    pub primitivity_cap: usize,
    pub h2: bool,
    pub h3: H3Status,
    pub h4: Vec<Vec<Moment>>,
    pub h4_holds: bool,
    /// `E log+ (|Y_0| / lambda_0)`.
    pub immigration_log: EnvelopeMoment,
    /// `E log+ (E_xi |Y_0| / lambda_0)`.
    pub immigration_quenched_log: EnvelopeMoment,
    /// `E |Y_0| / lambda_0`.
    pub immigration_mean: EnvelopeMoment,
    /// `E (|Y_0| / lambda_0)^p`.
    pub immigration_p: Vec<PMoment<EnvelopeMoment>>,
    /// `max_{i,j} E (Z_1^i(j) / M_0(i,j))^p`.
    pub offspring_p: Vec<PMoment<Moment>>,
    pub immigration_vanishes: bool,
}

/// Law of `|Y|` when it can be tabulated: `(value, probability)` pairs.
fn abs_law(law: &DiscreteLaw) -> Option<Vec<(f64, f64)>> {
    match law {
        DiscreteLaw::Finite { support } => {
            Some(support.iter().map(|a| (a.vector.iter().sum::<u64>() as f64, a.prob)).collect())
        }
        DiscreteLaw::Marginals { marginals } => {
            let mut shift = 0u64;
            let mut rate = 0.0;
            for m in marginals {
                match *m {
                    Marginal::Deterministic { value } => shift += value,
                    Marginal::Poisson { mean } => rate += mean,
                    _ => return None,
                }
            }
            if rate == 0.0 {
                return Some(vec![(shift as f64, 1.0)]);
            }
            // Poisson(rate) shifted by the deterministic part, truncated far in the tail
            let top = (rate + 40.0 * rate.sqrt() + 50.0).ceil() as u64;
            let mut out = Vec::with_capacity(top as usize + 1);
            let mut log_p = -rate;
            for k in 0..=top {
                if k > 0 {
                    log_p += rate.ln() - (k as f64).ln();
                }
                out.push(((shift + k) as f64, log_p.exp()));
            }
            Some(out)
        }
    }
}

fn mean_abs(law: &DiscreteLaw) -> f64 {
    law.mean_vector().iter().sum()
}

/// `E g(|Y_0| / lambda_0)` for nondecreasing `g`, bracketed by the column-sum envelope.
fn envelope_moment(
    spec: &EnvironmentSpec,
    per_state: &[Option<MeanMatrix>],
    g: impl Fn(f64) -> f64,
    finiteness: impl Fn(&DiscreteLaw) -> Moment,
    use_mean: bool,
) -> EnvelopeMoment {
    let mut lower = 0.0;
    let mut upper = 0.0;
    let mut tabulated = true;
    let mut status = EnvelopeStatus::Finite;
    for k in spec.support() {
        let w = spec.state_probs[k];
        let law = &spec.states[k].immigration;
        let Some(m) = &per_state[k] else {
            status = EnvelopeStatus::Indeterminate;
            tabulated = false;
            continue;
        };
        let (lo_l, hi_l) = (m.min_column_sum(), m.max_column_sum());
        if lo_l <= 0.0 {
            if !law.is_zero() {
                status = EnvelopeStatus::Indeterminate;
            }
            tabulated = false;
            continue;
        }
        if use_mean {
            let y = mean_abs(law);
            if !y.is_finite() {
                return EnvelopeMoment { status: EnvelopeStatus::Infinite, lower: None, upper: None };
            }
            lower += w * g(y / hi_l);
            upper += w * g(y / lo_l);
            continue;
        }
        if finiteness(law) == Moment::Infinite {
            return EnvelopeMoment { status: EnvelopeStatus::Infinite, lower: None, upper: None };
        }
        match abs_law(law) {
            Some(atoms) if tabulated => {
                for (y, p) in atoms {
                    lower += w * p * g(y / hi_l);
                    upper += w * p * g(y / lo_l);
                }
            }
            _ => tabulated = false,
        }
    }
    if status != EnvelopeStatus::Finite || !tabulated {
        return EnvelopeMoment { status, lower: None, upper: None };
    }
    EnvelopeMoment { status, lower: Some(lower), upper: Some(upper) }
}

/// Pattern-semigroup search for a strictly positive product of charged states.
fn primitivity_witness(per_state: &[MeanMatrix], support: &[usize], cap: usize) -> Option<usize> {
    const MAX_PATTERNS: usize = 1 << 14;
    let d = per_state[support[0]].dim();
    let generators: Vec<Vec<bool>> = support.iter().map(|&k| per_state[k].pattern()).collect();
    let mul = |a: &[bool], b: &[bool]| -> Vec<bool> {
        let mut c = vec![false; d * d];
        for i in 0..d {
            for k in 0..d {
                if a[i * d + k] {
                    for j in 0..d {
                        c[i * d + j] |= b[k * d + j];
                    }
                }
            }
        }
        c
    };
    let mut level: BTreeSet<Vec<bool>> = generators.iter().cloned().collect();
    for len in 1..=cap {
        if level.iter().any(|p| p.iter().all(|&x| x)) {
            return Some(len);
        }
        let next: BTreeSet<Vec<bool>> =
            level.iter().flat_map(|p| generators.iter().map(move |g| (p, g))).map(|(p, g)| mul(p, g)).collect();
        if next.len() > MAX_PATTERNS {
            return None;
        }
        level = next;
    }
    None
}

pub fn check_conditions(spec: &EnvironmentSpec, p_list: &[f64]) -> ConditionReport {
    let d = spec.d;
    let per_state: Vec<Option<MeanMatrix>> = spec.states.iter().map(|s| crate::envspec::mean_matrix(s).ok()).collect();
    let support: Vec<usize> = spec.support().collect();

    let h1 = Moment::weighted_sum(support.iter().map(|&k| {
        let m = match &per_state[k] {
            Some(m) => Moment::Exact(log_plus(m.norm())),
            None => Moment::Infinite,
        };
        (spec.state_probs[k], m)
    }));

    let allowable: Vec<bool> = per_state.iter().map(|m| m.as_ref().is_some_and(MeanMatrix::is_allowable)).collect();
    let primitivity_cap = 2 * d * d;
    let all_finite = support.iter().all(|&k| per_state[k].is_some());
    let primitivity_witness = if all_finite && !support.is_empty() {
        let mats: Vec<MeanMatrix> =
            per_state.iter().map(|m| m.clone().unwrap_or_else(|| MeanMatrix::identity(d))).collect();
        primitivity_witness(&mats, &support, primitivity_cap)
    } else {
        None
    };
    let h2 = support.iter().all(|&k| allowable[k]) && primitivity_witness.is_some();

    let mut h3 = H3Status::Holds { d_const: 1.0 };
    for &k in &support {
        match &per_state[k] {
            None => {
                h3 = H3Status::InfiniteMean { state: k };
                break;
            }
            Some(m) if !m.is_positive() => {
                h3 = H3Status::ZeroEntry { state: k };
                break;
            }
            Some(m) => {
                let max = m.entries().iter().copied().fold(0.0, f64::max);
                let min = m.entries().iter().copied().fold(f64::INFINITY, f64::min);
                if let H3Status::Holds { d_const } = &mut h3 {
                    *d_const = d_const.max(max / min);
                }
            }
        }
    }

    let moments = spec_moments(spec, 1.0);
    let h4 = moments.h4.clone();
    let h4_holds = h4.iter().flatten().all(Moment::is_finite);

    let immigration_log = envelope_moment(spec, &per_state, log_plus, |l| l.log_moment(), false);
    let immigration_quenched_log = envelope_moment(spec, &per_state, log_plus, |_| Moment::FiniteAnalytic, true);
    let immigration_mean = envelope_moment(spec, &per_state, |x| x, |l| l.abs_moment(1.0), false);
    let immigration_p = p_list
        .iter()
        .map(|&p| PMoment { p, value: envelope_moment(spec, &per_state, |x| x.powf(p), |l| l.abs_moment(p), false) })
        .collect();
    let offspring_p = p_list
        .iter()
        .map(|&p| {
            let m = spec_moments(spec, p);
            let worst = m.normalized_moment.iter().flatten().fold(Moment::Exact(0.0), |acc, &x| max_moment(acc, x));
            PMoment { p, value: worst }
        })
        .collect();

    ConditionReport {
        h1,
        allowable,
        primitivity_witness,
        primitivity_cap,
        h2,
        h3,
        h4,
        h4_holds,
        immigration_log,
        immigration_quenched_log,
        immigration_mean,
        immigration_p,
        offspring_p,
        immigration_vanishes: spec.immigration_vanishes(),
    }
}

fn max_moment(a: Moment, b: Moment) -> Moment {
    match (a, b) {
        (Moment::Infinite, _) | (_, Moment::Infinite) => Moment::Infinite,
        (Moment::FiniteAnalytic, _) | (_, Moment::FiniteAnalytic) => Moment::FiniteAnalytic,
        (x, y) => match (x.value(), y.value()) {
            (Some(u), Some(v)) if u >= v => x,
            _ => y,
        },
    }
}
