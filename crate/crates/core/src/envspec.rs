//! Finite-state random environments.
//!
//! A state of the environment fixes `d` offspring laws (one per particle
//! type) and one immigration law, all on `N^d`. The environment sequence is
//! i.i.d. with law `state_probs` over the listed states. This module holds
//! the laws, their mean matrices and moment summaries, and the samplers.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Geometric, Poisson, Zeta};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ranmat::MeanMatrix;
use crate::rng;
use crate::special::{polylog_half, zeta};

/// Tolerance on probability vectors summing to one.
pub const PROB_TOL: f64 = 1e-12;

/// Largest f64 that is safely below `u64::MAX` after rounding.
const U64_CEILING: f64 = 1.8e19;

/// One-dimensional offspring-count family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Marginal {
    /// Always `value`.
    Deterministic { value: u64 },
    /// Poisson with `mean > 0`.
    Poisson { mean: f64 },
    /// Number of failures before the first success, success probability `q` in (0, 1].
    Geometric { q: f64 },
    /// `P(N = k) = k^-alpha / zeta(alpha)` on `{1, 2, ...}`, `alpha > 1`.
    Zeta { alpha: f64 },
    /// `P(N = 2^j) = 2^-j j^-alpha / zeta(alpha)` for `j >= 1`, otherwise `N = 0`.
    /// Mean one for every `alpha > 1`; `E N log N` is finite iff `alpha > 2`.
    DyadicZeta { alpha: f64 },
}

impl Marginal {
    pub fn mean(&self) -> f64 {
        match *self {
            Marginal::Deterministic { value } => value as f64,
            Marginal::Poisson { mean } => mean,
            Marginal::Geometric { q } => (1.0 - q) / q,
            Marginal::Zeta { alpha } => {
                if alpha > 2.0 {
                    zeta(alpha - 1.0) / zeta(alpha)
                } else {
                    f64::INFINITY
                }
            }
            Marginal::DyadicZeta { .. } => 1.0,
        }
    }

    fn range_violation(&self) -> Option<String> {
        let bad = match *self {
            Marginal::Deterministic { .. } => false,
            Marginal::Poisson { mean } => !(mean > 0.0 && mean.is_finite()),
            Marginal::Geometric { q } => !(q > 0.0 && q <= 1.0),
            Marginal::Zeta { alpha } | Marginal::DyadicZeta { alpha } => !(alpha > 1.0 && alpha.is_finite()),
        };
        bad.then(|| format!("parameter out of range: {self}"))
    }

    /// Probability that a dyadic-zeta draw is nonzero.
    fn dyadic_nonzero_prob(alpha: f64) -> f64 {
        polylog_half(alpha) / zeta(alpha)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<u64> {
        match *self {
            Marginal::Deterministic { value } => Ok(value),
            Marginal::Poisson { mean } => poisson(mean, rng),
            Marginal::Geometric { q } => {
                Ok(Geometric::new(q).map_err(|e| Error::InvalidArgument(e.to_string()))?.sample(rng))
            }
            Marginal::Zeta { alpha } => {
                let z = Zeta::new(alpha).map_err(|e| Error::InvalidArgument(e.to_string()))?;
                to_count(z.sample(rng))
            }
            Marginal::DyadicZeta { alpha } => {
                let z = Zeta::new(alpha).map_err(|e| Error::InvalidArgument(e.to_string()))?;
                let j: f64 = z.sample(rng);
                if rng.random::<f64>() < (-j).exp2() {
                    dyadic(j)
                } else {
                    Ok(0)
                }
            }
        }
    }

    /// Sum of `count` independent draws, sampled exactly in law.
    pub fn sample_sum<R: Rng + ?Sized>(&self, count: u64, rng: &mut R) -> Result<u64> {
        if count == 0 {
            return Ok(0);
        }
        match *self {
            Marginal::Deterministic { value } => count.checked_mul(value).ok_or(Error::SampleOverflow),
            Marginal::Poisson { mean } => poisson(count as f64 * mean, rng),
            Marginal::Geometric { q } => {
                if q >= 1.0 {
                    return Ok(0);
                }
                // negative binomial as a gamma-mixed Poisson
                let gamma =
                    Gamma::new(count as f64, (1.0 - q) / q).map_err(|e| Error::InvalidArgument(e.to_string()))?;
                poisson(gamma.sample(rng), rng)
            }
            Marginal::Zeta { alpha } => {
                let z = Zeta::new(alpha).map_err(|e| Error::InvalidArgument(e.to_string()))?;
                let mut total = 0u64;
                for _ in 0..count {
                    let x = to_count(z.sample(rng))?;
                    total = total.checked_add(x).ok_or(Error::SampleOverflow)?;
                }
                Ok(total)
            }
            Marginal::DyadicZeta { alpha } => {
                let z = Zeta::new(alpha).map_err(|e| Error::InvalidArgument(e.to_string()))?;
                let p = Self::dyadic_nonzero_prob(alpha).clamp(0.0, 1.0);
                let nonzero = Binomial::new(count, p).map_err(|e| Error::InvalidArgument(e.to_string()))?.sample(rng);
                let mut total = 0u64;
                for _ in 0..nonzero {
                    // J | N > 0 has weights 2^-j j^-alpha: rejection from Zeta(alpha)
                    let j = loop {
                        let j: f64 = z.sample(rng);
                        if rng.random::<f64>() < (1.0 - j).exp2() {
                            break j;
                        }
                    };
                    total = total.checked_add(dyadic(j)?).ok_or(Error::SampleOverflow)?;
                }
                Ok(total)
            }
        }
    }

    fn is_deterministic(&self) -> bool {
        matches!(self, Marginal::Deterministic { .. })
    }

    /// `E[(N/m) log+(N/m)]` with `m` the mean.
    fn h4_moment(&self) -> Moment {
        match *self {
            Marginal::Deterministic { .. } => Moment::Exact(0.0),
            Marginal::Poisson { .. } | Marginal::Geometric { q: _ } => {
                if self.mean() == 0.0 {
                    Moment::Exact(0.0)
                } else {
                    Moment::FiniteAnalytic
                }
            }
            Marginal::Zeta { alpha } | Marginal::DyadicZeta { alpha } => {
                if alpha > 2.0 {
                    Moment::FiniteAnalytic
                } else {
                    Moment::Infinite
                }
            }
        }
    }

    /// `E N^p`.
    fn raw_moment(&self, p: f64) -> Moment {
        match *self {
            Marginal::Deterministic { value } => Moment::Exact((value as f64).powf(p)),
            Marginal::Poisson { .. } | Marginal::Geometric { .. } => Moment::FiniteAnalytic,
            Marginal::Zeta { alpha } => {
                if p < alpha - 1.0 {
                    Moment::FiniteAnalytic
                } else {
                    Moment::Infinite
                }
            }
            Marginal::DyadicZeta { .. } => {
                if p == 1.0 {
                    Moment::Exact(1.0)
                } else if p < 1.0 {
                    Moment::FiniteAnalytic
                } else {
                    Moment::Infinite
                }
            }
        }
    }

    /// `E (N/m)^p`.
    fn normalized_moment(&self, p: f64) -> Moment {
        let m = self.mean();
        if m == 0.0 {
            return Moment::Exact(0.0);
        }
        if !m.is_finite() {
            return Moment::Infinite;
        }
        match self.raw_moment(p) {
            Moment::Exact(v) => Moment::Exact(v / m.powf(p)),
            other => other,
        }
    }
}

impl fmt::Display for Marginal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Marginal::Deterministic { value } => write!(f, "Deterministic({value})"),
            Marginal::Poisson { mean } => write!(f, "Poisson(mean = {mean})"),
            Marginal::Geometric { q } => write!(f, "Geometric(q = {q})"),
            Marginal::Zeta { alpha } => write!(f, "Zeta(alpha = {alpha})"),
            Marginal::DyadicZeta { alpha } => write!(f, "DyadicZeta(alpha = {alpha})"),
        }
    }
}

fn poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> Result<u64> {
    if lambda <= 0.0 {
        return Ok(0);
    }
    if lambda > Poisson::<f64>::MAX_LAMBDA {
        return Err(Error::SampleOverflow);
    }
    let dist = Poisson::new(lambda).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    to_count(dist.sample(rng))
}

fn to_count(x: f64) -> Result<u64> {
    if x.is_finite() && x < U64_CEILING {
        Ok(x as u64)
    } else {
        Err(Error::SampleOverflow)
    }
}

fn dyadic(j: f64) -> Result<u64> {
    if j < 63.0 {
        Ok(1u64 << (j as u32))
    } else {
        Err(Error::SampleOverflow)
    }
}

/// Support point of a finite law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub vector: Vec<u64>,
    pub prob: f64,
}

/// A law on `N^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiscreteLaw {
    /// Finite joint pmf; the support is kept in lexicographic order.
    Finite { support: Vec<Atom> },
    /// Independent coordinates, one family per coordinate.
    Marginals { marginals: Vec<Marginal> },
}

impl DiscreteLaw {
    pub fn finite(atoms: Vec<(Vec<u64>, f64)>) -> Self {
        let mut law =
            DiscreteLaw::Finite { support: atoms.into_iter().map(|(vector, prob)| Atom { vector, prob }).collect() };
        law.canonicalize();
        law
    }

    pub fn marginals(marginals: Vec<Marginal>) -> Self {
        DiscreteLaw::Marginals { marginals }
    }

    /// Point mass at `v`.
    pub fn point(v: &[u64]) -> Self {
        DiscreteLaw::Marginals { marginals: v.iter().map(|&value| Marginal::Deterministic { value }).collect() }
    }

    /// Independent Poisson coordinates with the given means.
    pub fn poisson(means: &[f64]) -> Self {
        DiscreteLaw::Marginals { marginals: means.iter().map(|&mean| Marginal::Poisson { mean }).collect() }
    }

    /// Sorts a finite support lexicographically; a no-op for marginals.
    pub fn canonicalize(&mut self) {
        if let DiscreteLaw::Finite { support } = self {
            support.sort_by(|a, b| a.vector.cmp(&b.vector));
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DiscreteLaw::Finite { support } => support.first().map_or(0, |a| a.vector.len()),
            DiscreteLaw::Marginals { marginals } => marginals.len(),
        }
    }

    /// Coordinatewise means; `+inf` where a mean diverges.
    pub fn mean_vector(&self) -> Vec<f64> {
        match self {
            DiscreteLaw::Finite { support } => {
                let d = self.dim();
                let mut m = vec![0.0; d];
                for atom in support {
                    for (mj, &v) in m.iter_mut().zip(&atom.vector) {
                        *mj += atom.prob * v as f64;
                    }
                }
                m
            }
            DiscreteLaw::Marginals { marginals } => marginals.iter().map(Marginal::mean).collect(),
        }
    }

    /// True when the law is the point mass at the zero vector.
    pub fn is_zero(&self) -> bool {
        match self {
            DiscreteLaw::Finite { support } => {
                support.iter().all(|a| a.prob == 0.0 || a.vector.iter().all(|&v| v == 0))
            }
            DiscreteLaw::Marginals { marginals } => {
                marginals.iter().all(|m| matches!(m, Marginal::Deterministic { value: 0 }))
            }
        }
    }

    /// One draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<u64>> {
        match self {
            DiscreteLaw::Finite { support } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut last_positive = None;
                for atom in support {
                    if atom.prob <= 0.0 {
                        continue;
                    }
                    acc += atom.prob;
                    last_positive = Some(atom);
                    if u < acc {
                        return Ok(atom.vector.clone());
                    }
                }
                // u fell in the rounding gap above the accumulated mass
                Ok(last_positive.map(|a| a.vector.clone()).unwrap_or_default())
            }
            DiscreteLaw::Marginals { marginals } => marginals.iter().map(|m| m.sample(rng)).collect(),
        }
    }

    /// Adds the sum of `count` independent draws into `acc`.
    pub fn sample_sum_into<R: Rng + ?Sized>(&self, count: u64, acc: &mut [u64], rng: &mut R) -> Result<()> {
        if count == 0 {
            return Ok(());
        }
        match self {
            DiscreteLaw::Finite { support } => {
                // multinomial counts through sequential conditional binomials
                let mut remaining = count;
                let mut mass_left = 1.0;
                let last = support.iter().rposition(|a| a.prob > 0.0);
                for (idx, atom) in support.iter().enumerate() {
                    if remaining == 0 {
                        break;
                    }
                    if atom.prob <= 0.0 {
                        continue;
                    }
                    let k = if Some(idx) == last {
                        remaining
                    } else {
                        let p = (atom.prob / mass_left).clamp(0.0, 1.0);
                        Binomial::new(remaining, p).map_err(|e| Error::InvalidArgument(e.to_string()))?.sample(rng)
                    };
                    remaining -= k;
                    mass_left -= atom.prob;
                    for (a, &v) in acc.iter_mut().zip(&atom.vector) {
                        let add = k.checked_mul(v).ok_or(Error::SampleOverflow)?;
                        *a = a.checked_add(add).ok_or(Error::SampleOverflow)?;
                    }
                }
                Ok(())
            }
            DiscreteLaw::Marginals { marginals } => {
                for (a, m) in acc.iter_mut().zip(marginals) {
                    let s = m.sample_sum(count, rng)?;
                    *a = a.checked_add(s).ok_or(Error::SampleOverflow)?;
                }
                Ok(())
            }
        }
    }

    fn violations(&self, d: usize, location: &str, out: &mut Vec<Violation>) {
        let mut push = |message: String| {
            out.push(Violation { location: location.to_string(), message });
        };
        match self {
            DiscreteLaw::Finite { support } => {
                if support.is_empty() {
                    push("finite law has an empty support".into());
                    return;
                }
                let mut sum = 0.0;
                for (k, atom) in support.iter().enumerate() {
                    if atom.vector.len() != d {
                        push(format!("support vector {k} has length {}, expected {d}", atom.vector.len()));
                    }
                    if !(atom.prob >= 0.0 && atom.prob.is_finite()) {
                        push(format!("support probability {k} is {}", atom.prob));
                    }
                    sum += atom.prob;
                }
                if (sum - 1.0).abs() > PROB_TOL {
                    push(format!("probabilities sum to {sum}"));
                }
            }
            DiscreteLaw::Marginals { marginals } => {
                if marginals.len() != d {
                    push(format!("{} marginals given, expected {d}", marginals.len()));
                }
                for (j, m) in marginals.iter().enumerate() {
                    if let Some(msg) = m.range_violation() {
                        push(format!("coordinate {j}: {msg}"));
                    }
                }
            }
        }
    }

    fn coordinate_h4(&self, j: usize) -> Moment {
        match self {
            DiscreteLaw::Finite { support } => {
                let m = self.mean_vector()[j];
                if m == 0.0 {
                    return Moment::Exact(0.0);
                }
                Moment::Exact(
                    support
                        .iter()
                        .map(|a| {
                            let x = a.vector[j] as f64 / m;
                            a.prob * x * log_plus(x)
                        })
                        .sum(),
                )
            }
            DiscreteLaw::Marginals { marginals } => marginals[j].h4_moment(),
        }
    }

    fn coordinate_normalized_moment(&self, j: usize, p: f64) -> Moment {
        match self {
            DiscreteLaw::Finite { support } => {
                let m = self.mean_vector()[j];
                if m == 0.0 {
                    return Moment::Exact(0.0);
                }
                Moment::Exact(support.iter().map(|a| a.prob * (a.vector[j] as f64 / m).powf(p)).sum())
            }
            DiscreteLaw::Marginals { marginals } => marginals[j].normalized_moment(p),
        }
    }

    /// `E |N|^p` with `|N|` the L1 norm.
    pub fn abs_moment(&self, p: f64) -> Moment {
        match self {
            DiscreteLaw::Finite { support } => {
                Moment::Exact(support.iter().map(|a| a.prob * (a.vector.iter().sum::<u64>() as f64).powf(p)).sum())
            }
            DiscreteLaw::Marginals { marginals } => {
                if marginals.iter().all(Marginal::is_deterministic) {
                    let total: u64 = marginals
                        .iter()
                        .map(|m| match m {
                            Marginal::Deterministic { value } => *value,
                            _ => 0,
                        })
                        .sum();
                    return Moment::Exact((total as f64).powf(p));
                }
                // |N|^p is finite iff every coordinate's p-th moment is
                if marginals.iter().any(|m| m.raw_moment(p) == Moment::Infinite) {
                    Moment::Infinite
                } else {
                    Moment::FiniteAnalytic
                }
            }
        }
    }

    /// `E log+ |N|`.
    pub fn log_moment(&self) -> Moment {
        match self {
            DiscreteLaw::Finite { support } => {
                Moment::Exact(support.iter().map(|a| a.prob * log_plus(a.vector.iter().sum::<u64>() as f64)).sum())
            }
            DiscreteLaw::Marginals { marginals } => {
                if marginals.iter().all(Marginal::is_deterministic) {
                    let total: u64 = marginals
                        .iter()
                        .map(|m| match m {
                            Marginal::Deterministic { value } => *value,
                            _ => 0,
                        })
                        .sum();
                    Moment::Exact(log_plus(total as f64))
                } else {
                    // every supported family has a finite logarithmic moment
                    Moment::FiniteAnalytic
                }
            }
        }
    }
}

pub fn log_plus(x: f64) -> f64 {
    if x > 1.0 {
        x.ln()
    } else {
        0.0
    }
}

/// One realization value of the environment: `d` offspring laws and the immigration law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub offspring: Vec<DiscreteLaw>,
    pub immigration: DiscreteLaw,
}

impl EnvState {
    /// Mean rows `M(r, .)`, possibly containing `+inf`.
    pub fn mean_entries(&self) -> Vec<Vec<f64>> {
        self.offspring.iter().map(DiscreteLaw::mean_vector).collect()
    }
}

/// Law of one environment step: finitely many states with probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub d: usize,
    pub states: Vec<EnvState>,
    pub state_probs: Vec<f64>,
}

impl EnvironmentSpec {
    /// Parses a scenario document. Structural errors carry line and column;
    /// semantic checks are left to [`validate_spec`].
    pub fn from_json(text: &str) -> Result<Self> {
        let mut spec: EnvironmentSpec = serde_json::from_str(text)
            .map_err(|e| Error::Scenario(format!("line {}, column {}: {e}", e.line(), e.column())))?;
        for state in &mut spec.states {
            for law in &mut state.offspring {
                law.canonicalize();
            }
            state.immigration.canonicalize();
        }
        Ok(spec)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Mean matrix of every state, in state order.
    pub fn mean_matrices(&self) -> Result<Vec<MeanMatrix>> {
        self.states
            .iter()
            .enumerate()
            .map(|(s, state)| {
                mean_matrix(state).map_err(|e| match e {
                    Error::InfiniteMean { kind, coord, .. } => Error::InfiniteMean { state: Some(s), kind, coord },
                    other => other,
                })
            })
            .collect()
    }

    /// Indices of states with positive probability.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.state_probs.iter().enumerate().filter(|(_, &p)| p > 0.0).map(|(s, _)| s)
    }

    /// True when immigration is a.s. the zero vector.
    pub fn immigration_vanishes(&self) -> bool {
        self.support().all(|s| self.states[s].immigration.is_zero())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub location: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_spec(spec: &EnvironmentSpec) -> ValidationReport {
    let mut out = Vec::new();
    let push = |out: &mut Vec<Violation>, location: &str, message: String| {
        out.push(Violation { location: location.to_string(), message });
    };
    if spec.d < 2 {
        push(&mut out, "d", format!("dimension must be at least 2, got {}", spec.d));
    }
    if spec.states.is_empty() {
        push(&mut out, "states", "no states given".into());
    }
    if spec.state_probs.len() != spec.states.len() {
        push(
            &mut out,
            "state_probs",
            format!("{} probabilities for {} states", spec.state_probs.len(), spec.states.len()),
        );
    }
    for (s, &p) in spec.state_probs.iter().enumerate() {
        if !(p >= 0.0 && p.is_finite()) {
            push(&mut out, &format!("state_probs[{s}]"), format!("probability {p} is invalid"));
        }
    }
    let sum: f64 = spec.state_probs.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        push(&mut out, "state_probs", format!("state_probs sums to {sum}"));
    }
    for (s, state) in spec.states.iter().enumerate() {
        if state.offspring.len() != spec.d {
            push(
                &mut out,
                &format!("states[{s}].offspring"),
                format!("{} offspring laws given, expected {}", state.offspring.len(), spec.d),
            );
        }
        for (r, law) in state.offspring.iter().enumerate() {
            law.violations(spec.d, &format!("states[{s}].offspring[{r}]"), &mut out);
        }
        state.immigration.violations(spec.d, &format!("states[{s}].immigration"), &mut out);
    }
    ValidationReport { violations: out }
}

/// `M(r, j) = E N^r(j)`; fails on an infinite entry.
pub fn mean_matrix(state: &EnvState) -> Result<MeanMatrix> {
    let rows = state.mean_entries();
    for (r, row) in rows.iter().enumerate() {
        if let Some(j) = row.iter().position(|m| !m.is_finite()) {
            return Err(Error::InfiniteMean { state: None, kind: r, coord: j });
        }
    }
    MeanMatrix::from_rows(rows)
}

/// A realized environment `xi_0, ..., xi_{N-1}`.
#[derive(Debug, Clone)]
pub struct EnvironmentSequence {
    spec: Arc<EnvironmentSpec>,
    pub indices: Vec<usize>,
    pub seed: Option<u64>,
}

impl EnvironmentSequence {
    pub fn from_indices(spec: Arc<EnvironmentSpec>, indices: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&s| s >= spec.states.len()) {
            return Err(Error::InvalidArgument(format!(
                "state index {bad} out of range (spec has {} states)",
                spec.states.len()
            )));
        }
        Ok(Self { spec, indices, seed: None })
    }

    pub fn spec(&self) -> &Arc<EnvironmentSpec> {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn state(&self, n: usize) -> &EnvState {
        &self.spec.states[self.indices[n]]
    }

    /// `M_0, ..., M_{N-1}`.
    pub fn mean_matrices(&self) -> Result<Vec<MeanMatrix>> {
        let per_state = self.spec.mean_matrices()?;
        Ok(self.indices.iter().map(|&s| per_state[s].clone()).collect())
    }

    /// `E_xi Y_n` for each generation.
    pub fn immigration_means(&self) -> Vec<Vec<f64>> {
        self.indices.iter().map(|&s| self.spec.states[s].immigration.mean_vector()).collect()
    }

    /// First `n` generations.
    pub fn prefix(&self, n: usize) -> Self {
        Self { spec: Arc::clone(&self.spec), indices: self.indices[..n].to_vec(), seed: self.seed }
    }
}

/// Draws `n` i.i.d. states from `state_probs`.
pub fn sample_environment(spec: &Arc<EnvironmentSpec>, n: usize, seed: u64) -> Result<EnvironmentSequence> {
    if n == 0 {
        return Err(Error::InvalidArgument("environment length must be at least 1".into()));
    }
    let mut rng = rng::from_seed(seed);
    let indices = if spec.states.len() == 1 {
        vec![0; n]
    } else {
        let dist = WeightedIndex::new(&spec.state_probs).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        (0..n).map(|_| dist.sample(&mut rng)).collect()
    };
    Ok(EnvironmentSequence { spec: Arc::clone(spec), indices, seed: Some(seed) })
}

/// Exact single draw from `law`.
pub fn sample_offspring<R: Rng + ?Sized>(law: &DiscreteLaw, rng: &mut R) -> Result<Vec<u64>> {
    law.sample(rng)
}

/// Status of a moment that may be infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "value", rename_all = "snake_case")]
pub enum Moment {
    /// Computed exactly (finite sum or closed form).
    Exact(f64),
    /// Known finite from the family's tail, value not computed.
    FiniteAnalytic,
    /// Numerical estimate of a finite value.
    Estimated(f64),
    Infinite,
}

impl Moment {
    pub fn is_finite(&self) -> bool {
        !matches!(self, Moment::Infinite)
    }

    pub fn value(&self) -> Option<f64> {
        match *self {
            Moment::Exact(v) | Moment::Estimated(v) => Some(v),
            _ => None,
        }
    }

    /// Probability-weighted sum; zero-weight terms are ignored.
    pub fn weighted_sum(items: impl IntoIterator<Item = (f64, Moment)>) -> Moment {
        let mut total = 0.0;
        let mut exact = true;
        let mut estimated = false;
        for (w, m) in items {
            if w == 0.0 {
                continue;
            }
            match m {
                Moment::Infinite => return Moment::Infinite,
                Moment::Exact(v) => total += w * v,
                Moment::Estimated(v) => {
                    total += w * v;
                    estimated = true;
                }
                Moment::FiniteAnalytic => exact = false,
            }
        }
        match (exact, estimated) {
            (false, _) => Moment::FiniteAnalytic,
            (true, true) => Moment::Estimated(total),
            (true, false) => Moment::Exact(total),
        }
    }
}

/// Moment summaries of one environment state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub p: f64,
    /// `M_0(i, j)`; `+inf` serializes as `null`.
    pub mean: Vec<Vec<f64>>,
    /// `E |N^r|^p` for each offspring law.
    pub offspring_abs_moment: Vec<Moment>,
    /// `E[(Z/m) log+(Z/m)]` with `Z = Z_1^i(j)`, `m = M_0(i, j)`.
    pub h4: Vec<Vec<Moment>>,
    /// `E (Z_1^i(j) / M_0(i, j))^p`.
    pub normalized_moment: Vec<Vec<Moment>>,
    pub immigration_mean: Vec<f64>,
    pub immigration_abs_moment: Moment,
    pub immigration_log_moment: Moment,
}

pub fn law_moments(state: &EnvState, p: f64) -> MomentReport {
    let d = state.offspring.len();
    let mean = state.mean_entries();
    let mut h4 = vec![vec![Moment::Exact(0.0); d]; d];
    let mut normalized = vec![vec![Moment::Exact(0.0); d]; d];
    for (i, law) in state.offspring.iter().enumerate() {
        for j in 0..d {
            if !mean[i][j].is_finite() {
                h4[i][j] = Moment::Infinite;
                normalized[i][j] = Moment::Infinite;
            } else {
                h4[i][j] = law.coordinate_h4(j);
                normalized[i][j] = law.coordinate_normalized_moment(j, p);
            }
        }
    }
    MomentReport {
        p,
        offspring_abs_moment: state.offspring.iter().map(|l| l.abs_moment(p)).collect(),
        mean,
        h4,
        normalized_moment: normalized,
        immigration_mean: state.immigration.mean_vector(),
        immigration_abs_moment: state.immigration.abs_moment(p),
        immigration_log_moment: state.immigration.log_moment(),
    }
}

/// Moments averaged over the environment law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecMoments {
    pub p: f64,
    pub per_state: Vec<MomentReport>,
    /// `E[(Z/M) log+(Z/M)]` under the annealed law.
    pub h4: Vec<Vec<Moment>>,
    pub normalized_moment: Vec<Vec<Moment>>,
    pub immigration_abs_moment: Moment,
    pub immigration_log_moment: Moment,
}

pub fn spec_moments(spec: &EnvironmentSpec, p: f64) -> SpecMoments {
    let per_state: Vec<MomentReport> = spec.states.iter().map(|s| law_moments(s, p)).collect();
    let d = spec.d;
    let agg = |f: &dyn Fn(&MomentReport) -> Moment| {
        Moment::weighted_sum(spec.state_probs.iter().copied().zip(per_state.iter().map(f)))
    };
    let h4 = (0..d).map(|i| (0..d).map(|j| agg(&|r| r.h4[i][j])).collect()).collect();
    let normalized_moment = (0..d).map(|i| (0..d).map(|j| agg(&|r| r.normalized_moment[i][j])).collect()).collect();
    SpecMoments {
        p,
        h4,
        normalized_moment,
        immigration_abs_moment: agg(&|r| r.immigration_abs_moment),
        immigration_log_moment: agg(&|r| r.immigration_log_moment),
        per_state,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn two_type_state(offspring: DiscreteLaw) -> EnvState {
        EnvState { offspring: vec![offspring.clone(), offspring], immigration: DiscreteLaw::point(&[1, 0]) }
    }

    fn single_state_spec() -> EnvironmentSpec {
        EnvironmentSpec {
            d: 2,
            states: vec![EnvState {
                offspring: vec![
                    DiscreteLaw::finite(vec![(vec![1, 1], 1.0)]),
                    DiscreteLaw::finite(vec![(vec![1, 1], 1.0)]),
                ],
                immigration: DiscreteLaw::point(&[1, 0]),
            }],
            state_probs: vec![1.0],
        }
    }

    #[test]
    fn well_formed_spec_has_no_violations() {
        assert!(validate_spec(&single_state_spec()).is_valid());
    }

    #[test]
    fn bad_state_probs_reported() {
        let mut spec = single_state_spec();
        spec.states.push(spec.states[0].clone());
        spec.state_probs = vec![0.6, 0.5];
        let report = validate_spec(&spec);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].location, "state_probs");
        assert_eq!(report.violations[0].message, "state_probs sums to 1.1");
    }

    #[test]
    fn out_of_range_parameter_reported() {
        let mut spec = single_state_spec();
        spec.states[0].offspring[1] =
            DiscreteLaw::marginals(vec![Marginal::Poisson { mean: -1.0 }, Marginal::Poisson { mean: 1.0 }]);
        let report = validate_spec(&spec);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].location, "states[0].offspring[1]");
        assert!(report.violations[0].message.contains("parameter out of range"));
    }

    #[test]
    fn dimension_and_pmf_violations() {
        let mut spec = single_state_spec();
        spec.states[0].offspring[0] = DiscreteLaw::finite(vec![(vec![1, 0, 0], 0.5), (vec![0, 1, 0], 0.25)]);
        spec.states[0].offspring.pop();
        let report = validate_spec(&spec);
        let text: Vec<String> = report.violations.iter().map(|v| v.to_string()).collect();
        assert!(text.iter().any(|t| t.contains("1 offspring laws given, expected 2")));
        assert!(text.iter().any(|t| t.contains("length 3, expected 2")));
        assert!(text.iter().any(|t| t.contains("probabilities sum to 0.75")));
    }

    #[test]
    fn mean_of_finite_law() {
        let state = two_type_state(DiscreteLaw::finite(vec![(vec![1, 0], 0.5), (vec![0, 2], 0.5)]));
        let m = mean_matrix(&state).unwrap();
        assert_eq!(m.row(0), &[0.5, 1.0]);
    }

    #[test]
    fn mean_of_poisson_marginals() {
        let state = two_type_state(DiscreteLaw::poisson(&[2.5, 2.5]));
        let m = mean_matrix(&state).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(m.get(i, j), 2.5);
            }
        }
    }

    #[test]
    fn mean_of_geometric_and_deterministic() {
        let state = two_type_state(DiscreteLaw::marginals(vec![
            Marginal::Geometric { q: 0.25 },
            Marginal::Deterministic { value: 3 },
        ]));
        let m = mean_matrix(&state).unwrap();
        assert_eq!(m.row(0), &[3.0, 3.0]);
    }

    /// Independent route: partial sum to K plus the midpoint integral tail.
    fn zeta_oracle(s: f64) -> f64 {
        let k = 1_000_000u64;
        let head: f64 = (1..=k).rev().map(|x| (x as f64).powf(-s)).sum();
        head + (k as f64 + 0.5).powf(1.0 - s) / (s - 1.0)
    }

    #[test]
    fn zeta_three_mean_matches_series_oracle() {
        let state = two_type_state(DiscreteLaw::marginals(vec![
            Marginal::Zeta { alpha: 3.0 },
            Marginal::Poisson { mean: 1.0 },
        ]));
        let m = mean_matrix(&state).unwrap();
        let oracle = zeta_oracle(2.0) / zeta_oracle(3.0);
        assert!((m.get(0, 0) - oracle).abs() < 1e-10, "{} vs {oracle}", m.get(0, 0));
        assert!((oracle - 1.3684).abs() < 1e-4);
    }

    #[test]
    fn zeta_two_has_infinite_mean() {
        let state = two_type_state(DiscreteLaw::marginals(vec![
            Marginal::Zeta { alpha: 2.0 },
            Marginal::Poisson { mean: 1.0 },
        ]));
        assert!(matches!(mean_matrix(&state), Err(Error::InfiniteMean { kind: 0, coord: 0, .. })));
    }

    #[test]
    fn single_state_environment_is_constant() {
        let spec = Arc::new(single_state_spec());
        let env = sample_environment(&spec, 5, 9).unwrap();
        assert_eq!(env.indices, vec![0; 5]);
    }

    #[test]
    fn degenerate_state_probability() {
        let mut spec = single_state_spec();
        spec.states.push(spec.states[0].clone());
        spec.state_probs = vec![1.0, 0.0];
        let env = sample_environment(&Arc::new(spec), 3, 1).unwrap();
        assert_eq!(env.indices, vec![0, 0, 0]);
    }

    #[test]
    fn fair_environment_frequency() {
        let mut spec = single_state_spec();
        spec.states.push(spec.states[0].clone());
        spec.state_probs = vec![0.5, 0.5];
        let n = 100_000;
        let env = sample_environment(&Arc::new(spec), n, 2024).unwrap();
        let zeros = env.indices.iter().filter(|&&s| s == 0).count() as f64;
        // 6 sigma of Binomial(n, 1/2) is 6 * 0.5 / sqrt(n) ~ 0.0095
        assert!((zeros / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn environment_replay() {
        let mut spec = single_state_spec();
        spec.states.push(spec.states[0].clone());
        spec.state_probs = vec![0.3, 0.7];
        let spec = Arc::new(spec);
        let a = sample_environment(&spec, 50, 77).unwrap();
        let b = sample_environment(&spec, 50, 77).unwrap();
        assert_eq!(a.indices, b.indices);
    }

    #[test]
    fn degenerate_samplers() {
        let mut rng = rng::from_seed(3);
        let det = DiscreteLaw::point(&[2, 0]);
        let pmf = DiscreteLaw::finite(vec![(vec![1, 1], 1.0)]);
        for _ in 0..100 {
            assert_eq!(sample_offspring(&det, &mut rng).unwrap(), vec![2, 0]);
            assert_eq!(sample_offspring(&pmf, &mut rng).unwrap(), vec![1, 1]);
        }
    }

    #[test]
    fn poisson_sample_mean() {
        let mut rng = rng::from_seed(11);
        let law = DiscreteLaw::poisson(&[3.0, 0.5]);
        let n = 100_000;
        let mut sum = 0u64;
        for _ in 0..n {
            sum += sample_offspring(&law, &mut rng).unwrap()[0];
        }
        let mean = sum as f64 / n as f64;
        assert!((mean - 3.0).abs() < 4.0 * (3.0f64 / n as f64).sqrt());
    }

    #[test]
    fn finite_pmf_frequencies() {
        let mut rng = rng::from_seed(5);
        let law = DiscreteLaw::finite(vec![(vec![0, 2], 0.25), (vec![1, 0], 0.75)]);
        let n = 100_000;
        let ones = (0..n).filter(|_| sample_offspring(&law, &mut rng).unwrap() == vec![1, 0]).count() as f64;
        let se = (0.75f64 * 0.25 / n as f64).sqrt();
        assert!((ones / n as f64 - 0.75).abs() < 5.0 * se);
    }

    fn check_sum_sampler(law: &DiscreteLaw, count: u64, seed: u64) {
        let mut rng = rng::from_seed(seed);
        let reps = 20_000;
        let d = law.dim();
        let mut draws = vec![Vec::with_capacity(reps); d];
        for _ in 0..reps {
            let mut acc = vec![0u64; d];
            law.sample_sum_into(count, &mut acc, &mut rng).unwrap();
            for j in 0..d {
                draws[j].push(acc[j] as f64);
            }
        }
        let means = law.mean_vector();
        for j in 0..d {
            let est = crate::stats::MeanEstimate::from_samples(&draws[j]);
            let target = count as f64 * means[j];
            assert!(
                (est.mean - target).abs() <= 5.0 * est.std_error + 1e-12,
                "coordinate {j}: {} vs {target} (se {})",
                est.mean,
                est.std_error
            );
        }
    }

    #[test]
    fn aggregated_sums_have_the_right_mean() {
        check_sum_sampler(&DiscreteLaw::poisson(&[1.5, 0.2]), 37, 1);
        check_sum_sampler(
            &DiscreteLaw::marginals(vec![Marginal::Geometric { q: 0.4 }, Marginal::Deterministic { value: 2 }]),
            25,
            2,
        );
        check_sum_sampler(&DiscreteLaw::finite(vec![(vec![0, 3], 0.2), (vec![1, 0], 0.5), (vec![2, 2], 0.3)]), 40, 3);
        check_sum_sampler(
            &DiscreteLaw::marginals(vec![Marginal::Zeta { alpha: 4.0 }, Marginal::Poisson { mean: 1.0 }]),
            10,
            4,
        );
    }

    #[test]
    fn dyadic_zeta_law() {
        // light enough (alpha = 4) for the mean to be checked by Monte Carlo
        let m = Marginal::DyadicZeta { alpha: 4.0 };
        assert_eq!(m.mean(), 1.0);
        let mut rng = rng::from_seed(8);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| m.sample(&mut rng).unwrap() as f64).collect();
        assert!(xs.iter().all(|&x| x == 0.0 || (x as u64).is_power_of_two() && x >= 2.0));
        let est = crate::stats::MeanEstimate::from_samples(&xs);
        assert!((est.mean - 1.0).abs() < 5.0 * est.std_error);
        let nonzero = xs.iter().filter(|&&x| x > 0.0).count() as f64 / n as f64;
        let p = Marginal::dyadic_nonzero_prob(4.0);
        assert!((nonzero - p).abs() < 5.0 * (p * (1.0 - p) / n as f64).sqrt());
        check_sum_sampler(&DiscreteLaw::marginals(vec![m, Marginal::Poisson { mean: 1.0 }]), 30, 6);
    }

    #[test]
    fn h4_of_two_point_law() {
        let state = two_type_state(DiscreteLaw::finite(vec![(vec![1, 0], 0.5), (vec![0, 2], 0.5)]));
        let report = law_moments(&state, 2.0);
        // Z/m = 2 w.p. 1/2, else 0
        let oracle = 0.5 * 2.0 * 2f64.ln();
        assert_eq!(report.h4[0][1], Moment::Exact(oracle));
        // first coordinate: Z/m = 2 w.p. 1/2 as well
        assert_eq!(report.h4[0][0], Moment::Exact(oracle));
        // E (Z/m)^2 = 0.5 * 4
        assert_eq!(report.normalized_moment[0][1], Moment::Exact(2.0));
    }

    #[test]
    fn analytic_families() {
        let state = two_type_state(DiscreteLaw::poisson(&[1.0, 2.0]));
        for p in [0.5, 1.0, 2.0, 7.0] {
            let r = law_moments(&state, p);
            assert!(r.h4.iter().flatten().all(|m| *m == Moment::FiniteAnalytic));
            assert!(r.normalized_moment.iter().flatten().all(|m| *m == Moment::FiniteAnalytic));
            assert_eq!(r.offspring_abs_moment[0], Moment::FiniteAnalytic);
            assert_eq!(r.immigration_abs_moment, Moment::Exact(1.0));
        }
    }

    #[test]
    fn zeta_moment_rules() {
        let z2 = two_type_state(DiscreteLaw::marginals(vec![
            Marginal::Zeta { alpha: 2.0 },
            Marginal::Poisson { mean: 1.0 },
        ]));
        let r = law_moments(&z2, 0.5);
        assert_eq!(r.h4[0][0], Moment::Infinite);
        assert_eq!(r.h4[0][1], Moment::FiniteAnalytic);

        let z35 = two_type_state(DiscreteLaw::marginals(vec![
            Marginal::Zeta { alpha: 3.5 },
            Marginal::Poisson { mean: 1.0 },
        ]));
        assert_eq!(law_moments(&z35, 2.0).normalized_moment[0][0], Moment::FiniteAnalytic);
        assert_eq!(law_moments(&z35, 2.5).normalized_moment[0][0], Moment::Infinite);
        assert_eq!(law_moments(&z35, 1.0).h4[0][0], Moment::FiniteAnalytic);

        let dz = two_type_state(DiscreteLaw::marginals(vec![
            Marginal::DyadicZeta { alpha: 2.0 },
            Marginal::Poisson { mean: 1.0 },
        ]));
        let r = law_moments(&dz, 1.5);
        assert_eq!(r.h4[0][0], Moment::Infinite);
        assert_eq!(r.normalized_moment[0][0], Moment::Infinite);
        assert_eq!(law_moments(&dz, 0.5).normalized_moment[0][0], Moment::FiniteAnalytic);
    }

    #[test]
    fn weighted_sum_rules() {
        use Moment::*;
        assert_eq!(Moment::weighted_sum([(0.5, Exact(1.0)), (0.5, Exact(3.0))]), Exact(2.0));
        assert_eq!(Moment::weighted_sum([(0.5, Exact(1.0)), (0.5, FiniteAnalytic)]), FiniteAnalytic);
        assert_eq!(Moment::weighted_sum([(0.5, Exact(1.0)), (0.5, Infinite)]), Infinite);
        assert_eq!(Moment::weighted_sum([(1.0, Exact(1.0)), (0.0, Infinite)]), Exact(1.0));
    }

    #[test]
    fn json_round_trip_and_diagnostics() {
        let spec = single_state_spec();
        let text = spec.to_json().unwrap();
        assert_eq!(EnvironmentSpec::from_json(&text).unwrap(), spec);
        let err = EnvironmentSpec::from_json("{\n  \"d\": 2,\n  \"states\": 5\n}").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn canonical_support_order() {
        let law = DiscreteLaw::finite(vec![(vec![2, 0], 0.5), (vec![0, 1], 0.5)]);
        match law {
            DiscreteLaw::Finite { support } => {
                assert_eq!(support[0].vector, vec![0, 1]);
            }
            _ => unreachable!(),
        }
    }
}
