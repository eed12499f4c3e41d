//! Trajectories of the branching process with immigration, with every
//! particle carrying the tag of the line it descends from.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::envspec::{EnvState, EnvironmentSequence};
use crate::error::{Error, Result};
use crate::rng;

/// Counts per type.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PopulationVector(pub Vec<u64>);

impl PopulationVector {
    pub fn zeros(d: usize) -> Self {
        Self(vec![0; d])
    }

    pub fn unit(d: usize, r: usize) -> Self {
        let mut v = vec![0; d];
        v[r] = 1;
        Self(v)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0)
    }

    pub fn total(&self) -> u128 {
        self.0.iter().map(|&x| u128::from(x)).sum()
    }

    /// `<self, u>` in floating point.
    pub fn dot(&self, u: &[f64]) -> f64 {
        self.0.iter().zip(u).map(|(&x, y)| x as f64 * y).sum()
    }

    pub fn checked_add_assign(&mut self, other: &PopulationVector) -> Option<()> {
        for (a, &b) in self.0.iter_mut().zip(&other.0) {
            *a = a.checked_add(b)?;
        }
        Some(())
    }
}

/// Which line a particle descends from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "snake_case")]
pub enum OriginTag {
    /// The ancestor present at generation 0.
    Initial,
    /// Immigrant `index` of type `kind` among `Y_arrival`; it joins generation `arrival + 1`.
    Immigrant { arrival: usize, kind: usize, index: u64 },
    /// All immigrant descendants together, used when lines are not tracked separately.
    ImmigrantPool,
}

impl fmt::Display for OriginTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OriginTag::Initial => f.write_str("initial"),
            OriginTag::Immigrant { arrival, kind, index } => {
                write!(f, "immigrant({arrival}, {kind}, {index})")
            }
            OriginTag::ImmigrantPool => f.write_str("immigrant_pool"),
        }
    }
}

/// One generation split by origin.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedPopulation {
    #[serde(with = "tag_map")]
    pub components: BTreeMap<OriginTag, PopulationVector>,
    pub total: PopulationVector,
}

mod tag_map {
    use super::{OriginTag, PopulationVector};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    #[derive(Serialize, Deserialize)]
    struct Entry {
        tag: OriginTag,
        counts: PopulationVector,
    }

    pub fn serialize<S: Serializer>(map: &BTreeMap<OriginTag, PopulationVector>, s: S) -> Result<S::Ok, S::Error> {
        let entries: Vec<Entry> = map.iter().map(|(t, c)| Entry { tag: *t, counts: c.clone() }).collect();
        entries.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<OriginTag, PopulationVector>, D::Error> {
        let entries = Vec::<Entry>::deserialize(d)?;
        Ok(entries.into_iter().map(|e| (e.tag, e.counts)).collect())
    }
}

impl TaggedPopulation {
    fn from_components(d: usize, components: BTreeMap<OriginTag, PopulationVector>, generation: usize) -> Result<Self> {
        let mut total = PopulationVector::zeros(d);
        for c in components.values() {
            total.checked_add_assign(c).ok_or(Error::Overflow(generation))?;
        }
        Ok(Self { components, total })
    }

    /// The component descending from the initial ancestor.
    pub fn initial(&self) -> PopulationVector {
        self.components.get(&OriginTag::Initial).cloned().unwrap_or_else(|| PopulationVector::zeros(self.total.0.len()))
    }

    /// Coordinatewise sum of all components equals `total`.
    pub fn is_conserved(&self) -> bool {
        let d = self.total.0.len();
        let mut sum = vec![0u128; d];
        for c in self.components.values() {
            for (s, &x) in sum.iter_mut().zip(&c.0) {
                *s += u128::from(x);
            }
        }
        sum.iter().zip(&self.total.0).all(|(&s, &t)| s == u128::from(t))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "values", rename_all = "snake_case")]
pub enum ImmigrationMode {
    /// The process without immigration.
    Disabled,
    /// `Y_n` drawn from the immigration law of the current state.
    Sampled,
    /// A fixed realization `Y_0, Y_1, ...`.
    Fixed(Vec<PopulationVector>),
}

/// How immigrant lines are recorded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TagMode {
    /// One tag per immigrant.
    PerImmigrant,
    /// One pooled tag for all immigrants; cheaper when only totals matter.
    Pooled,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub env: EnvironmentSequence,
    pub initial_type: usize,
    /// `Y_0, ..., Y_{n-1}`; zero vectors when immigration is disabled.
    pub immigration: Vec<PopulationVector>,
    /// Generations `0..=n`.
    pub generations: Vec<TaggedPopulation>,
    pub seed: u64,
    pub immigration_enabled: bool,
    pub tag_mode: TagMode,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.generations.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.generations[0].total.0.len()
    }

    pub fn totals(&self) -> Vec<PopulationVector> {
        self.generations.iter().map(|g| g.total.clone()).collect()
    }
}

/// Simulates `n` generations from one type-`initial_type` ancestor.
///
/// Within a generation, components are processed in tag order and, inside
/// a component, types in ascending order; the children of all type-`r`
/// particles of a component are drawn as one aggregated sum, which has the
/// same law as summing the individual offspring vectors. `Y_n` is drawn
/// last.
pub fn simulate_trajectory(
    env: &EnvironmentSequence,
    initial_type: usize,
    n: usize,
    seed: u64,
    immigration: &ImmigrationMode,
    tag_mode: TagMode,
) -> Result<Trajectory> {
    let d = env.spec().d;
    if n > env.len() {
        return Err(Error::EnvironmentTooShort { requested: n, available: env.len() });
    }
    if initial_type >= d {
        return Err(Error::InvalidArgument(format!("initial type {initial_type} out of range for d = {d}")));
    }
    if let ImmigrationMode::Fixed(ys) = immigration {
        if ys.len() < n {
            return Err(Error::InvalidArgument(format!("{} fixed immigration vectors for {n} generations", ys.len())));
        }
        if let Some(y) = ys.iter().find(|y| y.0.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, found: y.0.len() });
        }
    }
    let mut rng = rng::from_seed(seed);
    let mut current: BTreeMap<OriginTag, PopulationVector> = BTreeMap::new();
    current.insert(OriginTag::Initial, PopulationVector::unit(d, initial_type));
    let mut generations = vec![TaggedPopulation::from_components(d, current.clone(), 0)?];
    let mut ys = Vec::with_capacity(n);
    let overflow = |g: usize| {
        move |e: Error| match e {
            Error::SampleOverflow => Error::Overflow(g),
            other => other,
        }
    };
    for g in 0..n {
        let state = env.state(g);
        let mut next: BTreeMap<OriginTag, PopulationVector> = BTreeMap::new();
        for (tag, pop) in &current {
            let mut children = vec![0u64; d];
            for (r, &count) in pop.0.iter().enumerate() {
                state.offspring[r].sample_sum_into(count, &mut children, &mut rng).map_err(overflow(g + 1))?;
            }
            let children = PopulationVector(children);
            if *tag == OriginTag::Initial || !children.is_zero() {
                next.insert(*tag, children);
            }
        }
        let y = match immigration {
            ImmigrationMode::Disabled => PopulationVector::zeros(d),
            ImmigrationMode::Sampled => PopulationVector(state.immigration.sample(&mut rng).map_err(overflow(g + 1))?),
            ImmigrationMode::Fixed(values) => values[g].clone(),
        };
        match tag_mode {
            TagMode::PerImmigrant => {
                for (r, &count) in y.0.iter().enumerate() {
                    for l in 0..count {
                        next.insert(
                            OriginTag::Immigrant { arrival: g, kind: r, index: l },
                            PopulationVector::unit(d, r),
                        );
                    }
                }
            }
            TagMode::Pooled => {
                if !y.is_zero() {
                    next.entry(OriginTag::ImmigrantPool)
                        .or_insert_with(|| PopulationVector::zeros(d))
                        .checked_add_assign(&y)
                        .ok_or(Error::Overflow(g + 1))?;
                }
            }
        }
        ys.push(y);
        generations.push(TaggedPopulation::from_components(d, next.clone(), g + 1)?);
        current = next;
    }
    Ok(Trajectory {
        env: env.clone(),
        initial_type,
        immigration: ys,
        generations,
        seed,
        immigration_enabled: !matches!(immigration, ImmigrationMode::Disabled),
        tag_mode,
    })
}

/// One generation of the decomposition `X_n = Z_n + sum_k Zhat_k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationSplit {
    pub generation: usize,
    pub total: PopulationVector,
    /// `Z_n`: descendants of the initial ancestor.
    pub initial: PopulationVector,
    /// `Zhat_k`: descendants of all immigrants of `Y_k`, keyed by `k`.
    pub by_arrival: BTreeMap<usize, PopulationVector>,
    /// Descendants of each single immigrant.
    #[serde(with = "tag_map")]
    pub per_immigrant: BTreeMap<OriginTag, PopulationVector>,
    /// `total == initial + sum of by_arrival`, checked in integers.
    pub conserved: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decomposition {
    pub generations: Vec<GenerationSplit>,
    pub conserved: bool,
}

pub fn decompose_trajectory(traj: &Trajectory) -> Result<Decomposition> {
    if traj.tag_mode != TagMode::PerImmigrant {
        return Err(Error::InvalidArgument("decomposition needs per-immigrant tags".into()));
    }
    let d = traj.dim();
    let generations: Vec<GenerationSplit> = traj
        .generations
        .iter()
        .enumerate()
        .map(|(n, g)| {
            let mut by_arrival: BTreeMap<usize, PopulationVector> = BTreeMap::new();
            let mut per_immigrant = BTreeMap::new();
            for (tag, pop) in &g.components {
                if let OriginTag::Immigrant { arrival, .. } = tag {
                    let group = by_arrival.entry(*arrival).or_insert_with(|| PopulationVector::zeros(d));
                    for (a, &b) in group.0.iter_mut().zip(&pop.0) {
                        *a += b;
                    }
                    per_immigrant.insert(*tag, pop.clone());
                }
            }
            let initial = g.initial();
            let mut sum: Vec<u128> = initial.0.iter().map(|&x| u128::from(x)).collect();
            for group in by_arrival.values() {
                for (s, &x) in sum.iter_mut().zip(&group.0) {
                    *s += u128::from(x);
                }
            }
            let conserved = sum.iter().zip(&g.total.0).all(|(&s, &t)| s == u128::from(t)) && g.is_conserved();
            GenerationSplit { generation: n, total: g.total.clone(), initial, by_arrival, per_immigrant, conserved }
        })
        .collect();
    let conserved = generations.iter().all(|g| g.conserved);
    Ok(Decomposition { generations, conserved })
}

/// Flat export row: one per generation and tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub generation: usize,
    pub tag_kind: String,
    pub tag_k: Option<usize>,
    pub tag_r: Option<usize>,
    pub tag_l: Option<u64>,
    pub counts: Vec<u64>,
}

pub fn trajectory_rows(traj: &Trajectory) -> Vec<TrajectoryRow> {
    let mut rows = Vec::new();
    for (n, g) in traj.generations.iter().enumerate() {
        for (tag, pop) in &g.components {
            let (kind, k, r, l) = match *tag {
                OriginTag::Initial => ("initial", None, None, None),
                OriginTag::Immigrant { arrival, kind, index } => ("immigrant", Some(arrival), Some(kind), Some(index)),
                OriginTag::ImmigrantPool => ("immigrant_pool", None, None, None),
            };
            rows.push(TrajectoryRow {
                generation: n,
                tag_kind: kind.to_string(),
                tag_k: k,
                tag_r: r,
                tag_l: l,
                counts: pop.0.clone(),
            });
        }
    }
    rows
}

pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    let d = traj.dim();
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> =
        ["generation", "tag_kind", "tag_k", "tag_r", "tag_l"].iter().map(|s| s.to_string()).collect();
    header.extend((1..=d).map(|j| format!("count_{j}")));
    w.write_record(&header)?;
    let opt = |x: Option<String>| x.unwrap_or_default();
    for row in trajectory_rows(traj) {
        let mut record = vec![
            row.generation.to_string(),
            row.tag_kind,
            opt(row.tag_k.map(|x| x.to_string())),
            opt(row.tag_r.map(|x| x.to_string())),
            opt(row.tag_l.map(|x| x.to_string())),
        ];
        record.extend(row.counts.iter().map(u64::to_string));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trajectory_json<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    serde_json::to_writer_pretty(out, &trajectory_rows(traj))?;
    Ok(())
}

/// One generation from `x` in state `state`, adding the immigrants `y`.
pub fn step_population<R: rand::Rng + ?Sized>(
    state: &EnvState,
    x: &PopulationVector,
    y: &PopulationVector,
    rng: &mut R,
) -> Result<PopulationVector> {
    let mut children = y.0.clone();
    for (r, &count) in x.0.iter().enumerate() {
        state.offspring[r].sample_sum_into(count, &mut children, rng)?;
    }
    Ok(PopulationVector(children))
}
