#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use mbprei::envspec::{DiscreteLaw, EnvState, EnvironmentSpec, Marginal};
use mbprei::ranmat::MeanMatrix;
use rand::Rng;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(format!("{name}.json"))
}

pub fn fixture(name: &str) -> Arc<EnvironmentSpec> {
    Arc::new(EnvironmentSpec::from_path(fixture_path(name)).unwrap())
}

pub fn random_positive_matrix<R: Rng>(d: usize, lo: f64, hi: f64, rng: &mut R) -> MeanMatrix {
    MeanMatrix::from_rows((0..d).map(|_| (0..d).map(|_| rng.random_range(lo..hi)).collect()).collect()).unwrap()
}

/// One-state spec with Poisson offspring whose means are the given rows.
pub fn poisson_spec(rows: &[Vec<f64>]) -> Arc<EnvironmentSpec> {
    let d = rows.len();
    let offspring = rows
        .iter()
        .map(|row| DiscreteLaw::marginals(row.iter().map(|&mean| Marginal::Poisson { mean }).collect()))
        .collect();
    let mut y = vec![0; d];
    y[0] = 1;
    Arc::new(EnvironmentSpec {
        d,
        states: vec![EnvState { offspring, immigration: DiscreteLaw::point(&y) }],
        state_probs: vec![1.0],
    })
}

/// Two-sided z statistic for the difference of two independent means.
pub fn z_score(m1: f64, se1: f64, m2: f64, se2: f64) -> f64 {
    (m1 - m2) / (se1 * se1 + se2 * se2).sqrt()
}
