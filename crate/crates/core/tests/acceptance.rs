//! Acceptance suite: criteria 1 to 10, one PASS/FAIL line each.
//!
//! Lines go straight to stderr so they show without `--nocapture`.

mod common;

use std::fs;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};

use mbprei::envspec::{sample_environment, EnvironmentSequence};
use mbprei::harness;
use mbprei::limits::{
    self, decomposition_identity_check, limit_probe, lp_sweep, quenched_mean_check, MeanCheckConfig, MeanMode,
    ProbeConfig, SweepConfig, Trend, Verdict,
};
use mbprei::ranmat::{
    choose_horizon, forward_directions, kappa_estimate, lyapunov_estimate, perron, uniform_vector, KappaMode,
    PERRON_MAX_ITERS, PERRON_TOL,
};
use mbprei::rng;
use mbprei::sim::{simulate_trajectory, ImmigrationMode, TagMode};
use rand::Rng;

use common::{fixture, fixture_path, poisson_spec, random_positive_matrix};

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

fn closed_form_kappa(s: f64) -> f64 {
    2f64.powf(s) * (1.0 + 2f64.powf(s)) / 2.0
}

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_1() -> Outcome {
    let mut rng = rng::from_seed(101);
    let mut worst = 0.0f64;
    for k in 0..100 {
        let d = [2, 3, 5][k % 3];
        let mats: Vec<_> = (0..50).map(|_| random_positive_matrix(d, 0.1, 10.0, &mut rng)).collect();
        let table = forward_directions(&mats, &uniform_vector(d)).map_err(|e| e.to_string())?;
        worst = worst.max(table.residual());
    }
    check(worst <= 1e-12, format!("max eigen-relation residual {worst:.3e} over 100 sequences"))
}

fn criterion_2() -> Outcome {
    let mut rng = rng::from_seed(202);
    let (mut lambda_err, mut u_err) = (0.0f64, 0.0f64);
    let mut horizons = Vec::new();
    for k in 0..20 {
        let d = 2 + k % 3;
        let rows: Vec<Vec<f64>> = (0..d).map(|_| (0..d).map(|_| rng.random_range(0.1..3.0)).collect()).collect();
        let spec = poisson_spec(&rows);
        let h = choose_horizon(&spec, 1e-12, 1000, k as u64).map_err(|e| e.to_string())?;
        horizons.push(h.horizon);
        let m = spec.mean_matrices().map_err(|e| e.to_string())?.remove(0);
        let exact = perron(&m, PERRON_TOL, PERRON_MAX_ITERS).map_err(|e| e.to_string())?;
        let n = 10;
        let table = forward_directions(&vec![m; n + h.horizon], &uniform_vector(d)).map_err(|e| e.to_string())?;
        for t in 0..=n {
            lambda_err = lambda_err.max((table.lambda_hat[t] - exact.rho).abs());
            let du: f64 = table.u_hat[t].iter().zip(&exact.u).map(|(a, b)| (a - b).abs()).sum();
            u_err = u_err.max(du);
        }
    }
    check(
        lambda_err <= 1e-10 && u_err <= 1e-8,
        format!(
            "max |lambda - rho| {lambda_err:.3e}, max ||U - u||_1 {u_err:.3e}, horizons {}..{}",
            horizons.iter().min().unwrap(),
            horizons.iter().max().unwrap()
        ),
    )
}

fn criterion_3() -> Outcome {
    let spec = fixture("rank_one");
    let mut lines = Vec::new();
    let mut ok = true;
    for s in [-0.5, -1.0, -2.0] {
        let exact = closed_form_kappa(s);
        let mc =
            kappa_estimate(&spec, s, &[12], KappaMode::MonteCarlo { reps: 100_000 }, 3).map_err(|e| e.to_string())?;
        let en = kappa_estimate(&spec, s, &[12], KappaMode::Enumerate { max_words: 1 << 12 }, 3)
            .map_err(|e| e.to_string())?;
        let in_ci = mc.ci_low <= exact && exact <= mc.ci_high;
        let enum_err = (en.kappa_hat - exact).abs();
        ok &= in_ci && enum_err <= 1e-10;
        lines.push(format!(
            "s={s}: exact {exact:.6}, MC {:.6} [{:.6}, {:.6}], enumeration error {enum_err:.1e}",
            mc.kappa_hat, mc.ci_low, mc.ci_high
        ));
    }
    check(ok, lines.join("; "))
}

fn criterion_4() -> Outcome {
    let spec = fixture("rank_one");
    let exact = 1.5 * std::f64::consts::LN_2;
    let r = lyapunov_estimate(&spec, 1000, 200, 4).map_err(|e| e.to_string())?;
    let rel = (r.gamma_hat - exact).abs() / exact;
    let joint = 4.0 * (r.std_error.powi(2) + r.cross_check_std_error.powi(2)).sqrt();
    let diff = (r.gamma_hat - r.cross_check).abs();
    check(
        rel <= 0.01 && diff <= joint,
        format!(
            "gamma_hat {:.6} (exact {exact:.6}, rel err {rel:.2e}), cross-check {:.6}, |diff| {diff:.2e} <= {joint:.2e}",
            r.gamma_hat, r.cross_check
        ),
    )
}

fn mean_config(mode: MeanMode, n: usize, reps: usize, seed: u64, margin: usize) -> MeanCheckConfig {
    let mut cfg = MeanCheckConfig::new(mode, 0, n, reps, seed);
    cfg.margin = margin;
    cfg
}

fn criterion_5() -> Outcome {
    let rank_one = fixture("rank_one");
    let two_state = fixture("two_state");
    let mut cfg = mean_config(MeanMode::QuenchedXiY, 2, 100_000, 5, 5);
    cfg.environment = Some(vec![0, 1]);
    cfg.immigration_values = Some(vec![vec![1, 0], vec![1, 0]]);
    let base = quenched_mean_check(&rank_one, &cfg).map_err(|e| e.to_string())?;
    let mut ok = base.formula == 1.625 && base.pass;
    let mut failures = Vec::new();
    let mut rng = rng::from_seed(55);
    for k in 0..10u64 {
        let (name, spec) = if k % 2 == 0 { ("rank_one", &rank_one) } else { ("two_state", &two_state) };
        let n = rng.random_range(1..=8);
        let margin = choose_horizon(spec, 1e-10, 1000, k).map_err(|e| e.to_string())?.horizon;
        let env = sample_environment(spec, n, rng.random()).map_err(|e| e.to_string())?;
        let mut cfg = mean_config(MeanMode::QuenchedXiY, n, 100_000, 500 + k, margin);
        cfg.environment = Some(env.indices.clone());
        let r = quenched_mean_check(spec, &cfg).map_err(|e| e.to_string())?;
        if !r.pass {
            ok = false;
            failures.push(format!("{name} n={n}: diff {:.3e} > {:.3e}", r.difference, r.tolerance));
        }
    }
    check(
        ok,
        format!(
            "xi=(1,2) n=2: formula {}, MC {:.5} (se {:.1e}); 10 random draws {}",
            base.formula,
            base.mc_mean,
            base.std_error,
            if failures.is_empty() { "all within 4 SE".to_string() } else { failures.join(", ") }
        ),
    )
}

fn criterion_6() -> Outcome {
    let mut worst = 0.0f64;
    let mut integer = true;
    for name in ["rank_one", "two_state"] {
        let spec = fixture(name);
        let margin = choose_horizon(&spec, 1e-10, 1000, 6).map_err(|e| e.to_string())?.horizon;
        for seed in 0..100u64 {
            let n = 1 + (seed as usize) % 15;
            let env: EnvironmentSequence =
                sample_environment(&spec, n + margin, rng::derive_seed(seed, rng::domain::ENVIRONMENT, 0))
                    .map_err(|e| e.to_string())?;
            let traj = simulate_trajectory(&env, 0, n, seed, &ImmigrationMode::Sampled, TagMode::PerImmigrant)
                .map_err(|e| e.to_string())?;
            let dirs = forward_directions(&env.mean_matrices().map_err(|e| e.to_string())?, &uniform_vector(spec.d))
                .map_err(|e| e.to_string())?;
            let r = decomposition_identity_check(&traj, &dirs).map_err(|e| e.to_string())?;
            integer &= r.integer_identity;
            worst = worst.max(r.max_relative_residual);
        }
    }
    check(
        integer && worst <= limits::DECOMPOSITION_TOL,
        format!("integer identity {integer}, max relative residual {worst:.3e} over 200 trajectories"),
    )
}

fn criterion_7() -> Outcome {
    let spec = fixture("rank_one");
    let margin = choose_horizon(&spec, 1e-10, 1000, 7).map_err(|e| e.to_string())?.horizon;
    let mut lines = Vec::new();
    let mut ok = true;
    for mode in [MeanMode::QuenchedXi, MeanMode::Annealed] {
        for n in [5, 10] {
            let mut cfg = mean_config(mode, n, 100_000, 70 + n as u64, margin);
            cfg.immigration = false;
            let r = quenched_mean_check(&spec, &cfg).map_err(|e| e.to_string())?;
            ok &= r.pass && r.formula == 1.0;
            lines.push(format!("{mode} n={n}: {:.4} (se {:.1e})", r.mc_mean, r.std_error));
        }
    }
    check(ok, lines.join("; "))
}

fn criterion_8() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for (name, expected) in
        [("heavy_tail", Trend::DegenerateConsistent), ("light_tail", Trend::NonDegenerateConsistent)]
    {
        let spec = fixture(name);
        let margin = choose_horizon(&spec, 1e-10, 1000, 8).map_err(|e| e.to_string())?.horizon;
        let cfg = ProbeConfig {
            initial_type: 0,
            n_list: vec![5, 10, 20],
            reps: 10_000,
            seed: 8,
            eps: limits::DEFAULT_EPS,
            margin,
        };
        let r = limit_probe(&spec, &cfg).map_err(|e| e.to_string())?;
        ok &= r.trend == expected;
        let medians: Vec<String> = r.points.iter().map(|q| format!("{:.3}", q.median)).collect();
        lines.push(format!("{name}: {} (medians {})", r.trend, medians.join(", ")));
    }
    check(ok, format!("diagnostic only; {}", lines.join("; ")))
}

fn criterion_9() -> Outcome {
    let spec = fixture("rank_one");
    let margin = choose_horizon(&spec, 1e-10, 1000, 9).map_err(|e| e.to_string())?.horizon;
    let mut lines = Vec::new();
    let mut ok = true;
    for p in [0.5, 2.0] {
        let cfg = SweepConfig {
            initial_type: 0,
            p,
            n_list: (1..=20).collect(),
            reps: 100_000,
            seed: 9,
            margin,
            immigration: true,
        };
        let r = lp_sweep(&spec, &cfg).map_err(|e| e.to_string())?;
        let stable = r.top_half_spread < limits::BOUNDED_CI_WIDTHS * r.top_half_max_ci_width;
        ok &= r.predicted == Verdict::Bounded && stable;
        lines.push(format!(
            "p={p}: predicted {}, top-half spread {:.3e} vs 3 CI widths {:.3e}",
            r.predicted,
            r.top_half_spread,
            limits::BOUNDED_CI_WIDTHS * r.top_half_max_ci_width
        ));
    }
    check(ok, lines.join("; "))
}

fn run_cli(args: &[&str], out: &std::path::Path, workers: &str) -> Result<(), String> {
    let mut argv = vec!["mbprei"];
    argv.extend_from_slice(args);
    argv.extend_from_slice(&["--seed", "10", "--workers", workers, "--out", out.to_str().unwrap()]);
    match harness::run(argv.iter().copied()) {
        0 => Ok(()),
        code => Err(format!("{} exited {code}", args[0])),
    }
}

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let rank_one = fixture_path("rank_one");
    let two_state = fixture_path("two_state");
    let (r1, t2) = (rank_one.to_str().unwrap(), two_state.to_str().unwrap());
    let commands: Vec<Vec<&str>> = vec![
        vec!["simulate", t2, "--n", "8", "--format", "csv"],
        vec!["directions", t2, "--n", "5"],
        vec!["estimate-gamma", t2, "--n", "200", "--reps", "50"],
        vec!["estimate-kappa", t2, "--s", "-1", "--n-list", "4,8", "--reps", "5000", "--format", "csv"],
        vec!["check-conditions", t2, "--p", "2"],
        vec!["check-mean", r1, "--mode", "annealed", "--n", "6", "--reps", "5000"],
        vec!["sweep-lp", r1, "--p", "2", "--n-list", "2,4,6,8", "--reps", "5000"],
        vec!["probe-limit", t2, "--n-list", "3,6", "--reps", "2000"],
    ];
    let runs = [("a", "1"), ("b", "1"), ("c", "8")];
    for (tag, workers) in runs {
        for args in &commands {
            run_cli(args, &dir.path().join(tag), workers)?;
        }
    }
    let mut compared = 0;
    for entry in fs::read_dir(dir.path().join("a")).map_err(|e| e.to_string())? {
        let name = entry.map_err(|e| e.to_string())?.file_name();
        let a = fs::read(dir.path().join("a").join(&name)).map_err(|e| e.to_string())?;
        for other in ["b", "c"] {
            let b = fs::read(dir.path().join(other).join(&name)).map_err(|e| e.to_string())?;
            if a != b {
                return Err(format!("{} differs between run a and run {other}", name.to_string_lossy()));
            }
        }
        compared += 1;
    }
    check(
        compared >= commands.len(),
        format!("{compared} report files byte-identical across repeat and workers 1 vs 8"),
    )
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 10] = [
        (1, "eigen-relation exactness", criterion_1),
        (2, "deterministic reduction to Perron", criterion_2),
        (3, "closed-form kappa", criterion_3),
        (4, "closed-form gamma", criterion_4),
        (5, "exact quenched mean identity", criterion_5),
        (6, "decomposition identities", criterion_6),
        (7, "martingale mean without immigration", criterion_7),
        (8, "degeneracy trend", criterion_8),
        (9, "L^p sweep consistency", criterion_9),
        (10, "reproducibility", criterion_10),
    ];
    let mut failed = Vec::new();
    for (k, title, f) in criteria {
        let start = std::time::Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        let line = match &outcome {
            Ok(detail) => format!("criterion {k:>2} PASS  {title}: {detail} [{secs:.1}s]\n"),
            Err(detail) => format!("criterion {k:>2} FAIL  {title}: {detail} [{secs:.1}s]\n"),
        };
        let _ = std::io::stderr().write_all(line.as_bytes());
        if outcome.is_err() {
            failed.push(k);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
