use std::ffi::{CStr, CString};
use std::ptr;

use mbprei_ffi::*;

const RANK_ONE: &str = include_str!("../../core/tests/fixtures/rank_one.json");
const DETERMINISTIC: &str = include_str!("../../core/tests/fixtures/deterministic.json");

fn load(json: &str) -> *mut MbpreiSpec {
    let text = CString::new(json).unwrap();
    let mut spec = ptr::null_mut();
    assert_eq!(unsafe { mbprei_spec_from_json(text.as_ptr(), &mut spec) }, MbpreiStatus::Ok);
    assert!(!spec.is_null());
    spec
}

fn last_error() -> String {
    let p = mbprei_last_error();
    assert!(!p.is_null());
    let s = unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned();
    unsafe { mbprei_string_free(p) };
    s
}

#[test]
fn spec_round_trip() {
    let spec = load(RANK_ONE);
    let (mut d, mut k) = (0usize, 0usize);
    unsafe {
        assert_eq!(mbprei_spec_dim(spec, &mut d), MbpreiStatus::Ok);
        assert_eq!(mbprei_spec_states(spec, &mut k), MbpreiStatus::Ok);
    }
    assert_eq!((d, k), (2, 2));
    let mut m = [0.0; 4];
    assert_eq!(unsafe { mbprei_spec_mean_matrix(spec, 1, m.as_mut_ptr(), 4) }, MbpreiStatus::Ok);
    assert_eq!(m, [2.0; 4]);
    assert_eq!(unsafe { mbprei_spec_mean_matrix(spec, 1, m.as_mut_ptr(), 3) }, MbpreiStatus::InvalidArgument);
    unsafe { mbprei_spec_free(spec) };
}

#[test]
fn malformed_and_invalid_scenarios() {
    let mut spec = ptr::null_mut();
    let bad = CString::new("{\"d\": 2,").unwrap();
    assert_eq!(unsafe { mbprei_spec_from_json(bad.as_ptr(), &mut spec) }, MbpreiStatus::Scenario);
    assert!(spec.is_null());
    assert!(last_error().contains("line"));

    let invalid = CString::new(RANK_ONE.replace("[0.5, 0.5]", "[0.6, 0.5]")).unwrap();
    assert_eq!(unsafe { mbprei_spec_from_json(invalid.as_ptr(), &mut spec) }, MbpreiStatus::Validation);
    assert!(last_error().contains("state_probs"));
}

#[test]
fn null_pointers_are_rejected() {
    let mut d = 0usize;
    assert_eq!(unsafe { mbprei_spec_dim(ptr::null(), &mut d) }, MbpreiStatus::NullPointer);
    assert_eq!(last_error(), "spec is null");
    let mut spec = ptr::null_mut();
    assert_eq!(unsafe { mbprei_spec_from_json(ptr::null(), &mut spec) }, MbpreiStatus::NullPointer);
    unsafe {
        mbprei_spec_free(ptr::null_mut());
        mbprei_directions_free(ptr::null_mut());
        mbprei_trajectory_free(ptr::null_mut());
        mbprei_string_free(ptr::null_mut());
    }
}

#[test]
fn directions_from_matrices_satisfy_relation() {
    let data = [2.0, 1.0, 1.0, 2.0, 1.0, 1.0, 1.0, 2.0, 0.5, 3.0, 1.0, 1.0];
    let mut dirs = ptr::null_mut();
    assert_eq!(unsafe { mbprei_directions_from_matrices(data.as_ptr(), 2, 3, &mut dirs) }, MbpreiStatus::Ok);
    let (mut horizon, mut residual) = (0usize, 1.0);
    unsafe {
        assert_eq!(mbprei_directions_horizon(dirs, &mut horizon), MbpreiStatus::Ok);
        assert_eq!(mbprei_directions_residual(dirs, &mut residual), MbpreiStatus::Ok);
    }
    assert_eq!(horizon, 3);
    assert!(residual <= 1e-12);

    // last matrix applied to the uniform vector: (1.75, 1.0), L1 norm 2.75
    let mut lambda = 0.0;
    let mut u = [0.0; 2];
    unsafe {
        assert_eq!(mbprei_directions_lambda(dirs, 2, &mut lambda), MbpreiStatus::Ok);
        assert_eq!(mbprei_directions_u(dirs, 2, u.as_mut_ptr(), 2), MbpreiStatus::Ok);
        assert_eq!(mbprei_directions_lambda(dirs, 3, &mut lambda), MbpreiStatus::InvalidArgument);
        mbprei_directions_free(dirs);
    }
    assert!((lambda - 2.75).abs() < 1e-15);
    assert!((u[0] - 1.75 / 2.75).abs() < 1e-15 && (u[1] - 1.0 / 2.75).abs() < 1e-15);
}

#[test]
fn sampled_directions_are_uniform_for_rank_one() {
    let spec = load(RANK_ONE);
    let mut dirs = ptr::null_mut();
    assert_eq!(unsafe { mbprei_directions_sample(spec, 5, 1e-10, 1000, 3, &mut dirs) }, MbpreiStatus::Ok);
    let mut u = [0.0; 2];
    assert_eq!(unsafe { mbprei_directions_u(dirs, 0, u.as_mut_ptr(), 2) }, MbpreiStatus::Ok);
    assert!((u[0] - 0.5).abs() < 1e-15 && (u[1] - 0.5).abs() < 1e-15);
    unsafe {
        mbprei_directions_free(dirs);
        mbprei_spec_free(spec);
    }
}

#[test]
fn deterministic_trajectory() {
    let spec = load(DETERMINISTIC);
    let mut traj = ptr::null_mut();
    assert_eq!(unsafe { mbprei_trajectory_simulate(spec, 0, 3, true, 1, &mut traj) }, MbpreiStatus::Ok);
    let mut n = 0usize;
    let mut x = [0u64; 2];
    unsafe {
        assert_eq!(mbprei_trajectory_len(traj, &mut n), MbpreiStatus::Ok);
        assert_eq!(mbprei_trajectory_total(traj, 2, x.as_mut_ptr(), 2), MbpreiStatus::Ok);
    }
    assert_eq!(n, 3);
    assert_eq!(x, [4, 3]);
    let mut csv = ptr::null_mut();
    assert_eq!(unsafe { mbprei_trajectory_csv(traj, &mut csv) }, MbpreiStatus::Ok);
    let text = unsafe { CStr::from_ptr(csv) }.to_str().unwrap().to_owned();
    unsafe {
        mbprei_string_free(csv);
        mbprei_trajectory_free(traj);
        mbprei_spec_free(spec);
    }
    assert!(text.starts_with("generation,tag_kind,tag_k,tag_r,tag_l,count_1,count_2\n"));
}

#[test]
fn kappa_enumeration_matches_closed_form() {
    let spec = load(RANK_ONE);
    let (mut k, mut lo, mut hi) = (0.0, 0.0, 0.0);
    assert_eq!(unsafe { mbprei_estimate_kappa(spec, -1.0, 10, 0, 1, &mut k, &mut lo, &mut hi) }, MbpreiStatus::Ok);
    assert!((k - 0.375).abs() < 1e-10);
    assert_eq!(
        unsafe { mbprei_estimate_kappa(spec, 1.0, 10, 0, 1, &mut k, &mut lo, &mut hi) },
        MbpreiStatus::InvalidArgument
    );
    let (mut g, mut se) = (0.0, 0.0);
    assert_eq!(unsafe { mbprei_estimate_gamma(spec, 200, 20, 1, &mut g, &mut se) }, MbpreiStatus::Ok);
    assert!((g - 1.5 * std::f64::consts::LN_2).abs() < 4.0 * se + 1e-9);
    unsafe { mbprei_spec_free(spec) };
}

#[test]
fn run_reports_exit_status() {
    let dir = std::env::temp_dir().join(format!("mbprei-ffi-run-{}", std::process::id()));
    let path = dir.join("spec.json");
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(&path, DETERMINISTIC).unwrap();
    let args: Vec<CString> =
        ["mbprei", "validate", path.to_str().unwrap(), "--seed", "1", "--out", dir.to_str().unwrap()]
            .iter()
            .map(|s| CString::new(*s).unwrap())
            .collect();
    let argv: Vec<_> = args.iter().map(|s| s.as_ptr()).collect();
    assert_eq!(unsafe { mbprei_run(argv.len() as i32, argv.as_ptr()) }, 0);
    assert!(dir.join("validate.json").exists());
    assert_eq!(unsafe { mbprei_run(2, [args[0].as_ptr(), CString::new("nope").unwrap().as_ptr()].as_ptr()) }, 1);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(mbprei_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_api() {
    let header = include_str!("../include/mbprei.h");
    for item in [
        "typedef struct MbpreiSpec MbpreiSpec;",
        "typedef struct MbpreiDirections MbpreiDirections;",
        "typedef struct MbpreiTrajectory MbpreiTrajectory;",
        "MBPREI_STATUS_OK = 0",
        "MBPREI_STATUS_PANIC = 8",
        "enum MbpreiStatus mbprei_spec_from_json(const char *json, struct MbpreiSpec **out);",
        "void mbprei_spec_free(struct MbpreiSpec *spec);",
        "char *mbprei_last_error(void);",
        "int mbprei_run(int argc, const char *const *argv);",
    ] {
        assert!(header.contains(item), "header lacks `{item}`");
    }
}
