use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use trot_ffi::*;

fn last_error() -> String {
    let p = trot_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn problem(r: &[f64], c: &[f64], cost: &[f64]) -> (TrotStatus, *mut TrotProblem) {
    let mut p = ptr::null_mut();
    let s = unsafe { trot_problem_new(r.as_ptr(), r.len(), c.as_ptr(), c.len(), cost.as_ptr(), &mut p) };
    (s, p)
}

#[test]
fn solve_round_trip() {
    let (s, p) = problem(&[0.4, 0.6], &[0.2, 0.3, 0.5], &[0.0, 1.0, 2.0, 1.0, 0.0, 1.0]);
    assert_eq!(s, TrotStatus::Ok);
    unsafe {
        assert_eq!((trot_problem_rows(p), trot_problem_cols(p)), (2, 3));
        for q in [0.0, 0.5, 1.0, 2.0] {
            let mut sol = ptr::null_mut();
            assert_eq!(trot_solve(p, q, 3.0, ptr::null(), &mut sol), TrotStatus::Ok, "q={q}");
            assert!(trot_solution_converged(sol));
            assert!(trot_solution_residual(sol) < 1e-6);
            let mut plan = [0.0; 6];
            assert_eq!(trot_solution_plan(sol, plan.as_mut_ptr(), 6), TrotStatus::Ok);
            let cols: Vec<f64> = (0..3).map(|j| plan[j] + plan[3 + j]).collect();
            for (a, b) in cols.iter().zip([0.2, 0.3, 0.5]) {
                assert!((a - b).abs() < 1e-6, "q={q}");
            }
            let (mut alpha, mut beta) = ([0.0; 2], [0.0; 3]);
            let st = trot_solution_duals(sol, alpha.as_mut_ptr(), 2, beta.as_mut_ptr(), 3);
            if q == 0.0 {
                assert_eq!(st, TrotStatus::Unavailable);
                assert!(trot_solution_kkt_residual(sol).is_nan());
            } else {
                assert_eq!(st, TrotStatus::Ok);
                assert_eq!(alpha[0], 0.0);
                assert!(trot_solution_kkt_residual(sol) < 1e-5);
            }
            trot_solution_free(sol);
        }
        trot_problem_free(p);
    }
}

#[test]
fn status_codes() {
    let (s, p) = problem(&[0.5, 0.6], &[1.0], &[0.0, 0.0]);
    assert_eq!(s, TrotStatus::InvalidInput);
    assert!(p.is_null());
    assert!(last_error().contains("sums to"));

    let mut out = ptr::null_mut();
    let st = unsafe { trot_problem_new(ptr::null(), 2, [1.0].as_ptr(), 1, [0.0, 0.0].as_ptr(), &mut out) };
    assert_eq!(st, TrotStatus::NullPointer);

    let (s, p) = problem(&[1.0], &[1.0], &[0.5]);
    assert_eq!(s, TrotStatus::Ok);
    unsafe {
        let mut sol = ptr::null_mut();
        assert_eq!(trot_solve(p, -1.0, 1.0, ptr::null(), &mut sol), TrotStatus::InvalidInput);
        assert!(sol.is_null());
        assert_eq!(trot_solve(ptr::null(), 1.0, 1.0, ptr::null(), &mut sol), TrotStatus::NullPointer);

        let mut opts = trot_solver_options_default();
        opts.marginal_tol = 0.0;
        assert_eq!(trot_solve(p, 1.0, 1.0, &opts, &mut sol), TrotStatus::InvalidInput);

        assert_eq!(trot_solve(p, 1.0, 1.0, ptr::null(), &mut sol), TrotStatus::Ok);
        let mut small = [0.0; 1];
        assert_eq!(trot_solution_plan(sol, small.as_mut_ptr(), 0), TrotStatus::BufferTooSmall);
        assert_eq!(trot_solution_plan(sol, small.as_mut_ptr(), 1), TrotStatus::Ok);
        assert_eq!(small[0], 1.0);
        trot_solution_free(sol);
        trot_problem_free(p);
        // null handles are tolerated
        trot_problem_free(ptr::null_mut());
        trot_solution_free(ptr::null_mut());
        assert!(!trot_solution_converged(ptr::null()));
        assert_eq!(trot_problem_rows(ptr::null()), 0);
    }
}

#[test]
fn from_json() {
    let json = CString::new(r#"{"r": [0.5, 0.5], "c": [0.5, 0.5], "M": [[0, 1], [1, 0]]}"#).unwrap();
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { trot_problem_from_json(json.as_ptr(), &mut p) }, TrotStatus::Ok);
    unsafe { trot_problem_free(p) };
    let bad = CString::new("{").unwrap();
    assert_eq!(unsafe { trot_problem_from_json(bad.as_ptr(), &mut p) }, TrotStatus::InvalidInput);
}

#[test]
fn q_functions() {
    for q in [0.5, 1.0, 2.0] {
        for x in [0.3, 1.0, 4.0] {
            assert!((trot_q_exp(trot_q_log(x, q), q) - x).abs() < 1e-12 * x);
        }
    }
    assert!(trot_q_log(-1.0, 2.0).is_nan());
    assert_eq!(trot_q_exp(-3.0, 0.5), 0.0);
    let v = unsafe { CStr::from_ptr(trot_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn errors_are_per_thread() {
    let _ = problem(&[2.0], &[1.0], &[0.0]);
    assert!(!last_error().is_empty());
    std::thread::spawn(|| assert!(trot_last_error().is_null())).join().unwrap();
}

fn target_dir() -> PathBuf {
    // tests run from target/<profile>/deps
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn header_is_current_and_usable_from_c() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/trot.h")).unwrap();
    for sym in ["trot_problem_new", "trot_solve", "trot_solution_plan", "trot_last_error", "TROT_STATUS_BUFFER_TOO_SMALL"] {
        assert!(header.contains(sym), "header lacks {sym}");
    }

    let lib = target_dir().join("libtrot_ffi.a");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if !lib.exists() || Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("skipping C smoke test: no C compiler or static library");
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let exe = tmp.path().join("smoke");
    let out = Command::new(&cc)
        .arg(dir.join("tests/smoke.c"))
        .arg("-I")
        .arg(dir.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "exit {:?}: {}", run.status.code(), String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}
