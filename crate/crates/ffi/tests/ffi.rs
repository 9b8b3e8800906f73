use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::ptr;

use isingnet_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(isingnet_last_error()) }.to_string_lossy().into_owned()
}

fn constraints(means: &[f64], corr: &[f64]) -> (*mut IsingnetConstraints, IsingnetStatus) {
    let mut c = ptr::null_mut();
    let st = unsafe { isingnet_constraints_new(means.len(), means.as_ptr(), corr.as_ptr(), &mut c) };
    (c, st)
}

#[test]
fn constraints_round_trip_through_handle() {
    let means = [0.2, 0.3];
    let corr = [1.0, 0.1, 0.1, 1.0];
    let (c, st) = constraints(&means, &corr);
    assert_eq!(st, IsingnetStatus::Ok);
    assert_eq!(unsafe { isingnet_constraints_dim(c) }, 2);
    let mut m = [0.0; 2];
    let mut r = [0.0; 4];
    let st = unsafe { isingnet_constraints_get(c, m.as_mut_ptr(), 2, r.as_mut_ptr(), 4) };
    assert_eq!(st, IsingnetStatus::Ok);
    assert_eq!(m, means);
    assert_eq!(r, corr);
    unsafe { isingnet_constraints_free(c) };
}

#[test]
fn null_and_small_buffers_are_reported() {
    let mut c = ptr::null_mut();
    let st = unsafe { isingnet_constraints_new(2, ptr::null(), ptr::null(), &mut c) };
    assert_eq!(st, IsingnetStatus::NullPointer);
    assert!(last_error().contains("means"));

    let (c, _) = constraints(&[0.2, 0.3], &[1.0, 0.0, 0.0, 1.0]);
    let mut m = [0.0; 1];
    let st = unsafe { isingnet_constraints_get(c, m.as_mut_ptr(), 1, ptr::null_mut(), 0) };
    assert_eq!(st, IsingnetStatus::BufferTooSmall);
    unsafe { isingnet_constraints_free(c) };
    assert_eq!(unsafe { isingnet_constraints_dim(ptr::null()) }, 0);
    unsafe { isingnet_constraints_free(ptr::null_mut()) };
}

#[test]
fn infeasible_constraints_have_their_own_status() {
    let (_, st) = constraints(&[0.1, 0.1], &[1.0, -0.9, -0.9, 1.0]);
    assert_eq!(st, IsingnetStatus::Infeasible, "{}", last_error());
    let (_, st) = constraints(&[0.1, 0.1], &[1.0, 0.2, 0.3, 1.0]);
    assert_eq!(st, IsingnetStatus::InvalidArgument);
}

#[test]
fn ising_exact_moments_entropy_and_cap() {
    let j = [-1.0, 0.5, 0.0, 0.5, -0.5, 0.2, 0.0, 0.2, -2.0];
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { isingnet_ising_new(3, j.as_ptr(), &mut m) }, IsingnetStatus::Ok);
    let mut moments = [0.0; 9];
    assert_eq!(
        unsafe { isingnet_ising_moments_exact(m, 20, moments.as_mut_ptr(), 9) },
        IsingnetStatus::Ok
    );
    for i in 0..3 {
        for k in 0..3 {
            assert_eq!(moments[i * 3 + k], moments[k * 3 + i]);
        }
        assert!(moments[i * 3 + i] > 0.0 && moments[i * 3 + i] < 1.0);
    }
    let mut h = 0.0;
    assert_eq!(unsafe { isingnet_ising_entropy_exact(m, 20, &mut h) }, IsingnetStatus::Ok);
    assert!(h > 0.0 && h < 3.0 * std::f64::consts::LN_2);
    assert_eq!(
        unsafe { isingnet_ising_entropy_exact(m, 2, &mut h) },
        IsingnetStatus::CapExceeded
    );
    unsafe { isingnet_ising_free(m) };
}

#[test]
fn ising_fit_recovers_moments() {
    let (c, _) = constraints(&[0.2, 0.3, 0.4], &[1.0, 0.2, 0.1, 0.2, 1.0, 0.0, 0.1, 0.0, 1.0]);
    let cfg = CString::new(r#"{"learning_rate": 1.0, "max_iters": 5000, "moment_tolerance": 1e-9, "expectation": "exact"}"#).unwrap();
    let mut m = ptr::null_mut();
    let mut converged = false;
    let st = unsafe { isingnet_ising_fit_ml(c, cfg.as_ptr(), &mut m, &mut converged) };
    assert_eq!(st, IsingnetStatus::Ok, "{}", last_error());
    assert!(converged);
    let mut moments = [0.0; 9];
    unsafe { isingnet_ising_moments_exact(m, 20, moments.as_mut_ptr(), 9) };
    assert!((moments[0] - 0.2).abs() < 1e-8);
    assert!((moments[4] - 0.3).abs() < 1e-8);

    let mut samples = vec![0u8; 300];
    assert_eq!(
        unsafe { isingnet_ising_sample(m, 100, 100, 5, samples.as_mut_ptr(), samples.len()) },
        IsingnetStatus::Ok
    );
    assert!(samples.iter().all(|&v| v <= 1));

    let bad = CString::new(r#"{"learning_rat": 1.0}"#).unwrap();
    let mut m2 = ptr::null_mut();
    let st = unsafe { isingnet_ising_fit_ml(c, bad.as_ptr(), &mut m2, ptr::null_mut()) };
    assert_eq!(st, IsingnetStatus::InvalidArgument);
    unsafe {
        isingnet_ising_free(m);
        isingnet_constraints_free(c);
    }
}

#[test]
fn dg_fit_sample_entropy() {
    let xs = [0.0, 1.0, 2.0, 3.0];
    let ys = [0.0; 4];
    let mut c = ptr::null_mut();
    let st = unsafe { isingnet_constraints_from_hazard(4, xs.as_ptr(), ys.as_ptr(), 7.0, 1.5, 1.0, &mut c) };
    assert_eq!(st, IsingnetStatus::Ok, "{}", last_error());
    let mut dg = ptr::null_mut();
    assert_eq!(unsafe { isingnet_dg_fit(c, &mut dg) }, IsingnetStatus::Ok);
    assert_eq!(unsafe { isingnet_dg_dim(dg) }, 4);

    let mut a = vec![0u8; 4000];
    let mut b = vec![0u8; 4000];
    unsafe {
        isingnet_dg_sample(dg, 1000, 3, a.as_mut_ptr(), a.len());
        isingnet_dg_sample(dg, 1000, 3, b.as_mut_ptr(), b.len());
    }
    assert_eq!(a, b);
    assert_eq!(
        unsafe { isingnet_dg_sample(dg, 1000, 3, a.as_mut_ptr(), 10) },
        IsingnetStatus::BufferTooSmall
    );

    let mut gamma = [0.0; 4];
    assert_eq!(
        unsafe { isingnet_dg_params(dg, gamma.as_mut_ptr(), 4, ptr::null_mut(), 0) },
        IsingnetStatus::Ok
    );
    let (mut h, mut se) = (0.0, 0.0);
    assert_eq!(
        unsafe { isingnet_dg_entropy_mc(dg, 10_000, 100_000, 1, &mut h, &mut se) },
        IsingnetStatus::Ok
    );
    assert!(h > 0.0 && h < 4.0 * std::f64::consts::LN_2 && se > 0.0);
    unsafe {
        isingnet_dg_free(dg);
        isingnet_constraints_free(c);
    }
}

#[test]
fn constraints_files_via_paths() {
    let dir = std::env::temp_dir().join(format!("isingnet-ffi-{}", std::process::id()));
    let path = CString::new(dir.to_str().unwrap()).unwrap();
    let (c, _) = constraints(&[0.25, 0.5], &[1.0, 0.3, 0.3, 1.0]);
    assert_eq!(unsafe { isingnet_constraints_write(c, path.as_ptr()) }, IsingnetStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { isingnet_constraints_read(path.as_ptr(), &mut back) }, IsingnetStatus::Ok);
    let mut r = [0.0; 4];
    unsafe { isingnet_constraints_get(back, ptr::null_mut(), 0, r.as_mut_ptr(), 4) };
    assert_eq!(r[1], 0.3);
    let missing = CString::new("/nonexistent/isingnet").unwrap();
    let mut none = ptr::null_mut();
    assert_eq!(unsafe { isingnet_constraints_read(missing.as_ptr(), &mut none) }, IsingnetStatus::Io);
    unsafe {
        isingnet_constraints_free(c);
        isingnet_constraints_free(back);
    }
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn ipf_two_by_two() {
    let init = [1.0, 1.0, 1.0, 1.0];
    let o = [3.0, 1.0];
    let d = [2.0, 2.0];
    let mut out = [0.0; 4];
    let (mut it, mut err) = (0usize, 1.0);
    let st = unsafe { isingnet_ipf(2, 2, init.as_ptr(), o.as_ptr(), d.as_ptr(), 1e-10, 100, out.as_mut_ptr(), &mut it, &mut err) };
    assert_eq!(st, IsingnetStatus::Ok, "{}", last_error());
    assert!((out[0] + out[1] - 3.0).abs() < 1e-9);
    assert!((out[0] + out[2] - 2.0).abs() < 1e-9);
    assert!(err <= 1e-10);
}

#[test]
fn attenuation_and_version() {
    assert!((isingnet_attenuation(4.5, 0.0) + 0.740274).abs() < 1e-6);
    let v = unsafe { CStr::from_ptr(isingnet_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(root.join("include/isingnet.h")).unwrap();
    let src = std::fs::read_to_string(root.join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .split("extern \"C\" fn ")
        .skip(1)
        .map(|s| s.split('(').next().unwrap())
        .collect();
    assert!(exports.len() > 15);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    assert!(header.contains("ISINGNET_STATUS_BUFFER_TOO_SMALL = 7"));

    // Compile the header as C when a compiler is around.
    if let Ok(out) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-x", "c", "-std=c99", "-Wall", "-Werror"])
        .arg(root.join("include/isingnet.h"))
        .output()
    {
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}
