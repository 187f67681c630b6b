use std::ffi::{c_char, CStr, CString};
use std::ptr;

use nsf_plate::fs_operator::assemble_afs;
use nsf_plate::grid::Grid2D;
use nsf_plate::linear::PhysParams;
use nsf_plate_ffi::*;

fn parse(text: &str) -> (NsfpStatus, *mut NsfpConfig) {
    let t = CString::new(text).unwrap();
    let mut cfg = ptr::null_mut();
    let s = unsafe { nsfp_config_parse(t.as_ptr(), &mut cfg) };
    (s, cfg)
}

fn last_error() -> Option<String> {
    let p = nsfp_last_error_message();
    (!p.is_null()).then(|| unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned())
}

#[test]
fn version_matches_package() {
    let v = unsafe { CStr::from_ptr(nsfp_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn operator_round_trip_matches_library() {
    let (s, cfg) = parse("mode = \"spectrum\"\nnx = 8\n");
    assert_eq!(s, NsfpStatus::Ok);
    let mut op = ptr::null_mut();
    assert_eq!(unsafe { nsfp_operator_assemble(cfg, &mut op) }, NsfpStatus::Ok);
    let n = unsafe { nsfp_operator_dim(op) };
    assert_eq!(n, 274);

    let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
    let mut y = vec![0.0; n];
    assert_eq!(unsafe { nsfp_operator_apply(op, x.as_ptr(), y.as_mut_ptr(), n) }, NsfpStatus::Ok);
    let reference = assemble_afs(&Grid2D::new(1.0, 1.0, 8, 8).unwrap(), &PhysParams::default()).unwrap().apply(&x);
    assert_eq!(y, reference);

    assert_eq!(unsafe { nsfp_operator_apply(op, x.as_ptr(), y.as_mut_ptr(), n - 1) }, NsfpStatus::Config);
    assert!(last_error().unwrap().contains("274"));

    let mut m = 0.0;
    assert_eq!(unsafe { nsfp_operator_spectrum_max_re(op, &mut m) }, NsfpStatus::Ok);
    assert!((m + 0.2089413713525).abs() < 1e-9, "{m}");
    unsafe {
        nsfp_operator_free(op);
        nsfp_config_free(cfg);
    }
}

#[test]
fn run_produces_report_with_buffer_protocol() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, cfg) = parse("mode = \"spectrum\"\nnx = 8\n");
    let dir = CString::new(tmp.path().to_str().unwrap()).unwrap();
    let mut rep = ptr::null_mut();
    assert_eq!(unsafe { nsfp_run(cfg, dir.as_ptr(), &mut rep) }, NsfpStatus::Ok);
    assert_eq!(unsafe { nsfp_report_exit_code(rep) }, 0);
    assert!(tmp.path().join("eigenvalues.csv").exists());

    // Size query, then a too-small buffer, then the exact size.
    let mut needed = 0usize;
    let s = unsafe { nsfp_report_text(rep, ptr::null_mut(), 0, &mut needed) };
    assert_eq!(s, NsfpStatus::BufferTooSmall);
    let mut small = vec![0 as c_char; needed - 1];
    assert_eq!(unsafe { nsfp_report_text(rep, small.as_mut_ptr(), small.len(), ptr::null_mut()) }, NsfpStatus::BufferTooSmall);
    let mut buf = vec![0 as c_char; needed];
    assert_eq!(unsafe { nsfp_report_text(rep, buf.as_mut_ptr(), buf.len(), &mut needed) }, NsfpStatus::Ok);
    let text = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap().to_owned();
    assert_eq!(text.len() + 1, needed);
    assert!(text.contains("status: PASS"));

    let name = CString::new("operator dimension").unwrap();
    let mut vbuf = vec![0 as c_char; 32];
    assert_eq!(unsafe { nsfp_report_value(rep, name.as_ptr(), vbuf.as_mut_ptr(), vbuf.len(), ptr::null_mut()) }, NsfpStatus::Ok);
    assert_eq!(unsafe { CStr::from_ptr(vbuf.as_ptr()) }.to_str().unwrap(), "274");
    let bogus = CString::new("no such line").unwrap();
    assert_eq!(
        unsafe { nsfp_report_value(rep, bogus.as_ptr(), vbuf.as_mut_ptr(), vbuf.len(), ptr::null_mut()) },
        NsfpStatus::NotFound
    );
    unsafe {
        nsfp_report_free(rep);
        nsfp_config_free(cfg);
    }
}

#[test]
fn failed_run_still_yields_report() {
    let tmp = tempfile::tempdir().unwrap();
    // Amplitude large enough to fold the beam-driven change of variables.
    let (s, cfg) = parse("mode = \"local\"\nnx = 8\nscenario = \"beam-pluck\"\namplitude = 0.45\nT = 0.02\ndt = 0.005\n");
    assert_eq!(s, NsfpStatus::Ok);
    let dir = CString::new(tmp.path().to_str().unwrap()).unwrap();
    let mut rep = ptr::null_mut();
    assert_eq!(unsafe { nsfp_run(cfg, dir.as_ptr(), &mut rep) }, NsfpStatus::Ok);
    assert_ne!(unsafe { nsfp_report_exit_code(rep) }, 0);
    assert!(last_error().is_some());
    unsafe {
        nsfp_report_free(rep);
        nsfp_config_free(cfg);
    }
}

#[test]
fn invalid_config_sets_last_error() {
    let (s, cfg) = parse("mode = \"global\"\nnx = 8\n");
    assert_eq!(s, NsfpStatus::Config);
    assert!(cfg.is_null());
    assert!(last_error().unwrap().contains("beta"));
    // A successful call clears the message.
    assert_eq!(parse("mode = \"spectrum\"\n").0, NsfpStatus::Ok);
    assert!(last_error().is_none());
}

#[test]
fn invalid_utf8_is_reported() {
    let bytes = CString::new(vec![b'm', 0xff, b'x']).unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { nsfp_config_parse(bytes.as_ptr(), &mut cfg) }, NsfpStatus::InvalidUtf8);
}

#[test]
fn null_pointers_are_rejected() {
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { nsfp_config_parse(ptr::null(), &mut cfg) }, NsfpStatus::NullPointer);
    let t = CString::new("mode = \"spectrum\"").unwrap();
    assert_eq!(unsafe { nsfp_config_parse(t.as_ptr(), ptr::null_mut()) }, NsfpStatus::NullPointer);
    let mut op = ptr::null_mut();
    assert_eq!(unsafe { nsfp_operator_assemble(ptr::null(), &mut op) }, NsfpStatus::NullPointer);
    assert_eq!(unsafe { nsfp_operator_dim(ptr::null()) }, 0);
    assert_eq!(unsafe { nsfp_report_exit_code(ptr::null()) }, -1);
    let mut m = 0.0;
    assert_eq!(unsafe { nsfp_operator_spectrum_max_re(ptr::null(), &mut m) }, NsfpStatus::NullPointer);
    assert_eq!(unsafe { nsfp_report_text(ptr::null(), ptr::null_mut(), 0, ptr::null_mut()) }, NsfpStatus::NullPointer);
    unsafe {
        nsfp_config_free(ptr::null_mut());
        nsfp_report_free(ptr::null_mut());
        nsfp_operator_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_every_export() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/nsf_plate.h")).unwrap();
    for f in [
        "nsfp_version",
        "nsfp_last_error_message",
        "nsfp_config_parse",
        "nsfp_config_free",
        "nsfp_run",
        "nsfp_report_exit_code",
        "nsfp_report_text",
        "nsfp_report_value",
        "nsfp_report_free",
        "nsfp_operator_assemble",
        "nsfp_operator_dim",
        "nsfp_operator_apply",
        "nsfp_operator_spectrum_max_re",
        "nsfp_operator_free",
        "NSFP_STATUS_BUFFER_TOO_SMALL",
    ] {
        assert!(h.contains(f), "{f} missing from header");
    }
}
