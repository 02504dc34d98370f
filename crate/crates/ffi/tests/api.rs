use std::ffi::{CStr, CString};
use std::ptr;

use bhl_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(bhl_last_error()).to_string_lossy().into_owned() }
}

#[test]
fn model1d_cell_through_the_c_interface() {
    unsafe {
        let name = CString::new("model1d").unwrap();
        let mut sc: *mut BhlScenario = ptr::null_mut();
        assert_eq!(bhl_scenario_builtin(name.as_ptr(), &mut sc), BhlStatus::Ok);
        assert_eq!(bhl_scenario_dim(sc), 1);

        let mut cell: *mut BhlCell = ptr::null_mut();
        assert_eq!(bhl_cell_solve(sc, 16, &mut cell), BhlStatus::Ok);
        assert_eq!(bhl_cell_order(cell), 1);
        let (mut re, mut im) = ([0.0f64; 1], [0.0f64; 1]);
        assert_eq!(bhl_cell_effective(cell, re.as_mut_ptr(), im.as_mut_ptr(), 1), BhlStatus::Ok);
        assert!((re[0] - 3f64.sqrt()).abs() < 1e-10 && im[0].abs() < 1e-14);

        let (mut res, mut voigt, mut reuss) = (f64::NAN, f64::NAN, f64::NAN);
        assert_eq!(bhl_cell_diagnostics(cell, &mut res, &mut voigt, &mut reuss), BhlStatus::Ok);
        assert!(res < 1e-12 && voigt > 0.0 && reuss.abs() < 1e-10);

        let mut regime = BhlRegime::Exact;
        assert_eq!(bhl_regime(sc, 2, &mut regime), BhlStatus::Ok);
        assert_eq!(regime, BhlRegime::Improved);

        bhl_cell_free(cell);
        bhl_scenario_free(sc);
    }
}

#[test]
fn config_json_round_trips() {
    unsafe {
        let name = CString::new("hill2d").unwrap();
        let mut sc: *mut BhlScenario = ptr::null_mut();
        assert_eq!(bhl_scenario_builtin(name.as_ptr(), &mut sc), BhlStatus::Ok);
        let mut json: *mut std::ffi::c_char = ptr::null_mut();
        assert_eq!(bhl_scenario_to_json(sc, &mut json), BhlStatus::Ok);
        let mut again: *mut BhlScenario = ptr::null_mut();
        assert_eq!(bhl_scenario_from_json(json, &mut again), BhlStatus::Ok);
        assert_eq!(bhl_scenario_dim(again), 2);
        bhl_string_free(json);
        bhl_scenario_free(again);
        bhl_scenario_free(sc);
    }
}

#[test]
fn failures_set_codes_and_messages() {
    unsafe {
        let bad = CString::new("nope").unwrap();
        let mut sc: *mut BhlScenario = ptr::null_mut();
        assert_eq!(bhl_scenario_builtin(bad.as_ptr(), &mut sc), BhlStatus::InvalidArgument);
        assert!(sc.is_null());
        assert!(last_error().contains("nope"));

        assert_eq!(bhl_scenario_builtin(ptr::null(), &mut sc), BhlStatus::NullPointer);

        let malformed = CString::new(r#"{"name": "x", "lattice": [[1.0]]}"#).unwrap();
        assert_eq!(bhl_scenario_from_json(malformed.as_ptr(), &mut sc), BhlStatus::Validation);
        assert!(last_error().contains("symbol"), "{}", last_error());

        let mut cell: *mut BhlCell = ptr::null_mut();
        assert_eq!(bhl_cell_solve(ptr::null(), 4, &mut cell), BhlStatus::NullPointer);

        bhl_scenario_free(ptr::null_mut());
        bhl_cell_free(ptr::null_mut());
        bhl_string_free(ptr::null_mut());
    }
}

#[test]
fn short_buffers_are_rejected() {
    unsafe {
        let name = CString::new("acoustics2d_real").unwrap();
        let mut sc: *mut BhlScenario = ptr::null_mut();
        assert_eq!(bhl_scenario_builtin(name.as_ptr(), &mut sc), BhlStatus::Ok);
        let mut cell: *mut BhlCell = ptr::null_mut();
        assert_eq!(bhl_cell_solve(sc, 6, &mut cell), BhlStatus::Ok);
        let (mut re, mut im) = ([0.0f64; 3], [0.0f64; 3]);
        assert_eq!(bhl_cell_effective(cell, re.as_mut_ptr(), im.as_mut_ptr(), 3), BhlStatus::InvalidArgument);
        bhl_cell_free(cell);
        bhl_scenario_free(sc);
    }
}

#[test]
fn error_study_returns_json_with_fits() {
    unsafe {
        let name = CString::new("model1d").unwrap();
        let mut sc: *mut BhlScenario = ptr::null_mut();
        assert_eq!(bhl_scenario_builtin(name.as_ptr(), &mut sc), BhlStatus::Ok);
        let variant = CString::new("J1").unwrap();
        let ss = [1.0];
        let eps = [0.125, 0.0625, 0.03125, 0.015625];
        let mut json: *mut std::ffi::c_char = ptr::null_mut();
        let status = bhl_error_study_json(sc, variant.as_ptr(), ss.as_ptr(), 1, eps.as_ptr(), 4, &mut json);
        assert_eq!(status, BhlStatus::Ok, "{}", last_error());
        let text = CStr::from_ptr(json).to_str().unwrap().to_owned();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["entries"].as_array().unwrap().len(), 4);
        assert!(v["fits"][0]["fit"]["slope"].as_f64().unwrap() > 0.5);
        bhl_string_free(json);
        bhl_scenario_free(sc);
    }
}

#[test]
fn generated_header_declares_the_interface() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/bhl.h")).unwrap();
    for symbol in [
        "typedef struct BhlScenario BhlScenario",
        "BHL_STATUS_OK = 0",
        "BHL_REGIME_GENERAL",
        "bhl_scenario_builtin(",
        "bhl_cell_effective(",
        "bhl_error_study_json(",
        "bhl_last_error(",
        "bhl_string_free(",
    ] {
        assert!(header.contains(symbol), "missing {symbol}");
    }
}
