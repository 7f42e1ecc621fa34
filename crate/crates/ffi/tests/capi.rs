use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use privlms_ffi::*;

fn last_error() -> String {
    let p = privlms_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn preset_roundtrip_and_run() {
    let name = CString::new("desk").unwrap();
    let ov = CString::new(r#"{"runs": 8, "iterations": 20, "steady_state": false}"#).unwrap();
    let mut cfg = ptr::null_mut();
    unsafe {
        assert_eq!(privlms_config_from_preset(name.as_ptr(), ov.as_ptr(), &mut cfg), PrivlmsStatus::Ok);
        let json = privlms_config_to_json(cfg);
        let text = CStr::from_ptr(json).to_str().unwrap().to_owned();
        privlms_string_free(json);
        assert!(text.contains("\"iterations\": 20"));

        let mut again = ptr::null_mut();
        let c = CString::new(text).unwrap();
        assert_eq!(privlms_config_from_json(c.as_ptr(), &mut again), PrivlmsStatus::Ok);
        privlms_config_free(again);

        let mut bundle = ptr::null_mut();
        assert_eq!(privlms_run(cfg, false, &mut bundle), PrivlmsStatus::Ok);
        assert_eq!(privlms_bundle_family_count(bundle), 3);
        assert_eq!(privlms_bundle_iterations(bundle), 20);
        let label = privlms_bundle_family_label(bundle, 1);
        assert_eq!(CStr::from_ptr(label).to_str().unwrap(), "atp0");
        privlms_string_free(label);
        assert!(privlms_bundle_family_label(bundle, 9).is_null());

        let mut buf = vec![0.0; 20];
        assert_eq!(
            privlms_bundle_curve(bundle, 0, PrivlmsColumn::MsdThDb, buf.as_mut_ptr(), buf.len()),
            PrivlmsStatus::Ok
        );
        assert!(buf.iter().all(|v| v.is_finite()));
        assert_eq!(
            privlms_bundle_curve(bundle, 0, PrivlmsColumn::MsdEmpDb, buf.as_mut_ptr(), 5),
            PrivlmsStatus::OutOfRange
        );
        assert!(last_error().contains("buffer"));

        let summary = privlms_bundle_summary_json(bundle);
        let doc: serde_json::Value = serde_json::from_str(CStr::from_ptr(summary).to_str().unwrap()).unwrap();
        privlms_string_free(summary);
        assert_eq!(doc["families"].as_array().unwrap().len(), 3);

        let dir = tempfile::tempdir().unwrap();
        let d = CString::new(dir.path().to_str().unwrap()).unwrap();
        assert_eq!(privlms_bundle_emit(bundle, d.as_ptr()), PrivlmsStatus::Ok);
        assert!(dir.path().join("curves_atp0.csv").is_file());

        privlms_bundle_free(bundle);
        privlms_config_free(cfg);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let mut cfg = ptr::null_mut();
    unsafe {
        let bad = CString::new("ring").unwrap();
        assert_eq!(privlms_config_from_preset(bad.as_ptr(), ptr::null(), &mut cfg), PrivlmsStatus::Config);
        assert!(last_error().starts_with("config"));
        assert!(cfg.is_null());
        assert_eq!(
            privlms_config_from_preset(ptr::null(), ptr::null(), &mut cfg),
            PrivlmsStatus::NullArgument
        );
        let typo = CString::new(r#"{"rhoo": [0.1]}"#).unwrap();
        let line = CString::new("line").unwrap();
        assert_eq!(privlms_config_from_preset(line.as_ptr(), typo.as_ptr(), &mut cfg), PrivlmsStatus::Config);
        assert_eq!(privlms_run(ptr::null(), false, ptr::null_mut()), PrivlmsStatus::NullArgument);
    }
}

#[test]
fn power_formulas() {
    // U = diag(1, 2), W = diag(2, 3), δ = 1: ‖U‖² / (tr W − δ) = 5 / 4
    let u = [1.0, 0.0, 0.0, 2.0];
    let w = [2.0, 0.0, 0.0, 3.0];
    let mut out = 0.0;
    unsafe {
        assert_eq!(privlms_sufficient_power(u.as_ptr(), w.as_ptr(), 2, 1.0, &mut out), PrivlmsStatus::Ok);
        assert!((out - 1.25).abs() < 1e-15);
        assert_eq!(privlms_steady_state_power(w.as_ptr(), 2, 1.0, &mut out), PrivlmsStatus::Ok);
        assert!((out - 13.0 / 4.0).abs() < 1e-15);
        assert_eq!(privlms_steady_state_power(w.as_ptr(), 2, 5.0, &mut out), PrivlmsStatus::Infeasible);
        assert_eq!(
            privlms_sufficient_power(ptr::null(), w.as_ptr(), 2, 1.0, &mut out),
            PrivlmsStatus::NullArgument
        );
    }
}

#[test]
fn header_is_valid_c() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = root.join("include").join("privlms.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in [
        "privlms_config_from_preset",
        "privlms_run",
        "privlms_bundle_curve",
        "privlms_sufficient_power",
        "PRIVLMS_STATUS_OK",
        "typedef struct PrivlmsBundle PrivlmsBundle",
    ] {
        assert!(text.contains(sym), "header lacks {sym}");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        "#include \"privlms.h\"\n\
         int probe(void) {\n\
           PrivlmsConfig *cfg = 0;\n\
           PrivlmsStatus s = privlms_config_from_preset(\"line\", 0, &cfg);\n\
           double out;\n\
           double w[4] = {1, 0, 0, 1};\n\
           s = privlms_steady_state_power(w, 2, 0.5, &out);\n\
           privlms_config_free(cfg);\n\
           return s == PRIVLMS_STATUS_OK ? 0 : 1;\n\
         }\n",
    )
    .unwrap();
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(root.join("include"))
        .arg(&src)
        .status();
    match status {
        Ok(s) => assert!(s.success(), "header failed to compile"),
        Err(_) => eprintln!("no C compiler found; syntax check skipped"),
    }
}
