use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use icubench_ffi::*;

fn last_error() -> String {
    let n = unsafe { icb_last_error(ptr::null_mut(), 0) };
    let mut buf = vec![0 as std::ffi::c_char; n + 1];
    unsafe { icb_last_error(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

#[test]
fn metrics_match_hand_computed_values() {
    let scores = [0.1, 0.4, 0.35, 0.8];
    let labels = [0u8, 0, 1, 1];
    let mut v = f64::NAN;
    assert_eq!(unsafe { icb_auroc(scores.as_ptr(), labels.as_ptr(), 4, &mut v) }, IcbStatus::Ok);
    assert!((v - 0.75).abs() < 1e-12);
    // Ranking 1,0,1,0 from the top: precision 1 at the first hit, 2/3 at the second.
    assert_eq!(unsafe { icb_auprc(scores.as_ptr(), labels.as_ptr(), 4, &mut v) }, IcbStatus::Ok);
    assert!((v - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
}

#[test]
fn errors_set_status_and_message() {
    let labels = [1u8, 1];
    let mut v = 0.0;
    assert_eq!(unsafe { icb_auroc(ptr::null(), labels.as_ptr(), 2, &mut v) }, IcbStatus::NullPointer);
    assert!(last_error().contains("null"));
    let scores = [0.2, 0.3];
    assert_eq!(unsafe { icb_auroc(scores.as_ptr(), labels.as_ptr(), 2, &mut v) }, IcbStatus::InvalidArgument);
    assert!(!last_error().is_empty());
    assert_eq!(unsafe { icb_auroc(scores.as_ptr(), [0u8, 1].as_ptr(), 2, &mut v) }, IcbStatus::Ok);
    assert_eq!(last_error(), "");

    let bad = CString::new("feature_set = \"A\"\nwindow_hours = 48\ntasks = [\"mort_2d\"]\nmodels = [\"saps2\"]\nseeds = [1]\n[data]\ndir = \"x\"\n").unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { icb_config_new(bad.as_ptr(), &mut cfg) }, IcbStatus::Config);
    assert!(cfg.is_null());
    assert!(last_error().contains("mort_2d"));
    unsafe { icb_config_free(cfg) };
}

#[test]
fn saps2_mortality_anchor_points() {
    assert!((icb_saps2_mortality(0) - 4.25e-4).abs() < 2e-5);
    assert!((icb_saps2_mortality(33) - 0.140).abs() < 0.005);
    assert_eq!(unsafe { CStr::from_ptr(icb_version()) }.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn synthetic_run_through_handles() {
    let dir = tempfile::tempdir().unwrap();
    let text = CString::new(
        r#"
feature_set = "A"
window_hours = 24
tasks = ["in_hospital"]
models = ["saps2", "sofa"]
seeds = [1]
folds = 3
[data.synth]
n_patients = 300
scope = "core"
horizon_hours = 24
"#,
    )
    .unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { icb_config_new(text.as_ptr(), &mut cfg) }, IcbStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { icb_config_set_seed(cfg, 4) }, IcbStatus::Ok);
    let out = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut res = ptr::null_mut();
    assert_eq!(unsafe { icb_run(cfg, out.as_ptr(), ptr::null(), &mut res) }, IcbStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { icb_result_len(res) }, 2);
    let model = unsafe { CStr::from_ptr(icb_result_model(res, 1)) };
    assert_eq!(model.to_str().unwrap(), "sofa");
    assert_eq!(unsafe { CStr::from_ptr(icb_result_task(res, 0)) }.to_str().unwrap(), "in_hospital");
    assert!(unsafe { icb_result_model(res, 9) }.is_null());
    let (mut mean, mut std) = (0.0, 0.0);
    let auroc = CString::new("auroc").unwrap();
    assert_eq!(unsafe { icb_result_metric(res, 0, auroc.as_ptr(), &mut mean, &mut std) }, IcbStatus::Ok);
    assert!((0.0..=1.0).contains(&mean) && std >= 0.0);
    let mse = CString::new("mse").unwrap();
    assert_eq!(unsafe { icb_result_metric(res, 0, mse.as_ptr(), &mut mean, &mut std) }, IcbStatus::InvalidArgument);
    assert!(dir.path().join("reports/metrics.csv").exists());
    unsafe {
        icb_result_free(res);
        icb_config_free(cfg);
    }

    let bad_stage = CString::new("nope").unwrap();
    let mut cfg = ptr::null_mut();
    unsafe { icb_config_new(text.as_ptr(), &mut cfg) };
    assert_eq!(unsafe { icb_run(cfg, out.as_ptr(), bad_stage.as_ptr(), &mut res) }, IcbStatus::InvalidArgument);
    unsafe { icb_config_free(cfg) };
}

#[test]
fn synth_generate_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = CString::new(dir.path().to_str().unwrap()).unwrap();
    let cfg = CString::new("n_patients = 50\nscope = \"core\"\nhorizon_hours = 24\n").unwrap();
    assert_eq!(unsafe { icb_synth_generate(cfg.as_ptr(), out.as_ptr()) }, IcbStatus::Ok, "{}", last_error());
    assert!(dir.path().join("ground_truth.csv").exists());
    let bad = CString::new("n_patients = \"many\"").unwrap();
    assert_eq!(unsafe { icb_synth_generate(bad.as_ptr(), out.as_ptr()) }, IcbStatus::Config);
}

fn target_profile_dir() -> PathBuf {
    // The test binary lives in <target>/<profile>/deps.
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn c_program_compiles_and_links_against_header() {
    let crate_dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let lib = target_profile_dir().join("libicubench_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let tmp = tempfile::tempdir().unwrap();
    let exe = tmp.path().join("smoke");
    let status = Command::new("cc")
        .arg(crate_dir.join("tests/smoke.c"))
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("a C compiler is on PATH");
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "smoke exited {:?}", out.status.code());
    assert!(String::from_utf8_lossy(&out.stdout).contains("ok"));
}
