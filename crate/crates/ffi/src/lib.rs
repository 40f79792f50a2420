//! C ABI over the icubench toolkit.
//!
//! Every fallible entry point returns an [`IcbStatus`]; on failure the
//! message is kept per thread and read with [`icb_last_error`]. Handles are
//! opaque, created by `*_new`/`icb_run` style calls and released with the
//! matching `*_free`. Panics never cross the boundary: they surface as
//! [`IcbStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use icubench::metrics::{auprc, auroc};
use icubench::run::{run, RunConfig, RunError, RunOutcome, Stage};
use icubench::severity::saps2_mortality;
use icubench::synth::{generate_to_dir, SynthConfig};

/// Status codes. Config, data and stage failures share the command-line
/// exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IcbStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Data = 3,
    Stage = 4,
    InvalidArgument = 5,
    Panic = 6,
}

/// Validated run configuration together with its source text.
pub struct IcbRunConfig {
    config: RunConfig,
    text: String,
}

/// Outcome of a completed run.
pub struct IcbRunResult {
    outcome: RunOutcome,
    models: Vec<CString>,
    tasks: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).expect("nul bytes removed"));
}

fn fail(status: IcbStatus, msg: impl Into<String>) -> IcbStatus {
    set_error(msg);
    status
}

fn from_run_error(e: RunError) -> IcbStatus {
    let status = match e.exit_code() {
        2 => IcbStatus::Config,
        3 => IcbStatus::Data,
        _ => IcbStatus::Stage,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> IcbStatus) -> IcbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == IcbStatus::Ok {
                set_error("");
            }
            s
        }
        Err(p) => {
            let msg = p.downcast_ref::<&str>().map(|s| s.to_string()).or_else(|| p.downcast_ref::<String>().cloned()).unwrap_or_default();
            fail(IcbStatus::Panic, format!("internal panic: {msg}"))
        }
    }
}

/// # Safety
/// `p` is null or a nul-terminated string valid for the call.
unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, IcbStatus> {
    if p.is_null() {
        return Err(fail(IcbStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(IcbStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Copies `s` into `buf` (truncating, always nul-terminated when
/// `len > 0`) and returns the full length excluding the terminator.
///
/// # Safety
/// `buf` is null or valid for `len` bytes.
unsafe fn copy_out(s: &CStr, buf: *mut c_char, len: usize) -> usize {
    let bytes = s.to_bytes();
    if !buf.is_null() && len > 0 {
        let n = bytes.len().min(len - 1);
        ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
        *buf.add(n) = 0;
    }
    bytes.len()
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn icb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf`. Returns the
/// message length; call with a null `buf` to size the buffer.
///
/// # Safety
/// `buf` is null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn icb_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| copy_out(&e.borrow(), buf, len))
}

/// # Safety
/// `scores` and `labels` are valid for `n` elements, `out` for one.
unsafe fn binary_metric(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    out: *mut f64,
    f: fn(&[f64], &[bool]) -> Result<f64, icubench::metrics::MetricError>,
) -> IcbStatus {
    guard(|| {
        if scores.is_null() || labels.is_null() || out.is_null() {
            return fail(IcbStatus::NullPointer, "scores, labels and out must be non-null");
        }
        let s = std::slice::from_raw_parts(scores, n);
        let l: Vec<bool> = std::slice::from_raw_parts(labels, n).iter().map(|&b| b != 0).collect();
        match f(s, &l) {
            Ok(v) => {
                *out = v;
                IcbStatus::Ok
            }
            Err(e) => fail(IcbStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Area under the ROC curve of `scores` against 0/1 `labels`; ties count
/// one half.
///
/// # Safety
/// `scores` and `labels` are valid for `n` elements, `out` for one.
#[no_mangle]
pub unsafe extern "C" fn icb_auroc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> IcbStatus {
    binary_metric(scores, labels, n, out, auroc)
}

/// Average precision of `scores` against 0/1 `labels`.
///
/// # Safety
/// `scores` and `labels` are valid for `n` elements, `out` for one.
#[no_mangle]
pub unsafe extern "C" fn icb_auprc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> IcbStatus {
    binary_metric(scores, labels, n, out, auprc)
}

/// Predicted hospital mortality for a SAPS-II total score.
#[no_mangle]
pub extern "C" fn icb_saps2_mortality(score: u32) -> f64 {
    saps2_mortality(score)
}

/// Writes synthetic raw tables and `ground_truth.csv` to `out_dir`.
/// `config_toml` is null for the defaults.
///
/// # Safety
/// `config_toml` is null or a valid string; `out_dir` is a valid string.
#[no_mangle]
pub unsafe extern "C" fn icb_synth_generate(config_toml: *const c_char, out_dir: *const c_char) -> IcbStatus {
    guard(|| {
        let dir = match str_arg(out_dir, "out_dir") {
            Ok(d) => PathBuf::from(d),
            Err(s) => return s,
        };
        let cfg: SynthConfig = if config_toml.is_null() {
            SynthConfig::default()
        } else {
            let text = match str_arg(config_toml, "config_toml") {
                Ok(t) => t,
                Err(s) => return s,
            };
            match toml::from_str(text) {
                Ok(c) => c,
                Err(e) => return fail(IcbStatus::Config, e.to_string()),
            }
        };
        if let Err(e) = cfg.validate() {
            return fail(IcbStatus::Config, e.to_string());
        }
        match generate_to_dir(&cfg, &dir) {
            Ok(_) => IcbStatus::Ok,
            Err(e) => fail(IcbStatus::Stage, e.to_string()),
        }
    })
}

/// Parses and validates a run config. On success `*out` owns a handle to
/// release with [`icb_config_free`].
///
/// # Safety
/// `toml_text` is a valid string; `out` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn icb_config_new(toml_text: *const c_char, out: *mut *mut IcbRunConfig) -> IcbStatus {
    guard(|| {
        if out.is_null() {
            return fail(IcbStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let text = match str_arg(toml_text, "toml_text") {
            Ok(t) => t,
            Err(s) => return s,
        };
        match RunConfig::from_toml_str(text) {
            Ok(config) => {
                *out = Box::into_raw(Box::new(IcbRunConfig { config, text: text.to_string() }));
                IcbStatus::Ok
            }
            Err(e) => from_run_error(e),
        }
    })
}

/// Replaces the evaluation seeds with `seed` (and reseeds synthetic data).
///
/// # Safety
/// `cfg` is a live handle from [`icb_config_new`].
#[no_mangle]
pub unsafe extern "C" fn icb_config_set_seed(cfg: *mut IcbRunConfig, seed: u64) -> IcbStatus {
    guard(|| match cfg.as_mut() {
        Some(c) => {
            c.config.override_seed(seed);
            IcbStatus::Ok
        }
        None => fail(IcbStatus::NullPointer, "cfg is null"),
    })
}

/// # Safety
/// `cfg` is null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn icb_config_free(cfg: *mut IcbRunConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs the stage chain into `out_dir` up to `stage` (null for the full
/// run including the report bundle). On success `*out` owns a result handle
/// to release with [`icb_result_free`].
///
/// # Safety
/// `cfg` is a live handle, `out_dir` a valid string, `stage` null or a
/// valid string, `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn icb_run(cfg: *const IcbRunConfig, out_dir: *const c_char, stage: *const c_char, out: *mut *mut IcbRunResult) -> IcbStatus {
    guard(|| {
        if out.is_null() {
            return fail(IcbStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let Some(c) = cfg.as_ref() else {
            return fail(IcbStatus::NullPointer, "cfg is null");
        };
        let dir = match str_arg(out_dir, "out_dir") {
            Ok(d) => PathBuf::from(d),
            Err(s) => return s,
        };
        let stop = if stage.is_null() {
            Stage::Report
        } else {
            match str_arg(stage, "stage").map(Stage::parse) {
                Ok(Some(s)) => s,
                Ok(None) => return fail(IcbStatus::InvalidArgument, "unknown stage"),
                Err(s) => return s,
            }
        };
        match run(&c.config, &c.text, &dir, stop) {
            Ok(outcome) => {
                let cstr = |s: &str| CString::new(s).expect("names have no nul bytes");
                let models = outcome.reports.iter().map(|r| cstr(&r.model)).collect();
                let tasks = outcome.reports.iter().map(|r| cstr(r.task.name())).collect();
                *out = Box::into_raw(Box::new(IcbRunResult { outcome, models, tasks }));
                IcbStatus::Ok
            }
            Err(e) => from_run_error(e),
        }
    })
}

/// Number of (task, model, seed) reports in a result.
///
/// # Safety
/// `res` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn icb_result_len(res: *const IcbRunResult) -> usize {
    res.as_ref().map_or(0, |r| r.outcome.reports.len())
}

/// Model name of report `index`, borrowed from the handle.
///
/// # Safety
/// `res` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn icb_result_model(res: *const IcbRunResult, index: usize) -> *const c_char {
    res.as_ref().and_then(|r| r.models.get(index)).map_or(ptr::null(), |s| s.as_ptr())
}

/// Task name of report `index`, borrowed from the handle.
///
/// # Safety
/// `res` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn icb_result_task(res: *const IcbRunResult, index: usize) -> *const c_char {
    res.as_ref().and_then(|r| r.tasks.get(index)).map_or(ptr::null(), |s| s.as_ptr())
}

/// Mean and population std over folds of `metric` ("auroc", "auprc" or
/// "mse") in report `index`. Undefined values are NaN.
///
/// # Safety
/// `res` is a live handle, `metric` a valid string, `mean` and `std`
/// valid for one write each.
#[no_mangle]
pub unsafe extern "C" fn icb_result_metric(res: *const IcbRunResult, index: usize, metric: *const c_char, mean: *mut f64, std: *mut f64) -> IcbStatus {
    guard(|| {
        let Some(r) = res.as_ref() else {
            return fail(IcbStatus::NullPointer, "res is null");
        };
        if mean.is_null() || std.is_null() {
            return fail(IcbStatus::NullPointer, "mean and std must be non-null");
        }
        let name = match str_arg(metric, "metric") {
            Ok(n) => n,
            Err(s) => return s,
        };
        let Some(report) = r.outcome.reports.get(index) else {
            return fail(IcbStatus::InvalidArgument, format!("report index {index} out of range"));
        };
        match report.metric(name) {
            Some(m) => {
                *mean = m.mean;
                *std = m.std;
                IcbStatus::Ok
            }
            None => fail(IcbStatus::InvalidArgument, format!("report has no metric {name}")),
        }
    })
}

/// # Safety
/// `res` is null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn icb_result_free(res: *mut IcbRunResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}
