//! C ABI over the `qfedsim` models.
//!
//! Fallible calls return a [`QfStatus`] and write results through out
//! pointers. After a failure, [`qf_last_error`] returns a message for the
//! calling thread. Objectives are opaque handles released with
//! [`qf_objective_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use qfedsim::channel::{self, ChannelParams, RateQuery};
use qfedsim::config::{ExperimentKind, RunConfig};
use qfedsim::experiments::{build_objective, run, RunOptions};
use qfedsim::objective::{objective_value, EnergyObjective};
use qfedsim::quantizer::{dequantize, quantize, QuantConfig, QuantizedVector};
use qfedsim::rng::seeded_rng;
use qfedsim::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QfStatus {
    QfOk = 0,
    QfErrNullPointer = 1,
    QfErrValidation = 2,
    QfErrDomain = 3,
    QfErrZeroRate = 4,
    QfErrData = 5,
    QfErrIo = 6,
    QfErrConfig = 7,
    QfErrUtf8 = 8,
    QfErrPanic = 9,
}

/// Link parameters; see [`qf_channel_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct QfChannel {
    pub bandwidth_hz: f64,
    pub noise_psd_dbm_per_hz: f64,
    pub blocklength: u32,
    pub pathloss: f64,
}

impl From<QfChannel> for ChannelParams {
    fn from(c: QfChannel) -> Self {
        ChannelParams {
            bandwidth_hz: c.bandwidth_hz,
            noise_psd_dbm_per_hz: c.noise_psd_dbm_per_hz,
            blocklength: c.blocklength,
            pathloss: c.pathloss,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct QfObjectiveValue {
    pub raw_energy_j: f64,
    pub round_energy_j: f64,
    pub tau_pr_s: f64,
    pub penalized: f64,
    pub violation_s: f64,
    pub rounds_raw: f64,
    pub rate_bpcu: f64,
    /// 1 when the per-round time budget is met.
    pub feasible: i32,
}

/// Opaque energy objective.
pub struct QfObjective(EnergyObjective);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let text = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = text);
}

fn status_of(e: &Error) -> QfStatus {
    match e {
        Error::Validation(_) => QfStatus::QfErrValidation,
        Error::Domain(_) => QfStatus::QfErrDomain,
        Error::ZeroRate => QfStatus::QfErrZeroRate,
        Error::Config(_) => QfStatus::QfErrConfig,
        Error::Io { .. } | Error::Csv(_) | Error::Json(_) => QfStatus::QfErrIo,
        _ => QfStatus::QfErrData,
    }
}

struct Fail(QfStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard<F: FnOnce() -> Result<(), Fail>>(body: F) -> QfStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => QfStatus::QfOk,
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            QfStatus::QfErrPanic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(Fail(QfStatus::QfErrNullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

unsafe fn c_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    non_null(p, name)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(QfStatus::QfErrUtf8, format!("{name} is not valid UTF-8")))
}

/// Message for the last failed call on this thread. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn qf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn qf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Gaussian tail probability `Q(x)`.
#[no_mangle]
pub extern "C" fn qf_q_function(x: f64) -> f64 {
    channel::q_function(x)
}

/// Inverse tail probability for `p` in `(0, 1)`.
///
/// # Safety
/// `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn qf_q_inverse(p: f64, out: *mut f64) -> QfStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = channel::q_inverse(p)?;
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn qf_channel_default() -> QfChannel {
    let c = ChannelParams::default();
    QfChannel {
        bandwidth_hz: c.bandwidth_hz,
        noise_psd_dbm_per_hz: c.noise_psd_dbm_per_hz,
        blocklength: c.blocklength,
        pathloss: c.pathloss,
    }
}

/// Finite-blocklength rate in bits per channel use, floored at zero.
///
/// # Safety
/// `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn qf_achievable_rate(
    channel: QfChannel,
    tx_power_w: f64,
    error_prob: f64,
    gain_sq: f64,
    out: *mut f64,
) -> QfStatus {
    guard(|| {
        non_null(out, "out")?;
        let query = RateQuery {
            tx_power_w,
            error_prob,
            gain_sq,
        };
        *out = channel::achievable_rate(&channel.into(), &query)?;
        Ok(())
    })
}

/// Energy objective with default constants at `bits`.
///
/// # Safety
/// `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn qf_objective_new_default(
    bits: u32,
    out: *mut *mut QfObjective,
) -> QfStatus {
    guard(|| {
        non_null(out, "out")?;
        let obj = build_objective(&RunConfig::default(), bits)?;
        *out = Box::into_raw(Box::new(QfObjective(obj)));
        Ok(())
    })
}

/// Energy objective from TOML config text, using `objective.bits`.
///
/// # Safety
/// `config_toml` must be a NUL-terminated string and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn qf_objective_from_config(
    config_toml: *const c_char,
    out: *mut *mut QfObjective,
) -> QfStatus {
    guard(|| {
        non_null(out, "out")?;
        let cfg = RunConfig::from_toml_str(c_str(config_toml, "config_toml")?)?;
        cfg.validate(ExperimentKind::Optimize)?;
        let obj = build_objective(&cfg, cfg.objective.bits)?;
        *out = Box::into_raw(Box::new(QfObjective(obj)));
        Ok(())
    })
}

/// Evaluates the objective at `(p_tx, q)`.
///
/// # Safety
/// `obj` must come from a constructor above and not be freed; `out` must be
/// valid for a write.
#[no_mangle]
pub unsafe extern "C" fn qf_objective_evaluate(
    obj: *const QfObjective,
    p_tx: f64,
    q: f64,
    out: *mut QfObjectiveValue,
) -> QfStatus {
    guard(|| {
        non_null(obj, "obj")?;
        non_null(out, "out")?;
        let v = objective_value(&(*obj).0, p_tx, q)?;
        *out = QfObjectiveValue {
            raw_energy_j: v.raw_energy_j,
            round_energy_j: v.round_energy_j,
            tau_pr_s: v.tau_pr_s,
            penalized: v.penalized,
            violation_s: v.violation_s,
            rounds_raw: v.rounds_raw,
            rate_bpcu: v.rate_bpcu,
            feasible: v.feasible() as i32,
        };
        Ok(())
    })
}

/// Releases an objective. Null is ignored.
///
/// # Safety
/// `obj` must be null or a live handle; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn qf_objective_free(obj: *mut QfObjective) {
    if !obj.is_null() {
        drop(Box::from_raw(obj));
    }
}

/// Stochastically quantizes `len` values to `bits`-bit integer levels.
///
/// # Safety
/// `values` must be readable and `levels` writable for `len` elements.
#[no_mangle]
pub unsafe extern "C" fn qf_quantize(
    values: *const f64,
    len: usize,
    bits: u32,
    seed: u64,
    levels: *mut i64,
) -> QfStatus {
    guard(|| {
        if len == 0 {
            return Ok(());
        }
        non_null(values, "values")?;
        non_null(levels, "levels")?;
        let input = std::slice::from_raw_parts(values, len);
        let q = quantize(input, QuantConfig::new(bits)?, &mut seeded_rng(seed))?;
        ptr::copy_nonoverlapping(q.levels().as_ptr(), levels, len);
        Ok(())
    })
}

/// Maps integer levels back to reals, `level / 2^(bits-1)`.
///
/// # Safety
/// `levels` must be readable and `values` writable for `len` elements.
#[no_mangle]
pub unsafe extern "C" fn qf_dequantize(
    levels: *const i64,
    len: usize,
    bits: u32,
    values: *mut f64,
) -> QfStatus {
    guard(|| {
        if len == 0 {
            return Ok(());
        }
        non_null(levels, "levels")?;
        non_null(values, "values")?;
        let q = QuantizedVector::from_levels(
            std::slice::from_raw_parts(levels, len).to_vec(),
            QuantConfig::new(bits)?,
        )?;
        ptr::copy_nonoverlapping(dequantize(&q).as_ptr(), values, len);
        Ok(())
    })
}

/// Runs an experiment (`"optimize"`, `"train"`, `"sweep"` or `"bounds"`)
/// from TOML config text and writes its files into `out_dir`.
///
/// # Safety
/// All pointers must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn qf_run_experiment(
    kind: *const c_char,
    config_toml: *const c_char,
    out_dir: *const c_char,
) -> QfStatus {
    guard(|| {
        let kind = match c_str(kind, "kind")? {
            "optimize" => ExperimentKind::Optimize,
            "train" => ExperimentKind::Train,
            "sweep" => ExperimentKind::Sweep,
            "bounds" => ExperimentKind::Bounds,
            other => {
                return Err(Fail(
                    QfStatus::QfErrConfig,
                    format!("unknown experiment {other:?}"),
                ))
            }
        };
        let cfg = RunConfig::from_toml_str(c_str(config_toml, "config_toml")?)?;
        let out = Path::new(c_str(out_dir, "out_dir")?);
        run(cfg, kind, RunOptions::default(), out)?;
        Ok(())
    })
}
