//! C ABI over trained semiseq models and the HRV feature extractors.
//!
//! Every fallible call returns a [`SemiseqStatus`]; on failure the message is
//! available from [`semiseq_last_error`] on the same thread. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ndarray::ArrayView2;
use semiseq::features::{hrv_freq_features, hrv_time_features, BandSpec, HrvFreqFeatures, HrvTimeFeatures, RrSeries};
use semiseq::saliency::average_saliency;
use semiseq::trainer::TrainedModel;
use semiseq::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SemiseqStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Dimension = 5,
    Numeric = 6,
    InsufficientData = 7,
    Panic = 8,
}

/// A trained classifier with its input scaler.
pub struct SemiseqModel {
    inner: TrainedModel,
}

pub const SEMISEQ_HRV_TIME_COUNT: usize = HrvTimeFeatures::NAMES.len();
pub const SEMISEQ_HRV_FREQ_COUNT: usize = HrvFreqFeatures::NAMES.len();

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SemiseqStatus {
    match e {
        Error::InvalidArgument { .. } | Error::SampleRateTooLow { .. } | Error::DegenerateParticipant(_) => {
            SemiseqStatus::InvalidArgument
        }
        Error::DimensionMismatch { .. } | Error::LayerShape { .. } => SemiseqStatus::Dimension,
        Error::InsufficientData { .. } => SemiseqStatus::InsufficientData,
        Error::NonFinite(_) | Error::SingularCovariance { .. } => SemiseqStatus::Numeric,
        Error::Io { .. } => SemiseqStatus::Io,
        Error::Format { .. } | Error::Csv(_) | Error::Json(_) => SemiseqStatus::Format,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (SemiseqStatus, String)>) -> SemiseqStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SemiseqStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            SemiseqStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (SemiseqStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (SemiseqStatus, String) {
    (SemiseqStatus::NullPointer, format!("`{what}` is null"))
}

/// # Safety
/// `data` must point to `windows * steps * features` readable doubles.
unsafe fn window_views<'a>(
    data: *const f64,
    windows: usize,
    steps: usize,
    features: usize,
) -> Result<Vec<ArrayView2<'a, f64>>, (SemiseqStatus, String)> {
    if data.is_null() {
        return Err(null("data"));
    }
    if windows == 0 || steps == 0 || features == 0 {
        return Err((SemiseqStatus::InvalidArgument, "windows, steps and features must be positive".into()));
    }
    let per = steps * features;
    let all = std::slice::from_raw_parts(data, windows * per);
    Ok(all
        .chunks_exact(per)
        .map(|c| ArrayView2::from_shape((steps, features), c).expect("chunk shape"))
        .collect())
}

/// Message of the last failed call on this thread, or null. Valid until the next call.
#[no_mangle]
pub extern "C" fn semiseq_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn semiseq_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a model checkpoint written by `semiseq train`.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn semiseq_model_load(path: *const c_char, out: *mut *mut SemiseqModel) -> SemiseqStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (SemiseqStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
        let inner = TrainedModel::load(Path::new(p)).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(SemiseqModel { inner }));
        Ok(())
    })
}

/// Release a model; null is ignored.
///
/// # Safety
/// `model` must come from [`semiseq_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn semiseq_model_free(model: *mut SemiseqModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of input features the model expects per step.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn semiseq_model_feature_count(model: *const SemiseqModel, out: *mut usize) -> SemiseqStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = m.inner.scaler.mean.len();
        Ok(())
    })
}

/// Stress probabilities for raw (unscaled) windows.
///
/// `data` is `windows × steps × features`, row-major; `out` receives `windows` values.
///
/// # Safety
/// Pointers must be valid for the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn semiseq_model_predict(
    model: *const SemiseqModel,
    data: *const f64,
    windows: usize,
    steps: usize,
    features: usize,
    out: *mut f64,
) -> SemiseqStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let views = window_views(data, windows, steps, features)?;
        let probs = m.inner.predict(&views).map_err(lib_err)?;
        std::slice::from_raw_parts_mut(out, windows).copy_from_slice(&probs);
        Ok(())
    })
}

/// Averaged, max-normalized saliency map over raw windows.
///
/// `out` receives `steps × features` values, row-major.
///
/// # Safety
/// Pointers must be valid for the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn semiseq_model_saliency(
    model: *const SemiseqModel,
    data: *const f64,
    windows: usize,
    steps: usize,
    features: usize,
    out: *mut f64,
) -> SemiseqStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let views = window_views(data, windows, steps, features)?;
        let scaled = views
            .iter()
            .map(|v| m.inner.scaler.transform(*v))
            .collect::<Result<Vec<_>, _>>()
            .map_err(lib_err)?;
        let scaled_views: Vec<_> = scaled.iter().map(|w| w.view()).collect();
        let map = average_saliency(&m.inner.classifier, &scaled_views, m.inner.feature_names.clone(), 1.0).map_err(lib_err)?;
        let dst = std::slice::from_raw_parts_mut(out, steps * features);
        for (d, v) in dst.iter_mut().zip(map.values.iter()) {
            *d = *v;
        }
        Ok(())
    })
}

/// Time-domain HRV features of an RR series (ms); writes [`SEMISEQ_HRV_TIME_COUNT`] values.
///
/// # Safety
/// `rr_ms` must hold `count` doubles and `out` room for the feature count.
#[no_mangle]
pub unsafe extern "C" fn semiseq_hrv_time(rr_ms: *const f64, count: usize, out: *mut f64) -> SemiseqStatus {
    guard(|| {
        if rr_ms.is_null() || out.is_null() {
            return Err(null(if rr_ms.is_null() { "rr_ms" } else { "out" }));
        }
        let (rr, _) = RrSeries::from_raw(std::slice::from_raw_parts(rr_ms, count), 0);
        let f = hrv_time_features(&rr).map_err(lib_err)?;
        std::slice::from_raw_parts_mut(out, SEMISEQ_HRV_TIME_COUNT).copy_from_slice(&f.values());
        Ok(())
    })
}

/// Frequency-domain HRV features with the default bands; writes [`SEMISEQ_HRV_FREQ_COUNT`] values.
///
/// # Safety
/// `rr_ms` must hold `count` doubles and `out` room for the feature count.
#[no_mangle]
pub unsafe extern "C" fn semiseq_hrv_freq(rr_ms: *const f64, count: usize, out: *mut f64) -> SemiseqStatus {
    guard(|| {
        if rr_ms.is_null() || out.is_null() {
            return Err(null(if rr_ms.is_null() { "rr_ms" } else { "out" }));
        }
        let (rr, _) = RrSeries::from_raw(std::slice::from_raw_parts(rr_ms, count), 0);
        let f = hrv_freq_features(&rr, &BandSpec::default()).map_err(lib_err)?;
        std::slice::from_raw_parts_mut(out, SEMISEQ_HRV_FREQ_COUNT).copy_from_slice(&f.values());
        Ok(())
    })
}

/// Name of the `index`-th time-domain (`domain = 0`) or frequency-domain (`1`) HRV feature.
/// Returns null when out of range.
#[no_mangle]
pub extern "C" fn semiseq_hrv_feature_name(domain: u32, index: usize) -> *const c_char {
    const TIME: [&CStr; SEMISEQ_HRV_TIME_COUNT] = [
        c"mean_nni", c"sdnn", c"sdsd", c"rmssd", c"median_nni", c"nni_50", c"pnni_50", c"nni_20", c"pnni_20",
        c"range_nni", c"cvsd", c"cvnni", c"mean_hr", c"max_hr", c"min_hr", c"std_hr",
    ];
    const FREQ: [&CStr; SEMISEQ_HRV_FREQ_COUNT] = [c"total_power", c"vlf", c"lf", c"hf", c"lf_hf_ratio", c"lfnu", c"hfnu"];
    let table: &[&CStr] = match domain {
        0 => &TIME,
        1 => &FREQ,
        _ => return ptr::null(),
    };
    table.get(index).map_or(ptr::null(), |c| c.as_ptr())
}
