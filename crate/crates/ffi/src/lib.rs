//! C ABI over `ecgtune`.
//!
//! Every function returns an [`EcgStatus`]; on failure the message is
//! available from [`ecg_last_error`] on the same thread. Objects cross the
//! boundary as opaque handles that the caller releases with the matching
//! `*_free`. No function unwinds into C: panics become `ECG_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use ecgtune::bo::expected_improvement;
use ecgtune::ecg::wfdb::{decode_212, encode_212};
use ecgtune::gp::{GpConfig, GpModel};
use ecgtune::metrics::confusion;
use ecgtune::nn::{io, Network};
use ecgtune::space::{HyperParams, SearchSpace};
use ecgtune::Error;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EcgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    Shape = 4,
    Config = 5,
    Data = 6,
    Numerical = 7,
    State = 8,
    Training = 9,
    Io = 10,
    Json = 11,
    Panic = 12,
}

impl From<&Error> for EcgStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Shape(_) => Self::Shape,
            Error::Config(_) => Self::Config,
            Error::Data(_) => Self::Data,
            Error::Numerical(_) => Self::Numerical,
            Error::State(_) => Self::State,
            Error::Training { .. } => Self::Training,
            Error::Io { .. } => Self::Io,
            Error::Json(_) => Self::Json,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Fail(EcgStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(EcgStatus::from(&e), e.to_string())
    }
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> EcgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            EcgStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            EcgStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(EcgStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(EcgStatus::InvalidArgument, msg.into())
}

/// `len` elements at `ptr`; a null pointer is only accepted when `len == 0`.
unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        Ok(&[])
    } else if ptr.is_null() {
        Err(null(what))
    } else {
        Ok(std::slice::from_raw_parts(ptr, len))
    }
}

unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        Ok(&mut [])
    } else if ptr.is_null() {
        Err(null(what))
    } else {
        Ok(std::slice::from_raw_parts_mut(ptr, len))
    }
}

unsafe fn out<'a, T>(ptr: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    ptr.as_mut().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread, or "" after a success.
/// The pointer stays valid until the next call into this library.
#[no_mangle]
pub extern "C" fn ecg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

// ------------------------------------------------------------------ codec

/// Bytes needed to pack `sample_count` samples in format 212.
#[no_mangle]
pub extern "C" fn ecg_212_encoded_len(sample_count: usize) -> usize {
    sample_count / 2 * 3 + (sample_count % 2) * 2
}

/// Unpacks `sample_count` 12-bit samples from `bytes` into `samples`.
///
/// # Safety
/// `bytes` must hold `byte_len` bytes and `samples` room for `sample_count`.
#[no_mangle]
pub unsafe extern "C" fn ecg_212_decode(
    bytes: *const u8,
    byte_len: usize,
    sample_count: usize,
    samples: *mut i16,
) -> EcgStatus {
    guard(|| {
        let input = slice(bytes, byte_len, "bytes")?;
        let dst = slice_mut(samples, sample_count, "samples")?;
        dst.copy_from_slice(&decode_212(input, sample_count)?);
        Ok(())
    })
}

/// Packs samples in [-2048, 2047]. `*written` receives the number of bytes
/// needed; if `capacity` is smaller nothing is written and
/// `ECG_STATUS_BUFFER_TOO_SMALL` is returned.
///
/// # Safety
/// `samples` must hold `sample_count` values and `bytes` room for `capacity`.
#[no_mangle]
pub unsafe extern "C" fn ecg_212_encode(
    samples: *const i16,
    sample_count: usize,
    bytes: *mut u8,
    capacity: usize,
    written: *mut usize,
) -> EcgStatus {
    guard(|| {
        let input = slice(samples, sample_count, "samples")?;
        let written = out(written, "written")?;
        let packed = encode_212(input)?;
        *written = packed.len();
        if capacity < packed.len() {
            return Err(Fail(
                EcgStatus::BufferTooSmall,
                format!("need {} bytes, have {capacity}", packed.len()),
            ));
        }
        slice_mut(bytes, packed.len(), "bytes")?.copy_from_slice(&packed);
        Ok(())
    })
}

// -------------------------------------------------------------- surrogate

/// Fitted Gaussian-process surrogate.
pub struct EcgGp(GpModel);

/// Fits a GP with the default Matérn-5/2 ARD configuration to `n` points of
/// dimension `dim` (row-major `x`) and targets `y`.
///
/// # Safety
/// `x` must hold `n * dim` values, `y` `n` values; `*gp` receives a handle
/// to release with [`ecg_gp_free`].
#[no_mangle]
pub unsafe extern "C" fn ecg_gp_fit(
    x: *const f64,
    n: usize,
    dim: usize,
    y: *const f64,
    seed: u64,
    gp: *mut *mut EcgGp,
) -> EcgStatus {
    guard(|| {
        let gp = out(gp, "gp")?;
        if n == 0 || dim == 0 {
            return Err(invalid("need at least one point of positive dimension"));
        }
        let total = n.checked_mul(dim).ok_or_else(|| invalid("n * dim overflows"))?;
        let points = slice(x, total, "x")?.chunks(dim).map(<[f64]>::to_vec).collect();
        let targets = slice(y, n, "y")?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = GpModel::fit(points, targets, &GpConfig::default(), &mut rng)?;
        *gp = Box::into_raw(Box::new(EcgGp(model)));
        Ok(())
    })
}

/// Posterior mean and variance (original target units) at one point.
///
/// # Safety
/// `gp` must come from [`ecg_gp_fit`]; `x` must hold `dim` values.
#[no_mangle]
pub unsafe extern "C" fn ecg_gp_posterior(
    gp: *const EcgGp,
    x: *const f64,
    dim: usize,
    mean: *mut f64,
    variance: *mut f64,
) -> EcgStatus {
    guard(|| {
        let gp = gp.as_ref().ok_or_else(|| null("gp"))?;
        let (m, v) = gp.0.posterior(slice(x, dim, "x")?)?;
        *out(mean, "mean")? = m;
        *out(variance, "variance")? = v;
        Ok(())
    })
}

/// # Safety
/// `gp` must come from [`ecg_gp_fit`].
#[no_mangle]
pub unsafe extern "C" fn ecg_gp_log_marginal_likelihood(gp: *const EcgGp, value: *mut f64) -> EcgStatus {
    guard(|| {
        let gp = gp.as_ref().ok_or_else(|| null("gp"))?;
        *out(value, "value")? = gp.0.log_marginal_likelihood();
        Ok(())
    })
}

/// # Safety
/// `gp` must be null or come from [`ecg_gp_fit`], and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ecg_gp_free(gp: *mut EcgGp) {
    if !gp.is_null() {
        drop(Box::from_raw(gp));
    }
}

/// Expected improvement below `best` for a Gaussian posterior, minimising.
///
/// # Safety
/// `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ecg_expected_improvement(mean: f64, variance: f64, best: f64, value: *mut f64) -> EcgStatus {
    guard(|| {
        if !(mean.is_finite() && best.is_finite() && variance >= 0.0) {
            return Err(invalid("need finite mean and best, variance >= 0"));
        }
        *out(value, "value")? = expected_improvement(mean, variance, best);
        Ok(())
    })
}

// ----------------------------------------------------------- search space

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EcgHyperParams {
    pub drop_rate: f64,
    pub dense_layers: u32,
    pub conv_layers: u32,
    pub learning_rate: f64,
    pub adam_decay: f64,
}

impl From<HyperParams> for EcgHyperParams {
    fn from(h: HyperParams) -> Self {
        Self {
            drop_rate: h.drop_rate,
            dense_layers: h.dense_layers as u32,
            conv_layers: h.conv_layers as u32,
            learning_rate: h.learning_rate,
            adam_decay: h.adam_decay,
        }
    }
}

impl From<EcgHyperParams> for HyperParams {
    fn from(h: EcgHyperParams) -> Self {
        Self {
            drop_rate: h.drop_rate,
            dense_layers: h.dense_layers as usize,
            conv_layers: h.conv_layers as usize,
            learning_rate: h.learning_rate,
            adam_decay: h.adam_decay,
        }
    }
}

/// Dimension of the default search space.
#[no_mangle]
pub extern "C" fn ecg_space_dim() -> usize {
    SearchSpace::default().dim()
}

/// Maps a point of the default search space to the unit cube.
///
/// # Safety
/// `unit` must have room for `dim` values, `dim == ecg_space_dim()`.
#[no_mangle]
pub unsafe extern "C" fn ecg_space_encode(h: *const EcgHyperParams, unit: *mut f64, dim: usize) -> EcgStatus {
    guard(|| {
        let h = h.as_ref().ok_or_else(|| null("h"))?;
        let space = SearchSpace::default();
        if dim != space.dim() {
            return Err(invalid(format!("dim must be {}", space.dim())));
        }
        slice_mut(unit, dim, "unit")?.copy_from_slice(&space.encode(&HyperParams::from(*h))?);
        Ok(())
    })
}

/// Maps a unit-cube point back to native units (integers rounded).
///
/// # Safety
/// `unit` must hold `dim` values.
#[no_mangle]
pub unsafe extern "C" fn ecg_space_decode(unit: *const f64, dim: usize, h: *mut EcgHyperParams) -> EcgStatus {
    guard(|| {
        let decoded = SearchSpace::default().decode(slice(unit, dim, "unit")?)?;
        *out(h, "h")? = decoded.into();
        Ok(())
    })
}

// ----------------------------------------------------------------- models

/// Trained network loaded from a `model.bin` file.
pub struct EcgModel(Network);

/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `*model` receives a handle
/// to release with [`ecg_model_free`].
#[no_mangle]
pub unsafe extern "C" fn ecg_model_load(path: *const c_char, model: *mut *mut EcgModel) -> EcgStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path).to_str().map_err(|_| invalid("path is not UTF-8"))?;
        let model = out(model, "model")?;
        *model = Box::into_raw(Box::new(EcgModel(io::load(Path::new(path))?)));
        Ok(())
    })
}

/// Input length and class count of a loaded model.
///
/// # Safety
/// `model` must come from [`ecg_model_load`].
#[no_mangle]
pub unsafe extern "C" fn ecg_model_shape(
    model: *const EcgModel,
    input_length: *mut usize,
    class_count: *mut usize,
) -> EcgStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out(input_length, "input_length")? = m.0.spec.input_length;
        *out(class_count, "class_count")? = m.0.spec.class_count;
        Ok(())
    })
}

/// Class probabilities for `count` signals of `length` samples each
/// (row-major), written row-major into `probabilities`.
///
/// # Safety
/// `signals` must hold `count * length` values and `probabilities` room for
/// `count * class_count`.
#[no_mangle]
pub unsafe extern "C" fn ecg_model_predict(
    model: *const EcgModel,
    signals: *const f64,
    count: usize,
    length: usize,
    probabilities: *mut f64,
) -> EcgStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if length == 0 {
            return Err(invalid("length must be positive"));
        }
        let total = count.checked_mul(length).ok_or_else(|| invalid("count * length overflows"))?;
        let rows: Vec<Vec<f64>> = slice(signals, total, "signals")?.chunks(length).map(<[f64]>::to_vec).collect();
        let probs = m.0.predict_proba(&rows, 256)?;
        let classes = m.0.spec.class_count;
        let dst = slice_mut(probabilities, count * classes, "probabilities")?;
        for (row, p) in dst.chunks_mut(classes).zip(&probs) {
            row.copy_from_slice(p);
        }
        Ok(())
    })
}

/// # Safety
/// `model` must be null or come from [`ecg_model_load`], and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ecg_model_free(model: *mut EcgModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

// ---------------------------------------------------------------- metrics

/// Macro-averaged scores and accuracy, all in percent.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EcgScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    /// Nonzero when some class had an empty denominator (scored as 0).
    pub any_undefined: i32,
}

/// Scores `n` predictions over `class_count` classes.
///
/// # Safety
/// `y_true` and `y_pred` must hold `n` labels each.
#[no_mangle]
pub unsafe extern "C" fn ecg_metrics(
    y_true: *const u32,
    y_pred: *const u32,
    n: usize,
    class_count: usize,
    scores: *mut EcgScores,
) -> EcgStatus {
    guard(|| {
        let widen = |s: &[u32]| s.iter().map(|&v| v as usize).collect::<Vec<_>>();
        let t = widen(slice(y_true, n, "y_true")?);
        let p = widen(slice(y_pred, n, "y_pred")?);
        let names: Vec<String> = (0..class_count).map(|i| i.to_string()).collect();
        let cm = confusion(&t, &p, &names)?;
        let m = cm.macro_average();
        let acc = cm.accuracy();
        *out(scores, "scores")? = EcgScores {
            precision: m.precision.value,
            recall: m.recall.value,
            f1: m.f1.value,
            accuracy: acc.value,
            any_undefined: (m.any_undefined() || acc.undefined) as i32,
        };
        Ok(())
    })
}
