//! C ABI for loading a checkpoint, estimating pitch and scoring tracks.
//!
//! Every fallible function returns an [`RmvpeStatus`]; on failure a message
//! is available from [`rmvpe_last_error`] on the same thread. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use rmvpe::audio_io::{PitchTrack, Waveform};
use rmvpe::model::load_checkpoint;
use rmvpe::pipeline::Predictor;
use rmvpe::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RmvpeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Checkpoint = 5,
    Domain = 6,
    Shape = 7,
    NonFinite = 8,
    /// A Rust panic was caught at the boundary.
    Internal = 9,
}

/// A loaded model with its feature front end.
pub struct RmvpeModel {
    predictor: Predictor,
}

/// An estimated pitch track: Hz per frame, `0` where unvoiced.
pub struct RmvpePitchTrack {
    track: PitchTrack,
    confidence: Vec<f64>,
}

/// Scores of an estimate against a reference.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RmvpeEvalResult {
    pub rpa: f64,
    pub rca: f64,
    pub oa: f64,
    pub ref_voiced: usize,
    pub ref_unvoiced: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> RmvpeStatus {
    match e {
        Error::Io { .. } => RmvpeStatus::Io,
        Error::Format(_) | Error::UnsupportedFormat(_) | Error::LabelParse { .. } => {
            RmvpeStatus::Format
        }
        Error::InvalidArgument(_) | Error::Config(_) => RmvpeStatus::InvalidArgument,
        Error::Domain(_) | Error::OutOfRange { .. } => RmvpeStatus::Domain,
        Error::Shape(_) => RmvpeStatus::Shape,
        Error::Checkpoint(_) => RmvpeStatus::Checkpoint,
        Error::NonFinite(_) => RmvpeStatus::NonFinite,
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), (RmvpeStatus, String)>) -> RmvpeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RmvpeStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal error: panic caught at the C boundary");
            RmvpeStatus::Internal
        }
    }
}

fn lift(e: Error) -> (RmvpeStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (RmvpeStatus, String) {
    (RmvpeStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `p` must be null or point to `len` readable values.
unsafe fn slice<'a, T>(
    p: *const T,
    len: usize,
    what: &str,
) -> Result<&'a [T], (RmvpeStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message for the last failed call on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rmvpe_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rmvpe_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint from a UTF-8 path into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn rmvpe_model_load(
    path: *const c_char,
    out: *mut *mut RmvpeModel,
) -> RmvpeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path).to_str().map_err(|_| {
            (
                RmvpeStatus::InvalidArgument,
                "path is not valid UTF-8".to_string(),
            )
        })?;
        let model = load_checkpoint(path).map_err(lift)?;
        let predictor = Predictor::new(model).map_err(lift)?;
        *out = Box::into_raw(Box::new(RmvpeModel { predictor }));
        Ok(())
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must come from [`rmvpe_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rmvpe_model_free(model: *mut RmvpeModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Frame hop of the model's output in seconds.
///
/// # Safety
/// `model` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn rmvpe_model_hop_seconds(model: *const RmvpeModel) -> f64 {
    model.as_ref().map_or(0.0, |m| m.predictor.hop_seconds())
}

/// Estimates pitch for mono `samples` at `sample_rate` Hz. Audio at other
/// rates is resampled. Frames whose confidence is below `threshold` are
/// reported as unvoiced.
///
/// # Safety
/// `model` must be a live handle, `samples` must point to `len` floats and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rmvpe_predict(
    model: *const RmvpeModel,
    samples: *const f32,
    len: usize,
    sample_rate: u32,
    threshold: f64,
    out: *mut *mut RmvpePitchTrack,
) -> RmvpeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let samples = slice(samples, len, "samples")?;
        if !(0.0..=1.0).contains(&threshold) {
            return Err((
                RmvpeStatus::InvalidArgument,
                format!("threshold must be in [0, 1], got {threshold}"),
            ));
        }
        let audio = Waveform::new(samples.to_vec(), sample_rate).map_err(lift)?;
        let prediction = model.predictor.predict(&audio, threshold).map_err(lift)?;
        let confidence = prediction
            .raw_rows(model.predictor.grid())
            .into_iter()
            .map(|(_, _, c)| c)
            .collect();
        *out = Box::into_raw(Box::new(RmvpePitchTrack {
            track: prediction.track,
            confidence,
        }));
        Ok(())
    })
}

/// Number of frames; 0 for null.
///
/// # Safety
/// `track` must be null or a live track handle.
#[no_mangle]
pub unsafe extern "C" fn rmvpe_pitch_track_len(track: *const RmvpePitchTrack) -> usize {
    track.as_ref().map_or(0, |t| t.track.len())
}

/// Seconds between frames; 0 for null.
///
/// # Safety
/// `track` must be null or a live track handle.
#[no_mangle]
pub unsafe extern "C" fn rmvpe_pitch_track_hop_seconds(track: *const RmvpePitchTrack) -> f64 {
    track.as_ref().map_or(0.0, |t| t.track.hop_seconds())
}

/// Borrowed pointer to `len` frequencies in Hz; valid until the track is
/// freed. Null for a null or empty track.
///
/// # Safety
/// `track` must be null or a live track handle.
#[no_mangle]
pub unsafe extern "C" fn rmvpe_pitch_track_frequencies(
    track: *const RmvpePitchTrack,
) -> *const f64 {
    match track.as_ref() {
        Some(t) if !t.track.frames().is_empty() => t.track.frames().as_ptr(),
        _ => ptr::null(),
    }
}

/// Borrowed pointer to `len` peak salience values (pre-threshold voicing
/// confidence); valid until the track is freed.
///
/// # Safety
/// `track` must be null or a live track handle.
#[no_mangle]
pub unsafe extern "C" fn rmvpe_pitch_track_confidence(track: *const RmvpePitchTrack) -> *const f64 {
    match track.as_ref() {
        Some(t) if !t.confidence.is_empty() => t.confidence.as_ptr(),
        _ => ptr::null(),
    }
}

/// Releases a track; null is ignored.
///
/// # Safety
/// `track` must come from [`rmvpe_predict`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rmvpe_pitch_track_free(track: *mut RmvpePitchTrack) {
    if !track.is_null() {
        drop(Box::from_raw(track));
    }
}

/// `1200 log2(hz / 10)`; fails for non-positive or non-finite input.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rmvpe_hz_to_cents(hz: f64, out: *mut f64) -> RmvpeStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = rmvpe::pitch_codec::hz_to_cents(hz).map_err(lift)?;
        Ok(())
    })
}

/// `10 * 2^(cents / 1200)`.
#[no_mangle]
pub extern "C" fn rmvpe_cents_to_hz(cents: f64) -> f64 {
    rmvpe::pitch_codec::cents_to_hz(cents)
}

/// Scores an estimated track against a reference sampled on the same hop.
/// Frequencies are in Hz with `0` for unvoiced frames; unequal lengths are
/// truncated to the shorter.
///
/// # Safety
/// `reference_hz` and `estimate_hz` must point to the given number of
/// doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rmvpe_evaluate(
    reference_hz: *const f64,
    reference_len: usize,
    estimate_hz: *const f64,
    estimate_len: usize,
    hop_seconds: f64,
    out: *mut RmvpeEvalResult,
) -> RmvpeStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let reference = PitchTrack::new(
            hop_seconds,
            slice(reference_hz, reference_len, "reference_hz")?.to_vec(),
        )
        .map_err(lift)?;
        let estimate = PitchTrack::new(
            hop_seconds,
            slice(estimate_hz, estimate_len, "estimate_hz")?.to_vec(),
        )
        .map_err(lift)?;
        let r = rmvpe::metrics::evaluate(&reference, &estimate).map_err(lift)?;
        *out = RmvpeEvalResult {
            rpa: r.rpa,
            rca: r.rca,
            oa: r.oa,
            ref_voiced: r.counts.ref_voiced,
            ref_unvoiced: r.counts.ref_unvoiced,
        };
        Ok(())
    })
}
