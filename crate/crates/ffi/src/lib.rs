//! C ABI for the fingertip detection cascade.
//!
//! The surface is deliberately small: load a trained models directory into
//! an opaque handle, run the production pipeline (attention-based hand
//! re-detection plus two-keypoint finger regression) on interleaved 8-bit
//! RGB frames, and free the handle. Every entry point catches unwinds and
//! reports them as [`FcStatus::Internal`] instead of crossing the ABI.
//!
//! A models handle is immutable after loading; detection keeps all state on
//! the stack, so one handle may serve concurrent calls from any number of
//! threads until it is freed.

use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

use fingercascade::cascade::{run_cascade, FingerStrategy, HandStrategy, TrainedModels};
use fingercascade::error::Error;
use fingercascade::image::Image;

/// Result codes for every fallible call. `fc_status_message` renders them.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FcStatus {
    /// The call succeeded.
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// The models directory path was not valid UTF-8.
    InvalidPath = 2,
    /// A weights file or the descriptor is missing from the directory.
    MissingModel = 3,
    /// The directory contents failed validation or deserialization.
    CorruptModel = 4,
    /// Image dimensions were zero or overflowed the buffer size.
    InvalidImage = 5,
    /// The cascade itself failed on this frame.
    DetectFailed = 6,
    /// A panic was caught at the ABI boundary; indicates a library bug.
    Internal = 7,
}

/// Opaque handle over a loaded model set.
pub struct FcModels {
    inner: TrainedModels,
}

/// One detection, every coordinate in pixels of the input frame.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FcDetection {
    /// Hand box corners, ordered so x1 <= x2 and y1 <= y2.
    pub hand_x1: f64,
    pub hand_y1: f64,
    pub hand_x2: f64,
    pub hand_y2: f64,
    pub fingertip_x: f64,
    pub fingertip_y: f64,
    /// Index finger joint; always produced by the two-keypoint regressor.
    pub joint_x: f64,
    pub joint_y: f64,
    /// Wall time of the hand-net forward passes.
    pub hand_ms: f64,
    /// Wall time of the finger-net forward pass.
    pub finger_ms: f64,
    /// Resampling, centralization, cropping, and coordinate mapping.
    pub processing_ms: f64,
    pub total_ms: f64,
    /// True when a degenerate hand regression needed repair.
    pub hand_repaired: bool,
}

fn load_status(err: &Error) -> FcStatus {
    match err {
        Error::MissingInput { .. } => FcStatus::MissingModel,
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
            FcStatus::MissingModel
        }
        _ => FcStatus::CorruptModel,
    }
}

/// Loads a models directory produced by the trainer (four weight files plus
/// a JSON descriptor) and writes a fresh handle to `out`.
///
/// On any status other than `FC_STATUS_OK`, `*out` is left untouched. The
/// handle must be released with [`fc_models_free`].
///
/// # Safety
/// `dir` must point to a nul-terminated string and `out` to a writable
/// `FcModels*` slot, both valid for the duration of the call.
#[no_mangle]
pub unsafe extern "C" fn fc_models_load(dir: *const c_char, out: *mut *mut FcModels) -> FcStatus {
    if dir.is_null() || out.is_null() {
        return FcStatus::NullArgument;
    }
    let Ok(path) = CStr::from_ptr(dir).to_str() else {
        return FcStatus::InvalidPath;
    };
    match catch_unwind(|| TrainedModels::load(path.as_ref())) {
        Ok(Ok(models)) => {
            *out = Box::into_raw(Box::new(FcModels { inner: models }));
            FcStatus::Ok
        }
        Ok(Err(err)) => load_status(&err),
        Err(_) => FcStatus::Internal,
    }
}

/// Releases a handle returned by [`fc_models_load`]. A null pointer is a
/// no-op.
///
/// # Safety
/// `models` must be null or a handle from [`fc_models_load`] that has not
/// been freed yet, with no detection calls still running on it.
#[no_mangle]
pub unsafe extern "C" fn fc_models_free(models: *mut FcModels) {
    if models.is_null() {
        return;
    }
    drop(Box::from_raw(models));
}

/// Runs the full cascade on one frame of tightly packed interleaved 8-bit
/// RGB (`3 * width * height` bytes, no row padding) and fills `out`.
///
/// On any status other than `FC_STATUS_OK`, `*out` is left untouched.
///
/// # Safety
/// `models` must be a live handle from [`fc_models_load`], `rgb` must point
/// to `3 * width * height` readable bytes, and `out` to a writable
/// `FcDetection`, all valid for the duration of the call.
#[no_mangle]
pub unsafe extern "C" fn fc_detect_rgb8(
    models: *const FcModels,
    rgb: *const u8,
    width: u32,
    height: u32,
    out: *mut FcDetection,
) -> FcStatus {
    if models.is_null() || rgb.is_null() || out.is_null() {
        return FcStatus::NullArgument;
    }
    let (w, h) = (width as usize, height as usize);
    let Some(len) = w.checked_mul(h).and_then(|p| p.checked_mul(3)) else {
        return FcStatus::InvalidImage;
    };
    if len == 0 {
        return FcStatus::InvalidImage;
    }
    let pixels = std::slice::from_raw_parts(rgb, len);
    let models = &(*models).inner;
    let result = catch_unwind(AssertUnwindSafe(|| {
        let img = Image::from_rgb8(w, h, pixels).map_err(|_| FcStatus::InvalidImage)?;
        run_cascade(models, &img, HandStrategy::Ahd, FingerStrategy::Mfd, None)
            .map_err(|_| FcStatus::DetectFailed)
    }));
    match result {
        Ok(Ok(d)) => {
            let joint = d.joint.expect("two-keypoint strategy always yields a joint");
            *out = FcDetection {
                hand_x1: d.hand_box.x1,
                hand_y1: d.hand_box.y1,
                hand_x2: d.hand_box.x2,
                hand_y2: d.hand_box.y2,
                fingertip_x: d.fingertip.x,
                fingertip_y: d.fingertip.y,
                joint_x: joint.x,
                joint_y: joint.y,
                hand_ms: d.timings.hand_ms,
                finger_ms: d.timings.finger_ms,
                processing_ms: d.timings.processing_ms,
                total_ms: d.timings.total_ms,
                hand_repaired: d.hand_repaired,
            };
            FcStatus::Ok
        }
        Ok(Err(status)) => status,
        Err(_) => FcStatus::Internal,
    }
}

/// Static description of a status code; never null.
#[no_mangle]
pub extern "C" fn fc_status_message(status: FcStatus) -> *const c_char {
    let message: &'static str = match status {
        FcStatus::Ok => "ok\0",
        FcStatus::NullArgument => "a required pointer argument was null\0",
        FcStatus::InvalidPath => "models directory path was not valid UTF-8\0",
        FcStatus::MissingModel => "models directory is missing a weights file or descriptor\0",
        FcStatus::CorruptModel => "models directory failed validation\0",
        FcStatus::InvalidImage => "image dimensions were zero or overflowed\0",
        FcStatus::DetectFailed => "the cascade failed on this frame\0",
        FcStatus::Internal => "internal panic caught at the ABI boundary\0",
    };
    message.as_ptr().cast()
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn fc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
