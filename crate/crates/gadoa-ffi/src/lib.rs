//! C ABI for the DoA estimation toolkit: opaque handles for array geometries
//! and trained classifiers, plus one-call estimators for SRP-PHAT, MUSIC, and
//! classifier models on raw multichannel sample buffers.
//!
//! Conventions: buffers are channel-major (`samples[channel * len + i]`),
//! sampled at 8 kHz; azimuths are degrees in [0, 360). Every function returns
//! a [`GadoaStatus`]; out-parameters are written only on `Ok`. Handles are
//! freed with the matching `gadoa_*_free`, which accepts null.

use std::ffi::{c_char, c_double, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

use gadoa::error::Error;
use gadoa::estimate::NUM_CLASSES;
use gadoa::experiment::{classical_trial_estimate, mlp_trial_estimate, Algorithm};
use gadoa::features::{frame_signal, FeatureKind};
use gadoa::geometry::{arc_array, lag_bound, ArrayGeometry};
use gadoa::mlp::{load_model, MlpModel};
use gadoa::room::MultichannelSignal;
use gadoa::{LAG_MARGIN, SAMPLE_RATE, SPEED_OF_SOUND};

/// Result of every C-ABI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GadoaStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// An argument value is out of range or inconsistent.
    InvalidArgument = 2,
    /// The microphone geometry is degenerate or malformed.
    InvalidGeometry = 3,
    /// File could not be read or written.
    IoError = 4,
    /// The model file is corrupt, truncated, or of an unsupported version.
    BadModel = 5,
    /// A numeric failure (non-finite values, no convergence).
    NumericError = 6,
    /// The signal carried no usable information (for example all-silent).
    EstimationFailed = 7,
}

fn status_of(e: &Error) -> GadoaStatus {
    match e {
        Error::InvalidGeometry(_) => GadoaStatus::InvalidGeometry,
        Error::ModelFormat(_) => GadoaStatus::BadModel,
        Error::Io(_) | Error::Ingestion(_) | Error::DataFormat(_) => GadoaStatus::IoError,
        Error::Numeric(_) | Error::TrainingFailure(_) => GadoaStatus::NumericError,
        Error::EstimationFailure(_) | Error::SilentFrame => GadoaStatus::EstimationFailed,
        _ => GadoaStatus::InvalidArgument,
    }
}

/// Opaque microphone array geometry.
pub struct GadoaGeometry {
    inner: ArrayGeometry,
}

/// Opaque trained classifier.
pub struct GadoaModel {
    inner: MlpModel,
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gadoa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Static human-readable description of a status code.
#[no_mangle]
pub extern "C" fn gadoa_status_message(status: GadoaStatus) -> *const c_char {
    let msg: &'static str = match status {
        GadoaStatus::Ok => "ok\0",
        GadoaStatus::NullArgument => "null pointer argument\0",
        GadoaStatus::InvalidArgument => "invalid argument\0",
        GadoaStatus::InvalidGeometry => "invalid microphone geometry\0",
        GadoaStatus::IoError => "I/O error\0",
        GadoaStatus::BadModel => "bad model file\0",
        GadoaStatus::NumericError => "numeric failure\0",
        GadoaStatus::EstimationFailed => "estimation failed\0",
    };
    msg.as_ptr() as *const c_char
}

fn guarded<F: FnOnce() -> GadoaStatus>(f: F) -> GadoaStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or(GadoaStatus::NumericError)
}

/// Create a geometry from `mic_count` interleaved (x, y) coordinate pairs in
/// meters.
///
/// # Safety
/// `xy_pairs` must point to `2 * mic_count` readable doubles; `out` must be a
/// valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn gadoa_geometry_new(
    xy_pairs: *const c_double,
    mic_count: usize,
    out: *mut *mut GadoaGeometry,
) -> GadoaStatus {
    if xy_pairs.is_null() || out.is_null() {
        return GadoaStatus::NullArgument;
    }
    let coords = std::slice::from_raw_parts(xy_pairs, 2 * mic_count);
    guarded(|| {
        let mics: Vec<[f64; 2]> = coords.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        match ArrayGeometry::new(mics) {
            Ok(inner) => {
                out.write(Box::into_raw(Box::new(GadoaGeometry { inner })));
                GadoaStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

/// The fixed five-microphone arc array the geometry-unaware classifiers are
/// trained on.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn gadoa_geometry_arc(out: *mut *mut GadoaGeometry) -> GadoaStatus {
    if out.is_null() {
        return GadoaStatus::NullArgument;
    }
    out.write(Box::into_raw(Box::new(GadoaGeometry { inner: arc_array() })));
    GadoaStatus::Ok
}

/// # Safety
/// `geometry` must be a handle from this library, not yet freed; null is a
/// no-op.
#[no_mangle]
pub unsafe extern "C" fn gadoa_geometry_free(geometry: *mut GadoaGeometry) {
    if !geometry.is_null() {
        drop(Box::from_raw(geometry));
    }
}

/// # Safety
/// `geometry` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn gadoa_geometry_mic_count(
    geometry: *const GadoaGeometry,
    out: *mut usize,
) -> GadoaStatus {
    if geometry.is_null() || out.is_null() {
        return GadoaStatus::NullArgument;
    }
    out.write((*geometry).inner.mic_count());
    GadoaStatus::Ok
}

/// Load a trained classifier from a model file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn gadoa_model_load(
    path: *const c_char,
    out: *mut *mut GadoaModel,
) -> GadoaStatus {
    if path.is_null() || out.is_null() {
        return GadoaStatus::NullArgument;
    }
    let Ok(path) = CStr::from_ptr(path).to_str() else {
        return GadoaStatus::InvalidArgument;
    };
    guarded(|| match load_model(std::path::Path::new(path)) {
        Ok(inner) => {
            out.write(Box::into_raw(Box::new(GadoaModel { inner })));
            GadoaStatus::Ok
        }
        Err(e) => status_of(&e),
    })
}

/// # Safety
/// `model` must be a handle from this library, not yet freed; null is a
/// no-op.
#[no_mangle]
pub unsafe extern "C" fn gadoa_model_free(model: *mut GadoaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Width of the feature vector the model consumes.
///
/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn gadoa_model_input_size(
    model: *const GadoaModel,
    out: *mut usize,
) -> GadoaStatus {
    if model.is_null() || out.is_null() {
        return GadoaStatus::NullArgument;
    }
    out.write((*model).inner.arch.input_size);
    GadoaStatus::Ok
}

unsafe fn signal_from_raw(
    samples: *const c_double,
    channels: usize,
    len: usize,
    fs: c_double,
) -> Result<MultichannelSignal, GadoaStatus> {
    if samples.is_null() {
        return Err(GadoaStatus::NullArgument);
    }
    if channels == 0 || len == 0 {
        return Err(GadoaStatus::InvalidArgument);
    }
    if (fs - SAMPLE_RATE).abs() > 1e-9 {
        return Err(GadoaStatus::InvalidArgument);
    }
    let flat = std::slice::from_raw_parts(samples, channels * len);
    let chans: Vec<Vec<f64>> = (0..channels)
        .map(|c| flat[c * len..(c + 1) * len].to_vec())
        .collect();
    MultichannelSignal::new(chans, fs).map_err(|e| status_of(&e))
}

unsafe fn classical_estimate(
    algorithm: Algorithm,
    geometry: *const GadoaGeometry,
    samples: *const c_double,
    channels: usize,
    len: usize,
    fs: c_double,
    out_theta_deg: *mut c_double,
) -> GadoaStatus {
    if geometry.is_null() || out_theta_deg.is_null() {
        return GadoaStatus::NullArgument;
    }
    let geom = &(*geometry).inner;
    if geom.mic_count() != channels {
        return GadoaStatus::InvalidArgument;
    }
    let signal = match signal_from_raw(samples, channels, len, fs) {
        Ok(s) => s,
        Err(status) => return status,
    };
    guarded(|| {
        let result = frame_signal(&signal)
            .and_then(|frames| classical_trial_estimate(algorithm, &frames, geom, SPEED_OF_SOUND));
        match result {
            Ok(theta) => {
                out_theta_deg.write(theta);
                GadoaStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Estimate the source azimuth with SRP-PHAT over the 72-class grid.
///
/// # Safety
/// `samples` must point to `channels * len` doubles in channel-major order;
/// `geometry` must be a live handle; `out_theta_deg` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gadoa_estimate_srp_phat(
    geometry: *const GadoaGeometry,
    samples: *const c_double,
    channels: usize,
    len: usize,
    fs: c_double,
    out_theta_deg: *mut c_double,
) -> GadoaStatus {
    classical_estimate(Algorithm::SrpPhat, geometry, samples, channels, len, fs, out_theta_deg)
}

/// Estimate the source azimuth with single-source MUSIC.
///
/// # Safety
/// As for [`gadoa_estimate_srp_phat`].
#[no_mangle]
pub unsafe extern "C" fn gadoa_estimate_music(
    geometry: *const GadoaGeometry,
    samples: *const c_double,
    channels: usize,
    len: usize,
    fs: c_double,
    out_theta_deg: *mut c_double,
) -> GadoaStatus {
    classical_estimate(Algorithm::Music, geometry, samples, channels, len, fs, out_theta_deg)
}

/// Estimate the source azimuth with a trained classifier. The feature
/// pipeline recorded in the model file decides how the signal is featurized;
/// geometry-aware models receive the supplied coordinates.
///
/// # Safety
/// As for [`gadoa_estimate_srp_phat`], plus `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gadoa_estimate_model(
    model: *const GadoaModel,
    geometry: *const GadoaGeometry,
    samples: *const c_double,
    channels: usize,
    len: usize,
    fs: c_double,
    out_theta_deg: *mut c_double,
) -> GadoaStatus {
    if model.is_null() || geometry.is_null() || out_theta_deg.is_null() {
        return GadoaStatus::NullArgument;
    }
    let model = &(*model).inner;
    let geom = &(*geometry).inner;
    if geom.mic_count() != channels {
        return GadoaStatus::InvalidArgument;
    }
    if model.arch.output_size != NUM_CLASSES {
        return GadoaStatus::BadModel;
    }
    let Some(kind) = model.feature_kind else {
        return GadoaStatus::BadModel;
    };
    let signal = match signal_from_raw(samples, channels, len, fs) {
        Ok(s) => s,
        Err(status) => return status,
    };
    guarded(|| {
        let result = (|| {
            let frames = frame_signal(&signal)?;
            let bound = lag_bound(geom, SAMPLE_RATE, SPEED_OF_SOUND, LAG_MARGIN)?;
            if kind == FeatureKind::Full {
                let expect = kind.expected_len(geom.mic_count(), bound.tau_max);
                if expect != model.arch.input_size {
                    return Err(Error::FeatureShape {
                        expected: model.arch.input_size,
                        got: expect,
                    });
                }
            }
            mlp_trial_estimate(model, kind, &frames, geom, &bound)
        })();
        match result {
            Ok(theta) => {
                out_theta_deg.write(theta);
                GadoaStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}
