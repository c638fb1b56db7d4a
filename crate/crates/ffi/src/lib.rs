//! C interface to egs-core.
//!
//! Models and datasets are opaque heap handles owned by the caller and
//! released with their `*_free` function. Every fallible call returns an
//! [`EgsStatus`]; on failure [`egs_last_error`] describes the problem until
//! the next call on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use egs_core::io::colmap::load_colmap;
use egs_core::io::ply::save_ply;
use egs_core::io::synth::{generate_synthetic, SyntheticSceneSpec};
use egs_core::io::{load_model, Dataset};
use egs_core::metrics::{psnr, ssim, PSNR_LOG_CAP};
use egs_core::prune::{mark_dominant, prune};
use egs_core::raster::{render_forward, RenderSettings};
use egs_core::train::{train, TrainConfig};
use egs_core::{Error, GaussianPrimitive};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EgsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Diverged = 5,
    Internal = 6,
}

/// A list of Gaussians.
pub struct EgsModel {
    gaussians: Vec<GaussianPrimitive>,
}

/// Views, ground-truth images and initial points.
pub struct EgsDataset {
    dataset: Dataset,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> EgsStatus {
    match e {
        Error::Io { .. } | Error::MissingImage(_) => EgsStatus::Io,
        Error::Parse { .. }
        | Error::Ply(_)
        | Error::Checkpoint(_)
        | Error::Config(_)
        | Error::Image { .. }
        | Error::UnsupportedCameraModel(_) => EgsStatus::Parse,
        Error::Divergence { .. } => EgsStatus::Diverged,
        _ => EgsStatus::InvalidArgument,
    }
}

/// Runs `f`, recording errors and converting panics.
fn guard(f: impl FnOnce() -> Result<(), (EgsStatus, String)>) -> EgsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EgsStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            EgsStatus::Internal
        }
    }
}

trait IntoFfi<T> {
    fn ffi(self) -> Result<T, (EgsStatus, String)>;
}

impl<T> IntoFfi<T> for Result<T, Error> {
    fn ffi(self) -> Result<T, (EgsStatus, String)> {
        self.map_err(|e| (status_of(&e), e.to_string()))
    }
}

fn null(what: &str) -> (EgsStatus, String) {
    (EgsStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> (EgsStatus, String) {
    (EgsStatus::InvalidArgument, msg.into())
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, (EgsStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, (EgsStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next `egs_*` call on the same thread.
#[no_mangle]
pub extern "C" fn egs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a PLY model or an EGS1 checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn egs_model_load(path: *const c_char, out: *mut *mut EgsModel) -> EgsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path, "path")?;
        let gaussians = load_model(&path).ffi()?;
        *out = Box::into_raw(Box::new(EgsModel { gaussians }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn egs_model_free(model: *mut EgsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of Gaussians (0 for a null handle).
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn egs_model_count(model: *const EgsModel) -> usize {
    model.as_ref().map_or(0, |m| m.gaussians.len())
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn egs_model_save_ply(model: *const EgsModel, path: *const c_char) -> EgsStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let path = path_arg(path, "path")?;
        save_ply(&m.gaussians, &path).ffi()
    })
}

/// Loads a COLMAP text dataset directory.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn egs_dataset_load_colmap(dir: *const c_char, out: *mut *mut EgsDataset) -> EgsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let dir = path_arg(dir, "dir")?;
        let dataset = load_colmap(&dir).ffi()?;
        *out = Box::into_raw(Box::new(EgsDataset { dataset }));
        Ok(())
    })
}

/// Generates a synthetic dataset from a TOML scene spec (null: defaults).
///
/// # Safety
/// `spec_toml` must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn egs_dataset_synthetic(spec_toml: *const c_char, out: *mut *mut EgsDataset) -> EgsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let spec = if spec_toml.is_null() {
            SyntheticSceneSpec::default()
        } else {
            let s = CStr::from_ptr(spec_toml).to_str().map_err(|_| invalid("spec is not valid UTF-8"))?;
            SyntheticSceneSpec::from_toml_str(s).ffi()?
        };
        let dataset = generate_synthetic(&spec).ffi()?;
        *out = Box::into_raw(Box::new(EgsDataset { dataset }));
        Ok(())
    })
}

/// # Safety
/// `dataset` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn egs_dataset_free(dataset: *mut EgsDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Number of views (0 for a null handle).
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn egs_dataset_view_count(dataset: *const EgsDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.dataset.views.len())
}

/// Image size of one view.
///
/// # Safety
/// `dataset` must be a live handle; `width` and `height` writable.
#[no_mangle]
pub unsafe extern "C" fn egs_dataset_view_size(
    dataset: *const EgsDataset,
    view: usize,
    width: *mut u32,
    height: *mut u32,
) -> EgsStatus {
    guard(|| {
        let d = ref_arg(dataset, "dataset")?;
        if width.is_null() || height.is_null() {
            return Err(null("width/height"));
        }
        let v = d.dataset.views.get(view).ok_or_else(|| invalid(format!("view {view} out of range")))?;
        *width = v.width;
        *height = v.height;
        Ok(())
    })
}

/// Renders `view` over a black background into `rgb` (row-major, 3 floats
/// per pixel in [0, 1]); `len` must equal width * height * 3.
///
/// # Safety
/// Handles must be live; `rgb` must point to `len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn egs_render(
    model: *const EgsModel,
    dataset: *const EgsDataset,
    view: usize,
    rgb: *mut f32,
    len: usize,
) -> EgsStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let d = ref_arg(dataset, "dataset")?;
        if rgb.is_null() {
            return Err(null("rgb"));
        }
        let v = d.dataset.views.get(view).ok_or_else(|| invalid(format!("view {view} out of range")))?;
        let need = v.pixel_count() * 3;
        if len != need {
            return Err(invalid(format!("buffer holds {len} floats, need {need}")));
        }
        let img = render_forward(&m.gaussians, v, [0.0; 3], &RenderSettings::default()).color;
        let out = std::slice::from_raw_parts_mut(rgb, len);
        for (o, &p) in out.iter_mut().zip(&img.data) {
            *o = p as f32;
        }
        Ok(())
    })
}

/// Trains a model on `dataset`. `config_toml` may be null for defaults.
///
/// # Safety
/// `dataset` must be live, `config_toml` null or NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn egs_train(
    dataset: *const EgsDataset,
    config_toml: *const c_char,
    out: *mut *mut EgsModel,
) -> EgsStatus {
    guard(|| {
        let d = ref_arg(dataset, "dataset")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = if config_toml.is_null() {
            TrainConfig::default()
        } else {
            let s = CStr::from_ptr(config_toml).to_str().map_err(|_| invalid("config is not valid UTF-8"))?;
            TrainConfig::from_toml_str(s).ffi()?
        };
        let outcome = train(&d.dataset, &cfg).ffi()?;
        *out = Box::into_raw(Box::new(EgsModel { gaussians: outcome.gaussians }));
        Ok(())
    })
}

/// Keeps only Gaussians ranked in the top `k` blend weights at some pixel
/// of some training view. Writes the number removed to `removed` if non-null.
///
/// # Safety
/// Handles must be live; `removed` null or writable.
#[no_mangle]
pub unsafe extern "C" fn egs_prune(
    model: *mut EgsModel,
    dataset: *const EgsDataset,
    k: usize,
    removed: *mut usize,
) -> EgsStatus {
    guard(|| {
        let m = model.as_mut().ok_or_else(|| null("model"))?;
        let d = ref_arg(dataset, "dataset")?;
        let mark = mark_dominant(&m.gaussians, &d.dataset.train_views(), k, 1, &RenderSettings::default()).ffi()?;
        let before = m.gaussians.len();
        prune(&mut m.gaussians, &mark).ffi()?;
        if !removed.is_null() {
            *removed = before - m.gaussians.len();
        }
        Ok(())
    })
}

/// Mean PSNR (dB, capped at 100) and SSIM over the held-out views.
///
/// # Safety
/// Handles must be live; `psnr_out` and `ssim_out` writable.
#[no_mangle]
pub unsafe extern "C" fn egs_evaluate(
    model: *const EgsModel,
    dataset: *const EgsDataset,
    psnr_out: *mut f64,
    ssim_out: *mut f64,
) -> EgsStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let d = ref_arg(dataset, "dataset")?;
        if psnr_out.is_null() || ssim_out.is_null() {
            return Err(null("psnr/ssim output"));
        }
        let (mut p, mut s) = (0.0, 0.0);
        let pairs = d.dataset.eval_pairs();
        for (view, gt) in &pairs {
            let img = render_forward(&m.gaussians, view, [0.0; 3], &RenderSettings::default()).color;
            p += psnr(&img, gt).ffi()?.min(PSNR_LOG_CAP);
            s += ssim(&img, gt).ffi()?;
        }
        let n = pairs.len().max(1) as f64;
        *psnr_out = p / n;
        *ssim_out = s / n;
        Ok(())
    })
}
