//! C ABI over the `hdvggt` library.
//!
//! Objects cross the boundary as opaque handles created by `*_new` or
//! `*_generate` functions and released by the matching `*_free`. Every
//! fallible call returns an [`HdStatus`]; on failure the message is
//! available from [`hd_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use hdvggt::geometry::{generate_scene, save_scene, SceneBundle, SceneConfig};
use hdvggt::harness::{detect_scene, RunConfig};
use hdvggt::modulation::ModulationConfig;
use hdvggt::transformer::{count_attention_flops, StackConfig, StackParams};
use hdvggt::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    MissingArtifact = 4,
    Numerical = 5,
    Io = 6,
    Panic = 7,
}

/// Generated multi-view scene.
pub struct HdScene {
    inner: SceneBundle,
}

/// Seeded coarse and refiner weights.
pub struct HdStack {
    inner: StackParams,
}

/// Attention multiply-add counts.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HdFlopCount {
    pub qk: u64,
    pub av: u64,
    pub proj: u64,
    pub total: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(err: &Error) -> HdStatus {
    match err {
        Error::Config(_) | Error::Json(_) => HdStatus::Config,
        Error::MissingArtifact(_) => HdStatus::MissingArtifact,
        Error::Io(_) | Error::Format { .. } => HdStatus::Io,
        Error::TrainingDiverged { .. }
        | Error::Domain(_)
        | Error::DegenerateProjection(_)
        | Error::UndefinedScore(_)
        | Error::InsufficientViews(_) => HdStatus::Numerical,
        Error::Shape { .. } | Error::Usage(_) => HdStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (HdStatus, String)>) -> HdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HdStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            HdStatus::Panic
        }
    }
}

fn lib<T>(r: hdvggt::Result<T>) -> Result<T, (HdStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (HdStatus, String) {
    (HdStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: String) -> (HdStatus, String) {
    (HdStatus::InvalidArgument, msg)
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (HdStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn copy_out(data: &[f64], out: *mut f64, len: usize) -> Result<(), (HdStatus, String)> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    if len < data.len() {
        return Err(invalid(format!(
            "output buffer holds {len} values, {} needed",
            data.len()
        )));
    }
    ptr::copy_nonoverlapping(data.as_ptr(), out, data.len());
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf`, truncated and
/// NUL-terminated. Returns the full message length in bytes, 0 if none.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn hd_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Generates a scene with the default config except the given fields.
///
/// # Safety
/// `out` must be valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn hd_scene_generate(
    views: usize,
    height: usize,
    width: usize,
    patch: usize,
    singularity_fraction: f64,
    seed: u64,
    out: *mut *mut HdScene,
) -> HdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = SceneConfig {
            views,
            height,
            width,
            patch,
            singularity_fraction,
            ..Default::default()
        };
        let inner = lib(generate_scene(&cfg, seed))?;
        *out = Box::into_raw(Box::new(HdScene { inner }));
        Ok(())
    })
}

/// # Safety
/// `scene` must be null or come from [`hd_scene_generate`] and not be
/// used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hd_scene_free(scene: *mut HdScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// View count, image height and width, tokens per view.
///
/// # Safety
/// `scene` must be a live handle; outputs must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn hd_scene_dims(
    scene: *const HdScene,
    views: *mut usize,
    height: *mut usize,
    width: *mut usize,
    tokens: *mut usize,
) -> HdStatus {
    guard(|| {
        let s = &scene.as_ref().ok_or_else(|| null("scene"))?.inner;
        let (gh, gw) = s.token_grid();
        for (p, v) in [
            (views, s.len()),
            (height, s.height()),
            (width, s.width()),
            (tokens, gh * gw),
        ] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Copies view `index` as `H·W·3` row-major RGB in `[0, 1]`.
///
/// # Safety
/// `scene` must be a live handle and `out` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hd_scene_copy_view(
    scene: *const HdScene,
    index: usize,
    out: *mut f64,
    len: usize,
) -> HdStatus {
    guard(|| {
        let s = &scene.as_ref().ok_or_else(|| null("scene"))?.inner;
        let v = s
            .views
            .get(index)
            .ok_or_else(|| invalid(format!("view {index} of {}", s.len())))?;
        copy_out(v.data(), out, len)
    })
}

/// Copies the ground-truth depth of view `index`, `H·W` row-major.
///
/// # Safety
/// `scene` must be a live handle and `out` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hd_scene_copy_depth(
    scene: *const HdScene,
    index: usize,
    out: *mut f64,
    len: usize,
) -> HdStatus {
    guard(|| {
        let s = &scene.as_ref().ok_or_else(|| null("scene"))?.inner;
        let d = s
            .depths
            .get(index)
            .ok_or_else(|| invalid(format!("view {index} of {}", s.len())))?;
        copy_out(d.data(), out, len)
    })
}

/// Writes the scene directory layout under `dir`.
///
/// # Safety
/// `scene` must be a live handle and `dir` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn hd_scene_save(scene: *const HdScene, dir: *const c_char) -> HdStatus {
    guard(|| {
        let s = &scene.as_ref().ok_or_else(|| null("scene"))?.inner;
        let dir = PathBuf::from(str_arg(dir, "dir")?);
        lib(save_scene(s, dir))
    })
}

/// Default stack config with the given weight seed.
///
/// # Safety
/// `out` must be valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn hd_stack_new(seed: u64, out: *mut *mut HdStack) -> HdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = StackConfig {
            seed,
            ..Default::default()
        };
        let inner = lib(StackParams::init(&cfg))?;
        *out = Box::into_raw(Box::new(HdStack { inner }));
        Ok(())
    })
}

/// # Safety
/// `stack` must be null or come from [`hd_stack_new`] and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn hd_stack_free(stack: *mut HdStack) {
    if !stack.is_null() {
        drop(Box::from_raw(stack));
    }
}

/// Runs detection with the default modulation config. Writes the `N·K`
/// saliency scores and refined mask (0 or 1), and the ROC-AUC; `has_auc`
/// is set to 0 when the ground truth has a single class.
///
/// # Safety
/// Handles must be live; `saliency` and `mask` valid for `len` elements;
/// `auc` and `has_auc` writable.
#[no_mangle]
pub unsafe extern "C" fn hd_detect(
    stack: *const HdStack,
    scene: *const HdScene,
    saliency: *mut f64,
    mask: *mut u8,
    len: usize,
    auc: *mut f64,
    has_auc: *mut i32,
) -> HdStatus {
    guard(|| {
        let st = &stack.as_ref().ok_or_else(|| null("stack"))?.inner;
        let sc = &scene.as_ref().ok_or_else(|| null("scene"))?.inner;
        if mask.is_null() || auc.is_null() || has_auc.is_null() {
            return Err(null("output"));
        }
        let cfg = RunConfig {
            scene: sc.config.clone(),
            stack: st.config.clone(),
            modulation: ModulationConfig::default(),
            ..Default::default()
        };
        let (result, score) = lib(detect_scene(&cfg, st, sc))?;
        copy_out(result.saliency.data(), saliency, len)?;
        for (i, &v) in result.refined_mask.data().iter().enumerate() {
            *mask.add(i) = u8::from(v > 0.5);
        }
        *auc = score.unwrap_or(f64::NAN);
        *has_auc = i32::from(score.is_some());
        Ok(())
    })
}

/// Attention multiply-adds of `layers` layers over `n·k` tokens; `window`
/// 0 means global attention.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hd_count_attention_flops(
    n: usize,
    k: usize,
    c: usize,
    layers: usize,
    window: usize,
    out: *mut HdFlopCount,
) -> HdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let w = (window > 0).then_some(window);
        let f = lib(count_attention_flops(n, k, c, layers, w))?;
        *out = HdFlopCount {
            qk: f.qk_flops,
            av: f.av_flops,
            proj: f.proj_flops,
            total: f.total,
        };
        Ok(())
    })
}

/// Parses and validates a JSON run config.
///
/// # Safety
/// `json` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn hd_config_validate(json: *const c_char) -> HdStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        let cfg = lib(RunConfig::from_json(text))?;
        lib(cfg.validate())
    })
}
