//! C ABI over the duinnet toolkit.
//!
//! Objects cross the boundary as opaque handles created by a `dn_*_new` or
//! `dn_*_load` call and released with the matching `dn_*_free`. Every
//! fallible call returns a [`DnStatus`]; on failure the message is available
//! from [`dn_last_error`] on the same thread until the next failing call.
//! Points are passed as packed `x, y, z` doubles.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use duinnet::cli::load_trained;
use duinnet::geometry::{fps, hidden_point_removal, HprConfig, Point3, PointCloud, SeedRule};
use duinnet::metrics::{chamfer_l1, chamfer_l2, fscore};
use duinnet::model::{DuInNet, ModelConfig, ParamStore, Profile, Task};
use duinnet::tensor::Tensor;
use duinnet::Error;

/// Result codes. The non-zero values of configuration, data and numeric
/// failures match the exit codes of the `duinnet` binary.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DnStatus {
    Ok = 0,
    /// A required pointer was null or a buffer was too small.
    NullOrShortBuffer = 1,
    /// Invalid argument, configuration or checkpoint mismatch.
    Config = 2,
    /// Input data, geometry or I/O failure.
    Data = 3,
    Numeric = 4,
    /// A Rust panic was caught at the boundary.
    Internal = 5,
}

/// First-sample rule for farthest point sampling.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DnSeedRule {
    FirstIndex = 0,
    FarthestFromCentroid = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DnTask {
    Supervised = 0,
    Denoising = 1,
    Zeroshot = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DnProfile {
    Mini = 0,
    Paper = 1,
}

/// Opaque point cloud.
pub struct DnCloud {
    cloud: PointCloud,
}

/// Opaque network with its parameters.
pub struct DnModel {
    net: DuInNet,
    store: ParamStore,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DnStatus {
    match e.exit_code() {
        2 => DnStatus::Config,
        4 => DnStatus::Numeric,
        _ => DnStatus::Data,
    }
}

enum Fail {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DnStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(what.to_string());
            DnStatus::NullOrShortBuffer
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            DnStatus::Internal
        }
    }
}

fn non_null<T>(p: *const T, what: &'static str) -> Result<(), Fail> {
    if p.is_null() {
        Err(Fail::Null(what))
    } else {
        Ok(())
    }
}

unsafe fn cloud_ref<'a>(p: *const DnCloud, what: &'static str) -> Result<&'a PointCloud, Fail> {
    non_null(p, what)?;
    Ok(&(*p).cloud)
}

unsafe fn points_from(xyz: *const f64, n: usize) -> Result<Vec<Point3>, Fail> {
    if n == 0 {
        return Ok(Vec::new());
    }
    non_null(xyz, "xyz is null")?;
    let flat = std::slice::from_raw_parts(xyz, n * 3);
    Ok(flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
}

/// Message of the last failing call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds a cloud from `n` packed points. Non-finite coordinates are
/// rejected.
///
/// # Safety
/// `xyz` must point to `3 * n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dn_cloud_new(xyz: *const f64, n: usize, out: *mut *mut DnCloud) -> DnStatus {
    guard(|| {
        non_null(out, "out is null")?;
        let cloud = PointCloud::new(points_from(xyz, n)?)?;
        *out = Box::into_raw(Box::new(DnCloud { cloud }));
        Ok(())
    })
}

/// # Safety
/// `cloud` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dn_cloud_free(cloud: *mut DnCloud) {
    if !cloud.is_null() {
        drop(Box::from_raw(cloud));
    }
}

/// Number of points, 0 for a null handle.
///
/// # Safety
/// `cloud` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dn_cloud_len(cloud: *const DnCloud) -> usize {
    if cloud.is_null() {
        0
    } else {
        (*cloud).cloud.len()
    }
}

/// Copies the points into `xyz`, which holds `cap` doubles.
///
/// # Safety
/// `cloud` must be live; `xyz` must be writable for `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn dn_cloud_points(cloud: *const DnCloud, xyz: *mut f64, cap: usize) -> DnStatus {
    guard(|| {
        let c = cloud_ref(cloud, "cloud is null")?;
        non_null(xyz, "xyz is null")?;
        let flat = c.flat();
        if cap < flat.len() {
            return Err(Fail::Null("buffer too small"));
        }
        ptr::copy_nonoverlapping(flat.as_ptr(), xyz, flat.len());
        Ok(())
    })
}

/// Symmetric Chamfer distance on Euclidean nearest-neighbour distances.
///
/// # Safety
/// Handles must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dn_chamfer_l1(a: *const DnCloud, b: *const DnCloud, out: *mut f64) -> DnStatus {
    guard(|| {
        let (a, b) = (cloud_ref(a, "a is null")?, cloud_ref(b, "b is null")?);
        non_null(out, "out is null")?;
        *out = chamfer_l1(&a.points, &b.points)?;
        Ok(())
    })
}

/// Chamfer distance on squared nearest-neighbour distances.
///
/// # Safety
/// Handles must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dn_chamfer_l2(a: *const DnCloud, b: *const DnCloud, out: *mut f64) -> DnStatus {
    guard(|| {
        let (a, b) = (cloud_ref(a, "a is null")?, cloud_ref(b, "b is null")?);
        non_null(out, "out is null")?;
        *out = chamfer_l2(&a.points, &b.points)?;
        Ok(())
    })
}

/// F-Score of `pred` against `gt` at threshold `d` (compared with squared
/// distances). Precision and recall are written when their pointers are
/// non-null.
///
/// # Safety
/// Handles must be live; `f` writable; `precision` and `recall` null or
/// writable.
#[no_mangle]
pub unsafe extern "C" fn dn_fscore(
    pred: *const DnCloud,
    gt: *const DnCloud,
    d: f64,
    f: *mut f64,
    precision: *mut f64,
    recall: *mut f64,
) -> DnStatus {
    guard(|| {
        let (p, g) = (cloud_ref(pred, "pred is null")?, cloud_ref(gt, "gt is null")?);
        non_null(f, "f is null")?;
        let (pr, rc, fs) = fscore(&p.points, &g.points, d)?;
        *f = fs;
        if !precision.is_null() {
            *precision = pr;
        }
        if !recall.is_null() {
            *recall = rc;
        }
        Ok(())
    })
}

/// Farthest point sampling: writes `m` indices in selection order.
///
/// # Safety
/// `cloud` must be live; `indices` writable for `m` entries.
#[no_mangle]
pub unsafe extern "C" fn dn_fps(cloud: *const DnCloud, m: usize, rule: DnSeedRule, indices: *mut usize) -> DnStatus {
    guard(|| {
        let c = cloud_ref(cloud, "cloud is null")?;
        non_null(indices, "indices is null")?;
        let seed = match rule {
            DnSeedRule::FirstIndex => SeedRule::FirstIndex,
            DnSeedRule::FarthestFromCentroid => SeedRule::FarthestFromCentroid,
        };
        let idx = fps(&c.points, m, seed)?;
        ptr::copy_nonoverlapping(idx.as_ptr(), indices, idx.len());
        Ok(())
    })
}

/// Hidden point removal from `viewpoint` (3 doubles). Writes the sorted
/// visible indices to `indices`, which must hold `dn_cloud_len(cloud)`
/// entries, and their number to `count`.
///
/// # Safety
/// `cloud` must be live; `viewpoint` readable for 3 doubles; `indices` and
/// `count` writable.
#[no_mangle]
pub unsafe extern "C" fn dn_hpr(
    cloud: *const DnCloud,
    viewpoint: *const f64,
    radius_exponent: f64,
    indices: *mut usize,
    count: *mut usize,
) -> DnStatus {
    guard(|| {
        let c = cloud_ref(cloud, "cloud is null")?;
        non_null(viewpoint, "viewpoint is null")?;
        non_null(indices, "indices is null")?;
        non_null(count, "count is null")?;
        let vp = std::slice::from_raw_parts(viewpoint, 3);
        let res = hidden_point_removal(&c.points, [vp[0], vp[1], vp[2]], &HprConfig { radius_exponent })?;
        ptr::copy_nonoverlapping(res.visible.as_ptr(), indices, res.visible.len());
        *count = res.visible.len();
        Ok(())
    })
}

fn model_config(profile: DnProfile, task: DnTask) -> ModelConfig {
    let profile = match profile {
        DnProfile::Mini => Profile::Mini,
        DnProfile::Paper => Profile::Paper,
    };
    let task = match task {
        DnTask::Supervised => Task::Supervised,
        DnTask::Denoising => Task::Denoising,
        DnTask::Zeroshot => Task::Zeroshot,
    };
    ModelConfig::for_task(profile, task)
}

/// Fresh network with seeded parameters.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dn_model_new(profile: DnProfile, task: DnTask, seed: u64, out: *mut *mut DnModel) -> DnStatus {
    guard(|| {
        non_null(out, "out is null")?;
        let net = DuInNet::new(model_config(profile, task))?;
        let store = net.init(seed);
        *out = Box::into_raw(Box::new(DnModel { net, store }));
        Ok(())
    })
}

/// Loads a trained network from a run directory or checkpoint file. The
/// dimensions recorded by the run take precedence over `profile`/`task`.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dn_model_load(
    path: *const c_char,
    profile: DnProfile,
    task: DnTask,
    out: *mut *mut DnModel,
) -> DnStatus {
    guard(|| {
        non_null(path, "path is null")?;
        non_null(out, "out is null")?;
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Error::Argument("path is not UTF-8".into()))?;
        let (net, store) = load_trained(Path::new(path), model_config(profile, task))?;
        *out = Box::into_raw(Box::new(DnModel { net, store }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dn_model_free(model: *mut DnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Points produced by the network, 0 for a null handle.
///
/// # Safety
/// `model` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn dn_model_points(model: *const DnModel) -> usize {
    if model.is_null() {
        0
    } else {
        (*model).net.cfg.n
    }
}

/// Side length of the square input image, 0 for a null handle.
///
/// # Safety
/// `model` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn dn_model_image_side(model: *const DnModel) -> usize {
    if model.is_null() {
        0
    } else {
        (*model).net.cfg.image_side
    }
}

/// Completes `partial` given a `side x side x 3` row-major image with
/// values in `[0, 1]`, where `side` is [`dn_model_image_side`]. The partial
/// cloud is resampled to the network input size with `seed`.
///
/// # Safety
/// Handles must be live; `image` readable for `3 * side * side` floats;
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dn_model_complete(
    model: *const DnModel,
    partial: *const DnCloud,
    image: *const f32,
    seed: u64,
    out: *mut *mut DnCloud,
) -> DnStatus {
    guard(|| {
        non_null(model, "model is null")?;
        let m = &*model;
        let p = cloud_ref(partial, "partial is null")?;
        non_null(image, "image is null")?;
        non_null(out, "out is null")?;
        let side = m.net.cfg.image_side;
        let px = std::slice::from_raw_parts(image, side * side * 3);
        let img = Tensor::new([side, side, 3], px.iter().map(|&v| v as f64).collect())?;
        let cloud = m.net.complete(&m.store, p, &img, seed)?;
        *out = Box::into_raw(Box::new(DnCloud { cloud }));
        Ok(())
    })
}
