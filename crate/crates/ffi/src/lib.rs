//! C ABI over the `ttogm` mapper.
//!
//! Objects cross the boundary as opaque handles that the caller frees with the
//! matching `*_free` function. Every fallible call returns a [`TtogmStatus`];
//! the message of the last failure on the calling thread is available from
//! [`ttogm_last_error`]. Panics never unwind into C: they are reported as
//! [`TtogmStatus::TTOGM_ERR_PANIC`].

#![allow(non_camel_case_types)]
#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ttogm::cleaner::{clean_map_with, CleanerKind};
use ttogm::cloud::{Point3, PointCloud};
use ttogm::eval::{iou, Alignment2D, IouClass};
use ttogm::gridmap::{read_map, write_map, CodeMap};
use ttogm::pipeline::{Mapper, PipelineConfig};
use ttogm::Error;

/// Status code returned by every fallible function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TtogmStatus {
    TTOGM_OK = 0,
    /// Null pointer, non-UTF-8 string or out-of-range enum value.
    TTOGM_ERR_INVALID_ARGUMENT = 1,
    TTOGM_ERR_INVALID_CONFIG = 2,
    /// Missing or unreadable file.
    TTOGM_ERR_IO = 3,
    /// Malformed input data or a violated precondition.
    TTOGM_ERR_DATA = 4,
    /// Registration found no usable correspondences.
    TTOGM_ERR_REGISTRATION = 5,
    /// The external cleaning model failed.
    TTOGM_ERR_MODEL = 6,
    TTOGM_ERR_PANIC = 7,
}

/// Cell class scored by [`ttogm_map_iou`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TtogmIouClass {
    TTOGM_IOU_OCCUPIED = 0,
    TTOGM_IOU_UNOCCUPIED = 1,
}

/// Planar part of a pose: meters and radians.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TtogmPose2D {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

/// Grid geometry: cells, meters per cell and the world position of the
/// lower-left corner.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TtogmMapInfo {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub origin_x: f64,
    pub origin_y: f64,
}

/// Streaming mapper. Created by [`ttogm_mapper_new`].
pub struct TtogmMapper {
    inner: Option<Mapper>,
    scans: u64,
}

/// Discretized map with codes 0 (free), 100 (occupied), 255 (unknown), row 0 at the top.
pub struct TtogmMap {
    map: CodeMap,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> TtogmStatus {
    use TtogmStatus::*;
    if e.is_model_error() {
        return TTOGM_ERR_MODEL;
    }
    match e {
        Error::InvalidConfig(_) => TTOGM_ERR_INVALID_CONFIG,
        Error::Io { .. } | Error::MissingFile(_) | Error::MissingMetadata(_) => TTOGM_ERR_IO,
        Error::NoCorrespondences { .. } | Error::EmptySubmap => TTOGM_ERR_REGISTRATION,
        Error::Stage { source, .. } => status_of(source),
        _ => TTOGM_ERR_DATA,
    }
}

struct Failure(TtogmStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(TtogmStatus::TTOGM_ERR_INVALID_ARGUMENT, msg.into())
}

/// Runs `f`, records its error message and converts panics.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TtogmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TtogmStatus::TTOGM_OK,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            TtogmStatus::TTOGM_ERR_PANIC
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(invalid(format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| invalid(format!("{what} is null")))
}

fn boxed_map(map: CodeMap) -> *mut TtogmMap {
    Box::into_raw(Box::new(TtogmMap { map }))
}

/// Message of the last failed call on this thread, or null if none failed.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ttogm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ttogm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a mapper. `config_toml` is a TOML pipeline configuration or null for
/// the defaults.
#[no_mangle]
pub unsafe extern "C" fn ttogm_mapper_new(config_toml: *const c_char, out: *mut *mut TtogmMapper) -> TtogmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let cfg = if config_toml.is_null() {
            PipelineConfig::default()
        } else {
            PipelineConfig::from_toml(str_arg(config_toml, "config_toml")?)?
        };
        let mapper = Mapper::new(cfg)?;
        *out = Box::into_raw(Box::new(TtogmMapper {
            inner: Some(mapper),
            scans: 0,
        }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ttogm_mapper_free(mapper: *mut TtogmMapper) {
    if !mapper.is_null() {
        drop(Box::from_raw(mapper));
    }
}

/// Feeds one scan of `count` points laid out as `x, y, z, intensity` doubles
/// (sensor frame, intensity in [0, 1]). Scans are numbered in call order.
/// On success the estimated pose is written to `pose` when it is not null.
#[no_mangle]
pub unsafe extern "C" fn ttogm_mapper_process(
    mapper: *mut TtogmMapper,
    xyzi: *const f64,
    count: usize,
    pose: *mut TtogmPose2D,
) -> TtogmStatus {
    guard(|| {
        let m = out_arg(mapper, "mapper")?;
        if xyzi.is_null() && count > 0 {
            return Err(invalid("xyzi is null"));
        }
        let inner = m.inner.as_mut().ok_or_else(|| invalid("mapper already finished"))?;
        let raw = if count == 0 {
            &[][..]
        } else {
            std::slice::from_raw_parts(xyzi, count * 4)
        };
        let points = raw.chunks_exact(4).map(|p| Point3::new(p[0], p[1], p[2], p[3])).collect();
        let cloud = PointCloud::new(points, m.scans);
        let outcome = inner.process(&cloud)?;
        m.scans += 1;
        if let Some(p) = pose.as_mut() {
            let (x, y, yaw) = outcome.pose.planar();
            *p = TtogmPose2D { x, y, yaw };
        }
        Ok(())
    })
}

/// Number of scans processed so far.
#[no_mangle]
pub unsafe extern "C" fn ttogm_mapper_scan_count(mapper: *const TtogmMapper) -> u64 {
    mapper.as_ref().map_or(0, |m| m.scans)
}

/// Filtered (uncleaned) snapshot of the current map.
#[no_mangle]
pub unsafe extern "C" fn ttogm_mapper_snapshot(mapper: *const TtogmMapper, out: *mut *mut TtogmMap) -> TtogmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let m = mapper.as_ref().ok_or_else(|| invalid("mapper is null"))?;
        let inner = m.inner.as_ref().ok_or_else(|| invalid("mapper already finished"))?;
        *out = boxed_map(inner.snapshot()?);
        Ok(())
    })
}

/// Finishes mapping and returns the published map (cleaned when a cleaner is
/// configured). The mapper accepts no further scans but must still be freed.
#[no_mangle]
pub unsafe extern "C" fn ttogm_mapper_finish(mapper: *mut TtogmMapper, out: *mut *mut TtogmMap) -> TtogmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let m = out_arg(mapper, "mapper")?;
        let inner = m.inner.take().ok_or_else(|| invalid("mapper already finished"))?;
        *out = boxed_map(inner.finish()?.map);
        Ok(())
    })
}

/// Reads a PGM map with its metadata sidecar.
#[no_mangle]
pub unsafe extern "C" fn ttogm_map_read(path: *const c_char, out: *mut *mut TtogmMap) -> TtogmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let path = PathBuf::from(str_arg(path, "path")?);
        *out = boxed_map(read_map(&path)?.0);
        Ok(())
    })
}

/// Writes the map as PGM plus metadata sidecar.
#[no_mangle]
pub unsafe extern "C" fn ttogm_map_write(map: *const TtogmMap, path: *const c_char) -> TtogmStatus {
    guard(|| {
        let m = map.as_ref().ok_or_else(|| invalid("map is null"))?;
        let path = PathBuf::from(str_arg(path, "path")?);
        write_map(&path, &m.map, None)?;
        Ok(())
    })
}

/// Map of `info.width * info.height` cells copied from `codes` (image order,
/// row 0 at the top). Every code must be 0, 100 or 255.
#[no_mangle]
pub unsafe extern "C" fn ttogm_map_from_codes(
    info: *const TtogmMapInfo,
    codes: *const u8,
    out: *mut *mut TtogmMap,
) -> TtogmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let info = info.as_ref().ok_or_else(|| invalid("info is null"))?;
        let n = info
            .width
            .checked_mul(info.height)
            .filter(|&n| n > 0)
            .ok_or_else(|| invalid("map must have at least one cell"))?;
        if codes.is_null() {
            return Err(invalid("codes is null"));
        }
        if !(info.resolution > 0.0 && info.resolution.is_finite()) {
            return Err(invalid(format!("resolution must be positive, got {}", info.resolution)));
        }
        let codes = std::slice::from_raw_parts(codes, n).to_vec();
        if let Some(i) = codes.iter().position(|c| !matches!(c, 0 | 100 | 255)) {
            return Err(Error::NotDiscretized {
                row: i / info.width,
                col: i % info.width,
                value: codes[i],
            }
            .into());
        }
        let geometry = ttogm::gridmap::GridGeometry {
            width: info.width,
            height: info.height,
            resolution: info.resolution,
            origin_x: info.origin_x,
            origin_y: info.origin_y,
        };
        *out = boxed_map(CodeMap { geometry, codes });
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ttogm_map_free(map: *mut TtogmMap) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

#[no_mangle]
pub unsafe extern "C" fn ttogm_map_info(map: *const TtogmMap, info: *mut TtogmMapInfo) -> TtogmStatus {
    guard(|| {
        let m = map.as_ref().ok_or_else(|| invalid("map is null"))?;
        let g = m.map.geometry;
        *out_arg(info, "info")? = TtogmMapInfo {
            width: g.width,
            height: g.height,
            resolution: g.resolution,
            origin_x: g.origin_x,
            origin_y: g.origin_y,
        };
        Ok(())
    })
}

/// Borrowed pointer to the `width * height` cell codes; valid while the map lives.
#[no_mangle]
pub unsafe extern "C" fn ttogm_map_codes(map: *const TtogmMap) -> *const u8 {
    map.as_ref().map_or(ptr::null(), |m| m.map.codes.as_ptr())
}

/// Cleans `map` with `cleaner` (`identity`, `morph` or `model:<path>`) using
/// the default tiling and thresholds.
#[no_mangle]
pub unsafe extern "C" fn ttogm_map_clean(
    map: *const TtogmMap,
    cleaner: *const c_char,
    out: *mut *mut TtogmMap,
) -> TtogmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let m = map.as_ref().ok_or_else(|| invalid("map is null"))?;
        let kind = CleanerKind::parse(str_arg(cleaner, "cleaner")?)?;
        let cfg = PipelineConfig::default();
        *out = boxed_map(clean_map_with(&m.map, &kind, &cfg.cleaner.tiling(), &cfg.filtration)?);
        Ok(())
    })
}

/// IoU of `map` against `truth` for one cell class (a [`TtogmIouClass`]
/// value), maps aligned by identity.
#[no_mangle]
pub unsafe extern "C" fn ttogm_map_iou(
    map: *const TtogmMap,
    truth: *const TtogmMap,
    class: i32,
    out: *mut f64,
) -> TtogmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let m = map.as_ref().ok_or_else(|| invalid("map is null"))?;
        let t = truth.as_ref().ok_or_else(|| invalid("truth is null"))?;
        let class = match class {
            c if c == TtogmIouClass::TTOGM_IOU_OCCUPIED as i32 => IouClass::Occupied,
            c if c == TtogmIouClass::TTOGM_IOU_UNOCCUPIED as i32 => IouClass::Unoccupied,
            c => return Err(invalid(format!("unknown IoU class {c}"))),
        };
        *out = iou(&m.map, &t.map, &Alignment2D::default(), class)?;
        Ok(())
    })
}
