//! C ABI over the panvox reconstruction engine.
//!
//! Everything crosses the boundary through an opaque [`PvxEngine`] handle,
//! plain C structs and [`PvxStatus`] codes. The generated header lands in
//! `include/panvox.h`. On failure, a thread-local message is available via
//! [`pvx_last_error_message`].

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use panvox::association::{associate, AssociationConfig, AssociationError};
use panvox::dataset::PanopticFrame;
use panvox::fusion::{integrate_frame, FusionConfig};
use panvox::geometry::{Intrinsics, Pose};
use panvox::labels::{ClassDef, LabelMap};
use panvox::pipeline::{evaluate, ReportFormat, RunConfig};
use panvox::projection::DepthRange;
use panvox::voxel::{write_dump, InstanceRegistry, VoxelBlockGrid};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PvxStatus {
    PvxOk = 0,
    /// A required pointer argument was null.
    PvxNullArgument = 1,
    /// Configuration or class table rejected.
    PvxInvalidArgument = 2,
    /// Frame data rejected (dimensions, pose, segment table).
    PvxInvalidFrame = 3,
    /// Filesystem failure.
    PvxIoError = 4,
    /// Unexpected internal failure; see pvx_last_error_message().
    PvxInternalError = 5,
}

/// Reconstruction tunables; obtain defaults via pvx_config_default().
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PvxConfig {
    /// Voxel edge length in meters.
    pub voxel_size: f64,
    /// TSDF truncation in meters; any value <= 0 selects 4 * voxel_size.
    pub truncation: f64,
    /// Fusion weight cap per voxel.
    pub w_max: f32,
    /// Weight of a single observation.
    pub w_frame: f32,
    /// Likelihood of starting a new instance; a match must beat it.
    pub new_instance_likelihood: f64,
    /// Segments smaller than this many pixels are dropped.
    pub min_segment_pixels: usize,
    /// Valid depth window in meters.
    pub depth_min: f64,
    pub depth_max: f64,
}

impl PvxConfig {
    fn to_run_config(self) -> RunConfig {
        RunConfig {
            voxel_size: self.voxel_size,
            truncation: (self.truncation > 0.0).then_some(self.truncation),
            w_max: self.w_max,
            w_frame: self.w_frame,
            new_instance_likelihood: self.new_instance_likelihood,
            min_segment_pixels: self.min_segment_pixels,
            depth_range: DepthRange { min: self.depth_min, max: self.depth_max },
        }
    }
}

/// One posed panoptic RGB-D observation. Image buffers are row-major,
/// width * height elements. The pose is a 4x4 row-major world-from-camera
/// matrix (16 doubles).
#[repr(C)]
pub struct PvxFrame {
    pub index: u32,
    pub width: u32,
    pub height: u32,
    /// Depth in meters; 0 marks invalid pixels.
    pub depth_m: *const f32,
    /// Per-pixel local segment id; 0 marks unlabeled pixels.
    pub segment_image: *const u16,
    /// Parallel arrays mapping local segment ids to class ids.
    pub segment_ids: *const u16,
    pub segment_classes: *const u16,
    pub n_segments: usize,
    pub pose_world_from_camera: *const f64,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// Opaque reconstruction session; create with pvx_engine_new(), destroy
/// with pvx_engine_free().
pub struct PvxEngine {
    grid: VoxelBlockGrid,
    registry: InstanceRegistry,
    labels: LabelMap,
    assoc_config: AssociationConfig,
    fusion_config: FusionConfig,
    frames_integrated: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: impl std::fmt::Display) {
    let text = CString::new(message.to_string()).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = text);
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pvx_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn pvx_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Fills `out` with the default configuration.
///
/// # Safety
/// `out` must point to writable memory for one `PvxConfig`.
#[no_mangle]
pub unsafe extern "C" fn pvx_config_default(out: *mut PvxConfig) -> PvxStatus {
    if out.is_null() {
        set_last_error("config output pointer is null");
        return PvxStatus::PvxNullArgument;
    }
    let defaults = RunConfig::default();
    *out = PvxConfig {
        voxel_size: defaults.voxel_size,
        truncation: 0.0,
        w_max: defaults.w_max,
        w_frame: defaults.w_frame,
        new_instance_likelihood: defaults.new_instance_likelihood,
        min_segment_pixels: defaults.min_segment_pixels,
        depth_min: defaults.depth_range.min,
        depth_max: defaults.depth_range.max,
    };
    PvxStatus::PvxOk
}

/// Creates an engine for `n_classes` semantic classes with ids 1..=n.
/// `class_is_thing[i]` flags class id i+1 as countable. `class_names` may
/// be null or hold `n_classes` C strings. Returns null on error (see
/// pvx_last_error_message()).
///
/// # Safety
/// `config` must point to a valid `PvxConfig`; `class_is_thing` must hold
/// `n_classes` bytes; `class_names`, when non-null, must hold `n_classes`
/// valid C strings.
#[no_mangle]
pub unsafe extern "C" fn pvx_engine_new(
    config: *const PvxConfig,
    class_is_thing: *const u8,
    class_names: *const *const c_char,
    n_classes: usize,
) -> *mut PvxEngine {
    let result = catch_unwind(AssertUnwindSafe(|| {
        if config.is_null() || class_is_thing.is_null() {
            set_last_error("config or class table pointer is null");
            return std::ptr::null_mut();
        }
        if n_classes == 0 || n_classes > u16::MAX as usize {
            set_last_error(format!("class count {n_classes} out of range"));
            return std::ptr::null_mut();
        }
        let config = *config;
        let run = config.to_run_config();
        if let Err(e) = run.validate() {
            set_last_error(e);
            return std::ptr::null_mut();
        }
        let flags = std::slice::from_raw_parts(class_is_thing, n_classes);
        let mut defs = Vec::with_capacity(n_classes);
        for (i, &flag) in flags.iter().enumerate() {
            let name = if class_names.is_null() {
                format!("class{}", i + 1)
            } else {
                let ptr = *class_names.add(i);
                if ptr.is_null() {
                    format!("class{}", i + 1)
                } else {
                    CStr::from_ptr(ptr).to_string_lossy().into_owned()
                }
            };
            defs.push(ClassDef { id: i as u16 + 1, name, is_thing: flag != 0 });
        }
        let labels = match LabelMap::new(defs) {
            Ok(labels) => labels,
            Err(e) => {
                set_last_error(e);
                return std::ptr::null_mut();
            }
        };
        let engine = PvxEngine {
            grid: VoxelBlockGrid::new(
                run.voxel_size,
                run.effective_truncation(),
                run.w_max,
                labels.n_classes(),
            ),
            registry: InstanceRegistry::new(&labels),
            labels,
            assoc_config: AssociationConfig {
                new_instance_likelihood: run.new_instance_likelihood,
                min_segment_pixels: run.min_segment_pixels,
                depth_range: run.depth_range,
            },
            fusion_config: FusionConfig { w_frame: run.w_frame, depth_range: run.depth_range },
            frames_integrated: 0,
        };
        Box::into_raw(Box::new(engine))
    }));
    result.unwrap_or_else(|_| {
        set_last_error("panic in pvx_engine_new");
        std::ptr::null_mut()
    })
}

/// Destroys an engine created by pvx_engine_new(). Null is ignored.
///
/// # Safety
/// `engine` must be null or a pointer returned by pvx_engine_new() that has
/// not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn pvx_engine_free(engine: *mut PvxEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

unsafe fn frame_from_ffi(engine: &PvxEngine, frame: &PvxFrame) -> Result<PanopticFrame, String> {
    if frame.depth_m.is_null()
        || frame.segment_image.is_null()
        || frame.pose_world_from_camera.is_null()
        || (frame.n_segments > 0 && (frame.segment_ids.is_null() || frame.segment_classes.is_null()))
    {
        return Err("frame buffer pointer is null".into());
    }
    let intrinsics = Intrinsics::new(
        frame.fx,
        frame.fy,
        frame.cx,
        frame.cy,
        frame.width,
        frame.height,
    )
    .map_err(|e| e.to_string())?;
    let n = (frame.width as usize) * (frame.height as usize);
    let depth = std::slice::from_raw_parts(frame.depth_m, n).to_vec();
    let segment_image = std::slice::from_raw_parts(frame.segment_image, n).to_vec();
    let mut segment_classes = BTreeMap::new();
    for i in 0..frame.n_segments {
        segment_classes.insert(
            *frame.segment_ids.add(i),
            *frame.segment_classes.add(i),
        );
    }
    let m = std::slice::from_raw_parts(frame.pose_world_from_camera, 16);
    let rotation = nalgebra::Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
    let translation = nalgebra::Vector3::new(m[3], m[7], m[11]);
    if m[12] != 0.0 || m[13] != 0.0 || m[14] != 0.0 || m[15] != 1.0 {
        return Err("pose bottom row must be 0 0 0 1".into());
    }
    let pose = Pose::new(rotation, translation).map_err(|e| e.to_string())?;
    let frame = PanopticFrame {
        index: frame.index,
        depth,
        segment_image,
        segment_classes,
        pose,
        intrinsics,
    };
    frame.validate().map_err(|e| e.to_string())?;
    let _ = engine;
    Ok(frame)
}

/// Associates and fuses one frame. Frames must arrive in order; the call
/// blocks until the frame is fully integrated.
///
/// # Safety
/// `engine` must be a live engine pointer; `frame` and the buffers it
/// references must satisfy the layout documented on `PvxFrame`.
#[no_mangle]
pub unsafe extern "C" fn pvx_engine_integrate_frame(
    engine: *mut PvxEngine,
    frame: *const PvxFrame,
) -> PvxStatus {
    let result = catch_unwind(AssertUnwindSafe(|| {
        if engine.is_null() || frame.is_null() {
            set_last_error("engine or frame pointer is null");
            return PvxStatus::PvxNullArgument;
        }
        let engine = &mut *engine;
        let frame = match frame_from_ffi(engine, &*frame) {
            Ok(frame) => frame,
            Err(e) => {
                set_last_error(e);
                return PvxStatus::PvxInvalidFrame;
            }
        };
        let assoc = match associate(
            &frame,
            &engine.grid,
            &mut engine.registry,
            &engine.labels,
            &engine.assoc_config,
        ) {
            Ok(assoc) => assoc,
            Err(e) => {
                let status = match &e {
                    AssociationError::MissingSegmentClass { .. }
                    | AssociationError::UnknownClass { .. }
                    | AssociationError::Frame(_) => PvxStatus::PvxInvalidFrame,
                    _ => PvxStatus::PvxInternalError,
                };
                set_last_error(e);
                return status;
            }
        };
        if let Err(e) = integrate_frame(&mut engine.grid, &frame, &assoc, &engine.fusion_config) {
            set_last_error(e);
            return PvxStatus::PvxInvalidFrame;
        }
        engine.frames_integrated += 1;
        PvxStatus::PvxOk
    }));
    result.unwrap_or_else(|_| {
        set_last_error("panic in pvx_engine_integrate_frame");
        PvxStatus::PvxInternalError
    })
}

/// Number of frames successfully integrated.
///
/// # Safety
/// `engine` must be a live engine pointer.
#[no_mangle]
pub unsafe extern "C" fn pvx_engine_frame_count(engine: *const PvxEngine) -> u64 {
    if engine.is_null() {
        return 0;
    }
    (*engine).frames_integrated
}

/// Number of instances in the registry.
///
/// # Safety
/// `engine` must be a live engine pointer.
#[no_mangle]
pub unsafe extern "C" fn pvx_engine_instance_count(engine: *const PvxEngine) -> usize {
    if engine.is_null() {
        return 0;
    }
    (*engine).registry.len()
}

/// Number of voxels that have received at least one observation.
///
/// # Safety
/// `engine` must be a live engine pointer.
#[no_mangle]
pub unsafe extern "C" fn pvx_engine_observed_voxel_count(engine: *const PvxEngine) -> usize {
    if engine.is_null() {
        return 0;
    }
    (*engine).grid.observed_voxel_count()
}

/// Writes the labeled voxel map to `path` in the `panvox v1` text format.
///
/// # Safety
/// `engine` must be a live engine pointer and `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn pvx_engine_write_dump(
    engine: *const PvxEngine,
    path: *const c_char,
) -> PvxStatus {
    let result = catch_unwind(AssertUnwindSafe(|| {
        if engine.is_null() || path.is_null() {
            set_last_error("engine or path pointer is null");
            return PvxStatus::PvxNullArgument;
        }
        let engine = &*engine;
        let path = match CStr::from_ptr(path).to_str() {
            Ok(path) => Path::new(path),
            Err(_) => {
                set_last_error("path is not valid UTF-8");
                return PvxStatus::PvxInvalidArgument;
            }
        };
        let file = match std::fs::File::create(path) {
            Ok(file) => file,
            Err(e) => {
                set_last_error(format!("{}: {e}", path.display()));
                return PvxStatus::PvxIoError;
            }
        };
        let mut writer = std::io::BufWriter::new(file);
        match write_dump(
            &mut writer,
            engine.grid.voxel_size(),
            engine.grid.n_classes(),
            &engine.grid.dump_records(&engine.labels),
        ) {
            Ok(()) => PvxStatus::PvxOk,
            Err(e) => {
                set_last_error(e);
                PvxStatus::PvxIoError
            }
        }
    }));
    result.unwrap_or_else(|_| {
        set_last_error("panic in pvx_engine_write_dump");
        PvxStatus::PvxInternalError
    })
}

/// Compares two `panvox v1` dumps and returns the mean PQ/SQ/RQ. Output
/// pointers may be null when a value is not needed.
///
/// # Safety
/// The path arguments must be valid C strings; non-null outputs must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn pvx_evaluate_files(
    pred_path: *const c_char,
    gt_path: *const c_char,
    labels_path: *const c_char,
    mean_pq: *mut f64,
    mean_sq: *mut f64,
    mean_rq: *mut f64,
) -> PvxStatus {
    let result = catch_unwind(AssertUnwindSafe(|| {
        if pred_path.is_null() || gt_path.is_null() || labels_path.is_null() {
            set_last_error("path pointer is null");
            return PvxStatus::PvxNullArgument;
        }
        let to_path = |p: *const c_char| -> Result<&Path, PvxStatus> {
            CStr::from_ptr(p).to_str().map(Path::new).map_err(|_| {
                set_last_error("path is not valid UTF-8");
                PvxStatus::PvxInvalidArgument
            })
        };
        let (pred, gt, labels) = match (to_path(pred_path), to_path(gt_path), to_path(labels_path))
        {
            (Ok(a), Ok(b), Ok(c)) => (a, b, c),
            (Err(s), _, _) | (_, Err(s), _) | (_, _, Err(s)) => return s,
        };
        let report = match evaluate(pred, gt, labels, ReportFormat::Tsv) {
            Ok(report) => report,
            Err(e) => {
                set_last_error(&e);
                return PvxStatus::PvxIoError;
            }
        };
        let mean_line = report.lines().find(|l| l.starts_with("mean")).unwrap_or_default();
        let fields: Vec<&str> = mean_line.split('\t').collect();
        let parse = |i: usize| fields.get(i).and_then(|v| v.parse::<f64>().ok()).unwrap_or(0.0);
        if !mean_pq.is_null() {
            *mean_pq = parse(1);
        }
        if !mean_sq.is_null() {
            *mean_sq = parse(2);
        }
        if !mean_rq.is_null() {
            *mean_rq = parse(3);
        }
        PvxStatus::PvxOk
    }));
    result.unwrap_or_else(|_| {
        set_last_error("panic in pvx_evaluate_files");
        PvxStatus::PvxInternalError
    })
}
