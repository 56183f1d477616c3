//! C interface to `phasematch`.
//!
//! Objects cross the boundary as opaque handles created by `pm_*_load` /
//! `pm_*_new` style functions and released with the matching `pm_*_free`.
//! Every fallible call returns a [`PmStatus`]; on failure
//! [`pm_last_error_message`] describes the most recent error on the calling
//! thread. Panics never unwind into C.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use phasematch::convnet::{load_model, ConvNetError, NetworkParams};
use phasematch::geometry::Similarity;
use phasematch::imaging::{load_gray, GrayImage, ImageError};
use phasematch::matcher::{
    run_pipeline, GeometricModel, MatchResult, MatcherConfig, MatcherError, NccScorer, NetScorer,
    PatchScorer,
};
use phasematch::pc::{
    compute_pc_maps, detect_keypoints, BankParams, DetectParams, Keypoint, KeypointKind, LogGaborBank,
    PcError, Threshold,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    FileNotFound = 3,
    Io = 4,
    BadFormat = 5,
    ShapeMismatch = 6,
    NoKeypoints = 7,
    NoConsensus = 8,
    OutOfRange = 9,
    Panic = 10,
    Internal = 11,
}

pub struct PmImage(GrayImage);
pub struct PmModel(NetworkParams);
pub struct PmKeypoints(Vec<Keypoint>);
pub struct PmMatchResult {
    result: MatchResult,
    points: Vec<(Keypoint, Keypoint)>,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmKeypoint {
    pub x: u32,
    pub y: u32,
    pub strength: f64,
    /// 0 = corner, 1 = edge.
    pub kind: u8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmMatch {
    pub ax: u32,
    pub ay: u32,
    pub bx: u32,
    pub by: u32,
    pub score: f64,
    pub inlier: u8,
}

/// `b = scale * R(rotation) * a + (tx, ty)`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmTransform {
    pub scale: f64,
    pub rotation: f64,
    pub tx: f64,
    pub ty: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmDetectOptions {
    pub nms_radius: u32,
    /// Keep maxima above mean + k * stddev of the moment map.
    pub threshold_k: f64,
    pub max_keypoints: u32,
    pub border: u32,
    /// Non-zero enables the noise threshold.
    pub noise_compensation: u8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmMatchOptions {
    pub detect: PmDetectOptions,
    pub score_threshold: f64,
    /// Chebyshev gate in pixels; zero or negative scores every pair.
    pub search_radius: f64,
    pub mutual_best: u8,
    /// 0 = translation, 1 = similarity.
    pub geometry: u8,
    pub iterations: u32,
    pub tolerance: f64,
    pub min_inliers: u32,
    pub seed: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

type Failure = (PmStatus, String);

fn fail<T>(status: PmStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err((status, msg.into()))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PmStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("internal panic: {msg}"));
            PmStatus::Panic
        }
    }
}

fn image_failure(e: ImageError) -> Failure {
    let status = match &e {
        ImageError::FileNotFound(_) => PmStatus::FileNotFound,
        ImageError::UnsupportedFormat(_) | ImageError::CorruptHeader(_) => PmStatus::BadFormat,
        ImageError::IoFailure(_) => PmStatus::Io,
        ImageError::Invalid(_) => PmStatus::InvalidArgument,
        ImageError::OutOfBounds { .. } => PmStatus::OutOfRange,
    };
    (status, e.to_string())
}

fn model_failure(e: ConvNetError) -> Failure {
    let status = match &e {
        ConvNetError::IoFailure(io) if io.kind() == std::io::ErrorKind::NotFound => PmStatus::FileNotFound,
        ConvNetError::IoFailure(_) => PmStatus::Io,
        ConvNetError::BadMagic | ConvNetError::VersionMismatch { .. } | ConvNetError::ChecksumMismatch => {
            PmStatus::BadFormat
        }
        ConvNetError::ShapeMismatch(_) | ConvNetError::LengthMismatch(..) => PmStatus::ShapeMismatch,
        _ => PmStatus::InvalidArgument,
    };
    (status, e.to_string())
}

fn pc_failure(e: PcError) -> Failure {
    let status = match &e {
        PcError::DimensionMismatch { .. } => PmStatus::ShapeMismatch,
        PcError::Io(_) => PmStatus::Io,
        _ => PmStatus::InvalidArgument,
    };
    (status, e.to_string())
}

fn matcher_failure(e: MatcherError) -> Failure {
    let status = match &e {
        MatcherError::ModelShapeMismatch { .. } => PmStatus::ShapeMismatch,
        MatcherError::NoKeypoints(_) => PmStatus::NoKeypoints,
        MatcherError::NoConsensus { .. } | MatcherError::InsufficientMatches { .. } => PmStatus::NoConsensus,
        MatcherError::InvalidConfig(_) | MatcherError::InvalidInput(_) => PmStatus::InvalidArgument,
        MatcherError::Pc(_) | MatcherError::Model(_) => PmStatus::InvalidArgument,
        MatcherError::Image(_) => PmStatus::OutOfRange,
        MatcherError::Io(_) | MatcherError::MatchFile(_) => PmStatus::Io,
    };
    (status, e.to_string())
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, Failure> {
    if path.is_null() {
        return fail(PmStatus::NullPointer, "path is null");
    }
    match CStr::from_ptr(path).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => fail(PmStatus::InvalidArgument, "path is not valid UTF-8"),
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| (PmStatus::NullPointer, format!("{what} is null")))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return fail(PmStatus::NullPointer, "output pointer is null");
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Loads an 8- or 16-bit grayscale PGM/PNG into `[0, 1]` values.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pm_image_load(path: *const c_char, out: *mut *mut PmImage) -> PmStatus {
    guard(|| {
        let p = path_arg(path)?;
        let img = load_gray(&p).map_err(image_failure)?;
        store(out, PmImage(img))
    })
}

/// Copies `width * height` row-major values in `[0, 1]`.
///
/// # Safety
/// `pixels` must point to `width * height` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pm_image_from_pixels(
    width: u32,
    height: u32,
    pixels: *const f64,
    out: *mut *mut PmImage,
) -> PmStatus {
    guard(|| {
        if pixels.is_null() {
            return fail(PmStatus::NullPointer, "pixels is null");
        }
        let n = (width as usize)
            .checked_mul(height as usize)
            .ok_or((PmStatus::InvalidArgument, "image too large".to_string()))?;
        let px = std::slice::from_raw_parts(pixels, n).to_vec();
        let img = GrayImage::new(width as usize, height as usize, px).map_err(image_failure)?;
        store(out, PmImage(img))
    })
}

/// # Safety
/// `img` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pm_image_width(img: *const PmImage) -> u32 {
    img.as_ref().map_or(0, |i| i.0.width() as u32)
}

/// # Safety
/// `img` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pm_image_height(img: *const PmImage) -> u32 {
    img.as_ref().map_or(0, |i| i.0.height() as u32)
}

/// # Safety
/// `img` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pm_image_free(img: *mut PmImage) {
    free(img)
}

/// Loads a trained model file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pm_model_load(path: *const c_char, out: *mut *mut PmModel) -> PmStatus {
    guard(|| {
        let p = path_arg(path)?;
        if !p.is_file() {
            return fail(PmStatus::FileNotFound, format!("file not found: {}", p.display()));
        }
        let params = load_model(&p).map_err(model_failure)?;
        store(out, PmModel(params))
    })
}

/// Side length of the square patches the model expects; 0 for null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pm_model_patch_size(model: *const PmModel) -> u32 {
    model.as_ref().map_or(0, |m| m.0.spec().input_size as u32)
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pm_model_free(model: *mut PmModel) {
    free(model)
}

fn detect_params(o: &PmDetectOptions) -> DetectParams {
    DetectParams {
        nms_radius: o.nms_radius as usize,
        threshold: Threshold::MeanPlusStd(o.threshold_k),
        max_count: o.max_keypoints as usize,
        border: o.border as usize,
        ..DetectParams::default()
    }
}

fn default_detect() -> PmDetectOptions {
    let d = DetectParams::default();
    PmDetectOptions {
        nms_radius: d.nms_radius as u32,
        threshold_k: match d.threshold {
            Threshold::MeanPlusStd(k) => k,
            Threshold::Fixed(_) => 1.0,
        },
        max_keypoints: d.max_count as u32,
        border: d.border as u32,
        noise_compensation: 1,
    }
}

/// Fills `opts` with the library defaults.
///
/// # Safety
/// `opts` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pm_detect_options_default(opts: *mut PmDetectOptions) -> PmStatus {
    guard(|| {
        let o = opts.as_mut().ok_or((PmStatus::NullPointer, "opts is null".to_string()))?;
        *o = default_detect();
        Ok(())
    })
}

/// Fills `opts` with the library defaults.
///
/// # Safety
/// `opts` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pm_match_options_default(opts: *mut PmMatchOptions) -> PmStatus {
    guard(|| {
        let o = opts.as_mut().ok_or((PmStatus::NullPointer, "opts is null".to_string()))?;
        let c = MatcherConfig::default();
        *o = PmMatchOptions {
            detect: default_detect(),
            score_threshold: c.score_threshold,
            search_radius: c.search_radius.unwrap_or(0.0),
            mutual_best: c.mutual_best as u8,
            geometry: 0,
            iterations: c.iterations as u32,
            tolerance: c.tolerance,
            min_inliers: c.min_inliers as u32,
            seed: c.seed,
        };
        Ok(())
    })
}

/// Detects phase-congruency corners.
///
/// # Safety
/// `img` must be a live handle, `opts` null (defaults) or readable, and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pm_detect_keypoints(
    img: *const PmImage,
    opts: *const PmDetectOptions,
    out: *mut *mut PmKeypoints,
) -> PmStatus {
    guard(|| {
        let img = &handle(img, "image")?.0;
        let o = opts.as_ref().copied().unwrap_or_else(default_detect);
        let bank = LogGaborBank::build(&BankParams::default(), img.width(), img.height()).map_err(pc_failure)?;
        let maps = compute_pc_maps(img, &bank, o.noise_compensation != 0).map_err(pc_failure)?;
        store(out, PmKeypoints(detect_keypoints(&maps, &detect_params(&o))))
    })
}

/// # Safety
/// `kps` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pm_keypoints_len(kps: *const PmKeypoints) -> usize {
    kps.as_ref().map_or(0, |k| k.0.len())
}

/// # Safety
/// `kps` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pm_keypoints_get(kps: *const PmKeypoints, index: usize, out: *mut PmKeypoint) -> PmStatus {
    guard(|| {
        let k = handle(kps, "keypoints")?;
        let o = out.as_mut().ok_or((PmStatus::NullPointer, "out is null".to_string()))?;
        let kp = k
            .0
            .get(index)
            .ok_or_else(|| (PmStatus::OutOfRange, format!("index {index} of {}", k.0.len())))?;
        *o = PmKeypoint {
            x: kp.x as u32,
            y: kp.y as u32,
            strength: kp.strength,
            kind: match kp.kind {
                KeypointKind::Corner => 0,
                KeypointKind::Edge => 1,
            },
        };
        Ok(())
    })
}

/// # Safety
/// `kps` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pm_keypoints_free(kps: *mut PmKeypoints) {
    free(kps)
}

fn matcher_config(o: &PmMatchOptions, patch_size: usize) -> Result<MatcherConfig, Failure> {
    let model = match o.geometry {
        0 => GeometricModel::Translation,
        1 => GeometricModel::Similarity,
        g => return fail(PmStatus::InvalidArgument, format!("unknown geometry {g}")),
    };
    Ok(MatcherConfig {
        patch_size,
        score_threshold: o.score_threshold,
        mutual_best: o.mutual_best != 0,
        search_radius: (o.search_radius > 0.0).then_some(o.search_radius),
        coarse_alignment: None,
        model,
        iterations: o.iterations as usize,
        tolerance: o.tolerance,
        min_inliers: o.min_inliers as usize,
        seed: o.seed,
        detect: detect_params(&o.detect),
        noise_compensation: o.detect.noise_compensation != 0,
    })
}

unsafe fn run_match(
    a: *const PmImage,
    b: *const PmImage,
    scorer: &dyn PatchScorer,
    opts: *const PmMatchOptions,
    out: *mut *mut PmMatchResult,
) -> Result<(), Failure> {
    let (a, b) = (&handle(a, "image a")?.0, &handle(b, "image b")?.0);
    let o = match opts.as_ref() {
        Some(o) => *o,
        None => {
            let mut o = std::mem::zeroed();
            pm_match_options_default(&mut o);
            o
        }
    };
    let cfg = matcher_config(&o, scorer.patch_size())?;
    let run = run_pipeline(a, b, scorer, &cfg, &BankParams::default()).map_err(matcher_failure)?;
    let result = run.result.map_err(matcher_failure)?;
    let points = result
        .matches
        .iter()
        .map(|m| (run.keypoints_a[m.a], run.keypoints_b[m.b]))
        .collect();
    store(out, PmMatchResult { result, points })
}

/// Matches two images with a trained model.
///
/// # Safety
/// Handles must be live, `opts` null (defaults) or readable, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pm_match(
    a: *const PmImage,
    b: *const PmImage,
    model: *const PmModel,
    opts: *const PmMatchOptions,
    out: *mut *mut PmMatchResult,
) -> PmStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let scorer = NetScorer::new(&m.0).map_err(matcher_failure)?;
        run_match(a, b, &scorer, opts, out)
    })
}

/// Matches two images with normalized cross-correlation of
/// `patch_size`-pixel patches (16, 32 or 64).
///
/// # Safety
/// Handles must be live, `opts` null (defaults) or readable, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pm_match_ncc(
    a: *const PmImage,
    b: *const PmImage,
    patch_size: u32,
    opts: *const PmMatchOptions,
    out: *mut *mut PmMatchResult,
) -> PmStatus {
    guard(|| run_match(a, b, &NccScorer::new(patch_size as usize), opts, out))
}

/// Number of accepted matches (inliers and outliers).
///
/// # Safety
/// `r` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pm_match_result_len(r: *const PmMatchResult) -> usize {
    r.as_ref().map_or(0, |r| r.result.matches.len())
}

/// # Safety
/// `r` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pm_match_result_inliers(r: *const PmMatchResult) -> usize {
    r.as_ref().map_or(0, |r| r.result.inlier_count)
}

/// # Safety
/// `r` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pm_match_result_get(r: *const PmMatchResult, index: usize, out: *mut PmMatch) -> PmStatus {
    guard(|| {
        let r = handle(r, "match result")?;
        let o = out.as_mut().ok_or((PmStatus::NullPointer, "out is null".to_string()))?;
        let n = r.result.matches.len();
        let m = r
            .result
            .matches
            .get(index)
            .ok_or_else(|| (PmStatus::OutOfRange, format!("index {index} of {n}")))?;
        let (a, b) = r.points[index];
        *o = PmMatch {
            ax: a.x as u32,
            ay: a.y as u32,
            bx: b.x as u32,
            by: b.y as u32,
            score: m.score,
            inlier: m.inlier as u8,
        };
        Ok(())
    })
}

/// # Safety
/// `r` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pm_match_result_transform(r: *const PmMatchResult, out: *mut PmTransform) -> PmStatus {
    guard(|| {
        let r = handle(r, "match result")?;
        let o = out.as_mut().ok_or((PmStatus::NullPointer, "out is null".to_string()))?;
        let Similarity { scale, rotation, tx, ty } = r.result.transform;
        *o = PmTransform { scale, rotation, tx, ty };
        Ok(())
    })
}

/// # Safety
/// `r` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pm_match_result_free(r: *mut PmMatchResult) {
    free(r)
}
