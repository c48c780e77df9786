//! Exercises the C ABI end to end: save a checkpoint with the core library,
//! load it back through the FFI surface, and compare inference results
//! against direct core calls. Also covers the documented error paths.

use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use crt_ffi::{
    crt_classify, crt_embed, crt_last_error, crt_model_channels, crt_model_config_json,
    crt_model_dim, crt_model_free, crt_model_load, crt_model_num_classes, crt_model_patch_len,
    crt_string_free, crt_version, CrtModelHandle, CrtStatus,
};

use crt_core::checkpoint;
use crt_core::model::{AblationMode, CrtModel, ModelConfig};
use crt_core::tensor::Tensor;

fn micro_config() -> ModelConfig {
    ModelConfig {
        dim: 8,
        encoder_layers: 1,
        decoder_layers: 1,
        heads: 2,
        cnn_width: 4,
        cnn_blocks: 1,
        mlp_ratio: 1.0,
        patch_len: 4,
        channels: 1,
        n_max: 16,
        num_classes: 3,
        ablation: AblationMode::Full,
    }
}

/// Saves a freshly initialised micro model and returns (dir, checkpoint path).
fn saved_checkpoint() -> (tempfile::TempDir, std::path::PathBuf) {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("model.ckpt");
    let model = CrtModel::init(micro_config(), 11).expect("init");
    checkpoint::save(&path, &model, 5, 11).expect("save");
    (dir, path)
}

fn load(path: &Path) -> *mut CrtModelHandle {
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut handle: *mut CrtModelHandle = ptr::null_mut();
    let status = unsafe { crt_model_load(cpath.as_ptr(), &mut handle) };
    assert_eq!(status, CrtStatus::Ok, "load failed: {}", last_error());
    assert!(!handle.is_null());
    handle
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(crt_last_error()) }.to_string_lossy().into_owned()
}

/// A deterministic series shaped for the micro model: 1 channel, 32 points
/// (time gives 8 patches, half-spectrum magnitude and phase 4 each).
fn sample_series() -> Vec<f64> {
    (0..32)
        .map(|i| {
            let t = i as f64 / 32.0;
            (std::f64::consts::TAU * 3.0 * t).sin() + 0.25 * (std::f64::consts::TAU * 7.0 * t).cos()
        })
        .collect()
}

#[test]
fn version_is_a_static_semver_string() {
    let v = unsafe { CStr::from_ptr(crt_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
    assert_eq!(v.split('.').count(), 3);
}

#[test]
fn load_query_classify_embed_free() {
    let (_dir, path) = saved_checkpoint();
    let handle = load(&path);

    unsafe {
        assert_eq!(crt_model_dim(handle), 8);
        assert_eq!(crt_model_num_classes(handle), 3);
        assert_eq!(crt_model_channels(handle), 1);
        assert_eq!(crt_model_patch_len(handle), 4);
    }

    let series = sample_series();
    let mut scores = [0.0f64; 3];
    let status = unsafe { crt_classify(handle, series.as_ptr(), 1, 32, scores.as_mut_ptr(), 3) };
    assert_eq!(status, CrtStatus::Ok, "{}", last_error());
    let total: f64 = scores.iter().sum();
    assert!((total - 1.0).abs() < 1e-12, "softmax scores must sum to 1, got {total}");
    assert!(scores.iter().all(|s| *s > 0.0 && *s < 1.0));

    let mut repr = [0.0f64; 8];
    let status = unsafe { crt_embed(handle, series.as_ptr(), 1, 32, repr.as_mut_ptr(), 8) };
    assert_eq!(status, CrtStatus::Ok, "{}", last_error());
    assert!(repr.iter().any(|v| v.abs() > 0.0), "representation must be non-trivial");

    unsafe { crt_model_free(handle) };
}

#[test]
fn ffi_inference_matches_direct_core_calls() {
    let (_dir, path) = saved_checkpoint();
    let handle = load(&path);
    let (model, _) = checkpoint::load(&path).expect("core load");

    let series = sample_series();
    let tensor = Tensor::new(vec![1, 32], series.clone()).unwrap();

    let mut scores = [0.0f64; 3];
    unsafe { crt_classify(handle, series.as_ptr(), 1, 32, scores.as_mut_ptr(), 3) };
    let direct_scores = model.score_series(&tensor).unwrap();
    assert_eq!(scores.to_vec(), direct_scores, "same checkpoint must score identically");

    let mut repr = [0.0f64; 8];
    unsafe { crt_embed(handle, series.as_ptr(), 1, 32, repr.as_mut_ptr(), 8) };
    let direct_repr = model.embed_series(&tensor).unwrap();
    assert_eq!(repr.to_vec(), direct_repr, "same checkpoint must embed identically");

    unsafe { crt_model_free(handle) };
}

#[test]
fn config_json_round_trips_the_model_section() {
    let (_dir, path) = saved_checkpoint();
    let handle = load(&path);

    let raw = unsafe { crt_model_config_json(handle) };
    assert!(!raw.is_null());
    let json = unsafe { CStr::from_ptr(raw) }.to_str().unwrap().to_owned();
    unsafe { crt_string_free(raw) };

    let parsed: serde_json::Value = serde_json::from_str(&json).expect("valid JSON");
    assert_eq!(parsed["model"]["dim"], 8);
    assert_eq!(parsed["model"]["num_classes"], 3);
    assert_eq!(parsed["epoch"], 5);
    assert_eq!(parsed["seed"], 11);

    unsafe { crt_model_free(handle) };
}

#[test]
fn null_arguments_are_reported_not_crashed() {
    let mut handle: *mut CrtModelHandle = ptr::null_mut();
    let status = unsafe { crt_model_load(ptr::null(), &mut handle) };
    assert_eq!(status, CrtStatus::NullArgument);
    assert!(last_error().contains("null"));

    let mut scores = [0.0f64; 3];
    let series = sample_series();
    let status =
        unsafe { crt_classify(ptr::null(), series.as_ptr(), 1, 32, scores.as_mut_ptr(), 3) };
    assert_eq!(status, CrtStatus::NullArgument);

    let (_dir, path) = saved_checkpoint();
    let loaded = load(&path);
    let status = unsafe { crt_classify(loaded, ptr::null(), 1, 32, scores.as_mut_ptr(), 3) };
    assert_eq!(status, CrtStatus::NullArgument);
    let status = unsafe { crt_embed(loaded, series.as_ptr(), 1, 32, ptr::null_mut(), 8) };
    assert_eq!(status, CrtStatus::NullArgument);
    unsafe { crt_model_free(loaded) };

    // Null frees and null metric queries are defined no-ops, not crashes.
    unsafe {
        crt_model_free(ptr::null_mut());
        crt_string_free(ptr::null_mut());
        assert_eq!(crt_model_dim(ptr::null()), 0);
        assert_eq!(crt_model_num_classes(ptr::null()), 0);
        assert!(crt_model_config_json(ptr::null()).is_null());
    }
}

#[test]
fn missing_file_maps_to_io_status_with_message() {
    let cpath = CString::new("/nonexistent/never/model.ckpt").unwrap();
    let mut handle: *mut CrtModelHandle = ptr::null_mut();
    let status = unsafe { crt_model_load(cpath.as_ptr(), &mut handle) };
    assert_eq!(status, CrtStatus::Io);
    assert!(handle.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn corrupt_checkpoint_maps_to_checkpoint_status() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.ckpt");
    std::fs::write(&path, b"definitely not a checkpoint").unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut handle: *mut CrtModelHandle = ptr::null_mut();
    let status = unsafe { crt_model_load(cpath.as_ptr(), &mut handle) };
    assert_eq!(status, CrtStatus::Checkpoint, "{}", last_error());
}

#[test]
fn size_mismatches_map_to_invalid_argument() {
    let (_dir, path) = saved_checkpoint();
    let handle = load(&path);
    let series = sample_series();
    let mut scores = [0.0f64; 3];

    // Wrong score buffer size.
    let status = unsafe { crt_classify(handle, series.as_ptr(), 1, 32, scores.as_mut_ptr(), 2) };
    assert_eq!(status, CrtStatus::InvalidArgument);
    assert!(last_error().contains("num_classes"));

    // Wrong channel count.
    let status = unsafe { crt_classify(handle, series.as_ptr(), 2, 16, scores.as_mut_ptr(), 3) };
    assert_eq!(status, CrtStatus::InvalidArgument);
    assert!(last_error().contains("channels"));

    // Length that the patcher cannot split evenly.
    let status = unsafe { crt_classify(handle, series.as_ptr(), 1, 30, scores.as_mut_ptr(), 3) };
    assert_ne!(status, CrtStatus::Ok);
    assert!(!last_error().is_empty());

    let mut repr = [0.0f64; 4];
    let status = unsafe { crt_embed(handle, series.as_ptr(), 1, 32, repr.as_mut_ptr(), 4) };
    assert_eq!(status, CrtStatus::InvalidArgument);
    assert!(last_error().contains("dim"));

    unsafe { crt_model_free(handle) };
}

#[test]
fn generated_header_declares_the_public_surface() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/crt.h");
    let text = std::fs::read_to_string(&header).expect("header generated at build time");
    for symbol in [
        "crt_version",
        "crt_last_error",
        "crt_model_load",
        "crt_model_free",
        "crt_model_config_json",
        "crt_string_free",
        "crt_classify",
        "crt_embed",
        "CRT_STATUS_OK",
        "CrtModelHandle",
    ] {
        assert!(text.contains(symbol), "header missing {symbol}");
    }
    // The handle stays opaque: no field list is emitted for it.
    assert!(!text.contains("struct CrtModelHandle {"));
}

#[test]
fn last_error_is_thread_local() {
    let cpath = CString::new("/nonexistent/never/model.ckpt").unwrap();
    let mut handle: *mut CrtModelHandle = ptr::null_mut();
    unsafe { crt_model_load(cpath.as_ptr(), &mut handle) };
    let here = last_error();
    assert!(!here.is_empty());

    let other = std::thread::spawn(last_error).join().unwrap();
    assert!(other.is_empty(), "fresh thread must start with an empty error");
}
