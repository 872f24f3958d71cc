//! Exercise the C surface from Rust: same calling conventions, no C
//! compiler needed. Uses a reduced configuration so forwards stay fast.

use std::ffi::{CStr, CString};
use std::ptr;

use ndarray::Array3;

use nbed_ffi::*;

const TINY: &str = "model.location_channels = 2,4\n\
                    model.semantic_stage_blocks = 1,2,2\n\
                    model.semantic_stage_channels = 12,24,48\n\
                    model.decoder_base_channels = 4\n\
                    model.attention_head_dim = 12\n\
                    model.seed = 5\n";

fn tiny_model() -> *mut NbedModel {
    let text = CString::new(TINY).unwrap();
    let mut handle: *mut NbedModel = ptr::null_mut();
    let s = unsafe { nbed_model_from_config_text(text.as_ptr(), &mut handle) };
    assert_eq!(s, NbedStatus::NbedOk);
    assert!(!handle.is_null());
    handle
}

#[test]
fn version_is_a_nonempty_c_string() {
    let v = unsafe { CStr::from_ptr(nbed_version()) };
    let v = v.to_str().unwrap();
    assert!(!v.is_empty());
    assert!(v.chars().next().unwrap().is_ascii_digit());
}

#[test]
fn forward_matches_the_core_crate() {
    let handle = tiny_model();
    let (h, w) = (24, 40);
    let image: Vec<f64> = (0..3 * h * w).map(|i| (i % 251) as f64 / 250.0).collect();
    let mut out = vec![0.0f64; h * w];
    let s = unsafe {
        nbed_model_forward(handle, image.as_ptr(), h, w, out.as_mut_ptr())
    };
    assert_eq!(s, NbedStatus::NbedOk);

    // reference result straight from the core crate
    let cfg = nbed::model::ModelConfig::from_text(TINY).unwrap();
    let model = nbed::model::Nbed::build(cfg).unwrap();
    let arr = Array3::from_shape_vec((3, h, w), image).unwrap();
    let expect = model.forward(&arr).unwrap();
    for (i, (&got, &want)) in out.iter().zip(expect.iter()).enumerate() {
        assert!((got - want).abs() < 1e-12, "pixel {i}: {got} vs {want}");
    }
    unsafe { nbed_model_free(handle) };
}

#[test]
fn parameter_count_round_trips() {
    let handle = tiny_model();
    let mut n = 0usize;
    let s = unsafe { nbed_model_parameter_count(handle, &mut n) };
    assert_eq!(s, NbedStatus::NbedOk);
    let cfg = nbed::model::ModelConfig::from_text(TINY).unwrap();
    assert_eq!(n, nbed::model::profile::count_parameters(&cfg));
    unsafe { nbed_model_free(handle) };
}

#[test]
fn null_arguments_are_rejected_not_crashed() {
    let mut handle: *mut NbedModel = ptr::null_mut();
    unsafe {
        assert_eq!(
            nbed_model_from_config_text(ptr::null(), &mut handle),
            NbedStatus::NbedNullArgument
        );
        let text = CString::new(TINY).unwrap();
        assert_eq!(
            nbed_model_from_config_text(text.as_ptr(), ptr::null_mut()),
            NbedStatus::NbedNullArgument
        );
        let mut out = [0.0f64; 4];
        assert_eq!(
            nbed_model_forward(ptr::null(), out.as_ptr(), 2, 2, out.as_mut_ptr()),
            NbedStatus::NbedNullArgument
        );
        nbed_model_free(ptr::null_mut()); // explicit no-op
    }
}

#[test]
fn bad_config_reports_a_message() {
    let text = CString::new("model.location_channels = 5,7\n").unwrap();
    let mut handle: *mut NbedModel = ptr::null_mut();
    let s = unsafe { nbed_model_from_config_text(text.as_ptr(), &mut handle) };
    assert_eq!(s, NbedStatus::NbedInvalidConfig);
    assert!(handle.is_null());
    let msg = unsafe { CStr::from_ptr(nbed_last_error_message()) };
    assert!(msg.to_str().unwrap().contains("location_channels"));
}

#[test]
fn missing_checkpoint_is_a_checkpoint_or_io_error() {
    let path = CString::new("/definitely/not/here.nbed").unwrap();
    let mut handle: *mut NbedModel = ptr::null_mut();
    let s = unsafe { nbed_model_from_checkpoint(path.as_ptr(), &mut handle) };
    assert!(matches!(
        s,
        NbedStatus::NbedBadCheckpoint | NbedStatus::NbedIoFailure
    ));
    assert!(handle.is_null());
}

#[test]
fn zero_sized_image_is_a_shape_error() {
    let handle = tiny_model();
    let mut out = [0.0f64; 1];
    let img = [0.0f64; 3];
    let s = unsafe { nbed_model_forward(handle, img.as_ptr(), 0, 1, out.as_mut_ptr()) };
    assert_eq!(s, NbedStatus::NbedShapeMismatch);
    unsafe { nbed_model_free(handle) };
}

#[test]
fn generated_header_declares_the_surface() {
    let header = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/include/nbed.h"
    ))
    .expect("include/nbed.h missing");
    for sym in [
        "NbedStatus",
        "NbedModel",
        "nbed_version",
        "nbed_last_error_message",
        "nbed_model_new_default",
        "nbed_model_from_config_text",
        "nbed_model_from_checkpoint",
        "nbed_model_parameter_count",
        "nbed_model_forward",
        "nbed_model_free",
    ] {
        assert!(header.contains(sym), "header lacks {sym}");
    }
    assert!(header.contains("#ifndef NBED_H"));
}
