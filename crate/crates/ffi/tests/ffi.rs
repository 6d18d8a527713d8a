use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use irts_core::models::{impute, ModelConfig};
use irts_core::rng;
use irts_core::train::TrainConfig;
use irts_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(irts_last_error()) }.to_string_lossy().into_owned()
}

fn generate(n: usize, seed: u64, labeled: bool) -> *mut IrtsDataset {
    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { irts_dataset_generate(n, seed, labeled, &mut ds) }, IrtsStatus::Ok);
    ds
}

fn tiny_config(classes: usize) -> CString {
    let cfg = TrainConfig {
        model: ModelConfig {
            classes,
            ..ModelConfig::tiny(3)
        },
        epochs: 1,
        batch_size: 16,
        ..Default::default()
    };
    CString::new(serde_json::to_string(&cfg).unwrap()).unwrap()
}

fn train_tiny(classes: usize) -> (*mut IrtsDataset, *mut IrtsModel) {
    let ds = generate(40, 3, classes > 0);
    let mut model = ptr::null_mut();
    let cfg = tiny_config(classes);
    let status = unsafe { irts_train(cfg.as_ptr(), ds, ds, &mut model) };
    assert_eq!(status, IrtsStatus::Ok, "{}", last_error());
    (ds, model)
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(irts_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn null_arguments_are_reported() {
    assert_eq!(unsafe { irts_dataset_generate(3, 0, false, ptr::null_mut()) }, IrtsStatus::NullPointer);
    assert!(last_error().contains("out"));
    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { irts_dataset_load(ptr::null(), &mut ds) }, IrtsStatus::NullPointer);
    assert!(ds.is_null());
    assert_eq!(unsafe { irts_dataset_len(ptr::null()) }, 0);
    assert_eq!(unsafe { irts_model_classes(ptr::null()) }, 0);
    unsafe {
        irts_dataset_free(ptr::null_mut());
        irts_model_free(ptr::null_mut());
    }
}

#[test]
fn dataset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("d.jsonl").to_str().unwrap()).unwrap();
    let ds = generate(25, 7, true);
    assert_eq!(unsafe { irts_dataset_len(ds) }, 25);
    assert_eq!(unsafe { irts_dataset_channels(ds) }, 3);
    assert_eq!(unsafe { irts_dataset_save(ds, path.as_ptr()) }, IrtsStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { irts_dataset_load(path.as_ptr(), &mut back) }, IrtsStatus::Ok);
    assert_eq!(unsafe { irts_dataset_len(back) }, 25);
    unsafe {
        irts_dataset_free(ds);
        irts_dataset_free(back);
    }
}

#[test]
fn error_codes_map_core_errors() {
    let missing = CString::new("/nonexistent/irts/data.jsonl").unwrap();
    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { irts_dataset_load(missing.as_ptr(), &mut ds) }, IrtsStatus::Io);
    assert!(!last_error().is_empty());

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, b"not a checkpoint").unwrap();
    let bad = CString::new(bad.to_str().unwrap()).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { irts_model_load(bad.as_ptr(), &mut model) }, IrtsStatus::Checkpoint);

    let data = generate(10, 1, false);
    let junk = CString::new("{ not json").unwrap();
    assert_eq!(unsafe { irts_train(junk.as_ptr(), data, data, &mut model) }, IrtsStatus::Format);
    assert!(model.is_null());

    let scores = [0.1, 0.2];
    let labels = [1u8, 1];
    let mut out = 0.0;
    assert_eq!(unsafe { irts_auc(scores.as_ptr(), labels.as_ptr(), 2, &mut out) }, IrtsStatus::InvalidArgument);
    unsafe { irts_dataset_free(data) };
}

#[test]
fn auc_matches_definition() {
    let scores = [0.1, 0.4, 0.35, 0.8];
    let labels = [0u8, 0, 1, 1];
    let mut out = 0.0;
    assert_eq!(unsafe { irts_auc(scores.as_ptr(), labels.as_ptr(), 4, &mut out) }, IrtsStatus::Ok);
    assert_eq!(out, 0.75);
}

#[test]
fn imputation_matches_library() {
    let (ds, model) = train_tiny(0);
    let channels = [0usize, 2, 0, 1];
    let times = [0.1, 0.5, 0.9, 0.3];
    let mut out = [0.0; 4];
    let status = unsafe { irts_model_impute(model, ds, 5, channels.as_ptr(), times.as_ptr(), 4, 11, out.as_mut_ptr()) };
    assert_eq!(status, IrtsStatus::Ok, "{}", last_error());

    let (m, case) = unsafe { (&*model, &*ds) };
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let cpath = CString::new(ckpt.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { irts_model_save(m, cpath.as_ptr()) }, IrtsStatus::Ok);
    let lib_model = irts_core::train::Checkpoint::load(&ckpt).unwrap().model().unwrap();
    let dpath = dir.path().join("d.jsonl");
    let dpath_c = CString::new(dpath.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { irts_dataset_save(case, dpath_c.as_ptr()) }, IrtsStatus::Ok);
    let data = irts_core::data::Dataset::load(&dpath).unwrap();
    let queries = vec![vec![0.1, 0.9], vec![0.3], vec![0.5]];
    let imp = impute(&lib_model, &data.cases[5], &queries, 1, &mut rng::stream(11, rng::INFER, 5)).unwrap();
    let s = &imp.samples[0];
    assert_eq!(out, [s[0][0], s[2][0], s[0][1], s[1][0]]);

    let bad = [7usize];
    let status = unsafe { irts_model_impute(model, ds, 0, bad.as_ptr(), times.as_ptr(), 1, 0, out.as_mut_ptr()) };
    assert_eq!(status, IrtsStatus::InvalidArgument);
    let status = unsafe { irts_model_impute(model, ds, 999, channels.as_ptr(), times.as_ptr(), 1, 0, out.as_mut_ptr()) };
    assert_eq!(status, IrtsStatus::InvalidArgument);
    assert!(last_error().contains("999"));
    unsafe {
        irts_model_free(model);
        irts_dataset_free(ds);
    }
}

#[test]
fn prediction_needs_classifier() {
    let (ds, model) = train_tiny(0);
    let mut class = 0usize;
    let status = unsafe { irts_model_predict(model, ds, 0, 1, 0, &mut class, ptr::null_mut()) };
    assert_eq!(status, IrtsStatus::Capability);
    unsafe {
        irts_model_free(model);
        irts_dataset_free(ds);
    }

    let (ds, model) = train_tiny(2);
    assert_eq!(unsafe { irts_model_classes(model) }, 2);
    let mut logp = [0.0; 2];
    let status = unsafe { irts_model_predict(model, ds, 3, 4, 1, &mut class, logp.as_mut_ptr()) };
    assert_eq!(status, IrtsStatus::Ok, "{}", last_error());
    assert!(class < 2);
    assert!(logp.iter().all(|v| v.is_finite() && *v <= 0.0));
    let best = if logp[1] > logp[0] { 1 } else { 0 };
    assert_eq!(class, best);
    unsafe {
        irts_model_free(model);
        irts_dataset_free(ds);
    }
}

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(crate_dir().join("include/irts.h")).unwrap();
    for name in [
        "irts_version",
        "irts_last_error",
        "irts_dataset_generate",
        "irts_dataset_load",
        "irts_dataset_save",
        "irts_dataset_len",
        "irts_dataset_channels",
        "irts_dataset_free",
        "irts_train",
        "irts_model_load",
        "irts_model_save",
        "irts_model_free",
        "irts_model_latent_dim",
        "irts_model_classes",
        "irts_model_impute",
        "irts_model_predict",
        "irts_auc",
        "IRTS_STATUS_CAPABILITY",
        "typedef struct IrtsModel IrtsModel",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include "irts.h"

int main(void) {
    IrtsDataset *ds = NULL;
    if (irts_dataset_generate(12, 4, true, &ds) != IRTS_STATUS_OK) return 1;
    if (irts_dataset_len(ds) != 12) return 2;
    double scores[4] = {0.1, 0.4, 0.35, 0.8};
    uint8_t labels[4] = {0, 0, 1, 1};
    double auc = 0.0;
    if (irts_auc(scores, labels, 4, &auc) != IRTS_STATUS_OK || auc != 0.75) return 3;
    if (irts_dataset_load(NULL, &ds) != IRTS_STATUS_NULL_POINTER) return 4;
    if (irts_last_error()[0] == '\0') return 5;
    irts_dataset_free(ds);
    printf("ok %s\n", irts_version());
    return 0;
}
"#;

#[test]
fn c_program_links_against_static_library() {
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|p| p.parent()).unwrap();
    let lib = profile_dir.join("libirts_ffi.a");
    assert!(lib.exists(), "missing {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let bin = dir.path().join("main");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let status = Command::new("cc")
        .arg("-std=c11")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(crate_dir().join("include"))
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), format!("ok {}", env!("CARGO_PKG_VERSION")));
}
