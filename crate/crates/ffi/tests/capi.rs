use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use patchrnn::abstraction::build_code_vocabulary;
use patchrnn::message::build_message_vocabulary;
use patchrnn::model::{ModelConfig, PatchRnn};
use patchrnn::patch::parse_patch;
use patchrnn::pipeline::{prepare, PipelineOptions};
use patchrnn_ffi::*;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}

fn small_model() -> PatchRnn {
    let opts = PipelineOptions::default();
    let samples: Vec<_> = ["uriparser_null_check.patch", "goahead_sigkill.patch"]
        .iter()
        .map(|f| {
            prepare(
                &parse_patch(&std::fs::read_to_string(fixture(f)).unwrap()).unwrap(),
                *f,
                &opts,
            )
        })
        .collect();
    let cv = build_code_vocabulary(
        samples
            .iter()
            .flat_map(|s| [&s.unpatched[..], &s.patched[..]]),
    );
    let mv = build_message_vocabulary(samples.iter().map(|s| &s.message));
    let cfg = ModelConfig {
        embed_dim: 8,
        lstm_hidden: 4,
        code_fc_dims: vec![32, 8, 8],
        msg_fc_dims: vec![8, 8],
        fusion_fc_dims: vec![16, 4, 2],
        ..ModelConfig::default()
    };
    PatchRnn::new(cfg, cv, mv, None, None).unwrap()
}

fn last_error() -> String {
    let p = prnn_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn take_string(p: *mut std::ffi::c_char) -> String {
    let s = unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned();
    unsafe { prnn_string_free(p) };
    s
}

#[test]
fn load_predict_free() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let model = small_model();
    model.save(&path).unwrap();

    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(
        unsafe { prnn_model_load(cpath.as_ptr(), &mut handle) },
        PrnnStatus::Ok
    );
    assert!(prnn_last_error().is_null());

    let mut version = ptr::null_mut();
    assert_eq!(
        unsafe { prnn_model_version(handle, &mut version) },
        PrnnStatus::Ok
    );
    assert_eq!(take_string(version), model.version());

    let bytes = std::fs::read(fixture("uriparser_null_check.patch")).unwrap();
    let mut out = PrnnPrediction {
        label: PrnnLabel::NonSecurity,
        probability: -1.0,
    };
    assert_eq!(
        unsafe { prnn_predict(handle, bytes.as_ptr(), bytes.len(), &mut out) },
        PrnnStatus::Ok
    );
    let direct = model
        .predict(&patchrnn::patch::parse_patch_bytes(&bytes).unwrap())
        .unwrap();
    assert_eq!(out.probability.to_bits(), direct.probability.to_bits());
    assert_eq!(out.label as usize, direct.label.index());

    let junk = b"@@ -1,3 +1,3 @@\n";
    assert_eq!(
        unsafe { prnn_predict(handle, junk.as_ptr(), junk.len(), &mut out) },
        PrnnStatus::Parse
    );
    assert!(!last_error().is_empty());
    assert_eq!(
        unsafe { prnn_predict(handle, ptr::null(), 0, &mut out) },
        PrnnStatus::NullArgument
    );

    unsafe { prnn_model_free(handle) };
    unsafe { prnn_model_free(ptr::null_mut()) };
}

#[test]
fn load_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut handle = ptr::null_mut();
    let missing = CString::new(dir.path().join("none.ckpt").to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { prnn_model_load(missing.as_ptr(), &mut handle) },
        PrnnStatus::Io
    );
    assert!(last_error().contains("none.ckpt"));
    assert!(handle.is_null());

    let garbage = dir.path().join("bad.ckpt");
    std::fs::write(&garbage, b"not a checkpoint").unwrap();
    let garbage = CString::new(garbage.to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { prnn_model_load(garbage.as_ptr(), &mut handle) },
        PrnnStatus::Checkpoint
    );
    assert_eq!(
        unsafe { prnn_model_load(ptr::null(), &mut handle) },
        PrnnStatus::NullArgument
    );
    assert_eq!(
        unsafe { prnn_model_load(garbage.as_ptr(), ptr::null_mut()) },
        PrnnStatus::NullArgument
    );
}

#[test]
fn lex_stems_and_metrics() {
    let src = CString::new("if (uri == NULL)").unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { prnn_lex(src.as_ptr(), &mut out) }, PrnnStatus::Ok);
    assert_eq!(
        take_string(out),
        "Keyword\tif\nPunctuation\t(\nIdentifier\turi\nPunctuation\t==\nIdentifier\tNULL\nPunctuation\t)\n"
    );

    let msg = CString::new("Fixed the overflows").unwrap();
    assert_eq!(
        unsafe { prnn_message_stems(msg.as_ptr(), &mut out) },
        PrnnStatus::Ok
    );
    assert_eq!(take_string(out), "fix overflow");

    let bad = [0xffu8, 0];
    assert_eq!(
        unsafe { prnn_lex(bad.as_ptr().cast(), &mut out) },
        PrnnStatus::InvalidUtf8
    );

    let mut m = PrnnMetrics {
        accuracy: 0.0,
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
        fpr: 0.0,
        fnr: 0.0,
    };
    assert_eq!(
        unsafe { prnn_compute_metrics(1843, 591, 4515, 659, &mut m) },
        PrnnStatus::Ok
    );
    assert_eq!(m.accuracy, 6358.0 / 7608.0);
    assert_eq!(m.fpr, 591.0 / 5106.0);
    assert_eq!(
        unsafe { prnn_compute_metrics(0, 0, 3, 0, &mut m) },
        PrnnStatus::Ok
    );
    assert!(m.precision.is_nan() && m.recall.is_nan() && m.fnr.is_nan());
    assert_eq!(m.fpr, 0.0);
    assert_eq!(
        unsafe { prnn_compute_metrics(0, 0, 0, 0, &mut m) },
        PrnnStatus::InvalidArgument
    );
}

const C_PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include <string.h>
#include "patchrnn.h"

int main(int argc, char **argv) {
    PrnnMetrics m;
    if (prnn_compute_metrics(1843, 591, 4515, 659, &m) != PRNN_STATUS_OK) return 10;
    if (fabs(m.recall - 1843.0 / 2502.0) > 1e-15) return 11;

    char *tokens = NULL;
    if (prnn_lex("a->b", &tokens) != PRNN_STATUS_OK) return 12;
    if (strcmp(tokens, "Identifier\ta\nPunctuation\t->\nIdentifier\tb\n") != 0) return 13;
    prnn_string_free(tokens);

    PrnnModel *model = NULL;
    if (prnn_model_load("/nonexistent/model.ckpt", &model) != PRNN_STATUS_IO) return 14;
    if (prnn_last_error() == NULL || model != NULL) return 15;
    if (prnn_model_load(argv[1], &model) != PRNN_STATUS_OK) return 16;

    FILE *f = fopen(argv[2], "rb");
    if (!f) return 17;
    static uint8_t buf[1 << 16];
    size_t n = fread(buf, 1, sizeof buf, f);
    fclose(f);
    PrnnPrediction p;
    if (prnn_predict(model, buf, n, &p) != PRNN_STATUS_OK) return 18;
    printf("%d %.17g\n", (int)p.label, p.probability);
    prnn_model_free(model);
    return argc == 3 ? 0 : 19;
}
"#;

#[test]
fn c_program_against_generated_header() {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("no C compiler; skipping");
        return;
    }
    // integration tests live in target/<profile>/deps; the cdylib sits one level up
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().unwrap().parent().unwrap();
    assert!(
        lib_dir.join("libpatchrnn_ffi.so").exists(),
        "{}",
        lib_dir.display()
    );

    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let bin = dir.path().join("main");
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&bin)
        .arg(&src)
        .arg(format!("-I{}", include.display()))
        .arg(format!("-L{}", lib_dir.display()))
        .arg(format!("-Wl,-rpath,{}", lib_dir.display()))
        .args(["-lpatchrnn_ffi", "-lm"])
        .status()
        .unwrap();
    assert!(status.success());

    let ckpt = dir.path().join("m.ckpt");
    let model = small_model();
    model.save(&ckpt).unwrap();
    let patch = fixture("goahead_sigkill.patch");
    let out = Command::new(&bin).arg(&ckpt).arg(&patch).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let line = String::from_utf8(out.stdout).unwrap();
    let (label, prob) = line.trim().split_once(' ').unwrap();
    let direct = model
        .predict(&parse_patch(&std::fs::read_to_string(&patch).unwrap()).unwrap())
        .unwrap();
    assert_eq!(label.parse::<usize>().unwrap(), direct.label.index());
    assert_eq!(prob.parse::<f64>().unwrap(), direct.probability);
}
