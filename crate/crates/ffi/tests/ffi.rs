//! The C entry points from Rust, and from a C program linked against the
//! static library.

use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use fast_core::data::NormStats;
use fast_core::model::ModelConfig;
use fast_core::numerics::{RngState, Tensor};
use fast_core::FastModel;
use fast_ffi::*;

fn config() -> ModelConfig {
    ModelConfig {
        n_sensors: 3,
        t_hist: 4,
        t_horizon: 2,
        d: 4,
        blocks: 2,
        heads: 2,
        d_state: 4,
        seed: 8,
        ..Default::default()
    }
}

fn saved_model(dir: &Path) -> (FastModel<f32>, PathBuf) {
    let mut model = FastModel::<f32>::new(&config()).unwrap();
    model.meta.norm = NormStats { mean: 120.0, std: 30.0 };
    let path = dir.join("m.ckpt");
    model.save(&path).unwrap();
    (model, path)
}

fn window() -> Vec<f32> {
    RngState::new(2).uniform_vec(12, 50.0, 200.0)
}

fn load(path: &Path) -> *mut FastModelHandle {
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { fast_model_load(c.as_ptr(), &mut h) }, FastStatus::Ok);
    assert!(!h.is_null());
    h
}

fn last_error() -> String {
    let p = fast_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn predict_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let (model, path) = saved_model(dir.path());
    let h = load(&path);
    let (mut n, mut th, mut tf) = (0, 0, 0);
    assert_eq!(unsafe { fast_model_dims(h, &mut n, &mut th, &mut tf) }, FastStatus::Ok);
    assert_eq!((n, th, tf), (3, 4, 2));

    let w = window();
    let mut out = vec![0f32; 6];
    let status = unsafe { fast_model_predict(h, w.as_ptr(), w.len(), 150, 4, out.as_mut_ptr(), out.len()) };
    assert_eq!(status, FastStatus::Ok);
    assert!(fast_last_error().is_null());
    let want = model.predict(&Tensor::new(&[4, 3], w).unwrap(), 150, 4).unwrap();
    let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&out), bits(want.data()));
    unsafe { fast_model_free(h) };
}

#[test]
fn bad_arguments_report_codes_and_messages() {
    let dir = tempfile::tempdir().unwrap();
    let (_, path) = saved_model(dir.path());
    let h = load(&path);
    let w = window();
    let mut out = vec![0f32; 6];
    unsafe {
        let s = fast_model_predict(h, w.as_ptr(), 11, 0, 0, out.as_mut_ptr(), 6);
        assert_eq!(s, FastStatus::InvalidArgument);
        assert!(last_error().contains("window_len=12"));
        let s = fast_model_predict(h, w.as_ptr(), 12, 288, 0, out.as_mut_ptr(), 6);
        assert_eq!(s, FastStatus::InvalidArgument);
        let s = fast_model_predict(h, ptr::null(), 12, 0, 0, out.as_mut_ptr(), 6);
        assert_eq!(s, FastStatus::NullPointer);
        let s = fast_model_predict(ptr::null(), w.as_ptr(), 12, 0, 0, out.as_mut_ptr(), 6);
        assert_eq!(s, FastStatus::NullPointer);
        assert_eq!(fast_model_dims(ptr::null(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut()), FastStatus::NullPointer);
        // null outputs are skipped
        assert_eq!(fast_model_dims(h, ptr::null_mut(), ptr::null_mut(), ptr::null_mut()), FastStatus::Ok);
        fast_model_free(h);
        fast_model_free(ptr::null_mut());
    }
}

#[test]
fn load_failures_leave_no_handle() {
    let dir = tempfile::tempdir().unwrap();
    let (_, path) = saved_model(dir.path());
    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x10;
    let corrupt = dir.path().join("bad.ckpt");
    std::fs::write(&corrupt, bytes).unwrap();

    let cases = [
        (dir.path().join("missing.ckpt"), FastStatus::Io),
        (corrupt, FastStatus::Checkpoint),
    ];
    for (p, want) in cases {
        let c = CString::new(p.to_str().unwrap()).unwrap();
        let mut h = ptr::dangling_mut::<FastModelHandle>();
        assert_eq!(unsafe { fast_model_load(c.as_ptr(), &mut h) }, want);
        assert!(h.is_null());
        assert!(!last_error().is_empty());
    }
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { fast_model_load(ptr::null(), &mut h) }, FastStatus::NullPointer);
    assert_eq!(unsafe { fast_model_load(ptr::null(), ptr::null_mut()) }, FastStatus::NullPointer);
}

#[test]
fn version_is_the_package_version() {
    let v = unsafe { CStr::from_ptr(fast_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_entry_point() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/fast.h")).unwrap();
    for name in [
        "fast_last_error",
        "fast_version",
        "fast_model_load",
        "fast_model_free",
        "fast_model_dims",
        "fast_model_predict",
        "typedef struct FastModelHandle FastModelHandle",
        "FAST_STATUS_CHECKPOINT = 4",
    ] {
        assert!(header.contains(name), "{name}");
    }
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include "fast.h"

int main(int argc, char **argv) {
    FastModelHandle *h = NULL;
    if (fast_model_load(argv[1], &h) != FAST_STATUS_OK) {
        fprintf(stderr, "%s\n", fast_last_error());
        return 1;
    }
    size_t n, th, tf;
    fast_model_dims(h, &n, &th, &tf);
    float window[64], out[64];
    for (size_t i = 0; i < th * n; i++) {
        window[i] = 100.0f + (float)i;
    }
    if (fast_model_predict(h, window, th * n, 12, 1, out, tf * n) != FAST_STATUS_OK) {
        return 2;
    }
    for (size_t i = 0; i < tf * n; i++) {
        printf("%08x\n", *(unsigned *)&out[i]);
    }
    FastModelHandle *bad = NULL;
    int code = fast_model_load("/nonexistent.ckpt", &bad);
    fast_model_free(h);
    return code == FAST_STATUS_IO && bad == NULL ? 0 : 3;
}
"#;

#[test]
fn c_program_links_against_the_static_library() {
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(Path::parent).unwrap();
    let lib = profile_dir.join("libfast_ffi.a");
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    assert!(lib.exists(), "{} missing", lib.display());

    let dir = tempfile::tempdir().unwrap();
    let (model, path) = saved_model(dir.path());
    let src = dir.path().join("main.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let bin = dir.path().join("main");
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&bin)
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .status()
        .unwrap();
    assert!(status.success());

    let run = Command::new(&bin).arg(&path).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let got: Vec<String> = String::from_utf8(run.stdout).unwrap().lines().map(str::to_string).collect();

    let w: Vec<f32> = (0..12).map(|i| 100.0 + i as f32).collect();
    let want = model.predict(&Tensor::new(&[4, 3], w).unwrap(), 12, 1).unwrap();
    let want: Vec<String> = want.data().iter().map(|v| format!("{:08x}", v.to_bits())).collect();
    assert_eq!(got, want);
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
        .ok_or(())
}
