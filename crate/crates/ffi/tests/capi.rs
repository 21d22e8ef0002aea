use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use gdpnet_ffi::*;

fn small_graph() -> *mut GdpGraph {
    let mut g = ptr::null_mut();
    let status = unsafe { gdp_graph_planted_partition(60, 2, 0.2, 0.0, 4, 1.0, 3, &mut g) };
    assert_eq!(status, GdpStatus::Ok);
    g
}

fn quick_model(g: *const GdpGraph) -> *mut GdpModel {
    let cfg = CString::new(r#"{"iters": 1, "rep_epochs": 3, "embed_dim": 8, "hidden": [6, 4]}"#).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { gdp_model_train(g, cfg.as_ptr(), 7, &mut m) }, GdpStatus::Ok);
    m
}

#[test]
fn graph_lifecycle() {
    let g = small_graph();
    unsafe {
        assert_eq!(gdp_graph_num_nodes(g), 60);
        let edges = gdp_graph_num_edges(g);
        let mut noisy = ptr::null_mut();
        assert_eq!(gdp_graph_inject_edge_noise(g, 0.5, 1, &mut noisy), GdpStatus::Ok);
        assert_eq!(gdp_graph_num_edges(noisy), edges + (edges as f64 * 0.5).round() as usize);

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("g.json").to_str().unwrap()).unwrap();
        assert_eq!(gdp_graph_save_json(noisy, path.as_ptr()), GdpStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(gdp_graph_load_json(path.as_ptr(), 0, &mut back), GdpStatus::Ok);
        assert_eq!(gdp_graph_num_edges(back), gdp_graph_num_edges(noisy));
        gdp_graph_free(back);
        gdp_graph_free(noisy);
        gdp_graph_free(g);
        gdp_graph_free(ptr::null_mut());
    }
}

#[test]
fn model_train_evaluate_select_denoise() {
    let g = small_graph();
    let m = quick_model(g);
    unsafe {
        let mut f1 = -1.0;
        assert_eq!(gdp_model_evaluate(m, g, 2, false, &mut f1), GdpStatus::Ok);
        assert!((0.0..=1.0).contains(&f1));
        assert_eq!(gdp_model_evaluate(m, g, 2, true, &mut f1), GdpStatus::Ok);
        assert_eq!(gdp_model_evaluate(m, g, 9, true, &mut f1), GdpStatus::InvalidArgument);

        let mut len = 0usize;
        let mut ids = [0usize; 64];
        assert_eq!(gdp_model_select(m, g, 0, ids.as_mut_ptr(), ids.len(), &mut len), GdpStatus::Ok);
        assert!(len <= 64);
        if len > 0 {
            let mut tiny = 0usize;
            assert_eq!(gdp_model_select(m, g, 0, ptr::null_mut(), 0, &mut tiny), GdpStatus::BufferTooSmall);
            assert_eq!(tiny, len);
        }

        let mut d = ptr::null_mut();
        assert_eq!(gdp_model_denoise(m, g, &mut d), GdpStatus::Ok);
        assert!(gdp_graph_num_edges(d) <= gdp_graph_num_edges(g));

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("m.json").to_str().unwrap()).unwrap();
        assert_eq!(gdp_model_save(m, path.as_ptr()), GdpStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(gdp_model_load(path.as_ptr(), &mut loaded), GdpStatus::Ok);
        let mut f1_loaded = -1.0;
        gdp_model_evaluate(m, g, 1, false, &mut f1);
        gdp_model_evaluate(loaded, g, 1, false, &mut f1_loaded);
        assert_eq!(f1, f1_loaded);

        gdp_model_free(loaded);
        gdp_graph_free(d);
        gdp_model_free(m);
        gdp_graph_free(g);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut g = ptr::null_mut();
        assert_eq!(gdp_graph_planted_partition(10, 3, 0.5, 0.1, 4, 1.0, 0, &mut g), GdpStatus::InvalidArgument);
        assert!(g.is_null());
        let msg = CStr::from_ptr(gdp_last_error_message()).to_str().unwrap();
        assert!(!msg.is_empty());

        assert_eq!(gdp_graph_planted_partition(10, 2, 0.5, 0.1, 4, 1.0, 0, ptr::null_mut()), GdpStatus::NullPointer);
        let missing = CString::new("/nonexistent/graph.json").unwrap();
        assert_eq!(gdp_graph_load_json(missing.as_ptr(), 0, &mut g), GdpStatus::Io);
        assert_eq!(gdp_graph_num_nodes(ptr::null()), 0);

        let g = small_graph();
        let bad = CString::new("{\"iters\": \"many\"}").unwrap();
        let mut m = ptr::null_mut();
        assert_eq!(gdp_model_train(g, bad.as_ptr(), 0, &mut m), GdpStatus::Parse);
        gdp_graph_free(g);
    }
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(gdp_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/gdpnet.h")).unwrap();
    for name in [
        "gdp_last_error_message", "gdp_version", "gdp_graph_planted_partition", "gdp_graph_load_json",
        "gdp_graph_save_json", "gdp_graph_inject_edge_noise", "gdp_graph_num_nodes", "gdp_graph_num_edges",
        "gdp_graph_free", "gdp_model_train", "gdp_model_load", "gdp_model_save", "gdp_model_evaluate",
        "gdp_model_select", "gdp_model_denoise", "gdp_model_free", "typedef struct GdpGraph GdpGraph",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

/// Compiles and runs a small C program against the static library when a C
/// compiler is available.
#[test]
fn c_program_links_against_the_static_library() {
    let Ok(out) = Command::new("cc").arg("--version").output() else { return };
    if !out.status.success() {
        return;
    }
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|p| p.parent()).unwrap();
    let lib = profile_dir.join("libgdpnet_ffi.a");
    if !lib.exists() {
        eprintln!("static library not found at {}; skipping", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "gdpnet.h"
int main(void) {
    GdpGraph *g = NULL;
    if (gdp_graph_planted_partition(40, 2, 0.2, 0.0, 4, 1.0, 1, &g) != GDP_STATUS_OK) return 1;
    size_t n = gdp_graph_num_nodes(g);
    gdp_graph_free(g);
    if (gdp_graph_planted_partition(10, 3, 0.5, 0.1, 4, 1.0, 0, &g) != GDP_STATUS_INVALID_ARGUMENT) return 2;
    printf("%zu\n", n);
    return n == 40 ? 0 : 3;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("smoke");
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C smoke program failed to build");
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "40");
}
