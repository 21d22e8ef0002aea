//! C ABI over the gdpnet library.
//!
//! Graphs and models are opaque handles created by `gdp_*` constructors and
//! released with the matching `*_free`. Every fallible call returns a
//! [`GdpStatus`]; on failure `gdp_last_error_message` describes the problem.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use gdpnet::env::EnvConfig;
use gdpnet::graph::{self, Graph, NoiseSpec, PlantedPartition, Split};
use gdpnet::tensor::Checkpoint;
use gdpnet::trainer::{self, Model, Selector, TrainConfig};
use gdpnet::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GdpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Runtime = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Opaque graph handle.
pub struct GdpGraph {
    inner: Graph,
}

/// Opaque handle to trained or initialized parameters plus their configuration.
pub struct GdpModel {
    model: Model,
    config: TrainConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> GdpStatus {
    match e {
        Error::Io(_) => GdpStatus::Io,
        Error::Parse { .. } | Error::Json(_) | Error::CheckpointVersion(_) | Error::MissingTensor(_) => GdpStatus::Parse,
        Error::NonFinite(_) => GdpStatus::Runtime,
        _ => GdpStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), GdpStatus>) -> GdpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GdpStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => {
            set_last_error("panic inside gdpnet".into());
            GdpStatus::Panic
        }
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, GdpStatus>;
}

impl<T> OrStatus<T> for gdpnet::Result<T> {
    fn or_status(self) -> Result<T, GdpStatus> {
        self.map_err(|e| {
            set_last_error(e.to_string());
            status_of(&e)
        })
    }
}

fn invalid(message: &str) -> GdpStatus {
    set_last_error(message.into());
    GdpStatus::InvalidArgument
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, GdpStatus> {
    if p.is_null() {
        set_last_error(format!("{what} is null"));
        return Err(GdpStatus::NullPointer);
    }
    Ok(&*p)
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, GdpStatus> {
    if p.is_null() {
        set_last_error(format!("{what} is null"));
        return Err(GdpStatus::NullPointer);
    }
    Ok(&mut *p)
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, GdpStatus> {
    let s = borrow(p, what)?;
    CStr::from_ptr(s).to_str().map_err(|_| invalid(&format!("{what} is not UTF-8")))
}

fn split_of(code: u32) -> Result<Split, GdpStatus> {
    match code {
        0 => Ok(Split::Train),
        1 => Ok(Split::Val),
        2 => Ok(Split::Test),
        _ => Err(invalid("split must be 0 (train), 1 (val) or 2 (test)")),
    }
}

fn env_config(cfg: &TrainConfig) -> EnvConfig {
    EnvConfig {
        fc_mode: cfg.fc_mode,
        use_end: cfg.use_end,
        max_steps: None,
    }
}

/// Message describing the most recent failure on this thread, or NULL. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn gdp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gdp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Planted-partition graph with a stratified 60/20/20 split.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn gdp_graph_planted_partition(
    n: usize,
    classes: usize,
    p_in: f64,
    p_out: f64,
    dim: usize,
    signal_strength: f64,
    seed: u64,
    out: *mut *mut GdpGraph,
) -> GdpStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let g = graph::generate_planted_partition(&PlantedPartition {
            n,
            classes,
            p_in,
            p_out,
            dim,
            signal_strength,
            seed,
        })
        .or_status()?;
        *out = Box::into_raw(Box::new(GdpGraph { inner: g }));
        Ok(())
    })
}

/// Loads a JSON graph; inputs without masks get a split drawn from `split_seed`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gdp_graph_load_json(path: *const c_char, split_seed: u64, out: *mut *mut GdpGraph) -> GdpStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let path = PathBuf::from(c_str(path, "path")?);
        let g = graph::load_json(&path, split_seed).or_status()?;
        *out = Box::into_raw(Box::new(GdpGraph { inner: g }));
        Ok(())
    })
}

/// # Safety
/// `graph` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn gdp_graph_save_json(graph: *const GdpGraph, path: *const c_char) -> GdpStatus {
    guard(|| {
        let g = borrow(graph, "graph")?;
        let path = PathBuf::from(c_str(path, "path")?);
        graph::save_json(&g.inner, &path).or_status()
    })
}

/// Copy of `graph` with `round(rate·|E|)` added cross-class edges.
///
/// # Safety
/// `graph` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gdp_graph_inject_edge_noise(
    graph: *const GdpGraph,
    rate: f64,
    seed: u64,
    out: *mut *mut GdpGraph,
) -> GdpStatus {
    guard(|| {
        let g = borrow(graph, "graph")?;
        let out = out_ptr(out, "out")?;
        let noisy = graph::inject_edge_noise(&g.inner, &NoiseSpec::edges(rate, seed)).or_status()?;
        *out = Box::into_raw(Box::new(GdpGraph { inner: noisy }));
        Ok(())
    })
}

/// Number of nodes, or 0 for a null handle.
///
/// # Safety
/// `graph` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gdp_graph_num_nodes(graph: *const GdpGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.inner.num_nodes())
}

/// Number of undirected edges, or 0 for a null handle.
///
/// # Safety
/// `graph` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gdp_graph_num_edges(graph: *const GdpGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.inner.num_edges())
}

/// # Safety
/// `graph` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gdp_graph_free(graph: *mut GdpGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Trains on `graph`. `config_json` may be NULL for defaults or a JSON object
/// of configuration overrides; `seed` always wins over any seed it contains.
///
/// # Safety
/// `graph` must be a live handle, `config_json` null or NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gdp_model_train(
    graph: *const GdpGraph,
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut GdpModel,
) -> GdpStatus {
    guard(|| {
        let g = borrow(graph, "graph")?;
        let out = out_ptr(out, "out")?;
        let mut config: TrainConfig = if config_json.is_null() {
            TrainConfig::default()
        } else {
            serde_json::from_str(c_str(config_json, "config_json")?).map_err(|e| {
                set_last_error(format!("config: {e}"));
                GdpStatus::Parse
            })?
        };
        config.seed = seed;
        let outcome = trainer::train(&g.inner, &config).or_status()?;
        *out = Box::into_raw(Box::new(GdpModel { model: outcome.best, config }));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gdp_model_load(path: *const c_char, out: *mut *mut GdpModel) -> GdpStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let ckpt = Checkpoint::load(c_str(path, "path")?).or_status()?;
        let (model, config) = Model::from_checkpoint(&ckpt).or_status()?;
        *out = Box::into_raw(Box::new(GdpModel { model, config }));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn gdp_model_save(model: *const GdpModel, path: *const c_char) -> GdpStatus {
    guard(|| {
        let m = borrow(model, "model")?;
        let path = c_str(path, "path")?;
        m.model.to_checkpoint(&m.config).and_then(|c| c.save(path)).or_status()
    })
}

/// Micro-F1 on `split` (0 train, 1 val, 2 test). With `select_all` the policy
/// is bypassed and every neighbor is kept.
///
/// # Safety
/// Handles must be live and `out_f1` writable.
#[no_mangle]
pub unsafe extern "C" fn gdp_model_evaluate(
    model: *const GdpModel,
    graph: *const GdpGraph,
    split: u32,
    select_all: bool,
    out_f1: *mut f64,
) -> GdpStatus {
    guard(|| {
        let m = borrow(model, "model")?;
        let g = borrow(graph, "graph")?;
        let out = out_ptr(out_f1, "out_f1")?;
        let selector = if select_all { Selector::All } else { Selector::Policy(&m.model.policy) };
        *out = trainer::evaluate(&m.model.representation, selector, &g.inner, split_of(split)?, &env_config(&m.config))
            .or_status()?;
        Ok(())
    })
}

/// Neighbors of `node` kept by the policy. Writes up to `capacity` ids into
/// `ids` and the full count into `out_len`; returns `BufferTooSmall` (with
/// `out_len` set) when `capacity` is insufficient.
///
/// # Safety
/// Handles must be live, `ids` valid for `capacity` writes (may be null when
/// `capacity` is 0) and `out_len` writable.
#[no_mangle]
pub unsafe extern "C" fn gdp_model_select(
    model: *const GdpModel,
    graph: *const GdpGraph,
    node: usize,
    ids: *mut usize,
    capacity: usize,
    out_len: *mut usize,
) -> GdpStatus {
    guard(|| {
        let m = borrow(model, "model")?;
        let g = borrow(graph, "graph")?;
        let out_len = out_ptr(out_len, "out_len")?;
        let env = gdpnet::env::SelectionEnv::new(&g.inner, &m.model.representation, env_config(&m.config)).or_status()?;
        let selected = env.decode(node, &m.model.policy).or_status()?;
        *out_len = selected.len();
        if selected.len() > capacity {
            set_last_error(format!("need room for {} ids, have {capacity}", selected.len()));
            return Err(GdpStatus::BufferTooSmall);
        }
        if !selected.is_empty() {
            let ids = out_ptr(ids, "ids")?;
            std::slice::from_raw_parts_mut(ids, capacity)[..selected.len()].copy_from_slice(&selected);
        }
        Ok(())
    })
}

/// Graph keeping edge {v, u} iff either endpoint's policy keeps the other.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gdp_model_denoise(
    model: *const GdpModel,
    graph: *const GdpGraph,
    out: *mut *mut GdpGraph,
) -> GdpStatus {
    guard(|| {
        let m = borrow(model, "model")?;
        let g = borrow(graph, "graph")?;
        let out = out_ptr(out, "out")?;
        let denoised = trainer::denoise_graph(
            &m.model.representation,
            Selector::Policy(&m.model.policy),
            &g.inner,
            &env_config(&m.config),
        )
        .or_status()?;
        *out = Box::into_raw(Box::new(GdpGraph { inner: denoised }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gdp_model_free(model: *mut GdpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
