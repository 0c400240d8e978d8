//! C ABI over `chanprune`.
//!
//! Objects cross the boundary as opaque handles created by `cp_*_load` style
//! constructors and released with the matching `cp_*_free`. Every fallible
//! call returns a [`CpStatus`]; on failure the message is kept per thread and
//! can be fetched with [`cp_last_error_message`]. Strings returned to the
//! caller are owned by the caller and released with [`cp_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use chanprune::engine::{capture_point, evaluate_accuracy, forward_capture, CaptureMode, Dataset, WeightStore};
use chanprune::metrics::{score_channel, score_layer, Metric, MetricConfig};
use chanprune::netgraph::{floss, zoo, NetworkGraph, PruningPlan};
use chanprune::sensitivity::{analyze, select_and_plan, RunConfig, SensitivityReport};
use chanprune::tensorstore::ActivationSet;
use chanprune::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CpStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// A file could not be read or written.
    Io = 3,
    /// Malformed tensor, label, JSON or CSV input.
    Format = 4,
    /// Invalid option value or argument combination.
    Config = 5,
    /// Invalid architecture.
    Graph = 6,
    /// Invalid pruning plan.
    Plan = 7,
    /// Weights do not match the architecture.
    Weights = 8,
    /// Numeric failure such as a non-finite result or failed factorization.
    Numeric = 9,
    /// The output buffer is too small; the required length was written.
    BufferTooSmall = 10,
    /// An internal panic was caught at the boundary.
    Panic = 11,
}

pub struct CpGraph(NetworkGraph);
pub struct CpWeights(WeightStore);
pub struct CpDataset(Dataset);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> CpStatus {
    match err {
        Error::Layer { source, .. } => status_of(source),
        Error::Io { .. } => CpStatus::Io,
        Error::Config(_) => CpStatus::Config,
        Error::Graph(_) => CpStatus::Graph,
        Error::Plan(_) => CpStatus::Plan,
        Error::Weights(_) => CpStatus::Weights,
        Error::Numeric(_) => CpStatus::Numeric,
        _ => CpStatus::Format,
    }
}

struct Fail(CpStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

type FfiResult<T> = Result<T, Fail>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> CpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CpStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            CpStatus::Panic
        }
    }
}

fn null(name: &str) -> Fail {
    Fail(CpStatus::NullArgument, format!("{name} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(CpStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn obj<'a, T>(p: *const T, name: &str) -> FfiResult<&'a T> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn put<T>(out: *mut T, value: T, name: &str) -> FfiResult<()> {
    if out.is_null() {
        return Err(null(name));
    }
    out.write(value);
    Ok(())
}

unsafe fn put_handle<T>(out: *mut *mut T, value: T, name: &str) -> FfiResult<()> {
    put(out, Box::into_raw(Box::new(value)), name)
}

unsafe fn put_string(out: *mut *mut c_char, s: String, name: &str) -> FfiResult<()> {
    let c = CString::new(s).map_err(|_| Fail(CpStatus::Format, "string contains a nul byte".into()))?;
    put(out, c.into_raw(), name)
}

fn parse_metric(name: &str) -> FfiResult<Metric> {
    Ok(name.parse::<Metric>()?)
}

fn metric_config(seed: u64) -> MetricConfig {
    MetricConfig { seed, ..MetricConfig::default() }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL if none.
/// The caller owns the result and frees it with `cp_string_free`.
#[no_mangle]
pub extern "C" fn cp_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null_mut(), |c| c.clone().into_raw()))
}

/// Frees a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn cp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads an architecture JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cp_graph_load(path: *const c_char, out: *mut *mut CpGraph) -> CpStatus {
    guard(|| {
        let g = NetworkGraph::load(str_arg(path, "path")?)?;
        put_handle(out, CpGraph(g), "out")
    })
}

/// Parses an architecture from a JSON string.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cp_graph_from_json(json: *const c_char, out: *mut *mut CpGraph) -> CpStatus {
    guard(|| {
        let g = NetworkGraph::from_json_str(str_arg(json, "json")?)?;
        put_handle(out, CpGraph(g), "out")
    })
}

/// Built-in architecture: `vgg16`, `resnet50` or `toy-cnn`.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cp_graph_zoo(name: *const c_char, out: *mut *mut CpGraph) -> CpStatus {
    guard(|| {
        let g = match str_arg(name, "name")? {
            "vgg16" => zoo::vgg16(),
            "resnet50" => zoo::resnet50(),
            "toy-cnn" => zoo::toy_cnn(),
            other => {
                return Err(Fail(
                    CpStatus::Config,
                    format!("unknown network {other:?}; expected vgg16, resnet50 or toy-cnn"),
                ))
            }
        };
        put_handle(out, CpGraph(g), "out")
    })
}

/// # Safety
/// `graph` must be NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn cp_graph_free(graph: *mut CpGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Serializes an architecture to JSON; free the result with `cp_string_free`.
///
/// # Safety
/// `graph` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cp_graph_to_json(graph: *const CpGraph, out: *mut *mut c_char) -> CpStatus {
    guard(|| {
        let g = obj(graph, "graph")?;
        put_string(out, g.0.to_json_string(), "out")
    })
}

/// Total FLOPs (multiply-accumulates) and parameters.
///
/// # Safety
/// `graph` must be a live handle; `flops` and `params` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cp_graph_counts(graph: *const CpGraph, flops: *mut u64, params: *mut u64) -> CpStatus {
    guard(|| {
        let g = obj(graph, "graph")?;
        put(flops, g.0.flop_count(), "flops")?;
        put(params, g.0.param_count(), "params")
    })
}

/// FLOPs saved network-wide by removing one output channel of `layer_id`.
///
/// # Safety
/// `graph` must be a live handle, `layer_id` a NUL-terminated string and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cp_graph_floss(graph: *const CpGraph, layer_id: *const c_char, out: *mut u64) -> CpStatus {
    guard(|| {
        let g = obj(graph, "graph")?;
        let f = floss(&g.0, str_arg(layer_id, "layer_id")?)?;
        put(out, f, "out")
    })
}

/// Loads weights from a manifest JSON path.
///
/// # Safety
/// `manifest` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cp_weights_load(manifest: *const c_char, out: *mut *mut CpWeights) -> CpStatus {
    guard(|| {
        let w = WeightStore::load(str_arg(manifest, "manifest")?)?;
        put_handle(out, CpWeights(w), "out")
    })
}

/// Seeded random weights for `graph`.
///
/// # Safety
/// `graph` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cp_weights_random(graph: *const CpGraph, seed: u64, out: *mut *mut CpWeights) -> CpStatus {
    guard(|| {
        let g = obj(graph, "graph")?;
        put_handle(out, CpWeights(WeightStore::random(&g.0, seed)), "out")
    })
}

/// Writes weights as `manifest.json` plus tensor files into `dir`.
///
/// # Safety
/// `weights` must be a live handle; `dir` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cp_weights_save(weights: *const CpWeights, dir: *const c_char) -> CpStatus {
    guard(|| {
        obj(weights, "weights")?.0.save(str_arg(dir, "dir")?)?;
        Ok(())
    })
}

/// # Safety
/// `weights` must be NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn cp_weights_free(weights: *mut CpWeights) {
    if !weights.is_null() {
        drop(Box::from_raw(weights));
    }
}

/// Loads an input tensor `[N, C, W, H]` and its label file.
///
/// # Safety
/// `data` and `labels` must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cp_dataset_load(
    data: *const c_char,
    labels: *const c_char,
    out: *mut *mut CpDataset,
) -> CpStatus {
    guard(|| {
        let d = Dataset::load(str_arg(data, "data")?, str_arg(labels, "labels")?)?;
        put_handle(out, CpDataset(d), "out")
    })
}

/// Number of samples, or 0 for NULL.
///
/// # Safety
/// `dataset` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cp_dataset_len(dataset: *const CpDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.len())
}

/// # Safety
/// `dataset` must be NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn cp_dataset_free(dataset: *mut CpDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Top-1 accuracy of the model on the dataset.
///
/// # Safety
/// All handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cp_evaluate(
    graph: *const CpGraph,
    weights: *const CpWeights,
    dataset: *const CpDataset,
    out: *mut f64,
) -> CpStatus {
    guard(|| {
        let (g, w, d) = (obj(graph, "graph")?, obj(weights, "weights")?, obj(dataset, "dataset")?);
        w.0.check(&g.0)?;
        put(out, evaluate_accuracy(&g.0, &w.0, &d.0)?, "out")
    })
}

/// Scores one channel given as `n` maps of `width * height` values with
/// labels in `0..num_classes`.
///
/// # Safety
/// `values` must point to `n * width * height` floats, `labels` to `n`
/// labels, `metric` must be a NUL-terminated string and `out` writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn cp_score_maps(
    values: *const f32,
    labels: *const u32,
    n: usize,
    width: usize,
    height: usize,
    num_classes: usize,
    metric: *const c_char,
    seed: u64,
    out: *mut f64,
) -> CpStatus {
    guard(|| {
        if values.is_null() {
            return Err(null("values"));
        }
        if labels.is_null() {
            return Err(null("labels"));
        }
        let m = parse_metric(str_arg(metric, "metric")?)?;
        let len = n
            .checked_mul(width)
            .and_then(|v| v.checked_mul(height))
            .ok_or_else(|| Fail(CpStatus::Config, "map dimensions overflow".into()))?;
        let data = std::slice::from_raw_parts(values, len).to_vec();
        let labels = std::slice::from_raw_parts(labels, n).to_vec();
        let set = ActivationSet::new(width, height, data, labels, num_classes)?;
        put(out, score_channel(&set, m, &metric_config(seed), "maps", 0)?, "out")
    })
}

/// Scores every output channel of `layer_id` on the dataset. Writes up to
/// `capacity` scores in channel order and the channel count to `len`; if
/// `capacity` is too small nothing is written to `scores` and
/// `CP_STATUS_BUFFER_TOO_SMALL` is returned. `capture_pre` scores the layer's
/// own output instead of the relu after it.
///
/// # Safety
/// Handles must be live, strings NUL-terminated, `scores` valid for
/// `capacity` doubles (may be NULL when `capacity` is 0) and `len` writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn cp_score_layer(
    graph: *const CpGraph,
    weights: *const CpWeights,
    dataset: *const CpDataset,
    layer_id: *const c_char,
    metric: *const c_char,
    capture_pre: bool,
    seed: u64,
    scores: *mut f64,
    capacity: usize,
    len: *mut usize,
) -> CpStatus {
    guard(|| {
        let (g, w, d) = (obj(graph, "graph")?, obj(weights, "weights")?, obj(dataset, "dataset")?);
        let id = str_arg(layer_id, "layer_id")?;
        let m = parse_metric(str_arg(metric, "metric")?)?;
        w.0.check(&g.0)?;
        let mode = if capture_pre { CaptureMode::Pre } else { CaptureMode::Post };
        let point = capture_point(&g.0, id, mode)?;
        let (_, acts) = forward_capture(&g.0, &w.0, d.0.inputs(), &[point], &Default::default())?;
        let labels = d.0.labels();
        let result = score_layer(&acts[0], labels, labels.inferred_classes(), id, m, &metric_config(seed))?;
        put(len, result.len(), "len")?;
        if result.len() > capacity {
            return Err(Fail(
                CpStatus::BufferTooSmall,
                format!("{} scores do not fit in {capacity}", result.len()),
            ));
        }
        if scores.is_null() && !result.is_empty() {
            return Err(null("scores"));
        }
        for (i, s) in result.iter().enumerate() {
            scores.add(i).write(s.score);
        }
        Ok(())
    })
}

/// Runs the FLOP-normalized sensitivity analysis and returns the full report
/// as JSON (free with `cp_string_free`). `scoring` may be NULL to score on
/// `validation`.
///
/// # Safety
/// Handles must be live or NULL where allowed, `metric` NUL-terminated and
/// `out` writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn cp_sensitivity(
    graph: *const CpGraph,
    weights: *const CpWeights,
    validation: *const CpDataset,
    scoring: *const CpDataset,
    metric: *const c_char,
    alpha: f64,
    seed: u64,
    out: *mut *mut c_char,
) -> CpStatus {
    guard(|| {
        let (g, w, v) = (obj(graph, "graph")?, obj(weights, "weights")?, obj(validation, "validation")?);
        let s = scoring.as_ref().unwrap_or(v);
        let cfg = RunConfig {
            alpha,
            metric: parse_metric(str_arg(metric, "metric")?)?,
            metric_config: metric_config(seed),
            seed,
            ..RunConfig::default()
        };
        let report = analyze(&g.0, &w.0, &v.0, &s.0, &cfg)?;
        put_string(out, report.to_json_string(), "out")
    })
}

/// Pruning plan JSON for the `k` least sensitive layers of a report.
///
/// # Safety
/// `graph` must be live, `report_json` NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cp_plan_from_report(
    graph: *const CpGraph,
    report_json: *const c_char,
    k: usize,
    out: *mut *mut c_char,
) -> CpStatus {
    guard(|| {
        let g = obj(graph, "graph")?;
        let report: SensitivityReport =
            serde_json::from_str(str_arg(report_json, "report_json")?).map_err(Error::from)?;
        let plan = select_and_plan(&g.0, &report, k)?;
        put_string(out, plan.to_json_string(), "out")
    })
}

/// Applies a plan, producing new graph and weight handles. The inputs are
/// left untouched.
///
/// # Safety
/// Handles must be live, `plan_json` NUL-terminated and both outputs writable.
#[no_mangle]
pub unsafe extern "C" fn cp_prune(
    graph: *const CpGraph,
    weights: *const CpWeights,
    plan_json: *const c_char,
    out_graph: *mut *mut CpGraph,
    out_weights: *mut *mut CpWeights,
) -> CpStatus {
    guard(|| {
        let (g, w) = (obj(graph, "graph")?, obj(weights, "weights")?);
        if out_graph.is_null() || out_weights.is_null() {
            return Err(null("output handle"));
        }
        let plan = PruningPlan::from_json_str(str_arg(plan_json, "plan_json")?)?;
        let (pg, pw) = chanprune::engine::apply_plan_weights(&g.0, &w.0, &plan)?;
        put_handle(out_graph, CpGraph(pg), "out_graph")?;
        put_handle(out_weights, CpWeights(pw), "out_weights")
    })
}
