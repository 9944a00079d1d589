//! C ABI for the disease-risk smoothing engine.
//!
//! The surface follows the usual handle-and-status conventions: opaque
//! pointers created and destroyed by paired functions, every fallible call
//! returning a status code, and a thread-local error message retrievable
//! after a failure. All entry points catch panics, so no Rust unwinding
//! ever crosses the boundary.
//!
//! String getters follow the snprintf convention: they return the byte
//! length the full value needs (including the trailing NUL) and write as
//! much as fits. Numeric fills take the buffer length in elements and fail
//! when it does not match exactly rather than truncate silently.

#![allow(non_camel_case_types)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use mvrisk::error::Error;
use mvrisk::graph::{
    build_graph, expand_partition, lattice, parse_edge_list, parse_partition, AreaGraph,
    PartitionPlan,
};
use mvrisk::inference::{CountPanel, FitConfig};
use mvrisk::merge::{MergedResult, RiskMerge};
use mvrisk::pipeline::ingest::parse_counts_csv;
use mvrisk::pipeline::{run_pipeline, PipelineConfig};

/// Status code returned by every fallible call.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum mvrisk_status {
    /// Success.
    MVRISK_OK = 0,
    /// A pointer was null, a string was not UTF-8, or a buffer length or
    /// index was wrong.
    MVRISK_INVALID_ARGUMENT = 1,
    /// The input data or configuration was rejected.
    MVRISK_INVALID_INPUT = 2,
    /// The fit failed numerically.
    MVRISK_NUMERIC_FAILURE = 3,
    /// An internal invariant was violated; the library caught a panic.
    MVRISK_PANIC = 4,
}

use mvrisk_status::*;

/// Which per-cell posterior summary `mvrisk_result_risk_summary` fills.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum mvrisk_field {
    MVRISK_FIELD_MEAN = 0,
    MVRISK_FIELD_MEDIAN = 1,
    MVRISK_FIELD_SD = 2,
    MVRISK_FIELD_Q025 = 3,
    MVRISK_FIELD_Q975 = 4,
    /// Posterior probability that the relative risk exceeds one.
    MVRISK_FIELD_EXCEED_ONE = 5,
    /// Leave-one-out predictive density of the observed count.
    MVRISK_FIELD_CPO = 6,
}

/// How per-area posteriors are combined across subdomains.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum mvrisk_merge {
    /// Each area keeps the draws of its home subdomain.
    MVRISK_MERGE_OWNERSHIP = 0,
    /// Per-cell mixture over all subdomains containing the area.
    MVRISK_MERGE_MIXTURE = 1,
}

/// Tuning knobs for a fit. Get defaults from `mvrisk_fit_options_default`
/// and change only what you need.
#[repr(C)]
#[derive(Clone, Copy)]
pub struct mvrisk_fit_options {
    /// Posterior draws to keep (at least 2).
    pub draws: usize,
    /// Root seed; fixed seed and inputs give bit-identical results
    /// regardless of `workers`.
    pub seed: u64,
    /// Degrees of freedom of the covariance prior; 0 or negative means the
    /// default (number of diseases + 2).
    pub dof: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub hyper_tol: f64,
    pub hyper_max_iter: usize,
    /// Worker threads for partitioned fits; 0 means use all cores.
    pub workers: usize,
    /// Neighbourhood expansion order for partitioned fits.
    pub order: usize,
    pub merge: mvrisk_merge,
}

/// Model-comparison measures of a fitted result.
#[repr(C)]
#[derive(Clone, Copy)]
pub struct mvrisk_criteria {
    /// Posterior mean of the negative log-likelihood.
    pub mean_neg_log_lik: f64,
    /// Posterior mean deviance.
    pub mean_deviance: f64,
    /// Deviance at the posterior mean risks.
    pub deviance_at_mean: f64,
    /// Effective number of parameters (deviance based).
    pub p_d: f64,
    pub dic: f64,
    /// Effective number of parameters (variance based).
    pub p_waic: f64,
    pub waic: f64,
}

/// Opaque adjacency structure over areal units.
pub struct mvrisk_graph {
    inner: AreaGraph,
}

/// Opaque observed/expected count panel.
pub struct mvrisk_panel {
    inner: CountPanel,
}

/// Opaque fitted result (posterior draws, summaries, criteria).
pub struct mvrisk_result {
    inner: MergedResult,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let clean = msg.replace('\0', " ");
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = CString::new(clean).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> mvrisk_status {
    match err {
        Error::Input(_) | Error::Config(_) | Error::Io { .. } => MVRISK_INVALID_INPUT,
        Error::Numeric(_) => MVRISK_NUMERIC_FAILURE,
    }
}

/// Run `body` with panics converted to MVRISK_PANIC and errors recorded.
fn guarded(body: impl FnOnce() -> Result<mvrisk_status, Error>) -> mvrisk_status {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(status)) => status,
        Ok(Err(err)) => {
            set_error(&err.to_string());
            status_of(&err)
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "internal panic".to_string());
            set_error(&msg);
            MVRISK_PANIC
        }
    }
}

fn invalid(msg: &str) -> mvrisk_status {
    set_error(msg);
    MVRISK_INVALID_ARGUMENT
}

/// # Safety
/// `ptr` must be null or a NUL-terminated string valid for reads.
unsafe fn utf8_arg<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, String> {
    if ptr.is_null() {
        return Err(format!("{what} is null"));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| format!("{what} is not valid UTF-8"))
}

fn copy_string(value: &str, buf: *mut c_char, cap: usize) -> usize {
    let bytes = value.as_bytes();
    let needed = bytes.len() + 1;
    if !buf.is_null() && cap > 0 {
        let n = bytes.len().min(cap - 1);
        unsafe {
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
    }
    needed
}

/// Copy the message of the last failure on this thread into `buf`
/// (NUL-terminated, truncated to `cap`). Returns the length the full
/// message needs, including the NUL.
#[no_mangle]
pub unsafe extern "C" fn mvrisk_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        copy_string(msg.to_str().unwrap_or(""), buf, cap)
    })
}

/// Parse an edge-list text (`label<TAB>label` per line, single labels for
/// isolated areas, `#` comments) into a graph handle.
#[no_mangle]
pub unsafe extern "C" fn mvrisk_graph_parse(
    edge_text: *const c_char,
    out: *mut *mut mvrisk_graph,
) -> mvrisk_status {
    if out.is_null() {
        return invalid("out is null");
    }
    guarded(|| {
        let text = utf8_arg(edge_text, "edge_text").map_err(Error::input)?;
        let (edges, labels) = parse_edge_list(text)?;
        let graph = build_graph(&edges, &labels)?;
        *out = Box::into_raw(Box::new(mvrisk_graph { inner: graph }));
        Ok(MVRISK_OK)
    })
}

/// Build a rook-adjacency lattice graph with labels `r<row>c<col>`.
#[no_mangle]
pub unsafe extern "C" fn mvrisk_graph_lattice(
    rows: usize,
    cols: usize,
    out: *mut *mut mvrisk_graph,
) -> mvrisk_status {
    if out.is_null() {
        return invalid("out is null");
    }
    if rows == 0 || cols == 0 {
        return invalid("lattice dimensions must be positive");
    }
    guarded(|| {
        *out = Box::into_raw(Box::new(mvrisk_graph {
            inner: lattice(rows, cols),
        }));
        Ok(MVRISK_OK)
    })
}

/// Number of areas, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn mvrisk_graph_n_areas(graph: *const mvrisk_graph) -> usize {
    if graph.is_null() {
        return 0;
    }
    (*graph).inner.n_areas()
}

/// Number of neighbour pairs, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn mvrisk_graph_n_edges(graph: *const mvrisk_graph) -> usize {
    if graph.is_null() {
        return 0;
    }
    (*graph).inner.edges().len()
}

/// Release a graph handle. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn mvrisk_graph_free(graph: *mut mvrisk_graph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Parse a long-format counts CSV (area, disease, observed and either
/// expected or age_group + population columns) against `graph`.
#[no_mangle]
pub unsafe extern "C" fn mvrisk_panel_parse_csv(
    graph: *const mvrisk_graph,
    csv_text: *const c_char,
    out: *mut *mut mvrisk_panel,
) -> mvrisk_status {
    if out.is_null() {
        return invalid("out is null");
    }
    if graph.is_null() {
        return invalid("graph is null");
    }
    guarded(|| {
        let text = utf8_arg(csv_text, "csv_text").map_err(Error::input)?;
        let panel = parse_counts_csv(text.as_bytes(), &(*graph).inner)?;
        *out = Box::into_raw(Box::new(mvrisk_panel { inner: panel }));
        Ok(MVRISK_OK)
    })
}

/// Build a panel from raw arrays. `observed` and `expected` are
/// disease-major with `n_diseases * n_areas` entries: disease j, area i at
/// index `j * n_areas + i`, areas in graph order.
#[no_mangle]
pub unsafe extern "C" fn mvrisk_panel_new(
    graph: *const mvrisk_graph,
    disease_names: *const *const c_char,
    n_diseases: usize,
    observed: *const u64,
    expected: *const f64,
    out: *mut *mut mvrisk_panel,
) -> mvrisk_status {
    if out.is_null() {
        return invalid("out is null");
    }
    if graph.is_null() || disease_names.is_null() || observed.is_null() || expected.is_null() {
        return invalid("a required pointer is null");
    }
    if n_diseases == 0 {
        return invalid("n_diseases must be positive");
    }
    guarded(|| {
        let g = &(*graph).inner;
        let cells = g.n_areas() * n_diseases;
        let mut names = Vec::with_capacity(n_diseases);
        for k in 0..n_diseases {
            let name = utf8_arg(*disease_names.add(k), "disease name").map_err(Error::input)?;
            names.push(name.to_string());
        }
        let observed = std::slice::from_raw_parts(observed, cells).to_vec();
        let expected = std::slice::from_raw_parts(expected, cells).to_vec();
        let panel = CountPanel::new(g.area_ids().to_vec(), names, observed, expected)?;
        *out = Box::into_raw(Box::new(mvrisk_panel { inner: panel }));
        Ok(MVRISK_OK)
    })
}

/// Number of areas in the panel, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn mvrisk_panel_n_areas(panel: *const mvrisk_panel) -> usize {
    if panel.is_null() {
        return 0;
    }
    (*panel).inner.n_areas
}

/// Number of diseases in the panel, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn mvrisk_panel_n_diseases(panel: *const mvrisk_panel) -> usize {
    if panel.is_null() {
        return 0;
    }
    (*panel).inner.n_diseases
}

/// Release a panel handle. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn mvrisk_panel_free(panel: *mut mvrisk_panel) {
    if !panel.is_null() {
        drop(Box::from_raw(panel));
    }
}

/// Defaults shared with the command-line tool.
#[no_mangle]
pub extern "C" fn mvrisk_fit_options_default() -> mvrisk_fit_options {
    let fit = FitConfig::default();
    mvrisk_fit_options {
        draws: fit.draws,
        seed: fit.seed,
        dof: 0.0,
        newton_tol: fit.newton_tol,
        newton_max_iter: fit.newton_max_iter,
        hyper_tol: fit.hyper_tol,
        hyper_max_iter: fit.hyper_max_iter,
        workers: 0,
        order: 1,
        merge: mvrisk_merge::MVRISK_MERGE_OWNERSHIP,
    }
}

fn pipeline_config(opts: &mvrisk_fit_options) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.fit = FitConfig {
        draws: opts.draws,
        dof: if opts.dof > 0.0 { Some(opts.dof) } else { None },
        newton_tol: opts.newton_tol,
        newton_max_iter: opts.newton_max_iter,
        hyper_tol: opts.hyper_tol,
        hyper_max_iter: opts.hyper_max_iter,
        seed: opts.seed,
    };
    cfg.workers = if opts.workers == 0 {
        None
    } else {
        Some(opts.workers)
    };
    cfg.risk_merge = match opts.merge {
        mvrisk_merge::MVRISK_MERGE_OWNERSHIP => RiskMerge::Ownership,
        mvrisk_merge::MVRISK_MERGE_MIXTURE => RiskMerge::Mixture,
    };
    cfg.partition_order = opts.order;
    cfg
}

unsafe fn fit_with_plan(
    graph: *const mvrisk_graph,
    panel: *const mvrisk_panel,
    options: *const mvrisk_fit_options,
    plan_of: impl FnOnce(&AreaGraph, &PipelineConfig) -> Result<PartitionPlan, Error>,
    out: *mut *mut mvrisk_result,
) -> mvrisk_status {
    if out.is_null() {
        return invalid("out is null");
    }
    if graph.is_null() || panel.is_null() {
        return invalid("graph or panel is null");
    }
    guarded(|| {
        let g = &(*graph).inner;
        let p = &(*panel).inner;
        let cfg = if options.is_null() {
            pipeline_config(&mvrisk_fit_options_default())
        } else {
            pipeline_config(&*options)
        };
        let plan = plan_of(g, &cfg)?;
        let outcome = run_pipeline(g, p, &plan, &cfg, None)?;
        *out = Box::into_raw(Box::new(mvrisk_result {
            inner: outcome.merged,
        }));
        Ok(MVRISK_OK)
    })
}

/// Fit the whole map as a single domain. `options` may be null for
/// defaults.
#[no_mangle]
pub unsafe extern "C" fn mvrisk_fit(
    graph: *const mvrisk_graph,
    panel: *const mvrisk_panel,
    options: *const mvrisk_fit_options,
    out: *mut *mut mvrisk_result,
) -> mvrisk_status {
    fit_with_plan(
        graph,
        panel,
        options,
        |g, _| Ok(PartitionPlan::single(g.n_areas())),
        out,
    )
}

/// Fit the subdomains of a partition in parallel and merge. The partition
/// text holds one `label<TAB>subdomain` line per area; subdomains are
/// expanded by `options.order` neighbourhood hops before fitting.
#[no_mangle]
pub unsafe extern "C" fn mvrisk_fit_partitioned(
    graph: *const mvrisk_graph,
    panel: *const mvrisk_panel,
    partition_text: *const c_char,
    options: *const mvrisk_fit_options,
    out: *mut *mut mvrisk_result,
) -> mvrisk_status {
    let text = match utf8_arg(partition_text, "partition_text") {
        Ok(t) => t,
        Err(msg) => return invalid(&msg),
    };
    fit_with_plan(
        graph,
        panel,
        options,
        |g, cfg| {
            let home = parse_partition(text, g)?;
            expand_partition(g, &home, cfg.partition_order)
        },
        out,
    )
}

/// Number of areas in the result, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn mvrisk_result_n_areas(result: *const mvrisk_result) -> usize {
    if result.is_null() {
        return 0;
    }
    (*result).inner.n_areas
}

/// Number of diseases in the result, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn mvrisk_result_n_diseases(result: *const mvrisk_result) -> usize {
    if result.is_null() {
        return 0;
    }
    (*result).inner.n_diseases
}

/// Number of posterior draws kept, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn mvrisk_result_n_draws(result: *const mvrisk_result) -> usize {
    if result.is_null() {
        return 0;
    }
    (*result).inner.n_draws
}

/// Number of named scalar parameters, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn mvrisk_result_n_params(result: *const mvrisk_result) -> usize {
    if result.is_null() {
        return 0;
    }
    (*result).inner.params.names.len()
}

/// Copy the label of area `i` into `buf`; snprintf convention.
#[no_mangle]
pub unsafe extern "C" fn mvrisk_result_area_id(
    result: *const mvrisk_result,
    i: usize,
    buf: *mut c_char,
    cap: usize,
) -> usize {
    if result.is_null() || i >= (*result).inner.n_areas {
        return 0;
    }
    let r = &(*result).inner;
    copy_string(&r.area_ids[i], buf, cap)
}

/// Copy the name of disease `j` into `buf`; snprintf convention.
#[no_mangle]
pub unsafe extern "C" fn mvrisk_result_disease_name(
    result: *const mvrisk_result,
    j: usize,
    buf: *mut c_char,
    cap: usize,
) -> usize {
    if result.is_null() || j >= (*result).inner.n_diseases {
        return 0;
    }
    let r = &(*result).inner;
    copy_string(&r.disease_names[j], buf, cap)
}

/// Copy the name of parameter `k` into `buf`; snprintf convention.
#[no_mangle]
pub unsafe extern "C" fn mvrisk_result_param_name(
    result: *const mvrisk_result,
    k: usize,
    buf: *mut c_char,
    cap: usize,
) -> usize {
    if result.is_null() || k >= (*result).inner.params.names.len() {
        return 0;
    }
    let r = &(*result).inner;
    copy_string(&r.params.names[k], buf, cap)
}

/// Fill `buf` (length `n_areas * n_diseases`, disease-major: disease j,
/// area i at `j * n_areas + i`) with one posterior summary.
#[no_mangle]
pub unsafe extern "C" fn mvrisk_result_risk_summary(
    result: *const mvrisk_result,
    field: mvrisk_field,
    buf: *mut f64,
    len: usize,
) -> mvrisk_status {
    if result.is_null() || buf.is_null() {
        return invalid("result or buf is null");
    }
    let r = &(*result).inner;
    let cells = r.n_areas * r.n_diseases;
    if len != cells {
        return invalid("buf length does not equal n_areas * n_diseases");
    }
    let out = std::slice::from_raw_parts_mut(buf, cells);
    for (n, slot) in out.iter_mut().enumerate() {
        let s = &r.summaries[n];
        *slot = match field {
            mvrisk_field::MVRISK_FIELD_MEAN => s.mean,
            mvrisk_field::MVRISK_FIELD_MEDIAN => s.median,
            mvrisk_field::MVRISK_FIELD_SD => s.sd,
            mvrisk_field::MVRISK_FIELD_Q025 => s.q025,
            mvrisk_field::MVRISK_FIELD_Q975 => s.q975,
            mvrisk_field::MVRISK_FIELD_EXCEED_ONE => s.exceed_one,
            mvrisk_field::MVRISK_FIELD_CPO => r.cpo[n],
        };
    }
    MVRISK_OK
}

/// Fill `buf` (length `n_draws`) with the posterior draws of the relative
/// risk in (area `i`, disease `j`).
#[no_mangle]
pub unsafe extern "C" fn mvrisk_result_risk_draws(
    result: *const mvrisk_result,
    i: usize,
    j: usize,
    buf: *mut f64,
    len: usize,
) -> mvrisk_status {
    if result.is_null() || buf.is_null() {
        return invalid("result or buf is null");
    }
    let r = &(*result).inner;
    if i >= r.n_areas || j >= r.n_diseases {
        return invalid("area or disease index out of range");
    }
    if len != r.n_draws {
        return invalid("buf length does not equal n_draws");
    }
    let cells = r.n_areas * r.n_diseases;
    let cell = j * r.n_areas + i;
    let out = std::slice::from_raw_parts_mut(buf, len);
    for (s, slot) in out.iter_mut().enumerate() {
        *slot = r.risk_draws[s * cells + cell];
    }
    MVRISK_OK
}

/// Fill `buf` (length `n_draws`) with the posterior draws of parameter `k`
/// (see `mvrisk_result_param_name` for the naming).
#[no_mangle]
pub unsafe extern "C" fn mvrisk_result_param_draws(
    result: *const mvrisk_result,
    k: usize,
    buf: *mut f64,
    len: usize,
) -> mvrisk_status {
    if result.is_null() || buf.is_null() {
        return invalid("result or buf is null");
    }
    let r = &(*result).inner;
    if k >= r.params.names.len() {
        return invalid("parameter index out of range");
    }
    if len != r.n_draws {
        return invalid("buf length does not equal n_draws");
    }
    let col = r.params.column(k);
    std::slice::from_raw_parts_mut(buf, len).copy_from_slice(&col);
    MVRISK_OK
}

/// Copy the model-comparison measures into `out`.
#[no_mangle]
pub unsafe extern "C" fn mvrisk_result_criteria(
    result: *const mvrisk_result,
    out: *mut mvrisk_criteria,
) -> mvrisk_status {
    if result.is_null() || out.is_null() {
        return invalid("result or out is null");
    }
    let c = &(*result).inner.criteria;
    *out = mvrisk_criteria {
        mean_neg_log_lik: c.mean_neg_log_lik,
        mean_deviance: c.mean_deviance,
        deviance_at_mean: c.deviance_at_mean,
        p_d: c.p_d,
        dic: c.dic,
        p_waic: c.p_waic,
        waic: c.waic,
    };
    MVRISK_OK
}

/// Number of warnings attached to the result, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn mvrisk_result_n_warnings(result: *const mvrisk_result) -> usize {
    if result.is_null() {
        return 0;
    }
    (*result).inner.warnings.len()
}

/// Copy warning `k` into `buf`; snprintf convention.
#[no_mangle]
pub unsafe extern "C" fn mvrisk_result_warning(
    result: *const mvrisk_result,
    k: usize,
    buf: *mut c_char,
    cap: usize,
) -> usize {
    if result.is_null() || k >= (*result).inner.warnings.len() {
        return 0;
    }
    let r = &(*result).inner;
    copy_string(&r.warnings[k], buf, cap)
}

/// Release a result handle. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn mvrisk_result_free(result: *mut mvrisk_result) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}
