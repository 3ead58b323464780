//! C ABI over `clostrain`.
//!
//! Topologies and commodity lists are opaque heap handles created and freed
//! through this API. Every fallible call returns a [`ClostrainStatus`]; the
//! message for the last failure on the calling thread is available from
//! [`clostrain_last_error`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use clostrain::cli::{cmd_run, CliError, ScenarioConfig};
use clostrain::routing::{assign, max_link_load, LinkScope, RoutingError, SchemeParams};
use clostrain::{waterfill, ClosTopology, CommodityId, CommoditySpec, Endpoint, JobId, RouteKind, Scheme};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClostrainStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Unroutable = 3,
    TooLarge = 4,
    Config = 5,
    Runtime = 6,
    Invariant = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClostrainScheme {
    Greedy = 0,
    Ecmp = 1,
    EdgeColoring = 2,
    Annealing = 3,
    Exact = 4,
}

impl From<ClostrainScheme> for Scheme {
    fn from(s: ClostrainScheme) -> Self {
        match s {
            ClostrainScheme::Greedy => Scheme::Greedy,
            ClostrainScheme::Ecmp => Scheme::Ecmp,
            ClostrainScheme::EdgeColoring => Scheme::EdgeColoring,
            ClostrainScheme::Annealing => Scheme::Annealing,
            ClostrainScheme::Exact => Scheme::Exact,
        }
    }
}

/// A GPU: ToR, host within the ToR, GPU within the host.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClostrainEndpoint {
    pub tor: usize,
    pub host: usize,
    pub gpu: usize,
}

impl From<ClostrainEndpoint> for Endpoint {
    fn from(e: ClostrainEndpoint) -> Self {
        Endpoint::new(e.tor, e.host, e.gpu)
    }
}

/// Written for commodities whose route crosses no spine.
pub const CLOSTRAIN_NO_SPINE: i64 = -1;

pub struct ClostrainTopology {
    inner: ClosTopology,
}

pub struct ClostrainCommodities {
    inner: Vec<CommoditySpec>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl ToString) {
    let msg = CString::new(msg.to_string().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn fail(status: ClostrainStatus, msg: impl ToString) -> ClostrainStatus {
    set_error(msg);
    status
}

fn routing_status(e: &RoutingError) -> ClostrainStatus {
    match e {
        RoutingError::Unroutable { .. } => ClostrainStatus::Unroutable,
        RoutingError::TooLarge { .. } => ClostrainStatus::TooLarge,
        _ => ClostrainStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> ClostrainStatus) -> ClostrainStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(ClostrainStatus::Panic, "internal panic"))
}

/// Message for the last failed call on this thread. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn clostrain_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn clostrain_status_str(status: ClostrainStatus) -> *const c_char {
    let s: &'static CStr = match status {
        ClostrainStatus::Ok => c"ok",
        ClostrainStatus::NullPointer => c"null pointer",
        ClostrainStatus::InvalidArgument => c"invalid argument",
        ClostrainStatus::Unroutable => c"unroutable commodity",
        ClostrainStatus::TooLarge => c"instance too large for the exact scheme",
        ClostrainStatus::Config => c"configuration error",
        ClostrainStatus::Runtime => c"runtime error",
        ClostrainStatus::Invariant => c"invariant violated",
        ClostrainStatus::Panic => c"internal panic",
    };
    s.as_ptr()
}

/// Creates a fabric; writes the topology handle to `out`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn clostrain_topology_new(
    spines: usize,
    tors: usize,
    hosts_per_tor: usize,
    nics_per_host: usize,
    link_capacity: f64,
    out: *mut *mut ClostrainTopology,
) -> ClostrainStatus {
    guard(|| {
        if out.is_null() {
            return fail(ClostrainStatus::NullPointer, "out is null");
        }
        match ClosTopology::new(spines, tors, hosts_per_tor, nics_per_host, link_capacity) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(ClostrainTopology { inner }));
                ClostrainStatus::Ok
            }
            Err(e) => fail(ClostrainStatus::InvalidArgument, e),
        }
    })
}

/// Fails `k` more live spines, chosen by `seed`.
///
/// # Safety
/// `topo` must be a live handle from [`clostrain_topology_new`].
#[no_mangle]
pub unsafe extern "C" fn clostrain_topology_fail_spines(topo: *mut ClostrainTopology, k: usize, seed: u64) -> ClostrainStatus {
    guard(|| {
        let Some(t) = topo.as_mut() else {
            return fail(ClostrainStatus::NullPointer, "topology is null");
        };
        match t.inner.fail_spines(k, seed) {
            Ok(inner) => {
                t.inner = inner;
                ClostrainStatus::Ok
            }
            Err(e) => fail(ClostrainStatus::InvalidArgument, e),
        }
    })
}

/// Number of live spines, 0 for a null handle.
///
/// # Safety
/// `topo` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn clostrain_topology_live_spines(topo: *const ClostrainTopology) -> usize {
    topo.as_ref().map_or(0, |t| t.inner.live_spine_count())
}

/// # Safety
/// `topo` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn clostrain_topology_free(topo: *mut ClostrainTopology) {
    if !topo.is_null() {
        drop(Box::from_raw(topo));
    }
}

/// An empty commodity list.
#[no_mangle]
pub extern "C" fn clostrain_commodities_new() -> *mut ClostrainCommodities {
    Box::into_raw(Box::new(ClostrainCommodities { inner: Vec::new() }))
}

/// Appends a commodity; its id is its position in the list.
///
/// # Safety
/// `list` must be a live handle from [`clostrain_commodities_new`].
#[no_mangle]
pub unsafe extern "C" fn clostrain_commodities_push(
    list: *mut ClostrainCommodities,
    src: ClostrainEndpoint,
    dst: ClostrainEndpoint,
    volume: u64,
) -> ClostrainStatus {
    guard(|| {
        let Some(l) = list.as_mut() else {
            return fail(ClostrainStatus::NullPointer, "commodity list is null");
        };
        let id = CommodityId::standalone(l.inner.len());
        l.inner.push(CommoditySpec { id, job_id: JobId(0), src: src.into(), dst: dst.into(), volume });
        ClostrainStatus::Ok
    })
}

/// # Safety
/// `list` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn clostrain_commodities_len(list: *const ClostrainCommodities) -> usize {
    list.as_ref().map_or(0, |l| l.inner.len())
}

/// # Safety
/// `list` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn clostrain_commodities_free(list: *mut ClostrainCommodities) {
    if !list.is_null() {
        drop(Box::from_raw(list));
    }
}

/// Routes every commodity with `scheme`.
///
/// Writes one spine per commodity to `spines_out` ([`CLOSTRAIN_NO_SPINE`] for
/// intra-rack and intra-host commodities) and, if `max_load_out` is not null,
/// the highest ToR↔spine link load.
///
/// # Safety
/// Handles must be live; `spines_out` must hold `clostrain_commodities_len(list)` entries.
#[no_mangle]
pub unsafe extern "C" fn clostrain_assign(
    topo: *const ClostrainTopology,
    list: *const ClostrainCommodities,
    scheme: ClostrainScheme,
    seed: u64,
    spines_out: *mut i64,
    max_load_out: *mut u32,
) -> ClostrainStatus {
    guard(|| {
        let (Some(t), Some(l)) = (topo.as_ref(), list.as_ref()) else {
            return fail(ClostrainStatus::NullPointer, "topology or commodity list is null");
        };
        if spines_out.is_null() && !l.inner.is_empty() {
            return fail(ClostrainStatus::NullPointer, "spines_out is null");
        }
        let params = SchemeParams { seed, ..SchemeParams::default() };
        let choice = match assign(scheme.into(), &l.inner, &t.inner, &params) {
            Ok(c) => c,
            Err(e) => return fail(routing_status(&e), e),
        };
        for (i, c) in l.inner.iter().enumerate() {
            let spine = choice.spine_of(&c.id).map_or(CLOSTRAIN_NO_SPINE, |s| s as i64);
            *spines_out.add(i) = spine;
        }
        if let Some(m) = max_load_out.as_mut() {
            *m = max_link_load(&choice, &t.inner, LinkScope::SpineLinksOnly);
        }
        ClostrainStatus::Ok
    })
}

/// Max-min fair rates for the commodities on the given spines.
///
/// `spines[i]` is ignored for commodities that stay inside a rack.
/// Intra-host commodities get `INFINITY`.
///
/// # Safety
/// Handles must be live; `spines` and `rates_out` must hold `clostrain_commodities_len(list)` entries.
#[no_mangle]
pub unsafe extern "C" fn clostrain_waterfill(
    topo: *const ClostrainTopology,
    list: *const ClostrainCommodities,
    spines: *const i64,
    rates_out: *mut f64,
) -> ClostrainStatus {
    guard(|| {
        let (Some(t), Some(l)) = (topo.as_ref(), list.as_ref()) else {
            return fail(ClostrainStatus::NullPointer, "topology or commodity list is null");
        };
        if l.inner.is_empty() {
            return ClostrainStatus::Ok;
        }
        if spines.is_null() || rates_out.is_null() {
            return fail(ClostrainStatus::NullPointer, "spines or rates_out is null");
        }
        let topo = &t.inner;
        let mut flows = Vec::with_capacity(l.inner.len());
        for (i, c) in l.inner.iter().enumerate() {
            if !topo.contains(&c.src) || !topo.contains(&c.dst) || c.src == c.dst {
                return fail(ClostrainStatus::InvalidArgument, format!("commodity {i}: bad endpoints"));
            }
            let kind = if c.src.same_host(&c.dst) {
                RouteKind::IntraHost
            } else if c.src.tor == c.dst.tor {
                RouteKind::IntraTor
            } else {
                let s = *spines.add(i);
                if s < 0 || !topo.is_spine_live(s as usize) {
                    return fail(ClostrainStatus::InvalidArgument, format!("commodity {i}: spine {s} is not live"));
                }
                RouteKind::Spine(s as usize)
            };
            flows.push((c.id, topo.route(&c.src, &c.dst, kind)));
        }
        let alloc = waterfill(&flows, topo);
        for (i, c) in l.inner.iter().enumerate() {
            *rates_out.add(i) = alloc.get(&c.id).unwrap_or(0.0);
        }
        ClostrainStatus::Ok
    })
}

/// Runs a scenario given as TOML text and writes the result CSV to `out_path`,
/// with the summary JSON (and per-flow trace if `trace` is nonzero) beside it.
///
/// # Safety
/// Both strings must be valid NUL-terminated UTF-8.
#[no_mangle]
pub unsafe extern "C" fn clostrain_run_config(config_toml: *const c_char, out_path: *const c_char, trace: c_int) -> ClostrainStatus {
    guard(|| {
        if config_toml.is_null() || out_path.is_null() {
            return fail(ClostrainStatus::NullPointer, "config or out_path is null");
        }
        let (Ok(text), Ok(out)) = (CStr::from_ptr(config_toml).to_str(), CStr::from_ptr(out_path).to_str()) else {
            return fail(ClostrainStatus::InvalidArgument, "strings must be UTF-8");
        };
        let result = ScenarioConfig::from_toml(text).and_then(|cfg| cmd_run(&cfg, Path::new(out), trace != 0));
        match result {
            Ok(_) => ClostrainStatus::Ok,
            Err(e @ CliError::Config(_)) => fail(ClostrainStatus::Config, e),
            Err(e @ CliError::Runtime(_)) => fail(ClostrainStatus::Runtime, e),
            Err(e @ CliError::Invariant(_)) => fail(ClostrainStatus::Invariant, e),
        }
    })
}

/// Library version, NUL-terminated.
#[no_mangle]
pub extern "C" fn clostrain_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version has no NUL"),
    };
    VERSION.as_ptr()
}
