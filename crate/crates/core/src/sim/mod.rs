//! Flow-level discrete-event simulation of training jobs on a Clos fabric.
//!
//! Jobs alternate a compute phase and a Ring All-Reduce phase for a fixed
//! number of iterations. Between events every transmitting flow sends at its
//! max-min fair rate; rates are recomputed from scratch whenever the set of
//! transmitting flows or their routes change. Elephant flows are routed by
//! the controller's scheme after its reaction latency, mice go straight onto
//! ECMP.

mod bench;
mod engine;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::routing::{RoutingError, Scheme, SchemeParams};
use crate::topology::{ClosTopology, Endpoint, Route, RouteKind, TopologyError};
use crate::workload::{CommodityId, HardwareProfile, Job, JobId, WorkloadError};

pub use bench::{measure_scheme_runtime, random_commodities};
pub use engine::run_scenario;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Routing(#[from] RoutingError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error("misconfigured scenario: {0}")]
    Config(String),
    #[error("invariant violated at t={time}: {what}")]
    Invariant { time: f64, what: String },
}

/// How the central controller behaves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerModel {
    pub scheme: Scheme,
    /// Seconds between a trigger and the new routes taking effect.
    pub reaction_latency: f64,
    /// Flows of at least this many bytes are routed by the controller.
    pub elephant_threshold: u64,
    /// Failure reactions skip the reaction latency.
    pub precomputed_failures: bool,
    /// New elephants start on ECMP instead of waiting for the controller.
    pub ecmp_fallback: bool,
    pub params: SchemeParams,
}

impl ControllerModel {
    pub fn new(scheme: Scheme) -> Self {
        ControllerModel {
            scheme,
            reaction_latency: 10e-3,
            elephant_threshold: 1_000_000,
            precomputed_failures: false,
            ecmp_fallback: false,
            params: SchemeParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FailureEvent {
    pub time: f64,
    pub count: usize,
}

/// Spine failures injected during a run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FailurePlan {
    pub events: Vec<FailureEvent>,
    pub seed: u64,
}

/// Everything a run needs. Jobs must already be placed.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub topology: ClosTopology,
    pub jobs: Vec<Job>,
    pub controller: ControllerModel,
    pub failures: Option<FailurePlan>,
    pub hardware: HardwareProfile,
    pub seed: u64,
    /// Check feasibility, saturation and volume conservation on every step.
    pub audit: bool,
}

/// Per-flow outcome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowRecord {
    pub id: CommodityId,
    pub src: Endpoint,
    pub dst: Endpoint,
    pub volume: u64,
    /// Route in use when the flow finished.
    pub route: RouteKind,
    pub udp_port: Option<u16>,
    pub start: f64,
    pub end: f64,
    pub fct: f64,
    /// volume (bits) / fct
    pub throughput: f64,
    /// Lowest rate the flow was given while transmitting.
    pub min_rate: f64,
    /// Integral of the flow's rate over its lifetime, in bytes.
    pub delivered: f64,
}

/// One All-Reduce of one job.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub job_id: JobId,
    pub iteration: usize,
    /// Longest flow of the iteration, measured from communication start.
    pub allreduce_time: f64,
    pub flow_records: Vec<FlowRecord>,
}

/// Per-job aggregates over the whole run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JobStats {
    pub job_id: JobId,
    /// Highest ToR↔spine load seen on any link crossed by this job's flows.
    pub max_link_load: u32,
}

/// Wall-clock cost of one controller computation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuntimeSample {
    pub sim_time: f64,
    pub commodities: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct SimOutput {
    pub records: Vec<MetricsRecord>,
    pub job_stats: Vec<JobStats>,
    pub runtime_log: Vec<RuntimeSample>,
    pub final_failed_spines: Vec<usize>,
    pub end_time: f64,
}

impl SimOutput {
    pub fn records_for(&self, job: JobId) -> impl Iterator<Item = &MetricsRecord> {
        self.records.iter().filter(move |r| r.job_id == job)
    }

    /// Mean All-Reduce time over the job's iterations.
    pub fn mean_allreduce_time(&self, job: JobId) -> Option<f64> {
        let times: Vec<f64> = self.records_for(job).map(|r| r.allreduce_time).collect();
        (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64)
    }
}

/// Default first port for path-encoding UDP source ports (start of the dynamic range).
pub const UDP_PORT_BASE: u16 = 49152;

/// UDP source port that pins a flow to its spine; `None` for routes without a spine.
pub fn encode_route_as_udp_port(route: &Route, port_base: u16) -> Option<u16> {
    let spine = route.kind.spine()?;
    port_base.checked_add(u16::try_from(spine).ok()?)
}

/// Spine index carried by a port produced by [`encode_route_as_udp_port`].
pub fn decode_udp_port(port: u16, port_base: u16, topo: &ClosTopology) -> Option<usize> {
    let spine = port.checked_sub(port_base)? as usize;
    (spine < topo.num_spines()).then_some(spine)
}
