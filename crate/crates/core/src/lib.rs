//! Routing and flow-level simulation for ML training traffic on 2-layer Clos fabrics.
//!
//! The crate covers the fabric model ([`topology`]), 3D-parallel training
//! workloads and their Ring All-Reduce flows ([`workload`]), path assignment
//! schemes ([`routing`]), max-min fair rates ([`rates`]), a discrete-event
//! simulator ([`sim`]) and the experiment driver behind the `clostrain`
//! binary ([`cli`]).

pub mod cli;
pub mod rates;
pub mod routing;
pub mod sim;
pub mod topology;
pub mod workload;

pub use rates::{min_bandwidth, waterfill, RateAllocation};
pub use routing::{LinkScope, PathChoice, Scheme};
pub use topology::{ClosTopology, Endpoint, Link, Route, RouteKind};
pub use workload::{CommodityId, CommoditySpec, Job, JobId, ModelConfig};
