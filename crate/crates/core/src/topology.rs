//! Two-layer Clos fabric: ToRs fully meshed to spines, hosts hanging off ToRs.
//!
//! Every physical link is full duplex and modeled as two independent directed
//! links of the same capacity. Hosts expose one or more NICs; GPUs are attached
//! to NICs in contiguous blocks so that `gpus_per_host > nics_per_host` models
//! a GPU:NIC ratio above one.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("{field} must be positive (got {value})")]
    NonPositive { field: &'static str, value: f64 },
    #[error("a Clos fabric needs at least two ToRs (got {0})")]
    TooFewTors(usize),
    #[error("gpus_per_host ({gpus}) must be a multiple of nics_per_host ({nics})")]
    GpuNicMismatch { gpus: usize, nics: usize },
    #[error("spine {0} is out of range")]
    SpineOutOfRange(usize),
    #[error("cannot fail {requested} spines: only {live} are alive and one must survive")]
    TooManyFailures { requested: usize, live: usize },
    #[error("endpoint {0} is outside the topology")]
    EndpointOutOfRange(Endpoint),
    #[error("source and destination are the same endpoint {0}")]
    SameEndpoint(Endpoint),
    #[error("no live spine connects ToR {src} to ToR {dst}")]
    NoLiveSpine { src: usize, dst: usize },
}

/// A GPU attachment point: the GPU's host, and the host's ToR.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Endpoint {
    pub tor: usize,
    pub host: usize,
    pub gpu: usize,
}

impl Endpoint {
    pub fn new(tor: usize, host: usize, gpu: usize) -> Self {
        Endpoint { tor, host, gpu }
    }

    pub fn same_host(&self, other: &Endpoint) -> bool {
        self.tor == other.tor && self.host == other.host
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}/h{}/g{}", self.tor, self.host, self.gpu)
    }
}

/// A switch or NIC in the fabric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Node {
    Nic { tor: usize, host: usize, nic: usize },
    Tor(usize),
    Spine(usize),
}

/// A directed link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Link {
    NicUp { tor: usize, host: usize, nic: usize },
    NicDown { tor: usize, host: usize, nic: usize },
    TorUp { tor: usize, spine: usize },
    SpineDown { spine: usize, tor: usize },
}

impl Link {
    pub fn tail(&self) -> Node {
        match *self {
            Link::NicUp { tor, host, nic } => Node::Nic { tor, host, nic },
            Link::NicDown { tor, .. } => Node::Tor(tor),
            Link::TorUp { tor, .. } => Node::Tor(tor),
            Link::SpineDown { spine, .. } => Node::Spine(spine),
        }
    }

    pub fn head(&self) -> Node {
        match *self {
            Link::NicUp { tor, .. } => Node::Tor(tor),
            Link::NicDown { tor, host, nic } => Node::Nic { tor, host, nic },
            Link::TorUp { spine, .. } => Node::Spine(spine),
            Link::SpineDown { tor, .. } => Node::Tor(tor),
        }
    }

    /// True for ToR→spine and spine→ToR links.
    pub fn is_spine_link(&self) -> bool {
        matches!(self, Link::TorUp { .. } | Link::SpineDown { .. })
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Link::NicUp { tor, host, nic } => write!(f, "nic(t{tor}/h{host}/n{nic})->t{tor}"),
            Link::NicDown { tor, host, nic } => write!(f, "t{tor}->nic(t{tor}/h{host}/n{nic})"),
            Link::TorUp { tor, spine } => write!(f, "t{tor}->s{spine}"),
            Link::SpineDown { spine, tor } => write!(f, "s{spine}->t{tor}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RouteKind {
    IntraHost,
    IntraTor,
    Spine(usize),
}

impl RouteKind {
    pub fn spine(&self) -> Option<usize> {
        match *self {
            RouteKind::Spine(s) => Some(s),
            _ => None,
        }
    }
}

/// A shortest path between two endpoints.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Route {
    pub kind: RouteKind,
    pub links: Vec<Link>,
}

/// The 2-layer Clos fabric. Immutable once built; failures produce a new value.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosTopology {
    num_spines: usize,
    num_tors: usize,
    hosts_per_tor: usize,
    nics_per_host: usize,
    gpus_per_host: usize,
    link_capacity: f64,
    failed_spines: BTreeSet<usize>,
}

impl ClosTopology {
    /// Builds a fabric with one GPU per NIC and no failed spines.
    pub fn new(
        num_spines: usize,
        num_tors: usize,
        hosts_per_tor: usize,
        nics_per_host: usize,
        link_capacity: f64,
    ) -> Result<Self, TopologyError> {
        let positive = |field: &'static str, value: usize| {
            if value == 0 {
                Err(TopologyError::NonPositive { field, value: 0.0 })
            } else {
                Ok(())
            }
        };
        positive("num_spines", num_spines)?;
        positive("num_tors", num_tors)?;
        positive("hosts_per_tor", hosts_per_tor)?;
        positive("nics_per_host", nics_per_host)?;
        if num_tors < 2 {
            return Err(TopologyError::TooFewTors(num_tors));
        }
        if !(link_capacity > 0.0) || !link_capacity.is_finite() {
            return Err(TopologyError::NonPositive { field: "link_capacity", value: link_capacity });
        }
        Ok(ClosTopology {
            num_spines,
            num_tors,
            hosts_per_tor,
            nics_per_host,
            gpus_per_host: nics_per_host,
            link_capacity,
            failed_spines: BTreeSet::new(),
        })
    }

    /// Attaches `gpus_per_host` GPUs to each host's NICs in contiguous blocks.
    pub fn with_gpus_per_host(mut self, gpus_per_host: usize) -> Result<Self, TopologyError> {
        if gpus_per_host == 0 {
            return Err(TopologyError::NonPositive { field: "gpus_per_host", value: 0.0 });
        }
        if gpus_per_host % self.nics_per_host != 0 {
            return Err(TopologyError::GpuNicMismatch { gpus: gpus_per_host, nics: self.nics_per_host });
        }
        self.gpus_per_host = gpus_per_host;
        Ok(self)
    }

    /// Returns a copy with the given spines marked failed (in addition to any already failed).
    pub fn with_failed_spines<I>(&self, spines: I) -> Result<Self, TopologyError>
    where
        I: IntoIterator<Item = usize>,
    {
        let mut failed = self.failed_spines.clone();
        for s in spines {
            if s >= self.num_spines {
                return Err(TopologyError::SpineOutOfRange(s));
            }
            failed.insert(s);
        }
        if failed.len() >= self.num_spines {
            return Err(TopologyError::TooManyFailures {
                requested: failed.len() - self.failed_spines.len(),
                live: self.live_spine_count(),
            });
        }
        Ok(ClosTopology { failed_spines: failed, ..self.clone() })
    }

    /// Fails `k` distinct live spines chosen uniformly at random without replacement.
    pub fn fail_spines(&self, k: usize, seed: u64) -> Result<Self, TopologyError> {
        let live = self.live_spines();
        if k >= live.len() {
            return Err(TopologyError::TooManyFailures { requested: k, live: live.len() });
        }
        if k == 0 {
            return Ok(self.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let picked = index::sample(&mut rng, live.len(), k).into_iter().map(|i| live[i]);
        self.with_failed_spines(picked)
    }

    pub fn num_spines(&self) -> usize {
        self.num_spines
    }

    pub fn num_tors(&self) -> usize {
        self.num_tors
    }

    pub fn hosts_per_tor(&self) -> usize {
        self.hosts_per_tor
    }

    pub fn nics_per_host(&self) -> usize {
        self.nics_per_host
    }

    pub fn gpus_per_host(&self) -> usize {
        self.gpus_per_host
    }

    pub fn link_capacity(&self) -> f64 {
        self.link_capacity
    }

    pub fn failed_spines(&self) -> &BTreeSet<usize> {
        &self.failed_spines
    }

    pub fn is_spine_live(&self, spine: usize) -> bool {
        spine < self.num_spines && !self.failed_spines.contains(&spine)
    }

    /// Live spine indices in ascending order.
    pub fn live_spines(&self) -> Vec<usize> {
        (0..self.num_spines).filter(|s| !self.failed_spines.contains(s)).collect()
    }

    pub fn live_spine_count(&self) -> usize {
        self.num_spines - self.failed_spines.len()
    }

    pub fn num_hosts(&self) -> usize {
        self.num_tors * self.hosts_per_tor
    }

    pub fn num_gpus(&self) -> usize {
        self.num_hosts() * self.gpus_per_host
    }

    pub fn num_nics(&self) -> usize {
        self.num_hosts() * self.nics_per_host
    }

    /// Every GPU endpoint, ordered by (tor, host, gpu).
    pub fn endpoints(&self) -> impl Iterator<Item = Endpoint> + '_ {
        (0..self.num_tors).flat_map(move |tor| {
            (0..self.hosts_per_tor)
                .flat_map(move |host| (0..self.gpus_per_host).map(move |gpu| Endpoint { tor, host, gpu }))
        })
    }

    pub fn contains(&self, ep: &Endpoint) -> bool {
        ep.tor < self.num_tors && ep.host < self.hosts_per_tor && ep.gpu < self.gpus_per_host
    }

    /// NIC serving a GPU.
    pub fn nic_of(&self, ep: &Endpoint) -> usize {
        ep.gpu / (self.gpus_per_host / self.nics_per_host)
    }

    /// Size of the dense link index space (see [`ClosTopology::link_index`]).
    pub fn link_slots(&self) -> usize {
        2 * self.num_nics() + 2 * self.num_tors * self.num_spines
    }

    /// Dense index of a directed link. Slots exist for failed spines too.
    pub fn link_index(&self, link: &Link) -> usize {
        let nic_slot = |tor: usize, host: usize, nic: usize| {
            ((tor * self.hosts_per_tor + host) * self.nics_per_host + nic) * 2
        };
        let base = 2 * self.num_nics();
        match *link {
            Link::NicUp { tor, host, nic } => nic_slot(tor, host, nic),
            Link::NicDown { tor, host, nic } => nic_slot(tor, host, nic) + 1,
            Link::TorUp { tor, spine } => base + 2 * (tor * self.num_spines + spine),
            Link::SpineDown { spine, tor } => base + 2 * (tor * self.num_spines + spine) + 1,
        }
    }

    /// Inverse of [`ClosTopology::link_index`].
    pub fn link_at(&self, index: usize) -> Link {
        let base = 2 * self.num_nics();
        if index < base {
            let nic_global = index / 2;
            let nic = nic_global % self.nics_per_host;
            let host_global = nic_global / self.nics_per_host;
            let host = host_global % self.hosts_per_tor;
            let tor = host_global / self.hosts_per_tor;
            if index % 2 == 0 {
                Link::NicUp { tor, host, nic }
            } else {
                Link::NicDown { tor, host, nic }
            }
        } else {
            let rel = index - base;
            let pair = rel / 2;
            let tor = pair / self.num_spines;
            let spine = pair % self.num_spines;
            if rel % 2 == 0 {
                Link::TorUp { tor, spine }
            } else {
                Link::SpineDown { spine, tor }
            }
        }
    }

    /// All directed links present in the fabric (links of failed spines excluded).
    pub fn links(&self) -> Vec<Link> {
        let mut out = Vec::with_capacity(self.link_slots());
        for tor in 0..self.num_tors {
            for host in 0..self.hosts_per_tor {
                for nic in 0..self.nics_per_host {
                    out.push(Link::NicUp { tor, host, nic });
                    out.push(Link::NicDown { tor, host, nic });
                }
            }
        }
        for tor in 0..self.num_tors {
            for spine in self.live_spines() {
                out.push(Link::TorUp { tor, spine });
                out.push(Link::SpineDown { spine, tor });
            }
        }
        out
    }

    fn check_pair(&self, src: &Endpoint, dst: &Endpoint) -> Result<(), TopologyError> {
        for ep in [src, dst] {
            if !self.contains(ep) {
                return Err(TopologyError::EndpointOutOfRange(*ep));
            }
        }
        if src == dst {
            return Err(TopologyError::SameEndpoint(*src));
        }
        Ok(())
    }

    /// Builds the route of the given kind without checking liveness.
    pub fn route(&self, src: &Endpoint, dst: &Endpoint, kind: RouteKind) -> Route {
        let up = Link::NicUp { tor: src.tor, host: src.host, nic: self.nic_of(src) };
        let down = Link::NicDown { tor: dst.tor, host: dst.host, nic: self.nic_of(dst) };
        let links = match kind {
            RouteKind::IntraHost => Vec::new(),
            RouteKind::IntraTor => vec![up, down],
            RouteKind::Spine(spine) => vec![
                up,
                Link::TorUp { tor: src.tor, spine },
                Link::SpineDown { spine, tor: dst.tor },
                down,
            ],
        };
        Route { kind, links }
    }

    /// Shortest routes between two endpoints, ordered by ascending spine index.
    pub fn enumerate_routes(&self, src: &Endpoint, dst: &Endpoint) -> Result<Vec<Route>, TopologyError> {
        self.check_pair(src, dst)?;
        if src.same_host(dst) {
            return Ok(vec![self.route(src, dst, RouteKind::IntraHost)]);
        }
        if src.tor == dst.tor {
            return Ok(vec![self.route(src, dst, RouteKind::IntraTor)]);
        }
        let routes: Vec<Route> = self
            .live_spines()
            .into_iter()
            .map(|s| self.route(src, dst, RouteKind::Spine(s)))
            .collect();
        if routes.is_empty() {
            return Err(TopologyError::NoLiveSpine { src: src.tor, dst: dst.tor });
        }
        Ok(routes)
    }

    /// Checks that `route` is one of the shortest routes from `src` to `dst`.
    pub fn is_valid_route(&self, src: &Endpoint, dst: &Endpoint, route: &Route) -> bool {
        if self.check_pair(src, dst).is_err() {
            return false;
        }
        let expected_kind = match (src.same_host(dst), src.tor == dst.tor, route.kind) {
            (true, _, RouteKind::IntraHost) => true,
            (false, true, RouteKind::IntraTor) => true,
            (false, false, RouteKind::Spine(s)) => self.is_spine_live(s),
            _ => false,
        };
        expected_kind && *route == self.route(src, dst, route.kind)
    }
}
