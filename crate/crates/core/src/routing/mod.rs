//! Path assignment schemes for commodities on a 2-layer Clos fabric.
//!
//! Every scheme maps each commodity to exactly one shortest route. Only the
//! spine choice of inter-rack commodities is a decision; intra-host and
//! intra-rack commodities have a single route. Congestion is the number of
//! commodities crossing a directed link, so every scheme here optimizes or
//! samples over per-link commodity counts, not bytes.

mod annealing;
mod ecmp;
mod edge_coloring;
mod exact;
mod greedy;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{ClosTopology, Link, Route, RouteKind, TopologyError};
use crate::workload::{CommodityId, CommoditySpec};

pub use annealing::{anneal_assign, AnnealSchedule};
pub use ecmp::{ecmp_assign, ecmp_spine};
pub use edge_coloring::{edge_color_assign, max_tor_degree};
pub use exact::{exact_assign, ExactLimits};
pub use greedy::{decompose_components, greedy_assign, greedy_assign_parallel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoutingError {
    #[error("commodity {id}: {source}")]
    Unroutable {
        id: CommodityId,
        #[source]
        source: TopologyError,
    },
    #[error("commodity {0} appears twice")]
    DuplicateCommodity(CommodityId),
    #[error("exact solver limited to {limit} inter-rack commodities, instance has {count}")]
    TooLarge { count: usize, limit: usize },
    #[error("invalid annealing schedule: {0}")]
    BadSchedule(&'static str),
    #[error("unknown routing scheme `{0}` (expected greedy, ecmp, edge_coloring, annealing or exact)")]
    UnknownScheme(String),
}

/// Route selected for each commodity.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PathChoice {
    pub assignment: BTreeMap<CommodityId, Route>,
}

impl PathChoice {
    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn get(&self, id: &CommodityId) -> Option<&Route> {
        self.assignment.get(id)
    }

    pub fn spine_of(&self, id: &CommodityId) -> Option<usize> {
        self.get(id).and_then(|r| r.kind.spine())
    }

    /// Merges another assignment in; ids must not overlap.
    pub fn extend(&mut self, other: PathChoice) {
        self.assignment.extend(other.assignment);
    }

    /// Checks completeness and that every route is a shortest route of its commodity.
    pub fn is_valid_for(&self, commodities: &[CommoditySpec], topo: &ClosTopology) -> bool {
        self.assignment.len() == commodities.len()
            && commodities.iter().all(|c| {
                self.assignment
                    .get(&c.id)
                    .is_some_and(|r| topo.is_valid_route(&c.src, &c.dst, r))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkScope {
    /// ToR→spine and spine→ToR links only.
    SpineLinksOnly,
    AllLinks,
}

/// Number of assigned commodities traversing each directed link.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadMap {
    counts: Vec<u32>,
}

impl LoadMap {
    pub fn new(topo: &ClosTopology) -> Self {
        LoadMap { counts: vec![0; topo.link_slots()] }
    }

    pub fn from_choice(choice: &PathChoice, topo: &ClosTopology) -> Self {
        Self::from_routes(choice.assignment.values(), topo)
    }

    pub fn from_routes<'a, I>(routes: I, topo: &ClosTopology) -> Self
    where
        I: IntoIterator<Item = &'a Route>,
    {
        let mut map = LoadMap::new(topo);
        for r in routes {
            map.add(r, topo);
        }
        map
    }

    pub fn add(&mut self, route: &Route, topo: &ClosTopology) {
        for l in &route.links {
            self.counts[topo.link_index(l)] += 1;
        }
    }

    pub fn count(&self, link: &Link, topo: &ClosTopology) -> u32 {
        self.counts[topo.link_index(link)]
    }

    /// Nonzero entries, ordered by link index.
    pub fn iter<'a>(&'a self, topo: &'a ClosTopology) -> impl Iterator<Item = (Link, u32)> + 'a {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, c)| **c > 0)
            .map(move |(i, c)| (topo.link_at(i), *c))
    }

    pub fn max(&self, topo: &ClosTopology, scope: LinkScope) -> u32 {
        self.iter(topo)
            .filter(|(l, _)| scope == LinkScope::AllLinks || l.is_spine_link())
            .map(|(_, c)| c)
            .max()
            .unwrap_or(0)
    }
}

/// Maximum number of commodities on any link in `scope`.
pub fn max_link_load(choice: &PathChoice, topo: &ClosTopology, scope: LinkScope) -> u32 {
    LoadMap::from_choice(choice, topo).max(topo, scope)
}

/// Which routing scheme to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Greedy,
    Ecmp,
    EdgeColoring,
    Annealing,
    Exact,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [Scheme::Greedy, Scheme::Ecmp, Scheme::EdgeColoring, Scheme::Annealing, Scheme::Exact];

    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Greedy => "greedy",
            Scheme::Ecmp => "ecmp",
            Scheme::EdgeColoring => "edge_coloring",
            Scheme::Annealing => "annealing",
            Scheme::Exact => "exact",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = RoutingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| RoutingError::UnknownScheme(s.to_string()))
    }
}

/// Knobs for the seeded and bounded schemes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SchemeParams {
    pub seed: u64,
    /// `None` scales the move budget with the instance (100 moves per commodity).
    pub anneal: Option<AnnealSchedule>,
    pub exact: ExactLimits,
}

/// Runs the named scheme.
pub fn assign(
    scheme: Scheme,
    commodities: &[CommoditySpec],
    topo: &ClosTopology,
    params: &SchemeParams,
) -> Result<PathChoice, RoutingError> {
    match scheme {
        Scheme::Greedy => greedy_assign(commodities, topo),
        Scheme::Ecmp => ecmp_assign(commodities, topo, params.seed),
        Scheme::EdgeColoring => edge_color_assign(commodities, topo),
        Scheme::Annealing => {
            let schedule = params.anneal.unwrap_or_else(|| AnnealSchedule::for_instance(commodities.len()));
            anneal_assign(commodities, topo, &schedule, params.seed)
        }
        Scheme::Exact => exact_assign(commodities, topo, &params.exact),
    }
}

/// Classification of a commodity once its endpoints are checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Demand {
    Fixed(RouteKind),
    Inter { src_tor: usize, dst_tor: usize },
}

/// Validates the instance and classifies each commodity.
pub(crate) fn classify(commodities: &[CommoditySpec], topo: &ClosTopology) -> Result<Vec<Demand>, RoutingError> {
    let mut ids = std::collections::HashSet::with_capacity(commodities.len());
    let live = topo.live_spine_count();
    commodities
        .iter()
        .map(|c| {
            if !ids.insert(c.id) {
                return Err(RoutingError::DuplicateCommodity(c.id));
            }
            let unroutable = |source| RoutingError::Unroutable { id: c.id, source };
            for ep in [&c.src, &c.dst] {
                if !topo.contains(ep) {
                    return Err(unroutable(TopologyError::EndpointOutOfRange(*ep)));
                }
            }
            if c.src == c.dst {
                return Err(unroutable(TopologyError::SameEndpoint(c.src)));
            }
            Ok(if c.src.same_host(&c.dst) {
                Demand::Fixed(RouteKind::IntraHost)
            } else if c.src.tor == c.dst.tor {
                Demand::Fixed(RouteKind::IntraTor)
            } else if live == 0 {
                return Err(unroutable(TopologyError::NoLiveSpine { src: c.src.tor, dst: c.dst.tor }));
            } else {
                Demand::Inter { src_tor: c.src.tor, dst_tor: c.dst.tor }
            })
        })
        .collect()
}

/// Builds a [`PathChoice`] from per-commodity route kinds.
pub(crate) fn materialize(commodities: &[CommoditySpec], kinds: &[RouteKind], topo: &ClosTopology) -> PathChoice {
    PathChoice {
        assignment: commodities
            .iter()
            .zip(kinds)
            .map(|(c, k)| (c.id, topo.route(&c.src, &c.dst, *k)))
            .collect(),
    }
}

/// Per-(ToR, spine) up and down commodity counts; the only loads a spine choice affects.
#[derive(Debug, Clone)]
pub(crate) struct SpineLoads {
    spines: usize,
    up: Vec<u32>,
    down: Vec<u32>,
}

impl SpineLoads {
    pub(crate) fn new(topo: &ClosTopology) -> Self {
        let n = topo.num_tors() * topo.num_spines();
        SpineLoads { spines: topo.num_spines(), up: vec![0; n], down: vec![0; n] }
    }

    #[inline]
    pub(crate) fn path_load(&self, src_tor: usize, dst_tor: usize, spine: usize) -> u32 {
        self.up[src_tor * self.spines + spine].max(self.down[dst_tor * self.spines + spine])
    }

    #[inline]
    pub(crate) fn add(&mut self, src_tor: usize, dst_tor: usize, spine: usize) {
        self.up[src_tor * self.spines + spine] += 1;
        self.down[dst_tor * self.spines + spine] += 1;
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use crate::topology::{ClosTopology, Endpoint};
    use crate::workload::{CommodityId, CommoditySpec, JobId};

    /// Unit commodity between host 0 of two ToRs.
    pub fn unit(index: usize, src_tor: usize, dst_tor: usize) -> CommoditySpec {
        CommoditySpec {
            id: CommodityId::standalone(index),
            job_id: JobId(0),
            src: Endpoint::new(src_tor, 0, 0),
            dst: Endpoint::new(dst_tor, 0, 0),
            volume: 1,
        }
    }

    /// The 2-spine, 4-ToR example fabric with unit capacities.
    pub fn two_spine_example() -> ClosTopology {
        ClosTopology::new(2, 4, 2, 1, 1.0).unwrap()
    }

    /// Demand matrix D: t1→t2, t2→t1, t2→t3, t3→t1 (0-based ToRs).
    pub fn demand_d() -> Vec<CommoditySpec> {
        vec![unit(0, 0, 1), unit(1, 1, 0), unit(2, 1, 2), unit(3, 2, 0)]
    }
}
