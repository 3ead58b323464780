//! Max-min fair rates on fixed routes (progressive filling).
//!
//! This is the fluid equilibrium the simulator assumes congestion control
//! converges to: every flow is limited by some saturated link on its path
//! where no other flow gets a larger share.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::topology::{ClosTopology, Route};
use crate::workload::CommodityId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RatesError {
    #[error("allocation has no network flows")]
    Empty,
}

/// Transmission rate per commodity in bits per second. Flows without network
/// links (same host) get `f64::INFINITY`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RateAllocation {
    pub rates: BTreeMap<CommodityId, f64>,
}

impl RateAllocation {
    pub fn get(&self, id: &CommodityId) -> Option<f64> {
        self.rates.get(id).copied()
    }
}

/// Relative slack under which two fair shares count as the same level.
const LEVEL_TOLERANCE: f64 = 1e-12;

/// Progressive filling over flows given as lists of link ids, all links of
/// capacity `capacity`. Returns one rate per flow, in input order.
pub fn waterfill_links(flows: &[&[usize]], capacity: f64) -> Vec<f64> {
    let mut rates = vec![f64::INFINITY; flows.len()];

    // Compact the link ids that are actually used.
    let mut local: HashMap<usize, usize> = HashMap::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut paths: Vec<Vec<usize>> = Vec::with_capacity(flows.len());
    for (f, links) in flows.iter().enumerate() {
        let mut path = Vec::with_capacity(links.len());
        for l in *links {
            let id = *local.entry(*l).or_insert_with(|| {
                members.push(Vec::new());
                members.len() - 1
            });
            members[id].push(f);
            path.push(id);
        }
        paths.push(path);
    }
    let mut residual = vec![capacity; members.len()];
    let mut unfrozen: Vec<usize> = members.iter().map(Vec::len).collect();
    let mut frozen = vec![false; flows.len()];
    let mut remaining = flows.iter().filter(|l| !l.is_empty()).count();

    while remaining > 0 {
        let share = (0..members.len())
            .filter(|&l| unfrozen[l] > 0)
            .map(|l| residual[l] / unfrozen[l] as f64)
            .fold(f64::INFINITY, f64::min);
        let level = share * (1.0 + LEVEL_TOLERANCE);
        let bottlenecks: Vec<usize> = (0..members.len())
            .filter(|&l| unfrozen[l] > 0 && residual[l] / unfrozen[l] as f64 <= level)
            .collect();
        for l in bottlenecks {
            for i in 0..members[l].len() {
                let f = members[l][i];
                if frozen[f] {
                    continue;
                }
                frozen[f] = true;
                rates[f] = share;
                remaining -= 1;
                for &pl in &paths[f] {
                    residual[pl] = (residual[pl] - share).max(0.0);
                    unfrozen[pl] -= 1;
                }
            }
        }
    }
    rates
}

/// Max-min fair allocation for flows on fixed routes.
///
/// Flows are processed in commodity-id order, so the result does not depend on
/// the order of `flows`.
pub fn waterfill(flows: &[(CommodityId, Route)], topo: &ClosTopology) -> RateAllocation {
    let mut order: Vec<&(CommodityId, Route)> = flows.iter().collect();
    order.sort_by_key(|(id, _)| *id);
    let indexed: Vec<Vec<usize>> = order
        .iter()
        .map(|(_, r)| r.links.iter().map(|l| topo.link_index(l)).collect())
        .collect();
    let slices: Vec<&[usize]> = indexed.iter().map(Vec::as_slice).collect();
    let rates = waterfill_links(&slices, topo.link_capacity());
    RateAllocation { rates: order.iter().map(|(id, _)| *id).zip(rates).collect() }
}

/// Slowest finite rate; same-host flows are ignored.
pub fn min_bandwidth(alloc: &RateAllocation) -> Result<f64, RatesError> {
    alloc
        .rates
        .values()
        .copied()
        .filter(|r| r.is_finite())
        .min_by(f64::total_cmp)
        .ok_or(RatesError::Empty)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::routing::{greedy_assign, max_link_load, LinkScope};
    use crate::topology::{Endpoint, RouteKind};
    use crate::workload::{CommoditySpec, JobId};
    use proptest::prelude::*;

    fn id(i: usize) -> CommodityId {
        CommodityId::standalone(i)
    }

    #[test]
    fn two_flows_share_a_link() {
        let r = waterfill_links(&[&[0], &[0]], 1.0);
        assert_eq!(r, vec![0.5, 0.5]);
    }

    #[test]
    fn lone_flow_gets_line_rate() {
        let topo = ClosTopology::new(32, 64, 4, 8, 100e9).unwrap();
        let route = topo.route(&Endpoint::new(0, 0, 0), &Endpoint::new(5, 1, 3), RouteKind::Spine(7));
        let alloc = waterfill(&[(id(0), route)], &topo);
        assert_eq!(alloc.get(&id(0)), Some(100e9));
    }

    #[test]
    fn three_flow_progressive_filling() {
        // A uses L1 and L2, B uses L2, C uses L3.
        let r = waterfill_links(&[&[1, 2], &[2], &[3]], 1.0);
        assert_eq!(r, vec![0.5, 0.5, 1.0]);
    }

    #[test]
    fn second_level_gets_leftover() {
        // L0 shared by 3 flows, one of which also crosses L1 with a fourth flow.
        let r = waterfill_links(&[&[0], &[0], &[0, 1], &[1]], 1.0);
        let third = 1.0 / 3.0;
        assert!((r[0] - third).abs() < 1e-15);
        assert!((r[2] - third).abs() < 1e-15);
        assert!((r[3] - (1.0 - third)).abs() < 1e-15);
    }

    #[test]
    fn same_host_is_unbounded() {
        let r = waterfill_links(&[&[], &[4]], 2.0);
        assert!(r[0].is_infinite());
        assert_eq!(r[1], 2.0);
        let alloc = RateAllocation { rates: [(id(0), f64::INFINITY)].into_iter().collect() };
        assert_eq!(min_bandwidth(&alloc), Err(RatesError::Empty));
    }

    #[test]
    fn min_bandwidth_picks_slowest() {
        let alloc = RateAllocation { rates: [0.5, 0.5, 1.0, 1.0].into_iter().enumerate().map(|(i, r)| (id(i), r)).collect() };
        assert_eq!(min_bandwidth(&alloc), Ok(0.5));
        assert_eq!(min_bandwidth(&RateAllocation::default()), Err(RatesError::Empty));
    }

    #[test]
    fn greedy_rates_respect_load_bound() {
        let topo = ClosTopology::new(4, 8, 2, 1, 1.0).unwrap();
        let cs: Vec<CommoditySpec> = (0..30)
            .map(|i| CommoditySpec {
                id: id(i),
                job_id: JobId(0),
                src: Endpoint::new(i % 8, i % 2, 0),
                dst: Endpoint::new((i * 5 + 3) % 8, (i / 2) % 2, 0),
                volume: 1,
            })
            .filter(|c| c.src != c.dst)
            .collect();
        let choice = greedy_assign(&cs, &topo).unwrap();
        let k = max_link_load(&choice, &topo, LinkScope::AllLinks);
        let flows: Vec<_> = choice.assignment.into_iter().collect();
        let alloc = waterfill(&flows, &topo);
        assert!(min_bandwidth(&alloc).unwrap() >= 1.0 / k as f64 - 1e-12);
    }

    fn random_flows() -> impl Strategy<Value = Vec<Vec<usize>>> {
        prop::collection::vec(prop::collection::btree_set(0usize..12, 1..4), 1..25)
            .prop_map(|v| v.into_iter().map(|s| s.into_iter().collect()).collect())
    }

    proptest! {
        #[test]
        fn feasible_and_max_min(flows in random_flows(), cap in 0.5f64..10.0) {
            let slices: Vec<&[usize]> = flows.iter().map(Vec::as_slice).collect();
            let rates = waterfill_links(&slices, cap);
            let mut used = [0.0f64; 12];
            for (f, links) in flows.iter().enumerate() {
                prop_assert!(rates[f] > 0.0);
                for &l in links {
                    used[l] += rates[f];
                }
            }
            for u in used {
                prop_assert!(u <= cap * (1.0 + 1e-9));
            }
            // every flow has a saturated link where it is among the largest
            for (f, links) in flows.iter().enumerate() {
                let bottlenecked = links.iter().any(|&l| {
                    let saturated = used[l] >= cap * (1.0 - 1e-9);
                    let largest = flows.iter().enumerate()
                        .filter(|(_, p)| p.contains(&l))
                        .all(|(g, _)| rates[g] <= rates[f] * (1.0 + 1e-9));
                    saturated && largest
                });
                prop_assert!(bottlenecked);
            }
        }

        #[test]
        fn order_invariant(flows in random_flows(), seed in 0u64..1000) {
            let topo = ClosTopology::new(3, 4, 1, 1, 1.0).unwrap();
            let routes: Vec<(CommodityId, Route)> = flows.iter().enumerate().map(|(i, links)| {
                (id(i), Route { kind: RouteKind::IntraTor, links: links.iter().map(|&l| topo.link_at(l)).collect() })
            }).collect();
            let mut shuffled = routes.clone();
            let n = shuffled.len();
            for i in 0..n {
                shuffled.swap(i, (seed as usize * 7 + i * 13) % n);
            }
            prop_assert_eq!(waterfill(&routes, &topo), waterfill(&shuffled, &topo));
        }

        #[test]
        fn uniform_bottleneck(n in 1usize..50, cap in 0.1f64..100.0) {
            let links = vec![[3usize]; n];
            let slices: Vec<&[usize]> = links.iter().map(|l| l.as_slice()).collect();
            for r in waterfill_links(&slices, cap) {
                prop_assert!((r - cap / n as f64).abs() <= 1e-12 * cap);
            }
        }
    }
}
