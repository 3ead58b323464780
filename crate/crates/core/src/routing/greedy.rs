use std::collections::HashMap;

use rayon::prelude::*;

use super::{classify, materialize, Demand, PathChoice, RoutingError, SpineLoads};
use crate::topology::{ClosTopology, RouteKind};
use crate::workload::CommoditySpec;

/// Least-congested-path greedy.
///
/// Commodities are processed in the given order. Each starts on the live spine
/// with the lowest index and moves to a later spine only if that spine's path
/// is strictly less loaded, so ties keep the lower index. Path load is the
/// larger of the two ToR↔spine link counts.
pub fn greedy_assign(commodities: &[CommoditySpec], topo: &ClosTopology) -> Result<PathChoice, RoutingError> {
    let demands = classify(commodities, topo)?;
    let live = topo.live_spines();
    let mut loads = SpineLoads::new(topo);
    let kinds: Vec<RouteKind> = demands.iter().map(|d| place(d, &live, &mut loads)).collect();
    Ok(materialize(commodities, &kinds, topo))
}

#[inline]
fn place(demand: &Demand, live: &[usize], loads: &mut SpineLoads) -> RouteKind {
    match *demand {
        Demand::Fixed(kind) => kind,
        Demand::Inter { src_tor, dst_tor } => {
            let mut best = live[0];
            let mut best_load = loads.path_load(src_tor, dst_tor, best);
            for &s in &live[1..] {
                if best_load == 0 {
                    break;
                }
                let l = loads.path_load(src_tor, dst_tor, s);
                if l < best_load {
                    best = s;
                    best_load = l;
                }
            }
            loads.add(src_tor, dst_tor, best);
            RouteKind::Spine(best)
        }
    }
}

/// Partitions commodities into the connected components of the graph where
/// two commodities are adjacent iff they share a source ToR or a destination
/// ToR. Intra-rack and intra-host commodities are singletons. Components are
/// ordered by their first member and keep input order internally.
pub fn decompose_components(commodities: &[CommoditySpec]) -> Vec<Vec<CommoditySpec>> {
    component_indices(commodities)
        .into_iter()
        .map(|idx| idx.into_iter().map(|i| commodities[i].clone()).collect())
        .collect()
}

fn component_indices(commodities: &[CommoditySpec]) -> Vec<Vec<usize>> {
    // Union-find over (role, tor) keys: role 0 = source side, 1 = destination side.
    let mut key_of: HashMap<(u8, usize), usize> = HashMap::new();
    let mut parent: Vec<usize> = Vec::new();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut key = |k: (u8, usize), parent: &mut Vec<usize>| {
        *key_of.entry(k).or_insert_with(|| {
            parent.push(parent.len());
            parent.len() - 1
        })
    };
    let mut anchors = Vec::with_capacity(commodities.len());
    for c in commodities {
        if c.src.tor == c.dst.tor {
            anchors.push(None);
            continue;
        }
        let a = key((0, c.src.tor), &mut parent);
        let b = key((1, c.dst.tor), &mut parent);
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
        anchors.push(Some(a));
    }

    let mut slot_of_root: HashMap<usize, usize> = HashMap::new();
    let mut parts: Vec<Vec<usize>> = Vec::new();
    for (i, anchor) in anchors.into_iter().enumerate() {
        match anchor {
            None => parts.push(vec![i]),
            Some(a) => {
                let root = find(&mut parent, a);
                let slot = *slot_of_root.entry(root).or_insert_with(|| {
                    parts.push(Vec::new());
                    parts.len() - 1
                });
                parts[slot].push(i);
            }
        }
    }
    parts
}

/// Greedy run independently on each connected component, components in parallel.
///
/// Components touch disjoint ToR↔spine links, so the result equals
/// [`greedy_assign`] on the full list.
pub fn greedy_assign_parallel(commodities: &[CommoditySpec], topo: &ClosTopology) -> Result<PathChoice, RoutingError> {
    let demands = classify(commodities, topo)?;
    let live = topo.live_spines();
    let parts = component_indices(commodities);

    // One load table per worker bucket; components in a bucket never share links.
    let buckets = rayon::current_num_threads().max(1).min(parts.len().max(1));
    let placed: Vec<Vec<(usize, RouteKind)>> = (0..buckets)
        .into_par_iter()
        .map(|b| {
            let mut loads = SpineLoads::new(topo);
            let mut out = Vec::new();
            for part in parts.iter().skip(b).step_by(buckets) {
                for &i in part {
                    out.push((i, place(&demands[i], &live, &mut loads)));
                }
            }
            out
        })
        .collect();

    let mut kinds = vec![RouteKind::IntraHost; commodities.len()];
    for (i, k) in placed.into_iter().flatten() {
        kinds[i] = k;
    }
    Ok(materialize(commodities, &kinds, topo))
}
