use super::{classify, materialize, Demand, PathChoice, RoutingError};
use crate::topology::{ClosTopology, RouteKind};
use crate::workload::CommoditySpec;

/// Largest number of inter-rack commodities leaving or entering a single ToR.
pub fn max_tor_degree(commodities: &[CommoditySpec]) -> usize {
    use std::collections::HashMap;
    let mut out: HashMap<usize, usize> = HashMap::new();
    let mut inn: HashMap<usize, usize> = HashMap::new();
    for c in commodities.iter().filter(|c| c.src.tor != c.dst.tor) {
        *out.entry(c.src.tor).or_default() += 1;
        *inn.entry(c.dst.tor).or_default() += 1;
    }
    out.values().chain(inn.values()).copied().max().unwrap_or(0)
}

/// Proper edge coloring of a bipartite multigraph with exactly max-degree colors.
///
/// Edges are colored one at a time. When the smallest color free at the left
/// end is busy at the right end, the alternating path of the two candidate
/// colors starting at the right end is swapped, which frees the color there.
struct BipartiteColoring {
    colors: usize,
    left: Vec<Vec<Option<usize>>>,
    right: Vec<Vec<Option<usize>>>,
    ends: Vec<(usize, usize)>,
    color: Vec<usize>,
}

impl BipartiteColoring {
    fn new(ends: Vec<(usize, usize)>, vertices: usize) -> Self {
        let mut deg_l = vec![0usize; vertices];
        let mut deg_r = vec![0usize; vertices];
        for &(u, v) in &ends {
            deg_l[u] += 1;
            deg_r[v] += 1;
        }
        let colors = deg_l.iter().chain(&deg_r).copied().max().unwrap_or(0);
        BipartiteColoring {
            colors,
            left: vec![vec![None; colors]; vertices],
            right: vec![vec![None; colors]; vertices],
            color: vec![usize::MAX; ends.len()],
            ends,
        }
    }

    fn free(slots: &[Option<usize>]) -> usize {
        slots.iter().position(Option::is_none).expect("degree bound leaves a free color")
    }

    fn set(&mut self, e: usize, c: usize) {
        let (u, v) = self.ends[e];
        self.left[u][c] = Some(e);
        self.right[v][c] = Some(e);
        self.color[e] = c;
    }

    fn unset(&mut self, e: usize) {
        let (u, v) = self.ends[e];
        let c = self.color[e];
        self.left[u][c] = None;
        self.right[v][c] = None;
    }

    fn run(mut self) -> Vec<usize> {
        for e in 0..self.ends.len() {
            let (u, v) = self.ends[e];
            let a = Self::free(&self.left[u]);
            if self.right[v][a].is_none() {
                self.set(e, a);
                continue;
            }
            let b = Self::free(&self.right[v]);
            if self.left[u][b].is_none() {
                self.set(e, b);
                continue;
            }
            // Walk the a/b path out of v and swap it; it cannot reach u.
            let mut path = Vec::new();
            let mut on_right = true;
            let mut vertex = v;
            let mut want = a;
            loop {
                let slot = if on_right { self.right[vertex][want] } else { self.left[vertex][want] };
                let Some(next) = slot else { break };
                path.push(next);
                let (pu, pv) = self.ends[next];
                vertex = if on_right { pu } else { pv };
                on_right = !on_right;
                want = if want == a { b } else { a };
            }
            for &p in &path {
                self.unset(p);
            }
            for &p in &path {
                let c = self.color[p];
                self.set(p, if c == a { b } else { a });
            }
            debug_assert!(self.right[v][a].is_none() && self.left[u][a].is_none());
            self.set(e, a);
        }
        debug_assert!(self.color.iter().all(|&c| c < self.colors));
        self.color
    }
}

/// Edge-coloring assignment: color the source-ToR/destination-ToR multigraph
/// with Δ colors and send color `k` over the `k mod L`-th live spine.
///
/// Each color occurs at most once per ToR, so a ToR↔spine link carries at most
/// ⌈Δ/L⌉ commodities, which matches the degree lower bound.
pub fn edge_color_assign(commodities: &[CommoditySpec], topo: &ClosTopology) -> Result<PathChoice, RoutingError> {
    let demands = classify(commodities, topo)?;
    let live = topo.live_spines();
    let inter: Vec<(usize, (usize, usize))> = demands
        .iter()
        .enumerate()
        .filter_map(|(i, d)| match *d {
            Demand::Inter { src_tor, dst_tor } => Some((i, (src_tor, dst_tor))),
            Demand::Fixed(_) => None,
        })
        .collect();
    let coloring = BipartiteColoring::new(inter.iter().map(|(_, e)| *e).collect(), topo.num_tors());
    let colors = coloring.run();

    let mut kinds: Vec<RouteKind> = demands
        .iter()
        .map(|d| match d {
            Demand::Fixed(k) => *k,
            Demand::Inter { .. } => RouteKind::IntraHost,
        })
        .collect();
    for ((i, _), c) in inter.iter().zip(colors) {
        kinds[*i] = RouteKind::Spine(live[c % live.len()]);
    }
    Ok(materialize(commodities, &kinds, topo))
}
