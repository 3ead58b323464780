use super::{classify, greedy_assign, materialize, max_link_load, Demand, LinkScope, PathChoice, RoutingError};
use crate::topology::{ClosTopology, RouteKind};
use crate::workload::CommoditySpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExactLimits {
    /// Largest number of inter-rack commodities the solver accepts.
    pub max_commodities: usize,
}

impl Default for ExactLimits {
    fn default() -> Self {
        ExactLimits { max_commodities: 16 }
    }
}

struct Search<'a> {
    edges: &'a [(usize, usize)],
    live: usize,
    up: Vec<u32>,
    down: Vec<u32>,
    choice: Vec<usize>,
    lower_bound: u32,
    /// Value any accepted solution must not exceed while no incumbent exists.
    ceiling: u32,
    incumbent: Option<(u32, Vec<usize>)>,
}

impl Search<'_> {
    fn admissible(&self, value: u32) -> bool {
        match &self.incumbent {
            Some((best, _)) => value < *best,
            None => value <= self.ceiling,
        }
    }

    fn solved(&self) -> bool {
        self.incumbent.as_ref().is_some_and(|(v, _)| *v == self.lower_bound)
    }

    /// Depth-first in lexicographic order of spine positions. Position `p` may
    /// only be used once positions `0..p` have appeared, since live spines are
    /// interchangeable; the first canonical optimum is the lexicographically
    /// smallest optimum overall.
    fn dfs(&mut self, k: usize, current: u32, highest_used: Option<usize>) {
        if k == self.edges.len() {
            if self.admissible(current) {
                self.incumbent = Some((current, self.choice.clone()));
            }
            return;
        }
        let (src, dst) = self.edges[k];
        let limit = highest_used.map_or(1, |h| h + 2).min(self.live);
        for p in 0..limit {
            let ui = src * self.live + p;
            let di = dst * self.live + p;
            let value = current.max(self.up[ui] + 1).max(self.down[di] + 1);
            if !self.admissible(value) {
                continue;
            }
            self.up[ui] += 1;
            self.down[di] += 1;
            self.choice[k] = p;
            self.dfs(k + 1, value, Some(highest_used.map_or(p, |h| h.max(p))));
            self.up[ui] -= 1;
            self.down[di] -= 1;
            if self.solved() {
                return;
            }
        }
    }
}

/// Branch-and-bound minimum of the maximum ToR↔spine link load.
///
/// The search is seeded with greedy's value as a ceiling, prunes any partial
/// assignment that cannot beat the incumbent, and stops as soon as it meets
/// the degree bound ⌈max ToR degree / live spines⌉. Ties resolve to the
/// lexicographically smallest spine vector.
pub fn exact_assign(commodities: &[CommoditySpec], topo: &ClosTopology, limits: &ExactLimits) -> Result<PathChoice, RoutingError> {
    let demands = classify(commodities, topo)?;
    let edges: Vec<(usize, usize)> = demands
        .iter()
        .filter_map(|d| match *d {
            Demand::Inter { src_tor, dst_tor } => Some((src_tor, dst_tor)),
            Demand::Fixed(_) => None,
        })
        .collect();
    if edges.len() > limits.max_commodities {
        return Err(RoutingError::TooLarge { count: edges.len(), limit: limits.max_commodities });
    }
    let live = topo.live_spines();
    let tors = topo.num_tors();

    let mut degree = vec![0u32; 2 * tors];
    for &(s, d) in &edges {
        degree[s] += 1;
        degree[tors + d] += 1;
    }
    let max_degree = degree.iter().copied().max().unwrap_or(0);
    let lower_bound = max_degree.div_ceil(live.len() as u32);
    let ceiling = max_link_load(&greedy_assign(commodities, topo)?, topo, LinkScope::SpineLinksOnly);

    let mut search = Search {
        edges: &edges,
        live: live.len(),
        up: vec![0; tors * live.len()],
        down: vec![0; tors * live.len()],
        choice: vec![0; edges.len()],
        lower_bound,
        ceiling,
        incumbent: None,
    };
    search.dfs(0, 0, None);
    let (_, positions) = search.incumbent.expect("greedy's value is always attainable");

    let mut positions = positions.into_iter();
    let kinds: Vec<RouteKind> = demands
        .iter()
        .map(|d| match d {
            Demand::Fixed(k) => *k,
            Demand::Inter { .. } => RouteKind::Spine(live[positions.next().unwrap()]),
        })
        .collect();
    Ok(materialize(commodities, &kinds, topo))
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::*;
    use crate::workload::CommodityId;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Plain enumeration of every spine vector; independent of the search above.
    fn brute_force(edges: &[(usize, usize)], tors: usize, spines: usize) -> (u32, Vec<usize>) {
        let mut best: Option<(u32, Vec<usize>)> = None;
        let total = spines.pow(edges.len() as u32);
        for code in 0..total {
            let mut v = vec![0; edges.len()];
            let mut x = code;
            for slot in v.iter_mut().rev() {
                *slot = x % spines;
                x /= spines;
            }
            let mut up = vec![0u32; tors * spines];
            let mut down = vec![0u32; tors * spines];
            for (&(s, d), &p) in edges.iter().zip(&v) {
                up[s * spines + p] += 1;
                down[d * spines + p] += 1;
            }
            let load = up.iter().chain(&down).copied().max().unwrap_or(0);
            // codes run in lexicographic order, so strict improvement keeps the smallest vector
            if best.as_ref().is_none_or(|(b, _)| load < *b) {
                best = Some((load, v));
            }
        }
        best.unwrap()
    }

    #[test]
    fn two_spine_example_optimum() {
        let topo = two_spine_example();
        let cs = demand_d();
        let c = exact_assign(&cs, &topo, &ExactLimits::default()).unwrap();
        assert_eq!(max_link_load(&c, &topo, LinkScope::SpineLinksOnly), 1);
        let spines: Vec<_> = cs.iter().map(|x| c.spine_of(&x.id).unwrap()).collect();
        assert_eq!(spines, vec![0, 0, 1, 1]);
    }

    #[test]
    fn single_commodity() {
        let topo = two_spine_example();
        let c = exact_assign(&[unit(0, 1, 3)], &topo, &ExactLimits::default()).unwrap();
        assert_eq!(c.spine_of(&CommodityId::standalone(0)), Some(0));
        assert_eq!(max_link_load(&c, &topo, LinkScope::SpineLinksOnly), 1);
    }

    #[test]
    fn refuses_large_instances() {
        let topo = ClosTopology::new(2, 8, 1, 1, 1.0).unwrap();
        let cs: Vec<_> = (0..17).map(|i| unit(i, i % 8, (i + 1) % 8)).collect();
        assert_eq!(
            exact_assign(&cs, &topo, &ExactLimits::default()),
            Err(RoutingError::TooLarge { count: 17, limit: 16 })
        );
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..60 {
            let tors = rng.gen_range(2..=6);
            let spines = rng.gen_range(1..=3);
            let topo = ClosTopology::new(spines, tors, 1, 1, 1.0).unwrap();
            let cs: Vec<_> = (0..10)
                .map(|i| {
                    let s = rng.gen_range(0..tors);
                    let d = (s + rng.gen_range(1..tors)) % tors;
                    unit(i, s, d)
                })
                .collect();
            let edges: Vec<_> = cs.iter().map(|c| (c.src.tor, c.dst.tor)).collect();
            let (opt, vector) = brute_force(&edges, tors, spines);
            let c = exact_assign(&cs, &topo, &ExactLimits::default()).unwrap();
            assert_eq!(max_link_load(&c, &topo, LinkScope::SpineLinksOnly), opt);
            let got: Vec<_> = cs.iter().map(|x| c.spine_of(&x.id).unwrap()).collect();
            assert_eq!(got, vector);
        }
    }
}
