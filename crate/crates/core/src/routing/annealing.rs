use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{classify, ecmp_spine, materialize, Demand, PathChoice, RoutingError};
use crate::topology::{ClosTopology, RouteKind};
use crate::workload::CommoditySpec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealSchedule {
    pub initial_temp: f64,
    pub cooling_factor: f64,
    pub moves: usize,
}

impl AnnealSchedule {
    /// Default schedule: T0 = 1, cooling 0.999, 100 moves per commodity.
    pub fn for_instance(commodities: usize) -> Self {
        AnnealSchedule { initial_temp: 1.0, cooling_factor: 0.999, moves: 100 * commodities }
    }

    fn validate(&self) -> Result<(), RoutingError> {
        if !(self.initial_temp > 0.0) || !self.initial_temp.is_finite() {
            return Err(RoutingError::BadSchedule("initial_temp must be positive"));
        }
        if !(self.cooling_factor > 0.0 && self.cooling_factor < 1.0) {
            return Err(RoutingError::BadSchedule("cooling_factor must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Lexicographic energy: (max ToR↔spine load, sum of squared loads).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Energy(u32, u64);

/// ToR↔spine loads with a histogram so the maximum is maintained in O(1) amortized.
struct LoadState {
    spines: usize,
    loads: Vec<u32>,
    histogram: Vec<u32>,
    max: u32,
    sum_sq: u64,
}

impl LoadState {
    fn new(tors: usize, spines: usize, capacity_hint: usize) -> Self {
        let mut histogram = vec![0; capacity_hint + 2];
        histogram[0] = (2 * tors * spines) as u32;
        LoadState { spines, loads: vec![0; 2 * tors * spines], histogram, max: 0, sum_sq: 0 }
    }

    fn bump(&mut self, idx: usize, up: bool) {
        let old = self.loads[idx];
        let new = if up { old + 1 } else { old - 1 };
        self.loads[idx] = new;
        self.histogram[old as usize] -= 1;
        self.histogram[new as usize] += 1;
        self.sum_sq = self.sum_sq + (new as u64 * new as u64) - (old as u64 * old as u64);
        if new > self.max {
            self.max = new;
        }
        while self.max > 0 && self.histogram[self.max as usize] == 0 {
            self.max -= 1;
        }
    }

    fn apply(&mut self, src: usize, dst: usize, spine: usize, up: bool) {
        self.bump(2 * (src * self.spines + spine), up);
        self.bump(2 * (dst * self.spines + spine) + 1, up);
    }

    fn energy(&self) -> Energy {
        Energy(self.max, self.sum_sq)
    }
}

/// Simulated annealing over spine choices, started from the ECMP assignment.
///
/// Each move re-routes one random inter-rack commodity to a different random
/// live spine. Improvements are always kept; a worse state is accepted with
/// probability `exp(-Δ / T)`, where Δ compares maximum load first and the
/// squared-load sum second. The best state seen is returned.
pub fn anneal_assign(
    commodities: &[CommoditySpec],
    topo: &ClosTopology,
    schedule: &AnnealSchedule,
    seed: u64,
) -> Result<PathChoice, RoutingError> {
    schedule.validate()?;
    let demands = classify(commodities, topo)?;
    let live = topo.live_spines();
    let mut kinds: Vec<RouteKind> = Vec::with_capacity(commodities.len());
    let mut inter: Vec<(usize, usize, usize)> = Vec::new();
    for (c, d) in commodities.iter().zip(&demands) {
        match *d {
            Demand::Fixed(k) => kinds.push(k),
            Demand::Inter { src_tor, dst_tor } => {
                let s = ecmp_spine(&c.id, seed, &live);
                inter.push((kinds.len(), src_tor, dst_tor));
                kinds.push(RouteKind::Spine(s));
            }
        }
    }
    if inter.is_empty() || live.len() < 2 {
        return Ok(materialize(commodities, &kinds, topo));
    }

    let mut spine_of: Vec<usize> = inter.iter().map(|&(i, _, _)| kinds[i].spine().unwrap()).collect();
    let mut state = LoadState::new(topo.num_tors(), topo.num_spines(), inter.len());
    for (k, &(_, src, dst)) in inter.iter().enumerate() {
        state.apply(src, dst, spine_of[k], true);
    }
    let mut best = spine_of.clone();
    let mut best_energy = state.energy();

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a5a_a5a5_0f0f_f0f0);
    let mut temp = schedule.initial_temp;
    for _ in 0..schedule.moves {
        let k = rng.gen_range(0..inter.len());
        let (_, src, dst) = inter[k];
        let old = spine_of[k];
        let mut pick = rng.gen_range(0..live.len() - 1);
        if live[pick] == old {
            pick = live.len() - 1;
        }
        let new = live[pick];

        let before = state.energy();
        state.apply(src, dst, old, false);
        state.apply(src, dst, new, true);
        let after = state.energy();

        let accept = if after <= before {
            true
        } else {
            let delta = if after.0 != before.0 {
                (after.0 - before.0) as f64
            } else {
                (after.1 - before.1) as f64
            };
            rng.gen::<f64>() < (-delta / temp).exp()
        };
        if accept {
            spine_of[k] = new;
            if after < best_energy {
                best_energy = after;
                best.copy_from_slice(&spine_of);
            }
        } else {
            state.apply(src, dst, new, false);
            state.apply(src, dst, old, true);
        }
        temp *= schedule.cooling_factor;
    }

    for (k, &(i, _, _)) in inter.iter().enumerate() {
        kinds[i] = RouteKind::Spine(best[k]);
    }
    Ok(materialize(commodities, &kinds, topo))
}
