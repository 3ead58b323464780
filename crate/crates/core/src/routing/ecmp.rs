use super::{classify, materialize, Demand, PathChoice, RoutingError};
use crate::topology::{ClosTopology, RouteKind};
use crate::workload::{CommodityId, CommoditySpec};

fn mix64(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Live spine a flow hashes onto.
pub fn ecmp_spine(id: &CommodityId, seed: u64, live: &[usize]) -> usize {
    let h = mix64(mix64(id.key()) ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    live[(h % live.len() as u64) as usize]
}

/// Per-flow hashing over live spines, oblivious to load.
pub fn ecmp_assign(commodities: &[CommoditySpec], topo: &ClosTopology, seed: u64) -> Result<PathChoice, RoutingError> {
    let demands = classify(commodities, topo)?;
    let live = topo.live_spines();
    let kinds: Vec<RouteKind> = commodities
        .iter()
        .zip(&demands)
        .map(|(c, d)| match d {
            Demand::Fixed(k) => *k,
            Demand::Inter { .. } => RouteKind::Spine(ecmp_spine(&c.id, seed, &live)),
        })
        .collect();
    Ok(materialize(commodities, &kinds, topo))
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::super::{max_link_load, LinkScope};
    use super::*;
    use crate::topology::Endpoint;
    use crate::workload::JobId;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn deterministic_per_seed() {
        let topo = ClosTopology::new(8, 8, 1, 1, 1.0).unwrap();
        let cs: Vec<_> = (0..50).map(|i| unit(i, i % 8, (i + 3) % 8)).collect();
        assert_eq!(ecmp_assign(&cs, &topo, 5).unwrap(), ecmp_assign(&cs, &topo, 5).unwrap());
        assert_ne!(ecmp_assign(&cs, &topo, 5).unwrap(), ecmp_assign(&cs, &topo, 6).unwrap());
    }

    #[test]
    fn collision_on_example() {
        let topo = two_spine_example();
        let cs = demand_d();
        let seed = (0..1000u64)
            .find(|&s| {
                let c = ecmp_assign(&cs, &topo, s).unwrap();
                c.spine_of(&cs[1].id) == Some(0) && c.spine_of(&cs[2].id) == Some(0)
            })
            .expect("some seed collides");
        let c = ecmp_assign(&cs, &topo, seed).unwrap();
        let map = super::super::LoadMap::from_choice(&c, &topo);
        assert_eq!(map.count(&crate::topology::Link::TorUp { tor: 1, spine: 0 }, &topo), 2);
        assert_eq!(max_link_load(&c, &topo, LinkScope::SpineLinksOnly), 2);
    }

    #[test]
    fn single_live_spine_takes_everything() {
        let topo = ClosTopology::new(4, 4, 1, 1, 1.0).unwrap().with_failed_spines([0, 1, 3]).unwrap();
        let cs: Vec<_> = (0..20).map(|i| unit(i, i % 4, (i + 1) % 4)).collect();
        let c = ecmp_assign(&cs, &topo, 9).unwrap();
        assert!(cs.iter().all(|x| c.spine_of(&x.id) == Some(2)));
    }

    #[test]
    fn spreads_uniformly() {
        let topo = ClosTopology::new(32, 64, 4, 8, 100e9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cs: Vec<_> = (0..10_000)
            .map(|i| {
                let s = rng.gen_range(0..64);
                let d = (s + rng.gen_range(1..64)) % 64;
                CommoditySpec {
                    id: crate::workload::CommodityId { job: 1, iteration: 0, ring: (i / 8) as u32, edge: (i % 8) as u32 },
                    job_id: JobId(1),
                    src: Endpoint::new(s, 0, 0),
                    dst: Endpoint::new(d, 0, 0),
                    volume: 1,
                }
            })
            .collect();
        let c = ecmp_assign(&cs, &topo, 42).unwrap();
        let mut per_spine = [0usize; 32];
        for x in &cs {
            per_spine[c.spine_of(&x.id).unwrap()] += 1;
        }
        let mean = 10_000.0 / 32.0;
        let sd = (10_000.0 * (1.0 / 32.0) * (31.0 / 32.0f64)).sqrt();
        for n in per_spine {
            assert!((n as f64 - mean).abs() <= 5.0 * sd, "{n} outside band");
        }
    }
}
