use std::time::Instant;

use rand::seq::IteratorRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::routing::{assign, RoutingError, Scheme, SchemeParams};
use crate::topology::{ClosTopology, Endpoint};
use crate::workload::{CommodityId, CommoditySpec, JobId};

const REPETITIONS: usize = 5;

/// `n` unit commodities between uniformly drawn endpoints on different ToRs.
///
/// Sources and destinations are drawn independently, so NICs may repeat.
pub fn random_commodities(topo: &ClosTopology, n: usize, seed: u64) -> Vec<CommoditySpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let endpoint = |rng: &mut ChaCha8Rng, tor: usize| {
        Endpoint::new(tor, rng.gen_range(0..topo.hosts_per_tor()), rng.gen_range(0..topo.gpus_per_host()))
    };
    (0..n)
        .map(|i| {
            let src_tor = rng.gen_range(0..topo.num_tors());
            let dst_tor = (0..topo.num_tors()).filter(|&t| t != src_tor).choose(&mut rng).unwrap_or(src_tor);
            CommoditySpec {
                id: CommodityId::standalone(i),
                job_id: JobId(0),
                src: endpoint(&mut rng, src_tor),
                dst: endpoint(&mut rng, dst_tor),
                volume: 1,
            }
        })
        .collect()
}

/// Median wall-clock seconds of `scheme` on a random instance of each size.
pub fn measure_scheme_runtime(
    scheme: Scheme,
    counts: &[usize],
    topo: &ClosTopology,
    seed: u64,
) -> Result<Vec<(usize, f64)>, RoutingError> {
    let params = SchemeParams { seed, ..SchemeParams::default() };
    counts
        .iter()
        .map(|&n| {
            let cs = random_commodities(topo, n, seed ^ n as u64);
            let mut samples = Vec::with_capacity(REPETITIONS);
            for _ in 0..REPETITIONS {
                let t = Instant::now();
                std::hint::black_box(assign(scheme, &cs, topo, &params)?);
                samples.push(t.elapsed().as_secs_f64());
            }
            samples.sort_by(f64::total_cmp);
            Ok((n, samples[REPETITIONS / 2]))
        })
        .collect()
}
