//! Training jobs with 3D parallelism and the Ring All-Reduce traffic they generate.
//!
//! A job's placement is laid out replica-major: replica `r` holds the
//! `tp * pp` GPUs `placement[r * tp * pp ..][.. tp * pp]`, and inside a replica
//! the shard of pipeline stage `j`, tensor chunk `i` sits at offset `j * tp + i`.
//! The GPUs holding the same shard across replicas form one data-parallel ring.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{ClosTopology, Endpoint};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorkloadError {
    #[error("model {model}: {field} must be positive")]
    BadModel { model: String, field: &'static str },
    #[error("job needs {needed} GPUs but only {free} are free")]
    InsufficientGpus { needed: usize, free: usize },
    #[error("placement has {got} endpoints, expected {expected}")]
    PlacementLength { got: usize, expected: usize },
    #[error("endpoint {0} is placed twice")]
    DuplicateEndpoint(Endpoint),
    #[error("endpoint {0} is already occupied")]
    Occupied(Endpoint),
    #[error("endpoint {0} is outside the topology")]
    OutOfRange(Endpoint),
    #[error("a ring needs at least two members (got {0})")]
    RingTooSmall(usize),
    #[error("{0} must be positive")]
    NonPositive(&'static str),
}

/// Parallelization layout of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    pub num_params: u64,
    #[serde(default = "default_bytes_per_param")]
    pub bytes_per_param: u64,
    pub tp: usize,
    pub pp: usize,
}

fn default_bytes_per_param() -> u64 {
    4
}

impl ModelConfig {
    pub fn new(name: impl Into<String>, num_params: u64, tp: usize, pp: usize) -> Self {
        ModelConfig { name: name.into(), num_params, bytes_per_param: 4, tp, pp }
    }

    pub fn bloom() -> Self {
        Self::new("BLOOM", 176_000_000_000, 4, 12)
    }

    pub fn gpt3() -> Self {
        Self::new("GPT-3", 175_000_000_000, 8, 8)
    }

    pub fn llama2_70b() -> Self {
        Self::new("LLaMA2-70B", 70_000_000_000, 8, 16)
    }

    pub fn catalogue() -> Vec<ModelConfig> {
        vec![Self::bloom(), Self::gpt3(), Self::llama2_70b()]
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |field| Err(WorkloadError::BadModel { model: self.name.clone(), field });
        if self.num_params == 0 {
            return bad("num_params");
        }
        if self.bytes_per_param == 0 {
            return bad("bytes_per_param");
        }
        if self.tp == 0 {
            return bad("tp");
        }
        if self.pp == 0 {
            return bad("pp");
        }
        Ok(())
    }

    /// GPUs needed for one full copy of the model.
    pub fn full_copy_gpus(&self) -> usize {
        self.tp * self.pp
    }

    /// Bytes of parameters held by one GPU, rounded up.
    pub fn shard_bytes(&self) -> u64 {
        let total = self.num_params as u128 * self.bytes_per_param as u128;
        total.div_ceil(self.full_copy_gpus() as u128) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct JobId(pub u32);

impl fmt::Display for JobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "job{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Job {
    pub id: JobId,
    pub model: ModelConfig,
    pub dp: usize,
    pub arrival_time: f64,
    pub num_iterations: usize,
    pub placement: Vec<Endpoint>,
}

impl Job {
    pub fn num_gpus(&self) -> usize {
        self.model.full_copy_gpus() * self.dp
    }
}

/// GPUs claimed by placed jobs.
#[derive(Debug, Clone)]
pub struct Occupancy {
    hosts_per_tor: usize,
    gpus_per_host: usize,
    used: Vec<bool>,
    free: usize,
}

impl Occupancy {
    pub fn new(topo: &ClosTopology) -> Self {
        Occupancy {
            hosts_per_tor: topo.hosts_per_tor(),
            gpus_per_host: topo.gpus_per_host(),
            used: vec![false; topo.num_gpus()],
            free: topo.num_gpus(),
        }
    }

    fn slot(&self, ep: &Endpoint) -> Option<usize> {
        let i = (ep.tor * self.hosts_per_tor + ep.host) * self.gpus_per_host + ep.gpu;
        (ep.host < self.hosts_per_tor && ep.gpu < self.gpus_per_host && i < self.used.len()).then_some(i)
    }

    pub fn is_free(&self, ep: &Endpoint) -> bool {
        self.slot(ep).is_some_and(|i| !self.used[i])
    }

    pub fn free_count(&self) -> usize {
        self.free
    }

    /// Marks every endpoint of `placement` used; fails without side effects on conflict.
    pub fn claim(&mut self, placement: &[Endpoint]) -> Result<(), WorkloadError> {
        let mut slots = Vec::with_capacity(placement.len());
        for ep in placement {
            let i = self.slot(ep).ok_or(WorkloadError::OutOfRange(*ep))?;
            if self.used[i] || slots.contains(&i) {
                return Err(WorkloadError::Occupied(*ep));
            }
            slots.push(i);
        }
        for i in slots {
            self.used[i] = true;
        }
        self.free -= placement.len();
        Ok(())
    }
}

/// Random-fit placement: hosts with free GPUs are visited in a seeded random
/// order and each host's free GPUs are consumed before moving on.
pub fn place_job(
    topo: &ClosTopology,
    model: &ModelConfig,
    dp: usize,
    occupancy: &Occupancy,
    seed: u64,
) -> Result<Vec<Endpoint>, WorkloadError> {
    model.validate()?;
    if dp == 0 {
        return Err(WorkloadError::NonPositive("dp"));
    }
    let needed = model.full_copy_gpus() * dp;
    if needed > occupancy.free_count() {
        return Err(WorkloadError::InsufficientGpus { needed, free: occupancy.free_count() });
    }
    let mut hosts: Vec<(usize, usize)> = (0..topo.num_tors())
        .flat_map(|t| (0..topo.hosts_per_tor()).map(move |h| (t, h)))
        .filter(|&(tor, host)| (0..topo.gpus_per_host()).any(|gpu| occupancy.is_free(&Endpoint { tor, host, gpu })))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    hosts.shuffle(&mut rng);

    let mut placement = Vec::with_capacity(needed);
    'hosts: for (tor, host) in hosts {
        for gpu in 0..topo.gpus_per_host() {
            let ep = Endpoint { tor, host, gpu };
            if occupancy.is_free(&ep) {
                placement.push(ep);
                if placement.len() == needed {
                    break 'hosts;
                }
            }
        }
    }
    Ok(placement)
}

/// One data-parallel ring: the replicas of a single parameter shard.
#[derive(Debug, Clone, PartialEq)]
pub struct Ring {
    pub job_id: JobId,
    /// Position of the ring in the job's ring list (`pp_index * tp + tp_index`).
    pub index: usize,
    pub coordinate: (usize, usize),
    pub members: Vec<Endpoint>,
    pub shard_bytes: u64,
}

pub fn build_rings(job: &Job) -> Result<Vec<Ring>, WorkloadError> {
    job.model.validate()?;
    let (tp, pp) = (job.model.tp, job.model.pp);
    let copy = tp * pp;
    if job.placement.len() != copy * job.dp {
        return Err(WorkloadError::PlacementLength { got: job.placement.len(), expected: copy * job.dp });
    }
    let mut seen = std::collections::BTreeSet::new();
    for ep in &job.placement {
        if !seen.insert(*ep) {
            return Err(WorkloadError::DuplicateEndpoint(*ep));
        }
    }
    let shard_bytes = job.model.shard_bytes();
    let mut rings = Vec::with_capacity(copy);
    for j in 0..pp {
        for i in 0..tp {
            let offset = j * tp + i;
            rings.push(Ring {
                job_id: job.id,
                index: offset,
                coordinate: (i, j),
                members: (0..job.dp).map(|r| job.placement[r * copy + offset]).collect(),
                shard_bytes,
            });
        }
    }
    Ok(rings)
}

/// Identifies one ring edge in one iteration of one job.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CommodityId {
    pub job: u32,
    pub iteration: u32,
    pub ring: u32,
    pub edge: u32,
}

impl CommodityId {
    /// Id for a free-standing commodity outside any job (benchmarks, validation).
    pub fn standalone(index: usize) -> Self {
        CommodityId { job: 0, iteration: 0, ring: 0, edge: index as u32 }
    }

    /// Stable 64-bit key, used for hashing.
    pub fn key(&self) -> u64 {
        ((self.job as u64) << 48) ^ ((self.iteration as u64) << 32) ^ ((self.ring as u64) << 16) ^ self.edge as u64
    }
}

impl fmt::Display for CommodityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "j{}/i{}/r{}/e{}", self.job, self.iteration, self.ring, self.edge)
    }
}

/// A single flow demand.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommoditySpec {
    pub id: CommodityId,
    pub job_id: JobId,
    pub src: Endpoint,
    pub dst: Endpoint,
    pub volume: u64,
}

/// Bytes each ring member sends to its successor during one All-Reduce: 2(N-1)/N of the shard.
pub fn ring_edge_volume(ring_size: usize, shard_bytes: u64) -> u64 {
    let n = ring_size as u128;
    (2 * (n - 1) * shard_bytes as u128).div_ceil(n) as u64
}

/// One aggregate flow per ring edge, member k to member (k+1) mod N.
pub fn ring_allreduce_commodities(ring: &Ring, iteration: usize) -> Result<Vec<CommoditySpec>, WorkloadError> {
    let n = ring.members.len();
    if n < 2 {
        return Err(WorkloadError::RingTooSmall(n));
    }
    let volume = ring_edge_volume(n, ring.shard_bytes);
    Ok((0..n)
        .map(|k| CommoditySpec {
            id: CommodityId { job: ring.job_id.0, iteration: iteration as u32, ring: ring.index as u32, edge: k as u32 },
            job_id: ring.job_id,
            src: ring.members[k],
            dst: ring.members[(k + 1) % n],
            volume,
        })
        .collect())
}

/// Accelerator constants for the compute-phase estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardwareProfile {
    pub peak_flops: f64,
    pub utilization: f64,
    pub tokens_per_batch: f64,
}

impl Default for HardwareProfile {
    fn default() -> Self {
        HardwareProfile { peak_flops: 312e12, utilization: 0.3, tokens_per_batch: 2e6 }
    }
}

/// Forward plus backward time of one iteration: 6 * params * tokens FLOPs spread over the job's GPUs.
pub fn compute_phase_duration(model: &ModelConfig, dp: usize, hw: &HardwareProfile) -> Result<f64, WorkloadError> {
    for (name, v) in [
        ("peak_flops", hw.peak_flops),
        ("utilization", hw.utilization),
        ("tokens_per_batch", hw.tokens_per_batch),
    ] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(WorkloadError::NonPositive(name));
        }
    }
    if dp == 0 || model.tp == 0 || model.pp == 0 {
        return Err(WorkloadError::NonPositive("gpu count"));
    }
    let gpus = (model.full_copy_gpus() * dp) as f64;
    Ok(6.0 * model.num_params as f64 * hw.tokens_per_batch / (gpus * hw.peak_flops * hw.utilization))
}

/// i.i.d. uniform arrival times in `[0, window)`, sorted ascending.
pub fn arrival_schedule(num_jobs: usize, window: f64, seed: u64) -> Result<Vec<f64>, WorkloadError> {
    if !(window > 0.0) || !window.is_finite() {
        return Err(WorkloadError::NonPositive("window"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut times: Vec<f64> = (0..num_jobs).map(|_| rng.gen_range(0.0..window)).collect();
    times.sort_by(f64::total_cmp);
    Ok(times)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_fabric() -> ClosTopology {
        ClosTopology::new(32, 64, 4, 8, 100e9).unwrap()
    }

    fn job(model: ModelConfig, dp: usize, seed: u64) -> Job {
        let topo = full_fabric();
        let placement = place_job(&topo, &model, dp, &Occupancy::new(&topo), seed).unwrap();
        Job { id: JobId(0), model, dp, arrival_time: 0.0, num_iterations: 1, placement }
    }

    #[test]
    fn bloom_uses_384_gpus() {
        let j = job(ModelConfig::bloom(), 8, 11);
        assert_eq!(j.placement.len(), 384);
        let distinct: std::collections::BTreeSet<_> = j.placement.iter().collect();
        assert_eq!(distinct.len(), 384);
    }

    #[test]
    fn placement_fills_hosts_contiguously() {
        let j = job(ModelConfig::bloom(), 8, 3);
        // 384 GPUs on fully free 8-GPU hosts: every run of 8 shares a host.
        for chunk in j.placement.chunks(8) {
            assert!(chunk.iter().all(|e| e.same_host(&chunk[0])));
            assert_eq!(chunk.iter().map(|e| e.gpu).collect::<Vec<_>>(), (0..8).collect::<Vec<_>>());
        }
    }

    #[test]
    fn placement_is_reproducible() {
        let a = job(ModelConfig::gpt3(), 4, 1);
        let b = job(ModelConfig::gpt3(), 4, 1);
        assert_eq!(a.placement, b.placement);
        let c = job(ModelConfig::gpt3(), 4, 2);
        assert_ne!(a.placement, c.placement);
    }

    #[test]
    fn forced_placement_takes_everything() {
        let topo = ClosTopology::new(2, 2, 2, 2, 1.0).unwrap();
        let model = ModelConfig::new("tiny", 1000, 2, 1);
        let p = place_job(&topo, &model, 4, &Occupancy::new(&topo), 5).unwrap();
        let mut sorted = p.clone();
        sorted.sort();
        assert_eq!(sorted, topo.endpoints().collect::<Vec<_>>());
    }

    #[test]
    fn placement_respects_occupancy() {
        let topo = ClosTopology::new(2, 2, 2, 2, 1.0).unwrap();
        let model = ModelConfig::new("tiny", 1000, 1, 1);
        let mut occ = Occupancy::new(&topo);
        let first = place_job(&topo, &model, 5, &occ, 1).unwrap();
        occ.claim(&first).unwrap();
        assert_eq!(occ.free_count(), 3);
        let second = place_job(&topo, &model, 3, &occ, 2).unwrap();
        assert!(second.iter().all(|e| !first.contains(e)));
        assert!(matches!(
            place_job(&topo, &model, 4, &occ, 3),
            Err(WorkloadError::InsufficientGpus { needed: 4, free: 3 })
        ));
        assert!(occ.claim(&first[..1]).is_err());
        assert_eq!(occ.free_count(), 3);
    }

    #[test]
    fn bloom_rings() {
        let j = job(ModelConfig::bloom(), 8, 5);
        let rings = build_rings(&j).unwrap();
        assert_eq!(rings.len(), 48);
        for r in &rings {
            assert_eq!(r.members.len(), 8);
            assert_eq!(r.shard_bytes, 14_666_666_667);
        }
        // rings partition the placement
        let mut all: Vec<_> = rings.iter().flat_map(|r| r.members.iter().copied()).collect();
        all.sort();
        let mut placement = j.placement.clone();
        placement.sort();
        assert_eq!(all, placement);
    }

    #[test]
    fn ring_membership_is_replica_major() {
        let j = job(ModelConfig::bloom(), 2, 9);
        let rings = build_rings(&j).unwrap();
        let r = rings.iter().find(|r| r.coordinate == (3, 5)).unwrap();
        assert_eq!(r.index, 5 * 4 + 3);
        assert_eq!(r.members, vec![j.placement[23], j.placement[48 + 23]]);
    }

    #[test]
    fn llama_rings() {
        let j = job(ModelConfig::llama2_70b(), 4, 5);
        let rings = build_rings(&j).unwrap();
        assert_eq!(rings.len(), 128);
        assert!(rings.iter().all(|r| r.members.len() == 4));
        assert_eq!(rings[0].shard_bytes, 70_000_000_000u64 * 4 / 128);
    }

    #[test]
    fn malformed_placement_rejected() {
        let mut j = job(ModelConfig::bloom(), 2, 5);
        j.placement.pop();
        assert!(matches!(build_rings(&j), Err(WorkloadError::PlacementLength { .. })));
        let mut j = job(ModelConfig::bloom(), 2, 5);
        j.placement[1] = j.placement[0];
        assert!(matches!(build_rings(&j), Err(WorkloadError::DuplicateEndpoint(_))));
    }

    fn ring_of(n: usize, shard: u64) -> Ring {
        Ring {
            job_id: JobId(1),
            index: 0,
            coordinate: (0, 0),
            members: (0..n).map(|t| Endpoint::new(t, 0, 0)).collect(),
            shard_bytes: shard,
        }
    }

    #[test]
    fn ring_volumes() {
        let c = ring_allreduce_commodities(&ring_of(4, 4_000_000_000), 0).unwrap();
        assert_eq!(c.len(), 4);
        assert!(c.iter().all(|c| c.volume == 6_000_000_000));
        assert_eq!(c[3].src, Endpoint::new(3, 0, 0));
        assert_eq!(c[3].dst, Endpoint::new(0, 0, 0));

        let c = ring_allreduce_commodities(&ring_of(2, 12345), 3).unwrap();
        assert_eq!(c.len(), 2);
        assert!(c.iter().all(|c| c.volume == 12345 && c.id.iteration == 3));
        assert_eq!((c[0].src, c[0].dst), (c[1].dst, c[1].src));

        let c = ring_allreduce_commodities(&ring_of(8, 14_666_666_667), 0).unwrap();
        assert_eq!(c[0].volume, 25_666_666_668);

        assert_eq!(ring_allreduce_commodities(&ring_of(1, 10), 0), Err(WorkloadError::RingTooSmall(1)));
    }

    #[test]
    fn compute_phase_formula() {
        let hw = HardwareProfile::default();
        let gpt3 = ModelConfig::new("GPT-3", 175_000_000_000, 4, 12);
        let d = compute_phase_duration(&gpt3, 8, &hw).unwrap();
        let expected = 6.0 * 175e9 * 2e6 / (384.0 * 312e12 * 0.3);
        assert!((d - expected).abs() <= 1e-12 * expected);
        let half = compute_phase_duration(&gpt3, 16, &hw).unwrap();
        assert!((half - d / 2.0).abs() <= 1e-12 * d);
        let tiny = ModelConfig::new("tiny", 1, 1, 1);
        assert!(compute_phase_duration(&tiny, 1, &hw).unwrap() < 1e-6);
        let bad = HardwareProfile { utilization: 0.0, ..hw };
        assert!(compute_phase_duration(&gpt3, 8, &bad).is_err());
    }

    #[test]
    fn arrivals() {
        let one = arrival_schedule(1, 10.0, 4).unwrap();
        assert!(one[0] >= 0.0 && one[0] < 10.0);
        let a = arrival_schedule(5, 10.0, 3).unwrap();
        assert_eq!(a, arrival_schedule(5, 10.0, 3).unwrap());
        assert!(a.windows(2).all(|w| w[0] <= w[1]));
        assert!(a.iter().all(|t| (0.0..10.0).contains(t)));
        assert!(arrival_schedule(3, 0.0, 1).is_err());
    }
}
