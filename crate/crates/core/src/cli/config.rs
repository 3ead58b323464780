use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::CliError;
use crate::routing::{AnnealSchedule, ExactLimits, Scheme, SchemeParams};
use crate::sim::{ControllerModel, FailureEvent, FailurePlan, Scenario};
use crate::topology::ClosTopology;
use crate::workload::{arrival_schedule, place_job, HardwareProfile, Job, JobId, ModelConfig, Occupancy};

/// Bundled default: 32 spines, 64 ToRs, three jobs, greedy against ECMP.
pub const DEFAULT_CONFIG: &str = include_str!("../../configs/default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_schemes")]
    pub schemes: Vec<String>,
    /// Check rate feasibility, saturation and volume conservation during runs.
    #[serde(default = "yes")]
    pub audit: bool,
    pub topology: TopologyConfig,
    #[serde(default)]
    pub hardware: HardwareProfile,
    #[serde(default)]
    pub controller: ControllerConfig,
    /// Extra models, looked up by name next to the built-in catalogue.
    #[serde(default)]
    pub models: Vec<ModelConfig>,
    #[serde(default)]
    pub workload: WorkloadConfig,
    #[serde(default)]
    pub failures: FailureConfig,
    #[serde(default)]
    pub validate: ValidateConfig,
    #[serde(default)]
    pub bench: BenchConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub spines: usize,
    pub tors: usize,
    pub hosts_per_tor: usize,
    pub nics_per_host: usize,
    /// Defaults to one GPU per NIC.
    pub gpus_per_host: Option<usize>,
    pub link_capacity_bps: f64,
    /// Spines down from the start.
    #[serde(default)]
    pub failed_spines: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub reaction_latency_s: f64,
    pub elephant_threshold_bytes: u64,
    pub precomputed_failures: bool,
    pub ecmp_fallback: bool,
    pub exact_max_commodities: usize,
    pub anneal: Option<AnnealConfig>,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        let c = ControllerModel::new(Scheme::Greedy);
        ControllerConfig {
            reaction_latency_s: c.reaction_latency,
            elephant_threshold_bytes: c.elephant_threshold,
            precomputed_failures: c.precomputed_failures,
            ecmp_fallback: c.ecmp_fallback,
            exact_max_commodities: ExactLimits::default().max_commodities,
            anneal: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnealConfig {
    pub initial_temp: f64,
    pub cooling_factor: f64,
    pub moves: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadConfig {
    pub allowed_dp: Vec<usize>,
    /// Jobs without an explicit arrival time arrive uniformly in `[0, window)`; 0 means all at t=0.
    pub arrival_window_s: f64,
    /// Iterations for jobs that do not set their own.
    pub iterations: usize,
    pub jobs: Vec<JobConfig>,
    /// Per-seed random job mix, added after the explicit jobs.
    pub random: Option<RandomJobsConfig>,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig { allowed_dp: vec![2, 4, 8], arrival_window_s: 0.0, iterations: 10, jobs: Vec::new(), random: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    pub model: String,
    pub dp: usize,
    pub iterations: Option<usize>,
    pub arrival_time_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomJobsConfig {
    pub min_jobs: usize,
    pub max_jobs: usize,
    /// Defaults to the built-in catalogue.
    #[serde(default)]
    pub models: Vec<String>,
    /// Defaults to `workload.allowed_dp`.
    #[serde(default)]
    pub dp: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FailureConfig {
    pub events: Vec<FailureEvent>,
    pub seed: u64,
    /// When `failsweep` brings its spines down.
    pub sweep_time_s: f64,
    pub sweep_counts: Vec<usize>,
    /// Small post-failure instances checked per sweep count.
    pub validate_instances: usize,
}

impl Default for FailureConfig {
    fn default() -> Self {
        FailureConfig { events: Vec::new(), seed: 0, sweep_time_s: 1.0, sweep_counts: vec![1, 4, 8], validate_instances: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateConfig {
    pub instances: usize,
    pub max_tors: usize,
    pub max_spines: usize,
    pub max_commodities: usize,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        ValidateConfig { instances: 1000, max_tors: 8, max_spines: 4, max_commodities: 14 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub counts: Vec<usize>,
    pub schemes: Vec<String>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            counts: vec![100, 500, 1000, 1500],
            schemes: vec!["greedy".into(), "annealing".into(), "edge_coloring".into()],
        }
    }
}

fn default_name() -> String {
    "scenario".into()
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_schemes() -> Vec<String> {
    vec!["greedy".into()]
}

fn yes() -> bool {
    true
}

fn field(path: impl Into<String>, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{}: {msg}", path.into()))
}

/// Case- and punctuation-insensitive model key: "LLaMA2-70B" and "llama2_70b" match.
fn model_key(name: &str) -> String {
    name.chars().filter(char::is_ascii_alphanumeric).map(|c| c.to_ascii_lowercase()).collect()
}

pub fn parse_schemes(names: &[String], path: &str) -> Result<Vec<Scheme>, CliError> {
    names
        .iter()
        .enumerate()
        .map(|(i, n)| n.parse().map_err(|_| field(format!("{path}[{i}]"), format!("unknown scheme `{n}`"))))
        .collect()
}

impl ScenarioConfig {
    /// Parses and validates a TOML document.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let de = toml::Deserializer::parse(text).map_err(|e| CliError::Config(e.to_string()))?;
        let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            field(if path == "." { "config".into() } else { path }, e.into_inner().message())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn default_config() -> Self {
        Self::from_toml(DEFAULT_CONFIG).expect("bundled config is valid")
    }

    pub fn schemes(&self) -> Result<Vec<Scheme>, CliError> {
        parse_schemes(&self.schemes, "schemes")
    }

    pub fn topology(&self) -> Result<ClosTopology, CliError> {
        let t = &self.topology;
        let mut topo = ClosTopology::new(t.spines, t.tors, t.hosts_per_tor, t.nics_per_host, t.link_capacity_bps)
            .map_err(|e| field("topology", e))?;
        if let Some(g) = t.gpus_per_host {
            topo = topo.with_gpus_per_host(g).map_err(|e| field("topology.gpus_per_host", e))?;
        }
        topo.with_failed_spines(t.failed_spines.iter().copied()).map_err(|e| field("topology.failed_spines", e))
    }

    pub fn model(&self, name: &str) -> Option<ModelConfig> {
        let key = model_key(name);
        self.models.iter().cloned().chain(ModelConfig::catalogue()).find(|m| model_key(&m.name) == key)
    }

    pub fn controller(&self, scheme: Scheme) -> ControllerModel {
        let c = &self.controller;
        ControllerModel {
            scheme,
            reaction_latency: c.reaction_latency_s,
            elephant_threshold: c.elephant_threshold_bytes,
            precomputed_failures: c.precomputed_failures,
            ecmp_fallback: c.ecmp_fallback,
            params: SchemeParams {
                seed: 0,
                anneal: c.anneal.map(|a| AnnealSchedule {
                    initial_temp: a.initial_temp,
                    cooling_factor: a.cooling_factor,
                    moves: a.moves,
                }),
                exact: ExactLimits { max_commodities: c.exact_max_commodities },
            },
        }
    }

    /// Checks every reference and range; errors name the offending field.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.seeds.is_empty() {
            return Err(field("seeds", "at least one seed is required"));
        }
        if self.schemes.is_empty() {
            return Err(field("schemes", "at least one scheme is required"));
        }
        self.schemes()?;
        parse_schemes(&self.bench.schemes, "bench.schemes")?;
        let topo = self.topology()?;
        positive("hardware.peak_flops", self.hardware.peak_flops)?;
        positive("hardware.utilization", self.hardware.utilization)?;
        positive("hardware.tokens_per_batch", self.hardware.tokens_per_batch)?;

        let c = &self.controller;
        non_negative("controller.reaction_latency_s", c.reaction_latency_s)?;
        if c.exact_max_commodities == 0 {
            return Err(field("controller.exact_max_commodities", "must be positive"));
        }
        if let Some(a) = &c.anneal {
            positive("controller.anneal.initial_temp", a.initial_temp)?;
            if !(a.cooling_factor > 0.0 && a.cooling_factor < 1.0) {
                return Err(field("controller.anneal.cooling_factor", "must lie in (0, 1)"));
            }
        }

        for (i, m) in self.models.iter().enumerate() {
            m.validate().map_err(|e| field(format!("models[{i}]"), e))?;
        }
        let w = &self.workload;
        if w.allowed_dp.is_empty() || w.allowed_dp.contains(&0) {
            return Err(field("workload.allowed_dp", "must list positive replica counts"));
        }
        non_negative("workload.arrival_window_s", w.arrival_window_s)?;
        if w.iterations == 0 {
            return Err(field("workload.iterations", "must be at least 1"));
        }
        for (i, j) in w.jobs.iter().enumerate() {
            let path = format!("workload.jobs[{i}]");
            if self.model(&j.model).is_none() {
                return Err(field(format!("{path}.model"), format!("unknown model `{}`", j.model)));
            }
            if !w.allowed_dp.contains(&j.dp) {
                return Err(field(format!("{path}.dp"), format!("{} is not in workload.allowed_dp", j.dp)));
            }
            if j.iterations == Some(0) {
                return Err(field(format!("{path}.iterations"), "must be at least 1"));
            }
            if let Some(t) = j.arrival_time_s {
                non_negative(&format!("{path}.arrival_time_s"), t)?;
            }
        }
        if let Some(r) = &w.random {
            if r.min_jobs > r.max_jobs {
                return Err(field("workload.random.min_jobs", "exceeds workload.random.max_jobs"));
            }
            for (i, m) in r.models.iter().enumerate() {
                if self.model(m).is_none() {
                    return Err(field(format!("workload.random.models[{i}]"), format!("unknown model `{m}`")));
                }
            }
            for (i, dp) in r.dp.iter().enumerate() {
                if !w.allowed_dp.contains(dp) {
                    return Err(field(format!("workload.random.dp[{i}]"), format!("{dp} is not in workload.allowed_dp")));
                }
            }
        }
        if w.jobs.is_empty() && w.random.as_ref().is_none_or(|r| r.max_jobs == 0) {
            return Err(field("workload.jobs", "no jobs configured"));
        }

        let f = &self.failures;
        non_negative("failures.sweep_time_s", f.sweep_time_s)?;
        let mut down = topo.failed_spines().len();
        for (i, e) in f.events.iter().enumerate() {
            non_negative(&format!("failures.events[{i}].time"), e.time)?;
            down += e.count;
            if down >= topo.num_spines() {
                return Err(field(format!("failures.events[{i}].count"), "would leave no live spine"));
            }
        }

        let v = &self.validate;
        if v.max_tors < 2 || v.max_spines < 1 || v.max_commodities < 1 {
            return Err(field("validate", "needs max_tors >= 2, max_spines >= 1, max_commodities >= 1"));
        }
        if v.max_commodities > c.exact_max_commodities {
            return Err(field("validate.max_commodities", "exceeds controller.exact_max_commodities"));
        }
        Ok(())
    }

    pub fn check_sweep_counts(&self, counts: &[usize], path: &str) -> Result<(), CliError> {
        let live = self.topology.spines.saturating_sub(self.topology.failed_spines.len());
        for (i, &k) in counts.iter().enumerate() {
            if k >= live {
                return Err(field(format!("{path}[{i}]"), format!("{k} failures would leave no live spine")));
            }
        }
        Ok(())
    }

    /// Placed jobs for one seed. Identical across schemes.
    pub fn jobs(&self, topo: &ClosTopology, seed: u64) -> Result<Vec<Job>, CliError> {
        let w = &self.workload;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut wanted: Vec<Wanted> = w
            .jobs
            .iter()
            .enumerate()
            .map(|(i, j)| {
                let model = self.model(&j.model).expect("validated");
                (format!("workload.jobs[{i}]"), model, j.dp, j.iterations, j.arrival_time_s)
            })
            .collect();
        let explicit = wanted.len();
        if let Some(r) = &w.random {
            let names: Vec<ModelConfig> = if r.models.is_empty() {
                ModelConfig::catalogue()
            } else {
                r.models.iter().map(|m| self.model(m).expect("validated")).collect()
            };
            let dps = if r.dp.is_empty() { &w.allowed_dp } else { &r.dp };
            let n = rng.gen_range(r.min_jobs..=r.max_jobs);
            for _ in 0..n {
                let model = names.choose(&mut rng).expect("catalogue is not empty").clone();
                let dp = *dps.choose(&mut rng).expect("validated");
                wanted.push(("workload.random".into(), model, dp, None, None));
            }
        }

        let arrivals = if w.arrival_window_s > 0.0 {
            arrival_schedule(wanted.len(), w.arrival_window_s, seed).map_err(|e| field("workload.arrival_window_s", e))?
        } else {
            vec![0.0; wanted.len()]
        };

        let mut occupancy = Occupancy::new(topo);
        let mut jobs = Vec::new();
        for (i, (path, model, dp, iterations, arrival)) in wanted.into_iter().enumerate() {
            let needed = |dp: usize| model.full_copy_gpus() * dp;
            let dp = if i < explicit {
                if needed(dp) > occupancy.free_count() {
                    return Err(field(
                        path,
                        format!("needs {} GPUs but only {} are free", needed(dp), occupancy.free_count()),
                    ));
                }
                dp
            } else {
                // random jobs shrink to the largest allowed dp that still fits, or are dropped
                let mut options: Vec<usize> = w.allowed_dp.iter().copied().filter(|&d| d <= dp).collect();
                options.sort_unstable();
                match options.into_iter().rev().find(|&d| needed(d) <= occupancy.free_count()) {
                    Some(d) => d,
                    None => continue,
                }
            };
            let placement = place_job(topo, &model, dp, &occupancy, rng.gen()).map_err(|e| field(path.clone(), e))?;
            occupancy.claim(&placement).map_err(|e| field(path.clone(), e))?;
            jobs.push(Job {
                id: JobId(jobs.len() as u32),
                model,
                dp,
                arrival_time: arrival.unwrap_or(arrivals[i]),
                num_iterations: iterations.unwrap_or(w.iterations),
                placement,
            });
        }
        Ok(jobs)
    }

    /// The runnable scenario for one (scheme, seed); `failures` overrides the configured events.
    pub fn scenario(&self, scheme: Scheme, seed: u64, failures: Option<&[FailureEvent]>) -> Result<Scenario, CliError> {
        let topology = self.topology()?;
        let jobs = self.jobs(&topology, seed)?;
        let events = failures.unwrap_or(&self.failures.events).to_vec();
        Ok(Scenario {
            topology,
            jobs,
            controller: self.controller(scheme),
            failures: (!events.is_empty()).then_some(FailurePlan { events, seed: self.failures.seed }),
            hardware: self.hardware,
            seed,
            audit: self.audit,
        })
    }
}

/// Config path, model, dp, iterations, arrival time.
type Wanted = (String, ModelConfig, usize, Option<usize>, Option<f64>);

fn positive(path: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(field(path, "must be a positive number"))
    }
}

fn non_negative(path: &str, v: f64) -> Result<(), CliError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(field(path, "must be a non-negative number"))
    }
}
