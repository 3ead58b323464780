//! Experiment driver behind the `clostrain` binary.
//!
//! Four verbs: `run` simulates every (scheme, seed) pair of a scenario
//! config, `validate` checks greedy and edge-colouring against the exact
//! optimum on small random instances, `bench` times the routing schemes, and
//! `failsweep` repeats `run` with spine failures injected mid-run.
//!
//! Result CSVs have a fixed header and rows sorted by
//! (scenario, failures, scheme, job, metric, seed); floats are written in
//! shortest round-trip form, so identical inputs give identical bytes.

mod config;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

pub use config::{
    parse_schemes, AnnealConfig, BenchConfig, ControllerConfig, FailureConfig, JobConfig, RandomJobsConfig,
    ScenarioConfig, TopologyConfig, ValidateConfig, WorkloadConfig, DEFAULT_CONFIG,
};

use crate::routing::{
    edge_color_assign, exact_assign, greedy_assign, max_link_load, ExactLimits, LinkScope, Scheme,
};
use crate::sim::{measure_scheme_runtime, run_scenario, FailureEvent, SimError, SimOutput};
use crate::topology::{ClosTopology, Endpoint};
use crate::workload::{CommodityId, CommoditySpec, JobId};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::Invariant(_) => 4,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Invariant { .. } => CliError::Invariant(e.to_string()),
            SimError::Config(m) => CliError::Config(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

pub const METRICS: [&str; 5] =
    ["allreduce_time_s", "mean_fct_s", "mean_throughput_bps", "min_bandwidth_bps", "max_link_load"];

/// One line of a result CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub scenario: String,
    pub scheme: String,
    pub job: String,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
    /// Spines brought down during the run.
    pub failures: usize,
}

const RESULT_HEADER: [&str; 7] = ["scenario", "scheme", "job", "metric", "value", "seed", "failures"];

/// One simulated (scheme, seed, failures) combination.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub scheme: Scheme,
    pub seed: u64,
    pub failures: usize,
    pub output: SimOutput,
}

fn job_rows(scenario: &str, run: &RunOutcome, jobs: &[JobId]) -> Vec<ResultRow> {
    let mut rows = Vec::new();
    for &job in jobs {
        let mut push = |metric: &str, value: f64| {
            rows.push(ResultRow {
                scenario: scenario.to_string(),
                scheme: run.scheme.name().to_string(),
                job: job.to_string(),
                metric: metric.to_string(),
                value,
                seed: run.seed,
                failures: run.failures,
            })
        };
        let out = &run.output;
        if let Some(t) = out.mean_allreduce_time(job) {
            push("allreduce_time_s", t);
        }
        let flows: Vec<_> = out.records_for(job).flat_map(|r| &r.flow_records).collect();
        if !flows.is_empty() {
            let n = flows.len() as f64;
            push("mean_fct_s", flows.iter().map(|f| f.fct).sum::<f64>() / n);
            push("mean_throughput_bps", flows.iter().map(|f| f.throughput).sum::<f64>() / n);
            push("min_bandwidth_bps", flows.iter().map(|f| f.min_rate).fold(f64::INFINITY, f64::min));
        }
        if let Some(s) = out.job_stats.iter().find(|s| s.job_id == job) {
            push("max_link_load", s.max_link_load as f64);
        }
    }
    rows
}

fn sort_rows(rows: &mut [ResultRow]) {
    let job_num = |j: &str| j.trim_start_matches("job").parse::<u64>().unwrap_or(u64::MAX);
    let metric_pos = |m: &str| METRICS.iter().position(|x| *x == m).unwrap_or(usize::MAX);
    let scheme_pos = |s: &str| Scheme::ALL.iter().position(|x| x.name() == s).unwrap_or(usize::MAX);
    rows.sort_by(|a, b| {
        (&a.scenario, a.failures, scheme_pos(&a.scheme), job_num(&a.job), metric_pos(&a.metric), a.seed).cmp(&(
            &b.scenario,
            b.failures,
            scheme_pos(&b.scheme),
            job_num(&b.job),
            metric_pos(&b.metric),
            b.seed,
        ))
    });
}

/// Simulates every (scheme, seed) pair, in parallel, with the given failure events.
pub fn simulate(
    cfg: &ScenarioConfig,
    failures: Option<&[FailureEvent]>,
) -> Result<(Vec<ResultRow>, Vec<RunOutcome>), CliError> {
    let schemes = cfg.schemes()?;
    let events = failures.unwrap_or(&cfg.failures.events);
    let failed = events.iter().map(|e| e.count).sum();
    let pairs: Vec<(Scheme, u64)> =
        schemes.iter().flat_map(|&s| cfg.seeds.iter().map(move |&seed| (s, seed))).collect();
    let runs: Vec<(RunOutcome, Vec<JobId>)> = pairs
        .par_iter()
        .map(|&(scheme, seed)| {
            let scenario = cfg.scenario(scheme, seed, Some(events))?;
            let output = run_scenario(&scenario)?;
            let jobs = scenario.jobs.iter().map(|j| j.id).collect();
            Ok((RunOutcome { scheme, seed, failures: failed, output }, jobs))
        })
        .collect::<Result<_, CliError>>()?;
    let mut rows: Vec<ResultRow> = runs.iter().flat_map(|(run, jobs)| job_rows(&cfg.name, run, jobs)).collect();
    sort_rows(&mut rows);
    for r in &rows {
        if !(r.value.is_finite() && r.value >= 0.0) {
            return Err(CliError::Invariant(format!("{} {} {} = {}", r.scheme, r.job, r.metric, r.value)));
        }
    }
    Ok((rows, runs.into_iter().map(|(r, _)| r).collect()))
}

/// Files written by one command; removed again unless the command succeeds.
struct Outputs {
    paths: Vec<PathBuf>,
    keep: bool,
}

impl Outputs {
    fn new() -> Self {
        Outputs { paths: Vec::new(), keep: false }
    }

    fn create(&mut self, path: &Path) -> Result<File, CliError> {
        let f = File::create(path).map_err(|e| io_err(path, e))?;
        self.paths.push(path.to_path_buf());
        Ok(f)
    }

    fn csv<T: Serialize>(&mut self, path: &Path, header: &[&str], rows: &[T]) -> Result<(), CliError> {
        let file = self.create(path)?;
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        w.write_record(header).map_err(|e| io_err(path, e))?;
        for r in rows {
            w.serialize(r).map_err(|e| io_err(path, e))?;
        }
        w.flush().map_err(|e| io_err(path, e))
    }

    fn json<T: Serialize>(&mut self, path: &Path, value: &T) -> Result<(), CliError> {
        let mut file = self.create(path)?;
        serde_json::to_writer_pretty(&mut file, value).map_err(|e| io_err(path, e))?;
        writeln!(file).map_err(|e| io_err(path, e))
    }

    fn commit(mut self) {
        self.keep = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if !self.keep {
            for p in &self.paths {
                let _ = std::fs::remove_file(p);
            }
        }
    }
}

pub fn summary_path(out: &Path) -> PathBuf {
    out.with_extension("summary.json")
}

pub fn trace_path(out: &Path) -> PathBuf {
    out.with_extension("trace.csv")
}

#[derive(Debug, Clone, Serialize)]
pub struct ControllerRuntime {
    pub calls: usize,
    pub median_s: f64,
    pub max_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SchemeSummary {
    /// Mean of each metric over jobs and seeds.
    pub means: BTreeMap<String, f64>,
    /// Wall-clock cost of the controller.
    pub runtime_s: ControllerRuntime,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub scenario: String,
    pub runs: usize,
    /// Keyed by `scheme` or `scheme/k<failures>`.
    pub schemes: BTreeMap<String, SchemeSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub validation: Vec<ValidateReport>,
}

fn summarize(cfg: &ScenarioConfig, rows: &[ResultRow], runs: &[RunOutcome], sweep: bool) -> Summary {
    let key = |scheme: &str, k: usize| if sweep { format!("{scheme}/k{k}") } else { scheme.to_string() };
    let mut sums: BTreeMap<String, BTreeMap<String, (f64, usize)>> = BTreeMap::new();
    for r in rows {
        let e = sums.entry(key(&r.scheme, r.failures)).or_default().entry(r.metric.clone()).or_default();
        e.0 += r.value;
        e.1 += 1;
    }
    let mut schemes = BTreeMap::new();
    for (k, metrics) in sums {
        let mut times: Vec<f64> = runs
            .iter()
            .filter(|r| key(r.scheme.name(), r.failures) == k)
            .flat_map(|r| r.output.runtime_log.iter().map(|s| s.seconds))
            .collect();
        times.sort_by(f64::total_cmp);
        let runtime_s = ControllerRuntime {
            calls: times.len(),
            median_s: times.get(times.len() / 2).copied().unwrap_or(0.0),
            max_s: times.last().copied().unwrap_or(0.0),
        };
        let means = metrics.into_iter().map(|(m, (s, n))| (m, s / n as f64)).collect();
        schemes.insert(k, SchemeSummary { means, runtime_s });
    }
    Summary { scenario: cfg.name.clone(), runs: runs.len(), schemes, validation: Vec::new() }
}

#[derive(Debug, Clone, Serialize)]
struct TraceRow {
    scenario: String,
    scheme: &'static str,
    seed: u64,
    failures: usize,
    job: String,
    iteration: usize,
    flow: String,
    src: String,
    dst: String,
    volume_bytes: u64,
    spine: Option<usize>,
    udp_port: Option<u16>,
    start_s: f64,
    end_s: f64,
    fct_s: f64,
    throughput_bps: f64,
    min_rate_bps: f64,
}

const TRACE_HEADER: [&str; 17] = [
    "scenario",
    "scheme",
    "seed",
    "failures",
    "job",
    "iteration",
    "flow",
    "src",
    "dst",
    "volume_bytes",
    "spine",
    "udp_port",
    "start_s",
    "end_s",
    "fct_s",
    "throughput_bps",
    "min_rate_bps",
];

fn trace_rows(scenario: &str, runs: &[RunOutcome]) -> Vec<TraceRow> {
    let mut runs: Vec<&RunOutcome> = runs.iter().collect();
    runs.sort_by_key(|r| (r.failures, r.scheme, r.seed));
    let mut rows = Vec::new();
    for run in runs {
        let mut records: Vec<_> = run.output.records.iter().collect();
        records.sort_by_key(|r| (r.job_id, r.iteration));
        for rec in records {
            for f in &rec.flow_records {
                rows.push(TraceRow {
                    scenario: scenario.to_string(),
                    scheme: run.scheme.name(),
                    seed: run.seed,
                    failures: run.failures,
                    job: rec.job_id.to_string(),
                    iteration: rec.iteration,
                    flow: f.id.to_string(),
                    src: f.src.to_string(),
                    dst: f.dst.to_string(),
                    volume_bytes: f.volume,
                    spine: f.route.spine(),
                    udp_port: f.udp_port,
                    start_s: f.start,
                    end_s: f.end,
                    fct_s: f.fct,
                    throughput_bps: f.throughput,
                    min_rate_bps: f.min_rate,
                });
            }
        }
    }
    rows
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub rows: Vec<ResultRow>,
    pub summary: Summary,
}

/// `run`: CSV of result rows at `out`, summary JSON beside it, and a per-flow trace if asked.
pub fn cmd_run(cfg: &ScenarioConfig, out: &Path, trace: bool) -> Result<RunReport, CliError> {
    let mut files = Outputs::new();
    let (rows, runs) = simulate(cfg, None)?;
    let summary = summarize(cfg, &rows, &runs, false);
    files.csv(out, &RESULT_HEADER, &rows)?;
    files.json(&summary_path(out), &summary)?;
    if trace {
        files.csv(&trace_path(out), &TRACE_HEADER, &trace_rows(&cfg.name, &runs))?;
    }
    files.commit();
    Ok(RunReport { rows, summary })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValidateOptions {
    pub instances: usize,
    pub seed: u64,
    pub max_tors: usize,
    pub max_spines: usize,
    pub max_commodities: usize,
    /// Extra spines per instance that are failed before routing.
    pub failed_spines: usize,
}

impl ValidateOptions {
    pub fn from_config(v: &ValidateConfig, seed: u64) -> Self {
        ValidateOptions {
            instances: v.instances,
            seed,
            max_tors: v.max_tors,
            max_spines: v.max_spines,
            max_commodities: v.max_commodities,
            failed_spines: 0,
        }
    }
}

/// A small instance where a bound did not hold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Counterexample {
    pub instance: usize,
    pub tors: usize,
    pub spines: usize,
    pub failed: Vec<usize>,
    pub commodities: Vec<(usize, usize)>,
    pub greedy: u32,
    pub edge_coloring: u32,
    pub exact: u32,
    pub coloring_bound: u32,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidateReport {
    pub options: ValidateOptions,
    /// Largest greedy / exact ratio of max spine-link load.
    pub max_ratio: f64,
    /// Instances where greedy exceeded twice the optimum.
    pub greedy_violations: Vec<Counterexample>,
    /// Fraction of instances where edge colouring matched the optimum.
    pub coloring_equality_rate: f64,
    /// Instances where edge colouring missed ceil(Δ / live spines) or the optimum.
    pub coloring_violations: Vec<Counterexample>,
}

impl ValidateReport {
    pub fn passed(&self) -> bool {
        self.greedy_violations.is_empty() && self.coloring_violations.is_empty()
    }
}

/// Largest number of commodities sharing a source ToR or a destination ToR.
fn tor_degree(pairs: &[(usize, usize)]) -> u32 {
    let mut out: BTreeMap<usize, u32> = BTreeMap::new();
    let mut inn: BTreeMap<usize, u32> = BTreeMap::new();
    for &(s, d) in pairs {
        *out.entry(s).or_default() += 1;
        *inn.entry(d).or_default() += 1;
    }
    out.values().chain(inn.values()).copied().max().unwrap_or(0)
}

/// `validate`: greedy against the exact optimum, and edge colouring against both the optimum and its closed form.
pub fn cmd_validate(opts: &ValidateOptions) -> Result<ValidateReport, CliError> {
    if opts.max_tors < 2 || opts.max_spines < 1 || opts.max_commodities < 1 {
        return Err(CliError::Config("validate limits: need max_tors >= 2, max_spines >= 1, max_commodities >= 1".into()));
    }
    let limits = ExactLimits::default();
    if opts.max_commodities > limits.max_commodities {
        return Err(CliError::Config(format!(
            "max_commodities: {} exceeds the exact search limit {}",
            opts.max_commodities, limits.max_commodities
        )));
    }
    let results: Vec<(Counterexample, bool, bool)> = (0..opts.instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(i as u64);
            let tors = rng.gen_range(2..=opts.max_tors);
            let live = rng.gen_range(1..=opts.max_spines);
            let spines = live + opts.failed_spines;
            let failed: Vec<usize> = {
                let mut f = sample(&mut rng, spines, opts.failed_spines).into_vec();
                f.sort_unstable();
                f
            };
            let topo = ClosTopology::new(spines, tors, 1, 1, 1.0)
                .and_then(|t| t.with_failed_spines(failed.iter().copied()))
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            let n = rng.gen_range(1..=opts.max_commodities);
            let pairs: Vec<(usize, usize)> = (0..n)
                .map(|_| {
                    let s = rng.gen_range(0..tors);
                    let d = (s + rng.gen_range(1..tors)) % tors;
                    (s, d)
                })
                .collect();
            let cs: Vec<CommoditySpec> = pairs
                .iter()
                .enumerate()
                .map(|(k, &(s, d))| CommoditySpec {
                    id: CommodityId::standalone(k),
                    job_id: JobId(0),
                    src: Endpoint::new(s, 0, 0),
                    dst: Endpoint::new(d, 0, 0),
                    volume: 1,
                })
                .collect();
            let run = |r: Result<_, crate::routing::RoutingError>| {
                r.map(|c| max_link_load(&c, &topo, LinkScope::SpineLinksOnly))
                    .map_err(|e| CliError::Runtime(format!("instance {i}: {e}")))
            };
            let greedy = run(greedy_assign(&cs, &topo))?;
            let edge_coloring = run(edge_color_assign(&cs, &topo))?;
            let exact = run(exact_assign(&cs, &topo, &limits))?;
            let coloring_bound = tor_degree(&pairs).div_ceil(live as u32);
            let ex = Counterexample {
                instance: i,
                tors,
                spines,
                failed,
                commodities: pairs,
                greedy,
                edge_coloring,
                exact,
                coloring_bound,
            };
            let greedy_ok = greedy <= 2 * exact;
            let coloring_ok = edge_coloring == coloring_bound && edge_coloring == exact;
            Ok((ex, greedy_ok, coloring_ok))
        })
        .collect::<Result<_, CliError>>()?;

    let max_ratio = results
        .iter()
        .filter(|(e, ..)| e.exact > 0)
        .map(|(e, ..)| e.greedy as f64 / e.exact as f64)
        .fold(if results.is_empty() { 0.0 } else { 1.0 }, f64::max);
    let equal = results.iter().filter(|(e, ..)| e.edge_coloring == e.exact).count();
    Ok(ValidateReport {
        options: *opts,
        max_ratio,
        greedy_violations: results.iter().filter(|r| !r.1).map(|r| r.0.clone()).collect(),
        coloring_equality_rate: if results.is_empty() { 1.0 } else { equal as f64 / results.len() as f64 },
        coloring_violations: results.iter().filter(|r| !r.2).map(|r| r.0.clone()).collect(),
    })
}

/// Writes a validate report as JSON.
pub fn write_validate_report(report: &ValidateReport, out: &Path) -> Result<(), CliError> {
    let mut files = Outputs::new();
    files.json(out, report)?;
    files.commit();
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub scheme: String,
    pub count: usize,
    pub median_s: f64,
}

/// `bench`: median controller runtime per (scheme, commodity count) on random instances.
pub fn cmd_bench(
    topo: &ClosTopology,
    counts: &[usize],
    schemes: &[Scheme],
    seed: u64,
    out: &Path,
) -> Result<Vec<BenchRow>, CliError> {
    let mut files = Outputs::new();
    let mut rows = Vec::new();
    for &scheme in schemes {
        let times = measure_scheme_runtime(scheme, counts, topo, seed).map_err(|e| CliError::Runtime(e.to_string()))?;
        rows.extend(times.into_iter().map(|(count, median_s)| BenchRow {
            scheme: scheme.name().to_string(),
            count,
            median_s,
        }));
    }
    files.csv(out, &["scheme", "count", "median_s"], &rows)?;
    files.commit();
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct FailsweepReport {
    pub rows: Vec<ResultRow>,
    pub summary: Summary,
}

impl FailsweepReport {
    pub fn passed(&self) -> bool {
        self.summary.validation.iter().all(ValidateReport::passed)
    }
}

/// `failsweep`: `run` once per failure count, failing that many random spines at `failures.sweep_time_s`.
///
/// Each count also validates greedy on small instances with that many failed spines.
pub fn cmd_failsweep(cfg: &ScenarioConfig, counts: &[usize], out: &Path, trace: bool) -> Result<FailsweepReport, CliError> {
    cfg.check_sweep_counts(counts, "failsweep counts")?;
    let mut files = Outputs::new();
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    let mut validation = Vec::new();
    for &k in counts {
        let events: Vec<FailureEvent> =
            if k == 0 { Vec::new() } else { vec![FailureEvent { time: cfg.failures.sweep_time_s, count: k }] };
        let (r, o) = simulate(cfg, Some(&events))?;
        rows.extend(r);
        runs.extend(o);
        let mut opts = ValidateOptions::from_config(&cfg.validate, cfg.seeds[0] ^ k as u64);
        opts.instances = cfg.failures.validate_instances;
        opts.failed_spines = k;
        validation.push(cmd_validate(&opts)?);
    }
    sort_rows(&mut rows);
    let mut summary = summarize(cfg, &rows, &runs, true);
    summary.validation = validation;
    files.csv(out, &RESULT_HEADER, &rows)?;
    files.json(&summary_path(out), &summary)?;
    if trace {
        files.csv(&trace_path(out), &TRACE_HEADER, &trace_rows(&cfg.name, &runs))?;
    }
    files.commit();
    Ok(FailsweepReport { rows, summary })
}
