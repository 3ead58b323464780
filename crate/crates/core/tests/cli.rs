use std::path::Path;
use std::process::Command;

use clostrain::cli::{
    cmd_bench, cmd_failsweep, cmd_run, cmd_validate, summary_path, trace_path, CliError, ScenarioConfig,
    ValidateOptions, DEFAULT_CONFIG,
};
use clostrain::routing::Scheme;
use clostrain::ClosTopology;

const SMALL: &str = r#"
name = "t"
seeds = [3, 1]
schemes = ["ecmp", "greedy"]

[topology]
spines = 4
tors = 8
hosts_per_tor = 2
nics_per_host = 4
link_capacity_bps = 100e9

[[models]]
name = "toy"
num_params = 2_000_000_000
tp = 2
pp = 2

[workload]
allowed_dp = [1, 2, 4]
iterations = 2

[[workload.jobs]]
model = "toy"
dp = 4

[[workload.jobs]]
model = "toy"
dp = 2
arrival_time_s = 0.5
"#;

fn small() -> ScenarioConfig {
    ScenarioConfig::from_toml(SMALL).unwrap()
}

fn config_error(text: &str) -> String {
    match ScenarioConfig::from_toml(text) {
        Err(CliError::Config(m)) => m,
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn bundled_config_parses() {
    let cfg = ScenarioConfig::from_toml(DEFAULT_CONFIG).unwrap();
    assert_eq!(cfg.schemes, ["greedy", "ecmp"]);
    assert_eq!(cfg.workload.jobs.len(), 3);
    assert_eq!(cfg.topology().unwrap().num_gpus(), 2048);
}

#[test]
fn errors_name_the_field() {
    assert!(config_error(&SMALL.replace(r#"["ecmp", "greedy"]"#, r#"["ecmp", "magic"]"#)).starts_with("schemes[1]"));
    assert!(config_error(&SMALL.replace("model = \"toy\"\ndp = 2", "model = \"nope\"\ndp = 2"))
        .starts_with("workload.jobs[1].model"));
    assert!(config_error(&SMALL.replace("dp = 4\n\n", "dp = 8\n\n")).starts_with("workload.jobs[0].dp"));
    assert!(config_error(&SMALL.replace("spines = 4", "spines = \"four\"")).starts_with("topology.spines"));
    assert!(config_error(&SMALL.replace("tors = 8", "tors = 8\nracks = 2")).starts_with("topology"));
    let failing = format!("{SMALL}\n[failures]\nevents = [{{ time = 1.0, count = 4 }}]\n");
    assert!(config_error(&failing).starts_with("failures.events[0].count"));
}

#[test]
fn run_writes_sorted_rows_for_every_scheme_and_job() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    let report = cmd_run(&small(), &out, true).unwrap();
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("scenario,scheme,job,metric,value,seed,failures"));
    assert_eq!(lines.count(), report.rows.len());
    assert_eq!(report.rows.len(), 2 * 2 * 2 * 5);
    assert_eq!(report.rows[0].scheme, "greedy");
    assert_eq!(report.rows[0].seed, 1);
    assert!(summary_path(&out).exists() && trace_path(&out).exists());
    assert!(report.rows.iter().all(|r| r.value.is_finite() && r.value >= 0.0));
}

#[test]
fn identical_inputs_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let read = |p: &Path| std::fs::read(p).unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    cmd_run(&small(), &a, true).unwrap();
    cmd_run(&small(), &b, true).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_eq!(read(&trace_path(&a)), read(&trace_path(&b)));
}

#[test]
fn failsweep_without_failures_matches_run() {
    let dir = tempfile::tempdir().unwrap();
    let (run, sweep) = (dir.path().join("run.csv"), dir.path().join("sweep.csv"));
    let cfg = small();
    cmd_run(&cfg, &run, false).unwrap();
    let report = cmd_failsweep(&cfg, &[0], &sweep, false).unwrap();
    assert!(report.passed());
    assert_eq!(std::fs::read(&run).unwrap(), std::fs::read(&sweep).unwrap());

    let report = cmd_failsweep(&cfg, &[1, 2], &sweep, false).unwrap();
    assert!(report.passed());
    assert!(report.rows.iter().any(|r| r.failures == 2));
    assert!(matches!(cmd_failsweep(&cfg, &[4], &sweep, false), Err(CliError::Config(_))));
}

#[test]
fn mixed_five_job_scenario_completes() {
    let text = r#"
seeds = [4]
schemes = ["greedy", "ecmp", "edge_coloring", "annealing"]
[topology]
spines = 32
tors = 64
hosts_per_tor = 4
nics_per_host = 8
link_capacity_bps = 100e9
[workload]
arrival_window_s = 10.0
iterations = 2
[workload.random]
min_jobs = 5
max_jobs = 5
"#;
    let dir = tempfile::tempdir().unwrap();
    let report = cmd_run(&ScenarioConfig::from_toml(text).unwrap(), &dir.path().join("m.csv"), false).unwrap();
    let jobs: std::collections::BTreeSet<_> = report.rows.iter().map(|r| r.job.clone()).collect();
    assert!(jobs.len() >= 2, "{jobs:?}");
    assert_eq!(report.summary.schemes.len(), 4);
}

#[test]
fn validate_reports() {
    let one = ValidateOptions {
        instances: 1,
        seed: 0,
        max_tors: 2,
        max_spines: 1,
        max_commodities: 1,
        failed_spines: 0,
    };
    let r = cmd_validate(&one).unwrap();
    assert_eq!(r.max_ratio, 1.0);
    assert!(r.passed());
    let many = ValidateOptions { instances: 300, max_tors: 8, max_spines: 4, max_commodities: 14, ..one };
    let r = cmd_validate(&many).unwrap();
    assert!(r.passed() && r.max_ratio <= 2.0 && r.coloring_equality_rate == 1.0);
    let too_big = ValidateOptions { max_commodities: 40, ..many };
    assert!(matches!(cmd_validate(&too_big), Err(CliError::Config(_))));
}

#[test]
fn bench_rows_and_empty_counts() {
    let dir = tempfile::tempdir().unwrap();
    let topo = ClosTopology::new(4, 8, 2, 2, 1.0).unwrap();
    let out = dir.path().join("b.csv");
    let rows = cmd_bench(&topo, &[], &[Scheme::Greedy], 1, &out).unwrap();
    assert!(rows.is_empty());
    assert_eq!(std::fs::read_to_string(&out).unwrap(), "scheme,count,median_s\n");
    let rows = cmd_bench(&topo, &[0, 50], &[Scheme::Greedy, Scheme::EdgeColoring], 1, &out).unwrap();
    assert_eq!(rows.len(), 4);
    let fresh = dir.path().join("exact.csv");
    let exact_too_large = cmd_bench(&topo, &[100], &[Scheme::Exact], 1, &fresh);
    assert!(matches!(exact_too_large, Err(CliError::Runtime(_))));
    assert!(!fresh.exists());
}

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_clostrain"))
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let out = dir.path().join("out.csv");

    let ok = binary().args(["run", "--trace", "--config"]).arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert_eq!(ok.code(), Some(0));
    assert!(out.exists());

    let bad = binary()
        .args(["run", "--schemes", "greedy,bogus", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("x.csv"))
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("--schemes[1]"));
    assert!(!dir.path().join("x.csv").exists());

    let v = binary().args(["validate", "--instances", "50", "--out"]).arg(dir.path().join("v.json")).status().unwrap();
    assert_eq!(v.code(), Some(0));

    let sweep = binary()
        .args(["failsweep", "--counts", "9", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("f.csv"))
        .status()
        .unwrap();
    assert_eq!(sweep.code(), Some(2));
}
