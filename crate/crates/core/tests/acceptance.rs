//! One PASS/FAIL line per acceptance criterion. Exits nonzero if any fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clostrain::cli::{cmd_failsweep, cmd_run, cmd_validate, ScenarioConfig, ValidateOptions};
use clostrain::routing::{
    assign, decompose_components, ecmp_assign, greedy_assign, greedy_assign_parallel, max_link_load, LinkScope,
    PathChoice, Scheme, SchemeParams,
};
use clostrain::sim::{measure_scheme_runtime, random_commodities, run_scenario, ControllerModel, Scenario};
use clostrain::workload::{
    build_rings, place_job, ring_edge_volume, HardwareProfile, Job, JobId, ModelConfig, Occupancy,
};
use clostrain::{min_bandwidth, waterfill, ClosTopology, CommodityId, CommoditySpec, Endpoint};

// Tolerances.
const RATE_TOL: f64 = 1e-9;
const BLOOM_VOLUME_BITS: f64 = 205e9;
const BLOOM_VOLUME_REL: f64 = 0.10;
const BLOOM_ALLREDUCE: (f64, f64) = (2.0, 2.3);
const VALIDATE_INSTANCES: usize = 1000;
const VALIDATE_SECONDS: f64 = 60.0;
const GREEDY_1500_SECONDS: f64 = 0.100;
const ANNEAL_SPEEDUP: f64 = 10.0;
const SWEEP: [usize; 3] = [1, 4, 8];
const PARALLEL_TRIALS: u64 = 100;
const PARALLEL_COMMODITIES: usize = 200;

type Outcome = Result<String, String>;

fn config(name: &str) -> ScenarioConfig {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name);
    ScenarioConfig::load(&p).expect("bundled config")
}

fn fabric() -> ClosTopology {
    ClosTopology::new(32, 64, 4, 8, 100e9).unwrap()
}

fn unit(i: usize, (s, sh): (usize, usize), (d, dh): (usize, usize)) -> CommoditySpec {
    CommoditySpec {
        id: CommodityId::standalone(i),
        job_id: JobId(0),
        src: Endpoint::new(s, sh, 0),
        dst: Endpoint::new(d, dh, 0),
        volume: 1,
    }
}

fn rates(choice: &PathChoice, topo: &ClosTopology) -> clostrain::RateAllocation {
    let flows: Vec<_> = choice.assignment.iter().map(|(id, r)| (*id, r.clone())).collect();
    waterfill(&flows, topo)
}

fn greedy_bound(out: &Path) -> Outcome {
    let opts = ValidateOptions::from_config(&Default::default(), 2024);
    assert_eq!(opts.instances, VALIDATE_INSTANCES);
    let started = Instant::now();
    let report = cmd_validate(&opts).map_err(|e| e.to_string())?;
    let secs = started.elapsed().as_secs_f64();
    clostrain::cli::write_validate_report(&report, &out.join("validate.json")).map_err(|e| e.to_string())?;
    let msg = format!(
        "{} instances, max ratio {}, {} violations, {:.2}s",
        opts.instances,
        report.max_ratio,
        report.greedy_violations.len(),
        secs
    );
    if report.greedy_violations.is_empty() && report.max_ratio <= 2.0 && secs < VALIDATE_SECONDS {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn two_spine_example() -> Outcome {
    let topo = ClosTopology::new(2, 4, 2, 1, 1.0).unwrap();
    // t1→t2, t2→t1, t2→t3, t3→t1; a ToR's two flows use its two hosts
    let cs = vec![unit(0, (0, 0), (1, 0)), unit(1, (1, 0), (0, 0)), unit(2, (1, 1), (2, 0)), unit(3, (2, 0), (0, 1))];
    let mut notes = Vec::new();
    for scheme in [Scheme::Greedy, Scheme::EdgeColoring, Scheme::Exact] {
        let choice = assign(scheme, &cs, &topo, &SchemeParams::default()).map_err(|e| e.to_string())?;
        let load = max_link_load(&choice, &topo, LinkScope::SpineLinksOnly);
        let bw = min_bandwidth(&rates(&choice, &topo)).map_err(|e| e.to_string())?;
        if load != 1 || (bw - 1.0).abs() > RATE_TOL {
            return Err(format!("{scheme}: load {load}, min bandwidth {bw}"));
        }
        notes.push(format!("{scheme} load 1 bw 1"));
    }
    let seed = (0..10_000u64)
        .find(|&s| {
            let c = ecmp_assign(&cs, &topo, s).unwrap();
            c.spine_of(&cs[1].id) == c.spine_of(&cs[2].id)
        })
        .ok_or("no ECMP seed collides the two t2 flows")?;
    let alloc = rates(&ecmp_assign(&cs, &topo, seed).unwrap(), &topo);
    let (a, b) = (alloc.get(&cs[1].id).unwrap(), alloc.get(&cs[2].id).unwrap());
    if (a - 0.5).abs() > RATE_TOL || (b - 0.5).abs() > RATE_TOL {
        return Err(format!("ECMP seed {seed}: t2 rates {a}, {b}"));
    }
    notes.push(format!("ECMP seed {seed}: t2 rates 0.5, 0.5"));
    Ok(notes.join("; "))
}

fn bloom() -> Outcome {
    let model = ModelConfig::bloom();
    let edge_bits = ring_edge_volume(8, model.shard_bytes()) as f64 * 8.0;
    if (edge_bits - BLOOM_VOLUME_BITS).abs() > BLOOM_VOLUME_REL * BLOOM_VOLUME_BITS {
        return Err(format!("edge volume {edge_bits} bits"));
    }
    // one host per ToR: every ToR has as many spine uplinks as NICs
    let topo = ClosTopology::new(32, 64, 1, 8, 100e9).unwrap();
    let occupancy = Occupancy::new(&topo);
    let placement = place_job(&topo, &model, 8, &occupancy, 1).unwrap();
    let job = Job { id: JobId(0), model, dp: 8, arrival_time: 0.0, num_iterations: 3, placement };
    assert_eq!(build_rings(&job).unwrap().len(), 48);
    let scenario = Scenario {
        topology: topo,
        jobs: vec![job],
        controller: ControllerModel::new(Scheme::Greedy),
        failures: None,
        hardware: HardwareProfile::default(),
        seed: 1,
        audit: true,
    };
    let out = run_scenario(&scenario).map_err(|e| e.to_string())?;
    let times: Vec<f64> = out.records.iter().map(|r| r.allreduce_time).collect();
    let msg = format!("edge volume {:.4} Gbit, allreduce {:?} s", edge_bits / 1e9, times);
    if times.len() == 3 && times.iter().all(|t| (BLOOM_ALLREDUCE.0..=BLOOM_ALLREDUCE.1).contains(t)) {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn edge_coloring(out: &Path) -> Outcome {
    let text = std::fs::read_to_string(out.join("validate.json")).map_err(|e| e.to_string())?;
    let report: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let violations = report["coloring_violations"].as_array().map_or(usize::MAX, Vec::len);
    let rate = report["coloring_equality_rate"].as_f64().unwrap_or(0.0);
    let msg = format!("{violations} violations, equal to exact on {:.1}%", 100.0 * rate);
    if violations == 0 && rate == 1.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn runtime() -> Outcome {
    let topo = fabric();
    let g = measure_scheme_runtime(Scheme::Greedy, &[1500], &topo, 5).map_err(|e| e.to_string())?[0].1;
    let a = measure_scheme_runtime(Scheme::Annealing, &[1500], &topo, 5).map_err(|e| e.to_string())?[0].1;
    let msg = format!("greedy {:.3} ms, annealing {:.3} ms at 1500", g * 1e3, a * 1e3);
    if g <= GREEDY_1500_SECONDS && a >= ANNEAL_SPEEDUP * g {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn allreduce_by(csv_path: &Path) -> BTreeMap<(String, u64), BTreeMap<String, f64>> {
    let mut reader = csv::Reader::from_path(csv_path).unwrap();
    let mut out: BTreeMap<(String, u64), BTreeMap<String, f64>> = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec.unwrap();
        if &rec[3] == "allreduce_time_s" {
            out.entry((rec[2].to_string(), rec[5].parse().unwrap()))
                .or_default()
                .insert(rec[1].to_string(), rec[4].parse().unwrap());
        }
    }
    out
}

fn scheme_ordering(out: &Path) -> Outcome {
    let mixed = config("mixed.toml");
    if mixed.seeds.len() < 20 {
        return Err("fewer than 20 seeds".into());
    }
    let path = out.join("mixed.csv");
    cmd_run(&mixed, &path, false).map_err(|e| e.to_string())?;
    let by = allreduce_by(&path);
    let mean = |s: &str| by.values().map(|m| m[s]).sum::<f64>() / by.len() as f64;
    let (g, e) = (mean("greedy"), mean("ecmp"));

    let small = config("small.toml");
    let path = out.join("small.csv");
    cmd_run(&small, &path, false).map_err(|e| e.to_string())?;
    let worst = allreduce_by(&path)
        .values()
        .map(|m| if m["exact"] > 0.0 { m["greedy"] / m["exact"] } else { 1.0 })
        .fold(0.0, f64::max);
    let msg = format!(
        "{} seeds: mean allreduce greedy {g:.4} s, ecmp {e:.4} s; worst greedy/exact {worst:.4} over {} seeds",
        mixed.seeds.len(),
        small.seeds.len()
    );
    if g <= e && worst <= 2.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn failures(out: &Path) -> Outcome {
    let cfg = config("default.toml");
    let report = cmd_failsweep(&cfg, &SWEEP, &out.join("sweep.csv"), false).map_err(|e| e.to_string())?;
    let groups: std::collections::BTreeSet<usize> = report.rows.iter().map(|r| r.failures).collect();
    let ratios: Vec<f64> = report.summary.validation.iter().map(|v| v.max_ratio).collect();
    let msg = format!("k groups {groups:?}, post-failure max ratios {ratios:?}");
    if groups.into_iter().eq(SWEEP) && report.passed() {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn determinism(out: &Path) -> Outcome {
    let cfg = config("default.toml");
    let mut bytes = Vec::new();
    for i in 0..2 {
        let p = out.join(format!("det{i}.csv"));
        cmd_run(&cfg, &p, true).map_err(|e| e.to_string())?;
        let s = out.join(format!("sweep{i}.csv"));
        cmd_failsweep(&cfg, &[0, 4], &s, false).map_err(|e| e.to_string())?;
        let read = |p: PathBuf| std::fs::read(p).unwrap();
        bytes.push((read(p.clone()), read(clostrain::cli::trace_path(&p)), read(s)));
    }
    if bytes[0] == bytes[1] {
        Ok(format!("run, trace and failsweep CSVs identical ({} bytes)", bytes[0].0.len()))
    } else {
        Err("outputs differ between identical runs".into())
    }
}

fn parallel_greedy() -> Outcome {
    let topo = fabric();
    let mut mismatches = 0;
    for trial in 0..PARALLEL_TRIALS {
        let cs = random_commodities(&topo, PARALLEL_COMMODITIES, trial);
        let mut per_component = PathChoice::default();
        for part in decompose_components(&cs) {
            per_component.extend(greedy_assign(&part, &topo).unwrap());
        }
        let parallel = greedy_assign_parallel(&cs, &topo).unwrap();
        if parallel != per_component || parallel != greedy_assign(&cs, &topo).unwrap() {
            mismatches += 1;
        }
    }
    let msg = format!("{PARALLEL_TRIALS} trials of {PARALLEL_COMMODITIES} commodities, {mismatches} mismatches");
    if mismatches == 0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("1 greedy within 2x of exact", Box::new(|| greedy_bound(out))),
        ("2 two-spine example", Box::new(two_spine_example)),
        ("3 BLOOM back-of-envelope", Box::new(bloom)),
        ("4 edge colouring optimal", Box::new(|| edge_coloring(out))),
        ("5 greedy runtime", Box::new(runtime)),
        ("6 scheme ordering", Box::new(|| scheme_ordering(out))),
        ("7 failure robustness", Box::new(|| failures(out))),
        ("8 determinism", Box::new(|| determinism(out))),
        ("9 parallel greedy equivalence", Box::new(parallel_greedy)),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        let started = Instant::now();
        let (status, detail) = match check() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{status} criterion {name}: {detail} [{:.2}s]", started.elapsed().as_secs_f64());
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
