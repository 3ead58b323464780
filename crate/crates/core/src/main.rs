use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use clostrain::cli::{
    cmd_bench, cmd_failsweep, cmd_run, cmd_validate, parse_schemes, write_validate_report, CliError, ScenarioConfig,
    ValidateOptions,
};

#[derive(Parser)]
#[command(name = "clostrain", version, about = "Path assignment and flow-level simulation for ML training on Clos fabrics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario config (TOML); the bundled default when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replace the configured seeds with this one.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated scheme list, replacing the configured one.
    #[arg(long, value_delimiter = ',')]
    schemes: Option<Vec<String>>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate every (scheme, seed) pair and write result rows as CSV.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Also write a per-flow trace CSV.
        #[arg(long)]
        trace: bool,
    },
    /// Check greedy and edge colouring against the exact optimum on small random instances.
    Validate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        instances: Option<usize>,
        #[arg(long)]
        max_tors: Option<usize>,
        #[arg(long)]
        max_spines: Option<usize>,
        #[arg(long)]
        max_commodities: Option<usize>,
        /// Write the report as JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time the routing schemes on random commodity sets.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        counts: Option<Vec<usize>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeat `run` with k spines failing mid-run, for each k.
    Failsweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        counts: Option<Vec<usize>>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trace: bool,
    },
}

fn load(common: &Common) -> Result<ScenarioConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default_config(),
    };
    if let Some(s) = common.seed {
        cfg.seeds = vec![s];
    }
    if let Some(s) = &common.schemes {
        parse_schemes(s, "--schemes")?;
        cfg.schemes = s.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run { common, out, trace } => {
            let cfg = load(&common)?;
            let report = cmd_run(&cfg, &out, trace)?;
            println!("wrote {} rows to {}", report.rows.len(), out.display());
            for (scheme, s) in &report.summary.schemes {
                if let Some(t) = s.means.get("allreduce_time_s") {
                    println!("{scheme}: mean allreduce_time_s {t}");
                }
            }
        }
        Command::Validate { common, instances, max_tors, max_spines, max_commodities, out } => {
            let cfg = load(&common)?;
            let mut opts = ValidateOptions::from_config(&cfg.validate, cfg.seeds[0]);
            opts.instances = instances.unwrap_or(opts.instances);
            opts.max_tors = max_tors.unwrap_or(opts.max_tors);
            opts.max_spines = max_spines.unwrap_or(opts.max_spines);
            opts.max_commodities = max_commodities.unwrap_or(opts.max_commodities);
            let report = cmd_validate(&opts)?;
            match &out {
                Some(p) => write_validate_report(&report, p)?,
                None => println!("{}", serde_json::to_string_pretty(&report).expect("report serializes")),
            }
            eprintln!(
                "{} instances, max greedy/exact ratio {}, edge-colouring optimal on {:.1}%",
                opts.instances,
                report.max_ratio,
                100.0 * report.coloring_equality_rate
            );
            if !report.passed() {
                return Err(CliError::Invariant(format!(
                    "{} greedy and {} edge-colouring counterexamples",
                    report.greedy_violations.len(),
                    report.coloring_violations.len()
                )));
            }
        }
        Command::Bench { common, counts, out } => {
            let mut cfg = load(&common)?;
            if common.schemes.is_none() {
                cfg.schemes = cfg.bench.schemes.clone();
            }
            let schemes = cfg.schemes()?;
            let counts = counts.unwrap_or_else(|| cfg.bench.counts.clone());
            let rows = cmd_bench(&cfg.topology()?, &counts, &schemes, cfg.seeds[0], &out)?;
            for r in rows {
                println!("{} {} {}", r.scheme, r.count, r.median_s);
            }
        }
        Command::Failsweep { common, counts, out, trace } => {
            let cfg = load(&common)?;
            let counts = counts.unwrap_or_else(|| cfg.failures.sweep_counts.clone());
            let report = cmd_failsweep(&cfg, &counts, &out, trace)?;
            println!("wrote {} rows to {}", report.rows.len(), out.display());
            if !report.passed() {
                return Err(CliError::Invariant("post-failure validation found counterexamples".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
