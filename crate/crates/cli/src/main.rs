//! Command-line front end: run scenarios, paired transfer comparisons, the
//! goal-search benchmark, trace replay, and the invariant suite.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use herdsim::coordinator::TraceFile;
use herdsim::goalsearch::{
    builtin_goal_world, parse_goal_map, run_goalsearch_experiment, GsParams, TrialConfig,
    REPORT_EPISODES,
};
use herdsim::harness::{
    make_report,
    compare, compare_report_text, parse_config, run_report_text, run_scenario, run_scenario_sim,
    write_atomic, ScenarioConfig, CODE_VERSION,
};
use herdsim::validate::run_all;

#[derive(Parser)]
#[command(name = "herdsim", version, about = "Cooperative herding simulator and benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key (`--set key=value`, repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its curve and report.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Also log the coordinator-inbound message trace to this file.
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Run the paired with/without-transfer comparison on shared seeds.
    Compare {
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Run the cooperative goal-search benchmark.
    Goalsearch {
        /// Goal map file (bundled arena when omitted).
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long, default_value_t = 40)]
        trials: usize,
        #[arg(long, default_value_t = 500)]
        episodes: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Disable per-step Q-table fusion.
        #[arg(long)]
        no_fusion: bool,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Replay a logged coordinator trace and print the state digest.
    Replay {
        #[arg(long)]
        trace: PathBuf,
    },
    /// Run the module invariant suites; exit 0 only if every check passes.
    Validate {
        /// Smaller sample counts (smoke mode).
        #[arg(long)]
        quick: bool,
    },
}

fn load_scenario(args: &ScenarioArgs) -> herdsim::Result<ScenarioConfig> {
    let mut cfg = match &args.config {
        Some(path) => parse_config(&std::fs::read_to_string(path)?)?,
        None => ScenarioConfig::default(),
    };
    for assignment in &args.sets {
        let (k, v) = assignment.split_once('=').ok_or_else(|| {
            herdsim::Error::Config(format!("--set needs KEY=VALUE, got `{assignment}`"))
        })?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

fn ensure_dir(dir: &Path) -> herdsim::Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn cmd_run(args: &ScenarioArgs, trace_out: Option<&Path>) -> herdsim::Result<()> {
    let cfg = load_scenario(args)?;
    ensure_dir(&args.out)?;
    let (curve, report) = if let Some(trace_path) = trace_out {
        let (curve, sim) = run_scenario_sim(&cfg, true)?;
        let trace = sim.trace_file().expect("tracing was enabled");
        write_atomic(trace_path, &trace.to_text())?;
        let report = make_report(&curve, &cfg);
        (curve, report)
    } else {
        run_scenario(&cfg)?
    };
    write_atomic(&args.out.join("curve.csv"), &curve.to_csv())?;
    write_atomic(&args.out.join("report.txt"), &run_report_text(&report))?;
    println!("wrote {}", args.out.join("curve.csv").display());
    println!("wrote {}", args.out.join("report.txt").display());
    Ok(())
}

fn cmd_compare(args: &ScenarioArgs) -> herdsim::Result<()> {
    let cfg = load_scenario(args)?;
    ensure_dir(&args.out)?;
    let result = compare(&cfg)?;
    write_atomic(&args.out.join("curve_with.csv"), &result.with_curve.to_csv())?;
    write_atomic(&args.out.join("curve_without.csv"), &result.without_curve.to_csv())?;
    write_atomic(&args.out.join("report.txt"), &compare_report_text(&result, &cfg))?;
    println!("transfer_rate={}", result.rate);
    println!("wrote {}", args.out.join("report.txt").display());
    Ok(())
}

fn cmd_goalsearch(
    map: Option<&Path>,
    trials: usize,
    episodes: usize,
    seed: u64,
    fusion: bool,
    out: &Path,
) -> herdsim::Result<()> {
    let world = match map {
        Some(path) => parse_goal_map(&std::fs::read_to_string(path)?)?,
        None => builtin_goal_world(),
    };
    let config = TrialConfig {
        episodes,
        trials,
        params: GsParams { fusion, ..GsParams::default() },
        seed,
    };
    let curves = run_goalsearch_experiment(&world, &config)?;
    ensure_dir(out)?;
    write_atomic(&out.join("goalsearch.csv"), &curves.to_csv())?;
    let mut report = format!("code_version={CODE_VERSION}\nfusion={fusion}\nseed={seed}\n");
    for agent in 0..3 {
        for &ep in &REPORT_EPISODES {
            if ep <= curves.episodes {
                report.push_str(&format!(
                    "agent{}_episode{}={}\n",
                    agent + 1,
                    ep,
                    curves.at_episode(agent, ep)
                ));
            }
        }
    }
    write_atomic(&out.join("goalsearch_report.txt"), &report)?;
    println!("wrote {}", out.join("goalsearch.csv").display());
    println!("wrote {}", out.join("goalsearch_report.txt").display());
    Ok(())
}

fn cmd_replay(trace_path: &Path) -> herdsim::Result<()> {
    let trace = TraceFile::from_text(&std::fs::read_to_string(trace_path)?)?;
    let state = trace.replay()?;
    let canonical = state.canonical_string();
    let digest: String = {
        use sha2::{Digest, Sha256};
        Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    };
    println!("messages={}", trace.messages.len());
    println!("counter1={} counter2={}", state.counter1, state.counter2);
    println!("closer={} elected={}", state.closer, state.closer_elected);
    println!("entrances={}", state.entrances.len());
    println!("state_digest={digest}");
    Ok(())
}

fn cmd_validate(quick: bool) -> ExitCode {
    let results = run_all(quick);
    let mut all_ok = true;
    for check in &results {
        match &check.result {
            Ok(()) => println!("{:<28} PASS", check.name),
            Err(msg) => {
                all_ok = false;
                println!("{:<28} FAIL  {msg}", check.name);
            }
        }
    }
    if all_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run { scenario, trace_out } => cmd_run(scenario, trace_out.as_deref()),
        Command::Compare { scenario } => cmd_compare(scenario),
        Command::Goalsearch { map, trials, episodes, seed, no_fusion, out } => {
            cmd_goalsearch(map.as_deref(), *trials, *episodes, *seed, !no_fusion, out)
        }
        Command::Replay { trace } => cmd_replay(trace),
        Command::Validate { quick } => return cmd_validate(*quick),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
