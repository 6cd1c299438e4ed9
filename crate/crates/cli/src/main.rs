use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use srm_core::envs::{optimal_return, policy_return};
use srm_core::harness::{compare, format_comparison, run_experiment, EnvConfig, ExperimentConfig, ExperimentSummary};
use srm_core::infer::{infer_minimal, Backend, Inference, SolveBudget, SolveStats};
use srm_core::io::{load_machine, machine_to_json, to_dot};
use srm_core::machine::equivalent_in_expectation_episodic;
use srm_core::trace::{propositions_of, read_records};
use srm_core::{DispersionBound, PropositionSet};

#[derive(Parser)]
#[command(
    name = "srm-lab",
    version,
    about = "Learn stochastic reward machines from noisy reward traces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Directory for events, curves, hypotheses and the summary.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Infer a minimal consistent machine from a trace file (one JSON trace per line).
    Infer {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        eps: f64,
        #[arg(long, default_value_t = 10)]
        size_cap: usize,
        /// `internal`, `search` or `smt:<path>`.
        #[arg(long, default_value = "internal")]
        backend: String,
        /// Comma-separated propositions; defaults to the names used in the traces.
        #[arg(long)]
        props: Option<String>,
        /// Per-size solver time limit in seconds.
        #[arg(long)]
        timeout: Option<f64>,
        #[arg(long)]
        max_nodes: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Evaluate a machine against an environment's ground truth.
    Eval {
        #[arg(long)]
        machine: PathBuf,
        /// Environment config, e.g. `{"kind": "mining"}`.
        #[arg(long)]
        env: PathBuf,
        /// Episode length; defaults to 400 for mining and 100 for harvest.
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long, default_value_t = 0.05)]
        tol: f64,
    },
    /// Print a machine in Graphviz format.
    ExportDot {
        #[arg(long)]
        machine: PathBuf,
    },
    /// Tabulate experiment summaries.
    Compare {
        #[arg(required = true)]
        summaries: Vec<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Train { config, out } => train(&config, out.as_deref()),
        Command::Infer {
            traces,
            eps,
            size_cap,
            backend,
            props,
            timeout,
            max_nodes,
            out,
            dot,
        } => {
            let budget = SolveBudget {
                max_nodes,
                per_size: timeout.map(Duration::from_secs_f64),
                total: None,
            };
            infer(
                &traces,
                eps,
                size_cap,
                &backend,
                props.as_deref(),
                budget,
                out.as_deref(),
                dot.as_deref(),
            )
        }
        Command::Eval {
            machine,
            env,
            max_steps,
            tol,
        } => eval(&machine, &env, max_steps, tol),
        Command::ExportDot { machine } => {
            print!("{}", to_dot(&load_machine(&machine)?));
            Ok(())
        }
        Command::Compare { summaries, json } => {
            let reports = summaries
                .iter()
                .map(|p| ExperimentSummary::load(p).with_context(|| format!("reading {}", p.display())))
                .collect::<Result<Vec<_>>>()?;
            let rows = compare(&reports)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&rows)?);
            } else {
                print!("{}", format_comparison(&rows));
            }
            Ok(())
        }
    }
}

fn train(config: &Path, out: Option<&Path>) -> Result<()> {
    let cfg = ExperimentConfig::load(config).with_context(|| format!("loading {}", config.display()))?;
    let report = run_experiment(&cfg, out)?;
    let s = &report.summary;
    println!(
        "{} ({}): {}/{} seeds converged, median episodes to threshold {}, final median rolling {:.3} of optimum {:.3}",
        s.name,
        s.algorithm,
        s.converged_seeds,
        s.seeds.len(),
        s.median_episodes_to_threshold.map_or("-".into(), |e| e.to_string()),
        s.final_median_rolling,
        s.optimum
    );
    for seed in &s.seeds {
        if let Some(err) = &seed.error {
            eprintln!("seed {}: {err}", seed.seed);
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn infer(
    traces: &Path,
    eps: f64,
    size_cap: usize,
    backend: &str,
    props: Option<&str>,
    budget: SolveBudget,
    out: Option<&Path>,
    dot: Option<&Path>,
) -> Result<()> {
    let file = fs::File::open(traces).with_context(|| format!("opening {}", traces.display()))?;
    let records = read_records(BufReader::new(file))?;
    let props = match props {
        Some(list) => PropositionSet::new(list.split(',').map(str::trim).filter(|s| !s.is_empty()))?,
        None => propositions_of(&records)?,
    };
    let traces = records
        .iter()
        .map(|r| r.to_trace(&props))
        .collect::<srm_core::Result<Vec<_>>>()?;
    let backend = Backend::parse(backend)?;
    let mut stats = SolveStats::default();
    let result = infer_minimal(
        &props,
        &traces,
        DispersionBound::new(eps)?,
        &backend,
        size_cap,
        &budget,
        &mut stats,
    )?;
    let machine = match result {
        Inference::Found(m) => m,
        Inference::CapHit { cap } => bail!("no {eps}-consistent machine with at most {cap} states"),
    };
    log::info!(
        "{} solver calls, {} nodes, {:.3}s",
        stats.calls,
        stats.nodes,
        stats.seconds
    );
    let text = machine_to_json(&machine);
    match out {
        Some(p) => fs::write(p, &text)?,
        None => println!("{text}"),
    }
    if let Some(p) = dot {
        fs::write(p, to_dot(&machine))?;
    }
    eprintln!("inferred {} states from {} traces", machine.num_states(), traces.len());
    Ok(())
}

fn eval(machine: &Path, env: &Path, max_steps: Option<usize>, tol: f64) -> Result<()> {
    let hypothesis = load_machine(machine)?;
    let env_cfg: EnvConfig =
        serde_json::from_str(&fs::read_to_string(env)?).with_context(|| format!("parsing {}", env.display()))?;
    let (mdp, truth) = env_cfg.build()?;
    if hypothesis.propositions() != truth.propositions() {
        bail!("machine propositions do not match the {} environment", env_cfg.kind());
    }
    let horizon = max_steps.unwrap_or(match env_cfg {
        EnvConfig::Mining(_) => 400,
        EnvConfig::Harvest(_) => 100,
    });
    let best = optimal_return(&mdp, &truth, horizon);
    let got = policy_return(&mdp, &truth, &hypothesis, horizon);
    let equivalent = equivalent_in_expectation_episodic(&hypothesis, &truth, tol, &mdp.alphabet())?;
    let report = json!({
        "env": env_cfg.kind(),
        "horizon": horizon,
        "optimal_return": best,
        "policy_return": got,
        "ratio": if best.abs() > 0.0 { got / best } else { 1.0 },
        "states": hypothesis.num_states(),
        "equivalent_in_expectation": equivalent,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
