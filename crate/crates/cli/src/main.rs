use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qpn_core::a2c::{evaluate_state, train, Checkpoint, TrainOptions};
use qpn_core::harness::{bench, render_routes_svg, render_table, HarnessError, RunConfig};
use qpn_core::{EnvState, Instance, Variant};

#[derive(Parser)]
#[command(
    name = "qpn",
    version,
    about = "Train, evaluate and benchmark CVRP pointer-network agents"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one policy with A2C.
    Train {
        #[arg(long)]
        variant: Variant,
        /// JSON run configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Override the number of training episodes.
        #[arg(long)]
        episodes: Option<usize>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Greedy rollout of a checkpoint on an instance file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every listed variant over several seeds and aggregate.
    Bench {
        /// Comma-separated variants, e.g. `cpn,hqp,fqp`.
        #[arg(long, value_delimiter = ',', required = true)]
        variants: Vec<Variant>,
        /// Number of seeds, run as 0..N.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Write the initial state of a seeded episode as JSON.
    Instance {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, HarnessError> {
    path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
}

fn write(path: &Path, text: &str) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

fn to_json<T: serde::Serialize>(what: &str, value: &T) -> Result<String, HarnessError> {
    serde_json::to_string_pretty(value).map_err(|e| HarnessError::json(what, e))
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Train {
            variant,
            config,
            seed,
            out,
            episodes,
            resume,
        } => {
            let mut resolved = load_config(config.as_deref())?.resolve(variant)?;
            if let Some(n) = episodes {
                resolved.train.episodes = n;
            }
            fs::create_dir_all(&out).map_err(|e| HarnessError::io(&out, e))?;
            write(&out.join("config.json"), &to_json("config", &resolved)?)?;
            let resume = resume.map(|p| Checkpoint::load(&p)).transpose()?;
            let options = TrainOptions {
                out_dir: Some(out.clone()),
                resume,
                stop_at: None,
            };
            let run = train(
                &resolved.env,
                &resolved.policy,
                &resolved.train,
                seed,
                &options,
            )?;
            if let (Some(first), Some(last)) = (run.initial_evaluation(), run.final_evaluation()) {
                println!(
                    "{variant} seed {seed}: greedy reward {:.4} -> {:.4}, distance {:.4}, served {}",
                    first.metrics.reward, last.metrics.reward, last.metrics.distance, last.metrics.served
                );
            }
        }
        Command::Eval {
            checkpoint,
            instance,
            out,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let policy = ck.restore()?;
            let text = fs::read_to_string(&instance).map_err(|e| HarnessError::io(&instance, e))?;
            let inst = Instance::from_json(&text)?;
            let spec = policy.spec();
            if inst.n_clients != spec.n_clients || inst.n_vehicles != spec.n_vehicles {
                return Err(HarnessError::Config(format!(
                    "instance has {} clients and {} vehicles; checkpoint expects {} and {}",
                    inst.n_clients, inst.n_vehicles, spec.n_clients, spec.n_vehicles
                )));
            }
            let state = EnvState::from_instance(&inst, &ck.env)?;
            let ev = evaluate_state(state, &policy, ck.seed, ck.episode)?;
            fs::create_dir_all(&out).map_err(|e| HarnessError::io(&out, e))?;
            write(&out.join("metrics.json"), &to_json("metrics", &ev.metrics)?)?;
            write(&out.join("routes.json"), &to_json("routes", &ev.routes)?)?;
            write(
                &out.join("trajectory.json"),
                &to_json("trajectory", &ev.trajectory)?,
            )?;
            render_routes_svg(&inst, &ev.routes, &out.join("routes.svg"))?;
            println!("{}", to_json("metrics", &ev.metrics)?);
        }
        Command::Bench {
            variants,
            seeds,
            config,
            out,
            episodes,
        } => {
            let cfg = load_config(config.as_deref())?;
            let seeds: Vec<u64> = (0..seeds).collect();
            let report = bench(&cfg, &variants, &seeds, episodes, &out)?;
            print!("{}", render_table(&report.table));
        }
        Command::Instance { seed, out, config } => {
            let cfg = load_config(config.as_deref())?;
            let state = EnvState::reset(&cfg.env, seed)?;
            write(&out, &state.to_instance().to_json())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
