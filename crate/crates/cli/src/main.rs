use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use medc_core::envs::EnvConfig;
use medc_core::harness::{
    parse_scenario, parse_shorthand, pretrain_expert, registry_command, replicate_figure, run_scenario, FigureOptions,
    HarnessError, RegistryCommand,
};
use medc_core::trainer::PpoConfig;

#[derive(Parser)]
#[command(name = "medc", version, about = "Multi-expert demonstration cloning experiments and model registry")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of a scenario file.
    Run { scenario: PathBuf },
    /// Run a preset comparison batch (fig5, fig7, fig8-frl, fig8-il, fleet, maze).
    Figure {
        name: String,
        #[arg(long, default_value = "figures")]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 500_000)]
        steps: usize,
        /// Upper bound on expert pretraining steps.
        #[arg(long, default_value_t = 3_000_000)]
        expert_steps: usize,
        /// Expert pretraining stops once greedy evaluation reaches this mean episode length.
        #[arg(long, default_value_t = 30.0)]
        expert_target: f64,
        /// Existing target-localization expert package.
        #[arg(long)]
        expert: Option<PathBuf>,
        /// Keep seeds that already finished in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Train a plain PPO model on a target-localization environment and package it.
    Pretrain {
        /// AyWz shorthand.
        #[arg(long, default_value = "A1W0")]
        env: String,
        #[arg(long, default_value_t = 10)]
        size: usize,
        #[arg(long, default_value_t = 500_000)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Stop at the first evaluation with mean episode length at or below this.
        #[arg(long)]
        target_length: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Model registry operations on a state directory.
    Registry {
        #[arg(long, default_value = "registry")]
        dir: PathBuf,
        #[command(subcommand)]
        verb: RegistryVerb,
    },
}

#[derive(Subcommand)]
enum RegistryVerb {
    /// Create an empty registry.
    Init,
    /// Register a user with a starting balance.
    AddUser { address: String, balance: u64 },
    /// Store a model package and list it under its application.
    AddModel {
        owner: String,
        package: PathBuf,
        #[arg(long)]
        description: Option<String>,
    },
    /// Pick the best models for a request, pay their owners, and copy the packages out.
    Allocate {
        requester: String,
        application: String,
        /// Requested environment details, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        details: Vec<u64>,
        /// Attribute weights for the distance, comma separated; equal by default.
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0.0)]
        min_model_rep: f64,
        #[arg(long, default_value_t = 0.0)]
        min_owner_rep: f64,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        price: u64,
        #[arg(long, default_value = "allocated")]
        out: PathBuf,
    },
    /// Score an allocated model in [0, 1].
    Review { requester: String, cid: String, score: f64 },
    /// Print every user's balance and reputation.
    Balances,
    /// Check the hash chain of the transaction ledger.
    VerifyLedger,
    /// Print or write the registry state as JSON.
    ExportState {
        #[arg(long)]
        out: Option<PathBuf>,
    },
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

fn execute(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Run { scenario } => {
            let cfg = parse_scenario(&scenario)?;
            let outcome = run_scenario(&cfg)?;
            for s in &outcome.seeds {
                println!("seed {} -> {} ({} rows), {}", s.seed, s.curve.display(), s.rows.len(), s.package.display());
            }
            println!("median -> {}", outcome.aggregate.display());
        }
        Command::Figure { name, out, seeds, steps, expert_steps, expert_target, expert, resume } => {
            let opts = FigureOptions {
                out,
                seeds,
                ppo: PpoConfig { total_steps: steps, ..PpoConfig::default() },
                expert_steps,
                expert_target: Some(expert_target),
                expert,
                resume,
            };
            let outcome = replicate_figure(&name, &opts)?;
            for (label, s) in &outcome.scenarios {
                println!("{label} -> {}", s.aggregate.display());
            }
            println!("comparison -> {}", outcome.comparison.display());
        }
        Command::Pretrain { env, size, steps, seed, target_length, out } => {
            let (agents, walls) = parse_shorthand(&env)
                .ok_or_else(|| HarnessError::Config { line: 0, message: format!("invalid AyWz shorthand {env:?}") })?;
            let env_cfg = EnvConfig::target_localization(size, size, agents, walls, seed);
            let ppo = PpoConfig { total_steps: steps, seed, ..PpoConfig::default() };
            let (_, reports) = pretrain_expert(&env_cfg, &ppo, target_length, &out)?;
            for r in &reports {
                println!("{} {:.2} {:.3} {}", r.step, r.mean_episode_length, r.mean_return, r.episodes);
            }
            println!("expert -> {}", out.display());
        }
        Command::Registry { dir, verb } => {
            let cmd = match verb {
                RegistryVerb::Init => RegistryCommand::Init,
                RegistryVerb::AddUser { address, balance } => RegistryCommand::AddUser { address, balance },
                RegistryVerb::AddModel { owner, package, description } => {
                    RegistryCommand::AddModel { owner, package, description }
                }
                RegistryVerb::Allocate {
                    requester,
                    application,
                    details,
                    weights,
                    min_model_rep,
                    min_owner_rep,
                    count,
                    price,
                    out,
                } => RegistryCommand::Allocate {
                    requester,
                    application,
                    details,
                    weights,
                    min_model_rep,
                    min_owner_rep,
                    count,
                    price,
                    out,
                },
                RegistryVerb::Review { requester, cid, score } => RegistryCommand::Review { requester, cid, score },
                RegistryVerb::Balances => RegistryCommand::Balances,
                RegistryVerb::VerifyLedger => RegistryCommand::VerifyLedger,
                RegistryVerb::ExportState { out } => RegistryCommand::ExportState { out },
            };
            print!("{}", registry_command(&dir, &cmd)?);
        }
    }
    Ok(())
}
