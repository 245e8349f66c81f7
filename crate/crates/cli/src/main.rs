use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use tlsafe::agent::Agent;
use tlsafe::harness::{
    read_trajectories, replay, run_evaluation, run_training, RunConfig, RunPaths, Task,
};

#[derive(Parser)]
#[command(name = "tlsafe", version, about = "Automaton-guided safe RL experiments")]
struct Cli {
    /// Run configuration (TOML). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run only this seed instead of `run.seeds`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root; overrides TLSAFE_OUT and `run.out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// One of rl, rl+cbf, rl+clf, rl+cbf+clf, clf+cbf.
    #[arg(long, global = true)]
    configuration: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent per seed and write metrics, trajectories and a checkpoint.
    Train,
    /// Evaluate trained checkpoints with barriers on.
    Eval {
        /// Checkpoint to load; defaults to the one in the run directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compile the task formula and print the automaton.
    CompileFsa {
        #[arg(long, value_enum, default_value_t = Format::Dot)]
        format: Format,
    },
    /// Re-integrate a trajectory file and check it reproduces exactly.
    Replay {
        /// Trajectory file; defaults to the one in the run directory.
        #[arg(long)]
        trajectories: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Dot,
    Json,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(c) = &cli.configuration {
        cfg.run.configuration = c.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn seeds(cli: &Cli, cfg: &RunConfig) -> Vec<u64> {
    cli.seed.map(|s| vec![s]).unwrap_or_else(|| cfg.run.seeds.clone())
}

fn paths(cli: &Cli, cfg: &RunConfig, seed: u64) -> RunPaths {
    match &cli.out {
        Some(root) => RunPaths::under(root, &cfg.run.configuration, seed),
        None => RunPaths::new(cfg, seed),
    }
}

fn load_agent(path: &Path, seed: u64) -> Result<Agent> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Agent::from_json(&text, seed)?)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Train => {
            for seed in seeds(&cli, &cfg) {
                let p = paths(&cli, &cfg, seed);
                let summary = run_training(&cfg, seed, &p)?;
                let last = summary.rows.last();
                println!(
                    "{} seed {seed}: {} iterations, final return {:.3}, {} fallback steps -> {}",
                    cfg.run.configuration,
                    summary.rows.len(),
                    last.map_or(f64::NAN, |r| r.return_mean),
                    summary.fallback_steps,
                    p.dir.display()
                );
            }
        }
        Command::Eval { checkpoint } => {
            let seeds = seeds(&cli, &cfg);
            if checkpoint.is_some() && seeds.len() > 1 {
                bail!("--checkpoint needs a single --seed");
            }
            for seed in seeds {
                let p = paths(&cli, &cfg, seed);
                let ckpt = checkpoint.clone().unwrap_or_else(|| p.checkpoint());
                let agent = load_agent(&ckpt, seed)?;
                let summary = run_evaluation(&cfg, &agent, Some(&p.eval()))?;
                println!(
                    "{} seed {seed}: success {:.2} over {} trials -> {}",
                    cfg.run.configuration,
                    summary.success_rate,
                    summary.trials.len(),
                    p.eval().display()
                );
            }
        }
        Command::CompileFsa { format } => {
            let task = Task::new(&cfg.task, &cfg.env)?;
            match format {
                Format::Dot => print!("{}", task.fsa().to_dot()),
                Format::Json => println!("{}", task.fsa().to_json()),
            }
        }
        Command::Replay { trajectories } => {
            let path = match trajectories {
                Some(p) => p.clone(),
                None => paths(&cli, &cfg, seeds(&cli, &cfg)[0]).trajectories(),
            };
            let records = read_trajectories(&path)?;
            let summary = replay(&records, &cfg.env)?;
            println!(
                "{}: {} episodes, {} steps reproduced, total reward {:.3}, {} fallback steps",
                path.display(),
                summary.episodes,
                summary.steps,
                summary.total_reward,
                summary.fallback_steps
            );
        }
    }
    Ok(())
}
