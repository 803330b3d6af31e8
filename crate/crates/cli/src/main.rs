use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};
use mosaic_cli::commands::{self, Ctx, EvalFeed, StreamArgs};
use mosaic_cli::{ConfigError, ExperimentConfig, TrainMethod};
use mosaic_core::policy::adapt::Strategy;
use mosaic_core::teleop::ChannelPreset;

#[derive(Parser)]
#[command(name = "mosaic", version, about = "Desk-scale motion tracking harness on a toy humanoid")]
struct Cli {
    /// Seed for every random stream (overrides the config's `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to every core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Vr,
    Mocap,
}

#[derive(Subcommand)]
enum Command {
    /// Validate clips and copy them into a bank directory with an index.
    Ingest { dir: PathBuf },
    /// Check clip files; exits nonzero if any is invalid.
    Validate { path: PathBuf },
    /// Compare the sampler's analytic distribution with empirical draws.
    SampleStats {
        #[arg(long)]
        bank: Option<PathBuf>,
        #[arg(long)]
        draws: Option<usize>,
        /// Saved sampler state (JSON) instead of a fresh one.
        #[arg(long)]
        state: Option<PathBuf>,
        #[arg(long)]
        step: Option<u64>,
    },
    /// Per-term rewards for one robot/reference state pair.
    RewardEval {
        /// JSON object with `robot` and `reference` frame states.
        #[arg(long)]
        pair: PathBuf,
        #[arg(long)]
        rewards: Option<PathBuf>,
    },
    /// Train a tracking policy on a bank.
    Train {
        #[arg(long)]
        bank: Option<PathBuf>,
        /// Trainer config (TOML) replacing the `train` or `imitation` section.
        #[arg(long)]
        cfg: Option<PathBuf>,
        #[arg(long, value_enum)]
        method: Option<TrainMethod>,
        #[arg(long)]
        max_steps: Option<u64>,
    },
    /// Adapt a trained policy to interface data.
    Adapt {
        #[arg(long)]
        strategy: Option<Strategy>,
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        adapt_data: Option<PathBuf>,
        /// General-regime clips.
        #[arg(long)]
        bank: Option<PathBuf>,
        /// Adaptation config (TOML) replacing the `adapt` section.
        #[arg(long)]
        cfg: Option<PathBuf>,
    },
    /// Evaluate a checkpoint (or the `oracle` policy) on a bank.
    Eval {
        #[arg(long)]
        bank: Option<PathBuf>,
        #[arg(long)]
        policy: String,
        #[arg(long)]
        episodes: Option<usize>,
        /// Feed references through the configured interface shift.
        #[arg(long)]
        stream: bool,
    },
    /// Replay a clip through a simulated teleoperation channel.
    StreamSim {
        #[arg(long)]
        clip: PathBuf,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        /// One-stage channel latency (s).
        #[arg(long)]
        latency: Option<f64>,
        #[arg(long, default_value_t = 0.0)]
        jitter: f64,
        #[arg(long, default_value_t = 0.0)]
        drop: f64,
        #[arg(long)]
        reorder: bool,
        /// Delay statistics CSV.
        #[arg(long)]
        stats: Option<PathBuf>,
        /// Delivered packets as JSON lines.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Periodic motion models.
    Fld {
        #[command(subcommand)]
        command: FldCommand,
    },
    /// Summarize run directories.
    Report { dirs: Vec<PathBuf> },
    /// Run the configured experiment end to end.
    Run,
    /// Write a small demo bank, adaptation clips and a reward state pair.
    MakeDemo,
}

#[derive(Subcommand)]
enum FldCommand {
    /// Fit per-segment periodic models and a style mixture.
    Fit {
        #[arg(long)]
        clips: PathBuf,
        #[arg(long)]
        harmonics: Option<usize>,
        #[arg(long)]
        components: Option<usize>,
    },
    /// Generate clips from a fitted library.
    Gen {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        hours: f64,
        #[arg(long)]
        clip_seconds: Option<f64>,
    },
}

/// Command-line arguments as recorded in manifests. The output location is
/// masked and the thread count dropped (it never changes results), so runs
/// into different directories or on different machines compare equal.
fn recorded_args() -> Vec<String> {
    let mut out = Vec::new();
    let mut args = std::env::args().skip(1);
    while let Some(a) = args.next() {
        if a == "--out" {
            out.push(a);
            if args.next().is_some() {
                out.push("<out>".into());
            }
        } else if a.starts_with("--out=") {
            out.push("--out=<out>".into());
        } else if a == "--threads" {
            args.next();
        } else if !a.starts_with("--threads=") {
            out.push(a);
        }
    }
    out
}

fn context(cli: &Cli) -> Result<Ctx> {
    let cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let seed = cli.seed.unwrap_or(cfg.seed);
    let cfg = cfg.with_seed(seed);
    cfg.validate()?;
    Ok(Ctx { seed, out: cli.out.clone().or_else(|| cfg.out.clone()), cfg, args: recorded_args() })
}

fn dispatch(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(ConfigError::new("threads", "must be at least 1").into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let ctx = context(&cli)?;
    match cli.command {
        Command::Ingest { dir } => commands::ingest(&ctx, &dir),
        Command::Validate { path } => commands::validate(&ctx, &path),
        Command::SampleStats { bank, draws, state, step } => {
            commands::sample_stats(&ctx, bank.as_ref(), draws, state.as_ref(), step)
        }
        Command::RewardEval { pair, rewards } => commands::reward_eval(&ctx, &pair, rewards.as_ref()),
        Command::Train { bank, cfg, method, max_steps } => {
            commands::train(&ctx, bank.as_ref(), cfg.as_ref(), method, max_steps)
        }
        Command::Adapt { strategy, base, adapt_data, bank, cfg } => {
            commands::adapt(&ctx, strategy, &base, adapt_data.as_ref(), bank.as_ref(), cfg.as_ref())
        }
        Command::Eval { bank, policy, episodes, stream } => {
            let feed = if stream { EvalFeed::Stream } else { EvalFeed::Direct };
            commands::eval(&ctx, bank.as_ref(), &policy, episodes, feed)
        }
        Command::StreamSim { clip, preset, latency, jitter, drop, reorder, stats, log } => {
            let preset = preset.map(|p| match p {
                Preset::Vr => ChannelPreset::Vr,
                Preset::Mocap => ChannelPreset::Mocap,
            });
            commands::stream_sim(&ctx, &StreamArgs { clip, preset, latency, jitter, drop, reorder, stats, log })
        }
        Command::Fld { command: FldCommand::Fit { clips, harmonics, components } } => {
            commands::fld_fit(&ctx, &clips, harmonics, components)
        }
        Command::Fld { command: FldCommand::Gen { model, hours, clip_seconds } } => {
            commands::fld_gen(&ctx, &model, hours, clip_seconds)
        }
        Command::Report { dirs } => commands::report(&ctx, &dirs),
        Command::Run => commands::run(&ctx),
        Command::MakeDemo => commands::make_demo(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MOSAIC_LOG", "warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
