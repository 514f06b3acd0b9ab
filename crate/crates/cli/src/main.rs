//! `rallybot`: dataset preparation, training, descriptor builds and play.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 divergence or abort.

mod commands;
mod failure;
mod stack;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rallybot::config::{RunConfig, CONFIG_ENV};

use crate::failure::Failure;

#[derive(Parser, Debug)]
#[command(
    name = "rallybot",
    version,
    about = "Table-tennis skill library, controller and match simulator",
    long_about = "Table-tennis skill library, controller and match simulator.\n\n\
        A typical run: `dataset synth`, then `train skill|style|spin|film` as wanted, \
        then `descriptors build`, then `play match|tournament|ablate`.\n\
        Every artifact records the run seed and the config hash.\n\n\
        Exit codes: 0 success, 1 usage error, 2 data error, 3 divergence or abort."
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Global {
    /// Config file (TOML). Defaults are used when neither this nor the
    /// environment variable is set.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Run seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory artifact paths are relative to, overriding the config.
    #[arg(long, global = true)]
    root: Option<PathBuf>,
    /// Config override as a dotted key, e.g. `--set hlc.alpha=0.2`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Show, write or hash the effective config.
    #[command(subcommand)]
    Config(ConfigCmd),
    /// Build, import, fit, reflect and summarize the ball-state corpus.
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Train policy skills, the style model, the spin model or an adapter.
    #[command(subcommand)]
    Train(TrainCmd),
    /// Build or summarize per-skill descriptor tables.
    #[command(subcommand)]
    Descriptors(DescriptorsCmd),
    /// Play matches, tournaments and decision-timing ablations.
    #[command(subcommand)]
    Play(PlayCmd),
}

#[derive(Subcommand, Debug)]
enum ConfigCmd {
    /// Print the effective config as TOML.
    Show,
    /// Write the effective config to a file.
    Init {
        path: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Print the config hash.
    Hash,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ObserveKind {
    /// One flight per file.
    Flight,
    /// Rally streams with two paddle hits each.
    Rally,
}

#[derive(Subcommand, Debug)]
enum DatasetCmd {
    /// Generate a synthetic corpus into the dataset path.
    Synth {
        #[arg(long)]
        rally: Option<usize>,
        #[arg(long)]
        serve: Option<usize>,
    },
    /// Write synthetic 125 Hz observation files (t,x,y,z).
    Observe {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 5)]
        count: usize,
        #[arg(long, value_enum, default_value_t = ObserveKind::Flight)]
        kind: ObserveKind,
    },
    /// Segment observation streams, fit each segment and add the states.
    Import {
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        /// Mark imported balls as serves.
        #[arg(long)]
        serve: bool,
        #[arg(long)]
        cycle: Option<u32>,
    },
    /// Fit the initial state of single-flight files; writes a residual table.
    Fit {
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Append a mirrored copy of every record.
    Reflect {
        /// Write here instead of replacing the dataset.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Category counts per cycle.
    Stats,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StyleArg {
    Forehand,
    Backhand,
}

#[derive(Subcommand, Debug)]
enum TrainCmd {
    /// Train a linear policy skill with evolution strategies.
    Skill {
        #[arg(long, value_enum, default_value_t = StyleArg::Forehand)]
        style: StyleArg,
        /// Roster id to replace; defaults to the style's first generalist.
        #[arg(long)]
        id: Option<usize>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Train the forehand/backhand selector on paired generalist outcomes.
    Style,
    /// Train the serve spin classifier on synthetic strokes.
    Spin,
    /// Topspin correction of a trained skill: fine-tune, then an adapter.
    Film {
        #[arg(long)]
        skill: usize,
    },
}

#[derive(Subcommand, Debug)]
enum DescriptorsCmd {
    /// Simulate every skill on the dataset and save the tables.
    Build,
    /// Per-skill summary of saved tables.
    Report,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Main,
    Alternating,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AblationArg {
    /// First decision one or three steps after the perceived hit.
    Wait,
    /// One decision versus a decision every step.
    Redecide,
}

#[derive(Subcommand, Debug)]
enum PlayCmd {
    /// One best-of-three-games match.
    Match {
        #[arg(long)]
        opponent: Option<String>,
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
        /// Pick skills uniformly at random.
        #[arg(long)]
        uniform_random: bool,
    },
    /// Seeded matches against each profile, aggregated by tier.
    Tournament {
        #[arg(long)]
        matches: Option<usize>,
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
        #[arg(long)]
        uniform_random: bool,
    },
    /// Decision-timing ablation on the dataset's rally balls.
    Ablate {
        #[arg(long, value_enum, default_value_t = AblationArg::Wait)]
        kind: AblationArg,
        #[arg(long)]
        balls: Option<usize>,
    },
}

fn effective_config(g: &Global) -> Result<RunConfig, Failure> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p).map_err(Failure::usage)?,
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    for o in &g.overrides {
        cfg = cfg.with_override(o).map_err(Failure::usage)?;
    }
    if let Some(r) = &g.root {
        cfg.paths.root = r.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = effective_config(&cli.global)?;
    match cli.command {
        Command::Config(c) => match c {
            ConfigCmd::Show => commands::config_show(&cfg),
            ConfigCmd::Init { path, force } => commands::config_init(&cfg, &path, force),
            ConfigCmd::Hash => {
                println!("{}", cfg.hash());
                Ok(())
            }
        },
        Command::Dataset(c) => match c {
            DatasetCmd::Synth { rally, serve } => commands::dataset_synth(&cfg, rally, serve),
            DatasetCmd::Observe { out_dir, count, kind } => commands::dataset_observe(&cfg, &out_dir, count, kind),
            DatasetCmd::Import { inputs, serve, cycle } => commands::dataset_import(&cfg, &inputs, serve, cycle),
            DatasetCmd::Fit { inputs } => commands::dataset_fit(&cfg, &inputs),
            DatasetCmd::Reflect { out } => commands::dataset_reflect(&cfg, out.as_deref()),
            DatasetCmd::Stats => commands::dataset_stats(&cfg),
        },
        Command::Train(c) => match c {
            TrainCmd::Skill { style, id, iterations } => commands::train_skill(&cfg, style, id, iterations),
            TrainCmd::Style => commands::train_style(&cfg),
            TrainCmd::Spin => commands::train_spin(&cfg),
            TrainCmd::Film { skill } => commands::train_film(&cfg, skill),
        },
        Command::Descriptors(c) => match c {
            DescriptorsCmd::Build => commands::descriptors_build(&cfg),
            DescriptorsCmd::Report => commands::descriptors_report(&cfg),
        },
        Command::Play(c) => match c {
            PlayCmd::Match { opponent, variant, uniform_random } => {
                commands::play_match(&cfg, opponent.as_deref(), variant, uniform_random)
            }
            PlayCmd::Tournament { matches, variant, uniform_random } => {
                commands::play_tournament(&cfg, matches, variant, uniform_random)
            }
            PlayCmd::Ablate { kind, balls } => commands::play_ablate(&cfg, kind, balls),
        },
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
