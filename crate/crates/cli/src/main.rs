//! `dgfilter`: phantom generation, training, filtering and evaluation.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, CommandFactory, FromArgMatches, Parser, Subcommand};
use dgfilter::filter::VoteRule;
use dgfilter::phantom::Position;
use dgfilter::Error;

use dgfilter_cli::commands::{self, FilterInput, InvertInput, KprobArgs};
use dgfilter_cli::config::{keys_help, CliConfig, SUBCOMMAND_SECTIONS};

const EXIT_USAGE: u8 = 2;
const EXIT_VALIDATION: u8 = 3;
const EXIT_IO: u8 = 4;
const EXIT_CORRUPTION: u8 = 5;

#[derive(Parser)]
#[command(name = "dgfilter", version, about = "Dynamic-graph false-positive filter for labeled bone point clouds")]
#[command(after_help = "Exit codes: 0 ok, 2 usage or config, 3 validation, 4 I/O, 5 corrupt or unparsable input.")]
struct Cli {
    /// Pipeline config file (TOML); missing keys take defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Master seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print tables as CSV.
    #[arg(long, global = true)]
    csv: bool,
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    /// Only warnings and errors on stderr.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate phantom scans: manifests, clouds and dataset.json.
    GenPhantom {
        /// Output directory [default: paths.data_dir].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated thorough positions, e.g. P0,P1; empty for none.
        #[arg(long, value_name = "LIST")]
        thorough: Option<String>,
        /// Comma-separated partial positions; empty for none.
        #[arg(long, value_name = "LIST")]
        partial: Option<String>,
    },
    /// Draw Monte Carlo batches from one cloud and write them as CSV.
    Sample {
        /// Cloud file (.csv or .ply).
        #[arg(long)]
        cloud: PathBuf,
        /// Output directory [default: <paths.run_dir>/batches].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Batches to draw [default: sample.n_clouds].
        #[arg(long)]
        n_clouds: Option<usize>,
        /// Points per batch [default: sample.n_points].
        #[arg(long)]
        n_points: Option<usize>,
    },
    /// Augment, sample and train on every thorough scan of a dataset.
    Train {
        /// Dataset directory [default: paths.data_dir].
        #[arg(long)]
        data: Option<PathBuf>,
        /// Where model.ckpt and metrics.csv go [default: paths.run_dir].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Epoch limit [default: train.max_epochs].
        #[arg(long)]
        max_epochs: Option<usize>,
        /// Batches per scan [default: sample.n_clouds].
        #[arg(long)]
        n_clouds: Option<usize>,
        /// Points per batch [default: sample.n_points].
        #[arg(long)]
        n_points: Option<usize>,
    },
    /// Filter clouds with a trained checkpoint.
    ///
    /// Without --cloud, filters every partial scan of the dataset and checks
    /// each against its manifest.
    Filter {
        /// Checkpoint to load [default: <paths.run_dir>/model.ckpt].
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Cloud to filter (repeatable).
        #[arg(long)]
        cloud: Vec<PathBuf>,
        /// Manifest the single --cloud must agree with.
        #[arg(long, requires = "cloud")]
        manifest: Option<PathBuf>,
        /// Dataset directory [default: paths.data_dir].
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory [default: <paths.run_dir>/filter].
        #[arg(long)]
        out: Option<PathBuf>,
        /// majority or any [default: filter.vote_rule].
        #[arg(long)]
        vote_rule: Option<VoteRule>,
        /// Neighbors inspected per point [default: filter.k].
        #[arg(long)]
        k: Option<usize>,
        /// Batches per cloud [default: filter.n_clouds].
        #[arg(long)]
        n_clouds: Option<usize>,
        /// Points per batch [default: filter.n_points].
        #[arg(long)]
        n_points: Option<usize>,
        /// Skip scoring points no batch sampled.
        #[arg(long)]
        no_residual: bool,
    },
    /// Map filter reports back onto frames and score frame precision.
    ///
    /// Without --report, inverts every report in <paths.run_dir>/filter.
    Invert {
        /// Filter report (.report.json) to invert.
        #[arg(long, requires = "manifest")]
        report: Option<PathBuf>,
        /// Manifest of the scan the report belongs to.
        #[arg(long, requires = "report")]
        manifest: Option<PathBuf>,
        /// Filtered cloud [default: rebuilt from the manifest].
        #[arg(long, requires = "report")]
        cloud: Option<PathBuf>,
        /// Dataset directory [default: paths.data_dir].
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory [default: <paths.run_dir>/overlays].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-position and mean frame precision.
    Eval {
        /// Overlay directory (repeatable) [default: each under <paths.run_dir>/overlays].
        #[arg(long, conflicts_with = "reference_counts")]
        overlays: Vec<PathBuf>,
        /// Score overlays built from the reference frame counts (P1 186/3, P2 200/6, P3 249/2).
        #[arg(long)]
        reference_counts: bool,
    },
    /// Probability that every batch holds at least k minority points.
    #[command(group = clap::ArgGroup::new("query").args(["p", "target"]).required(true).multiple(true))]
    Kprob {
        /// Minority class frequency.
        #[arg(long)]
        p: Option<f64>,
        /// Points per batch [default: sample.n_points].
        #[arg(long)]
        n_points: Option<u64>,
        /// Required minority points [default: filter.k].
        #[arg(long)]
        k: Option<u64>,
        /// Batches [default: sample.n_clouds].
        #[arg(long)]
        batches: Option<u64>,
        /// Also solve for the smallest frequency reaching this probability.
        #[arg(long)]
        target: Option<f64>,
    },
}

enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_) => EXIT_USAGE,
        Error::InvalidInput(_)
        | Error::EmptyInput(_)
        | Error::InsufficientPoints { .. }
        | Error::Domain(_)
        | Error::Validation(_)
        | Error::WrongFrame { .. } => EXIT_VALIDATION,
        Error::Io { .. } => EXIT_IO,
        Error::Parse { .. } | Error::Schema { .. } | Error::Corruption(_) => EXIT_CORRUPTION,
    }
}

fn command_with_key_docs() -> clap::Command {
    SUBCOMMAND_SECTIONS
        .iter()
        .fold(Cli::command(), |cmd, &(name, sections)| cmd.mut_subcommand(name, |sub| sub.after_help(keys_help(sections))))
}

fn positions(list: &str) -> Result<Vec<Position>, Failure> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| Failure::Usage(format!("unknown position '{s}' (expected P0..P3)"))))
        .collect()
}

fn run(cli: Cli) -> Result<String, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => CliConfig::load(path)?,
        None => CliConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let run_dir = cfg.paths.run_dir.clone();
    let data_dir = cfg.paths.data_dir.clone();
    let csv = cli.csv;

    let out = match cli.command {
        Command::GenPhantom { out, thorough, partial } => {
            if let Some(list) = thorough {
                cfg.phantom.thorough = positions(&list)?;
            }
            if let Some(list) = partial {
                cfg.phantom.partial = positions(&list)?;
            }
            if cfg.phantom.thorough.is_empty() && cfg.phantom.partial.is_empty() {
                return Err(Failure::Usage("no positions requested (both position lists are empty)".into()));
            }
            commands::gen_phantom_cmd(&cfg, &out.unwrap_or(data_dir), csv)?
        }
        Command::Sample { cloud, out, n_clouds, n_points } => {
            cfg.sample.n_clouds = n_clouds.unwrap_or(cfg.sample.n_clouds);
            cfg.sample.n_points = n_points.unwrap_or(cfg.sample.n_points);
            commands::sample_cmd(&cfg, &cloud, &out.unwrap_or_else(|| run_dir.join("batches")), csv)?
        }
        Command::Train { data, out, max_epochs, n_clouds, n_points } => {
            cfg.train.max_epochs = max_epochs.unwrap_or(cfg.train.max_epochs);
            cfg.sample.n_clouds = n_clouds.unwrap_or(cfg.sample.n_clouds);
            cfg.sample.n_points = n_points.unwrap_or(cfg.sample.n_points);
            commands::train_cmd(&cfg, &data.unwrap_or(data_dir), &out.unwrap_or(run_dir), csv)?
        }
        Command::Filter {
            checkpoint,
            cloud,
            manifest,
            data,
            out,
            vote_rule,
            k,
            n_clouds,
            n_points,
            no_residual,
        } => {
            let f = &mut cfg.filter;
            f.vote_rule = vote_rule.unwrap_or(f.vote_rule);
            f.k = k.unwrap_or(f.k);
            f.n_clouds = n_clouds.unwrap_or(f.n_clouds);
            f.n_points = n_points.unwrap_or(f.n_points);
            f.include_residual_pass &= !no_residual;
            let inputs = if cloud.is_empty() {
                commands::filter_inputs_from_dataset(&data.unwrap_or(data_dir))?
            } else {
                if manifest.is_some() && cloud.len() != 1 {
                    return Err(Failure::Usage("--manifest applies to exactly one --cloud".into()));
                }
                cloud
                    .into_iter()
                    .map(|c| FilterInput { cloud: c, manifest: manifest.clone() })
                    .collect()
            };
            let checkpoint = checkpoint.unwrap_or_else(|| run_dir.join(commands::CHECKPOINT_FILE));
            commands::filter_cmd(&cfg, &checkpoint, &inputs, &out.unwrap_or_else(|| run_dir.join("filter")), csv)?
        }
        Command::Invert { report, manifest, cloud, data, out } => {
            let inputs = match (report, manifest) {
                (Some(report), Some(manifest)) => vec![InvertInput { report, manifest, cloud }],
                _ => commands::invert_inputs_from_run(&run_dir.join("filter"), &data.unwrap_or(data_dir))?,
            };
            commands::invert_cmd(&inputs, &out.unwrap_or_else(|| run_dir.join("overlays")), csv)?
        }
        Command::Eval { overlays, reference_counts } => {
            if reference_counts {
                commands::reference_counts_cmd(csv)?
            } else {
                let dirs = if overlays.is_empty() {
                    commands::overlay_dirs_from_run(&run_dir.join("overlays"))?
                } else {
                    overlays
                };
                commands::eval_cmd(&dirs, csv)?
            }
        }
        Command::Kprob { p, n_points, k, batches, target } => {
            let args = KprobArgs {
                p,
                n_points: n_points.unwrap_or(cfg.sample.n_points as u64),
                k: k.unwrap_or(cfg.filter.k as u64),
                batches: batches.unwrap_or(cfg.sample.n_clouds as u64),
                target,
            };
            commands::kprob_cmd(&args, csv)?
        }
    };
    Ok(out)
}

fn main() -> ExitCode {
    let matches = match command_with_key_docs().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let cli = Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit());
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Warn,
        (false, 0) => log::LevelFilter::Info,
        (false, 1) => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .format_target(false)
        .init();

    match run(cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
