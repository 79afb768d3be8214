mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use log::info;

use config::{keys_help, resolve, Overrides, RunConfig, UsageError};

/// Multi-scale patch CNN contour detection with gradient-domain refinement.
#[derive(Debug, Parser)]
#[command(name = "patchcontour", version)]
struct Cli {
    /// Config file of `key = value` lines
    #[arg(long, global = true, value_name = "FILE", env = "PATCHCONTOUR_CONFIG")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract balanced multi-scale patches from a corpus split
    Dataset(DatasetArgs),
    /// Train a patch classifier; writes the model and a per-epoch metrics CSV
    Train(TrainArgs),
    /// Vote patch scores into coarse contour maps (PGM and CFR1)
    Predict(PredictArgs),
    /// Refine a coarse map with image gradients
    Refine(RefineArgs),
    /// Score prediction maps against ground truth (ODS, OIS, AP)
    Eval(EvalArgs),
    /// Run dataset, train, predict, refine and eval in one go
    Pipeline(PipelineArgs),
    /// Generate a synthetic corpus split
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct DatasetArgs {
    /// Corpus split to read
    #[arg(long, default_value = "train")]
    split: String,
    /// Dataset file to write
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[command(flatten)]
    config: Overrides,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset file from `dataset`
    #[arg(long, value_name = "FILE")]
    dataset: PathBuf,
    /// Optional validation dataset file
    #[arg(long, value_name = "FILE")]
    val_dataset: Option<PathBuf>,
    /// Model file to write
    #[arg(long, value_name = "FILE")]
    model_out: PathBuf,
    /// Metrics CSV to write [default: <model-out>.csv]
    #[arg(long, value_name = "FILE")]
    metrics: Option<PathBuf>,
    #[command(flatten)]
    config: Overrides,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Model file
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// Directory for <id>.pgm and <id>.cfr maps
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    /// Corpus split to predict when no images are given
    #[arg(long, default_value = "test")]
    split: String,
    /// Images to predict; without them every image of the corpus split is used
    images: Vec<PathBuf>,
    #[command(flatten)]
    config: Overrides,
}

#[derive(Debug, Args)]
struct RefineArgs {
    /// Coarse map (.cfr or .pgm)
    #[arg(long, value_name = "FILE")]
    coarse: PathBuf,
    /// The image the coarse map was predicted from
    #[arg(long, value_name = "FILE")]
    image: PathBuf,
    /// Output map; PGM when the name ends in .pgm, CFR1 otherwise
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[command(flatten)]
    config: Overrides,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Directory holding <id>.cfr or <id>.pgm for every image of the split
    #[arg(long, value_name = "DIR")]
    pred_dir: PathBuf,
    /// Corpus split providing the ground truth
    #[arg(long, default_value = "test")]
    split: String,
    /// Report file to write (scores are always printed)
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
    /// Dataset-level PR curve CSV to write
    #[arg(long, value_name = "FILE")]
    pr_csv: Option<PathBuf>,
    #[command(flatten)]
    config: Overrides,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    /// Directory for every intermediate and final output
    #[arg(long, value_name = "DIR")]
    work_dir: PathBuf,
    /// Generate this many synthetic scenes (4/5 train, 1/5 test) instead of using --corpus
    #[arg(long, value_name = "N")]
    synthetic: Option<usize>,
    /// Training split
    #[arg(long, default_value = "train")]
    train_split: String,
    /// Evaluation split
    #[arg(long, default_value = "test")]
    test_split: String,
    #[command(flatten)]
    config: Overrides,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Corpus root to write into
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Split name
    #[arg(long, default_value = "train")]
    split: String,
    /// Number of scenes
    #[arg(long, default_value_t = 200)]
    count: usize,
    /// Image side in pixels
    #[arg(long, default_value_t = 96)]
    size: usize,
    #[command(flatten)]
    config: Overrides,
}

impl Command {
    fn overrides(&self) -> &Overrides {
        match self {
            Command::Dataset(a) => &a.config,
            Command::Train(a) => &a.config,
            Command::Predict(a) => &a.config,
            Command::Refine(a) => &a.config,
            Command::Eval(a) => &a.config,
            Command::Pipeline(a) => &a.config,
            Command::Synth(a) => &a.config,
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(cli.config.as_deref(), cli.command.overrides())?;
    for line in cfg.resolved_lines() {
        info!("config: {line}");
    }
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()?;
    }
    dispatch(&cfg, cli.command)
}

fn dispatch(cfg: &RunConfig, command: Command) -> Result<()> {
    match command {
        Command::Dataset(a) => commands::dataset(cfg, &a.split, &a.out).map(drop),
        Command::Train(a) => {
            let metrics = a.metrics.unwrap_or_else(|| {
                let mut p = a.model_out.clone().into_os_string();
                p.push(".csv");
                p.into()
            });
            commands::train_model(
                cfg,
                &a.dataset,
                a.val_dataset.as_deref(),
                &a.model_out,
                &metrics,
            )
            .map(drop)
        }
        Command::Predict(a) => {
            let model = patchcontour::convnet::load_model(&a.model)?;
            let jobs = if a.images.is_empty() {
                let root = cfg.corpus.as_deref().ok_or_else(|| {
                    config::usage("give image paths, or --corpus to predict a whole split")
                })?;
                commands::jobs_from_corpus(root, &a.split)?
            } else {
                commands::jobs_from_paths(&a.images)?
            };
            commands::predict(cfg, &model, &jobs, &a.out_dir)
        }
        Command::Refine(a) => commands::refine_one(cfg, &a.coarse, &a.image, &a.out),
        Command::Eval(a) => commands::evaluate(
            cfg,
            &a.split,
            &a.pred_dir,
            a.report.as_deref(),
            a.pr_csv.as_deref(),
        )
        .map(drop),
        Command::Pipeline(a) => commands::pipeline(
            cfg,
            &commands::PipelinePlan {
                work_dir: &a.work_dir,
                synthetic: a.synthetic,
                train_split: &a.train_split,
                test_split: &a.test_split,
            },
        ),
        Command::Synth(a) => commands::synth(cfg, &a.out, &a.split, a.count, a.size),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    let internal = err.chain().any(|e| {
        matches!(
            e.downcast_ref::<patchcontour::Error>(),
            Some(patchcontour::Error::Internal(_))
        )
    });
    if internal {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let help = keys_help();
    let command = Cli::command().mut_subcommands(|s| s.after_help(help.clone()));
    let cli = match command
        .try_get_matches()
        .and_then(|m| Cli::from_arg_matches(&m))
    {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
