mod commands;
mod config;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::exit::{classify, ExitKind};

#[derive(Parser, Debug)]
#[command(name = "lsf", version, about = "Unified latent sensor fusion toolkit")]
struct Cli {
    /// Run configuration (`key = value` lines).
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Log debug output.
    #[arg(long, short, global = true)]
    verbose: bool,
    /// Only log warnings and errors.
    #[arg(long, short, global = true, conflicts_with = "verbose")]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Copy)]
struct Selection {
    /// Modality permutation 1–6 (ECG, +EMG, +EDA, +Temp, +Resp, +Acc);
    /// overrides `modalities` from the config.
    #[arg(long, short)]
    permutation: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum System {
    Unified,
    Baseline,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Split {
    Train,
    Test,
    All,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic labeled multimodal recording as CSV.
    Synth {
        #[arg(long, short)]
        out: PathBuf,
        /// Add a `Noise` channel carrying no class information.
        #[arg(long)]
        noise: bool,
    },
    /// Window a CSV recording into a dataset file.
    Ingest {
        #[arg(long, short)]
        input: PathBuf,
        /// Separate `start_index,label` file; otherwise the label column is used.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Print a dataset file as CSV.
    Dump {
        #[arg(long, short)]
        input: PathBuf,
        /// Destination; stdout when absent.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Train the shared encoder.
    TrainEncoder {
        #[arg(long, short)]
        out: PathBuf,
        /// Loss curve CSV.
        #[arg(long)]
        curve: Option<PathBuf>,
        /// Train on spectral images of this dataset instead of generic
        /// synthetic images.
        #[arg(long)]
        windows: Option<PathBuf>,
    },
    /// Encode every window of a dataset into latents.
    Encode {
        #[arg(long, short)]
        encoder: PathBuf,
        #[arg(long, short)]
        windows: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[command(flatten)]
        selection: Selection,
    },
    /// Train the fusion classifier on encoded latents.
    TrainClassifier {
        #[arg(long, short)]
        latents: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long)]
        curve: Option<PathBuf>,
        #[command(flatten)]
        selection: Selection,
    },
    /// Evaluate a classifier, or score a `score,label` CSV.
    Eval {
        #[arg(long, short, requires = "head", conflicts_with = "scores")]
        latents: Option<PathBuf>,
        #[arg(long, requires = "latents")]
        head: Option<PathBuf>,
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Decision threshold; overrides the config.
        #[arg(long, short)]
        threshold: Option<f64>,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        /// Metrics JSON destination.
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[command(flatten)]
        selection: Selection,
    },
    /// Compare the unified and per-modality systems across permutations.
    Bench {
        /// Build both systems on generated data.
        #[arg(long)]
        synthetic: bool,
        /// Trained shared encoder.
        #[arg(long, required_unless_present = "synthetic")]
        encoder: Option<PathBuf>,
        /// Directory of `{modality}.lsfw` per-modality encoders.
        #[arg(long, required_unless_present = "synthetic")]
        baseline_dir: Option<PathBuf>,
        /// Dataset for timing and accuracy.
        #[arg(long, required_unless_present = "synthetic")]
        windows: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        from: usize,
        #[arg(long, default_value_t = 6)]
        to: usize,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        /// Skip classifier training and `fig4_metrics.csv`; with
        /// `--synthetic` the encoders are then left untrained.
        #[arg(long)]
        no_metrics: bool,
        #[arg(long, short)]
        out_dir: PathBuf,
    },
    /// Per-layer cost breakdown of one system.
    Cost {
        #[arg(long, value_enum, default_value = "unified")]
        system: System,
        #[command(flatten)]
        selection: Selection,
        /// Breakdown CSV destination.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

fn init_logging(cli: &Cli) {
    let level = if cli.verbose {
        log::LevelFilter::Debug
    } else if cli.quiet {
        log::LevelFilter::Warn
    } else {
        log::LevelFilter::Info
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let select = |cfg: &mut RunConfig, s: &Selection| -> anyhow::Result<()> {
        if let Some(id) = s.permutation {
            cfg.set("permutation", &id.to_string())?;
        }
        Ok(())
    };
    match &cli.command {
        Command::Encode { selection, .. }
        | Command::TrainClassifier { selection, .. }
        | Command::Eval { selection, .. }
        | Command::Cost { selection, .. } => select(&mut cfg, selection)?,
        _ => {}
    }
    if let Command::Eval { threshold: Some(t), .. } = cli.command {
        cfg.threshold = t;
    }
    log::info!("resolved config:\n{cfg}");

    match cli.command {
        Command::Synth { out, noise } => commands::synth(&cfg, &out, noise),
        Command::Ingest { input, labels, out } => commands::ingest(&cfg, &input, labels.as_deref(), &out),
        Command::Dump { input, out } => commands::dump(&input, out.as_deref()),
        Command::TrainEncoder { out, curve, windows } => {
            commands::train_encoder(&cfg, &out, curve.as_deref(), windows.as_deref())
        }
        Command::Encode {
            encoder, windows, out, ..
        } => commands::encode(&cfg, &encoder, &windows, &out),
        Command::TrainClassifier {
            latents, out, curve, ..
        } => commands::train_classifier(&cfg, &latents, &out, curve.as_deref()),
        Command::Eval {
            latents,
            head,
            scores,
            split,
            out,
            ..
        } => {
            let source = match (latents, head, scores) {
                (Some(l), Some(h), None) => commands::EvalSource::Model { latents: l, head: h },
                (None, None, Some(s)) => commands::EvalSource::Scores(s),
                _ => return Err(exit::UsageError("eval needs --latents with --head, or --scores".into()).into()),
            };
            let split = match split {
                Split::Train => commands::EvalSplit::Train,
                Split::Test => commands::EvalSplit::Test,
                Split::All => commands::EvalSplit::All,
            };
            commands::eval(&cfg, source, split, out.as_deref())
        }
        Command::Bench {
            synthetic,
            encoder,
            baseline_dir,
            windows,
            from,
            to,
            repeats,
            no_metrics,
            out_dir,
        } => {
            if from == 0 || from > to || to > 6 {
                return Err(exit::UsageError(format!("permutation range {from}..{to} must lie within 1..6")).into());
            }
            let systems = if synthetic {
                commands::BenchSystems::Synthetic
            } else {
                commands::BenchSystems::Files {
                    encoder: encoder.expect("required by clap"),
                    baseline_dir: baseline_dir.expect("required by clap"),
                    windows: windows.expect("required by clap"),
                }
            };
            commands::bench(
                &cfg,
                &commands::BenchOptions {
                    systems,
                    range: from..=to,
                    repeats,
                    metrics: !no_metrics,
                    out_dir,
                },
            )
        }
        Command::Cost { system, out, .. } => commands::cost(&cfg, system == System::Baseline, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { ExitKind::Usage } else { ExitKind::Success }.code());
        }
    };
    init_logging(&cli);
    match run(cli) {
        Ok(()) => ExitCode::from(ExitKind::Success.code()),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(classify(&e).code())
        }
    }
}
