use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cortinv::config::ExperimentConfig;
use cortinv::pipeline;
use cortinv::{Error, Result};

/// Speech inversion from cortical spectro-temporal features.
#[derive(Debug, Parser)]
#[command(name = "cortinv", version)]
struct Cli {
    /// Experiment configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for per-utterance stages (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Overrides both the data and the model seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overwrite outputs produced under a different configuration.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic paired corpus and its manifest.
    Synth,
    /// Compute auditory, cortical and MFCC features for every utterance.
    Extract,
    /// Fit the HOSVD basis on the train split.
    FitReduce,
    /// Train the regressor and tune the smoother on dev.
    Train {
        /// Train one model per hidden width instead of the configured one.
        #[arg(long, value_delimiter = ',')]
        widths: Vec<usize>,
    },
    /// Score a checkpoint on the test split.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Score one model per hidden width, as trained by `train --widths`.
        #[arg(long, value_delimiter = ',')]
        widths: Vec<usize>,
    },
    /// Invert a single WAV file to a tract-variable CSV.
    Infer {
        wav: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Collect every evaluation report into one summary table.
    Report,
    /// Print the effective configuration.
    ShowConfig,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.data.seed = seed;
        cfg.model.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn with_width(cfg: &ExperimentConfig, width: usize) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.model.width = width;
    c
}

fn widths_or_default(cfg: &ExperimentConfig, widths: &[usize]) -> Vec<usize> {
    if widths.is_empty() {
        vec![cfg.model.width]
    } else {
        widths.to_vec()
    }
}

fn checkpoint_or_default(cfg: &ExperimentConfig, p: &Option<PathBuf>) -> PathBuf {
    p.clone().unwrap_or_else(|| pipeline::checkpoint_path(cfg))
}

fn print_report(path: &Path) {
    if let Ok(text) = std::fs::read_to_string(path) {
        print!("{text}");
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match &cli.cmd {
        Command::Synth => {
            let m = pipeline::stage_synth(&cfg, cli.force)?;
            println!("{} utterances, manifest {}", m.entries.len(), cfg.manifest_path().display());
        }
        Command::Extract => {
            let s = pipeline::stage_extract(&cfg, cli.jobs, cli.force)?;
            println!("extracted {} utterances, {} already current", s.computed, s.skipped);
        }
        Command::FitReduce => {
            let basis = pipeline::stage_fit_reduce(&cfg, cli.jobs)?;
            let dims: Vec<usize> = basis.modes.iter().map(|m| m.dim).collect();
            println!("basis over {dims:?} written to {}", cfg.output.work_dir.join("basis.ftc").display());
        }
        Command::Train { widths } => {
            for w in widths_or_default(&cfg, widths) {
                let c = with_width(&cfg, w);
                let (ckpt, report) = pipeline::stage_train(&c, cli.jobs)?;
                println!(
                    "{}: best epoch {} of {}, dev mse {:.6}",
                    ckpt.display(),
                    report.best_epoch,
                    report.epochs.len(),
                    report.best_dev_mse
                );
            }
        }
        Command::Eval { checkpoint, widths } => {
            if checkpoint.is_some() && widths.len() > 1 {
                return Err(Error::InvalidArgument("--checkpoint takes a single width".into()));
            }
            for w in widths_or_default(&cfg, widths) {
                let c = with_width(&cfg, w);
                let (out, _) = pipeline::stage_eval(&c, checkpoint.as_deref(), cli.jobs)?;
                print_report(&out);
            }
        }
        Command::Infer { wav, out, checkpoint } => {
            let ckpt = checkpoint_or_default(&cfg, checkpoint);
            let tv = pipeline::stage_infer(&cfg, &ckpt, wav, out)?;
            println!("{} frames written to {}", tv.n_frames(), out.display());
        }
        Command::Report => {
            let out = pipeline::stage_report(&cfg)?;
            print_report(&out);
        }
        Command::ShowConfig => print!("{}", cfg.to_toml()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
