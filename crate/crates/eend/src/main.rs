use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use eend::commands::{self, InferOptions};
use eend::{report, CliError, Result, RunConfig};
use eend_core::scoring::DerConfig;

/// Self-attentive end-to-end speaker diarization at desk scale.
#[derive(Debug, Parser)]
#[command(name = "eend", version)]
struct Cli {
    /// TOML run configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one setting, e.g. `--set train.epochs=50`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Print the resolved configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
    /// Suppress per-epoch progress lines.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate mixtures with reference RTTM and a manifest.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        /// Also write feature files under feats/.
        #[arg(long)]
        features: bool,
    },
    /// Train a model from scratch.
    Train {
        /// Dataset directory [default: paths.data].
        #[arg(long)]
        data: Option<PathBuf>,
        /// Experiment directory [default: paths.exp].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fine-tune a checkpoint at a constant learning rate.
    Adapt {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Diarize a WAV file, a feature file or a dataset directory.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Directory receiving one RTTM per recording.
        #[arg(long)]
        out: PathBuf,
        /// Also write the raw T x C posteriors as CSV.
        #[arg(long)]
        posteriors: bool,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        median_window: Option<usize>,
    },
    /// Score hypothesis RTTM against reference RTTM.
    Score {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
        /// Collar in seconds [default: post.collar].
        #[arg(long)]
        collar: Option<f64>,
        /// Write the JSON report here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Export one head's attention weights as CSV and PGM.
    DumpAttention {
        #[arg(long)]
        checkpoint: PathBuf,
        /// A WAV or feature file.
        #[arg(long)]
        input: PathBuf,
        /// 0-based encoder block.
        #[arg(long)]
        block: usize,
        /// 0-based head.
        #[arg(long)]
        head: usize,
        /// Output path without extension.
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    if cli.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(CliError::Usage("no command given; see --help".into()));
    };
    match command {
        Command::Simulate { out, features } => {
            let m = commands::simulate(&cfg, &out, features)?;
            println!(
                "{} mixtures, {:.1} s, overlap ratio mean {} stdev {}",
                m.n_mixtures,
                m.total_duration_s,
                m.overlap_ratio_mean.map_or("n/a".into(), |v| format!("{v:.4}")),
                m.overlap_ratio_stdev.map_or("n/a".into(), |v| format!("{v:.4}")),
            );
        }
        Command::Train { data, out } => {
            let data = data.unwrap_or_else(|| cfg.paths.data.clone());
            let out = out.unwrap_or_else(|| cfg.paths.exp.clone());
            let a = commands::train(&cfg, &data, &out, cli.quiet)?;
            println!("wrote {} and {}", a.final_checkpoint.display(), a.averaged_checkpoint.display());
        }
        Command::Adapt { checkpoint, data, out } => {
            let data = data.unwrap_or_else(|| cfg.paths.data.clone());
            let out = out.unwrap_or_else(|| cfg.paths.exp.clone());
            let a = commands::adapt(&cfg, &checkpoint, &data, &out, cli.quiet)?;
            println!("wrote {} and {}", a.final_checkpoint.display(), a.averaged_checkpoint.display());
        }
        Command::Infer {
            checkpoint,
            input,
            out,
            posteriors,
            threshold,
            median_window,
        } => {
            let opts = InferOptions {
                threshold: threshold.unwrap_or(cfg.post.threshold),
                median_window: median_window.unwrap_or(cfg.post.median_window),
                write_posteriors: posteriors,
            };
            let r = commands::infer(&cfg, &checkpoint, &input, &out, &opts)?;
            println!("wrote {} RTTM file(s) to {}", r.len(), out.display());
        }
        Command::Score {
            reference,
            hyp,
            collar,
            json,
        } => {
            let der = DerConfig {
                collar: collar.unwrap_or(cfg.post.collar),
                ..DerConfig::default()
            };
            let s = commands::score(&reference, &hyp, der)?;
            print!("{}", report::table(&s));
            if let Some(path) = json {
                let text = serde_json::to_string_pretty(&report::json_report(&s))
                    .map_err(|e| CliError::format(&path, e))?;
                std::fs::write(&path, text + "\n").map_err(CliError::io(&path))?;
            }
        }
        Command::DumpAttention {
            checkpoint,
            input,
            block,
            head,
            out,
        } => {
            let a = commands::dump_attention(&cfg, &checkpoint, &input, block, head, &out)?;
            println!("wrote {0}x{0} attention to {1}.csv and {1}.pgm", a.rows(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
