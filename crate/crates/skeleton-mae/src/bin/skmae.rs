//! Command-line front end for the skeleton masked-autoencoder pipeline.
//!
//! Every subcommand maps to one function in `skeleton_mae::commands`; this
//! file only parses arguments and turns typed errors into the exit-code
//! contract (2 config/checkpoint, 3 data/io, 4 numeric).

use clap::{Parser, Subcommand};
use skeleton_mae::commands;
use skeleton_mae::data::SynthSpec;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "skmae",
    about = "Masked-autoencoder pre-training and fine-tuning for skeleton sequences",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic oscillating-limb dataset (train/test JSONL)
    Synth {
        /// Output directory for train.jsonl and test.jsonl
        #[arg(long)]
        out: PathBuf,
        /// Number of action classes
        #[arg(long, default_value_t = 4)]
        classes: usize,
        /// Sequences generated per class (split 80/20)
        #[arg(long, default_value_t = 50)]
        per_class: usize,
        /// Frames per raw sequence before resampling
        #[arg(long, default_value_t = 24)]
        frames: usize,
        /// Pixel noise added to every joint
        #[arg(long, default_value_t = 2.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Masked-reconstruction pre-training from a JSON config
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        /// Directory for checkpoint.skmae and pretrain_report.json
        #[arg(long)]
        out: PathBuf,
    },
    /// Supervised fine-tuning, optionally from a pre-training checkpoint
    Finetune {
        #[arg(long)]
        config: PathBuf,
        /// Pre-training checkpoint whose encoder weights seed the model
        #[arg(long)]
        pretrained: Option<PathBuf>,
        /// Directory for classifier.skmae and finetune_report.json
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a fine-tuned checkpoint; prints JSON metrics on stdout
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Reconstruct masked joints and export per-frame JSONL streams
    Reconstruct {
        /// Pre-training checkpoint
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Mask strategy: body_parts(3+5), random_regions(2), random(50%)
        #[arg(long)]
        mask: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain+finetune across the config's masking grid; writes a CSV
    CompareMasking {
        #[arg(long)]
        config: PathBuf,
        /// Seeds per strategy (config seed, +1, +2, ...)
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export pooled encoder features per sequence as JSONL
    Embed {
        /// Pre-training checkpoint
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output JSONL file
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> skeleton_mae::Result<()> {
    match cli.command {
        Command::Synth {
            out,
            classes,
            per_class,
            frames,
            noise,
            seed,
        } => {
            let spec = SynthSpec {
                class_count: classes,
                sequences_per_class: per_class,
                t_raw: frames,
                noise_sigma: noise,
                seed,
                ..SynthSpec::default()
            };
            commands::cmd_synth(&spec, &out)?;
        }
        Command::Pretrain { config, out } => {
            commands::cmd_pretrain(&config, &out)?;
        }
        Command::Finetune {
            config,
            pretrained,
            out,
        } => {
            commands::cmd_finetune(&config, pretrained.as_deref(), &out)?;
        }
        Command::Eval { model, data } => {
            commands::cmd_eval(&model, &data)?;
        }
        Command::Reconstruct {
            model,
            data,
            mask,
            out,
        } => {
            commands::cmd_reconstruct(&model, &data, &mask, &out)?;
        }
        Command::CompareMasking { config, seeds, out } => {
            commands::cmd_compare_masking(&config, seeds, &out)?;
        }
        Command::Embed { model, data, out } => {
            commands::cmd_embed(&model, &data, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
