//! `e2v`: synthetic event data generation, training and evaluation of the
//! event-to-voxel network.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands::{ExportSource, GenerateArgs};
use crate::config::RunConfig;
use crate::error::CliError;
use crate::manifest::{Manifest, Split};

#[derive(Parser)]
#[command(name = "e2v", version, about = "Event camera to voxel reconstruction pipeline")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration, overlaid on the defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Use desk-scale defaults (64x64 sensor, 8^3 voxels, small network).
    #[arg(long, global = true)]
    toy: bool,
    /// Worker threads.
    #[arg(long, global = true, env = "E2V_THREADS", default_value_t = 1)]
    threads: usize,
    /// Seed for scene sampling and splits (generate) or shuffling (train).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

impl SplitArg {
    fn select(self) -> Option<Split> {
        match self {
            SplitArg::Train => Some(Split::Train),
            SplitArg::Val => Some(Split::Val),
            SplitArg::Test => Some(Split::Test),
            SplitArg::All => None,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render procedural (or given) scenes into EVT1/VOX1 pairs and a manifest.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// Scene JSON files used round-robin instead of procedural scenes.
        #[arg(long = "scene")]
        scenes: Vec<PathBuf>,
    },
    /// Bin every sample's events into a cached frame stack.
    Preprocess {
        #[arg(long)]
        manifest: PathBuf,
        /// Cache directory; defaults to `frames/` next to the manifest.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train on one split, resuming from `<out>/last.*` when present.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
    },
    /// Per-category IoU and F-Score of a checkpoint.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        /// Run directory or any file of a checkpoint set.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Directory for report.csv and report.txt.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write occupied voxels as cubes to an OBJ file.
    Export {
        /// VOX1 grid to export.
        #[arg(long, conflicts_with_all = ["checkpoint", "manifest", "sample"])]
        voxels: Option<PathBuf>,
        #[arg(long, requires_all = ["manifest", "sample"])]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Sample id whose prediction is exported.
        #[arg(long)]
        sample: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_manifest(path: &Path) -> Result<Manifest, CliError> {
    Manifest::load(path)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let c = &cli.common;
    e2v_core::par::init_global_threads(c.threads.max(1));
    let mut cfg = RunConfig::load(c.config.as_deref(), c.toy)?;
    match cli.command {
        Command::Generate { out, count, scenes } => {
            let m = commands::generate(
                &cfg,
                &GenerateArgs {
                    out: out.clone(),
                    count,
                    seed: c.seed.unwrap_or(0),
                    scenes,
                },
            )?;
            println!("wrote {} samples to {}", m.entries.len(), out.join("manifest.json").display());
        }
        Command::Preprocess { manifest, out } => {
            let m = load_manifest(&manifest)?;
            let n = commands::preprocess(&cfg, &m, out.as_deref())?;
            println!("binned {n} samples");
        }
        Command::Train { manifest, out, split } => {
            if let Some(seed) = c.seed {
                cfg.train.seed = seed;
            }
            let m = load_manifest(&manifest)?;
            let state = commands::train(&cfg, &m, split.select(), &out)?;
            println!("finished epoch {} ({} steps), checkpoints in {}", state.epoch, state.opt.step, out.display());
        }
        Command::Eval {
            manifest,
            checkpoint,
            split,
            out,
        } => {
            let m = load_manifest(&manifest)?;
            let report = commands::eval(&cfg, &m, &checkpoint, split.select(), out.as_deref())?;
            print!("{}", report.to_table());
        }
        Command::Export {
            voxels,
            checkpoint,
            manifest,
            sample,
            out,
        } => {
            let n = match (voxels, checkpoint) {
                (Some(v), _) => commands::export(&cfg, ExportSource::Voxels(&v), &out)?,
                (None, Some(ckp)) => {
                    let m = load_manifest(manifest.as_deref().expect("clap enforces --manifest"))?;
                    let sample = sample.expect("clap enforces --sample");
                    commands::export(
                        &cfg,
                        ExportSource::Prediction {
                            checkpoint: &ckp,
                            manifest: &m,
                            sample: &sample,
                        },
                        &out,
                    )?
                }
                (None, None) => return Err(CliError::Config("export needs --voxels or --checkpoint".into())),
            };
            println!("exported {n} voxels to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = std::panic::catch_unwind(|| run(cli))
        .unwrap_or_else(|_| Err(CliError::Internal("unexpected panic".into())));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("e2v: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
