//! Command-line front end for the operating-table analysis pipeline.
//!
//! Commands: `synth`, `segment`, `detect`, `loocv-static`,
//! `loocv-dynamic`, `optimize`, `render`. Every command is deterministic
//! for a fixed seed and config; failures exit nonzero with a single
//! `error: ...` line on stderr.

use std::path::PathBuf;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};

use optable::dataset::{DatasetKind, DatasetManifest, RunConfig};
use optable::imaging;
use optable::runner::{self, OptimizeMode};
use optable::synth::generate_synthetic_dataset_sized;

#[derive(Parser)]
#[command(
    name = "optable",
    about = "Patch-based instrument segmentation and change detection for operating-table scenes"
)]
struct Cli {
    /// Flat `key = value` config file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Config override, `key=value`; repeatable, applied after --config.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Static,
    Dynamic,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Dpso,
    WsizeGrid,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its manifest.
    Synth {
        #[arg(long, value_enum)]
        kind: KindArg,
        /// Number of images (static) or pairs (dynamic).
        #[arg(long)]
        count: usize,
        /// Scene width in pixels.
        #[arg(long, default_value_t = optable::synth::DEFAULT_WIDTH)]
        width: usize,
        /// Scene height in pixels.
        #[arg(long, default_value_t = optable::synth::DEFAULT_HEIGHT)]
        height: usize,
        /// Output directory (defaults to the configured out_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Segment one image against a bank built from a whole manifest.
    Segment {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        image: PathBuf,
    },
    /// Detect appeared/disappeared instruments on one before/after pair.
    Detect {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        before: PathBuf,
        #[arg(long)]
        after: PathBuf,
        /// Overlay tint threshold.
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Leave-one-out cross-validation of the static task.
    LoocvStatic {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Leave-one-out cross-validation of the dynamic task.
    LoocvDynamic {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Hyperparameter search (swarm over detector parameters, or a
    /// randomized grid over the window size).
    Optimize {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        mode: ModeArg,
    },
    /// Blend detection maps over a pair as a green/red overlay.
    Render {
        #[arg(long)]
        before: PathBuf,
        #[arg(long)]
        after: PathBuf,
        #[arg(long)]
        appeared: PathBuf,
        #[arg(long)]
        disappeared: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    for item in &cli.overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| anyhow!("invalid-config: {item}: expected key=value"))?;
        config.set(key.trim(), value.trim())?;
    }
    Ok(config)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = load_config(&cli)?;
    match cli.command {
        Command::Synth {
            kind,
            count,
            width,
            height,
            out,
        } => {
            let kind = match kind {
                KindArg::Static => DatasetKind::Static,
                KindArg::Dynamic => DatasetKind::Dynamic,
            };
            let out_dir = out.unwrap_or_else(|| config.out_dir.clone());
            let manifest = generate_synthetic_dataset_sized(
                kind,
                count,
                config.seed,
                width,
                height,
                &out_dir,
            )?;
            println!(
                "wrote {} rows under {} (manifest.csv)",
                manifest.len(),
                out_dir.display()
            );
        }
        Command::Segment { manifest, image } => {
            let manifest = DatasetManifest::load(&manifest)?;
            let (path, _) = runner::run_segment(&manifest, &config, &image)?;
            println!("wrote {}", path.display());
        }
        Command::Detect {
            manifest,
            before,
            after,
            threshold,
        } => {
            let manifest = DatasetManifest::load(&manifest)?;
            let paths = runner::run_detect(&manifest, &config, &before, &after, threshold)?;
            for p in paths {
                println!("wrote {}", p.display());
            }
        }
        Command::LoocvStatic { manifest } => {
            let manifest = DatasetManifest::load(&manifest)?;
            let summary = runner::run_static_loocv(&manifest, &config)?;
            println!("Az mean / std: {:.3} / {:.3}", summary.mean, summary.std);
            println!("report: {}", summary.report_path.display());
        }
        Command::LoocvDynamic { manifest } => {
            let manifest = DatasetManifest::load(&manifest)?;
            let summary = runner::run_dynamic_loocv(&manifest, &config)?;
            println!(
                "appearance Az mean / std: {:.3} / {:.3}",
                summary.appearance.mean, summary.appearance.std
            );
            println!(
                "disappearance Az mean / std: {:.3} / {:.3}",
                summary.disappearance.mean, summary.disappearance.std
            );
            println!("reports: {}", summary.appearance.report_path.display());
            println!("         {}", summary.disappearance.report_path.display());
        }
        Command::Optimize { manifest, mode } => {
            let manifest = DatasetManifest::load(&manifest)?;
            let mode = match mode {
                ModeArg::Dpso => OptimizeMode::Dpso,
                ModeArg::WsizeGrid => OptimizeMode::WsizeGrid,
            };
            let outcome = runner::run_optimize(&manifest, &config, mode)?;
            let best: Vec<String> = outcome
                .best
                .iter()
                .map(|(name, value)| format!("{name}={value}"))
                .collect();
            println!("best: {} (score {:.6})", best.join(" "), outcome.best_score);
            println!("trace: {}", outcome.trace_path.display());
        }
        Command::Render {
            before,
            after,
            appeared,
            disappeared,
            threshold,
        } => {
            let mut before_img = imaging::load_image(&before)?;
            let mut after_img = imaging::load_image(&after)?;
            let appeared_map = imaging::load_probability_map(&appeared)?;
            let disappeared_map = imaging::load_probability_map(&disappeared)?;
            // Maps produced at working resolution pair with full-size
            // frames; halve the frames when they are exactly double.
            if after_img.width() == 2 * appeared_map.width()
                && after_img.height() == 2 * appeared_map.height()
            {
                before_img = imaging::downsample2(&before_img)?;
                after_img = imaging::downsample2(&after_img)?;
            }
            let before_img = before_img.crop(appeared_map.width(), appeared_map.height());
            let after_img = after_img.crop(appeared_map.width(), appeared_map.height());
            let overlay = runner::render_overlay(
                &before_img,
                &after_img,
                &optable::change::ChangeMap {
                    appeared: appeared_map,
                    disappeared: disappeared_map,
                },
                threshold,
            )?;
            std::fs::create_dir_all(&config.out_dir)
                .with_context(|| format!("write: {}", config.out_dir.display()))?;
            let out = config.out_dir.join("overlay.png");
            imaging::save_image(&overlay, &out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        // Single-line, machine-parseable: `error: <kind>: <detail>`.
        let line = err.to_string().replace('\n', " ");
        eprintln!("error: {line}");
        std::process::exit(1);
    }
}
