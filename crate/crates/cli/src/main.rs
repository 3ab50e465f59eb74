use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use robust_mvs::io::PlyFormat;
use robust_mvs::loss::GradientCheckConfig;
use robust_mvs::synth::SceneKind;
use robust_mvs_cli::commands::{self, GradientCheckSetup};
use robust_mvs_cli::config::PipelineConfig;
use robust_mvs_cli::with_threads;

#[derive(Parser)]
#[command(name = "rmvs", version, about = "Plane-sweep multi-view stereo with robust photometric losses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Configuration shared by the pipeline subcommands.
#[derive(Args)]
struct PipelineArgs {
    /// Flat `key = value` TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Scene directory (overrides `scene`).
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Output directory (overrides `output`).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Worker threads, 0 for all cores (overrides `threads`).
    #[arg(long)]
    threads: Option<usize>,
}

impl PipelineArgs {
    fn load(&self) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::load(self.config.as_deref(), &self.overrides)?;
        if let Some(s) = &self.scene {
            cfg.scene = s.clone();
        }
        if let Some(o) = &self.output {
            cfg.output = o.clone();
        }
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic ablation scene into a scene directory.
    Synth {
        #[arg(long, default_value = "textured_plane")]
        kind: SceneKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 128)]
        width: usize,
        #[arg(long, default_value_t = 96)]
        height: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "binary")]
        ply_format: PlyFormat,
    },
    /// Estimate a depth and confidence map for every view.
    Depth(PipelineArgs),
    /// Fuse the estimated depth maps into a point cloud.
    Fuse(PipelineArgs),
    /// Compare a reconstructed point cloud with a reference cloud.
    Eval {
        #[arg(long)]
        reconstruction: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Comma-separated distance thresholds.
        #[arg(long, value_delimiter = ',', default_values_t = commands::DEFAULT_THRESHOLDS)]
        thresholds: Vec<f64>,
        /// Also write the metrics to this file.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Depth accuracy over K, matching cost and aggregation, plus the top-K selection histogram.
    Ablate {
        #[command(flatten)]
        pipeline: PipelineArgs,
        /// Index of the reference view.
        #[arg(long, default_value_t = 0)]
        reference: usize,
    },
    /// Compare the analytic loss gradient with finite differences on a synthetic scene.
    CheckGradients {
        #[arg(long, default_value = "textured_plane")]
        kind: SceneKind,
        #[arg(long, default_value_t = 3)]
        seed: u64,
        #[arg(long, default_value_t = 128)]
        width: usize,
        #[arg(long, default_value_t = 96)]
        height: usize,
        /// Amplitude of the smooth offset added to the true depth.
        #[arg(long, default_value_t = 0.2)]
        amplitude: f64,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 1e-3)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
}

fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Synth {
            kind,
            seed,
            width,
            height,
            out,
            ply_format,
        } => commands::cmd_synth(kind, seed, (width, height), &out, ply_format),
        Command::Depth(args) => {
            let cfg = args.load()?;
            with_threads(cfg.threads, || commands::cmd_depth(&cfg))?
        }
        Command::Fuse(args) => {
            let cfg = args.load()?;
            with_threads(cfg.threads, || commands::cmd_fuse(&cfg))?
        }
        Command::Eval {
            reconstruction,
            reference,
            thresholds,
            report,
            threads,
        } => with_threads(threads, || commands::cmd_eval(&reconstruction, &reference, &thresholds, report.as_deref()))?,
        Command::Ablate { pipeline, reference } => {
            let cfg = pipeline.load()?;
            with_threads(cfg.threads, || commands::cmd_ablate(&cfg, reference))?
        }
        Command::CheckGradients {
            kind,
            seed,
            width,
            height,
            amplitude,
            samples,
            step,
            tolerance,
            pipeline,
        } => {
            let cfg = pipeline.load()?;
            let setup = GradientCheckSetup {
                kind,
                seed,
                size: (width, height),
                amplitude,
            };
            let check = GradientCheckConfig {
                samples,
                step,
                tolerance,
                seed: cfg.seed,
                ..GradientCheckConfig::default()
            };
            with_threads(cfg.threads, || commands::cmd_check_gradients(&setup, &cfg.loss, &check))?
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            // Some errors repeat their source in their own message.
            let mut line = String::new();
            for cause in e.chain() {
                let text = cause.to_string().replace('\n', " ");
                if !line.ends_with(&text) {
                    if !line.is_empty() {
                        line.push_str(": ");
                    }
                    line.push_str(&text);
                }
            }
            eprintln!("error: {line}");
            ExitCode::FAILURE
        }
    }
}
