use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;
use sharpscore::config::RunConfig;
use sharpscore::pipeline::{self, PipelineError, SynthesizeArgs};

/// Train, ensemble, evaluate and explain radiograph severity scorers.
#[derive(Debug, Parser)]
#[command(name = "sharpscore", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Root seed; overrides the config file.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory; overrides the config file.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Use reduced backbones and 64x64 inputs.
    #[arg(long, global = true)]
    desk_scale: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate phantom radiographs with SvdH and bone-age manifests.
    Synthesize {
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        count: u64,
        #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(32..))]
        size: u64,
        /// Write into a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Pretrain a backbone on the bone-age manifest.
    Pretrain,
    /// Train on the SvdH manifest.
    Train,
    /// Score a checkpoint on one split.
    Evaluate,
    /// Fit and evaluate a three-member stacked ensemble.
    Stack,
    /// Grad-CAM overlays for TP/TN/FP/FN cases.
    Explain,
}

fn resolve(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out = out.clone();
    }
    if cli.desk_scale {
        config.desk_scale = true;
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> anyhow::Result<serde_json::Value> {
    let config = resolve(&cli)?;
    Ok(match cli.command {
        Command::Synthesize { count, size, force } => {
            let out = cli
                .out
                .clone()
                .ok_or_else(|| PipelineError::Usage("synthesize needs --out DIR".into()))?;
            let records = pipeline::synthesize(&SynthesizeArgs {
                count: count as usize,
                size: size as usize,
                seed: config.seed,
                out: out.clone(),
                force,
            })?;
            json!({"command": "synthesize", "images": records.len(), "out": out})
        }
        Command::Pretrain => json!({"command": "pretrain", "summary": pipeline::pretrain(&config)?}),
        Command::Train => json!({"command": "train", "summary": pipeline::train(&config)?}),
        Command::Evaluate => json!({"command": "evaluate", "metrics": pipeline::evaluate(&config)?}),
        Command::Stack => json!({"command": "stack", "summary": pipeline::stack(&config)?}),
        Command::Explain => json!({"command": "explain", "cases": pipeline::explain(&config)?}),
    })
}

fn fail(kind: &str, message: &str, code: u8) -> ExitCode {
    let line = json!({"error": kind, "message": message.trim().replace('\n', " ")});
    eprintln!("{line}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            return fail("usage", first.trim_start_matches("error: "), 2);
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let kind = match e.downcast_ref::<PipelineError>() {
                Some(PipelineError::Usage(_) | PipelineError::OutputExists(_)) => "usage",
                Some(PipelineError::Config(_)) | None => "config",
                Some(_) => "runtime",
            };
            let code = if kind == "runtime" { 1 } else { 2 };
            fail(kind, &format!("{e:#}"), code)
        }
    }
}
