use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use cellsynth::pipeline::{run, PipelineConfig, Reporter, Stage};
use cellsynth::ErrorKind;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Preprocess,
    Features,
    Simulate,
    Scan,
    Synth,
    Image,
    Postproc,
    Evaluate,
    Pipeline,
}

/// Synthetic 3D cell aggregate and microscopy generator.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON config; omitted sections take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set cpm.n_mcs=200`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (io.output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed (cpm.seed and scan.base_seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (cpm.workers and scan.workers).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stage: Stage = format!("{:?}", cli.command)
        .to_lowercase()
        .parse()
        .expect("every command is a stage");
    let mut overrides = cli.overrides.clone();
    if let Some(out) = &cli.out {
        overrides.push(format!(
            "io.output_dir={}",
            serde_json::Value::String(out.display().to_string())
        ));
    }
    if let Some(s) = cli.seed {
        overrides.push(format!("cpm.seed={s}"));
        overrides.push(format!("scan.base_seed={s}"));
    }
    if let Some(w) = cli.workers {
        overrides.push(format!("cpm.workers={w}"));
        overrides.push(format!("scan.workers={w}"));
    }
    let result = match &cli.config {
        Some(p) => PipelineConfig::load(p),
        None => Ok(PipelineConfig::default()),
    }
    .and_then(|c| c.with_overrides(&overrides))
    .and_then(|c| run(stage, &c, Reporter { quiet: cli.quiet }));
    match result {
        Ok(m) => {
            if !cli.quiet {
                eprintln!(
                    "{}: wrote {} files to {}",
                    stage,
                    m.outputs.len() + 1,
                    m.config.io.output_dir.display()
                );
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Schema => 2,
                ErrorKind::Io => 3,
                ErrorKind::Domain => 4,
            })
        }
    }
}
