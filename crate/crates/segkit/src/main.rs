//! segkit command line: run a declarative analysis pipeline, validate a
//! config, or synthesize a dataset from a generator spec.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use segkit::pipeline::{run, validate, PipelineConfig, PipelineError, RunOptions};
use segkit::synthgen::{calibrate_to_paper, generate, DgpSpec};

#[derive(Parser)]
#[command(name = "segkit", version, about = "Labour-market segregation and wage-gap toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every analysis in a pipeline config.
    Run {
        /// Pipeline config (TOML).
        config: PathBuf,
        /// Suppress timestamps so repeated runs are byte-identical.
        #[arg(long)]
        deterministic: bool,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a pipeline config without running anything.
    Validate {
        config: PathBuf,
    },
    /// Generate a synthetic dataset from a generator spec.
    Synth {
        /// Generator spec (TOML), or the literal "paper" for the shipped
        /// calibrated spec.
        spec: String,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Override the spec seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn write_error_report(out: Option<&PathBuf>, error: &PipelineError) {
    let report = serde_json::json!({
        "error": match error {
            PipelineError::ConfigInvalid(_) => "config_invalid",
            PipelineError::AnalysisFailed { .. } => "analysis_failed",
            PipelineError::Io(_) => "io",
        },
        "stage": match error {
            PipelineError::AnalysisFailed { stage, .. } => Some(stage.clone()),
            _ => None,
        },
        "message": error.to_string(),
    });
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    if let Some(dir) = out {
        if std::fs::create_dir_all(dir).is_ok()
            && std::fs::write(dir.join("error.json"), &text).is_ok()
        {
            return;
        }
    }
    eprintln!("{text}");
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, deterministic, seed, out } => {
            let parsed = match PipelineConfig::from_path(&config) {
                Ok(c) => c,
                Err(e) => {
                    write_error_report(out.as_ref(), &e);
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            let options = RunOptions { deterministic, seed, out_dir: out.clone() };
            match run(&parsed, &options) {
                Ok(dir) => {
                    println!("wrote artifacts to {}", dir.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    write_error_report(out.as_ref(), &e);
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
        Command::Validate { config } => match PipelineConfig::from_path(&config) {
            Ok(parsed) => match validate(&parsed) {
                Ok(_) => {
                    println!("ok");
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("invalid: {e}");
                    ExitCode::from(2)
                }
            },
            Err(e) => {
                eprintln!("invalid: {e}");
                ExitCode::from(2)
            }
        },
        Command::Synth { spec, out, seed } => {
            let mut dgp: DgpSpec = if spec == "paper" {
                calibrate_to_paper()
            } else {
                match std::fs::read_to_string(&spec)
                    .map_err(|e| e.to_string())
                    .and_then(|text| toml::from_str(&text).map_err(|e| e.to_string()))
                {
                    Ok(parsed) => parsed,
                    Err(e) => {
                        eprintln!("error: cannot load spec {spec:?}: {e}");
                        return ExitCode::from(2);
                    }
                }
            };
            if let Some(seed) = seed {
                dgp.seed = seed;
            }
            match generate(&dgp) {
                Ok((frame, panel, truth)) => {
                    if let Err(e) = std::fs::create_dir_all(&out) {
                        eprintln!("error: {e}");
                        return ExitCode::FAILURE;
                    }
                    let write = || -> Result<(), String> {
                        frame
                            .write_csv(out.join("microdata.csv"))
                            .map_err(|e| e.to_string())?;
                        panel
                            .write_long_csv(out.join("panel.csv"))
                            .map_err(|e| e.to_string())?;
                        let json = serde_json::to_string_pretty(&truth.to_json())
                            .map_err(|e| e.to_string())?;
                        std::fs::write(out.join("groundtruth.json"), json)
                            .map_err(|e| e.to_string())?;
                        Ok(())
                    };
                    match write() {
                        Ok(()) => {
                            println!("wrote synthetic data to {}", out.display());
                            ExitCode::SUCCESS
                        }
                        Err(e) => {
                            eprintln!("error: {e}");
                            ExitCode::FAILURE
                        }
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
    }
}
