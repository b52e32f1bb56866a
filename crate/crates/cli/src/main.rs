//! Workbench command line: synthetic data generation, the full three-stage
//! run, report aggregation, and the invariant verification suite.
//!
//! Exit codes: 0 success, 2 validation failure, 1 runtime error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use csnn_cli::config::{RunConfig, StudyChoice};
use csnn_cli::{harness, report};
use csnn_core::eeg::ExperimentKind;

#[derive(Parser)]
#[command(name = "csnn", about = "Spiking-network few-shot training workbench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct CommonArgs {
    /// JSON run configuration; omitted fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Study selection override.
    #[arg(long, value_parser = parse_study)]
    study: Option<StudyChoice>,
    /// Scenario override: 1 nominal countdown, 2 stressed countdown,
    /// 3 stoplight.
    #[arg(long)]
    experiment: Option<u64>,
}

fn parse_study(s: &str) -> Result<StudyChoice, String> {
    match s {
        "acs" => Ok(StudyChoice::Acs),
        "fcas" => Ok(StudyChoice::Fcas),
        "both" => Ok(StudyChoice::Both),
        other => Err(format!("unknown study {other:?}; expected acs, fcas or both")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus and write per-participant archives.
    GenData {
        #[command(flatten)]
        common: CommonArgs,
        /// Restrict to one scenario; default generates all three.
        #[arg(long)]
        only_experiment: bool,
    },
    /// Run the full pipeline and write the report bundle.
    FullRun {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Aggregate a bundle into report tables.
    Report {
        /// Bundle directory produced by full-run.
        bundle: PathBuf,
        /// Output directory; defaults to `<bundle>/report`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the invariant suite and print one line per check.
    Verify {
        /// Seed of the randomized checks.
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn resolve_config(common: &CommonArgs) -> Result<RunConfig, String> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = &common.out {
        config.out_dir = out.clone();
    }
    if let Some(study) = common.study {
        config.study = study;
    }
    if let Some(experiment) = common.experiment {
        config.experiment = experiment;
    }
    config.validate()?;
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::GenData { common, only_experiment } => {
            let config = match resolve_config(&common) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("invalid configuration: {e}");
                    return Ok(ExitCode::from(2));
                }
            };
            let kinds: Vec<ExperimentKind> = if only_experiment || common.experiment.is_some() {
                vec![config.kind()]
            } else {
                vec![
                    ExperimentKind::CountdownNominal,
                    ExperimentKind::CountdownStressed,
                    ExperimentKind::Stoplight,
                ]
            };
            let written = harness::gen_data(&config, &kinds)?;
            println!("wrote {} participant archives under {}", written.len(), config.out_dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::FullRun { common } => {
            let config = match resolve_config(&common) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("invalid configuration: {e}");
                    return Ok(ExitCode::from(2));
                }
            };
            let summary = harness::full_run(&config)?;
            let bundle = report::bundle_dir(&config.out_dir);
            report::write_bundle(&bundle, &summary)?;
            println!(
                "bundle written to {} ({} metric rows, {} energy rows)",
                bundle.display(),
                summary.metrics.len(),
                summary.energy.len()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { bundle, out } => {
            if !bundle.join("metrics.csv").is_file() {
                eprintln!("not a run bundle (missing metrics.csv): {}", bundle.display());
                return Ok(ExitCode::from(2));
            }
            let out = out.unwrap_or_else(|| bundle.join("report"));
            report::write_report(&bundle, &out, &[3, 5, 7])?;
            println!("report written to {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { seed } => {
            let checks = [
                csnn_core::verify::check_oracle_equivalence(1000, seed),
                csnn_core::verify::check_gradients(20, seed.wrapping_add(1)),
                csnn_core::verify::check_edge_invariants(10_000, seed.wrapping_add(2)),
                csnn_core::verify::check_pipeline_invariants(seed.wrapping_add(3)),
                csnn_core::verify::check_conversion_roundtrip(seed.wrapping_add(4)),
            ];
            let mut all_ok = true;
            for check in &checks {
                let status = if check.passed { "PASS" } else { "FAIL" };
                println!("{status} {}: {}", check.name, check.detail);
                all_ok &= check.passed;
            }
            Ok(if all_ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
    }
}
