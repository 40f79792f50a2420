use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use icubench::run::{report_bundle, run, RunConfig, RunError, Stage};
use icubench::synth::{generate_to_dir, SynthConfig};

#[derive(Parser)]
#[command(name = "icubench", version, about = "ICU prediction benchmark runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the stage chain described by a run config and write a report bundle.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Last stage to run: ingest, clean, labels, features, evaluate or report.
        #[arg(long, default_value = "report", value_parser = parse_stage)]
        stage: Stage,
        /// Replaces the config's seeds (and the synthetic data seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; overrides `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; all cores when absent.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Write synthetic raw tables and their ground truth to a directory.
    Generate {
        /// TOML synthetic data config; defaults when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the per-task tables of an existing bundle.
    Report {
        #[arg(long)]
        bundle: PathBuf,
    },
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    Stage::parse(s).ok_or_else(|| format!("unknown stage {s:?}"))
}

/// Ignores write errors so a closed pipe (`| head`) is not a panic.
fn print_table(text: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn read_config(path: &Path) -> Result<String, RunError> {
    std::fs::read_to_string(path).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))
}

fn main_inner(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Run { config, stage, seed, out, jobs } => {
            if let Some(j) = jobs {
                rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global().map_err(|e| RunError::Config(e.to_string()))?;
            }
            let text = read_config(&config)?;
            let mut cfg = RunConfig::from_toml_str(&text)?;
            if let Some(s) = seed {
                cfg.override_seed(s);
            }
            let out = out.or_else(|| cfg.output_dir.clone()).ok_or_else(|| RunError::Config("no output directory: pass --out or set output_dir".into()))?;
            let outcome = run(&cfg, &text, &out, stage)?;
            for a in &outcome.artifacts {
                eprintln!("{:<9} {} {}", a.stage.name(), a.status, a.key);
            }
            if stage == Stage::Report {
                for (_, _, pretty) in icubench::run::render_tables(&cfg, &outcome.reports)? {
                    print_table(&pretty);
                }
                eprintln!("bundle written to {}", out.display());
            }
            Ok(())
        }
        Command::Generate { config, out, seed } => {
            let mut cfg: SynthConfig = match config {
                Some(p) => toml::from_str(&read_config(&p)?).map_err(|e| RunError::Config(e.to_string()))?,
                None => SynthConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate().map_err(|e| RunError::Config(e.to_string()))?;
            let data = generate_to_dir(&cfg, &out).map_err(|e| RunError::Stage { stage: Stage::Ingest, message: e.to_string() })?;
            eprintln!("wrote {} admissions and {} events to {}", data.tables.admissions.len(), data.tables.events.len(), out.display());
            Ok(())
        }
        Command::Report { bundle } => {
            for (_, _, pretty) in report_bundle(&bundle)? {
                print_table(&pretty);
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
