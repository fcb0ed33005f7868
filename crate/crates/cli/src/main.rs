use std::io::Read;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;

use constraint_tax::checkers::{is_schema_valid, parse_completion};
use constraint_tax::harness::{self, RunConfig, RunOptions, ScoreOptions, SuiteSpec};
use constraint_tax::modes::OutputMode;
use constraint_tax::taskgen::{Family, RngSeed};
use constraint_tax::validate::Strictness;

/// Measure the accuracy cost of structured-output constraints.
#[derive(Parser)]
#[command(name = "ctax", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Export a task suite as JSONL.
    Gen {
        /// Take the suite from a run config instead of the flags below.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, conflicts_with = "config")]
        seed: Option<u64>,
        #[arg(long, default_value_t = 200, conflicts_with = "config")]
        count: usize,
        /// Repeatable; all families when omitted.
        #[arg(long = "family", value_parser = parse_family, conflicts_with = "config")]
        families: Vec<Family>,
    },
    /// Generate and score records for every backend × mode × instance.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config's `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Keep existing records and only generate missing ones.
        #[arg(long)]
        resume: bool,
    },
    /// Package prompt-json or freeform records into delayed-constraint records.
    DeriveDelayed {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate record files into CSV tables and summary.json.
    Score {
        #[arg(long = "records", required = true, num_args = 1..)]
        records: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Bootstrap, pairing and comparison settings from a run config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        bootstrap_resamples: Option<usize>,
    },
    /// Render summary.json as a Markdown report.
    Report {
        #[arg(long)]
        summary: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check one completion against a mode's contract.
    Validate {
        #[arg(long, value_parser = parse_mode)]
        mode: OutputMode,
        #[arg(long, value_parser = parse_family)]
        family: Family,
        /// Parse only the whole text, never a fenced block or embedded object.
        #[arg(long)]
        strict_extraction: bool,
        /// Completion text; read from stdin when neither this nor --file is given.
        #[arg(long, conflicts_with = "file")]
        text: Option<String>,
        #[arg(long)]
        file: Option<PathBuf>,
    },
}

fn parse_mode(s: &str) -> Result<OutputMode, String> {
    s.parse().map_err(|e: constraint_tax::Error| e.to_string())
}

fn parse_family(s: &str) -> Result<Family, String> {
    Family::ALL
        .into_iter()
        .find(|f| f.name() == s)
        .ok_or_else(|| format!("unknown family `{s}`"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Gen {
            config,
            out,
            seed,
            count,
            families,
        } => {
            let suite = match config {
                Some(path) => RunConfig::load(&path)?.suite,
                None => SuiteSpec {
                    families: if families.is_empty() { Family::ALL.to_vec() } else { families },
                    count,
                    seed: RngSeed(seed.unwrap_or(0)),
                },
            };
            let instances = suite.instances()?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).with_context(|| parent.display().to_string())?;
            }
            harness::write_tasks(&out, &instances)?;
            info!("wrote {} instances to {}", instances.len(), out.display());
        }
        Command::Run { config, out, resume } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            let outcome = harness::run(&cfg, RunOptions { resume, limit: None })?;
            println!("{}", outcome.records_path.display());
            if outcome.generation_failed > 0 {
                log::warn!("{} records failed to generate", outcome.generation_failed);
            }
        }
        Command::DeriveDelayed { records, tasks, out } => {
            let n = harness::derive_delayed_file(&records, &tasks, &out)?;
            info!("wrote {n} delayed-packaging records to {}", out.display());
        }
        Command::Score {
            records,
            out,
            config,
            bootstrap_resamples,
        } => {
            let mut options = match config {
                Some(path) => RunConfig::load(&path)?.score_options(),
                None => ScoreOptions::default(),
            };
            if let Some(n) = bootstrap_resamples {
                if n == 0 {
                    bail!("--bootstrap-resamples must be positive");
                }
                options.bootstrap.resamples = n;
            }
            let summary = harness::score(&records, &options, &out)?;
            info!(
                "{} aggregates, {} comparisons, {} warnings → {}",
                summary.aggregates.len(),
                summary.comparisons.len(),
                summary.warnings.len(),
                out.display()
            );
        }
        Command::Report { summary, out } => {
            harness::report(&summary, &out)?;
            info!("wrote {}", out.display());
        }
        Command::Validate {
            mode,
            family,
            strict_extraction,
            text,
            file,
        } => {
            let text = match (text, file) {
                (Some(t), _) => t,
                (None, Some(path)) => std::fs::read_to_string(&path).with_context(|| path.display().to_string())?,
                (None, None) => {
                    let mut buf = String::new();
                    std::io::stdin().read_to_string(&mut buf)?;
                    buf
                }
            };
            let strictness = if strict_extraction { Strictness::Strict } else { Strictness::Lenient };
            let outcome = parse_completion(family, mode, &text, strictness);
            let valid = is_schema_valid(&outcome);
            println!("{}", describe(&outcome, valid));
            return Ok(if valid { ExitCode::SUCCESS } else { ExitCode::from(1) });
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn describe(outcome: &constraint_tax::validate::ParseOutcome, valid: bool) -> String {
    let violations: Vec<String> = outcome
        .violations
        .iter()
        .map(|v| format!("{} ({}): {}", if v.path.is_empty() { "/" } else { &v.path }, v.keyword, v.message))
        .collect();
    let mut lines = vec![format!(
        "{}: {:?}",
        if valid { "valid" } else { "invalid" },
        outcome.status
    )];
    lines.extend(violations.into_iter().map(|v| format!("  {v}")));
    lines.join("\n")
}
