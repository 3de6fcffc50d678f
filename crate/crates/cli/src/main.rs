//! `eventperp` command-line front end.
//!
//! Exit codes: 0 success, 1 validation error, 2 replay error or incomplete
//! report, 3 I/O error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use eventperp::io::{
    emit_batch_summary, emit_report, load_batch_manifest, load_data_dir, load_run_config, load_spec_file,
    print_taxonomy, write_data_dir, write_index_csv, IoError, ReportFormat, TaxonomyTable,
};
use eventperp::model::{MarketData, TimeMs, DEFAULT_GRID_MS};
use eventperp::replay::{batch_replay, bridge_leg, build_index, generate_negrisk_group, replay, ReplayError};

#[derive(Parser)]
#[command(
    name = "eventperp",
    version,
    about = "Event-linked perpetual variants: index construction and replay"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Construct the variant underlying and write it as CSV.
    BuildIndex {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_GRID_MS)]
        grid_ms: TimeMs,
    },
    /// Full lifecycle replay.
    Replay {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        risk: Option<PathBuf>,
        /// Overrides `replay.seed` from the risk file.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Jsonl)]
        format: Format,
    },
    /// Write a synthetic data directory.
    Generate {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        legs: usize,
        #[arg(long)]
        horizon_ms: TimeMs,
        #[arg(long, default_value_t = DEFAULT_GRID_MS)]
        grid_ms: TimeMs,
        /// Starting probability of bridge legs.
        #[arg(long, default_value_t = 0.5)]
        p0: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a static design table.
    Taxonomy {
        #[arg(long, value_enum)]
        table: Table,
    },
    /// Replay every run of a manifest in parallel.
    Batch {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Jsonl,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Bridge,
    Negrisk,
}

#[derive(Clone, Copy, ValueEnum)]
enum Table {
    Inheritance,
    Evaluability,
}

// ---

struct Failure {
    code: u8,
    message: String,
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        let code = if e.is_io_failure() { 3 } else { 1 };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<ReplayError> for Failure {
    fn from(e: ReplayError) -> Self {
        let code = match e {
            ReplayError::Spec(_) | ReplayError::Config(_) | ReplayError::Align(_) => 1,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: 3,
        message: format!("{}: {e}", path.display()),
    }
}

fn validation(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::BuildIndex {
            spec,
            data,
            out,
            grid_ms,
        } => {
            let spec = load_spec_file(&spec)?;
            let data = load_data_dir(&data)?;
            let series = build_index(&spec, &data, grid_ms)?;
            write_index_csv(&series, &out)?;
        }
        Command::Replay {
            spec,
            data,
            risk,
            seed,
            out,
            format,
        } => {
            let mut cfg = load_run_config(&spec, risk.as_deref())?;
            if let Some(seed) = seed {
                cfg.replay.seed = seed;
            }
            let data = load_data_dir(&data)?;
            let report = replay(&cfg.spec, &data, &cfg.risk, &cfg.replay)?;
            std::fs::create_dir_all(&out).map_err(|e| io_failure(&out, e))?;
            match format {
                Format::Jsonl => emit_report(&report, ReportFormat::Jsonl, out.join("report.jsonl"))?,
                Format::Csv => emit_report(&report, ReportFormat::CsvBundle, &out)?,
            }
            if !report.meta.complete {
                return Err(Failure {
                    code: 2,
                    message: format!(
                        "replay stopped early: {}",
                        report.meta.error.as_deref().unwrap_or("unknown error")
                    ),
                });
            }
        }
        Command::Generate {
            kind,
            seed,
            legs,
            horizon_ms,
            grid_ms,
            p0,
            out,
        } => {
            if horizon_ms <= 0 || grid_ms <= 0 {
                return Err(validation("--horizon-ms and --grid-ms must be positive"));
            }
            let data = match kind {
                Kind::Bridge => {
                    if !(0.0..=1.0).contains(&p0) {
                        return Err(validation("--p0 must lie in [0, 1]"));
                    }
                    let legs = (0..legs.max(1))
                        .map(|j| {
                            bridge_leg(
                                format!("leg{j}"),
                                seed.wrapping_add(j as u64),
                                0,
                                horizon_ms,
                                grid_ms,
                                p0,
                            )
                        })
                        .collect();
                    MarketData::new(legs)
                }
                Kind::Negrisk => {
                    if legs < 2 {
                        return Err(validation("a negRisk group needs at least 2 legs"));
                    }
                    let (legs, group) = generate_negrisk_group(seed, legs, horizon_ms, grid_ms);
                    MarketData {
                        legs,
                        groups: vec![group],
                    }
                }
            };
            write_data_dir(&out, &data)?;
        }
        Command::Taxonomy { table } => {
            let table = match table {
                Table::Inheritance => TaxonomyTable::Inheritance,
                Table::Evaluability => TaxonomyTable::Evaluability,
            };
            print!("{}", print_taxonomy(table));
        }
        Command::Batch { manifest, out } => {
            let runs = load_batch_manifest(&manifest)?;
            let batch = batch_replay(&runs);
            std::fs::create_dir_all(&out).map_err(|e| io_failure(&out, e))?;
            for entry in &batch.entries {
                if let Some(rep) = &entry.report {
                    let name = format!("{}-{}.jsonl", entry.label, entry.seed);
                    emit_report(rep, ReportFormat::Jsonl, out.join(name))?;
                }
            }
            emit_batch_summary(&batch, out.join("batch.jsonl"))?;
            if batch.failed > 0 || batch.complete < batch.runs {
                return Err(Failure {
                    code: 2,
                    message: format!(
                        "{} of {} runs failed or stopped early",
                        batch.runs - batch.complete,
                        batch.runs
                    ),
                });
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
