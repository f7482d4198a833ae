//! `machagg` command line.
//!
//! Exit codes: 0 success, 1 failure with a diagnostic on stderr, 2 usage error.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use super::config::PipelineConfig;
use super::pipeline::{generate, learn_from_store, report_from_store, run_pipeline, store_stats};
use super::OrchestrateError;
use crate::store::Stream;

#[derive(Debug, Parser)]
#[command(name = "machagg", version, about = "Multi-level aggregation of machining telemetry")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Pipeline configuration file, or `demo` for the built-in one.
    #[arg(long, global = true, default_value = "demo")]
    pub config: String,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the scenario, its context stream and optionally raw samples.
    Generate {
        /// Number of leading blocks whose raw samples go to signal.csv.
        #[arg(long, default_value_t = 0)]
        raw_blocks: u64,
    },
    /// Run every stage and store the results under --out.
    Run,
    /// Rebuild and dispatch reports from the stored smart data.
    Report,
    /// Row and byte counts of the store.
    Stats {
        /// Only this stream.
        #[arg(long)]
        stream: Option<String>,
    },
    /// Learn thresholds from the stored monitoring stream.
    LearnThresholds,
}

fn config(common: &Common) -> Result<PipelineConfig, OrchestrateError> {
    let cfg = PipelineConfig::load(&common.config)?;
    Ok(match common.seed {
        Some(seed) => cfg.with_seed(seed),
        None => cfg,
    })
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), OrchestrateError> {
    let dir = &cli.common.out;
    let io = |source| OrchestrateError::Io {
        path: PathBuf::from("<stdout>"),
        source,
    };
    match &cli.command {
        Command::Generate { raw_blocks } => {
            let run = generate(&config(&cli.common)?, dir, *raw_blocks)?;
            writeln!(out, "generated {} blocks", run.blocks).map_err(io)?;
            for f in &run.files {
                writeln!(out, "  {}", dir.join(f).display()).map_err(io)?;
            }
        }
        Command::Run => {
            let s = run_pipeline(&config(&cli.common)?, dir)?;
            writeln!(out, "machine {} seed {} duration {} s", s.machine_id, s.seed, s.duration).map_err(io)?;
            writeln!(out, "blocks      {}", s.blocks).map_err(io)?;
            writeln!(out, "periods     {}", s.periods).map_err(io)?;
            writeln!(out, "smart data  {}", s.smart_data).map_err(io)?;
            writeln!(out, "indicators  {}", s.indicators.len()).map_err(io)?;
            for (name, st) in &s.streams {
                writeln!(out, "  {name:<12} {:>10} rows {:>14} bytes", st.rows, st.bytes).map_err(io)?;
            }
            for f in s.reports.iter().chain(&s.outbox) {
                writeln!(out, "  {}", dir.join(f).display()).map_err(io)?;
            }
        }
        Command::Report => {
            let r = report_from_store(&config(&cli.common)?, dir)?;
            writeln!(out, "{} indicators", r.indicators.len()).map_err(io)?;
            for f in r.reports.iter().chain(&r.outbox) {
                writeln!(out, "  {}", dir.join(f).display()).map_err(io)?;
            }
        }
        Command::Stats { stream } => {
            let only = stream.as_deref().map(str::parse::<Stream>).transpose()?;
            let (stats, recovered) = store_stats(dir)?;
            for r in &recovered {
                writeln!(out, "recovered {}: dropped {} torn bytes", r.stream, r.dropped_bytes).map_err(io)?;
            }
            for (s, st) in stats.iter().filter(|(s, _)| only.is_none_or(|o| o == **s)) {
                writeln!(out, "{:<12} {:>10} rows {:>14} bytes", s.name(), st.rows, st.bytes).map_err(io)?;
            }
        }
        Command::LearnThresholds => {
            let learned = learn_from_store(&config(&cli.common)?, dir)?;
            let json = serde_json::to_string_pretty(&learned).expect("thresholds serialize");
            writeln!(out, "{json}").map_err(io)?;
        }
    }
    Ok(())
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "machagg: {e}");
            1
        }
    }
}
