use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aircon_core::consensus::prepare_samples;
use aircon_core::experiment::{is_consensus_error, run_point_traces, write_trace_csv, CerEntry, CerWriter};
use aircon_core::phy::write_constellation_csv;
use aircon_core::{build_codebook, complexity_report, sweep, AirconError, CerResult, ExperimentConfig, SweepAxis};
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

/// Over-the-air BFT consensus simulator.
#[derive(Debug, Parser)]
#[command(name = "aircon", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the configured point for every m and write CER rows.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// CSV destination; overrides `output` in the config, stdout if neither is set.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Also write one trace row per consensus run.
        #[arg(long)]
        traces: Option<PathBuf>,
    },
    /// Sweep one parameter and write CER and ACER rows per point.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// snr, retransmissions, k, m, rho or alpha
        #[arg(long)]
        axis: String,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print the codeword mapping table.
    Codebook,
    /// Print resource-block counts for PBFT and AirCon.
    Complexity {
        #[arg(long)]
        k: u64,
        #[arg(long)]
        n: u64,
        #[arg(long, default_value_t = 4)]
        m: u64,
    },
    /// Dump first-round received samples before quantization.
    Constellation {
        #[arg(long)]
        config: PathBuf,
        /// Honest-user count; defaults to K.
        #[arg(long)]
        m: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, AirconError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn run_with_traces(cfg: &ExperimentConfig, out: Box<dyn Write>, traces_path: &Path) -> Result<(), AirconError> {
    let point = &cfg.points(SweepAxis::Point)?[0];
    let traces = run_point_traces(point, 0);
    let per_m = point
        .m_values
        .iter()
        .map(|&m| {
            let of_m: Vec<_> = traces.iter().filter(|t| t.m_true == m).collect();
            CerEntry { m, trials: of_m.len(), errors: of_m.iter().filter(|t| is_consensus_error(t)).count() }
        })
        .collect();
    let mut writer = CerWriter::new(out)?;
    writer.write_point(SweepAxis::Point, point, &CerResult { k: cfg.k, per_m })?;
    writer.into_inner()?.flush()?;
    let file = BufWriter::new(File::create(traces_path)?);
    write_trace_csv(file, |m| cfg.scenario(cfg.k, m), &traces)
}

fn execute(cmd: Command) -> Result<(), AirconError> {
    match cmd {
        Command::Run { config, output, traces } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = open_output(output.as_deref().or(cfg.output.as_deref()))?;
            match traces {
                Some(t) => run_with_traces(&cfg, out, &t),
                None => sweep(&cfg, SweepAxis::Point, out).map(drop),
            }
        }
        Command::Sweep { config, axis, output } => {
            let axis: SweepAxis = axis.parse()?;
            let cfg = ExperimentConfig::load(&config)?;
            let out = open_output(output.as_deref().or(cfg.output.as_deref()))?;
            sweep(&cfg, axis, out).map(drop)
        }
        Command::Codebook => {
            build_codebook().write_table_csv(io::stdout().lock())?;
            Ok(())
        }
        Command::Complexity { k, n, m } => {
            let r = complexity_report(k, n, m)?;
            let mut out = io::stdout().lock();
            writeln!(out, "K,N,M,pbft_messages,pbft_rbs,aircon_rbs,aircon_ce_rbs")?;
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.k, r.n, r.m, r.pbft_messages, r.pbft_rbs, r.aircon_rbs, r.aircon_ce_rbs
            )?;
            Ok(())
        }
        Command::Constellation { config, m, seed, output } => {
            let cfg = ExperimentConfig::load(&config)?;
            let m = m.unwrap_or(cfg.k);
            let sc = cfg.scenario(cfg.k, m);
            sc.validate()?;
            let samples = prepare_samples(&sc, seed)?;
            let mut out = open_output(output.as_deref())?;
            write_constellation_csv(&mut out, &samples)?;
            out.flush()?;
            Ok(())
        }
    }
}

fn exit_code(err: &AirconError) -> u8 {
    match err {
        AirconError::Config(_) | AirconError::InvalidInput(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("aircon: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
