use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use focus_core::cli::config::ExperimentConfig;
use focus_core::cli::run::{build_luts, run_experiment, RunOptions};
use focus_core::metrics::LogBase;

/// Synthesize ultrasound channel data and compare time- and
/// frequency-domain beamformers.
#[derive(Debug, Parser)]
#[command(name = "focus", version)]
struct Args {
    /// Experiment config (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Logarithm base of the complexity model.
    #[arg(long, value_parser = parse_log_base)]
    log_base: Option<LogBase>,
    /// Ignore cached weight tables and rebuild them.
    #[arg(long)]
    rebuild_luts: bool,
    /// Only build the weight tables, reporting time and size of each.
    #[arg(long)]
    build_luts: bool,
}

fn parse_log_base(s: &str) -> Result<LogBase, String> {
    LogBase::parse(s).ok_or_else(|| format!("expected 2 or e, got {s:?}"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(args: &Args) -> focus_core::Result<()> {
    let cfg = ExperimentConfig::from_file(&args.config)?;
    let opts = RunOptions {
        out: args.out.clone(),
        workers: args.workers,
        log_base: args.log_base,
        rebuild_luts: args.rebuild_luts,
    };
    if args.build_luts {
        let records = build_luts(&cfg, &opts)?;
        for r in &records {
            println!(
                "theta={:+.4} n1={} n2={} {} {:.3}s {:.1} MiB {}",
                r.theta,
                r.n1,
                r.n2,
                if r.hit { "cached" } else { "built" },
                r.seconds,
                r.bytes as f64 / (1024.0 * 1024.0),
                r.path.display()
            );
        }
        let total: usize = records.iter().map(|r| r.bytes).sum();
        println!("{} tables, {:.1} MiB", records.len(), total as f64 / (1024.0 * 1024.0));
        return Ok(());
    }
    let summary = run_experiment(&cfg, &opts)?;
    log::info!(
        "{} files written to {} (weight tables: {} cached, {} built)",
        summary.files.len(),
        args.out.display(),
        summary.lut_hits,
        summary.lut_builds
    );
    for r in &summary.complexity {
        println!(
            "N_q={} P={} ratio={:.3}",
            r.params.nq,
            r.params.p.unwrap_or(f64::NAN),
            r.ratio
        );
    }
    Ok(())
}
