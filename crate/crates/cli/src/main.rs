use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};
use vimo::pipeline::Method;
use vimo_cli::{
    ablate, extract, load_config, simulate, threads_from_env, with_threads, AblateConfig, ExtractConfig,
    SimulateConfig,
};

/// Radar vital-sign simulation and extraction.
///
/// Worker threads are capped by the VIMO_THREADS environment variable.
#[derive(Parser)]
#[command(name = "vimo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Pivimo,
    MspFft,
    BinTm,
    BinFft,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Pivimo => Method::Pivimo,
            MethodArg::MspFft => Method::MspFft,
            MethodArg::BinTm => Method::SinglebinTm,
            MethodArg::BinFft => Method::SinglebinFft,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize an IF cube with its ground truth.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate vital rates from an IF cube.
    Extract {
        /// IF cube file.
        cube: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "pivimo")]
        method: MethodArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the method comparison grid.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Restrict to these methods (repeatable); all four by default.
        #[arg(long, value_enum)]
        method: Vec<MethodArg>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<ExitCode> {
    let threads = threads_from_env()?;
    match cli.command {
        Command::Simulate { config, seed, out } => {
            let cfg: SimulateConfig = load_config(config.as_deref())?;
            let r = with_threads(threads, || simulate(&cfg, seed, &out))??;
            println!(
                "wrote {} files to {} (occupied bins: {}, SNR: {}, truth {:.1} / {:.1} bpm)",
                r.files.len(),
                out.display(),
                r.occupied_bins,
                r.snr_db.map_or("noiseless".into(), |s| format!("{s:.1} dB")),
                r.truth_resp_bpm,
                r.truth_heart_bpm,
            );
        }
        Command::Extract {
            cube,
            config,
            method,
            out,
        } => {
            let cfg: ExtractConfig = load_config(config.as_deref())?;
            let r = with_threads(threads, || extract(&cube, &cfg, method.into(), &out))??;
            let fmt = |v: Option<f64>| v.map_or("n/a".into(), |v| format!("{v:.2}"));
            println!(
                "{}: bins {:?}, resp {} bpm, heart {} bpm",
                r.method,
                r.bins,
                fmt(r.resp_rate_bpm),
                fmt(r.heart_rate_bpm)
            );
            for w in &r.warnings {
                eprintln!("warning: {w}");
            }
        }
        Command::Ablate {
            config,
            seed,
            method,
            out,
        } => {
            let mut cfg: AblateConfig = load_config(config.as_deref())?;
            if !method.is_empty() {
                cfg.methods = method.into_iter().map(Method::from).collect();
            }
            let r = with_threads(threads, || ablate(&cfg, seed, &out))??;
            println!("{} trial reports written to {}", r.trials, out.display());
            for g in &r.summary.by_method {
                println!(
                    "{:>14}: median resp error {:.2}%, heart error {:.2}%",
                    g.method.name(),
                    g.stats.resp_error_median.unwrap_or(f64::NAN),
                    g.stats.heart_error_median.unwrap_or(f64::NAN),
                );
            }
            if r.failures > 0 {
                eprintln!("error: {} trial(s) failed; see the error column of trials.csv", r.failures);
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
