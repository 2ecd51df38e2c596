use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use decaylab::{parse_config_with, run, CliError, Overrides};

#[derive(Parser, Debug)]
#[command(name = "decaylab", version, about = "Fourier decay experiments for self-conformal measures")]
struct Args {
    /// uni-check | model-verify | spectral-scan | renewal-test | decay-report
    command: String,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    eps: Option<f64>,
    /// Worker threads; falls back to DECAYLAB_THREADS, then all cores.
    #[arg(long)]
    threads: Option<usize>,
}

fn threads(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("DECAYLAB_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| CliError::validation("DECAYLAB_THREADS", format!("not a positive integer: {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn main_inner(args: Args) -> Result<String, CliError> {
    if let Some(n) = threads(args.threads)? {
        if n == 0 {
            return Err(CliError::validation("threads", "must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Io(format!("thread pool: {e}")))?;
    }
    let ov = Overrides { command: Some(args.command), seed: args.seed, out: args.out, eps: args.eps };
    let config = parse_config_with(&args.config, &ov)?;
    Ok(run(&config)?.record())
}

fn main() -> ExitCode {
    match main_inner(Args::parse()) {
        Ok(record) => {
            println!("{record}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
