use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use thinfilm::cli::{self, Command, Invocation};

/// Minimizing-movement solver for u_t = Δ exp(−Δu) with theorem checks.
///
/// Exit codes: 0 ok, 1 usage or config error, 2 solver nonconvergence,
/// 3 check failure.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// Config file (flat `key = value`, `#` comments)
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding `out` in the config
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for random presets and test fields, overriding `seed`
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores)
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    threads: Option<u64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let inv = Invocation {
        command: args.command,
        config: args.config,
        out: args.out,
        seed: args.seed,
        threads: args.threads.map(|k| k as usize),
    };
    ExitCode::from(cli::execute(&inv).code())
}
