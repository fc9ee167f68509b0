use clap::Parser;
use std::path::PathBuf;
use std::process::ExitCode;
use vlasov::config::{parse_config, Command, RunManifest};
use vlasov::run::{exit_code, run, RunOptions, EXIT_ERROR};
use vlasov::Error;

/// Relativistic Vlasov solver and verification harness.
#[derive(Debug, Parser)]
#[command(name = "vlasov", version)]
struct Cli {
    /// What to run; overrides `command` in the manifest.
    #[arg(value_enum)]
    command: Command,
    /// TOML run manifest; every key is optional.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory; overrides `out_dir`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Random seed; overrides `seed`.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads (default: one per core).
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
    /// Only errors on stderr.
    #[arg(long)]
    quiet: bool,
}

fn manifest(cli: &Cli) -> vlasov::Result<RunManifest> {
    let text = match &cli.config {
        Some(path) => std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?,
        None => String::new(),
    };
    let mut m = parse_config(&text)?;
    m.command = cli.command;
    if let Some(out) = &cli.out {
        m.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        m.solver.seed = seed;
    }
    m.validate()?;
    Ok(m)
}

fn report(e: &Error) {
    eprintln!("error: {e}");
    let mut source = std::error::Error::source(e);
    while let Some(s) = source {
        eprintln!("  caused by: {s}");
        source = s.source();
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_ERROR as u8 } else { 0 });
        }
    };
    if cli.threads == Some(0) {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(EXIT_ERROR as u8);
    }
    let result = manifest(&cli).and_then(|m| {
        run(
            &m,
            &RunOptions {
                threads: cli.threads,
                quiet: cli.quiet,
            },
        )
    });
    if let Err(e) = &result {
        report(e);
    }
    ExitCode::from(exit_code(&result) as u8)
}
