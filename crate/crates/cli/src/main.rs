use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use s3_cli::{emit, parse_config_file, run_experiment, CliError, Format, Header, Mode};

/// Space-split sensitivity experiments on chaotic maps.
#[derive(Debug, Parser)]
#[command(name = "s3", version)]
struct Args {
    #[arg(value_enum)]
    mode: Mode,
    /// Config file, flat `key = value` text or JSON.
    #[arg(long)]
    config: PathBuf,
    /// Replaces the config's seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Leave out the generation timestamp so reruns are byte-identical.
    #[arg(long)]
    no_timestamp: bool,
}

fn execute(args: &Args) -> Result<Vec<String>, CliError> {
    let mut cfg = parse_config_file(&args.config)?;
    cfg.mode = Some(args.mode);
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(f) = args.format {
        cfg.format = f;
    }
    if let Some(out) = &args.out {
        cfg.out = Some(out.display().to_string());
    }
    let cfg = cfg.resolve()?;

    let workers = cfg
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::config("workers", e.to_string()))?;
    let table = pool.install(|| run_experiment(&cfg, args.mode))?;

    let header = Header {
        mode: args.mode,
        config: &cfg,
        generated: (!args.no_timestamp)
            .then(|| chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)),
    };
    match &cfg.out {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            emit(&mut w, &header, &table, cfg.format)?;
            w.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            emit(&mut w, &header, &table, cfg.format)?;
            w.flush()?;
        }
    }
    Ok(table.failures)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(&args) {
        Ok(failures) if failures.is_empty() => ExitCode::SUCCESS,
        Ok(failures) => {
            for f in &failures {
                eprintln!("s3: numerical failure: {f}");
            }
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("s3: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
