use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ouflow_cli::builtins::builtins;
use ouflow_cli::{run_prepared, CliError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "ouflow", version, about = "Run ouflow verification suites")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the suite named in a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; results do not depend on it.
        #[arg(long)]
        workers: Option<usize>,
        /// Overrides the output directory in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the registry of builtin models, fields and sources.
    ListBuiltins,
    /// Check a config and print it with all defaults filled in.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

fn run(config: PathBuf, seed: Option<u64>, workers: Option<usize>, out: Option<PathBuf>) -> Result<bool, CliError> {
    let mut cfg = ExperimentConfig::load(&config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(out) = out {
        cfg.output = out;
    }
    if let Some(k) = workers {
        if k == 0 {
            return Err(CliError::config("--workers must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| CliError::config(format!("cannot start {k} workers: {e}")))?;
    }
    let prepared = cfg.prepare()?;
    let out = prepared.config.output.clone();
    let summary = run_prepared(&prepared, &out)?;
    for c in &summary.checks {
        let status = if c.passed { "ok" } else { "FAILED" };
        let kind = if c.hard { "hard" } else { "soft" };
        println!("{kind} {status}: {} (value {}, limit {})", c.name, c.value, c.limit);
    }
    for (k, v) in &summary.fitted {
        println!("fitted {k} = {v}");
    }
    if summary.passed {
        println!("{} [{}]: passed", summary.suite, serde_json::to_string(&summary.estimate)?.trim_matches('"'));
    } else {
        eprintln!("{}: failed: {}", summary.suite, summary.failures().join(", "));
    }
    Ok(summary.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, seed, workers, out } => run(config, seed, workers, out),
        Command::ListBuiltins => {
            let mut out = std::io::stdout().lock();
            // a closed pipe (e.g. `| head`) ends the listing quietly
            for b in builtins() {
                let line = writeln!(out, "{:<7}{:<14}{}", b.category.name(), b.name, b.description)
                    .and_then(|_| writeln!(out, "{:<21}{}", "", b.snippet));
                if line.is_err() {
                    break;
                }
            }
            Ok(true)
        }
        Command::ValidateConfig { config } => ExperimentConfig::load(&config)
            .and_then(|c| c.prepare())
            .and_then(|p| Ok(serde_json::to_string_pretty(&p.config)?))
            .map(|text| {
                println!("{text}");
                true
            }),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
