use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use srg_cli::{
    cmd_analyticity, cmd_check, cmd_demo_counterexample, cmd_oracle, cmd_run, cmd_wick, CliError, Outcome,
    RunConfig,
};

#[derive(Parser)]
#[command(name = "srg", version, about = "Spectral renormalization group on truncated Fock spaces")]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.directory`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for independent work items.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Run even when the hypothesis check fails.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Hypotheses and parameter ledger -> hypotheses.json
    Check,
    /// Full RG pipeline -> trace.json, levels.csv
    Run,
    /// Wick kernels against the direct effective Hamiltonian -> wick.json
    Wick,
    /// Cauchy loops and conjugation symmetry -> contour.json
    Analyticity,
    /// Non-analytic ground energy example -> table.csv
    DemoCounterexample,
    /// Dense diagonalization oracle -> oracle.json
    Oracle,
}

fn execute(cli: &Cli) -> Result<Outcome, CliError> {
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.max(1))
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let out = cli.out.clone().unwrap_or_else(|| cfg.output.directory.clone());
    match cli.command {
        Command::Check => cmd_check(&cfg, &out),
        Command::Run => cmd_run(&cfg, &out, cli.force),
        Command::Wick => cmd_wick(&cfg, &out),
        Command::Analyticity => cmd_analyticity(&cfg, &out),
        Command::DemoCounterexample => cmd_demo_counterexample(&cfg, &out),
        Command::Oracle => cmd_oracle(&cfg, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(outcome) => {
            for m in &outcome.messages {
                println!("{m}");
            }
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            ExitCode::from(outcome.code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
