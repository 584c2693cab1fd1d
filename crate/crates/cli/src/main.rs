mod commands;
mod config;
mod error;

use clap::{Parser, Subcommand};
use commands::Run;
use config::{parse_pairs, Key, Resolved};
use error::CliError;
use std::path::PathBuf;
use std::process::ExitCode;

/// Seeded experiments on convolutional, locally connected and dense networks.
#[derive(Parser, Debug)]
#[command(name = "cnnlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// key = value file, one pair per line, `#` comments.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a single key; repeatable and applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,

    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Output directory; created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true, env = "CNNLAB_THREADS")]
    threads: Option<usize>,

    /// Print the accepted keys and their defaults instead of running.
    #[arg(long, global = true)]
    list_keys: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Build every exact construction and compare against direct formulas.
    CheckConstructions,
    /// Train one model on one target.
    Train,
    /// CNN versus width-10 FCN versus least squares on sparse product targets.
    Figure2,
    /// Coupled-trajectory equivariance checks for SGD and Adam.
    Equivariance,
    /// Monte Carlo L2 distance laws for the separation target family.
    Distances,
    /// Combinatorial, covering and excess-risk calculators.
    Bounds,
    /// Fano-based minimal sample sizes over a range of dimensions.
    LowerboundSweep,
}

type Handler = fn(&Resolved, &mut Run) -> Result<(), CliError>;

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::CheckConstructions => "check-constructions",
            Command::Train => "train",
            Command::Figure2 => "figure2",
            Command::Equivariance => "equivariance",
            Command::Distances => "distances",
            Command::Bounds => "bounds",
            Command::LowerboundSweep => "lowerbound-sweep",
        }
    }

    fn spec(self) -> (&'static [Key], Handler) {
        match self {
            Command::CheckConstructions => (commands::CHECK_CONSTRUCTIONS, commands::check_constructions),
            Command::Train => (commands::TRAIN, commands::train_cmd),
            Command::Figure2 => (commands::FIGURE2, commands::figure2_cmd),
            Command::Equivariance => (commands::EQUIVARIANCE, commands::equivariance_cmd),
            Command::Distances => (commands::DISTANCES, commands::distances_cmd),
            Command::Bounds => (commands::BOUNDS, commands::bounds_cmd),
            Command::LowerboundSweep => (commands::LOWERBOUND_SWEEP, commands::lowerbound_sweep_cmd),
        }
    }
}

fn read_pairs(cli: &Cli) -> Result<Vec<(String, String)>, CliError> {
    let mut pairs = Vec::new();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io { path: path.display().to_string(), source: e })?;
        pairs.extend(parse_pairs(&text)?.into_iter().map(|(k, v, _)| (k, v)));
    }
    for s in &cli.set {
        let (k, v) = s.split_once('=').ok_or_else(|| CliError::Syntax { line: 0, text: s.clone() })?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

fn manifest(cmd: Command, cfg: &Resolved, run: &Run) -> String {
    let checks: Vec<_> = run
        .checks
        .iter()
        .map(|c| serde_json::json!({ "name": c.name, "pass": c.pass, "detail": c.detail }))
        .collect();
    let doc = serde_json::json!({
        "subcommand": cmd.name(),
        "version": env!("CARGO_PKG_VERSION"),
        "seed": run.seed,
        "config": cfg.map(),
        "outputs": run.files,
        "checks": checks,
    });
    serde_json::to_string_pretty(&doc).expect("json") + "\n"
}

fn execute(cli: &Cli) -> Result<usize, CliError> {
    let (schema, handler) = cli.command.spec();
    if cli.list_keys {
        for k in schema {
            println!("{:<16} {:<24} {}", k.name, k.default, k.help);
        }
        return Ok(0);
    }
    let cfg = Resolved::new(schema, &read_pairs(cli)?)?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Threads(e.to_string()))?;
    }
    std::fs::create_dir_all(&cli.out).map_err(|e| CliError::Io { path: cli.out.display().to_string(), source: e })?;
    let mut run = Run::new(&cli.out, cli.seed);
    handler(&cfg, &mut run)?;
    let path = cli.out.join("manifest.json");
    std::fs::write(&path, manifest(cli.command, &cfg, &run)).map_err(|e| CliError::Io { path: path.display().to_string(), source: e })?;
    for c in &run.checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(run.failures())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            eprintln!("cnnlab {}: {}", cli.command.name(), CliError::Failed(n));
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("cnnlab {}: {e}", cli.command.name());
            ExitCode::from(2)
        }
    }
}
