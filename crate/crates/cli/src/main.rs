//! `qmpe` — run, analyze and verify parallel Bayesian multiphase estimation
//! simulations from the command line.
//!
//! Exit codes: 0 success, 1 runtime flag (stalled or degenerate runs),
//! 2 configuration error, 3 verification failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "qmpe",
    version,
    about = "Parallel Bayesian multiphase estimation: runs, campaigns, fits, verification"
)]
struct Cli {
    /// TOML configuration file; command-line flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for campaign execution (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Output directory (default: $QMPE_OUTPUT_DIR, else the working
    /// directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one estimation run and persist its round records.
    Run(RunArgs),
    /// Execute a Monte Carlo campaign over one or more decision parameters.
    Campaign(CampaignArgs),
    /// Fit a model to a two-column table produced by `campaign`.
    Fit(FitArgs),
    /// Compare the parallel protocol against the sequential baseline.
    Compare(CompareArgs),
    /// Run the oracle-equivalence batteries of the circuit model.
    Verify(VerifyArgs),
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Number of phases to estimate.
    #[arg(long)]
    d: Option<usize>,
    /// Decision parameter in (0, 1).
    #[arg(long)]
    epsilon: Option<f64>,
    /// Number of rounds.
    #[arg(long = "kmax")]
    k_max: Option<usize>,
    /// Grid points per axis.
    #[arg(long = "grid")]
    grid_points: Option<usize>,
    /// Comma-separated dephasing rates, one per phase.
    #[arg(long, value_delimiter = ',')]
    gamma: Option<Vec<f64>>,
    #[arg(long)]
    seed: Option<u64>,
    /// RNG stream index within the seed.
    #[arg(long)]
    stream: Option<u64>,
    /// Per-round measurement cap.
    #[arg(long = "m-max")]
    m_max: Option<usize>,
    /// Comma-separated true phases; omitted means drawn at random.
    #[arg(long, value_delimiter = ',')]
    theta: Option<Vec<f64>>,
    /// Basename for output artifacts.
    #[arg(long, default_value = "run")]
    label: String,
    /// Also dump the final posterior grid as a text table.
    #[arg(long)]
    dump_grid: bool,
}

#[derive(Args)]
struct CampaignArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Independent runs per decision parameter.
    #[arg(long)]
    reps: Option<usize>,
    /// Comma-separated list of decision parameters to sweep.
    #[arg(long = "eps-list", value_delimiter = ',')]
    eps_list: Option<Vec<f64>>,
    /// Rounds in the plateau-fit tail window.
    #[arg(long)]
    tail: Option<usize>,
}

#[derive(Args)]
struct FitArgs {
    /// Table to fit: comment lines start with '#', first two columns are x
    /// and y.
    #[arg(long)]
    input: PathBuf,
    /// Model: `error` fits c1·x^c2 plus a linear coefficient; `heisenberg`
    /// fits a + b·ln(1/x).
    #[arg(long, value_parser = ["error", "heisenberg"], default_value = "error")]
    model: String,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long, default_value_t = 2)]
    d: usize,
    /// Matched per-round error rate for both protocols.
    #[arg(long = "p-err", default_value_t = 1e-3)]
    p_err: f64,
    /// Coefficients of the linear combination to estimate (defaults to the
    /// first phase difference).
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<f64>>,
    #[arg(long, default_value_t = 50)]
    reps: usize,
    #[arg(long = "kmax", default_value_t = 12)]
    k_max: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    tail: usize,
}

#[derive(Args)]
struct VerifyArgs {
    /// Cases per oracle battery.
    #[arg(long, default_value_t = 1000)]
    cases: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest number of phases exercised by the batteries.
    #[arg(long = "max-d", default_value_t = 3)]
    max_d: usize,
    /// Testing hook: perturb one comparison to exercise the failure path.
    #[arg(long, hide = true)]
    inject_failure: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        // a later duplicate initialization is harmless
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    let result = (|| -> anyhow::Result<u8> {
        let file = config::load(cli.config.as_deref())?;
        let out_dir = config::output_directory(cli.out.as_deref(), &file)?;
        match &cli.command {
            Command::Run(args) => commands::run(&out_dir, &file, args),
            Command::Campaign(args) => commands::campaign(&out_dir, &file, args),
            Command::Fit(args) => commands::fit(args),
            Command::Compare(args) => commands::compare(args),
            Command::Verify(args) => commands::verify(args),
        }
    })();
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
