use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use svgene::commands::{
    cmd_evaluate, cmd_fit, cmd_simulate, parse_grid, scenario_names, CliError, EvaluateArgs, FitArgs, SimulateArgs,
};
use svgene::io::DatasetPaths;

const FIT_TABLES: &str = "\
Output tables (tab-separated, LF, first line `# run_id <id>`):
  pip.tsv            gene, <kernel>_pip1, <kernel>_pip2 per kernel, combined_pip1, combined_pip2, tilde_pip
  selected.tsv       gene, tilde_pip
  model_weights.tsv  kernel, weight, lambda_u
  estimates.tsv      kernel, parameter, target, value
  trace_summary.tsv  kernel, chain, stream, acc_mu0, acc_alpha, acc_phi, acc_gamma, acc_lambda,
                     mean_log_likelihood, plugin_log_likelihood, weight, selected
  manifest.json      run id, input digests, parameters used, per-chain diagnostics

SVGENE_THREADS, when set, takes precedence over --threads.";

const SIMULATE_TABLES: &str = "\
Writes counts.tsv (or counts.mtx with genes.tsv and spots.tsv), coords.tsv,
comps.tsv, network.tsv and truth.tsv (gene, is_sv, beta1, beta2).";

const EVALUATE_TABLES: &str = "\
Output columns: replicate, recall, precision, f1, realized_bfdr, n_selected.
With several replicates, `mean` and `sd` rows follow.";

#[derive(Debug, Parser)]
#[command(name = "svgene", version, about = "Network-assisted detection of spatially variable genes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit all kernel models and select spatially variable genes.
    #[command(after_long_help = FIT_TABLES)]
    Fit(FitCli),
    /// Generate a synthetic dataset with known spatially variable genes.
    #[command(after_long_help = SIMULATE_TABLES)]
    Simulate(SimulateCli),
    /// Score selections against the truth.
    #[command(after_long_help = EVALUATE_TABLES)]
    Evaluate(EvaluateCli),
}

#[derive(Debug, Args)]
struct FitCli {
    /// Counts: dense TSV (spot rows, gene header) or MatrixMarket `.mtx`.
    #[arg(long)]
    counts: PathBuf,
    /// Spot coordinates: spot, x, y.
    #[arg(long)]
    coords: PathBuf,
    /// Cell-type proportions: spot, then one column per cell type.
    #[arg(long)]
    comps: PathBuf,
    /// Gene network edge list: two gene names per line.
    #[arg(long)]
    network: Option<PathBuf>,
    /// Gene names for `.mtx` counts [default: genes.tsv beside the matrix].
    #[arg(long)]
    genes: Option<PathBuf>,
    /// Spot names for `.mtx` counts [default: spots.tsv beside the matrix].
    #[arg(long)]
    spots: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// TOML file with [hyper], [chain] and [proposal] tables.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Chains per kernel.
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Bayesian false discovery rate bound.
    #[arg(long)]
    bfdr: Option<f64>,
    /// Worker threads [default: available parallelism].
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct SimulateCli {
    /// basic-{star|scalefree}-{linear|exponential|periodic}-{lo|hi} or m1.
    scenario: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Spot lattice as ROWSxCOLS.
    #[arg(long)]
    grid: Option<String>,
    /// Number of genes, a multiple of the sub-network size.
    #[arg(long)]
    p: Option<usize>,
    /// Number of informative sub-networks.
    #[arg(long)]
    sv_subnets: Option<usize>,
    /// Counts format.
    #[arg(long, default_value = "tsv", value_parser = ["tsv", "mtx"])]
    format: String,
}

#[derive(Debug, Args)]
struct EvaluateCli {
    #[arg(long, requires = "truth")]
    selected: Option<PathBuf>,
    #[arg(long, requires = "selected")]
    truth: Option<PathBuf>,
    /// Replicate directories, each holding selected.tsv and truth.tsv.
    #[arg(long, num_args = 1..)]
    dirs: Vec<PathBuf>,
    /// Metrics table [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
}

fn threads_from_env(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    match std::env::var("SVGENE_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| CliError::InvalidArgument(format!("SVGENE_THREADS='{v}' is not a positive integer"))),
        Err(_) => Ok(flag),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit(a) => {
            let args = FitArgs {
                paths: DatasetPaths {
                    counts: a.counts,
                    coords: a.coords,
                    comps: a.comps,
                    network: a.network,
                    genes: a.genes,
                    spots: a.spots,
                },
                out: a.out,
                config: a.config,
                chains: a.chains,
                iterations: a.iterations,
                burn_in: a.burn_in,
                thin: a.thin,
                seed: a.seed,
                bfdr: a.bfdr,
                threads: threads_from_env(a.threads)?,
            };
            let res = cmd_fit(&args)?;
            log::info!("{} genes selected, outputs in {}", res.selected.len(), args.out.display());
        }
        Command::Simulate(a) => {
            if !scenario_names().contains(&a.scenario) {
                return Err(CliError::UnknownScenario(a.scenario));
            }
            let args = SimulateArgs {
                scenario: a.scenario,
                out: a.out,
                seed: a.seed,
                grid: a.grid.as_deref().map(parse_grid).transpose()?,
                genes: a.p,
                sv_subnets: a.sv_subnets,
                mtx: a.format == "mtx",
            };
            cmd_simulate(&args)?;
        }
        Command::Evaluate(a) => {
            let args = EvaluateArgs {
                selected: a.selected,
                truth: a.truth,
                replicates: a.dirs,
                out: a.out,
            };
            let rows = cmd_evaluate(&args)?;
            if args.out.is_none() {
                for r in rows {
                    println!("{}", r.join("\t"));
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("error: {}: {msg}", e.category());
            ExitCode::FAILURE
        }
    }
}
