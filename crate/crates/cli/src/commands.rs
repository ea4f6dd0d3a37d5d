//! The `fit`, `simulate` and `evaluate` commands.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::Serialize;
use sha2::{Digest, Sha256};
use svgene_core::inference::realized_bfdr;
use svgene_core::pipeline::FitError;
use svgene_core::simulate::{classification_metrics, generate_m1, simulate, NetworkKind, Pattern, ScenarioConfig, SimError, SimulatedData};
use svgene_core::{fit, ChainConfig, FitOptions, FitResult, HyperParams, KernelSpec, ProposalScales};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::io::{
    fmt_num, load_dataset, read_lines, write_comps, write_coords, write_dense_counts, write_mtx_counts,
    write_network, DatasetPaths, IoError, LoadedDataset, TsvWriter,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error("unknown scenario '{0}'")]
    UnknownScenario(String),
    #[error("truth file not found: {0}")]
    MissingTruth(PathBuf),
    #[error("{0}")]
    InvalidArgument(String),
}

impl CliError {
    /// Stable category name, the first field of the error line.
    pub fn category(&self) -> &'static str {
        match self {
            Self::Io(e) => e.category(),
            Self::Config(_) => "ConfigError",
            Self::Fit(_) => "FitError",
            Self::Simulation(_) => "SimulationError",
            Self::UnknownScenario(_) => "UnknownScenario",
            Self::MissingTruth(_) => "MissingTruth",
            Self::InvalidArgument(_) => "InvalidArgument",
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn file_digest(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(sha256_hex(&bytes))
}

/// Options of `svgene fit` after flag parsing.
#[derive(Debug, Clone, Default)]
pub struct FitArgs {
    pub paths: DatasetPaths,
    pub out: PathBuf,
    pub config: Option<PathBuf>,
    pub chains: Option<usize>,
    pub iterations: Option<usize>,
    pub burn_in: Option<usize>,
    pub thin: Option<usize>,
    pub seed: Option<u64>,
    pub bfdr: Option<f64>,
    pub threads: Option<usize>,
}

/// Flags override the configuration file, which overrides the defaults.
pub fn resolve_fit_options(args: &FitArgs) -> Result<(RunConfig, FitOptions), CliError> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(v) = args.iterations {
        cfg.chain.iterations = v;
    }
    if let Some(v) = args.burn_in {
        cfg.chain.burn_in = v;
    }
    if let Some(v) = args.thin {
        cfg.chain.thin = v;
    }
    if let Some(v) = args.seed {
        cfg.chain.seed = v;
    }
    if let Some(v) = args.bfdr {
        cfg.hyper.bfdr_level = v;
    }
    let opts = FitOptions {
        hyper: cfg.hyper.clone(),
        chain: cfg.chain.clone(),
        proposal: cfg.proposal.clone(),
        chains: args.chains.unwrap_or(FitOptions::default().chains),
        threads: args.threads,
        kernels: KernelSpec::ALL.to_vec(),
    };
    Ok((cfg, opts))
}

#[derive(Debug, Serialize)]
struct InputRecord {
    role: &'static str,
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct ChainRecord {
    kernel: &'static str,
    chain: usize,
    seed: u64,
    stream: u64,
    acceptance_mu0: f64,
    acceptance_alpha: f64,
    acceptance_phi: f64,
    acceptance_gamma: f64,
    acceptance_lambda: f64,
    mean_log_likelihood: f64,
    plugin_log_likelihood: f64,
    seconds: f64,
}

#[derive(Debug, Serialize)]
struct KernelRecord {
    kernel: &'static str,
    lambda_u: f64,
    weight: f64,
}

/// Everything needed to audit or repeat a fit.
#[derive(Debug, Serialize)]
struct RunManifest {
    run_id: String,
    version: &'static str,
    inputs: Vec<InputRecord>,
    hyper: HyperParams,
    chain: ChainConfig,
    proposal: ProposalScales,
    chains: usize,
    threads: Option<usize>,
    n_spots: usize,
    n_genes: usize,
    n_cell_types: usize,
    duplicate_edges: usize,
    kernels: Vec<KernelRecord>,
    chain_runs: Vec<ChainRecord>,
    selected: usize,
    seconds: f64,
    outputs: Vec<&'static str>,
}

pub const FIT_OUTPUTS: [&str; 6] = [
    "pip.tsv",
    "selected.tsv",
    "model_weights.tsv",
    "estimates.tsv",
    "trace_summary.tsv",
    "manifest.json",
];

/// Fits, then writes every output table and the manifest into `args.out`.
pub fn cmd_fit(args: &FitArgs) -> Result<FitResult, CliError> {
    let start = Instant::now();
    let (cfg, opts) = resolve_fit_options(args)?;
    let loaded = load_dataset(&args.paths)?;
    let mut inputs = vec![
        ("counts", &args.paths.counts),
        ("coords", &args.paths.coords),
        ("comps", &args.paths.comps),
    ];
    if let Some(n) = &args.paths.network {
        inputs.push(("network", n));
    }
    let inputs = inputs
        .into_iter()
        .map(|(role, path)| {
            Ok(InputRecord {
                role,
                path: path.display().to_string(),
                sha256: file_digest(path)?,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let fingerprint = serde_json::json!({
        "inputs": inputs.iter().map(|i| (i.role, i.sha256.clone())).collect::<Vec<_>>(),
        "config": cfg,
        "chains": opts.chains,
    });
    let run_id = sha256_hex(fingerprint.to_string().as_bytes())[..16].to_string();
    info!("run {run_id}: {} spots, {} genes", loaded.data.n_spots(), loaded.data.n_genes());

    let result = fit(&loaded.data, &opts)?;
    write_fit_outputs(&args.out, &run_id, &loaded, &result)?;

    let manifest = RunManifest {
        run_id,
        version: env!("CARGO_PKG_VERSION"),
        inputs,
        hyper: opts.hyper.clone(),
        chain: opts.chain.clone(),
        proposal: opts.proposal.clone(),
        chains: opts.chains,
        threads: opts.threads,
        n_spots: loaded.data.n_spots(),
        n_genes: loaded.data.n_genes(),
        n_cell_types: loaded.data.n_types(),
        duplicate_edges: loaded.duplicate_edges,
        kernels: result
            .kernels
            .iter()
            .zip(&result.lambda_u)
            .zip(&result.model_weights)
            .map(|((k, &lambda_u), &weight)| KernelRecord {
                kernel: k.name(),
                lambda_u,
                weight,
            })
            .collect(),
        chain_runs: result
            .chain_summaries
            .iter()
            .map(|s| ChainRecord {
                kernel: result.kernels[s.kernel].name(),
                chain: s.chain,
                seed: opts.chain.seed,
                stream: s.stream,
                acceptance_mu0: s.acceptance.mu0,
                acceptance_alpha: s.acceptance.alpha,
                acceptance_phi: s.acceptance.phi,
                acceptance_gamma: s.acceptance.gamma,
                acceptance_lambda: s.acceptance.lambda,
                mean_log_likelihood: s.mean_log_likelihood,
                plugin_log_likelihood: s.plugin_log_likelihood,
                seconds: s.seconds,
            })
            .collect(),
        selected: result.selected.len(),
        seconds: start.elapsed().as_secs_f64(),
        outputs: FIT_OUTPUTS.to_vec(),
    };
    let path = args.out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    std::fs::write(&path, text).map_err(|source| IoError::Io { path, source })?;
    Ok(result)
}

fn tagged(path: &Path, run_id: &str) -> Result<TsvWriter, IoError> {
    let mut w = TsvWriter::create(path)?;
    w.row([format!("# run_id {run_id}")])?;
    Ok(w)
}

/// Mean over chains of a per-chain vector.
fn chain_mean(rows: impl Iterator<Item = Vec<f64>>) -> Vec<f64> {
    let mut sum: Vec<f64> = Vec::new();
    let mut count = 0.0;
    for r in rows {
        if sum.is_empty() {
            sum = vec![0.0; r.len()];
        }
        sum.iter_mut().zip(r).for_each(|(s, v)| *s += v);
        count += 1.0;
    }
    sum.iter_mut().for_each(|s| *s /= count);
    sum
}

fn write_fit_outputs(out: &Path, run_id: &str, loaded: &LoadedDataset, res: &FitResult) -> Result<(), IoError> {
    let p = loaded.genes.len();
    let names: Vec<&str> = res.kernels.iter().map(|k| k.name()).collect();

    let mut w = tagged(&out.join("pip.tsv"), run_id)?;
    let mut header = vec!["gene".to_string()];
    for n in &names {
        header.push(format!("{n}_pip1"));
        header.push(format!("{n}_pip2"));
    }
    header.extend(["combined_pip1", "combined_pip2", "tilde_pip"].map(String::from));
    w.row(&header)?;
    for (j, gene) in loaded.genes.iter().enumerate() {
        let mut row = vec![gene.clone()];
        for pip in &res.kernel_pip {
            row.push(fmt_num(pip[j]));
            row.push(fmt_num(pip[p + j]));
        }
        row.push(fmt_num(res.combined_pip[j]));
        row.push(fmt_num(res.combined_pip[p + j]));
        row.push(fmt_num(res.tilde_pip[j]));
        w.row(&row)?;
    }
    w.finish()?;

    let mut w = tagged(&out.join("selected.tsv"), run_id)?;
    w.row(["gene", "tilde_pip"])?;
    for &j in &res.selected {
        w.row([loaded.genes[j].clone(), fmt_num(res.tilde_pip[j])])?;
    }
    w.finish()?;

    let mut w = tagged(&out.join("model_weights.tsv"), run_id)?;
    w.row(["kernel", "weight", "lambda_u"])?;
    for ((n, &wt), &lu) in names.iter().zip(&res.model_weights).zip(&res.lambda_u) {
        w.row([n.to_string(), fmt_num(wt), fmt_num(lu)])?;
    }
    w.finish()?;

    let mut w = tagged(&out.join("estimates.tsv"), run_id)?;
    w.row(["kernel", "parameter", "target", "value"])?;
    for (k, fits) in res.fits.iter().enumerate() {
        let kernel = names[k];
        let mut put = |param: &str, target: &str, v: f64| w.row([kernel, param, target, &fmt_num(v)]);
        let mu0 = chain_mean(fits.iter().map(|f| f.mu0_hat.clone()));
        let alpha = chain_mean(fits.iter().map(|f| f.alpha_hat.clone()));
        let pip = chain_mean(fits.iter().map(|f| f.pip.clone()));
        // Pooled conditional mean: chains weighted by their inclusion counts.
        let weighted = chain_mean(fits.iter().map(|f| f.pip.iter().zip(&f.beta_hat).map(|(a, b)| a * b).collect()));
        for (j, gene) in loaded.genes.iter().enumerate() {
            put("mu0", gene, mu0[j])?;
        }
        for (idx, ct) in loaded.cell_types.iter().enumerate().skip(1) {
            put("alpha", ct, alpha[idx - 1])?;
        }
        for (dim, label) in ["beta1", "beta2"].iter().enumerate() {
            for (j, gene) in loaded.genes.iter().enumerate() {
                let idx = dim * p + j;
                let v = if pip[idx] > 0.0 { weighted[idx] / pip[idx] } else { 0.0 };
                put(label, gene, v)?;
            }
        }
        let scalar = |f: fn(&svgene_core::inference::KernelFit) -> f64| fits.iter().map(f).sum::<f64>() / fits.len() as f64;
        put("phi", "", scalar(|f| f.phi_hat))?;
        put("lambda", "", scalar(|f| f.lambda_hat))?;
        put("sigma_gamma_sq", "", scalar(|f| f.sigma_gamma_sq_hat))?;
    }
    w.finish()?;

    let mut w = tagged(&out.join("trace_summary.tsv"), run_id)?;
    w.row([
        "kernel",
        "chain",
        "stream",
        "acc_mu0",
        "acc_alpha",
        "acc_phi",
        "acc_gamma",
        "acc_lambda",
        "mean_log_likelihood",
        "plugin_log_likelihood",
        "weight",
        "selected",
    ])?;
    for s in &res.chain_summaries {
        let combo = &res.per_chain[s.chain];
        w.row([
            names[s.kernel].to_string(),
            s.chain.to_string(),
            s.stream.to_string(),
            fmt_num(s.acceptance.mu0),
            fmt_num(s.acceptance.alpha),
            fmt_num(s.acceptance.phi),
            fmt_num(s.acceptance.gamma),
            fmt_num(s.acceptance.lambda),
            fmt_num(s.mean_log_likelihood),
            fmt_num(s.plugin_log_likelihood),
            fmt_num(combo.weights[s.kernel]),
            combo.selection.genes.len().to_string(),
        ])?;
    }
    w.finish()
}

/// Options of `svgene simulate`.
#[derive(Debug, Clone, Default)]
pub struct SimulateArgs {
    pub scenario: String,
    pub out: PathBuf,
    pub seed: u64,
    /// `(rows, cols)` of the spot lattice.
    pub grid: Option<(usize, usize)>,
    pub genes: Option<usize>,
    pub sv_subnets: Option<usize>,
    pub mtx: bool,
}

/// Parses `ROWSxCOLS`.
pub fn parse_grid(text: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::InvalidArgument(format!("grid '{text}' is not of the form ROWSxCOLS"));
    let (r, c) = text.split_once(['x', 'X']).ok_or_else(bad)?;
    let rows: usize = r.trim().parse().map_err(|_| bad())?;
    let cols: usize = c.trim().parse().map_err(|_| bad())?;
    if rows == 0 || cols == 0 {
        return Err(bad());
    }
    Ok((rows, cols))
}

/// Names of the built-in scenarios.
pub fn scenario_names() -> Vec<String> {
    let mut out = Vec::new();
    for kind in ["star", "scalefree"] {
        for pattern in ["linear", "exponential", "periodic"] {
            for level in ["lo", "hi"] {
                out.push(format!("basic-{kind}-{pattern}-{level}"));
            }
        }
    }
    out.push("m1".into());
    out
}

/// Resolves a basic preset with the size overrides applied.
pub fn basic_scenario(args: &SimulateArgs) -> Result<ScenarioConfig, CliError> {
    let unknown = || CliError::UnknownScenario(args.scenario.clone());
    let parts: Vec<&str> = args.scenario.split('-').collect();
    let [ "basic", kind, pattern, level ] = parts.as_slice() else {
        return Err(unknown());
    };
    let kind = match *kind {
        "star" => NetworkKind::Star,
        "scalefree" => NetworkKind::ScaleFree,
        _ => return Err(unknown()),
    };
    let pattern = match *pattern {
        "linear" => Pattern::Linear,
        "exponential" => Pattern::Exponential,
        "periodic" => Pattern::Periodic,
        _ => return Err(unknown()),
    };
    let high = match *level {
        "lo" => false,
        "hi" => true,
        _ => return Err(unknown()),
    };
    let mut cfg = ScenarioConfig::basic(kind, pattern, high, args.seed);
    if let Some((rows, cols)) = args.grid {
        cfg.rows = rows;
        cfg.cols = cols;
    }
    if let Some(p) = args.genes {
        if p == 0 || p % cfg.subnet_size != 0 {
            return Err(CliError::InvalidArgument(format!(
                "gene count {p} must be a positive multiple of the sub-network size {}",
                cfg.subnet_size
            )));
        }
        // Keep the informative share of sub-networks.
        let count = p / cfg.subnet_size;
        cfg.sv_subnets = (cfg.sv_subnets * count).div_ceil(cfg.subnet_count);
        cfg.subnet_count = count;
    }
    if let Some(s) = args.sv_subnets {
        cfg.sv_subnets = s;
    }
    Ok(cfg)
}

pub fn gene_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("g{j}")).collect()
}

pub fn spot_names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("s{i}")).collect()
}

pub fn cell_type_names(k: usize) -> Vec<String> {
    (1..=k).map(|t| format!("ct{t}")).collect()
}

/// Writes a simulated dataset in the loader formats plus `truth.tsv`.
pub fn write_simulation(out: &Path, sim: &SimulatedData, mtx: bool) -> Result<DatasetPaths, IoError> {
    let genes = gene_names(sim.counts.n_genes());
    let spots = spot_names(sim.counts.n_spots());
    let types = cell_type_names(sim.comps.n_types());
    let counts = if mtx {
        let path = out.join("counts.mtx");
        write_mtx_counts(&path, &sim.counts, &spots, &genes)?;
        path
    } else {
        let path = out.join("counts.tsv");
        write_dense_counts(&path, &sim.counts, &spots, &genes)?;
        path
    };
    let paths = DatasetPaths {
        counts,
        coords: out.join("coords.tsv"),
        comps: out.join("comps.tsv"),
        network: Some(out.join("network.tsv")),
        genes: None,
        spots: None,
    };
    write_coords(&paths.coords, &sim.coords, &spots)?;
    write_comps(&paths.comps, &sim.comps, &spots, &types)?;
    write_network(paths.network.as_deref().expect("set above"), &sim.network, &genes)?;
    let p = genes.len();
    let sv: BTreeSet<usize> = sim.truth.sv_genes.iter().copied().collect();
    let mut w = TsvWriter::create(&out.join("truth.tsv"))?;
    w.row(["gene", "is_sv", "beta1", "beta2"])?;
    for (j, g) in genes.iter().enumerate() {
        w.row([
            g.clone(),
            u8::from(sv.contains(&j)).to_string(),
            fmt_num(sim.truth.beta_true[j]),
            fmt_num(sim.truth.beta_true[p + j]),
        ])?;
    }
    w.finish()?;
    Ok(paths)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<DatasetPaths, CliError> {
    let sim = if args.scenario == "m1" {
        if args.grid.is_some() || args.genes.is_some() || args.sv_subnets.is_some() {
            return Err(CliError::InvalidArgument("the m1 scenario has a fixed size".into()));
        }
        generate_m1(args.seed)?
    } else {
        simulate(&basic_scenario(args)?)?
    };
    info!(
        "scenario {}: {} spots, {} genes, {} informative",
        args.scenario,
        sim.counts.n_spots(),
        sim.counts.n_genes(),
        sim.truth.sv_genes.len()
    );
    Ok(write_simulation(&args.out, &sim, args.mtx)?)
}

/// Options of `svgene evaluate`: either one selection and truth pair or a
/// list of replicate directories holding both files.
#[derive(Debug, Clone, Default)]
pub struct EvaluateArgs {
    pub selected: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub replicates: Vec<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Metrics of one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateMetrics {
    pub label: String,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub realized_bfdr: f64,
    pub n_selected: usize,
}

fn read_table(path: &Path) -> Result<Vec<(usize, Vec<String>)>, IoError> {
    Ok(read_lines(path)?
        .into_iter()
        .map(|(l, text)| (l, text.split('\t').map(|s| s.trim().to_string()).collect()))
        .collect())
}

fn column(path: &Path, header: &[String], name: &str) -> Result<usize, IoError> {
    header.iter().position(|h| h == name).ok_or_else(|| IoError::Parse {
        path: path.to_path_buf(),
        line: 1,
        msg: format!("missing column '{name}'"),
    })
}

pub fn evaluate_pair(label: &str, selected: &Path, truth: &Path) -> Result<ReplicateMetrics, CliError> {
    if !truth.exists() {
        return Err(CliError::MissingTruth(truth.to_path_buf()));
    }
    let truth_rows = read_table(truth)?;
    let Some(((_, header), body)) = truth_rows.split_first() else {
        return Err(IoError::Parse {
            path: truth.to_path_buf(),
            line: 1,
            msg: "empty truth table".into(),
        }
        .into());
    };
    let (gc, sc) = (column(truth, header, "gene")?, column(truth, header, "is_sv")?);
    let mut index = HashMap::new();
    let mut sv = Vec::new();
    for (pos, (line, row)) in body.iter().enumerate() {
        let flag = row.get(sc).map(String::as_str);
        match flag {
            Some("1") => sv.push(pos),
            Some("0") => {}
            _ => {
                return Err(IoError::Parse {
                    path: truth.to_path_buf(),
                    line: *line,
                    msg: "is_sv must be 0 or 1".into(),
                }
                .into())
            }
        }
        index.insert(row[gc].clone(), pos);
    }
    let sel_rows = read_table(selected)?;
    let Some(((_, header), body)) = sel_rows.split_first() else {
        return Err(IoError::Parse {
            path: selected.to_path_buf(),
            line: 1,
            msg: "empty selection table".into(),
        }
        .into());
    };
    let (gc, pc) = (column(selected, header, "gene")?, column(selected, header, "tilde_pip")?);
    let mut chosen = Vec::with_capacity(body.len());
    let mut pip = vec![0.0; index.len()];
    for (line, row) in body {
        let name = &row[gc];
        let &pos = index.get(name).ok_or_else(|| IoError::UnknownGene {
            path: selected.to_path_buf(),
            line: *line,
            name: name.clone(),
        })?;
        pip[pos] = row
            .get(pc)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| IoError::Parse {
                path: selected.to_path_buf(),
                line: *line,
                msg: "invalid tilde_pip".into(),
            })?;
        chosen.push(pos);
    }
    let m = classification_metrics(&chosen, &sv);
    Ok(ReplicateMetrics {
        label: label.to_string(),
        recall: m.recall,
        precision: m.precision,
        f1: m.f1,
        realized_bfdr: realized_bfdr(&pip, &chosen),
        n_selected: chosen.len(),
    })
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Evaluates every replicate and, for more than one, appends `mean` and `sd`
/// rows. Returns the rows written.
pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<Vec<Vec<String>>, CliError> {
    let mut reps = Vec::new();
    match (&args.selected, &args.truth) {
        (Some(sel), Some(truth)) => reps.push(evaluate_pair("1", sel, truth)?),
        (None, None) => {}
        _ => return Err(CliError::InvalidArgument("--selected and --truth go together".into())),
    }
    for dir in &args.replicates {
        let label = dir.display().to_string();
        reps.push(evaluate_pair(&label, &dir.join("selected.tsv"), &dir.join("truth.tsv"))?);
    }
    if reps.is_empty() {
        return Err(CliError::InvalidArgument("nothing to evaluate".into()));
    }
    let mut rows = vec![["replicate", "recall", "precision", "f1", "realized_bfdr", "n_selected"]
        .map(String::from)
        .to_vec()];
    for r in &reps {
        rows.push(vec![
            r.label.clone(),
            fmt_num(r.recall),
            fmt_num(r.precision),
            fmt_num(r.f1),
            fmt_num(r.realized_bfdr),
            r.n_selected.to_string(),
        ]);
    }
    if reps.len() > 1 {
        let cols: [fn(&ReplicateMetrics) -> f64; 5] = [
            |r| r.recall,
            |r| r.precision,
            |r| r.f1,
            |r| r.realized_bfdr,
            |r| r.n_selected as f64,
        ];
        let stats: Vec<(f64, f64)> = cols
            .iter()
            .map(|f| mean_sd(&reps.iter().map(f).collect::<Vec<_>>()))
            .collect();
        rows.push(std::iter::once("mean".to_string()).chain(stats.iter().map(|s| fmt_num(s.0))).collect());
        rows.push(std::iter::once("sd".to_string()).chain(stats.iter().map(|s| fmt_num(s.1))).collect());
    }
    if let Some(path) = &args.out {
        let mut w = TsvWriter::create(path)?;
        for r in &rows {
            w.row(r)?;
        }
        w.finish()?;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("16x16").unwrap(), (16, 16));
        assert_eq!(parse_grid("20X30").unwrap(), (20, 30));
        assert!(parse_grid("16").is_err());
        assert!(parse_grid("0x4").is_err());
    }

    #[test]
    fn presets_resolve() {
        for name in scenario_names().iter().filter(|n| n.starts_with("basic")) {
            let args = SimulateArgs {
                scenario: name.clone(),
                ..SimulateArgs::default()
            };
            let cfg = basic_scenario(&args).unwrap();
            assert_eq!((cfg.rows * cfg.cols, cfg.n_genes(), cfg.sv_subnets * cfg.subnet_size), (1024, 5000, 500));
        }
        let args = SimulateArgs {
            scenario: "basic-ring-linear-lo".into(),
            ..SimulateArgs::default()
        };
        assert!(matches!(basic_scenario(&args), Err(CliError::UnknownScenario(_))));
    }

    #[test]
    fn size_overrides() {
        let args = SimulateArgs {
            scenario: "basic-star-linear-lo".into(),
            grid: Some((16, 16)),
            genes: Some(500),
            ..SimulateArgs::default()
        };
        let cfg = basic_scenario(&args).unwrap();
        assert_eq!((cfg.rows, cfg.cols, cfg.subnet_count, cfg.sv_subnets), (16, 16, 10, 1));
        let args = SimulateArgs {
            genes: Some(510),
            ..args
        };
        assert!(basic_scenario(&args).is_err());
    }

    #[test]
    fn replicate_aggregation() {
        let (m, sd) = mean_sd(&[0.8, 0.9, 1.0]);
        assert!((m - 0.9).abs() < 1e-12 && (sd - 0.1).abs() < 1e-12);
        assert_eq!(mean_sd(&[0.5]), (0.5, 0.0));
    }
}
