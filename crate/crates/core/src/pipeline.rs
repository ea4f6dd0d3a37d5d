//! Runs every kernel model on several chains and combines the results.

use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use thiserror::Error;

use crate::inference::{
    bfdr_select, chain_consensus, combine_pips, model_weights, plugin_log_likelihood, summarize_kernel, KernelFit,
    Selection,
};
use crate::kernels::{build_design, quantile_type7, resolve_scales, standardize, DesignMatrix, Kernel, KernelError, KernelSpec};
use crate::model::{HyperParams, ModelError, ProposalScales, ValidatedDataset};
use crate::network::{normalized_laplacian, precision_factorize, rough_beta, signed_laplacian, NetworkError, PrecisionFactors, SignedLaplacian};
use crate::sampler::{AcceptanceRates, ChainConfig, KernelInputs, Sampler, SamplerError};

#[derive(Debug, Error)]
pub enum FitError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("kernel {kernel}, chain {chain}: {source}")]
    Sampler {
        kernel: &'static str,
        chain: usize,
        source: SamplerError,
    },
    #[error("worker pool: {0}")]
    Pool(String),
    #[error("invalid options: {0}")]
    Options(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub hyper: HyperParams,
    pub chain: ChainConfig,
    pub proposal: ProposalScales,
    pub chains: usize,
    /// Worker threads; `None` uses the available parallelism.
    pub threads: Option<usize>,
    pub kernels: Vec<KernelSpec>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            hyper: HyperParams::default(),
            chain: ChainConfig::default(),
            proposal: ProposalScales::default(),
            chains: 5,
            threads: None,
            kernels: KernelSpec::ALL.to_vec(),
        }
    }
}

/// Everything one kernel model needs, shared by its chains.
#[derive(Debug, Clone)]
pub struct PreparedKernel {
    pub spec: KernelSpec,
    pub kernel: Kernel,
    pub design: DesignMatrix,
    pub laplacian: SignedLaplacian,
    pub factors: PrecisionFactors,
    pub lambda_l: f64,
    pub lambda_u: f64,
    /// True when the rough estimate fell back to zeros.
    pub rough_fallback: bool,
}

impl PreparedKernel {
    pub fn inputs<'a>(&'a self, data: &'a ValidatedDataset) -> KernelInputs<'a> {
        KernelInputs {
            data,
            design: &self.design,
            laplacian: &self.laplacian,
            factors: &self.factors,
            lambda_l: self.lambda_l,
            lambda_u: self.lambda_u,
        }
    }
}

/// Upper threshold bound: the configured value, or the configured quantile
/// of `|rough beta|`, lifted above `lambda_l` when degenerate.
pub fn resolve_lambda_u(hp: &HyperParams, tilde_beta: &[f64]) -> f64 {
    if let Some(u) = hp.lambda_u {
        return u;
    }
    let mut abs: Vec<f64> = tilde_beta.iter().map(|b| b.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let q = quantile_type7(&abs, HyperParams::LAMBDA_U_QUANTILE);
    if q > hp.lambda_l {
        q
    } else {
        warn!("rough estimates are degenerate; widening the threshold range");
        hp.lambda_l + 1e-3
    }
}

pub fn prepare_kernels(data: &ValidatedDataset, hp: &HyperParams, specs: &[KernelSpec]) -> Result<Vec<PreparedKernel>, FitError> {
    hp.validate()?;
    let std = standardize(data.coords().points())?;
    let scales = resolve_scales(&std)?;
    let lap = normalized_laplacian(data.network());
    specs
        .iter()
        .map(|&spec| {
            let kernel = Kernel::resolve(spec, &scales);
            let design = build_design(&std, &kernel);
            let (tilde, rough_fallback) = match rough_beta(data, &design) {
                Ok(b) => (b, false),
                Err(NetworkError::SingularDesign) => {
                    warn!("kernel {spec}: singular rough-estimate design; using zeros");
                    (vec![0.0; 2 * data.n_genes()], true)
                }
                Err(e) => return Err(e.into()),
            };
            let lambda_u = resolve_lambda_u(hp, &tilde);
            let laplacian = signed_laplacian(&lap, &tilde, hp.ridge_epsilon);
            let factors = precision_factorize(&laplacian)?;
            Ok(PreparedKernel {
                spec,
                kernel,
                design,
                laplacian,
                factors,
                lambda_l: hp.lambda_l,
                lambda_u,
                rough_fallback,
            })
        })
        .collect()
}

/// Random stream of chain `chain` of kernel `kernel`.
pub fn chain_stream(kernel: usize, chain: usize) -> u64 {
    ((kernel as u64) << 32) | chain as u64
}

/// Diagnostics of one chain of one kernel model.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSummary {
    pub kernel: usize,
    pub chain: usize,
    pub stream: u64,
    pub acceptance: AcceptanceRates,
    pub mean_log_likelihood: f64,
    pub plugin_log_likelihood: f64,
    pub seconds: f64,
}

/// Per-chain combination across kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainCombination {
    pub log_likelihoods: Vec<f64>,
    pub weights: Vec<f64>,
    pub combined_pip: Vec<f64>,
    pub tilde_pip: Vec<f64>,
    pub selection: Selection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub kernels: Vec<KernelSpec>,
    pub lambda_u: Vec<f64>,
    /// `fits[kernel][chain]`.
    pub fits: Vec<Vec<KernelFit>>,
    pub chain_summaries: Vec<ChainSummary>,
    pub per_chain: Vec<ChainCombination>,
    /// Model weights averaged over chains.
    pub model_weights: Vec<f64>,
    /// Per-kernel PIPs averaged over chains.
    pub kernel_pip: Vec<Vec<f64>>,
    /// Combined PIPs averaged over chains.
    pub combined_pip: Vec<f64>,
    pub tilde_pip: Vec<f64>,
    /// Consensus of the per-chain selections.
    pub selected: Vec<usize>,
    /// Cutoff of the BFDR rule applied to the chain-averaged PIPs.
    pub bfdr_cut: f64,
}

impl FitResult {
    pub fn per_chain_selected(&self) -> Vec<Vec<usize>> {
        self.per_chain.iter().map(|c| c.selection.genes.clone()).collect()
    }
}

fn average(rows: impl Iterator<Item = Vec<f64>>) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    let mut count = 0.0;
    for r in rows {
        if out.is_empty() {
            out = vec![0.0; r.len()];
        }
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
        count += 1.0;
    }
    out.iter_mut().for_each(|o| *o /= count);
    out
}

/// Fits all kernel models on `opts.chains` chains each, combines kernels
/// within each chain and takes the consensus across chains.
pub fn fit(data: &ValidatedDataset, opts: &FitOptions) -> Result<FitResult, FitError> {
    if opts.chains == 0 || opts.kernels.is_empty() {
        return Err(FitError::Options("need at least one chain and one kernel".into()));
    }
    opts.chain.validate().map_err(|e| FitError::Options(e.to_string()))?;
    opts.proposal.validate()?;
    let prepared = prepare_kernels(data, &opts.hyper, &opts.kernels)?;
    let jobs: Vec<(usize, usize)> = (0..prepared.len())
        .flat_map(|k| (0..opts.chains).map(move |c| (k, c)))
        .collect();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = opts.threads {
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| FitError::Pool(e.to_string()))?;
    info!("running {} chains on {} threads", jobs.len(), pool.current_num_threads());
    let results: Vec<(KernelFit, ChainSummary)> = pool.install(|| {
        jobs.par_iter()
            .map(|&(k, c)| {
                let pk = &prepared[k];
                let stream = chain_stream(k, c);
                let start = Instant::now();
                let wrap = |source| FitError::Sampler {
                    kernel: pk.spec.name(),
                    chain: c,
                    source,
                };
                let sampler = Sampler::new(pk.inputs(data), &opts.hyper, &opts.proposal, opts.chain.seed, stream).map_err(wrap)?;
                let trace = sampler.run(&opts.chain).map_err(wrap)?;
                let fit = summarize_kernel(&trace);
                let plugin = plugin_log_likelihood(&fit, data, &pk.design);
                let seconds = start.elapsed().as_secs_f64();
                info!("kernel {} chain {c} done in {seconds:.1}s", pk.spec);
                let summary = ChainSummary {
                    kernel: k,
                    chain: c,
                    stream,
                    acceptance: trace.acceptance.clone(),
                    mean_log_likelihood: trace.log_likelihood.iter().sum::<f64>() / trace.len() as f64,
                    plugin_log_likelihood: plugin,
                    seconds,
                };
                Ok((fit, summary))
            })
            .collect::<Result<Vec<_>, FitError>>()
    })?;

    let n_kernels = prepared.len();
    let mut fits: Vec<Vec<KernelFit>> = vec![Vec::with_capacity(opts.chains); n_kernels];
    let mut chain_summaries = Vec::with_capacity(results.len());
    for (fit, summary) in results {
        fits[summary.kernel].push(fit);
        chain_summaries.push(summary);
    }
    let per_chain: Vec<ChainCombination> = (0..opts.chains)
        .map(|c| {
            let log_likelihoods: Vec<f64> = (0..n_kernels)
                .map(|k| chain_summaries[k * opts.chains + c].plugin_log_likelihood)
                .collect();
            let weights = model_weights(&log_likelihoods);
            let pips: Vec<&[f64]> = (0..n_kernels).map(|k| fits[k][c].pip.as_slice()).collect();
            let (combined_pip, tilde_pip) = combine_pips(&pips, &weights);
            let selection = bfdr_select(&tilde_pip, opts.hyper.bfdr_level);
            ChainCombination {
                log_likelihoods,
                weights,
                combined_pip,
                tilde_pip,
                selection,
            }
        })
        .collect();
    let model_weights = average(per_chain.iter().map(|c| c.weights.clone()));
    let kernel_pip = (0..n_kernels)
        .map(|k| average(fits[k].iter().map(|f| f.pip.clone())))
        .collect();
    let combined_pip = average(per_chain.iter().map(|c| c.combined_pip.clone()));
    let p = data.n_genes();
    let tilde_pip: Vec<f64> = (0..p).map(|j| combined_pip[j].max(combined_pip[p + j])).collect();
    let bfdr_cut = bfdr_select(&tilde_pip, opts.hyper.bfdr_level).cutoff;
    let per_chain_sets: Vec<Vec<usize>> = per_chain.iter().map(|c| c.selection.genes.clone()).collect();
    let selected = chain_consensus(&per_chain_sets, opts.hyper.consensus_fraction);
    Ok(FitResult {
        kernels: prepared.iter().map(|pk| pk.spec).collect(),
        lambda_u: prepared.iter().map(|pk| pk.lambda_u).collect(),
        fits,
        chain_summaries,
        per_chain,
        model_weights,
        kernel_pip,
        combined_pip,
        tilde_pip,
        selected,
        bfdr_cut,
    })
}
