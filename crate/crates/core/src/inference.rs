//! Posterior summaries, kernel model averaging, BFDR selection and
//! multi-chain consensus.

use crate::kernels::DesignMatrix;
use crate::model::ValidatedDataset;
use crate::sampler::{nb_logpmf, ChainTrace};

/// Posterior summaries of one kernel model from one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelFit {
    /// Inclusion frequency of each of the `2p` coefficients.
    pub pip: Vec<f64>,
    /// Mean of `gamma` over the draws where it is included; 0 if never.
    pub beta_hat: Vec<f64>,
    pub mu0_hat: Vec<f64>,
    pub alpha_hat: Vec<f64>,
    pub phi_hat: f64,
    pub lambda_hat: f64,
    pub sigma_gamma_sq_hat: f64,
    /// Posterior dropout means aligned with [`ValidatedDataset::zero_spots`].
    pub r_hat: Vec<Vec<f64>>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn column_means(rows: &[Vec<f64>]) -> Vec<f64> {
    let m = rows.len() as f64;
    let mut out = vec![0.0; rows.first().map_or(0, Vec::len)];
    for r in rows {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= m);
    out
}

/// # Panics
/// If the trace holds no draws.
pub fn summarize_kernel(trace: &ChainTrace) -> KernelFit {
    assert!(!trace.is_empty(), "cannot summarize an empty trace");
    let m = trace.len() as f64;
    let dim = trace.gamma[0].len();
    let mut hits = vec![0usize; dim];
    let mut sum = vec![0.0; dim];
    for (g, inc) in trace.gamma.iter().zip(&trace.included) {
        for idx in 0..dim {
            if inc[idx] {
                hits[idx] += 1;
                sum[idx] += g[idx];
            }
        }
    }
    KernelFit {
        pip: hits.iter().map(|&h| h as f64 / m).collect(),
        beta_hat: sum
            .iter()
            .zip(&hits)
            .map(|(&s, &h)| if h == 0 { 0.0 } else { s / h as f64 })
            .collect(),
        mu0_hat: column_means(&trace.mu0),
        alpha_hat: column_means(&trace.alpha),
        phi_hat: mean(&trace.phi),
        lambda_hat: mean(&trace.lambda),
        sigma_gamma_sq_hat: mean(&trace.sigma_gamma_sq),
        r_hat: trace.dropout_mean.clone(),
    }
}

/// `sum_ij log[(1 - R_ij) NB(Y_ij | mu_ij, phi) + R_ij I(Y_ij = 0)]` at the
/// plug-in estimates.
pub fn plugin_log_likelihood(fit: &KernelFit, data: &ValidatedDataset, design: &DesignMatrix) -> f64 {
    let n = data.n_spots();
    let p = data.n_genes();
    let comps = data.comps();
    let sf = data.size_factors();
    let offset: Vec<f64> = (0..n)
        .map(|i| comps.row(i).iter().zip(&fit.alpha_hat).map(|(w, a)| w * a).sum())
        .collect();
    let phi = fit.phi_hat;
    let mut total = 0.0;
    for j in 0..p {
        let (b1, b2) = (fit.beta_hat[j], fit.beta_hat[p + j]);
        let mean = |i: usize| sf[i] * (fit.mu0_hat[j] + b1 * design.get(i, 0) + b2 * design.get(i, 1) + offset[i]).exp();
        let (rows, vals) = data.counts().gene_nonzeros(j);
        for (&i, &y) in rows.iter().zip(vals) {
            total += nb_logpmf(y, mean(i as usize), phi);
        }
        for (&i, &r) in data.zero_spots(j).iter().zip(&fit.r_hat[j]) {
            let nb0 = nb_logpmf(0, mean(i as usize), phi).exp();
            total += ((1.0 - r) * nb0 + r).ln();
        }
    }
    total
}

/// Posterior model probabilities under equal prior weights, computed as a
/// shifted softmax of the log-likelihoods.
pub fn model_weights(log_likelihoods: &[f64]) -> Vec<f64> {
    let prior = -(log_likelihoods.len() as f64).ln();
    let scores: Vec<f64> = log_likelihoods.iter().map(|l| l + prior).collect();
    let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| e / z).collect()
}

/// Weighted PIP and the per-gene maximum over the two dimensions.
pub fn combine_pips(pips: &[&[f64]], weights: &[f64]) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(pips.len(), weights.len(), "one weight per model");
    let dim = pips.first().map_or(0, |p| p.len());
    let mut combined = vec![0.0; dim];
    for (pip, &w) in pips.iter().zip(weights) {
        for (c, v) in combined.iter_mut().zip(pip.iter()) {
            *c += w * v;
        }
    }
    let p = dim / 2;
    let tilde = (0..p).map(|j| combined[j].max(combined[p + j])).collect();
    (combined, tilde)
}

/// Genes chosen under a BFDR bound and the realized cutoff `c`: the
/// selection is `{j : 1 - PIP_j < c}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Selected genes, ascending.
    pub genes: Vec<usize>,
    pub cutoff: f64,
}

/// Largest prefix of genes ranked by `1 - PIP` whose mean `1 - PIP` stays at
/// or below `level`. Cuts only between distinct values, so tied genes are
/// selected together or not at all.
pub fn bfdr_select(tilde_pip: &[f64], level: f64) -> Selection {
    let mut order: Vec<(f64, usize)> = tilde_pip.iter().enumerate().map(|(j, &p)| (1.0 - p, j)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut best = 0;
    let mut sum = 0.0;
    let mut idx = 0;
    while idx < order.len() {
        let v = order[idx].0;
        while idx < order.len() && order[idx].0 == v {
            sum += order[idx].0;
            idx += 1;
        }
        if sum / idx as f64 <= level {
            best = idx;
        } else {
            break;
        }
    }
    let cutoff = order.get(best).map_or(1.0, |&(v, _)| v);
    let mut genes: Vec<usize> = order[..best].iter().map(|&(_, j)| j).collect();
    genes.sort_unstable();
    Selection { genes, cutoff }
}

/// Mean of `1 - PIP` over a selection; 0 for an empty one.
pub fn realized_bfdr(tilde_pip: &[f64], selected: &[usize]) -> f64 {
    if selected.is_empty() {
        0.0
    } else {
        selected.iter().map(|&j| 1.0 - tilde_pip[j]).sum::<f64>() / selected.len() as f64
    }
}

/// Minimum number of chains that must select a gene.
pub fn consensus_threshold(chains: usize, fraction: f64) -> usize {
    ((fraction * chains as f64) - 1e-9).ceil().max(1.0) as usize
}

/// Genes selected by at least `ceil(fraction * chains)` chains, ascending.
pub fn chain_consensus(per_chain: &[Vec<usize>], fraction: f64) -> Vec<usize> {
    assert!(!per_chain.is_empty(), "consensus needs at least one chain");
    let need = consensus_threshold(per_chain.len(), fraction);
    let mut votes = std::collections::BTreeMap::<usize, usize>::new();
    for set in per_chain {
        let unique: std::collections::BTreeSet<usize> = set.iter().copied().collect();
        for j in unique {
            *votes.entry(j).or_default() += 1;
        }
    }
    votes.into_iter().filter(|&(_, v)| v >= need).map(|(j, _)| j).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::AcceptanceRates;

    fn trace(gamma: Vec<Vec<f64>>, included: Vec<Vec<bool>>) -> ChainTrace {
        let m = gamma.len();
        ChainTrace {
            gamma,
            included,
            lambda: vec![0.5; m],
            sigma_gamma_sq: vec![1.0; m],
            mu0: vec![vec![2.0]; m],
            alpha: vec![vec![0.1, -0.1]; m],
            phi: vec![7.0; m],
            log_likelihood: vec![0.0; m],
            dropout_mean: vec![vec![0.25]],
            acceptance: AcceptanceRates::default(),
            sweep_log_likelihood: vec![],
        }
    }

    #[test]
    fn summary_by_hand() {
        let t = trace(
            vec![vec![1.0, 0.1], vec![1.0, 0.2], vec![0.2, 0.3]],
            vec![vec![true, false], vec![true, false], vec![false, false]],
        );
        let fit = summarize_kernel(&t);
        assert!((fit.pip[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(fit.beta_hat[0], 1.0);
        assert_eq!((fit.pip[1], fit.beta_hat[1]), (0.0, 0.0));
        assert_eq!(fit.mu0_hat, vec![2.0]);
        assert_eq!(fit.phi_hat, 7.0);
    }

    #[test]
    fn weight_arithmetic() {
        let w = model_weights(&[0.0, -(4f64.ln())]);
        assert!((w[0] - 0.8).abs() < 1e-15 && (w[1] - 0.2).abs() < 1e-15);
        assert!(model_weights(&[-3.0; 5]).iter().all(|&v| (v - 0.2).abs() < 1e-15));
        let w = model_weights(&[-1e6, -1e6 - 1.0]);
        assert!(w.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn combine_examples() {
        let pips: Vec<Vec<f64>> = [0.2, 0.4, 0.6, 0.8, 1.0].iter().map(|&v| vec![v, 0.0]).collect();
        let refs: Vec<&[f64]> = pips.iter().map(|v| v.as_slice()).collect();
        let (c, t) = combine_pips(&refs, &[0.2; 5]);
        assert!((c[0] - 0.6).abs() < 1e-15);
        assert!((t[0] - 0.6).abs() < 1e-15);
        let (_, t) = combine_pips(&[&[0.3, 0.7]], &[1.0]);
        assert_eq!(t, vec![0.7]);
    }

    #[test]
    fn bfdr_examples() {
        let s = bfdr_select(&[0.99, 0.98, 0.6], 0.05);
        assert_eq!(s.genes, vec![0, 1]);
        assert!((s.cutoff - 0.4).abs() < 1e-12);
        let s = bfdr_select(&[1.0; 4], 0.05);
        assert_eq!(s.genes.len(), 4);
        assert_eq!(s.cutoff, 1.0);
        assert!(bfdr_select(&[0.5; 4], 0.05).genes.is_empty());
        assert_eq!(realized_bfdr(&[1.0; 4], &[0, 1]), 0.0);
    }

    #[test]
    fn consensus_examples() {
        let chains = vec![vec![1, 2], vec![1, 2], vec![1, 2], vec![1], vec![1]];
        assert_eq!(chain_consensus(&chains, 0.8), vec![1]);
        assert_eq!(consensus_threshold(5, 0.8), 4);
        assert_eq!(consensus_threshold(1, 0.8), 1);
        assert_eq!(chain_consensus(&[vec![4, 2]], 0.8), vec![2, 4]);
    }
}
