mod common;

use common::small_dataset;
use svgene_core::inference::{chain_consensus, model_weights};
use svgene_core::pipeline::chain_stream;
use svgene_core::{fit, ChainConfig, FitOptions};

fn quick(chains: usize, threads: Option<usize>) -> FitOptions {
    FitOptions {
        chain: ChainConfig { iterations: 80, burn_in: 40, thin: 4, ..ChainConfig::default() },
        chains,
        threads,
        ..FitOptions::default()
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let data = small_dataset(21);
    let one = fit(&data, &quick(3, Some(1))).unwrap();
    let two = fit(&data, &quick(3, Some(2))).unwrap();
    assert_eq!(one.fits, two.fits);
    assert_eq!(one.per_chain, two.per_chain);
    assert_eq!(one.tilde_pip, two.tilde_pip);
    assert_eq!(one.selected, two.selected);
}

#[test]
fn fit_result_is_internally_consistent() {
    let data = small_dataset(23);
    let opts = quick(3, None);
    let res = fit(&data, &opts).unwrap();
    let n_kernels = opts.kernels.len();
    let p = data.n_genes();

    assert_eq!(res.fits.len(), n_kernels);
    assert!(res.fits.iter().all(|f| f.len() == opts.chains));
    assert_eq!(res.chain_summaries.len(), n_kernels * opts.chains);
    for s in &res.chain_summaries {
        assert_eq!(s.stream, chain_stream(s.kernel, s.chain));
    }
    for c in &res.per_chain {
        assert_eq!(c.weights, model_weights(&c.log_likelihoods));
        assert_eq!(c.tilde_pip.len(), p);
        assert!(c.tilde_pip.iter().all(|v| (0.0..=1.0).contains(v)));
    }
    let total: f64 = res.model_weights.iter().sum();
    assert!((total - 1.0).abs() < 1e-12);
    assert_eq!(res.selected, chain_consensus(&res.per_chain_selected(), opts.hyper.consensus_fraction));
}

#[test]
fn rejects_empty_options() {
    let data = small_dataset(25);
    assert!(fit(&data, &FitOptions { chains: 0, ..quick(1, None) }).is_err());
    assert!(fit(&data, &FitOptions { kernels: Vec::new(), ..quick(1, None) }).is_err());
    let bad_chain = FitOptions { chain: ChainConfig { burn_in: 80, ..quick(1, None).chain }, ..quick(1, None) };
    assert!(fit(&data, &bad_chain).is_err());
}
