#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use svgene_core::sampler::update_rho;
use svgene_core::{validate_dataset, CellCompositions, Coordinates, CountMatrix, GeneNetwork, ModelState, ValidatedDataset};

/// 24 spots on a 6 x 4 lattice, 8 genes (a path of four, an edge, two
/// isolated), three cell types, about 30% zeros.
pub fn small_dataset(seed: u64) -> ValidatedDataset {
    let (n, p, k) = (24, 8, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts: Vec<u32> = (0..n * p)
        .map(|_| if rng.random::<f64>() < 0.3 { 0 } else { rng.random_range(0..25) })
        .collect();
    let coords: Vec<[f64; 2]> = (0..n).map(|i| [(i % 6) as f64, (i / 6) as f64]).collect();
    let mut comps = Vec::with_capacity(n * k);
    for _ in 0..n {
        let row: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 0.1).collect();
        let total: f64 = row.iter().sum();
        comps.extend(row.iter().map(|v| v / total));
    }
    validate_dataset(
        CountMatrix::from_dense(n, p, &counts).unwrap(),
        Coordinates::new(coords).unwrap(),
        CellCompositions::new(n, k, comps).unwrap(),
        GeneNetwork::from_edges(p, &[(0, 1), (1, 2), (2, 3), (4, 5)]).unwrap(),
    )
    .unwrap()
}

/// A random valid state for `data` with `lambda` inside `[0, lambda_u]`.
pub fn random_state(data: &ValidatedDataset, lambda_u: f64, rng: &mut ChaCha8Rng) -> ModelState {
    let p = data.n_genes();
    let gamma: Vec<f64> = (0..2 * p).map(|_| 0.8 * rng.sample::<f64, _>(StandardNormal)).collect();
    let mut rho = vec![1.0; 2 * p];
    update_rho(&gamma, data.network().components(), p, &mut rho);
    ModelState {
        gamma,
        rho,
        lambda: rng.random_range(0.1..0.9) * lambda_u,
        sigma_gamma_sq: rng.random_range(0.5..2.0),
        mu0: (0..p).map(|_| rng.random_range(0.5..2.5)).collect(),
        alpha: (0..data.n_types()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        phi: rng.random_range(1.0..20.0),
        dropout: (0..p)
            .map(|j| data.zero_spots(j).iter().map(|_| rng.random::<f64>() < 0.3).collect())
            .collect(),
    }
}
