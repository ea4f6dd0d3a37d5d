//! Synthetic data generators and selection metrics.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::standardize;
use crate::model::{CellCompositions, Coordinates, CountMatrix, GeneNetwork, ModelError};

/// Means above this abort count generation.
pub const MEAN_LIMIT: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("region labels do not partition the lattice: {0}")]
    RegionCoverage(String),
    #[error("mean {mean:e} for spot {spot}, gene {gene} exceeds the overflow guard")]
    OverflowGuard { spot: usize, gene: usize, mean: f64 },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NetworkKind {
    Star,
    ScaleFree,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pattern {
    Linear,
    Exponential,
    Periodic,
}

impl Pattern {
    /// Generating spatial function on a standardized coordinate.
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Pattern::Linear => x,
            Pattern::Exponential => (-x / 2.0).exp(),
            Pattern::Periodic => (2.0 * std::f64::consts::PI * x).cos(),
        }
    }

    /// Star-network target effects per dimension.
    pub fn star_target(self) -> [f64; 2] {
        match self {
            Pattern::Linear => [0.15, -0.25],
            Pattern::Periodic => [0.2, -0.3],
            Pattern::Exponential => [0.4, -0.5],
        }
    }

    /// Base magnitude range for scale-free regular genes.
    pub fn scale_free_range(self) -> (f64, f64) {
        match self {
            Pattern::Linear => (0.1, 0.2),
            Pattern::Periodic => (0.2, 0.3),
            Pattern::Exponential => (0.4, 0.5),
        }
    }
}

/// Normal distribution parameters `(mean, sd)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalParams {
    pub mean: f64,
    pub sd: f64,
}

impl NormalParams {
    fn dist(self) -> Result<Normal<f64>, SimError> {
        Normal::new(self.mean, self.sd).map_err(|e| SimError::InvalidScenario(e.to_string()))
    }
}

/// Labels of `bands` horizontal bands of near-equal size, top row first.
/// Spot order is row-major.
pub fn band_labels(rows: usize, cols: usize, bands: usize) -> Vec<usize> {
    (0..rows)
        .flat_map(|r| std::iter::repeat_n(r * bands / rows, cols))
        .collect()
}

/// Unit-spaced lattice, row-major: spot `r * cols + c` sits at `(c, r)`.
/// `labels` defaults to three horizontal bands.
pub fn make_spots(
    rows: usize,
    cols: usize,
    labels: Option<Vec<usize>>,
    n_regions: usize,
) -> Result<(Coordinates, Vec<usize>), SimError> {
    if rows == 0 || cols == 0 || n_regions == 0 {
        return Err(SimError::InvalidScenario("grid and region counts must be positive".into()));
    }
    let labels = labels.unwrap_or_else(|| band_labels(rows, cols, n_regions));
    if labels.len() != rows * cols {
        return Err(SimError::RegionCoverage(format!(
            "{} labels for {} spots",
            labels.len(),
            rows * cols
        )));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= n_regions) {
        return Err(SimError::RegionCoverage(format!("label {bad} outside 0..{n_regions}")));
    }
    let points = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| [c as f64, r as f64]))
        .collect();
    Ok((Coordinates::new(points)?, labels))
}

/// One Dirichlet draw per spot from its region's concentration vector, via
/// normalized independent gamma variates.
pub fn sample_compositions<R: Rng + ?Sized>(
    labels: &[usize],
    concentrations: &[Vec<f64>],
    rng: &mut R,
) -> Result<CellCompositions, SimError> {
    let k = concentrations
        .first()
        .map(Vec::len)
        .ok_or_else(|| SimError::InvalidScenario("no concentration vectors".into()))?;
    let gammas = concentrations
        .iter()
        .map(|c| {
            if c.len() != k {
                return Err(SimError::InvalidScenario("concentration vectors differ in length".into()));
            }
            c.iter()
                .map(|&a| Gamma::new(a, 1.0).map_err(|e| SimError::InvalidScenario(e.to_string())))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut values = Vec::with_capacity(labels.len() * k);
    for &l in labels {
        let dists = gammas
            .get(l)
            .ok_or_else(|| SimError::RegionCoverage(format!("no concentration for region {l}")))?;
        let draws: Vec<f64> = dists.iter().map(|g| g.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        values.extend(draws.iter().map(|d| d / total));
    }
    Ok(CellCompositions::new(labels.len(), k, values)?)
}

/// Block network of `subnet_count` disjoint sub-networks of `subnet_size`
/// genes; sub-network `b` holds genes `b * subnet_size ..`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockNetwork {
    pub network: GeneNetwork,
    pub subnet_size: usize,
    /// Hub gene of each sub-network.
    pub hubs: Vec<usize>,
}

impl BlockNetwork {
    pub fn subnet_count(&self) -> usize {
        self.hubs.len()
    }

    pub fn subnet(&self, b: usize) -> std::ops::Range<usize> {
        b * self.subnet_size..(b + 1) * self.subnet_size
    }
}

/// Star: the first node of each sub-network is joined to every other node.
/// Scale-free: preferential attachment with one edge per new node, grown
/// from a two-node seed edge; the hub is the highest-degree node, ties to
/// the lowest index.
pub fn make_network<R: Rng + ?Sized>(
    kind: NetworkKind,
    subnet_count: usize,
    subnet_size: usize,
    rng: &mut R,
) -> Result<BlockNetwork, SimError> {
    if subnet_size < 2 || subnet_count == 0 {
        return Err(SimError::InvalidScenario("sub-networks need at least two nodes".into()));
    }
    let mut edges = Vec::with_capacity(subnet_count * (subnet_size - 1));
    let mut hubs = Vec::with_capacity(subnet_count);
    for b in 0..subnet_count {
        let base = b * subnet_size;
        match kind {
            NetworkKind::Star => {
                edges.extend((1..subnet_size).map(|l| (base, base + l)));
                hubs.push(base);
            }
            NetworkKind::ScaleFree => {
                let mut degree = vec![0usize; subnet_size];
                // Every edge endpoint once; uniform picks are degree-weighted.
                let mut endpoints = vec![0usize, 1];
                degree[0] = 1;
                degree[1] = 1;
                edges.push((base, base + 1));
                for v in 2..subnet_size {
                    let u = endpoints[rng.random_range(0..endpoints.len())];
                    edges.push((base + u, base + v));
                    degree[u] += 1;
                    degree[v] += 1;
                    endpoints.push(u);
                    endpoints.push(v);
                }
                let hub = (0..subnet_size)
                    .max_by(|&a, &c| degree[a].cmp(&degree[c]).then(c.cmp(&a)))
                    .expect("non-empty sub-network");
                hubs.push(base + hub);
            }
        }
    }
    Ok(BlockNetwork {
        network: GeneNetwork::from_edges(subnet_count * subnet_size, &edges)?,
        subnet_size,
        hubs,
    })
}

/// True effects, stacked `(dimension 1, dimension 2)`, nonzero only in the
/// first `sv_subnets` sub-networks.
pub fn assign_effects<R: Rng + ?Sized>(
    net: &BlockNetwork,
    pattern: Pattern,
    kind: NetworkKind,
    sv_subnets: usize,
    rng: &mut R,
) -> Result<Vec<f64>, SimError> {
    if sv_subnets > net.subnet_count() {
        return Err(SimError::InvalidScenario(format!(
            "{sv_subnets} informative sub-networks but only {}",
            net.subnet_count()
        )));
    }
    let p = net.network.n_genes();
    let mut beta = vec![0.0; 2 * p];
    let sign = |rng: &mut R| if rng.random::<bool>() { 1.0 } else { -1.0 };
    for b in 0..sv_subnets {
        let hub = net.hubs[b];
        let mut regular: Vec<usize> = net.subnet(b).filter(|&j| j != hub).collect();
        match kind {
            NetworkKind::Star => {
                let target = pattern.star_target();
                beta[hub] = 1.0;
                beta[p + hub] = -1.0;
                for &j in &regular {
                    beta[j] = target[0];
                    beta[p + j] = target[1];
                }
            }
            NetworkKind::ScaleFree => {
                for d in 0..2 {
                    beta[d * p + hub] = sign(rng) * rng.random_range(1.0..1.2);
                }
                regular.shuffle(rng);
                let small = regular.len() / 2;
                let (lo, hi) = pattern.scale_free_range();
                for (pos, &j) in regular.iter().enumerate() {
                    let a = if pos < small { 1.0 } else { 2.0 };
                    for d in 0..2 {
                        beta[d * p + j] = sign(rng) * rng.random_range(a * lo..a * hi);
                    }
                }
            }
        }
    }
    Ok(beta)
}

/// Genes with a nonzero effect in either dimension.
pub fn support(beta: &[f64]) -> Vec<usize> {
    let p = beta.len() / 2;
    (0..p).filter(|&j| beta[j] != 0.0 || beta[p + j] != 0.0).collect()
}

/// Draws one NB count as a gamma-Poisson mixture.
fn nb_draw<R: Rng + ?Sized>(rng: &mut R, mu: f64, phi: f64) -> f64 {
    if mu <= 0.0 {
        return 0.0;
    }
    let rate = Gamma::new(phi, mu / phi).expect("positive NB parameters").sample(rng);
    if rate <= 0.0 {
        0.0
    } else {
        Poisson::new(rate).expect("positive Poisson rate").sample(rng)
    }
}

/// Counts from a matrix of log means with iid dropouts.
fn draw_counts<R, F>(n: usize, p: usize, log_mean: F, phi: f64, dropout: f64, rng: &mut R) -> Result<CountMatrix, SimError>
where
    R: Rng + ?Sized,
    F: Fn(usize, usize) -> f64,
{
    let mut triplets = Vec::new();
    for j in 0..p {
        for i in 0..n {
            let mu = log_mean(i, j).exp();
            if !(mu <= MEAN_LIMIT) {
                return Err(SimError::OverflowGuard { spot: i, gene: j, mean: mu });
            }
            if rng.random::<f64>() < dropout {
                continue;
            }
            let y = nb_draw(rng, mu, phi);
            if y > u32::MAX as f64 {
                return Err(SimError::OverflowGuard { spot: i, gene: j, mean: mu });
            }
            if y > 0.0 {
                triplets.push((i, j, y as u32));
            }
        }
    }
    Ok(CountMatrix::from_triplets(n, p, triplets)?)
}

/// Baselines and composition effects drawn for a basic scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Nuisance {
    pub mu0: Vec<f64>,
    pub alpha: Vec<f64>,
}

/// Counts from the ZINB mean model with the generating pattern applied to
/// standardized coordinates.
#[allow(clippy::too_many_arguments)]
pub fn generate_counts<R: Rng + ?Sized>(
    coords: &Coordinates,
    comps: &CellCompositions,
    beta: &[f64],
    pattern: Pattern,
    phi: f64,
    dropout: f64,
    mu0_dist: NormalParams,
    alpha_dist: NormalParams,
    rng: &mut R,
) -> Result<(CountMatrix, Nuisance), SimError> {
    if !(0.0..=1.0).contains(&dropout) {
        return Err(SimError::InvalidScenario(format!("dropout {dropout} outside [0, 1]")));
    }
    let n = coords.len();
    let p = beta.len() / 2;
    let std = standardize(coords.points()).map_err(|e| SimError::InvalidScenario(e.to_string()))?;
    let k1: Vec<f64> = std.column(0).into_iter().map(|x| pattern.eval(x)).collect();
    let k2: Vec<f64> = std.column(1).into_iter().map(|x| pattern.eval(x)).collect();
    let mu0_d = mu0_dist.dist()?;
    let alpha_d = alpha_dist.dist()?;
    let mu0: Vec<f64> = (0..p).map(|_| mu0_d.sample(rng)).collect();
    let alpha: Vec<f64> = (0..comps.n_types()).map(|_| alpha_d.sample(rng)).collect();
    let offset: Vec<f64> = (0..n)
        .map(|i| comps.row(i).iter().zip(&alpha).map(|(w, a)| w * a).sum())
        .collect();
    let counts = draw_counts(
        n,
        p,
        |i, j| mu0[j] + beta[j] * k1[i] + beta[p + j] * k2[i] + offset[i],
        phi,
        dropout,
        rng,
    )?;
    Ok((counts, Nuisance { mu0, alpha }))
}

/// Known truth of a simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub sv_genes: Vec<usize>,
    pub beta_true: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedData {
    pub coords: Coordinates,
    pub comps: CellCompositions,
    pub network: GeneNetwork,
    pub counts: CountMatrix,
    pub truth: GroundTruth,
    pub labels: Vec<usize>,
}

/// A basic-design scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub rows: usize,
    pub cols: usize,
    /// One Dirichlet concentration vector per region; its length is `K`.
    pub concentrations: Vec<Vec<f64>>,
    /// Optional row-major region labels; default horizontal bands.
    pub region_labels: Option<Vec<usize>>,
    pub network_kind: NetworkKind,
    pub subnet_count: usize,
    pub subnet_size: usize,
    pub sv_subnets: usize,
    pub pattern: Pattern,
    pub dropout: f64,
    pub phi: f64,
    pub mu0: NormalParams,
    pub alpha: NormalParams,
    pub seed: u64,
}

/// Region concentrations of the basic design.
pub fn basic_concentrations() -> Vec<Vec<f64>> {
    vec![
        vec![1.0; 6],
        vec![3.0, 5.0, 7.0, 9.0, 11.0, 13.0],
        vec![18.0, 16.0, 14.0, 12.0, 10.0, 8.0],
    ]
}

impl ScenarioConfig {
    /// Full-size basic scenario: 32 x 32 lattice, 100 sub-networks of 50
    /// genes, the first 10 informative, `phi = 10`. Low dropout is 0.1 and
    /// high dropout 0.5.
    pub fn basic(kind: NetworkKind, pattern: Pattern, high_dropout: bool, seed: u64) -> Self {
        Self {
            rows: 32,
            cols: 32,
            concentrations: basic_concentrations(),
            region_labels: None,
            network_kind: kind,
            subnet_count: 100,
            subnet_size: 50,
            sv_subnets: 10,
            pattern,
            dropout: if high_dropout { 0.5 } else { 0.1 },
            phi: 10.0,
            mu0: NormalParams { mean: 2.0, sd: 0.5 },
            alpha: NormalParams { mean: 0.0, sd: 3.5 },
            seed,
        }
    }

    pub fn n_genes(&self) -> usize {
        self.subnet_count * self.subnet_size
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.sv_subnets > self.subnet_count {
            return Err(SimError::InvalidScenario("sv_subnets exceeds subnet_count".into()));
        }
        if !(0.0..=1.0).contains(&self.dropout) {
            return Err(SimError::InvalidScenario("dropout outside [0, 1]".into()));
        }
        if !(self.phi > 0.0) {
            return Err(SimError::InvalidScenario("phi must be positive".into()));
        }
        Ok(())
    }
}

fn stage_rng(seed: u64, stage: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stage);
    rng
}

/// Generates a full basic-design dataset.
pub fn simulate(cfg: &ScenarioConfig) -> Result<SimulatedData, SimError> {
    cfg.validate()?;
    let (coords, labels) = make_spots(cfg.rows, cfg.cols, cfg.region_labels.clone(), cfg.concentrations.len())?;
    let comps = sample_compositions(&labels, &cfg.concentrations, &mut stage_rng(cfg.seed, 1))?;
    let net = make_network(cfg.network_kind, cfg.subnet_count, cfg.subnet_size, &mut stage_rng(cfg.seed, 2))?;
    let beta = assign_effects(&net, cfg.pattern, cfg.network_kind, cfg.sv_subnets, &mut stage_rng(cfg.seed, 3))?;
    let (counts, _) = generate_counts(
        &coords,
        &comps,
        &beta,
        cfg.pattern,
        cfg.phi,
        cfg.dropout,
        cfg.mu0,
        cfg.alpha,
        &mut stage_rng(cfg.seed, 4),
    )?;
    Ok(SimulatedData {
        coords,
        comps,
        network: net.network,
        counts,
        truth: GroundTruth {
            sv_genes: support(&beta),
            beta_true: beta,
        },
        labels,
    })
}

/// Misspecified design: cell-type-specific baselines and effects mixed on
/// the log scale by the compositions. 30 columns by 20 rows in four
/// horizontal bands, 100 star sub-networks of 50 genes, linear pattern,
/// `phi = 100`, dropout 0.6.
pub fn generate_m1(seed: u64) -> Result<SimulatedData, SimError> {
    const K: usize = 6;
    const SUBNET: usize = 50;
    const DE_GENES: usize = 150;
    const THETA: [f64; K - 1] = [3.0, 2.0, 4.0, 3.0, 4.0];
    let (rows, cols) = (20, 30);
    let concentrations = vec![
        vec![1.0; K],
        vec![1.0, 3.0, 5.0, 7.0, 9.0, 11.0],
        vec![16.0, 14.0, 12.0, 10.0, 8.0, 6.0],
        vec![1.0, 4.0, 4.0, 4.0, 4.0, 1.0],
    ];
    let (coords, labels) = make_spots(rows, cols, None, concentrations.len())?;
    let comps = sample_compositions(&labels, &concentrations, &mut stage_rng(seed, 1))?;
    let net = make_network(NetworkKind::Star, 100, SUBNET, &mut stage_rng(seed, 2))?;
    let p = net.network.n_genes();
    let n = coords.len();

    // Cell type k (1-based) is spatial for genes 50(k-1)+1 ..= 50(k+1).
    let sv_for = |j: usize, k: usize| j >= SUBNET * k && j < SUBNET * (k + 2);
    let mut rng = stage_rng(seed, 3);
    let base = Normal::new(2.0, 0.2).expect("valid normal");
    let mut eta = vec![[0.0; K]; p];
    for row in eta.iter_mut() {
        let e1 = base.sample(&mut rng);
        row.iter_mut().for_each(|v| *v = e1);
    }
    let mut genes: Vec<usize> = (0..p).collect();
    for (k, &theta) in THETA.iter().enumerate() {
        let de = Normal::new(theta, 0.2).expect("valid normal");
        genes.shuffle(&mut rng);
        for &j in &genes[..DE_GENES] {
            eta[j][k + 1] = de.sample(&mut rng);
        }
    }

    let std = standardize(coords.points()).map_err(|e| SimError::InvalidScenario(e.to_string()))?;
    let (x1, x2) = (std.column(0), std.column(1));
    let counts = draw_counts(
        n,
        p,
        |i, j| {
            let w = comps.row(i);
            (0..K)
                .map(|k| {
                    let spatial = if sv_for(j, k) { 1.8 * x1[i] + 0.8 * x2[i] } else { 0.0 };
                    w[k] * (eta[j][k] + spatial)
                })
                .sum()
        },
        100.0,
        0.6,
        &mut stage_rng(seed, 4),
    )?;
    let mut beta = vec![0.0; 2 * p];
    for j in (0..p).filter(|&j| (0..K).any(|k| sv_for(j, k))) {
        beta[j] = 1.8;
        beta[p + j] = 0.8;
    }
    Ok(SimulatedData {
        coords,
        comps,
        network: net.network,
        counts,
        truth: GroundTruth {
            sv_genes: support(&beta),
            beta_true: beta,
        },
        labels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

/// Recall, precision and F1. Precision is 0 for an empty selection and F1
/// is 0 when both are 0.
pub fn classification_metrics(selected: &[usize], truth: &[usize]) -> Metrics {
    let sel: BTreeSet<usize> = selected.iter().copied().collect();
    let tru: BTreeSet<usize> = truth.iter().copied().collect();
    let tp = sel.intersection(&tru).count() as f64;
    let recall = if tru.is_empty() { 0.0 } else { tp / tru.len() as f64 };
    let precision = if sel.is_empty() { 0.0 } else { tp / sel.len() as f64 };
    let f1 = if recall + precision == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Metrics { recall, precision, f1 }
}
