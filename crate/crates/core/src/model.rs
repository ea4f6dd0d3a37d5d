//! Domain types and the validated dataset handed to every downstream stage.
//!
//! Counts are stored gene-major in a compressed sparse column layout: for each
//! gene the spots with nonzero counts and their values, plus the list of spots
//! where the gene is zero (the only entries a dropout indicator can touch).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network;

/// Row-sum tolerance for cell-type proportions.
pub const COMPOSITION_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch between {what}: {left} vs {right}")]
    DimensionMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },
    #[error("invariant violated ({invariant}): {detail}")]
    InvariantViolation {
        invariant: &'static str,
        detail: String,
    },
}

fn violation(invariant: &'static str, detail: impl Into<String>) -> ModelError {
    ModelError::InvariantViolation {
        invariant,
        detail: detail.into(),
    }
}

/// Raw UMI counts, `n` spots by `p` genes.
#[derive(Debug, Clone, PartialEq)]
pub struct CountMatrix {
    n_spots: usize,
    n_genes: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<u32>,
    values: Vec<u32>,
}

impl CountMatrix {
    /// Builds from a dense row-major (spot-major) buffer of length `n * p`.
    pub fn from_dense(n_spots: usize, n_genes: usize, row_major: &[u32]) -> Result<Self, ModelError> {
        if row_major.len() != n_spots * n_genes {
            return Err(ModelError::DimensionMismatch {
                what: "count buffer length and n*p",
                left: row_major.len(),
                right: n_spots * n_genes,
            });
        }
        let triplets = (0..n_spots).flat_map(|i| {
            (0..n_genes).map(move |j| (i, j, row_major[i * n_genes + j]))
        });
        Self::from_triplets(n_spots, n_genes, triplets)
    }

    /// Builds from `(spot, gene, count)` triplets. Explicit zeros are dropped;
    /// repeated coordinates are rejected.
    pub fn from_triplets<I>(n_spots: usize, n_genes: usize, triplets: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = (usize, usize, u32)>,
    {
        if n_spots < 2 {
            return Err(violation("n >= 2", format!("got n = {n_spots}")));
        }
        if n_genes < 1 {
            return Err(violation("p >= 1", "got p = 0"));
        }
        let mut entries: Vec<(usize, usize, u32)> = Vec::new();
        for (i, j, v) in triplets {
            if i >= n_spots || j >= n_genes {
                return Err(violation(
                    "entry index in range",
                    format!("({i}, {j}) outside {n_spots} x {n_genes}"),
                ));
            }
            if v > 0 {
                entries.push((j, i, v));
            }
        }
        entries.sort_unstable_by_key(|&(j, i, _)| (j, i));
        if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0 && w[0].1 == w[1].1) {
            return Err(violation(
                "unique entries",
                format!("spot {} gene {} given twice", w[0].1, w[0].0),
            ));
        }
        let mut col_ptr = vec![0usize; n_genes + 1];
        for &(j, _, _) in &entries {
            col_ptr[j + 1] += 1;
        }
        for j in 0..n_genes {
            col_ptr[j + 1] += col_ptr[j];
        }
        let row_idx = entries.iter().map(|&(_, i, _)| i as u32).collect();
        let values = entries.iter().map(|&(_, _, v)| v).collect();
        Ok(Self {
            n_spots,
            n_genes,
            col_ptr,
            row_idx,
            values,
        })
    }

    pub fn n_spots(&self) -> usize {
        self.n_spots
    }

    pub fn n_genes(&self) -> usize {
        self.n_genes
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Spots and counts of the nonzero entries of gene `j`, ordered by spot.
    pub fn gene_nonzeros(&self, j: usize) -> (&[u32], &[u32]) {
        let r = self.col_ptr[j]..self.col_ptr[j + 1];
        (&self.row_idx[r.clone()], &self.values[r])
    }

    pub fn gene_dense(&self, j: usize) -> Vec<u32> {
        let mut out = vec![0u32; self.n_spots];
        let (rows, vals) = self.gene_nonzeros(j);
        for (&i, &v) in rows.iter().zip(vals) {
            out[i as usize] = v;
        }
        out
    }

    pub fn get(&self, i: usize, j: usize) -> u32 {
        let (rows, vals) = self.gene_nonzeros(j);
        match rows.binary_search(&(i as u32)) {
            Ok(pos) => vals[pos],
            Err(_) => 0,
        }
    }

    /// Iterates the nonzero entries as `(spot, gene, count)`, gene-major.
    pub fn iter_nonzeros(&self) -> impl Iterator<Item = (usize, usize, u32)> + '_ {
        (0..self.n_genes).flat_map(move |j| {
            let (rows, vals) = self.gene_nonzeros(j);
            rows.iter().zip(vals).map(move |(&i, &v)| (i as usize, j, v))
        })
    }
}

/// Spot-centre positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Coordinates {
    points: Vec<[f64; 2]>,
}

impl Coordinates {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self, ModelError> {
        if let Some((i, _)) = points
            .iter()
            .enumerate()
            .find(|(_, p)| !p[0].is_finite() || !p[1].is_finite())
        {
            return Err(violation("finite coordinates", format!("spot {i}")));
        }
        for d in 0..2 {
            let first = points.first().map(|p| p[d]);
            let spread = first.is_some_and(|f| points.iter().any(|p| p[d] != f));
            if !spread {
                return Err(violation(
                    "two distinct values per coordinate column",
                    format!("column {d} is constant"),
                ));
            }
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }
}

/// Per-spot cell-type proportions, row-major `n x K`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellCompositions {
    n_spots: usize,
    n_types: usize,
    values: Vec<f64>,
}

impl CellCompositions {
    pub fn new(n_spots: usize, n_types: usize, values: Vec<f64>) -> Result<Self, ModelError> {
        if n_types == 0 {
            return Err(violation("K >= 1", "no cell types"));
        }
        if values.len() != n_spots * n_types {
            return Err(ModelError::DimensionMismatch {
                what: "composition buffer length and n*K",
                left: values.len(),
                right: n_spots * n_types,
            });
        }
        for i in 0..n_spots {
            let row = &values[i * n_types..(i + 1) * n_types];
            if let Some(k) = row.iter().position(|w| !(0.0..=1.0).contains(w)) {
                return Err(violation(
                    "proportion in [0, 1]",
                    format!("spot {i} type {k}: {}", row[k]),
                ));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > COMPOSITION_TOLERANCE {
                return Err(violation("row sum equals 1", format!("spot {i} sums to {sum}")));
            }
        }
        Ok(Self {
            n_spots,
            n_types,
            values,
        })
    }

    pub fn n_spots(&self) -> usize {
        self.n_spots
    }

    pub fn n_types(&self) -> usize {
        self.n_types
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_types..(i + 1) * self.n_types]
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.values[i * self.n_types + k]
    }
}

/// Undirected, unweighted gene network.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneNetwork {
    n_genes: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    components: Vec<Vec<usize>>,
}

impl GeneNetwork {
    /// Builds from an edge list. Edges are undirected; `(a, b)` and `(b, a)`
    /// collapse to one edge. Self loops are rejected.
    pub fn from_edges(n_genes: usize, edges: &[(usize, usize)]) -> Result<Self, ModelError> {
        let mut normalized = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a >= n_genes || b >= n_genes {
                return Err(violation(
                    "edge endpoints in range",
                    format!("({a}, {b}) with p = {n_genes}"),
                ));
            }
            if a == b {
                return Err(violation("zero diagonal", format!("self loop on gene {a}")));
            }
            normalized.push((a.min(b), a.max(b)));
        }
        normalized.sort_unstable();
        normalized.dedup();
        let mut neighbors = vec![Vec::new(); n_genes];
        for &(a, b) in &normalized {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        let mut net = Self {
            n_genes,
            edges: normalized,
            neighbors,
            components: Vec::new(),
        };
        net.components = network::connected_components(&net);
        Ok(net)
    }

    /// Builds from a dense 0/1 adjacency matrix given as rows.
    pub fn from_adjacency(rows: &[Vec<u8>]) -> Result<Self, ModelError> {
        let p = rows.len();
        let mut edges = Vec::new();
        for (j, row) in rows.iter().enumerate() {
            if row.len() != p {
                return Err(ModelError::DimensionMismatch {
                    what: "adjacency row length and node count",
                    left: row.len(),
                    right: p,
                });
            }
            for (l, &a) in row.iter().enumerate() {
                if a > 1 {
                    return Err(violation("binary adjacency", format!("a[{j}][{l}] = {a}")));
                }
                if a != rows[l][j] {
                    return Err(violation("symmetry", format!("a[{j}][{l}] != a[{l}][{j}]")));
                }
                if j == l && a != 0 {
                    return Err(violation("zero diagonal", format!("a[{j}][{j}] = 1")));
                }
                if a == 1 && j < l {
                    edges.push((j, l));
                }
            }
        }
        Self::from_edges(p, &edges)
    }

    /// A network without edges: every gene is its own component.
    pub fn edgeless(n_genes: usize) -> Self {
        Self::from_edges(n_genes, &[]).expect("an edgeless network is always valid")
    }

    pub fn n_genes(&self) -> usize {
        self.n_genes
    }

    /// Edges as `(a, b)` with `a < b`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, j: usize) -> &[usize] {
        &self.neighbors[j]
    }

    pub fn degree(&self, j: usize) -> usize {
        self.neighbors[j].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.neighbors.iter().map(Vec::len).collect()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.neighbors[a].binary_search(&b).is_ok()
    }

    /// Connected components, each sorted, ordered by smallest member.
    pub fn components(&self) -> &[Vec<usize>] {
        &self.components
    }
}

/// Prior hyperparameters and selection settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    pub a_pi: f64,
    pub b_pi: f64,
    pub a_phi: f64,
    pub b_phi: f64,
    pub a_gamma: f64,
    pub b_gamma: f64,
    pub sigma0_sq: f64,
    pub sigma_alpha_sq: f64,
    pub lambda_l: f64,
    /// Upper threshold bound; `None` resolves to the 90% quantile of the
    /// absolute rough effect estimates of each kernel model.
    pub lambda_u: Option<f64>,
    pub ridge_epsilon: f64,
    pub smooth_epsilon: f64,
    pub bfdr_level: f64,
    pub consensus_fraction: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            a_pi: 1.0,
            b_pi: 1.0,
            a_phi: 10.0,
            b_phi: 0.1,
            a_gamma: 3.5,
            b_gamma: 0.5,
            sigma0_sq: 9.0,
            sigma_alpha_sq: 9.0,
            lambda_l: 0.0,
            lambda_u: None,
            ridge_epsilon: 1e-3,
            smooth_epsilon: 1e-4,
            bfdr_level: 0.05,
            consensus_fraction: 0.8,
        }
    }
}

impl HyperParams {
    /// Quantile of `|rough beta|` used for the default upper threshold bound.
    pub const LAMBDA_U_QUANTILE: f64 = 0.9;

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("a_pi > 0", self.a_pi),
            ("b_pi > 0", self.b_pi),
            ("a_phi > 0", self.a_phi),
            ("b_phi > 0", self.b_phi),
            ("a_gamma > 0", self.a_gamma),
            ("b_gamma > 0", self.b_gamma),
            ("sigma0_sq > 0", self.sigma0_sq),
            ("sigma_alpha_sq > 0", self.sigma_alpha_sq),
            ("ridge_epsilon > 0", self.ridge_epsilon),
            ("smooth_epsilon > 0", self.smooth_epsilon),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(violation(name, format!("got {v}")));
            }
        }
        if !(self.lambda_l >= 0.0 && self.lambda_l.is_finite()) {
            return Err(violation("lambda_l >= 0", format!("got {}", self.lambda_l)));
        }
        if let Some(u) = self.lambda_u {
            if !(u > self.lambda_l && u.is_finite()) {
                return Err(violation(
                    "lambda_l < lambda_u",
                    format!("{} vs {u}", self.lambda_l),
                ));
            }
        }
        if !(self.bfdr_level > 0.0 && self.bfdr_level < 1.0) {
            return Err(violation("bfdr_level in (0, 1)", format!("got {}", self.bfdr_level)));
        }
        if !(self.consensus_fraction > 0.0 && self.consensus_fraction <= 1.0) {
            return Err(violation(
                "consensus_fraction in (0, 1]",
                format!("got {}", self.consensus_fraction),
            ));
        }
        Ok(())
    }
}

/// Random-walk and pCN proposal variances plus the adaptation target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProposalScales {
    pub tau_mu0_sq: f64,
    pub tau_alpha_sq: f64,
    pub tau_phi_sq: f64,
    pub tau_gamma_sq: f64,
    pub tau_lambda_sq: f64,
    pub target_accept: f64,
}

impl Default for ProposalScales {
    fn default() -> Self {
        Self {
            tau_mu0_sq: 1e-2,
            tau_alpha_sq: 1e-4,
            tau_phi_sq: 1.0,
            tau_gamma_sq: 1e-2,
            tau_lambda_sq: 1e-4,
            target_accept: 0.30,
        }
    }
}

impl ProposalScales {
    /// Target acceptance used for real-data analyses.
    pub const REAL_DATA_TARGET: f64 = 0.15;

    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [
            ("tau_mu0_sq > 0", self.tau_mu0_sq),
            ("tau_alpha_sq > 0", self.tau_alpha_sq),
            ("tau_phi_sq > 0", self.tau_phi_sq),
            ("tau_lambda_sq > 0", self.tau_lambda_sq),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(violation(name, format!("got {v}")));
            }
        }
        if !(self.tau_gamma_sq > 0.0 && self.tau_gamma_sq < 1.0) {
            return Err(violation("tau_gamma_sq in (0, 1)", format!("got {}", self.tau_gamma_sq)));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(violation(
                "target_accept in (0, 1)",
                format!("got {}", self.target_accept),
            ));
        }
        Ok(())
    }
}

/// Full sampler state for one kernel model.
///
/// Vectors over the `2p` spatial coefficients are stacked as
/// `(dimension 1 genes 0..p, dimension 2 genes 0..p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub gamma: Vec<f64>,
    pub rho: Vec<f64>,
    pub lambda: f64,
    pub sigma_gamma_sq: f64,
    pub mu0: Vec<f64>,
    pub alpha: Vec<f64>,
    pub phi: f64,
    /// Dropout indicators per gene, aligned with
    /// [`ValidatedDataset::zero_spots`]; entries with a positive count are
    /// structurally zero and not stored.
    pub dropout: Vec<Vec<bool>>,
}

impl ModelState {
    /// Thresholding indicator for coefficient `idx` (in `0..2p`).
    pub fn included(&self, idx: usize) -> bool {
        self.gamma[idx].abs() > self.lambda * self.rho[idx]
    }

    /// Thresholded coefficients `beta = gamma * t(gamma)`.
    pub fn beta(&self) -> Vec<f64> {
        (0..self.gamma.len())
            .map(|idx| if self.included(idx) { self.gamma[idx] } else { 0.0 })
            .collect()
    }

    pub fn validate(&self, lambda_l: f64, lambda_u: f64) -> Result<(), ModelError> {
        if !(self.phi > 0.0) {
            return Err(violation("phi > 0", format!("got {}", self.phi)));
        }
        if !(self.sigma_gamma_sq > 0.0) {
            return Err(violation("sigma_gamma_sq > 0", format!("got {}", self.sigma_gamma_sq)));
        }
        if !(lambda_l..=lambda_u).contains(&self.lambda) {
            return Err(violation(
                "lambda in [lambda_l, lambda_u]",
                format!("{} not in [{lambda_l}, {lambda_u}]", self.lambda),
            ));
        }
        if let Some(idx) = self.rho.iter().position(|&r| !(r > 0.0)) {
            return Err(violation("rho > 0", format!("entry {idx}")));
        }
        if self.gamma.len() != self.rho.len() {
            return Err(ModelError::DimensionMismatch {
                what: "gamma and rho",
                left: self.gamma.len(),
                right: self.rho.len(),
            });
        }
        Ok(())
    }
}

/// Counts, coordinates, compositions and network whose dimensions agree.
/// Immutable once built and shared read-only across chains.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedDataset {
    counts: CountMatrix,
    coords: Coordinates,
    comps: CellCompositions,
    network: GeneNetwork,
    size_factors: Vec<f64>,
    zero_spots: Vec<Vec<u32>>,
}

/// Checks cross-object dimensions and assembles the dataset.
pub fn validate_dataset(
    counts: CountMatrix,
    coords: Coordinates,
    comps: CellCompositions,
    network: GeneNetwork,
) -> Result<ValidatedDataset, ModelError> {
    let n = counts.n_spots();
    let p = counts.n_genes();
    if coords.len() != n {
        return Err(ModelError::DimensionMismatch {
            what: "coordinate rows and count spots",
            left: coords.len(),
            right: n,
        });
    }
    if comps.n_spots() != n {
        return Err(ModelError::DimensionMismatch {
            what: "composition rows and count spots",
            left: comps.n_spots(),
            right: n,
        });
    }
    if network.n_genes() != p {
        return Err(ModelError::DimensionMismatch {
            what: "network nodes and count genes",
            left: network.n_genes(),
            right: p,
        });
    }
    let zero_spots = (0..p)
        .map(|j| {
            let (rows, _) = counts.gene_nonzeros(j);
            let mut next = rows.iter().peekable();
            (0..n as u32)
                .filter(|i| {
                    if next.peek() == Some(&i) {
                        next.next();
                        false
                    } else {
                        true
                    }
                })
                .collect()
        })
        .collect();
    Ok(ValidatedDataset {
        counts,
        coords,
        comps,
        network,
        size_factors: vec![1.0; n],
        zero_spots,
    })
}

impl ValidatedDataset {
    /// Replaces the per-spot size factors (default all ones).
    pub fn with_size_factors(mut self, size_factors: Vec<f64>) -> Result<Self, ModelError> {
        if size_factors.len() != self.n_spots() {
            return Err(ModelError::DimensionMismatch {
                what: "size factors and count spots",
                left: size_factors.len(),
                right: self.n_spots(),
            });
        }
        if let Some(i) = size_factors.iter().position(|&c| !(c > 0.0 && c.is_finite())) {
            return Err(violation("size factor > 0", format!("spot {i}")));
        }
        self.size_factors = size_factors;
        Ok(self)
    }

    pub fn n_spots(&self) -> usize {
        self.counts.n_spots()
    }

    pub fn n_genes(&self) -> usize {
        self.counts.n_genes()
    }

    pub fn n_types(&self) -> usize {
        self.comps.n_types()
    }

    pub fn counts(&self) -> &CountMatrix {
        &self.counts
    }

    pub fn coords(&self) -> &Coordinates {
        &self.coords
    }

    pub fn comps(&self) -> &CellCompositions {
        &self.comps
    }

    pub fn network(&self) -> &GeneNetwork {
        &self.network
    }

    pub fn size_factors(&self) -> &[f64] {
        &self.size_factors
    }

    /// Spots where gene `j` has a zero count, ascending.
    pub fn zero_spots(&self, j: usize) -> &[u32] {
        &self.zero_spots[j]
    }

    /// Total number of zero entries.
    pub fn zero_count(&self) -> usize {
        self.zero_spots.iter().map(Vec::len).sum()
    }

    pub fn into_parts(self) -> (CountMatrix, Coordinates, CellCompositions, GeneNetwork) {
        (self.counts, self.coords, self.comps, self.network)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize, p: usize, k: usize) -> (CountMatrix, Coordinates, CellCompositions, GeneNetwork) {
        let counts = CountMatrix::from_dense(n, p, &(0..(n * p) as u32).map(|v| v % 3).collect::<Vec<_>>())
            .unwrap();
        let coords = Coordinates::new((0..n).map(|i| [i as f64, (i * i) as f64]).collect()).unwrap();
        let comps = CellCompositions::new(n, k, vec![1.0 / k as f64; n * k]).unwrap();
        let net = GeneNetwork::from_edges(p, &[(0, 1)]).unwrap();
        (counts, coords, comps, net)
    }

    #[test]
    fn consistent_dimensions_validate() {
        let (c, x, w, g) = toy(4, 3, 2);
        let data = validate_dataset(c, x, w, g).unwrap();
        assert_eq!(data.n_spots(), 4);
        assert_eq!(data.n_genes(), 3);
        assert_eq!(data.n_types(), 2);
    }

    #[test]
    fn mismatched_network_is_rejected() {
        let (c, x, w, _) = toy(4, 3, 2);
        let err = validate_dataset(c, x, w, GeneNetwork::edgeless(4)).unwrap_err();
        assert!(matches!(err, ModelError::DimensionMismatch { left: 4, right: 3, .. }));
    }

    #[test]
    fn composition_row_sum_is_checked() {
        let err = CellCompositions::new(2, 2, vec![0.5, 0.6, 0.5, 0.5]).unwrap_err();
        assert!(matches!(err, ModelError::InvariantViolation { invariant: "row sum equals 1", .. }));
    }

    #[test]
    fn asymmetric_adjacency_is_rejected() {
        let rows = vec![vec![0, 1, 0], vec![0, 0, 0], vec![0, 0, 0]];
        let err = GeneNetwork::from_adjacency(&rows).unwrap_err();
        assert!(matches!(err, ModelError::InvariantViolation { invariant: "symmetry", .. }));
    }

    #[test]
    fn adjacency_round_trip() {
        let rows = vec![vec![0, 1, 0], vec![1, 0, 1], vec![0, 1, 0]];
        let net = GeneNetwork::from_adjacency(&rows).unwrap();
        assert_eq!(net.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(net.degrees(), vec![1, 2, 1]);
    }

    #[test]
    fn self_loops_are_rejected() {
        assert!(GeneNetwork::from_edges(3, &[(1, 1)]).is_err());
    }

    #[test]
    fn constant_coordinate_column_is_rejected() {
        assert!(Coordinates::new(vec![[0.0, 1.0], [1.0, 1.0]]).is_err());
        assert!(Coordinates::new(vec![[0.0, f64::NAN], [1.0, 1.0]]).is_err());
    }

    #[test]
    fn zero_index_matches_zero_count() {
        let (c, x, w, g) = toy(5, 4, 3);
        let zeros = (0..5).flat_map(|i| (0..4).map(move |j| (i, j))).filter(|&(i, j)| c.get(i, j) == 0).count();
        let data = validate_dataset(c, x, w, g).unwrap();
        assert_eq!(data.zero_count(), zeros);

        let all_positive = CountMatrix::from_dense(3, 2, &[1, 2, 3, 4, 5, 6]).unwrap();
        let coords = Coordinates::new(vec![[0.0, 0.0], [1.0, 2.0], [2.0, 1.0]]).unwrap();
        let comps = CellCompositions::new(3, 1, vec![1.0; 3]).unwrap();
        let data = validate_dataset(all_positive, coords, comps, GeneNetwork::edgeless(2)).unwrap();
        assert_eq!(data.zero_count(), 0);
    }

    #[test]
    fn validation_is_idempotent() {
        let (c, x, w, g) = toy(6, 3, 2);
        let data = validate_dataset(c, x, w, g).unwrap();
        let (c, x, w, g) = data.clone().into_parts();
        assert_eq!(validate_dataset(c, x, w, g).unwrap(), data);
    }

    #[test]
    fn duplicate_triplets_are_rejected() {
        assert!(CountMatrix::from_triplets(2, 2, [(0, 0, 1), (0, 0, 2)]).is_err());
        let m = CountMatrix::from_triplets(2, 2, [(0, 0, 0), (1, 1, 2)]).unwrap();
        assert_eq!(m.nnz(), 1);
        assert_eq!(m.get(1, 1), 2);
    }

    #[test]
    fn hyperparameter_defaults_are_valid() {
        HyperParams::default().validate().unwrap();
        ProposalScales::default().validate().unwrap();
        let bad = HyperParams {
            bfdr_level: 1.5,
            ..HyperParams::default()
        };
        assert!(bad.validate().is_err());
        let bad = ProposalScales {
            tau_gamma_sq: 1.0,
            ..ProposalScales::default()
        };
        assert!(bad.validate().is_err());
    }
}
