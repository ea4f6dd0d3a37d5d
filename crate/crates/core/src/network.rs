//! Graph Laplacian prior: components, the normalized and sign-adjusted
//! Laplacian, the rough effect estimate that fixes the signs, and per-block
//! Cholesky factors of the prior precision.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::kernels::DesignMatrix;
use crate::model::{GeneNetwork, ValidatedDataset};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("rough-estimate regression matrix is rank deficient")]
    SingularDesign,
    #[error("precision block {block} is not positive definite")]
    NotPositiveDefinite { block: usize },
}

/// Connected components by breadth-first search. Members are sorted and the
/// components are ordered by their smallest member.
pub fn connected_components(net: &GeneNetwork) -> Vec<Vec<usize>> {
    let p = net.n_genes();
    let mut seen = vec![false; p];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..p {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut comp = Vec::new();
        while let Some(v) = queue.pop_front() {
            comp.push(v);
            for &u in net.neighbors(v) {
                if !seen[u] {
                    seen[u] = true;
                    queue.push_back(u);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// One component's slice of a Laplacian.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianBlock {
    pub genes: Vec<usize>,
    pub matrix: DMatrix<f64>,
}

/// `I - D^{-1/2} A D^{-1/2}` stored per connected component. Isolated genes
/// get a unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedLaplacian {
    n_genes: usize,
    blocks: Vec<LaplacianBlock>,
}

impl NormalizedLaplacian {
    pub fn blocks(&self) -> &[LaplacianBlock] {
        &self.blocks
    }

    pub fn n_genes(&self) -> usize {
        self.n_genes
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_genes, self.n_genes);
        for b in &self.blocks {
            for (a, &ga) in b.genes.iter().enumerate() {
                for (c, &gc) in b.genes.iter().enumerate() {
                    m[(ga, gc)] = b.matrix[(a, c)];
                }
            }
        }
        m
    }
}

pub fn normalized_laplacian(net: &GeneNetwork) -> NormalizedLaplacian {
    let blocks = net
        .components()
        .iter()
        .map(|genes| {
            let size = genes.len();
            let mut matrix = DMatrix::identity(size, size);
            for (a, &ga) in genes.iter().enumerate() {
                for &gb in net.neighbors(ga) {
                    let b = genes.binary_search(&gb).expect("neighbor in same component");
                    let scale = ((net.degree(ga) * net.degree(gb)) as f64).sqrt();
                    matrix[(a, b)] = -1.0 / scale;
                }
            }
            LaplacianBlock {
                genes: genes.clone(),
                matrix,
            }
        })
        .collect();
    NormalizedLaplacian {
        n_genes: net.n_genes(),
        blocks,
    }
}

/// Least-squares slopes of `log(1 + Y_ij)` on the two kernel columns with an
/// intercept and the first `K - 1` composition columns as covariates.
/// Returns a length-`2p` vector stacked by dimension.
pub fn rough_beta(data: &ValidatedDataset, design: &DesignMatrix) -> Result<Vec<f64>, NetworkError> {
    let n = data.n_spots();
    let p = data.n_genes();
    let k = data.n_types();
    let q = 3 + k.saturating_sub(1);
    let comps = data.comps();
    let x = DMatrix::from_fn(n, q, |i, c| match c {
        0 => 1.0,
        1 => design.get(i, 0),
        2 => design.get(i, 1),
        _ => comps.get(i, c - 3),
    });
    let gram = x.transpose() * &x;
    let chol = gram.clone().cholesky().ok_or(NetworkError::SingularDesign)?;
    // Reject near-singular systems that still factor in floating point.
    let l = chol.l();
    for c in 0..q {
        if l[(c, c)].powi(2) <= 1e-10 * gram[(c, c)].max(f64::MIN_POSITIVE) {
            return Err(NetworkError::SingularDesign);
        }
    }
    // Rows 1 and 2 of (X'X)^{-1} X' give the two slopes for any response.
    let hat = chol.solve(&x.transpose());
    let mut out = vec![0.0; 2 * p];
    for j in 0..p {
        let (rows, vals) = data.counts().gene_nonzeros(j);
        let (mut s1, mut s2) = (0.0, 0.0);
        for (&i, &v) in rows.iter().zip(vals) {
            let y = (v as f64).ln_1p();
            s1 += hat[(1, i as usize)] * y;
            s2 += hat[(2, i as usize)] * y;
        }
        out[j] = s1;
        out[p + j] = s2;
    }
    Ok(out)
}

/// Sign convention for the adaptive Laplacian: zero counts as positive.
pub fn sign(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// One `(component, dimension)` block of `L + eps I`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedBlock {
    pub dim: usize,
    pub genes: Vec<usize>,
    pub matrix: DMatrix<f64>,
}

impl SignedBlock {
    /// Positions of this block's coefficients in the stacked `2p` vector.
    pub fn positions(&self, n_genes: usize) -> impl Iterator<Item = usize> + '_ {
        self.genes.iter().map(move |&g| self.dim * n_genes + g)
    }
}

/// `L + eps I` where `L = (sgn b sgn b') o Ltilde`, with two copies of every
/// component block (one per spatial dimension).
#[derive(Debug, Clone, PartialEq)]
pub struct SignedLaplacian {
    n_genes: usize,
    ridge: f64,
    sign: Vec<f64>,
    tilde_beta: Vec<f64>,
    blocks: Vec<SignedBlock>,
}

impl SignedLaplacian {
    pub fn n_genes(&self) -> usize {
        self.n_genes
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn signs(&self) -> &[f64] {
        &self.sign
    }

    pub fn tilde_beta(&self) -> &[f64] {
        &self.tilde_beta
    }

    /// Blocks ordered by dimension, then by component.
    pub fn blocks(&self) -> &[SignedBlock] {
        &self.blocks
    }

    /// Number of network components (blocks per dimension).
    pub fn n_components(&self) -> usize {
        self.blocks.len() / 2
    }

    /// `gamma' (L + eps I) gamma` accumulated block by block.
    pub fn quad_form(&self, gamma: &[f64]) -> f64 {
        self.blocks
            .iter()
            .map(|b| {
                let v = DVector::from_iterator(b.genes.len(), b.positions(self.n_genes).map(|i| gamma[i]));
                v.dot(&(&b.matrix * &v))
            })
            .sum()
    }

    /// Dense `2p x 2p` matrix `L + eps I`.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let m = 2 * self.n_genes;
        let mut out = DMatrix::zeros(m, m);
        for b in &self.blocks {
            let pos: Vec<usize> = b.positions(self.n_genes).collect();
            for (a, &pa) in pos.iter().enumerate() {
                for (c, &pc) in pos.iter().enumerate() {
                    out[(pa, pc)] = b.matrix[(a, c)];
                }
            }
        }
        out
    }
}

pub fn signed_laplacian(lap: &NormalizedLaplacian, tilde_beta: &[f64], ridge: f64) -> SignedLaplacian {
    let p = lap.n_genes();
    assert_eq!(tilde_beta.len(), 2 * p, "rough estimate must have length 2p");
    let sign: Vec<f64> = tilde_beta.iter().map(|&b| sign(b)).collect();
    let mut blocks = Vec::with_capacity(2 * lap.blocks().len());
    for dim in 0..2 {
        for block in lap.blocks() {
            let s: Vec<f64> = block.genes.iter().map(|&g| sign[dim * p + g]).collect();
            let size = block.genes.len();
            let matrix = DMatrix::from_fn(size, size, |a, c| {
                s[a] * s[c] * block.matrix[(a, c)] + if a == c { ridge } else { 0.0 }
            });
            blocks.push(SignedBlock {
                dim,
                genes: block.genes.clone(),
                matrix,
            });
        }
    }
    SignedLaplacian {
        n_genes: p,
        ridge,
        sign,
        tilde_beta: tilde_beta.to_vec(),
        blocks,
    }
}

/// Lower Cholesky factor `C` of one precision block, `Q = C C'`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockFactor {
    lower: DMatrix<f64>,
}

impl BlockFactor {
    pub fn size(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    /// Overwrites `rhs` with `Q^{-1} rhs`.
    pub fn solve_in_place(&self, rhs: &mut DVector<f64>) {
        let ok = self.lower.solve_lower_triangular_mut(rhs);
        debug_assert!(ok);
        let ok = self.lower.tr_solve_lower_triangular_mut(rhs);
        debug_assert!(ok);
    }

    /// Maps standard normal draws `z` to draws from `N(0, Q^{-1})` in place.
    pub fn color_in_place(&self, z: &mut DVector<f64>) {
        let ok = self.lower.tr_solve_lower_triangular_mut(z);
        debug_assert!(ok);
    }
}

/// Factors for every block of a [`SignedLaplacian`], in the same order.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionFactors {
    blocks: Vec<BlockFactor>,
}

impl PrecisionFactors {
    pub fn blocks(&self) -> &[BlockFactor] {
        &self.blocks
    }
}

pub fn precision_factorize(sl: &SignedLaplacian) -> Result<PrecisionFactors, NetworkError> {
    let blocks = sl
        .blocks()
        .iter()
        .enumerate()
        .map(|(idx, b)| {
            b.matrix
                .clone()
                .cholesky()
                .map(|c| BlockFactor { lower: c.unpack() })
                .ok_or(NetworkError::NotPositiveDefinite { block: idx })
        })
        .collect::<Result<_, _>>()?;
    Ok(PrecisionFactors { blocks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    use crate::kernels::DesignMatrix;
    use crate::model::{validate_dataset, CellCompositions, Coordinates, CountMatrix};

    /// Independent union-find used as a component oracle.
    fn union_find_components(p: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
        fn find(parent: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while parent[r] != r {
                r = parent[r];
            }
            let mut c = x;
            while parent[c] != r {
                let next = parent[c];
                parent[c] = r;
                c = next;
            }
            r
        }
        let mut parent: Vec<usize> = (0..p).collect();
        for &(a, b) in edges {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
        let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for v in 0..p {
            let r = find(&mut parent, v);
            groups.entry(r).or_default().push(v);
        }
        let mut out: Vec<Vec<usize>> = groups.into_values().collect();
        out.sort_by_key(|c| c[0]);
        out
    }

    fn star(p: usize) -> Vec<(usize, usize)> {
        (1..p).map(|l| (0, l)).collect()
    }

    #[test]
    fn components_of_small_graphs() {
        assert_eq!(connected_components(&GeneNetwork::edgeless(3)), vec![vec![0], vec![1], vec![2]]);
        let net = GeneNetwork::from_edges(4, &[(0, 1), (1, 2)]).unwrap();
        assert_eq!(connected_components(&net), vec![vec![0, 1, 2], vec![3]]);
    }

    #[test]
    fn two_stars_match_union_find() {
        let mut edges = star(50);
        edges.extend(star(50).into_iter().map(|(a, b)| (a + 50, b + 50)));
        let net = GeneNetwork::from_edges(100, &edges).unwrap();
        let comps = connected_components(&net);
        assert_eq!(comps, union_find_components(100, &edges));
        assert_eq!(comps.len(), 2);
        assert!(comps.iter().all(|c| c.len() == 50));
    }

    #[test]
    fn star_laplacian_entries() {
        let net = GeneNetwork::from_edges(4, &star(4)).unwrap();
        let l = normalized_laplacian(&net).to_dense();
        for j in 0..4 {
            assert_eq!(l[(j, j)], 1.0);
        }
        for leaf in 1..4 {
            assert!((l[(0, leaf)] + 1.0 / 3f64.sqrt()).abs() < 1e-15);
            assert_eq!(l[(leaf, (leaf % 3) + 1)], 0.0);
        }
    }

    #[test]
    fn edgeless_laplacian_is_identity() {
        let l = normalized_laplacian(&GeneNetwork::edgeless(5)).to_dense();
        assert_eq!(l, DMatrix::identity(5, 5));
    }

    #[test]
    fn single_edge_quadratic_form() {
        let net = GeneNetwork::from_edges(2, &[(0, 1)]).unwrap();
        let l = normalized_laplacian(&net).to_dense();
        assert_eq!(l[(0, 1)], -1.0);
        let x = DVector::from_vec(vec![0.7, -1.3]);
        assert!((x.dot(&(&l * &x)) - (0.7f64 + 1.3).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn opposite_signs_flip_the_edge() {
        let net = GeneNetwork::from_edges(2, &[(0, 1)]).unwrap();
        let lap = normalized_laplacian(&net);
        let eps = 1e-3;
        let sl = signed_laplacian(&lap, &[1.0, -1.0, 0.5, 0.5], eps);
        let dense = sl.to_dense();
        assert_eq!(dense[(0, 1)], 1.0);
        assert_eq!(dense[(2, 3)], -1.0);
        let g = [0.3, 0.9, 0.0, 0.0];
        let want = (0.3f64 + 0.9).powi(2) + eps * (0.09 + 0.81);
        assert!((sl.quad_form(&g) - want).abs() < 1e-12);
    }

    #[test]
    fn positive_signs_and_global_flip_leave_laplacian_unchanged() {
        let net = GeneNetwork::from_edges(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let lap = normalized_laplacian(&net);
        let beta = [0.2, -0.4, 0.1, 0.0, -0.3, 0.3, 0.5, -0.1];
        let positive = signed_laplacian(&lap, &[1.0; 8], 0.0).to_dense();
        let unsigned = lap.to_dense();
        for d in 0..2 {
            let block = positive.view((4 * d, 4 * d), (4, 4));
            assert_eq!(block.clone_owned(), unsigned);
        }
        let flipped: Vec<f64> = beta.iter().map(|b| -b).collect();
        // Entries that are exactly zero keep sign +1 under negation, so
        // compare only on vectors without zeros.
        let beta_nz = [0.2, -0.4, 0.1, 0.7, -0.3, 0.3, 0.5, -0.1];
        let flipped_nz: Vec<f64> = beta_nz.iter().map(|b| -b).collect();
        assert_eq!(
            signed_laplacian(&lap, &beta_nz, 1e-3).to_dense(),
            signed_laplacian(&lap, &flipped_nz, 1e-3).to_dense()
        );
        assert_eq!(flipped.len(), 8);
    }

    #[test]
    fn singleton_factor_is_scalar_root() {
        let lap = normalized_laplacian(&GeneNetwork::edgeless(1));
        let sl = signed_laplacian(&lap, &[0.0, 0.0], 1e-3);
        let f = precision_factorize(&sl).unwrap();
        assert_eq!(f.blocks().len(), 2);
        assert!((f.blocks()[0].lower()[(0, 0)] - (1.0f64 + 1e-3).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn edge_factor_reconstructs_block() {
        let net = GeneNetwork::from_edges(2, &[(0, 1)]).unwrap();
        let sl = signed_laplacian(&normalized_laplacian(&net), &[1.0, -2.0, 1.0, 1.0], 1e-3);
        let f = precision_factorize(&sl).unwrap();
        for (b, fac) in sl.blocks().iter().zip(f.blocks()) {
            let rebuilt = fac.lower() * fac.lower().transpose();
            assert!((rebuilt - &b.matrix).abs().max() < 1e-12);
        }
    }

    #[test]
    fn block_draws_have_prior_covariance() {
        let net = GeneNetwork::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let sl = signed_laplacian(&normalized_laplacian(&net), &[1.0; 6], 1e-3);
        let f = precision_factorize(&sl).unwrap();
        let fac = &f.blocks()[0];
        let sigma_sq = 0.5;
        let target = sl.blocks()[0].matrix.clone().try_inverse().unwrap() * sigma_sq;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 100_000;
        let mut acc = DMatrix::<f64>::zeros(3, 3);
        for _ in 0..draws {
            let mut z = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
            fac.color_in_place(&mut z);
            z *= sigma_sq.sqrt();
            acc += &z * z.transpose();
        }
        acc /= draws as f64;
        let rel = (&acc - &target).norm() / target.norm();
        assert!(rel < 0.05, "relative covariance error {rel}");
    }

    #[test]
    fn solve_inverts_block() {
        let net = GeneNetwork::from_edges(3, &[(0, 1), (0, 2)]).unwrap();
        let sl = signed_laplacian(&normalized_laplacian(&net), &[1.0, -1.0, 1.0, 1.0, 1.0, -1.0], 1e-3);
        let f = precision_factorize(&sl).unwrap();
        let rhs = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        let mut x = rhs.clone();
        f.blocks()[1].solve_in_place(&mut x);
        assert!((&sl.blocks()[1].matrix * x - rhs).norm() < 1e-9);
    }

    fn dataset_with_gene(y_cols: Vec<Vec<u32>>, design: &DesignMatrix, comps: Vec<f64>, k: usize) -> ValidatedDataset {
        let n = design.n_spots();
        let p = y_cols.len();
        let mut dense = vec![0u32; n * p];
        for (j, col) in y_cols.iter().enumerate() {
            for i in 0..n {
                dense[i * p + j] = col[i];
            }
        }
        let counts = CountMatrix::from_dense(n, p, &dense).unwrap();
        let coords = Coordinates::new((0..n).map(|i| [design.get(i, 0), design.get(i, 1)]).collect()).unwrap();
        let comps = CellCompositions::new(n, k, comps).unwrap();
        validate_dataset(counts, coords, comps, GeneNetwork::edgeless(p)).unwrap()
    }

    #[test]
    fn rough_beta_recovers_exact_linear_slope() {
        // log1p(y) = 0.5 + 2 * k1 requires y = exp(0.5 + 2 k1) - 1 to be an
        // integer; choose k1 so that it is.
        let ys: Vec<u32> = vec![1, 3, 7, 15, 31, 63];
        let k1: Vec<f64> = ys.iter().map(|&y| ((y as f64).ln_1p() - 0.5) / 2.0).collect();
        let k2: Vec<f64> = vec![0.3, -1.0, 0.4, 0.9, -0.2, 0.1];
        let design = DesignMatrix::from_columns(k1, k2);
        let comps: Vec<f64> = (0..6).flat_map(|i| {
            let w = 0.1 + 0.13 * ((i * 7) % 5) as f64;
            [w, 1.0 - w]
        }).collect();
        let data = dataset_with_gene(vec![ys, vec![0; 6]], &design, comps, 2);
        let b = rough_beta(&data, &design).unwrap();
        assert!((b[0] - 2.0).abs() < 1e-8, "slope {}", b[0]);
        assert!(b[2].abs() < 1e-8);
        assert_eq!(b[1], 0.0);
        assert_eq!(b[3], 0.0);
    }

    #[test]
    fn rough_beta_is_permutation_invariant() {
        let k1 = vec![-1.0, 0.0, 1.0, 2.0, -0.5, 0.7, 1.5];
        let k2 = vec![0.2, 0.9, -0.4, 0.3, 1.1, -1.2, 0.0];
        let ys = vec![3, 0, 5, 9, 1, 4, 2];
        let comps: Vec<f64> = (0..7).flat_map(|i| {
            let w = 0.05 + 0.1 * i as f64;
            [w, 1.0 - w]
        }).collect();
        let design = DesignMatrix::from_columns(k1.clone(), k2.clone());
        let b = rough_beta(&dataset_with_gene(vec![ys.clone()], &design, comps.clone(), 2), &design).unwrap();

        let perm = [3, 6, 0, 5, 1, 4, 2];
        let pk1 = perm.iter().map(|&i| k1[i]).collect();
        let pk2 = perm.iter().map(|&i| k2[i]).collect();
        let pys = perm.iter().map(|&i| ys[i]).collect();
        let pcomps = perm.iter().flat_map(|&i| [comps[2 * i], comps[2 * i + 1]]).collect();
        let pdesign = DesignMatrix::from_columns(pk1, pk2);
        let pb = rough_beta(&dataset_with_gene(vec![pys], &pdesign, pcomps, 2), &pdesign).unwrap();
        for (a, c) in b.iter().zip(&pb) {
            assert!((a - c).abs() < 1e-10);
        }
    }

    #[test]
    fn collinear_design_is_singular() {
        let k1 = vec![1.0, 2.0, 3.0, 4.0];
        let design = DesignMatrix::from_columns(k1.clone(), k1);
        let data = dataset_with_gene(vec![vec![1, 2, 3, 4]], &design, vec![1.0; 4], 1);
        assert_eq!(rough_beta(&data, &design), Err(NetworkError::SingularDesign));
    }

    fn random_graph(p: usize, edge_prob: f64, seed: u64) -> GeneNetwork {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for a in 0..p {
            for b in (a + 1)..p {
                if rng.random::<f64>() < edge_prob {
                    edges.push((a, b));
                }
            }
        }
        GeneNetwork::from_edges(p, &edges).unwrap()
    }

    proptest! {
        #[test]
        fn laplacian_quadratic_form_is_edge_sum(p in 1usize..30, prob in 0.0f64..0.3, seed in any::<u64>()) {
            let net = random_graph(p, prob, seed);
            let l = normalized_laplacian(&net).to_dense();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            let g = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
            let lhs = g.dot(&(&l * &g));
            let deg = net.degrees();
            let mut rhs = 0.0;
            for &(a, b) in net.edges() {
                rhs += (g[a] / (deg[a] as f64).sqrt() - g[b] / (deg[b] as f64).sqrt()).powi(2);
            }
            for j in 0..p {
                if deg[j] == 0 {
                    rhs += g[j] * g[j];
                }
            }
            prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + rhs.abs()));
        }

        #[test]
        fn block_eigenvalues_in_ridge_band(p in 1usize..25, prob in 0.0f64..0.4, seed in any::<u64>()) {
            let net = random_graph(p, prob, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let beta: Vec<f64> = (0..2 * p).map(|_| rng.random::<f64>() - 0.5).collect();
            let eps = 1e-3;
            let sl = signed_laplacian(&normalized_laplacian(&net), &beta, eps);
            for b in sl.blocks() {
                let eig = b.matrix.clone().symmetric_eigenvalues();
                for &e in eig.iter() {
                    prop_assert!(e >= eps - 1e-9 && e <= 2.0 + eps + 1e-9);
                }
            }
            prop_assert!(precision_factorize(&sl).is_ok());
            let dense = sl.to_dense();
            let g = DVector::from_fn(2 * p, |_, _| rng.sample::<f64, _>(StandardNormal));
            let quad: Vec<f64> = g.iter().copied().collect();
            prop_assert!((sl.quad_form(&quad) - g.dot(&(&dense * &g))).abs() < 1e-10 * (1.0 + g.norm_squared()));
        }

        #[test]
        fn relabeling_is_permutation_similar(p in 2usize..15, prob in 0.0f64..0.5, seed in any::<u64>()) {
            let net = random_graph(p, prob, seed);
            let perm: Vec<usize> = (0..p).rev().collect();
            let relabeled: Vec<(usize, usize)> = net.edges().iter().map(|&(a, b)| (perm[a], perm[b])).collect();
            let net2 = GeneNetwork::from_edges(p, &relabeled).unwrap();
            let l1 = normalized_laplacian(&net).to_dense();
            let l2 = normalized_laplacian(&net2).to_dense();
            for a in 0..p {
                for b in 0..p {
                    prop_assert!((l1[(a, b)] - l2[(perm[a], perm[b])]).abs() < 1e-15);
                }
            }
        }
    }
}
