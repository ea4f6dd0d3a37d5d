//! MCMC engine for one kernel model.
//!
//! A sweep runs the eight conditional updates in a fixed order: dropout
//! indicators, gene baselines, composition effects, dispersion, the latent
//! spatial effects (one pCN Langevin move per network component), the
//! component weights, the prior scale and the threshold.
//!
//! The sampler caches the NB mean `m_ij = c_i mu_ij` and `ln(m_ij + phi)` for
//! every entry, and keeps per-gene partial log-likelihood sums so that each
//! proposal is scored by recomputing only the entries it touches.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::dist::{inverse_gamma, log_interval_mass, log_normal_cdf, truncated_normal};
use crate::kernels::DesignMatrix;
use crate::model::{CellCompositions, HyperParams, ModelError, ModelState, ProposalScales, ValidatedDataset};
use crate::network::{PrecisionFactors, SignedLaplacian};

/// Floor on `|gamma|` before the reciprocal square root in the weight update.
pub const RHO_FLOOR: f64 = 1e-12;
/// Bounds on the adapted pCN step.
pub const TAU_GAMMA_SQ_MIN: f64 = 1e-6;
pub const TAU_GAMMA_SQ_MAX: f64 = 0.999;
/// Sweeps between full recomputations of the cached means.
const REFRESH_EVERY: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("invalid chain configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite {what} at sweep {sweep}")]
    NonFinite { sweep: usize, what: &'static str },
}

/// Which conditional updates run in each sweep. All are on by default;
/// tests switch some off to isolate a conditional.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepSet {
    pub dropout: bool,
    pub mu0: bool,
    pub alpha: bool,
    pub phi: bool,
    pub gamma: bool,
    pub rho: bool,
    pub sigma: bool,
    pub lambda: bool,
}

impl Default for StepSet {
    fn default() -> Self {
        Self {
            dropout: true,
            mu0: true,
            alpha: true,
            phi: true,
            gamma: true,
            rho: true,
            sigma: true,
            lambda: true,
        }
    }
}

impl StepSet {
    pub fn none() -> Self {
        Self {
            dropout: false,
            mu0: false,
            alpha: false,
            phi: false,
            gamma: false,
            rho: false,
            sigma: false,
            lambda: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Sweeps between proposal-scale updates during burn-in.
    pub adapt_window: usize,
    #[serde(skip)]
    pub steps: StepSet,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            burn_in: 1000,
            thin: 10,
            seed: 1,
            adapt_window: 10,
            steps: StepSet::default(),
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.burn_in >= self.iterations {
            return Err(SamplerError::Config(format!(
                "burn_in {} must be below iterations {}",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(SamplerError::Config("thin must be at least 1".into()));
        }
        if self.adapt_window == 0 {
            return Err(SamplerError::Config("adapt_window must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of retained draws.
    pub fn retained(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }

    /// Whether the state after `sweep` (1-based) is kept.
    pub fn keeps(&self, sweep: usize) -> bool {
        sweep > self.burn_in && (sweep - self.burn_in).is_multiple_of(self.thin)
    }
}

/// NB log-pmf in the mean/size parameterization, variance `mu + mu^2/phi`.
pub fn nb_logpmf(y: u32, mu: f64, phi: f64) -> f64 {
    let y = y as f64;
    let lmp = (mu + phi).ln();
    let mut out = phi * (phi.ln() - lmp);
    if y > 0.0 {
        out += ln_gamma(y + phi) - ln_gamma(phi) - ln_gamma(y + 1.0) + y * (mu.ln() - lmp);
    }
    out
}

/// `log mu_ij` from a model state.
pub fn log_mu(state: &ModelState, design: &DesignMatrix, comps: &CellCompositions, i: usize, j: usize) -> f64 {
    let p = state.mu0.len();
    let beta = |idx: usize| if state.included(idx) { state.gamma[idx] } else { 0.0 };
    let offset: f64 = comps.row(i).iter().zip(&state.alpha).map(|(w, a)| w * a).sum();
    state.mu0[j] + beta(j) * design.get(i, 0) + beta(p + j) * design.get(i, 1) + offset
}

/// Conditional probability that a zero count is a dropout.
pub fn dropout_probability(m: f64, phi: f64, a_pi: f64, b_pi: f64) -> f64 {
    let nb_zero = (phi * (phi.ln() - (m + phi).ln())).exp();
    a_pi / (a_pi + b_pi * nb_zero)
}

/// Log proposal correction `q(phi | phi*) / q(phi* | phi)` for the
/// zero-truncated normal random walk with standard deviation `tau`.
pub fn phi_proposal_log_correction(phi: f64, phi_star: f64, tau: f64) -> f64 {
    log_normal_cdf(phi / tau) - log_normal_cdf(phi_star / tau)
}

/// Log proposal correction for the interval-truncated threshold walk.
pub fn lambda_proposal_log_correction(lambda: f64, lambda_star: f64, tau: f64, lo: f64, hi: f64) -> f64 {
    log_interval_mass(lambda, tau, lo, hi) - log_interval_mass(lambda_star, tau, lo, hi)
}

/// Smooth surrogate of `I(|g| > t)` and its derivative in `g`.
pub fn smooth_indicator(g: f64, t: f64, eps: f64) -> (f64, f64) {
    let x = (g * g - t * t) / eps;
    let s = 0.5 + x.atan() / std::f64::consts::PI;
    let ds = (2.0 * g / eps) / (std::f64::consts::PI * (1.0 + x * x));
    (s, ds)
}

/// Stochastic-approximation step on a log variance.
pub fn adapt_log_variance(var: f64, rate: f64, target: f64, t: usize) -> f64 {
    let eta = (10.0 / t.max(1) as f64).min(0.5);
    (var.ln() + eta * (rate - target)).exp()
}

/// Read-only inputs shared by every chain of one kernel model.
#[derive(Debug, Clone, Copy)]
pub struct KernelInputs<'a> {
    pub data: &'a ValidatedDataset,
    pub design: &'a DesignMatrix,
    pub laplacian: &'a SignedLaplacian,
    pub factors: &'a PrecisionFactors,
    pub lambda_l: f64,
    pub lambda_u: f64,
}

/// Post-burn-in acceptance rates per parameter group.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceRates {
    pub mu0: f64,
    pub alpha: f64,
    pub phi: f64,
    pub gamma: f64,
    pub lambda: f64,
}

/// Thinned post-burn-in draws of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainTrace {
    pub gamma: Vec<Vec<f64>>,
    pub included: Vec<Vec<bool>>,
    pub lambda: Vec<f64>,
    pub sigma_gamma_sq: Vec<f64>,
    pub mu0: Vec<Vec<f64>>,
    pub alpha: Vec<Vec<f64>>,
    pub phi: Vec<f64>,
    pub log_likelihood: Vec<f64>,
    /// Posterior mean of each dropout indicator, aligned with
    /// [`ValidatedDataset::zero_spots`].
    pub dropout_mean: Vec<Vec<f64>>,
    pub acceptance: AcceptanceRates,
    /// Log-likelihood after every sweep, burn-in included.
    pub sweep_log_likelihood: Vec<f64>,
}

impl ChainTrace {
    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
struct Counter {
    proposed: usize,
    accepted: usize,
}

impl Counter {
    fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += accepted as usize;
    }

    fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

#[derive(Debug, Clone)]
struct Adaptive {
    mu0: Vec<f64>,
    alpha: Vec<f64>,
    phi: f64,
    gamma: Vec<f64>,
    lambda: f64,
}

#[derive(Debug, Clone, Default)]
struct Counters {
    mu0: Vec<Counter>,
    alpha: Vec<Counter>,
    phi: Counter,
    gamma: Vec<Counter>,
    lambda: Counter,
}

impl Counters {
    fn new(p: usize, k: usize, s: usize) -> Self {
        Self {
            mu0: vec![Counter::default(); p],
            alpha: vec![Counter::default(); k],
            phi: Counter::default(),
            gamma: vec![Counter::default(); s],
            lambda: Counter::default(),
        }
    }

    fn pooled(v: &[Counter]) -> f64 {
        let (a, n) = v.iter().fold((0, 0), |(a, n), c| (a + c.accepted, n + c.proposed));
        if n == 0 {
            0.0
        } else {
            a as f64 / n as f64
        }
    }

    fn rates(&self) -> AcceptanceRates {
        AcceptanceRates {
            mu0: Self::pooled(&self.mu0),
            alpha: Self::pooled(&self.alpha),
            phi: self.phi.rate(),
            gamma: Self::pooled(&self.gamma),
            lambda: self.lambda.rate(),
        }
    }
}

fn accept<R: Rng>(rng: &mut R, log_ratio: f64) -> bool {
    log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
}

/// One chain's mutable state and caches.
pub struct Sampler<'a> {
    inputs: KernelInputs<'a>,
    hp: HyperParams,
    target: f64,
    rng: ChaCha8Rng,
    n: usize,
    p: usize,
    k: usize,
    /// Counts, gene-major: entry `(i, j)` at `j * n + i`.
    y: Vec<u32>,
    ln_c: Vec<f64>,
    /// `(value, multiplicity)` over positive counts.
    positive_values: Vec<(u32, usize)>,
    ln_fact_positive: f64,

    gamma: Vec<f64>,
    rho: Vec<f64>,
    lambda: f64,
    sigma_sq: f64,
    mu0: Vec<f64>,
    alpha: Vec<f64>,
    phi: f64,
    active: Vec<bool>,

    beta: Vec<f64>,
    offset: Vec<f64>,
    m: Vec<f64>,
    lmp: Vec<f64>,
    gene_ll: Vec<f64>,
    n_active: usize,
    g_phi: f64,

    scratch_m: Vec<f64>,
    scratch_lmp: Vec<f64>,
    gene_delta: Vec<f64>,

    scales: Adaptive,
    window: Counters,
    total: Counters,
}

impl<'a> Sampler<'a> {
    /// Builds a chain at the default initial state.
    pub fn new(
        inputs: KernelInputs<'a>,
        hp: &HyperParams,
        scales: &ProposalScales,
        seed: u64,
        stream: u64,
    ) -> Result<Self, SamplerError> {
        let state = initial_state(&inputs, hp);
        Self::from_state(inputs, hp, scales, state, seed, stream)
    }

    /// Builds a chain at a caller-supplied state.
    pub fn from_state(
        inputs: KernelInputs<'a>,
        hp: &HyperParams,
        scales: &ProposalScales,
        state: ModelState,
        seed: u64,
        stream: u64,
    ) -> Result<Self, SamplerError> {
        hp.validate()?;
        scales.validate()?;
        state.validate(inputs.lambda_l, inputs.lambda_u)?;
        let data = inputs.data;
        let n = data.n_spots();
        let p = data.n_genes();
        let k = data.n_types();
        let s = inputs.laplacian.n_components();
        check_len("gamma", state.gamma.len(), 2 * p)?;
        check_len("mu0", state.mu0.len(), p)?;
        check_len("alpha", state.alpha.len(), k)?;
        check_len("dropout genes", state.dropout.len(), p)?;

        let mut y = vec![0u32; n * p];
        let mut histogram = std::collections::BTreeMap::<u32, usize>::new();
        for j in 0..p {
            let (rows, vals) = data.counts().gene_nonzeros(j);
            for (&i, &v) in rows.iter().zip(vals) {
                y[j * n + i as usize] = v;
                *histogram.entry(v).or_default() += 1;
            }
        }
        let positive_values: Vec<(u32, usize)> = histogram.into_iter().collect();
        let ln_fact_positive = positive_values
            .iter()
            .map(|&(v, c)| c as f64 * ln_gamma(v as f64 + 1.0))
            .sum();

        let mut active = vec![true; n * p];
        for j in 0..p {
            let zeros = data.zero_spots(j);
            check_len("dropout entries", state.dropout[j].len(), zeros.len())?;
            for (&i, &r) in zeros.iter().zip(&state.dropout[j]) {
                active[j * n + i as usize] = !r;
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let mut sampler = Self {
            inputs,
            hp: hp.clone(),
            target: scales.target_accept,
            rng,
            n,
            p,
            k,
            y,
            ln_c: data.size_factors().iter().map(|c| c.ln()).collect(),
            positive_values,
            ln_fact_positive,
            gamma: state.gamma,
            rho: state.rho,
            lambda: state.lambda,
            sigma_sq: state.sigma_gamma_sq,
            mu0: state.mu0,
            alpha: state.alpha,
            phi: state.phi,
            active,
            beta: vec![0.0; 2 * p],
            offset: vec![0.0; n],
            m: vec![0.0; n * p],
            lmp: vec![0.0; n * p],
            gene_ll: vec![0.0; p],
            n_active: 0,
            g_phi: 0.0,
            scratch_m: vec![0.0; n * p],
            scratch_lmp: vec![0.0; n * p],
            gene_delta: vec![0.0; p],
            scales: Adaptive {
                mu0: vec![scales.tau_mu0_sq; p],
                alpha: vec![scales.tau_alpha_sq; k],
                phi: scales.tau_phi_sq,
                gamma: vec![scales.tau_gamma_sq; s],
                lambda: scales.tau_lambda_sq,
            },
            window: Counters::new(p, k, s),
            total: Counters::new(p, k, s),
        };
        sampler.refresh();
        Ok(sampler)
    }

    pub fn n_spots(&self) -> usize {
        self.n
    }

    pub fn n_genes(&self) -> usize {
        self.p
    }

    /// Snapshot of the current state.
    pub fn state(&self) -> ModelState {
        let data = self.inputs.data;
        let dropout = (0..self.p)
            .map(|j| {
                data.zero_spots(j)
                    .iter()
                    .map(|&i| !self.active[j * self.n + i as usize])
                    .collect()
            })
            .collect();
        ModelState {
            gamma: self.gamma.clone(),
            rho: self.rho.clone(),
            lambda: self.lambda,
            sigma_gamma_sq: self.sigma_sq,
            mu0: self.mu0.clone(),
            alpha: self.alpha.clone(),
            phi: self.phi,
            dropout,
        }
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn mu0(&self) -> &[f64] {
        &self.mu0
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn sigma_gamma_sq(&self) -> f64 {
        self.sigma_sq
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    /// Number of entries currently flagged as dropouts.
    pub fn dropout_count(&self) -> usize {
        self.n * self.p - self.n_active
    }

    /// Current pCN step for each network component.
    pub fn tau_gamma_sq(&self) -> &[f64] {
        &self.scales.gamma
    }

    pub fn set_tau_gamma_sq(&mut self, value: f64) {
        self.scales.gamma.iter_mut().for_each(|t| *t = value);
    }

    fn included_at(&self, idx: usize, lambda: f64) -> bool {
        self.gamma[idx].abs() > lambda * self.rho[idx]
    }

    fn hard_beta(&self, idx: usize, gamma: f64, lambda: f64) -> f64 {
        if gamma.abs() > lambda * self.rho[idx] {
            gamma
        } else {
            0.0
        }
    }

    fn log_mean(&self, i: usize, j: usize, b1: f64, b2: f64) -> f64 {
        let d = self.inputs.design;
        self.mu0[j] + b1 * d.get(i, 0) + b2 * d.get(i, 1) + self.offset[i] + self.ln_c[i]
    }

    fn compute_offset(&mut self) {
        let comps = self.inputs.data.comps();
        for i in 0..self.n {
            self.offset[i] = comps.row(i).iter().zip(&self.alpha).map(|(w, a)| w * a).sum();
        }
    }

    fn g_of(&self, phi: f64) -> f64 {
        let lg_phi = ln_gamma(phi);
        self.positive_values
            .iter()
            .map(|&(v, c)| c as f64 * (ln_gamma(v as f64 + phi) - lg_phi))
            .sum::<f64>()
            - self.ln_fact_positive
    }

    /// Rebuilds every cache from the parameters.
    fn refresh(&mut self) {
        self.compute_offset();
        for idx in 0..2 * self.p {
            self.beta[idx] = if self.included_at(idx, self.lambda) { self.gamma[idx] } else { 0.0 };
        }
        let n = self.n;
        self.n_active = self.active.iter().filter(|&&a| a).count();
        for j in 0..self.p {
            let (b1, b2) = (self.beta[j], self.beta[self.p + j]);
            let mut ll = 0.0;
            for i in 0..n {
                let e = j * n + i;
                let lm = self.log_mean(i, j, b1, b2);
                let m = lm.exp();
                let lmp = (m + self.phi).ln();
                self.m[e] = m;
                self.lmp[e] = lmp;
                if self.active[e] {
                    let y = self.y[e] as f64;
                    ll += y * lm - (y + self.phi) * lmp;
                }
            }
            self.gene_ll[j] = ll;
        }
        self.g_phi = self.g_of(self.phi);
    }

    /// Incrementally maintained log-likelihood of the active entries.
    pub fn log_likelihood(&self) -> f64 {
        self.gene_ll.iter().sum::<f64>() + self.n_active as f64 * self.phi * self.phi.ln() + self.g_phi
    }

    /// Log-likelihood evaluated from scratch with [`nb_logpmf`].
    pub fn recompute_log_likelihood(&self) -> f64 {
        let state = self.state();
        let comps = self.inputs.data.comps();
        let mut total = 0.0;
        for j in 0..self.p {
            for i in 0..self.n {
                let e = j * self.n + i;
                if self.active[e] {
                    let mu = log_mu(&state, self.inputs.design, comps, i, j).exp() * self.inputs.data.size_factors()[i];
                    total += nb_logpmf(self.y[e], mu, self.phi);
                }
            }
        }
        total
    }

    // Step (a).

    pub fn step_dropouts(&mut self) {
        let (a, b) = (self.hp.a_pi, self.hp.b_pi);
        let ln_phi = self.phi.ln();
        let data = self.inputs.data;
        for j in 0..self.p {
            for &i in data.zero_spots(j) {
                let e = j * self.n + i as usize;
                let nb_zero = (self.phi * (ln_phi - self.lmp[e])).exp();
                let p1 = a / (a + b * nb_zero);
                let dropped = self.rng.random::<f64>() < p1;
                if dropped == self.active[e] {
                    // State changes; the zero-count term is -phi ln(m + phi).
                    let term = -self.phi * self.lmp[e];
                    if dropped {
                        self.gene_ll[j] -= term;
                        self.n_active -= 1;
                    } else {
                        self.gene_ll[j] += term;
                        self.n_active += 1;
                    }
                    self.active[e] = !dropped;
                }
            }
        }
    }

    // Step (b).

    /// Scores a shift of `mu0_j` by `delta`; fills the gene's scratch.
    fn mu0_likelihood_delta(&mut self, j: usize, delta: f64) -> f64 {
        let n = self.n;
        let scale = delta.exp();
        let mut out = 0.0;
        for e in j * n..(j + 1) * n {
            let m = self.m[e] * scale;
            let lmp = (m + self.phi).ln();
            self.scratch_m[e] = m;
            self.scratch_lmp[e] = lmp;
            if self.active[e] {
                let y = self.y[e] as f64;
                out += y * delta - (y + self.phi) * (lmp - self.lmp[e]);
            }
        }
        out
    }

    /// Log acceptance ratio for moving `mu0_j` to `value`.
    pub fn log_ratio_mu0(&mut self, j: usize, value: f64) -> f64 {
        let cur = self.mu0[j];
        let prior = -(value * value - cur * cur) / (2.0 * self.hp.sigma0_sq);
        prior + self.mu0_likelihood_delta(j, value - cur)
    }

    fn commit_gene_scratch(&mut self, j: usize, ll_delta: f64) {
        let r = j * self.n..(j + 1) * self.n;
        self.m[r.clone()].copy_from_slice(&self.scratch_m[r.clone()]);
        self.lmp[r.clone()].copy_from_slice(&self.scratch_lmp[r]);
        self.gene_ll[j] += ll_delta;
    }

    pub fn step_mu0(&mut self) {
        for j in 0..self.p {
            let tau = self.scales.mu0[j].sqrt();
            let value = self.mu0[j] + tau * self.rng.sample::<f64, _>(StandardNormal);
            let cur = self.mu0[j];
            let prior = -(value * value - cur * cur) / (2.0 * self.hp.sigma0_sq);
            let ll = self.mu0_likelihood_delta(j, value - cur);
            let ok = accept(&mut self.rng, prior + ll);
            if ok {
                self.mu0[j] = value;
                self.commit_gene_scratch(j, ll);
            }
            self.window.mu0[j].record(ok);
            self.total.mu0[j].record(ok);
        }
    }

    // Step (c).

    /// Scores a shift of `alpha_k` by `delta`; fills all scratch entries.
    fn alpha_likelihood_delta(&mut self, k: usize, delta: f64) -> f64 {
        let comps = self.inputs.data.comps();
        let n = self.n;
        let shift: Vec<f64> = (0..n).map(|i| delta * comps.get(i, k)).collect();
        let factor: Vec<f64> = shift.iter().map(|s| s.exp()).collect();
        let mut total = 0.0;
        for j in 0..self.p {
            let mut acc = 0.0;
            let base = j * n;
            for i in 0..n {
                let e = base + i;
                let m = self.m[e] * factor[i];
                let lmp = (m + self.phi).ln();
                self.scratch_lmp[e] = lmp;
                if self.active[e] {
                    let y = self.y[e] as f64;
                    acc += y * shift[i] - (y + self.phi) * (lmp - self.lmp[e]);
                }
            }
            self.gene_delta[j] = acc;
            total += acc;
        }
        total
    }

    /// Log acceptance ratio for moving `alpha_k` to `value`.
    pub fn log_ratio_alpha(&mut self, k: usize, value: f64) -> f64 {
        let cur = self.alpha[k];
        let prior = -(value * value - cur * cur) / (2.0 * self.hp.sigma_alpha_sq);
        prior + self.alpha_likelihood_delta(k, value - cur)
    }

    pub fn step_alpha(&mut self) {
        let comps = self.inputs.data.comps();
        for k in 0..self.k {
            let tau = self.scales.alpha[k].sqrt();
            let cur = self.alpha[k];
            let value = cur + tau * self.rng.sample::<f64, _>(StandardNormal);
            let ratio = self.log_ratio_alpha(k, value);
            let ok = accept(&mut self.rng, ratio);
            if ok {
                let delta = value - cur;
                self.alpha[k] = value;
                for i in 0..self.n {
                    self.offset[i] += delta * comps.get(i, k);
                }
                let factor: Vec<f64> = (0..self.n).map(|i| (delta * comps.get(i, k)).exp()).collect();
                for j in 0..self.p {
                    let base = j * self.n;
                    for (i, f) in factor.iter().enumerate() {
                        self.m[base + i] *= f;
                    }
                    self.gene_ll[j] += self.gene_delta[j];
                }
                std::mem::swap(&mut self.lmp, &mut self.scratch_lmp);
            }
            self.window.alpha[k].record(ok);
            self.total.alpha[k].record(ok);
        }
    }

    // Step (d).

    /// Log acceptance ratio, without the proposal correction, for moving
    /// `phi` to `value`. Fills all scratch entries and per-gene deltas.
    fn phi_target_delta(&mut self, value: f64) -> f64 {
        let cur = self.phi;
        let mut total = 0.0;
        for j in 0..self.p {
            let mut acc = 0.0;
            for e in j * self.n..(j + 1) * self.n {
                let lmp = (self.m[e] + value).ln();
                self.scratch_lmp[e] = lmp;
                if self.active[e] {
                    let y = self.y[e] as f64;
                    acc += (y + cur) * self.lmp[e] - (y + value) * lmp;
                }
            }
            self.gene_delta[j] = acc;
            total += acc;
        }
        total += self.n_active as f64 * (value * value.ln() - cur * cur.ln());
        total += self.g_of(value) - self.g_phi;
        total + (self.hp.a_phi - 1.0) * (value.ln() - cur.ln()) - self.hp.b_phi * (value - cur)
    }

    /// Full log acceptance ratio for moving `phi` to `value` under the
    /// current proposal scale.
    pub fn log_ratio_phi(&mut self, value: f64) -> f64 {
        let tau = self.scales.phi.sqrt();
        self.phi_target_delta(value) + phi_proposal_log_correction(self.phi, value, tau)
    }

    pub fn step_phi(&mut self) {
        let tau = self.scales.phi.sqrt();
        let value = truncated_normal(&mut self.rng, self.phi, tau, 0.0, f64::INFINITY);
        let ok = if value > 0.0 {
            let ratio = self.log_ratio_phi(value);
            accept(&mut self.rng, ratio)
        } else {
            false
        };
        if ok {
            for j in 0..self.p {
                self.gene_ll[j] += self.gene_delta[j];
            }
            std::mem::swap(&mut self.lmp, &mut self.scratch_lmp);
            self.phi = value;
            self.g_phi = self.g_of(value);
        }
        self.window.phi.record(ok);
        self.total.phi.record(ok);
    }

    // Step (e).

    /// Scores new hard coefficients for gene `j`; fills the gene's scratch.
    fn gene_beta_delta(&mut self, j: usize, b1: f64, b2: f64) -> f64 {
        let d = self.inputs.design;
        let (k1, k2) = (d.column(0), d.column(1));
        let (db1, db2) = (b1 - self.beta[j], b2 - self.beta[self.p + j]);
        let base = j * self.n;
        let mut out = 0.0;
        for i in 0..self.n {
            let e = base + i;
            let shift = db1 * k1[i] + db2 * k2[i];
            let m = self.m[e] * shift.exp();
            let lmp = (m + self.phi).ln();
            self.scratch_m[e] = m;
            self.scratch_lmp[e] = lmp;
            if self.active[e] {
                let y = self.y[e] as f64;
                out += y * shift - (y + self.phi) * (lmp - self.lmp[e]);
            }
        }
        out
    }

    /// Gradient of the smoothed log-likelihood for the genes of component
    /// `c`, ordered as (dimension 1 genes, dimension 2 genes).
    fn component_gradient(&self, c: usize) -> Vec<f64> {
        let genes = &self.inputs.data.network().components()[c];
        let size = genes.len();
        let mut grad = vec![0.0; 2 * size];
        let d = self.inputs.design;
        let (k1, k2) = (d.column(0), d.column(1));
        let eps = self.hp.smooth_epsilon;
        for (a, &j) in genes.iter().enumerate() {
            let mut parts = [(0.0, 0.0); 2];
            for (dim, part) in parts.iter_mut().enumerate() {
                let idx = dim * self.p + j;
                let g = self.gamma[idx];
                let (s, ds) = smooth_indicator(g, self.lambda * self.rho[idx], eps);
                *part = (g * s, s + g * ds);
            }
            let (bs1, bs2) = (parts[0].0, parts[1].0);
            let (db1, db2) = (bs1 - self.beta[j], bs2 - self.beta[self.p + j]);
            let base = j * self.n;
            let (mut s1, mut s2) = (0.0, 0.0);
            for i in 0..self.n {
                let e = base + i;
                if !self.active[e] {
                    continue;
                }
                let ms = self.m[e] * (db1 * k1[i] + db2 * k2[i]).exp();
                let score = self.phi * (self.y[e] as f64 - ms) / (ms + self.phi);
                s1 += score * k1[i];
                s2 += score * k2[i];
            }
            grad[a] = s1 * parts[0].1;
            grad[size + a] = s2 * parts[1].1;
        }
        grad
    }

    /// Gradient of the smoothed log-likelihood with respect to all `2p`
    /// latent coefficients, thresholds held at their current values.
    pub fn grad_gamma(&self) -> Vec<f64> {
        let mut out = vec![0.0; 2 * self.p];
        for (c, genes) in self.inputs.data.network().components().iter().enumerate() {
            let g = self.component_gradient(c);
            for (a, &j) in genes.iter().enumerate() {
                out[j] = g[a];
                out[self.p + j] = g[genes.len() + a];
            }
        }
        out
    }

    /// Log-likelihood with the hard indicator replaced by its arctan
    /// surrogate; [`Self::grad_gamma`] is its exact gradient.
    pub fn smoothed_log_likelihood(&self, gamma: &[f64]) -> f64 {
        let eps = self.hp.smooth_epsilon;
        let mut total = self.n_active as f64 * self.phi * self.phi.ln() + self.g_phi;
        for j in 0..self.p {
            let bs: Vec<f64> = [j, self.p + j]
                .iter()
                .map(|&idx| gamma[idx] * smooth_indicator(gamma[idx], self.lambda * self.rho[idx], eps).0)
                .collect();
            for i in 0..self.n {
                let e = j * self.n + i;
                if self.active[e] {
                    let lm = self.log_mean(i, j, bs[0], bs[1]);
                    let y = self.y[e] as f64;
                    total += y * lm - (y + self.phi) * (lm.exp() + self.phi).ln();
                }
            }
        }
        total
    }

    /// Log acceptance ratio of a proposed latent vector for component `c`
    /// (same ordering as the gradient): the likelihood ratio alone.
    /// Fills scratch for every gene whose hard coefficients change.
    fn component_log_ratio(&mut self, c: usize, proposal: &[f64], changed: &mut Vec<(usize, f64, f64, f64)>) -> f64 {
        let genes = self.inputs.data.network().components()[c].clone();
        let size = genes.len();
        changed.clear();
        let mut total = 0.0;
        for (a, &j) in genes.iter().enumerate() {
            let b1 = self.hard_beta(j, proposal[a], self.lambda);
            let b2 = self.hard_beta(self.p + j, proposal[size + a], self.lambda);
            if b1 != self.beta[j] || b2 != self.beta[self.p + j] {
                let delta = self.gene_beta_delta(j, b1, b2);
                changed.push((j, b1, b2, delta));
                total += delta;
            }
        }
        total
    }

    /// Log acceptance ratio for replacing the latent coefficients of
    /// component `c` by `proposal`.
    pub fn log_ratio_gamma(&mut self, c: usize, proposal: &[f64]) -> f64 {
        let mut changed = Vec::new();
        self.component_log_ratio(c, proposal, &mut changed)
    }

    /// Draws a pCN Langevin proposal for component `c`. The drift is tamed:
    /// its norm under `Q = L + eps I` never exceeds `tau sigma`, one noise
    /// standard deviation along any direction.
    pub fn propose_gamma(&mut self, c: usize) -> Vec<f64> {
        let genes = &self.inputs.data.network().components()[c];
        let size = genes.len();
        let s = self.inputs.laplacian.n_components();
        let grad = self.component_gradient(c);
        let tau_sq = self.scales.gamma[c];
        let a = (1.0 - tau_sq).sqrt();
        let sigma = self.sigma_sq.sqrt();
        let mut drift = Vec::with_capacity(2);
        let mut energy = 0.0;
        for dim in 0..2 {
            let g = &grad[dim * size..(dim + 1) * size];
            let mut u = DVector::from_column_slice(g);
            self.inputs.factors.blocks()[dim * s + c].solve_in_place(&mut u);
            energy += u.iter().zip(g).map(|(x, y)| x * y).sum::<f64>();
            drift.push(u);
        }
        let coef = (1.0 - a) * self.sigma_sq;
        let cap = tau_sq.sqrt() * sigma;
        let norm = coef * energy.max(0.0).sqrt();
        let coef = if norm > cap { coef * cap / norm } else { coef };
        let mut out = vec![0.0; 2 * size];
        for (dim, u) in drift.iter().enumerate() {
            let factor = &self.inputs.factors.blocks()[dim * s + c];
            let mut noise = DVector::from_fn(size, |_, _| self.rng.sample::<f64, _>(StandardNormal));
            factor.color_in_place(&mut noise);
            for (a_idx, &j) in genes.iter().enumerate() {
                let g = self.gamma[dim * self.p + j];
                out[dim * size + a_idx] = a * g + coef * u[a_idx] + tau_sq.sqrt() * sigma * noise[a_idx];
            }
        }
        out
    }

    pub fn step_gamma(&mut self) {
        let s = self.inputs.laplacian.n_components();
        let mut changed = Vec::new();
        for c in 0..s {
            let proposal = self.propose_gamma(c);
            let ratio = self.component_log_ratio(c, &proposal, &mut changed);
            let ok = accept(&mut self.rng, ratio);
            if ok {
                let genes = &self.inputs.data.network().components()[c];
                let size = genes.len();
                for (a, &j) in genes.iter().enumerate() {
                    self.gamma[j] = proposal[a];
                    self.gamma[self.p + j] = proposal[size + a];
                }
                for &(j, b1, b2, delta) in &changed {
                    self.commit_gene_scratch(j, delta);
                    self.beta[j] = b1;
                    self.beta[self.p + j] = b2;
                }
            }
            self.window.gamma[c].record(ok);
            self.total.gamma[c].record(ok);
        }
    }

    /// Recomputes hard coefficients under the current `gamma`, `rho` and
    /// `lambda`, committing the cache for every gene that changes.
    fn sync_thresholds(&mut self) {
        for j in 0..self.p {
            let b1 = self.hard_beta(j, self.gamma[j], self.lambda);
            let b2 = self.hard_beta(self.p + j, self.gamma[self.p + j], self.lambda);
            if b1 != self.beta[j] || b2 != self.beta[self.p + j] {
                let delta = self.gene_beta_delta(j, b1, b2);
                self.commit_gene_scratch(j, delta);
                self.beta[j] = b1;
                self.beta[self.p + j] = b2;
            }
        }
    }

    // Step (f).

    pub fn step_rho(&mut self) {
        update_rho(&self.gamma, self.inputs.data.network().components(), self.p, &mut self.rho);
        self.sync_thresholds();
    }

    // Step (g).

    pub fn step_sigma_gamma(&mut self) {
        let quad = self.inputs.laplacian.quad_form(&self.gamma);
        let shape = self.hp.a_gamma + self.p as f64;
        let scale = self.hp.b_gamma + 0.5 * quad;
        self.sigma_sq = inverse_gamma(&mut self.rng, shape, scale);
    }

    // Step (h).

    fn lambda_likelihood_delta(&mut self, value: f64, changed: &mut Vec<(usize, f64, f64, f64)>) -> f64 {
        changed.clear();
        let mut total = 0.0;
        for j in 0..self.p {
            let b1 = self.hard_beta(j, self.gamma[j], value);
            let b2 = self.hard_beta(self.p + j, self.gamma[self.p + j], value);
            if b1 != self.beta[j] || b2 != self.beta[self.p + j] {
                let delta = self.gene_beta_delta(j, b1, b2);
                changed.push((j, b1, b2, delta));
                total += delta;
            }
        }
        total
    }

    /// Log acceptance ratio for moving `lambda` to `value` under the current
    /// proposal scale.
    pub fn log_ratio_lambda(&mut self, value: f64) -> f64 {
        let mut changed = Vec::new();
        let tau = self.scales.lambda.sqrt();
        self.lambda_likelihood_delta(value, &mut changed)
            + lambda_proposal_log_correction(self.lambda, value, tau, self.inputs.lambda_l, self.inputs.lambda_u)
    }

    pub fn step_lambda(&mut self) {
        let tau = self.scales.lambda.sqrt();
        let (lo, hi) = (self.inputs.lambda_l, self.inputs.lambda_u);
        let value = truncated_normal(&mut self.rng, self.lambda, tau, lo, hi);
        let mut changed = Vec::new();
        let ratio = self.lambda_likelihood_delta(value, &mut changed)
            + lambda_proposal_log_correction(self.lambda, value, tau, lo, hi);
        let ok = accept(&mut self.rng, ratio);
        if ok {
            self.lambda = value;
            for &(j, b1, b2, delta) in &changed {
                self.commit_gene_scratch(j, delta);
                self.beta[j] = b1;
                self.beta[self.p + j] = b2;
            }
        }
        self.window.lambda.record(ok);
        self.total.lambda.record(ok);
    }

    /// One full sweep of the enabled steps.
    pub fn sweep(&mut self, steps: &StepSet) {
        if steps.dropout {
            self.step_dropouts();
        }
        if steps.mu0 {
            self.step_mu0();
        }
        if steps.alpha {
            self.step_alpha();
        }
        if steps.phi {
            self.step_phi();
        }
        if steps.gamma {
            self.step_gamma();
        }
        if steps.rho {
            self.step_rho();
        }
        if steps.sigma {
            self.step_sigma_gamma();
        }
        if steps.lambda {
            self.step_lambda();
        }
    }

    /// Applies one adaptation round from the acceptance counts collected
    /// since the previous round, then clears them.
    fn adapt(&mut self, round: usize) {
        let target = self.target;
        let w = std::mem::replace(&mut self.window, Counters::new(self.p, self.k, self.scales.gamma.len()));
        for (v, c) in self.scales.mu0.iter_mut().zip(&w.mu0) {
            if c.proposed > 0 {
                *v = adapt_log_variance(*v, c.rate(), target, round);
            }
        }
        for (v, c) in self.scales.alpha.iter_mut().zip(&w.alpha) {
            if c.proposed > 0 {
                *v = adapt_log_variance(*v, c.rate(), target, round);
            }
        }
        if w.phi.proposed > 0 {
            self.scales.phi = adapt_log_variance(self.scales.phi, w.phi.rate(), target, round);
        }
        for (v, c) in self.scales.gamma.iter_mut().zip(&w.gamma) {
            if c.proposed > 0 {
                *v = adapt_log_variance(*v, c.rate(), target, round).clamp(TAU_GAMMA_SQ_MIN, TAU_GAMMA_SQ_MAX);
            }
        }
        if w.lambda.proposed > 0 {
            self.scales.lambda = adapt_log_variance(self.scales.lambda, w.lambda.rate(), target, round);
        }
    }

    /// Runs a full chain.
    pub fn run(mut self, cfg: &ChainConfig) -> Result<ChainTrace, SamplerError> {
        cfg.validate()?;
        let data = self.inputs.data;
        let mut trace = ChainTrace {
            gamma: Vec::with_capacity(cfg.retained()),
            included: Vec::with_capacity(cfg.retained()),
            lambda: Vec::new(),
            sigma_gamma_sq: Vec::new(),
            mu0: Vec::new(),
            alpha: Vec::new(),
            phi: Vec::new(),
            log_likelihood: Vec::new(),
            dropout_mean: (0..self.p).map(|j| vec![0.0; data.zero_spots(j).len()]).collect(),
            acceptance: AcceptanceRates::default(),
            sweep_log_likelihood: Vec::with_capacity(cfg.iterations),
        };
        for sweep in 1..=cfg.iterations {
            if sweep == cfg.burn_in + 1 {
                self.total = Counters::new(self.p, self.k, self.scales.gamma.len());
            }
            self.sweep(&cfg.steps);
            if sweep <= cfg.burn_in && sweep % cfg.adapt_window == 0 {
                self.adapt(sweep / cfg.adapt_window);
            }
            if sweep % REFRESH_EVERY == 0 {
                self.refresh();
            }
            let ll = self.log_likelihood();
            if !ll.is_finite() {
                return Err(SamplerError::NonFinite { sweep, what: "log-likelihood" });
            }
            trace.sweep_log_likelihood.push(ll);
            if cfg.keeps(sweep) {
                trace.gamma.push(self.gamma.clone());
                trace.included.push((0..2 * self.p).map(|idx| self.included_at(idx, self.lambda)).collect());
                trace.lambda.push(self.lambda);
                trace.sigma_gamma_sq.push(self.sigma_sq);
                trace.mu0.push(self.mu0.clone());
                trace.alpha.push(self.alpha.clone());
                trace.phi.push(self.phi);
                trace.log_likelihood.push(ll);
                for (j, acc) in trace.dropout_mean.iter_mut().enumerate() {
                    for (slot, &i) in acc.iter_mut().zip(data.zero_spots(j)) {
                        if !self.active[j * self.n + i as usize] {
                            *slot += 1.0;
                        }
                    }
                }
            }
        }
        let kept = trace.len().max(1) as f64;
        for acc in &mut trace.dropout_mean {
            acc.iter_mut().for_each(|v| *v /= kept);
        }
        trace.acceptance = self.total.rates();
        Ok(trace)
    }
}

fn check_len(what: &'static str, got: usize, want: usize) -> Result<(), SamplerError> {
    if got == want {
        Ok(())
    } else {
        Err(SamplerError::Model(ModelError::DimensionMismatch {
            what,
            left: got,
            right: want,
        }))
    }
}

/// `rho_j = (max_{l in V_s} |gamma_l|)^{-1/2}` per component and dimension.
pub fn update_rho(gamma: &[f64], components: &[Vec<usize>], p: usize, rho: &mut [f64]) {
    for comp in components {
        for dim in 0..2 {
            let mx = comp
                .iter()
                .map(|&j| gamma[dim * p + j].abs().max(RHO_FLOOR))
                .fold(RHO_FLOOR, f64::max);
            let r = 1.0 / mx.sqrt();
            for &j in comp {
                rho[dim * p + j] = r;
            }
        }
    }
}

/// Starting state: `gamma` at the rough estimate, `lambda` at half its upper
/// bound, unit prior scale, no dropouts, `phi = 10`, and baselines and
/// composition effects at the Poisson posterior mode given the initial
/// thresholded effects.
pub fn initial_state(inputs: &KernelInputs<'_>, hp: &HyperParams) -> ModelState {
    let data = inputs.data;
    let p = data.n_genes();
    let gamma = inputs.laplacian.tilde_beta().to_vec();
    let mut rho = vec![1.0; 2 * p];
    update_rho(&gamma, data.network().components(), p, &mut rho);
    let lambda = (0.5 * inputs.lambda_u).max(inputs.lambda_l);
    let beta: Vec<f64> = (0..2 * p)
        .map(|idx| if gamma[idx].abs() > lambda * rho[idx] { gamma[idx] } else { 0.0 })
        .collect();
    let (mu0, alpha) = poisson_mode(data, inputs.design, &beta, hp);
    ModelState {
        gamma,
        rho,
        lambda,
        sigma_gamma_sq: 1.0,
        mu0,
        alpha,
        phi: 10.0,
        dropout: (0..p).map(|j| vec![false; data.zero_spots(j).len()]).collect(),
    }
}

/// Joint Newton iterations for the Poisson log-posterior in `(mu0, alpha)`
/// with the spatial effects held fixed. The `mu0` block of the Hessian is
/// diagonal, so each step solves a `K x K` Schur system.
fn poisson_mode(data: &ValidatedDataset, design: &DesignMatrix, beta: &[f64], hp: &HyperParams) -> (Vec<f64>, Vec<f64>) {
    use nalgebra::DMatrix;
    let n = data.n_spots();
    let p = data.n_genes();
    let k = data.n_types();
    let comps = data.comps();
    let ln_c: Vec<f64> = data.size_factors().iter().map(|c| c.ln()).collect();
    let base: Vec<f64> = (0..p)
        .flat_map(|j| {
            let ln_c = &ln_c;
            (0..n).map(move |i| beta[j] * design.get(i, 0) + beta[p + j] * design.get(i, 1) + ln_c[i])
        })
        .collect();
    let mut y_spot = vec![0.0; n];
    let mut y_gene = vec![0.0; p];
    for (i, j, v) in data.counts().iter_nonzeros() {
        y_spot[i] += v as f64;
        y_gene[j] += v as f64;
    }
    let mean_count: Vec<f64> = y_gene.iter().map(|s| s / n as f64).collect();
    let mut mu0: Vec<f64> = mean_count.iter().map(|m| m.ln_1p()).collect();
    let mut alpha = vec![0.0; k];

    let objective = |mu0: &[f64], alpha: &[f64]| -> f64 {
        let off: Vec<f64> = (0..n).map(|i| comps.row(i).iter().zip(alpha).map(|(w, a)| w * a).sum()).collect();
        let mut f = 0.0;
        for j in 0..p {
            for i in 0..n {
                f -= (mu0[j] + base[j * n + i] + off[i]).exp();
            }
            f += y_gene[j] * mu0[j] - mu0[j] * mu0[j] / (2.0 * hp.sigma0_sq);
        }
        for i in 0..n {
            f += y_spot[i] * off[i];
        }
        f - alpha.iter().map(|a| a * a).sum::<f64>() / (2.0 * hp.sigma_alpha_sq)
    };

    let mut current = objective(&mu0, &alpha);
    for _ in 0..50 {
        let off: Vec<f64> = (0..n).map(|i| comps.row(i).iter().zip(&alpha).map(|(w, a)| w * a).sum()).collect();
        let mut m_spot = vec![0.0; n];
        let mut d = vec![0.0; p];
        let mut g_mu = vec![0.0; p];
        let mut b = DMatrix::<f64>::zeros(p, k);
        for j in 0..p {
            let mut tot = 0.0;
            for i in 0..n {
                let m = (mu0[j] + base[j * n + i] + off[i]).exp();
                tot += m;
                m_spot[i] += m;
                for kk in 0..k {
                    b[(j, kk)] += comps.get(i, kk) * m;
                }
            }
            d[j] = tot + 1.0 / hp.sigma0_sq;
            g_mu[j] = y_gene[j] - tot - mu0[j] / hp.sigma0_sq;
        }
        let mut c = DMatrix::<f64>::zeros(k, k);
        let mut g_a = DVector::<f64>::zeros(k);
        for i in 0..n {
            let w = comps.row(i);
            for a in 0..k {
                g_a[a] += w[a] * (y_spot[i] - m_spot[i]);
                for bb in 0..k {
                    c[(a, bb)] += w[a] * w[bb] * m_spot[i];
                }
            }
        }
        for a in 0..k {
            g_a[a] -= alpha[a] / hp.sigma_alpha_sq;
            c[(a, a)] += 1.0 / hp.sigma_alpha_sq;
        }
        // Schur complement of the diagonal mu0 block.
        let mut schur = c.clone();
        let mut rhs = g_a.clone();
        for j in 0..p {
            for a in 0..k {
                rhs[a] -= b[(j, a)] * g_mu[j] / d[j];
                for bb in 0..k {
                    schur[(a, bb)] -= b[(j, a)] * b[(j, bb)] / d[j];
                }
            }
        }
        let step_alpha = match schur.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => break,
        };
        let step_mu: Vec<f64> = (0..p)
            .map(|j| (g_mu[j] - (0..k).map(|a| b[(j, a)] * step_alpha[a]).sum::<f64>()) / d[j])
            .collect();
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let cand_mu: Vec<f64> = mu0.iter().zip(&step_mu).map(|(m, s)| m + t * s).collect();
            let cand_a: Vec<f64> = alpha.iter().zip(step_alpha.iter()).map(|(a, s)| a + t * s).collect();
            let f = objective(&cand_mu, &cand_a);
            if f.is_finite() && f >= current {
                let gain = f - current;
                mu0 = cand_mu;
                alpha = cand_a;
                current = f;
                improved = gain > 1e-10 * (1.0 + current.abs());
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (mu0, alpha)
}
