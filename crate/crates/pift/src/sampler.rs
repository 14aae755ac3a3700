//! Stochastic-gradient Langevin dynamics and Hamiltonian Monte Carlo over
//! field coefficients and physical parameters.
//!
//! Three samplers share one update convention:
//!
//! * **Prior SGLD** — `θ_{t+1} = θ_t − ε_t ĝ_t + η_t`, where `ĝ_t` is the
//!   single-batch spatial estimate of `∇_θ[β U]` and `η_t ~ N(0, ε_t I)`
//!   under the default noise convention (`ε_t = α₀/t^{α₁}`, Robbins-Monro
//!   for `α₁ ∈ (0.5, 1]`).
//! * **Posterior SGLD** — adds the mini-batched data gradient, rescaled by
//!   `s/b`.
//! * **Nested SGLD** — an outer chain over physical parameters λ whose
//!   drift is the unbiased marginal-posterior gradient
//!   `E_post[∇_λ h] − E_prior[∇_λ h] + ∇_λ(-log p(λ))`, with the two
//!   expectations estimated from persistent warm-started inner chains over
//!   one shared spatial batch per iteration (common random numbers, which
//!   cancel the O(β) spatial magnitude in the difference).
//!
//! Note on the convention: with drift `−ε ĝ` and noise variance `ε`, the
//! continuum limit is `dθ = −∇H dt + dW`, whose invariant density is
//! `exp(−2H)` — a factor-2 sharpening relative to `exp(−H)`. Every
//! closed-form oracle in the test suite targets the implemented dynamics.
//! The alternative reading of the noise scale is available as
//! [`NoiseVariance::SqrtEps`].
//!
//! All samplers are pure functions of their inputs and the RNG stream:
//! fixed seeds give bit-identical chains, and the RNG draw order per step
//! (spatial points, then data indices, then injected noise) is part of that
//! contract.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::basis::FieldBasis;
use crate::energy::{
    apply_lambda, grad_lambda_density, EnergyModel, LambdaEntry, LambdaSpec,
};
use crate::error::{PiftError, Result};
use crate::grid::{SpatialDensity, Uniform};
use crate::inference::{CachedLikelihood, Dataset, InfoHamiltonian, LambdaPriors};

/// Robbins-Monro step size `ε_t = α₀ / t^{α₁}`; `t` is 1-based.
pub fn learning_rate(t: usize, alpha0: f64, alpha1: f64) -> Result<f64> {
    if t == 0 {
        return Err(PiftError::InvalidConfig("step index starts at 1".into()));
    }
    Ok(alpha0 / (t as f64).powf(alpha1))
}

/// How the injected noise scale relates to the step size: `Eps` draws
/// `η ~ N(0, ε_t I)` (the reading under which the printed `N(0, √ε_t)` names
/// a standard deviation), `SqrtEps` draws `η ~ N(0, √ε_t I)` (the reading
/// under which it names a variance).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseVariance {
    #[default]
    Eps,
    SqrtEps,
}

impl NoiseVariance {
    fn std(self, eps: f64) -> f64 {
        match self {
            NoiseVariance::Eps => eps.sqrt(),
            NoiseVariance::SqrtEps => eps.sqrt().sqrt(),
        }
    }
}

/// Configuration of a single SGLD chain.
#[derive(Debug, Clone)]
pub struct SgldConfig {
    /// Base step size α₀.
    pub alpha0: f64,
    /// Decay exponent α₁ ∈ (0.5, 1].
    pub alpha1: f64,
    /// Spatial batch size n (points per step for the energy gradient).
    pub n_spatial: usize,
    /// Data batch size b (observations per step, drawn with replacement).
    pub data_batch: usize,
    pub steps: usize,
    pub burn_in: usize,
    /// Keep every `thin`-th post-burn-in state.
    pub thin: usize,
    pub noise: NoiseVariance,
    /// Recorded in the chain metadata; the RNG itself is passed separately.
    pub seed: u64,
}

impl SgldConfig {
    /// Defaults per the reference hyper-parameters: α₁ = 0.51, n = b = 1,
    /// burn-in 10% of steps, thinning chosen so at most 10⁵ rows are kept.
    pub fn new(alpha0: f64, steps: usize, seed: u64) -> Self {
        let burn_in = steps / 10;
        let kept = steps - burn_in;
        let thin = (kept / 100_000).max(1);
        SgldConfig {
            alpha0,
            alpha1: 0.51,
            n_spatial: 1,
            data_batch: 1,
            steps,
            burn_in,
            thin,
            noise: NoiseVariance::Eps,
            seed,
        }
    }

    /// The always-used prior base step size `α₀ = 0.1/β`.
    pub fn prior_alpha0(beta: f64) -> f64 {
        0.1 / beta
    }

    /// The posterior base step size `α₀ = α̂₀ / max{β, σ⁻²}`.
    pub fn posterior_alpha0(alpha0_hat: f64, beta: f64, noise_std: f64) -> f64 {
        alpha0_hat / beta.max(noise_std.powi(-2))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha0 > 0.0) || !self.alpha0.is_finite() {
            return Err(PiftError::InvalidConfig("α₀ must be positive and finite".into()));
        }
        if !(self.alpha1 > 0.5 && self.alpha1 <= 1.0) {
            return Err(PiftError::InvalidConfig(format!(
                "α₁ = {} violates the Robbins-Monro range (0.5, 1]",
                self.alpha1
            )));
        }
        if self.n_spatial == 0 {
            return Err(PiftError::InvalidConfig("spatial batch size must be ≥ 1".into()));
        }
        if self.data_batch == 0 {
            return Err(PiftError::InvalidConfig("data batch size must be ≥ 1".into()));
        }
        if self.steps == 0 {
            return Err(PiftError::InvalidConfig("step count must be ≥ 1".into()));
        }
        if self.burn_in >= self.steps {
            return Err(PiftError::InvalidConfig("burn-in must be < steps".into()));
        }
        if self.thin == 0 {
            return Err(PiftError::InvalidConfig("thinning must be ≥ 1".into()));
        }
        Ok(())
    }

    /// Number of retained rows: `⌊(steps − burn_in)/thin⌋`.
    pub fn kept_rows(&self) -> usize {
        (self.steps - self.burn_in) / self.thin
    }
}

/// Acceptance and stability counters accumulated while a chain runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ChainStats {
    pub proposed: usize,
    pub accepted: usize,
    pub divergences: usize,
}

impl ChainStats {
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            1.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// A matrix of retained samples (row-major) with column names and run
/// metadata. Serializes to CSV with a header row; float formatting is the
/// shortest round-trip representation, so identical runs produce identical
/// bytes.
#[derive(Debug, Clone)]
pub struct Chain {
    names: Vec<String>,
    dim: usize,
    data: Vec<f64>,
    pub stats: ChainStats,
    pub seed: u64,
    /// Human-readable schedule description (step rule, hyper-parameters).
    pub schedule: String,
}

impl Chain {
    pub fn new(names: Vec<String>, seed: u64, schedule: String) -> Self {
        let dim = names.len();
        Chain { names, dim, data: Vec::new(), stats: ChainStats::default(), seed, schedule }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 { 0 } else { self.data.len() / self.dim }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn push(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.dim, "chain row dimension mismatch");
        self.data.extend_from_slice(row);
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        assert!(j < self.dim, "column index out of range");
        self.data.iter().skip(j).step_by(self.dim).copied().collect()
    }

    pub fn column_mean(&self, j: usize) -> f64 {
        let col = self.column(j);
        col.iter().sum::<f64>() / col.len().max(1) as f64
    }

    /// Append the rows of `other` (same column layout required).
    pub fn extend(&mut self, other: &Chain) -> Result<()> {
        if other.names != self.names {
            return Err(PiftError::InvalidConfig("chain column layouts differ".into()));
        }
        self.data.extend_from_slice(&other.data);
        self.stats.proposed += other.stats.proposed;
        self.stats.accepted += other.stats.accepted;
        self.stats.divergences += other.stats.divergences;
        Ok(())
    }

    /// CSV serialization: comma-separated, `\n` line endings, header row,
    /// shortest round-trip float formatting. Byte-stable across runs.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.names.join(","));
        out.push('\n');
        for row in self.rows() {
            for (j, v) in row.iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

fn theta_names(dim: usize) -> Vec<String> {
    (0..dim).map(|j| format!("theta_{j}")).collect()
}

/// Coordinate names for a λ layout.
pub fn lambda_names(spec: &LambdaSpec) -> Vec<String> {
    spec.entries
        .iter()
        .map(|e| match e {
            LambdaEntry::LogBeta => "log_beta".to_string(),
            LambdaEntry::LogConductivity => "log_conductivity".to_string(),
            LambdaEntry::LogKappa => "log_kappa".to_string(),
            LambdaEntry::SourceCoeff(m) => format!("source_{m}"),
        })
        .collect()
}

fn check_finite(theta: &[f64], step: usize) -> Result<()> {
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(PiftError::NonFinite { step });
    }
    Ok(())
}

/// One SGLD chain over field coefficients. `data = None` (or an empty
/// dataset) gives the prior chain of Algorithm-1 form; otherwise the
/// posterior chain with `s/b`-rescaled data mini-batches. The two cases
/// share this code path, so the `s = 0` posterior is *identical* to the
/// prior run, RNG stream included.
pub fn sgld_run<B: FieldBasis, Q: SpatialDensity, R: Rng + ?Sized>(
    model: &EnergyModel,
    basis: &B,
    beta: f64,
    data: Option<&Dataset>,
    q: &Q,
    config: &SgldConfig,
    theta0: &[f64],
    rng: &mut R,
) -> Result<Chain> {
    config.validate()?;
    basis.check_theta(theta0)?;
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(PiftError::InvalidConfig("β must be positive and finite".into()));
    }
    let data = match data {
        Some(d) if !d.is_empty() => {
            if config.data_batch > d.len() {
                return Err(PiftError::InvalidConfig(format!(
                    "data batch {} exceeds dataset size {}",
                    config.data_batch,
                    d.len()
                )));
            }
            Some((d, CachedLikelihood::new(basis, d)?))
        }
        _ => None,
    };

    let dim = basis.dim();
    let mut theta = theta0.to_vec();
    let mut grad = vec![0.0; dim];
    let mut point_grad = vec![0.0; dim];
    let mut indices = Vec::with_capacity(config.data_batch);
    let schedule = format!(
        "sgld alpha0={} alpha1={} n={} b={} noise={:?}",
        config.alpha0, config.alpha1, config.n_spatial, config.data_batch, config.noise
    );
    let mut chain = Chain::new(theta_names(dim), config.seed, schedule);
    chain.stats.proposed = config.steps;
    chain.stats.accepted = config.steps;

    for t in 1..=config.steps {
        let eps = learning_rate(t, config.alpha0, config.alpha1)?;

        // Spatial single-batch estimate of ∇_θ[βU].
        grad.iter_mut().for_each(|g| *g = 0.0);
        for _ in 0..config.n_spatial {
            let x = q.sample(rng);
            let dens = q.density(&x);
            if dens <= 0.0 {
                return Err(PiftError::InvalidConfig(format!(
                    "sampling density vanished at {x:?}"
                )));
            }
            model.grad_theta_density(basis, &theta, &x, &mut point_grad)?;
            let scale = beta / (dens * config.n_spatial as f64);
            for (g, p) in grad.iter_mut().zip(&point_grad) {
                *g += scale * p;
            }
        }

        // Mini-batched data gradient, rescaled by s/b inside the cache.
        if let Some((d, cache)) = &data {
            indices.clear();
            for _ in 0..config.data_batch {
                indices.push(rng.gen_range(0..d.len()));
            }
            cache.add_grad_subset(&theta, &indices, &mut grad)?;
        }

        // Drift then injected noise.
        let std = config.noise.std(eps);
        for (th, g) in theta.iter_mut().zip(&grad) {
            let z: f64 = StandardNormal.sample(rng);
            *th += -eps * g + std * z;
        }
        if check_finite(&theta, t).is_err() {
            return Err(PiftError::SamplerAborted { step: t, partial: Box::new(chain) });
        }

        if t > config.burn_in && (t - config.burn_in) % config.thin == 0 {
            chain.push(&theta);
        }
    }
    Ok(chain)
}

/// Prior chain: uniform spatial sampling over the basis domain, no data.
pub fn sgld_prior<B: FieldBasis, R: Rng + ?Sized>(
    model: &EnergyModel,
    basis: &B,
    beta: f64,
    config: &SgldConfig,
    theta0: &[f64],
    rng: &mut R,
) -> Result<Chain> {
    let q = Uniform(basis.domain());
    sgld_run(model, basis, beta, None, &q, config, theta0, rng)
}

/// Posterior chain: uniform spatial sampling plus data mini-batches.
pub fn sgld_posterior<B: FieldBasis, R: Rng + ?Sized>(
    model: &EnergyModel,
    basis: &B,
    beta: f64,
    data: &Dataset,
    config: &SgldConfig,
    theta0: &[f64],
    rng: &mut R,
) -> Result<Chain> {
    let q = Uniform(basis.domain());
    sgld_run(model, basis, beta, Some(data), &q, config, theta0, rng)
}

/// Configuration of the nested (inverse-problem) sampler.
#[derive(Debug, Clone)]
pub struct InverseConfig {
    /// Outer-chain base step size α₀ and decay α₁.
    pub alpha0: f64,
    pub alpha1: f64,
    /// Inner prior-chain steps per outer iteration (T).
    pub inner_prior_steps: usize,
    /// Inner posterior-chain steps per outer iteration (T̃).
    pub inner_posterior_steps: usize,
    /// Inner states retained per outer iteration (k, k̃): the last ones.
    pub keep_prior: usize,
    pub keep_posterior: usize,
    /// Spatial batch for the bracketed ∇_λh estimate. The batch is shared
    /// between the posterior and prior terms (common random numbers): the
    /// O(β) spatial magnitude common to both cancels, which is what keeps
    /// the outer chain stable at large β. Sharing does not bias the
    /// estimator — each term remains a valid importance-sampling average.
    pub n_spatial: usize,
    /// Inner-chain spatial batch and decay exponent.
    pub inner_n_spatial: usize,
    pub inner_alpha1: f64,
    /// Inner prior base step scale: α₀ = scale/β (reference value 0.1).
    pub prior_alpha0_scale: f64,
    /// Inner posterior base step: α₀ = α̂₀ / max{β, σ⁻²}.
    pub posterior_alpha0_hat: f64,
    /// Inner posterior data batch size.
    pub data_batch: usize,
    /// Outer iterations with λ updates.
    pub maxiter: usize,
    /// Gated outer iterations before the first λ update: the inner chains
    /// advance exactly as in a live iteration while λ stays frozen, and the
    /// outer step-size clock counts them. The first λ update therefore uses
    /// ε = α₀/(warmup+1)^{α₁}; the reference base rates assume this scale,
    /// and restarting the decay at t = 1 after a long warm-up kicks λ out
    /// of its basin within the first few updates.
    pub warmup: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub noise: NoiseVariance,
    pub seed: u64,
}

impl InverseConfig {
    /// Reference defaults: T = 10, T̃ = 1, k = k̃ = 1, shared spatial batch
    /// of 1, α₁ = 0.51 inner and outer, prior scale 0.1, and a warm-up of
    /// 10⁶ gated outer iterations.
    pub fn new(alpha0: f64, posterior_alpha0_hat: f64, maxiter: usize, seed: u64) -> Self {
        let burn_in = maxiter / 10;
        let kept = maxiter - burn_in;
        let thin = (kept / 100_000).max(1);
        InverseConfig {
            alpha0,
            alpha1: 0.51,
            inner_prior_steps: 10,
            inner_posterior_steps: 1,
            keep_prior: 1,
            keep_posterior: 1,
            n_spatial: 1,
            inner_n_spatial: 1,
            inner_alpha1: 0.51,
            prior_alpha0_scale: 0.1,
            posterior_alpha0_hat,
            data_batch: 1,
            maxiter,
            warmup: 1_000_000,
            burn_in,
            thin,
            noise: NoiseVariance::Eps,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha0 > 0.0) || !(self.prior_alpha0_scale > 0.0) || !(self.posterior_alpha0_hat > 0.0)
        {
            return Err(PiftError::InvalidConfig("step scales must be positive".into()));
        }
        if !(self.alpha1 > 0.5 && self.alpha1 <= 1.0) {
            return Err(PiftError::InvalidConfig(format!(
                "α₁ = {} violates the Robbins-Monro range (0.5, 1]",
                self.alpha1
            )));
        }
        // The inner chains track the moving λ rather than converge on their
        // own, so a constant step size (exponent 0) is also legitimate; only
        // the outer schedule must satisfy the Robbins-Monro range.
        if !(self.inner_alpha1 >= 0.0 && self.inner_alpha1 <= 1.0) {
            return Err(PiftError::InvalidConfig(format!(
                "inner α₁ = {} must lie in [0, 1]",
                self.inner_alpha1
            )));
        }
        if self.inner_prior_steps == 0 || self.inner_posterior_steps == 0 {
            return Err(PiftError::InvalidConfig("inner step counts must be ≥ 1".into()));
        }
        if self.keep_prior == 0
            || self.keep_posterior == 0
            || self.keep_prior > self.inner_prior_steps
            || self.keep_posterior > self.inner_posterior_steps
        {
            return Err(PiftError::InvalidConfig(
                "retained counts must satisfy 1 ≤ k ≤ T and 1 ≤ k̃ ≤ T̃".into(),
            ));
        }
        if self.n_spatial == 0 || self.inner_n_spatial == 0 || self.data_batch == 0 {
            return Err(PiftError::InvalidConfig("batch sizes must be ≥ 1".into()));
        }
        if self.maxiter == 0 {
            return Err(PiftError::InvalidConfig("maxiter must be ≥ 1".into()));
        }
        if self.burn_in >= self.maxiter {
            return Err(PiftError::InvalidConfig("burn-in must be < maxiter".into()));
        }
        if self.thin == 0 {
            return Err(PiftError::InvalidConfig("thinning must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Nested SGLD state: an outer chain over λ with two persistent inner
/// chains over θ (prior and posterior). The inner chains warm-start from
/// their previous states at every outer iteration and keep their own
/// running step-size clocks, so the reference regime T = 10, T̃ = 1 is
/// meaningful.
pub struct NestedSgld<'a, B: FieldBasis, Q: SpatialDensity> {
    template: &'a EnergyModel,
    basis: &'a B,
    beta0: f64,
    data: &'a Dataset,
    likelihood: CachedLikelihood,
    spec: &'a LambdaSpec,
    priors: &'a LambdaPriors,
    q: &'a Q,
    cfg: InverseConfig,
    lambda: Vec<f64>,
    theta_prior: Vec<f64>,
    theta_post: Vec<f64>,
    clock_prior: usize,
    clock_post: usize,
}

impl<'a, B: FieldBasis, Q: SpatialDensity> NestedSgld<'a, B, Q> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        template: &'a EnergyModel,
        basis: &'a B,
        beta0: f64,
        data: &'a Dataset,
        spec: &'a LambdaSpec,
        lambda0: &[f64],
        priors: &'a LambdaPriors,
        q: &'a Q,
        cfg: InverseConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        spec.check(lambda0)?;
        priors.check(lambda0)?;
        if lambda0.iter().any(|v| !v.is_finite()) {
            return Err(PiftError::InvalidConfig("λ₀ must be finite".into()));
        }
        if data.is_empty() {
            return Err(PiftError::Empty { what: "inverse-problem dataset" });
        }
        if cfg.data_batch > data.len() {
            return Err(PiftError::InvalidConfig(format!(
                "data batch {} exceeds dataset size {}",
                cfg.data_batch,
                data.len()
            )));
        }
        // Validate that the λ layout applies to the template at all.
        apply_lambda(template, beta0, spec, lambda0)?;
        let likelihood = CachedLikelihood::new(basis, data)?;
        let dim = basis.dim();
        Ok(NestedSgld {
            template,
            basis,
            beta0,
            data,
            likelihood,
            spec,
            priors,
            q,
            cfg,
            lambda: lambda0.to_vec(),
            theta_prior: vec![0.0; dim],
            theta_post: vec![0.0; dim],
            clock_prior: 0,
            clock_post: 0,
        })
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn set_lambda(&mut self, lambda: &[f64]) -> Result<()> {
        self.spec.check(lambda)?;
        self.lambda = lambda.to_vec();
        Ok(())
    }

    fn current_model(&self) -> Result<(EnergyModel, f64)> {
        apply_lambda(self.template, self.beta0, self.spec, &self.lambda)
    }

    fn inner_alpha0(&self, beta: f64, posterior: bool) -> f64 {
        if posterior {
            SgldConfig::posterior_alpha0(
                self.cfg.posterior_alpha0_hat,
                beta,
                self.data.noise_std(),
            )
        } else {
            self.cfg.prior_alpha0_scale / beta
        }
    }

    /// One inner SGLD step on the selected chain (same update rule and RNG
    /// draw order as [`sgld_run`]).
    fn inner_step<R: Rng + ?Sized>(
        &mut self,
        model: &EnergyModel,
        beta: f64,
        posterior: bool,
        rng: &mut R,
    ) -> Result<()> {
        let clock = if posterior {
            self.clock_post += 1;
            self.clock_post
        } else {
            self.clock_prior += 1;
            self.clock_prior
        };
        let alpha0 = self.inner_alpha0(beta, posterior);
        let eps = learning_rate(clock, alpha0, self.cfg.inner_alpha1)?;
        let dim = self.basis.dim();
        let mut grad = vec![0.0; dim];
        let mut point_grad = vec![0.0; dim];
        {
            let theta = if posterior { &self.theta_post } else { &self.theta_prior };
            for _ in 0..self.cfg.inner_n_spatial {
                let x = self.q.sample(rng);
                let dens = self.q.density(&x);
                if dens <= 0.0 {
                    return Err(PiftError::InvalidConfig(format!(
                        "sampling density vanished at {x:?}"
                    )));
                }
                model.grad_theta_density(self.basis, theta, &x, &mut point_grad)?;
                let scale = beta / (dens * self.cfg.inner_n_spatial as f64);
                for (g, p) in grad.iter_mut().zip(&point_grad) {
                    *g += scale * p;
                }
            }
            if posterior {
                let mut indices = Vec::with_capacity(self.cfg.data_batch);
                for _ in 0..self.cfg.data_batch {
                    indices.push(rng.gen_range(0..self.data.len()));
                }
                self.likelihood.add_grad_subset(theta, &indices, &mut grad)?;
            }
        }
        let std = self.cfg.noise.std(eps);
        let theta =
            if posterior { &mut self.theta_post } else { &mut self.theta_prior };
        for (th, g) in theta.iter_mut().zip(&grad) {
            let z: f64 = StandardNormal.sample(rng);
            *th += -eps * g + std * z;
        }
        check_finite(theta, clock)
    }

    /// Advance both inner chains through `iters` gated outer iterations
    /// (T̃ posterior steps then T prior steps per iteration, the same order
    /// as a live iteration) with λ frozen. [`run`](Self::run) counts these
    /// iterations on the outer step-size clock.
    pub fn warmup<R: Rng + ?Sized>(&mut self, iters: usize, rng: &mut R) -> Result<()> {
        for _ in 0..iters {
            let (model, beta) = self.current_model()?;
            for _ in 0..self.cfg.inner_posterior_steps {
                self.inner_step(&model, beta, true, rng)?;
            }
            for _ in 0..self.cfg.inner_prior_steps {
                self.inner_step(&model, beta, false, rng)?;
            }
        }
        Ok(())
    }

    /// Advance the inner chains (T̃ posterior steps, then T prior steps) and
    /// return the bracketed marginal-gradient estimate at the current λ:
    /// posterior average of ∇_λh minus prior average plus the λ-prior
    /// gradient. Retained states are the last k̃ (k) visited. One spatial
    /// batch is drawn per call and shared by the two averages (common
    /// random numbers); each term stays an unbiased importance-sampling
    /// average, while the O(β) spatial magnitude common to both cancels in
    /// the difference — without the coupling, the bracket's noise scales
    /// with β and the outer chain diverges at large β under the reference
    /// step sizes.
    pub fn estimate_grad<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Vec<f64>> {
        let (model, beta) = self.current_model()?;

        let mut post_states: Vec<Vec<f64>> =
            Vec::with_capacity(self.cfg.keep_posterior);
        let keep_from = self.cfg.inner_posterior_steps - self.cfg.keep_posterior;
        for s in 0..self.cfg.inner_posterior_steps {
            self.inner_step(&model, beta, true, rng)?;
            if s >= keep_from {
                post_states.push(self.theta_post.clone());
            }
        }
        let mut prior_states: Vec<Vec<f64>> = Vec::with_capacity(self.cfg.keep_prior);
        let keep_from = self.cfg.inner_prior_steps - self.cfg.keep_prior;
        for s in 0..self.cfg.inner_prior_steps {
            self.inner_step(&model, beta, false, rng)?;
            if s >= keep_from {
                prior_states.push(self.theta_prior.clone());
            }
        }

        let mut bracket = self.priors.grad(&self.lambda)?;
        for _ in 0..self.cfg.n_spatial {
            let x = self.q.sample(rng);
            let dens = self.q.density(&x);
            if dens <= 0.0 {
                return Err(PiftError::InvalidConfig(format!(
                    "sampling density vanished at {x:?}"
                )));
            }
            let w = 1.0 / (dens * self.cfg.n_spatial as f64);
            for theta in &post_states {
                let g =
                    grad_lambda_density(&model, self.basis, theta, &x, beta, self.spec)?;
                for (b, v) in bracket.iter_mut().zip(&g) {
                    *b += w * v / post_states.len() as f64;
                }
            }
            for theta in &prior_states {
                let g =
                    grad_lambda_density(&model, self.basis, theta, &x, beta, self.spec)?;
                for (b, v) in bracket.iter_mut().zip(&g) {
                    *b -= w * v / prior_states.len() as f64;
                }
            }
        }
        Ok(bracket)
    }

    fn run_into<R: Rng + ?Sized>(&mut self, chain: &mut Chain, rng: &mut R) -> Result<()> {
        self.warmup(self.cfg.warmup, rng)?;
        for u in 1..=self.cfg.maxiter {
            let grad = self.estimate_grad(rng)?;
            // The outer Robbins-Monro clock continues from the warm-up.
            let t = self.cfg.warmup + u;
            let eps = learning_rate(t, self.cfg.alpha0, self.cfg.alpha1)?;
            let std = self.cfg.noise.std(eps);
            for (l, g) in self.lambda.iter_mut().zip(&grad) {
                let z: f64 = StandardNormal.sample(rng);
                *l += -eps * g + std * z;
            }
            check_finite(&self.lambda, t)?;
            if u > self.cfg.burn_in && (u - self.cfg.burn_in) % self.cfg.thin == 0 {
                let row = self.lambda.clone();
                chain.push(&row);
            }
        }
        Ok(())
    }

    /// Full outer run: `warmup` gated iterations, then `maxiter` updates
    /// `λ_{t+1} = λ_t − ε_t·(gradient estimate) + η_t` with
    /// `ε_t = α₀/t^{α₁}` on the continuing clock `t = warmup + update index`.
    /// A non-finite state (inner or outer) aborts with the λ rows retained
    /// so far attached to the error.
    pub fn run<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Chain> {
        let schedule = format!(
            "nested-sgld alpha0={} alpha1={} T={} T~={} k={} k~={} warmup={} noise={:?}",
            self.cfg.alpha0,
            self.cfg.alpha1,
            self.cfg.inner_prior_steps,
            self.cfg.inner_posterior_steps,
            self.cfg.keep_prior,
            self.cfg.keep_posterior,
            self.cfg.warmup,
            self.cfg.noise
        );
        let mut chain = Chain::new(lambda_names(self.spec), self.cfg.seed, schedule);
        chain.stats.proposed = self.cfg.maxiter;
        chain.stats.accepted = self.cfg.maxiter;
        match self.run_into(&mut chain, rng) {
            Ok(()) => Ok(chain),
            Err(PiftError::NonFinite { step }) => {
                Err(PiftError::SamplerAborted { step, partial: Box::new(chain) })
            }
            Err(e) => Err(e),
        }
    }
}

/// Convenience wrapper: build a [`NestedSgld`] with uniform spatial
/// sampling over the basis domain and run it.
#[allow(clippy::too_many_arguments)]
pub fn sgld_inverse<B: FieldBasis, R: Rng + ?Sized>(
    template: &EnergyModel,
    basis: &B,
    beta0: f64,
    data: &Dataset,
    spec: &LambdaSpec,
    lambda0: &[f64],
    priors: &LambdaPriors,
    config: &InverseConfig,
    rng: &mut R,
) -> Result<Chain> {
    let q = Uniform(basis.domain());
    let mut nested = NestedSgld::new(
        template, basis, beta0, data, spec, lambda0, priors, &q, config.clone(),
    )?;
    nested.run(rng)
}

/// A negative-log-density with gradient, the interface HMC samples from.
pub trait HmcTarget {
    fn dim(&self) -> usize;
    /// `(H(θ), ∇H(θ))`.
    fn value_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)>;
}

impl<B: FieldBasis> HmcTarget for InfoHamiltonian<'_, B> {
    fn dim(&self) -> usize {
        InfoHamiltonian::dim(self)
    }

    fn value_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        InfoHamiltonian::value_grad(self, theta)
    }
}

/// Configuration for leapfrog HMC.
#[derive(Debug, Clone)]
pub struct HmcConfig {
    pub step_size: f64,
    pub leapfrog_steps: usize,
    /// Per-coordinate mass; `None` = identity.
    pub mass: Option<Vec<f64>>,
    pub steps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

impl HmcConfig {
    pub fn new(step_size: f64, leapfrog_steps: usize, steps: usize, seed: u64) -> Self {
        HmcConfig {
            step_size,
            leapfrog_steps,
            mass: None,
            steps,
            burn_in: steps / 10,
            thin: 1,
            seed,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.step_size > 0.0) {
            return Err(PiftError::InvalidConfig("step size must be positive".into()));
        }
        if self.leapfrog_steps == 0 {
            return Err(PiftError::InvalidConfig("need ≥ 1 leapfrog step".into()));
        }
        if let Some(m) = &self.mass {
            if m.len() != dim {
                return Err(PiftError::DimMismatch { expected: dim, got: m.len() });
            }
            if m.iter().any(|v| !(*v > 0.0)) {
                return Err(PiftError::InvalidConfig("masses must be positive".into()));
            }
        }
        if self.steps == 0 {
            return Err(PiftError::InvalidConfig("step count must be ≥ 1".into()));
        }
        if self.burn_in >= self.steps {
            return Err(PiftError::InvalidConfig("burn-in must be < steps".into()));
        }
        if self.thin == 0 {
            return Err(PiftError::InvalidConfig("thinning must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Energy error beyond which a leapfrog trajectory is declared divergent
/// (counted and rejected, never accepted by a spurious exp overflow).
pub const HMC_DIVERGENCE_THRESHOLD: f64 = 1000.0;

/// Standard leapfrog HMC with Metropolis correction. Per iteration the RNG
/// draws `dim` momenta and one uniform; divergent trajectories
/// (|ΔH| > [`HMC_DIVERGENCE_THRESHOLD`] or non-finite) are rejected and
/// counted.
pub fn hmc_sample<T: HmcTarget, R: Rng + ?Sized>(
    target: &T,
    config: &HmcConfig,
    theta0: &[f64],
    rng: &mut R,
) -> Result<Chain> {
    let dim = target.dim();
    config.validate(dim)?;
    if theta0.len() != dim {
        return Err(PiftError::DimMismatch { expected: dim, got: theta0.len() });
    }
    let mass: Vec<f64> = config.mass.clone().unwrap_or_else(|| vec![1.0; dim]);
    let sqrt_mass: Vec<f64> = mass.iter().map(|m| m.sqrt()).collect();

    let mut theta = theta0.to_vec();
    let (mut h, mut grad) = target.value_grad(&theta)?;
    let schedule = format!(
        "hmc step={} leapfrog={} mass={}",
        config.step_size,
        config.leapfrog_steps,
        if config.mass.is_some() { "custom" } else { "identity" }
    );
    let mut chain = Chain::new(theta_names(dim), config.seed, schedule);

    let kinetic = |p: &[f64]| -> f64 {
        p.iter().zip(&mass).map(|(pi, m)| pi * pi / (2.0 * m)).sum()
    };

    for t in 1..=config.steps {
        chain.stats.proposed += 1;
        // Momentum refresh p ~ N(0, M).
        let p0: Vec<f64> = sqrt_mass
            .iter()
            .map(|s| {
                let z: f64 = StandardNormal.sample(rng);
                s * z
            })
            .collect();
        let u: f64 = rng.gen_range(0.0..1.0);

        let h_total0 = h + kinetic(&p0);
        // Leapfrog trajectory.
        let mut q = theta.clone();
        let mut p = p0;
        let mut g = grad.clone();
        let eps = config.step_size;
        let mut ok = true;
        for _ in 0..config.leapfrog_steps {
            for (pi, gi) in p.iter_mut().zip(&g) {
                *pi -= 0.5 * eps * gi;
            }
            for ((qi, pi), m) in q.iter_mut().zip(&p).zip(&mass) {
                *qi += eps * pi / m;
            }
            match target.value_grad(&q) {
                Ok((_, ng)) => g = ng,
                Err(_) => {
                    ok = false;
                    break;
                }
            }
            for (pi, gi) in p.iter_mut().zip(&g) {
                *pi -= 0.5 * eps * gi;
            }
            if q.iter().any(|v| !v.is_finite()) || p.iter().any(|v| !v.is_finite()) {
                ok = false;
                break;
            }
        }

        let mut accept = false;
        if ok {
            if let Ok((h_new, g_new)) = target.value_grad(&q) {
                let h_total = h_new + kinetic(&p);
                let delta = h_total - h_total0;
                if !delta.is_finite() || delta > HMC_DIVERGENCE_THRESHOLD {
                    chain.stats.divergences += 1;
                } else if u < (-delta).exp() {
                    accept = true;
                    theta = q;
                    h = h_new;
                    grad = g_new;
                }
            } else {
                chain.stats.divergences += 1;
            }
        } else {
            chain.stats.divergences += 1;
        }
        if accept {
            chain.stats.accepted += 1;
        }

        if t > config.burn_in && (t - config.burn_in) % config.thin == 0 {
            chain.push(&theta);
        }
    }
    Ok(chain)
}

/// Derive a decorrelated child seed from a base seed and a stream index
/// (SplitMix64 finalizer), for fan-out over chains and sweep points.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9E3779B97F4A7C15u64.wrapping_mul(stream.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}
