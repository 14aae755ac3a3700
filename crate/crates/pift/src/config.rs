//! Run configuration for the command-line tool.
//!
//! A config file (TOML or JSON, chosen by extension) describes one
//! experiment: which pipeline to run (`kind`), the field basis, the energy
//! functional, the dataset, and the sampler settings. [`ExperimentConfig::from_path`]
//! parses and reports syntax errors with line/column positions;
//! [`ExperimentConfig::resolve`] validates the tree against the selected
//! `kind` and fills every omitted field with its concrete default, so that
//! serializing the resolved config spells out the exact run. A resolved
//! config fed back in reproduces the run bit for bit.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{PiftError, Result};
use crate::sampler::derive_seed;

/// Seed stream used to derive the synthetic-data seed from the run seed
/// when the config does not pin one explicitly.
pub const DATA_SEED_STREAM: u64 = 0xDA7A;

/// Which pipeline a config drives. Must match the CLI subcommand it is
/// passed to (`analytic`, `forward`, `inverse`, `hmc`, `sweep`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Closed-form Gaussian posterior of the free theory on a 1-D grid.
    AnalyticKg,
    /// Langevin sampling of the field prior or posterior at fixed β.
    ForwardSgld,
    /// Nested Langevin sampling of physical parameters λ.
    InverseSgld,
    /// Hamiltonian Monte Carlo on the field posterior at fixed β.
    ForwardHmc,
    /// Grid of inverse runs over a blend parameter γ, replicated over seeds.
    Sweep,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::AnalyticKg => "analytic-kg",
            ExperimentKind::ForwardSgld => "forward-sgld",
            ExperimentKind::InverseSgld => "inverse-sgld",
            ExperimentKind::ForwardHmc => "forward-hmc",
            ExperimentKind::Sweep => "sweep",
        }
    }

    /// CLI subcommand this kind belongs to.
    pub fn subcommand(&self) -> &'static str {
        match self {
            ExperimentKind::AnalyticKg => "analytic",
            ExperimentKind::ForwardSgld => "forward",
            ExperimentKind::InverseSgld => "inverse",
            ExperimentKind::ForwardHmc => "hmc",
            ExperimentKind::Sweep => "sweep",
        }
    }
}

/// Inverse temperature: a single value, or a list that fans out into one
/// run per value (forward sampling only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BetaSpec {
    One(f64),
    Many(Vec<f64>),
}

impl BetaSpec {
    pub fn values(&self) -> Vec<f64> {
        match self {
            BetaSpec::One(b) => vec![*b],
            BetaSpec::Many(bs) => bs.clone(),
        }
    }

    pub fn scalar(&self) -> Result<f64> {
        match self {
            BetaSpec::One(b) => Ok(*b),
            BetaSpec::Many(_) => Err(PiftError::InvalidConfig(
                "beta: this experiment kind takes a single value, not a list".into(),
            )),
        }
    }
}

/// Field basis selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BasisSpec {
    /// Truncated Fourier set (constant + `pairs` cosine/sine pairs) on
    /// `[a, b]`; with `boundary = [p0, p1]` the field is windowed to
    /// interpolate those endpoint values exactly.
    Fourier {
        pairs: usize,
        #[serde(default = "zero")]
        a: f64,
        #[serde(default = "one")]
        b: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        boundary: Option<[f64; 2]>,
    },
    /// Nine-term tensor cosine/sine set on the square `[-1, 1]²`.
    #[serde(rename = "fourier-nine-2d")]
    FourierNine2d,
    /// Single-amplitude 2-D bump basis on `[-1, 1]²` (one parameter).
    #[serde(rename = "well-informed-2d")]
    WellInformed2d,
}

impl BasisSpec {
    /// Number of coefficients.
    pub fn dim(&self) -> usize {
        match self {
            BasisSpec::Fourier { pairs, .. } => 2 * pairs + 1,
            BasisSpec::FourierNine2d => 9,
            BasisSpec::WellInformed2d => 1,
        }
    }

    pub fn space_dim(&self) -> usize {
        match self {
            BasisSpec::Fourier { .. } => 1,
            BasisSpec::FourierNine2d | BasisSpec::WellInformed2d => 2,
        }
    }
}

/// Pointwise source / forcing term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SourceSpec {
    Zero,
    Constant { value: f64 },
    /// `e^{-x}` (1-D).
    ExpDecay,
    /// `cos(frequency · x)` (1-D).
    Cosine { frequency: f64 },
    /// `amplitude · exp(-(x-c)²/(2w²))` (1-D).
    GaussianBump { center: f64, width: f64, amplitude: f64 },
    /// Forcing that makes `amplitude ×` the 2-D bump shape an exact steady
    /// state of the phase-field equation with interface width `epsilon`.
    #[serde(rename = "manufactured-2d")]
    Manufactured2d { epsilon: f64, amplitude: f64 },
    /// `gamma · primary + (1 - gamma) · secondary`; both parts must be
    /// plain sources (no nested blends or expansions).
    Blend { gamma: f64, primary: Box<SourceSpec>, secondary: Box<SourceSpec> },
    /// Truncated eigen-expansion of a squared-exponential covariance on
    /// `[a, b]`, discretized on `nodes` quadrature points; `coeffs` fixes
    /// the coefficients (defaults to all zero). Inverse runs treat the
    /// coefficients as inferable when `source-coeffs` is set.
    Kle {
        lengthscale: f64,
        variance: f64,
        terms: usize,
        #[serde(default = "zero")]
        a: f64,
        #[serde(default = "one")]
        b: f64,
        #[serde(default = "kle_nodes")]
        nodes: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        coeffs: Option<Vec<f64>>,
    },
}

impl SourceSpec {
    /// `true` for variants that map directly onto a single closed-form
    /// function (everything except `Blend` and `Kle`).
    pub fn is_plain(&self) -> bool {
        !matches!(self, SourceSpec::Blend { .. } | SourceSpec::Kle { .. })
    }

    fn validate(&self, path: &str) -> Result<()> {
        match self {
            SourceSpec::Cosine { frequency } => {
                finite(*frequency, &format!("{path}.frequency"))?;
            }
            SourceSpec::GaussianBump { width, .. } => {
                if !(*width > 0.0) {
                    return invalid(format!("{path}.width: must be > 0"));
                }
            }
            SourceSpec::Manufactured2d { epsilon, .. } => {
                if !(*epsilon > 0.0) {
                    return invalid(format!("{path}.epsilon: must be > 0"));
                }
            }
            SourceSpec::Blend { gamma, primary, secondary } => {
                if !(0.0..=1.0).contains(gamma) {
                    return invalid(format!("{path}.gamma: must lie in [0, 1]"));
                }
                for (part, sub) in [("primary", primary), ("secondary", secondary)] {
                    if !sub.is_plain() {
                        return invalid(format!(
                            "{path}.{part}: blends combine plain sources only"
                        ));
                    }
                    sub.validate(&format!("{path}.{part}"))?;
                }
            }
            SourceSpec::Kle { lengthscale, variance, terms, a, b, nodes, coeffs } => {
                if !(*lengthscale > 0.0) || !(*variance > 0.0) {
                    return invalid(format!("{path}: lengthscale and variance must be > 0"));
                }
                if *terms == 0 {
                    return invalid(format!("{path}.terms: must be ≥ 1"));
                }
                if !(*b > *a) {
                    return invalid(format!("{path}: needs b > a"));
                }
                if *nodes < *terms {
                    return invalid(format!("{path}.nodes: need at least `terms` nodes"));
                }
                if let Some(c) = coeffs {
                    if c.len() != *terms {
                        return invalid(format!(
                            "{path}.coeffs: expected {terms} values, got {}",
                            c.len()
                        ));
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Energy functional selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EnergySpec {
    /// `½D(φ')² − φq` (steady diffusion with forcing, 1-D).
    DirichletHeat { conductivity: f64, source: SourceSpec },
    /// `½D(φ')² + γ·¼κφ⁴ + ½(1−γ)φ² + φf` with `γ = quartic-blend`.
    CubicNonlinear {
        conductivity: f64,
        kappa: f64,
        #[serde(default = "one")]
        quartic_blend: f64,
        source: SourceSpec,
    },
    /// `½ε‖∇φ‖² + ¼(1−φ²)² − fφ` (phase-field, 2-D).
    AllenCahn { epsilon: f64, source: SourceSpec },
}

impl EnergySpec {
    pub fn space_dim(&self) -> usize {
        match self {
            EnergySpec::DirichletHeat { .. } | EnergySpec::CubicNonlinear { .. } => 1,
            EnergySpec::AllenCahn { .. } => 2,
        }
    }

    pub fn source(&self) -> &SourceSpec {
        match self {
            EnergySpec::DirichletHeat { source, .. }
            | EnergySpec::CubicNonlinear { source, .. }
            | EnergySpec::AllenCahn { source, .. } => source,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            EnergySpec::DirichletHeat { conductivity, source } => {
                positive(*conductivity, "[energy].conductivity")?;
                source.validate("[energy].source")?;
            }
            EnergySpec::CubicNonlinear { conductivity, kappa, quartic_blend, source } => {
                positive(*conductivity, "[energy].conductivity")?;
                positive(*kappa, "[energy].kappa")?;
                if !(0.0..=1.0).contains(quartic_blend) {
                    return invalid("[energy].quartic-blend: must lie in [0, 1]".into());
                }
                source.validate("[energy].source")?;
            }
            EnergySpec::AllenCahn { epsilon, source } => {
                positive(*epsilon, "[energy].epsilon")?;
                source.validate("[energy].source")?;
            }
        }
        Ok(())
    }
}

/// How synthetic observation sites are placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataLayout {
    /// `count` equidistant points strictly inside the domain:
    /// `x_j = a + j/(count+1)·(b−a)`, `j = 1..count`.
    #[default]
    EquidistantInterior,
    /// `count` uniformly random points on each of the three square edges
    /// `x = −1`, `x = +1`, `y = −1` (the edge `y = +1` carries no data).
    ThreeBoundaries,
}

/// Ground-truth field used to synthesize observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GeneratorSpec {
    /// Closed-form solution of `Dφ'' + a·e^{-x} = 0` on `[0, 1]` with the
    /// given endpoint values.
    HeatExact {
        conductivity: f64,
        #[serde(default = "one")]
        amplitude: f64,
        boundary: [f64; 2],
    },
    /// Dense finite-difference Newton solve of
    /// `Dφ'' − γκφ³ − (1−γ)φ = f` on the basis interval.
    CubicFd {
        conductivity: f64,
        kappa: f64,
        #[serde(default = "one")]
        quartic_blend: f64,
        source: SourceSpec,
        #[serde(default)]
        boundary: [f64; 2],
        #[serde(default = "fd_nodes")]
        nodes: usize,
        #[serde(default = "fd_tol")]
        tol: f64,
    },
    /// `amplitude ×` the 2-D bump shape on `[-1, 1]²`.
    #[serde(rename = "bump-2d")]
    Bump2d { amplitude: f64 },
    /// Convolution mean of the screened free theory with stiffness `alpha`
    /// and the given forcing.
    KgMean {
        alpha: f64,
        source: SourceSpec,
        #[serde(default = "kg_radius")]
        radius: f64,
        #[serde(default = "kg_nodes")]
        nodes_per_side: usize,
    },
    /// Read observations from a CSV file with header `x,value` (1-D) or
    /// `x,y,value` (2-D).
    Csv { path: String },
}

impl GeneratorSpec {
    pub fn space_dim(&self) -> Option<usize> {
        match self {
            GeneratorSpec::HeatExact { .. }
            | GeneratorSpec::CubicFd { .. }
            | GeneratorSpec::KgMean { .. } => Some(1),
            GeneratorSpec::Bump2d { .. } => Some(2),
            GeneratorSpec::Csv { .. } => None,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            GeneratorSpec::HeatExact { conductivity, .. } => {
                positive(*conductivity, "[data].generator.conductivity")
            }
            GeneratorSpec::CubicFd { conductivity, kappa, quartic_blend, source, nodes, tol, .. } => {
                positive(*conductivity, "[data].generator.conductivity")?;
                positive(*kappa, "[data].generator.kappa")?;
                if !(0.0..=1.0).contains(quartic_blend) {
                    return invalid("[data].generator.quartic-blend: must lie in [0, 1]".into());
                }
                if *nodes < 3 {
                    return invalid("[data].generator.nodes: need ≥ 3".into());
                }
                positive(*tol, "[data].generator.tol")?;
                if !source.is_plain() {
                    return invalid(
                        "[data].generator.source: ground truth takes a plain source".into(),
                    );
                }
                source.validate("[data].generator.source")
            }
            GeneratorSpec::Bump2d { amplitude } => finite(*amplitude, "[data].generator.amplitude"),
            GeneratorSpec::KgMean { alpha, source, radius, nodes_per_side } => {
                positive(*alpha, "[data].generator.alpha")?;
                positive(*radius, "[data].generator.radius")?;
                if *nodes_per_side < 2 {
                    return invalid("[data].generator.nodes-per-side: need ≥ 2".into());
                }
                if !source.is_plain() {
                    return invalid("[data].generator.source: takes a plain source".into());
                }
                source.validate("[data].generator.source")
            }
            GeneratorSpec::Csv { path } => {
                if path.is_empty() {
                    return invalid("[data].generator.path: empty".into());
                }
                Ok(())
            }
        }
    }
}

/// Synthetic (or file-backed) dataset description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct DataSpec {
    pub generator: GeneratorSpec,
    /// Number of observation sites (per edge for the boundary layout).
    pub count: usize,
    #[serde(default)]
    pub layout: DataLayout,
    /// Observation noise standard deviation σ; `d = φ*(x) + σ·N(0,1)`.
    pub noise_std: f64,
    /// RNG seed for site placement and noise. Defaults to a fixed stream
    /// derived from the run seed (sweeps derive one per replication).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl DataSpec {
    fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        if self.count == 0 && !matches!(self.generator, GeneratorSpec::Csv { .. }) {
            return invalid("[data].count: need at least one observation".into());
        }
        if !self.noise_std.is_finite() || self.noise_std < 0.0 {
            return invalid("[data].noise-std: must be finite and ≥ 0".into());
        }
        if self.layout == DataLayout::ThreeBoundaries {
            match self.generator.space_dim() {
                Some(2) | None => {}
                _ => {
                    return invalid(
                        "[data].layout: three-boundaries needs a 2-D ground truth".into(),
                    )
                }
            }
        }
        Ok(())
    }
}

/// Quadrature used for exact energy integrals (Hamiltonian pipelines).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct QuadratureSpec {
    /// Trapezoid nodes on an interval.
    #[serde(default = "quad_1d")]
    pub points: usize,
    /// Tensor-trapezoid nodes per axis on a rectangle.
    #[serde(default = "quad_2d")]
    pub points_2d: [usize; 2],
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec { points: quad_1d(), points_2d: quad_2d() }
    }
}

/// Injected-noise variance convention for Langevin steps: `eps` injects
/// variance ε (targets `exp(−2H)`), `sqrt-eps` injects variance √ε.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseSpec {
    #[default]
    Eps,
    SqrtEps,
}

/// Langevin sampler settings for forward (fixed-β) runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SgldSpec {
    pub steps: usize,
    /// Posterior base-rate numerator: α₀ = α̂₀ / max{β, σ⁻²}. Ignored for
    /// prior-only runs (no `[data]` section).
    #[serde(default = "one")]
    pub alpha0_hat: f64,
    /// Prior base-rate scale: α₀ = scale / β.
    #[serde(default = "prior_scale")]
    pub prior_scale: f64,
    #[serde(default = "alpha1")]
    pub alpha1: f64,
    /// Spatial points per step in the stochastic energy gradient.
    #[serde(default = "one_usize")]
    pub n_spatial: usize,
    /// Observations per step in the stochastic likelihood gradient.
    #[serde(default = "one_usize")]
    pub data_batch: usize,
    /// Steps discarded from the front; defaults to `steps / 10`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    /// Keep every `thin`-th kept step; defaults to capping retained rows
    /// at 100 000.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thin: Option<usize>,
    #[serde(default)]
    pub noise: NoiseSpec,
    /// Initial coefficients; defaults to zeros.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta0: Option<Vec<f64>>,
}

impl SgldSpec {
    fn validate(&self, dim: usize) -> Result<()> {
        if self.steps == 0 {
            return invalid("[sgld].steps: must be ≥ 1".into());
        }
        positive(self.alpha0_hat, "[sgld].alpha0-hat")?;
        positive(self.prior_scale, "[sgld].prior-scale")?;
        check_alpha1(self.alpha1, "[sgld].alpha1")?;
        if self.n_spatial == 0 {
            return invalid("[sgld].n-spatial: must be ≥ 1".into());
        }
        if self.data_batch == 0 {
            return invalid("[sgld].data-batch: must be ≥ 1".into());
        }
        if let Some(b) = self.burn_in {
            if b >= self.steps {
                return invalid("[sgld].burn-in: must be < steps".into());
            }
        }
        if self.thin == Some(0) {
            return invalid("[sgld].thin: must be ≥ 1".into());
        }
        if let Some(t0) = &self.theta0 {
            if t0.len() != dim {
                return invalid(format!(
                    "[sgld].theta0: expected {dim} values for this basis, got {}",
                    t0.len()
                ));
            }
        }
        Ok(())
    }
}

/// Inferable-parameter selection for inverse runs, in λ-vector order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaEntrySpec {
    /// Inverse temperature, carried as log β.
    LogBeta,
    /// Diffusion coefficient, carried as log D.
    LogConductivity,
    /// Quartic coefficient, carried as log κ.
    LogKappa,
}

/// Prior on one λ coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PriorSpec {
    /// Scale-invariant prior on the underlying positive constant (flat in
    /// the log coordinate).
    Jeffreys,
    Flat,
    Gaussian { mean: f64, std: f64 },
}

/// Nested-sampler settings for inverse runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct InverseSpec {
    /// Outer iterations with λ updates.
    pub maxiter: usize,
    /// Gated outer iterations before the first λ update: the inner field
    /// chains advance while λ stays frozen, and the outer step-size clock
    /// counts them.
    #[serde(default = "warmup")]
    pub warmup: usize,
    /// Outer base step size α₀.
    pub alpha0: f64,
    /// Posterior inner base-rate numerator α̂₀.
    pub alpha0_hat: f64,
    #[serde(default = "alpha1")]
    pub alpha1: f64,
    /// Prior inner steps per outer iteration.
    #[serde(default = "ten_usize")]
    pub inner_prior_steps: usize,
    /// Posterior inner steps per outer iteration.
    #[serde(default = "one_usize")]
    pub inner_posterior_steps: usize,
    /// Inner states retained per outer iteration (the last ones visited).
    #[serde(default = "one_usize")]
    pub keep_prior: usize,
    #[serde(default = "one_usize")]
    pub keep_posterior: usize,
    /// Spatial points per outer iteration in the λ-gradient; the batch is
    /// shared between the posterior and prior averages.
    #[serde(default = "one_usize")]
    pub n_spatial: usize,
    #[serde(default = "one_usize")]
    pub inner_n_spatial: usize,
    #[serde(default = "alpha1")]
    pub inner_alpha1: f64,
    /// Prior inner base-rate scale: α₀ = scale / β.
    #[serde(default = "prior_scale")]
    pub prior_scale: f64,
    #[serde(default = "one_usize")]
    pub data_batch: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thin: Option<usize>,
    #[serde(default)]
    pub noise: NoiseSpec,
    /// Fixed β when `lambda` does not contain `log-beta`; ignored (and
    /// superseded by the sampled value) when it does.
    #[serde(default = "one")]
    pub beta0: f64,
    /// Named physical parameters to infer, in λ order.
    pub lambda: Vec<LambdaEntrySpec>,
    /// Number of source-expansion coefficients appended to λ (requires a
    /// `kle` source in the energy).
    #[serde(default)]
    pub source_coeffs: usize,
    /// Initial λ; defaults to zeros.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda0: Option<Vec<f64>>,
    /// One prior per λ coordinate; defaults to `jeffreys` for the named
    /// entries and standard `gaussian` for source coefficients.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priors: Option<Vec<PriorSpec>>,
}

impl InverseSpec {
    pub fn lambda_dim(&self) -> usize {
        self.lambda.len() + self.source_coeffs
    }

    fn validate(&self, energy: Option<&EnergySpec>) -> Result<()> {
        if self.maxiter == 0 {
            return invalid("[inverse].maxiter: must be ≥ 1".into());
        }
        positive(self.alpha0, "[inverse].alpha0")?;
        positive(self.alpha0_hat, "[inverse].alpha0-hat")?;
        check_alpha1(self.alpha1, "[inverse].alpha1")?;
        check_inner_alpha1(self.inner_alpha1, "[inverse].inner-alpha1")?;
        positive(self.prior_scale, "[inverse].prior-scale")?;
        positive(self.beta0, "[inverse].beta0")?;
        for (field, v) in [
            ("inner-prior-steps", self.inner_prior_steps),
            ("inner-posterior-steps", self.inner_posterior_steps),
            ("keep-prior", self.keep_prior),
            ("keep-posterior", self.keep_posterior),
            ("n-spatial", self.n_spatial),
            ("inner-n-spatial", self.inner_n_spatial),
            ("data-batch", self.data_batch),
        ] {
            if v == 0 {
                return invalid(format!("[inverse].{field}: must be ≥ 1"));
            }
        }
        if self.keep_prior > self.inner_prior_steps {
            return invalid("[inverse].keep-prior: cannot exceed inner-prior-steps".into());
        }
        if self.keep_posterior > self.inner_posterior_steps {
            return invalid(
                "[inverse].keep-posterior: cannot exceed inner-posterior-steps".into(),
            );
        }
        if let Some(b) = self.burn_in {
            if b >= self.maxiter {
                return invalid("[inverse].burn-in: must be < maxiter".into());
            }
        }
        if self.thin == Some(0) {
            return invalid("[inverse].thin: must be ≥ 1".into());
        }
        if self.lambda.is_empty() && self.source_coeffs == 0 {
            return invalid("[inverse].lambda: nothing to infer".into());
        }
        for pair in self.lambda.windows(2) {
            if pair[0] == pair[1] {
                return invalid("[inverse].lambda: duplicate entry".into());
            }
        }
        let dim = self.lambda_dim();
        if let Some(l0) = &self.lambda0 {
            if l0.len() != dim {
                return invalid(format!(
                    "[inverse].lambda0: expected {dim} values, got {}",
                    l0.len()
                ));
            }
            if l0.iter().any(|v| !v.is_finite()) {
                return invalid("[inverse].lambda0: values must be finite".into());
            }
        }
        if let Some(ps) = &self.priors {
            if ps.len() != dim {
                return invalid(format!(
                    "[inverse].priors: expected {dim} entries, got {}",
                    ps.len()
                ));
            }
            for (i, p) in ps.iter().enumerate() {
                if let PriorSpec::Gaussian { std, .. } = p {
                    if !(*std > 0.0) {
                        return invalid(format!("[inverse].priors[{i}].std: must be > 0"));
                    }
                }
            }
        }
        if let Some(energy) = energy {
            if self.lambda.contains(&LambdaEntrySpec::LogKappa)
                && !matches!(energy, EnergySpec::CubicNonlinear { .. })
            {
                return invalid(
                    "[inverse].lambda: log-kappa needs a cubic-nonlinear energy".into(),
                );
            }
            if self.lambda.contains(&LambdaEntrySpec::LogConductivity)
                && matches!(energy, EnergySpec::AllenCahn { .. })
            {
                return invalid(
                    "[inverse].lambda: log-conductivity needs a diffusion energy".into(),
                );
            }
            if self.source_coeffs > 0 {
                match energy.source() {
                    SourceSpec::Kle { terms, .. } if *terms == self.source_coeffs => {}
                    SourceSpec::Kle { terms, .. } => {
                        return invalid(format!(
                            "[inverse].source-coeffs: expected {terms} to match the \
                             expansion, got {}",
                            self.source_coeffs
                        ));
                    }
                    _ => {
                        return invalid(
                            "[inverse].source-coeffs: the energy source must be a kle \
                             expansion"
                                .into(),
                        );
                    }
                }
            }
        }
        Ok(())
    }
}

/// Hamiltonian Monte Carlo settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct HmcSpec {
    pub step_size: f64,
    pub leapfrog_steps: usize,
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    #[serde(default = "one_usize")]
    pub thin: usize,
    /// Per-coordinate mass; omitted = identity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta0: Option<Vec<f64>>,
}

impl HmcSpec {
    fn validate(&self, dim: usize) -> Result<()> {
        positive(self.step_size, "[hmc].step-size")?;
        if self.leapfrog_steps == 0 {
            return invalid("[hmc].leapfrog-steps: must be ≥ 1".into());
        }
        if self.steps == 0 {
            return invalid("[hmc].steps: must be ≥ 1".into());
        }
        if let Some(b) = self.burn_in {
            if b >= self.steps {
                return invalid("[hmc].burn-in: must be < steps".into());
            }
        }
        if self.thin == 0 {
            return invalid("[hmc].thin: must be ≥ 1".into());
        }
        if let Some(m) = &self.mass {
            if m.len() != dim {
                return invalid(format!(
                    "[hmc].mass: expected {dim} values for this basis, got {}",
                    m.len()
                ));
            }
            if m.iter().any(|v| !(*v > 0.0)) {
                return invalid("[hmc].mass: entries must be > 0".into());
            }
        }
        if let Some(t0) = &self.theta0 {
            if t0.len() != dim {
                return invalid(format!(
                    "[hmc].theta0: expected {dim} values for this basis, got {}",
                    t0.len()
                ));
            }
        }
        Ok(())
    }
}

/// Closed-form screened-free-theory pipeline settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct AnalyticSpec {
    /// Stiffness α of the screened operator `−d²/dx² + α²`.
    pub alpha: f64,
    /// Forcing that sets the prior mean.
    pub source: SourceSpec,
    #[serde(default = "zero")]
    pub a: f64,
    #[serde(default = "one")]
    pub b: f64,
    /// Half-width of the convolution window for the prior mean.
    #[serde(default = "kg_radius")]
    pub radius: f64,
    /// Quadrature nodes per side of the convolution kernel's kink.
    #[serde(default = "kg_nodes")]
    pub nodes_per_side: usize,
    /// Evaluation grid resolution for the emitted posterior table.
    #[serde(default = "grid_points")]
    pub grid_points: usize,
}

impl AnalyticSpec {
    fn validate(&self) -> Result<()> {
        positive(self.alpha, "[analytic].alpha")?;
        if !(self.b > self.a) {
            return invalid("[analytic]: needs b > a".into());
        }
        positive(self.radius, "[analytic].radius")?;
        if self.nodes_per_side < 2 {
            return invalid("[analytic].nodes-per-side: need ≥ 2".into());
        }
        if self.grid_points < 2 {
            return invalid("[analytic].grid-points: need ≥ 2".into());
        }
        if !self.source.is_plain() {
            return invalid("[analytic].source: takes a plain source".into());
        }
        self.source.validate("[analytic].source")
    }
}

/// Which parameter the sweep's γ grid drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepVariant {
    /// γ blends the energy's source term (`blend` source required).
    SourceBlend,
    /// γ sets the energy's `quartic-blend` (cubic energy required).
    EnergyBlend,
}

/// γ-grid sweep of inverse runs, replicated over independent seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SweepSpec {
    pub gammas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub variant: SweepVariant,
}

impl SweepSpec {
    fn validate(&self, energy: Option<&EnergySpec>) -> Result<()> {
        if self.gammas.len() < 2 {
            return invalid("[sweep].gammas: need at least two grid points".into());
        }
        if self.gammas.iter().any(|g| !(0.0..=1.0).contains(g)) {
            return invalid("[sweep].gammas: values must lie in [0, 1]".into());
        }
        for (i, g) in self.gammas.iter().enumerate() {
            if self.gammas[..i].contains(g) {
                return invalid("[sweep].gammas: duplicate grid point".into());
            }
        }
        if self.seeds.is_empty() {
            return invalid("[sweep].seeds: need at least one seed".into());
        }
        for pair in self.seeds.windows(2) {
            if pair[0] == pair[1] {
                return invalid("[sweep].seeds: duplicate seed".into());
            }
        }
        if let Some(energy) = energy {
            match self.variant {
                SweepVariant::SourceBlend => {
                    if !matches!(energy.source(), SourceSpec::Blend { .. }) {
                        return invalid(
                            "[sweep].variant: source-blend needs a blend source in the \
                             energy"
                                .into(),
                        );
                    }
                }
                SweepVariant::EnergyBlend => {
                    if !matches!(energy, EnergySpec::CubicNonlinear { .. }) {
                        return invalid(
                            "[sweep].variant: energy-blend needs a cubic-nonlinear energy"
                                .into(),
                        );
                    }
                }
            }
        }
        Ok(())
    }
}

/// Post-run diagnostics toggles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct DiagnosticsSpec {
    /// Fit a two-component Gaussian mixture to the chain and emit
    /// per-mode field summaries.
    #[serde(default)]
    pub gmm: bool,
    #[serde(default = "gmm_iters")]
    pub gmm_max_iters: usize,
    #[serde(default = "gmm_tol")]
    pub gmm_tol: f64,
}

impl Default for DiagnosticsSpec {
    fn default() -> Self {
        DiagnosticsSpec { gmm: false, gmm_max_iters: gmm_iters(), gmm_tol: gmm_tol() }
    }
}

/// Field-summary evaluation grid (per axis in 2-D).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default = "grid_points")]
    pub points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { points: grid_points() }
    }
}

/// Long-run overrides applied by the `--full` flag: bundled configs keep
/// chain lengths short enough for a desk run, and this section records the
/// counts that restore the full-length experiment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct FullSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sgld_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hmc_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub maxiter: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_points: Option<usize>,
}

/// Command-line overrides applied before resolution.
#[derive(Debug, Clone, Default)]
pub struct CliOverrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub full: bool,
}

/// One experiment, fully described.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Run label; also names the default output directory `runs/<name>`.
    pub name: String,
    pub kind: ExperimentKind,
    /// Master RNG seed for the sampling pipeline.
    #[serde(default)]
    pub seed: u64,
    /// Output directory; defaults to `runs/<name>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    /// Inverse temperature(s); forward sampling accepts a list and runs
    /// once per value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<BetaSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis: Option<BasisSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy: Option<EnergySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadrature: Option<QuadratureSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sgld: Option<SgldSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inverse: Option<InverseSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hmc: Option<HmcSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analytic: Option<AnalyticSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<DiagnosticsSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full: Option<FullSpec>,
}

impl ExperimentConfig {
    /// Parse a config file; the format follows the extension (`.json` is
    /// JSON, everything else is TOML). Syntax and schema violations carry
    /// the offending line/column or field in the message.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let is_json = path.extension().and_then(|e| e.to_str()) == Some("json");
        let parsed: ExperimentConfig = if is_json {
            serde_json::from_str(&text)
                .map_err(|e| PiftError::Parse(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text)
                .map_err(|e| PiftError::Parse(format!("{}: {e}", path.display())))?
        };
        Ok(parsed)
    }

    /// Apply `--out`, `--seed`, and `--full`. The `--full` flag folds the
    /// `[full]` section into the main tree and removes it, so the resolved
    /// config reproduces the long run directly.
    pub fn apply_overrides(&mut self, overrides: &CliOverrides) {
        if let Some(seed) = overrides.seed {
            self.seed = seed;
        }
        if let Some(out) = &overrides.out {
            self.output = Some(out.to_string_lossy().into_owned());
        }
        if overrides.full {
            if let Some(full) = self.full.take() {
                if let (Some(steps), Some(sgld)) = (full.sgld_steps, self.sgld.as_mut()) {
                    sgld.steps = steps;
                    sgld.burn_in = None;
                    sgld.thin = None;
                }
                if let (Some(steps), Some(hmc)) = (full.hmc_steps, self.hmc.as_mut()) {
                    hmc.steps = steps;
                    hmc.burn_in = None;
                }
                if let Some(inv) = self.inverse.as_mut() {
                    if let Some(w) = full.warmup {
                        inv.warmup = w;
                    }
                    if let Some(m) = full.maxiter {
                        inv.maxiter = m;
                        inv.burn_in = None;
                        inv.thin = None;
                    }
                }
                if let Some(g) = full.grid_points {
                    self.grid = Some(GridSpec { points: g });
                }
            }
        }
    }

    /// Validate the tree against `kind` and fill every omitted field with
    /// its concrete default, in place. After this call the config
    /// serializes to a complete description of the run.
    pub fn resolve(&mut self) -> Result<()> {
        if self.name.is_empty() {
            return invalid("name: must not be empty".into());
        }
        if self.name.contains(['/', '\\']) {
            return invalid("name: must not contain path separators".into());
        }
        self.check_sections()?;

        if let Some(b) = &self.basis {
            if let BasisSpec::Fourier { pairs, a, b: b1, .. } = b {
                if *pairs == 0 {
                    return invalid("[basis].pairs: need ≥ 1".into());
                }
                if !(*b1 > *a) {
                    return invalid("[basis]: needs b > a".into());
                }
            }
        }
        if let Some(e) = &self.energy {
            e.validate()?;
        }
        if let (Some(b), Some(e)) = (&self.basis, &self.energy) {
            if b.space_dim() != e.space_dim() {
                return invalid(format!(
                    "[energy]: a {}-D energy cannot act on a {}-D basis",
                    e.space_dim(),
                    b.space_dim()
                ));
            }
        }
        if let Some(d) = &self.data {
            d.validate()?;
            if let (Some(gen_dim), Some(b)) = (d.generator.space_dim(), &self.basis) {
                if gen_dim != b.space_dim() {
                    return invalid(
                        "[data].generator: ground-truth dimension does not match the basis"
                            .into(),
                    );
                }
            }
        }
        if let Some(bs) = &self.beta {
            let values = bs.values();
            if values.is_empty() {
                return invalid("beta: empty list".into());
            }
            for v in values {
                if !(v > 0.0) || !v.is_finite() {
                    return invalid("beta: values must be positive and finite".into());
                }
            }
        }

        let dim = self.basis.as_ref().map(BasisSpec::dim).unwrap_or(0);
        if let Some(s) = &self.sgld {
            s.validate(dim)?;
        }
        if let Some(inv) = &self.inverse {
            inv.validate(self.energy.as_ref())?;
        }
        if let Some(h) = &self.hmc {
            h.validate(dim)?;
        }
        if let Some(a) = &self.analytic {
            a.validate()?;
        }
        if let Some(sw) = &self.sweep {
            sw.validate(self.energy.as_ref())?;
            if let Some(inv) = &self.inverse {
                if !inv.lambda.contains(&LambdaEntrySpec::LogBeta) {
                    return invalid(
                        "[inverse].lambda: sweeps track the sampled temperature; include \
                         `log-beta`"
                            .into(),
                    );
                }
            }
        }
        if let Some(g) = &self.grid {
            if g.points < 2 {
                return invalid("[grid].points: need ≥ 2".into());
            }
        }
        if let Some(d) = &self.diagnostics {
            if d.gmm_max_iters == 0 {
                return invalid("[diagnostics].gmm-max-iters: need ≥ 1".into());
            }
            positive(d.gmm_tol, "[diagnostics].gmm-tol")?;
        }

        // Fill defaults.
        if self.output.is_none() {
            self.output = Some(format!("runs/{}", self.name));
        }
        self.quadrature.get_or_insert_with(QuadratureSpec::default);
        self.grid.get_or_insert_with(GridSpec::default);
        self.diagnostics.get_or_insert_with(DiagnosticsSpec::default);
        if let Some(d) = self.data.as_mut() {
            if d.seed.is_none() && self.kind != ExperimentKind::Sweep {
                d.seed = Some(derive_seed(self.seed, DATA_SEED_STREAM));
            }
        }
        if let Some(s) = self.sgld.as_mut() {
            let burn = *s.burn_in.get_or_insert(s.steps / 10);
            s.thin.get_or_insert_with(|| ((s.steps - burn) / 100_000).max(1));
            s.theta0.get_or_insert_with(|| vec![0.0; dim]);
        }
        if let Some(inv) = self.inverse.as_mut() {
            let burn = *inv.burn_in.get_or_insert(inv.maxiter / 10);
            inv.thin.get_or_insert_with(|| ((inv.maxiter - burn) / 100_000).max(1));
            let ldim = inv.lambda_dim();
            inv.lambda0.get_or_insert_with(|| vec![0.0; ldim]);
            inv.priors.get_or_insert_with(|| {
                let mut ps = vec![PriorSpec::Jeffreys; inv.lambda.len()];
                ps.extend(vec![
                    PriorSpec::Gaussian { mean: 0.0, std: 1.0 };
                    inv.source_coeffs
                ]);
                ps
            });
        }
        if let Some(h) = self.hmc.as_mut() {
            h.burn_in.get_or_insert(h.steps / 10);
            h.theta0.get_or_insert_with(|| vec![0.0; dim]);
        }
        Ok(())
    }

    /// Per-kind section requirements: everything the pipeline reads must
    /// be present, and sections it would silently ignore are rejected.
    fn check_sections(&self) -> Result<()> {
        use ExperimentKind::*;
        let required: &[(&str, bool)] = match self.kind {
            AnalyticKg => &[("analytic", true), ("beta", true)],
            ForwardSgld => &[("basis", true), ("energy", true), ("beta", true), ("sgld", true)],
            InverseSgld => &[("basis", true), ("energy", true), ("data", true), ("inverse", true)],
            ForwardHmc => &[("basis", true), ("energy", true), ("beta", true), ("hmc", true)],
            Sweep => {
                &[("basis", true), ("energy", true), ("data", true), ("inverse", true), ("sweep", true)]
            }
        };
        let forbidden: &[&str] = match self.kind {
            AnalyticKg => &["basis", "energy", "sgld", "inverse", "hmc", "sweep"],
            ForwardSgld => &["analytic", "inverse", "hmc", "sweep"],
            InverseSgld => &["analytic", "beta", "sgld", "hmc", "sweep"],
            ForwardHmc => &["analytic", "inverse", "sgld", "sweep"],
            Sweep => &["analytic", "beta", "sgld", "hmc"],
        };
        for (section, _) in required {
            if !self.has_section(section) {
                return invalid(format!(
                    "[{section}]: required for kind `{}`",
                    self.kind.as_str()
                ));
            }
        }
        for section in forbidden {
            if self.has_section(section) {
                return invalid(format!(
                    "[{section}]: not used by kind `{}`; remove it",
                    self.kind.as_str()
                ));
            }
        }
        if self.kind == Sweep {
            if let Some(d) = &self.data {
                if d.seed.is_some() {
                    return invalid(
                        "[data].seed: sweeps derive one dataset seed per replication; \
                         remove it"
                            .into(),
                    );
                }
            }
        }
        Ok(())
    }

    fn has_section(&self, name: &str) -> bool {
        match name {
            "basis" => self.basis.is_some(),
            "energy" => self.energy.is_some(),
            "beta" => self.beta.is_some(),
            "data" => self.data.is_some(),
            "sgld" => self.sgld.is_some(),
            "inverse" => self.inverse.is_some(),
            "hmc" => self.hmc.is_some(),
            "analytic" => self.analytic.is_some(),
            "sweep" => self.sweep.is_some(),
            _ => false,
        }
    }

    /// Resolved output directory (call after [`resolve`](Self::resolve)).
    pub fn output_dir(&self) -> PathBuf {
        PathBuf::from(self.output.clone().unwrap_or_else(|| format!("runs/{}", self.name)))
    }

    /// Pretty JSON rendering, used for the emitted resolved config.
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }
}

fn invalid<T>(msg: String) -> Result<T> {
    Err(PiftError::InvalidConfig(msg))
}

fn positive(v: f64, field: &str) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return invalid(format!("{field}: must be positive and finite"));
    }
    Ok(())
}

fn finite(v: f64, field: &str) -> Result<()> {
    if !v.is_finite() {
        return invalid(format!("{field}: must be finite"));
    }
    Ok(())
}

fn check_alpha1(v: f64, field: &str) -> Result<()> {
    if !(v > 0.5 && v <= 1.0) {
        return invalid(format!("{field}: decay exponent must lie in (0.5, 1]"));
    }
    Ok(())
}

/// Inner chains inside the nested sampler track a moving target, so a
/// decay exponent of zero (constant step size, bounded tracking lag) is
/// allowed there in addition to the decaying range.
fn check_inner_alpha1(v: f64, field: &str) -> Result<()> {
    if !(v >= 0.0 && v <= 1.0) {
        return invalid(format!("{field}: decay exponent must lie in [0, 1]"));
    }
    Ok(())
}

fn zero() -> f64 {
    0.0
}
fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn ten_usize() -> usize {
    10
}
fn alpha1() -> f64 {
    0.51
}
fn prior_scale() -> f64 {
    0.1
}
fn warmup() -> usize {
    1_000_000
}
fn kle_nodes() -> usize {
    201
}
fn fd_nodes() -> usize {
    4097
}
fn fd_tol() -> f64 {
    1e-10
}
fn kg_radius() -> f64 {
    8.0
}
fn kg_nodes() -> usize {
    4001
}
fn quad_1d() -> usize {
    257
}
fn quad_2d() -> [usize; 2] {
    [128, 128]
}
fn grid_points() -> usize {
    257
}
fn gmm_iters() -> usize {
    500
}
fn gmm_tol() -> f64 {
    1e-8
}
