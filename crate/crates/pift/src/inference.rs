//! Likelihoods and posterior functionals over field coefficients.
//!
//! Conditioning the Gibbs field prior `p(θ) ∝ exp(-β U(θ))` on noisy point
//! observations `d_i = φ(x_i; θ) + ε_i` yields a posterior governed by the
//! information Hamiltonian
//!
//! ```text
//! H(θ) = ℓ(d, θ) + β U(θ),    ℓ = Σ_i (d_i - φ(x_i; θ))² / (2σ²),
//! ```
//!
//! up to θ-independent constants. This module supplies `ℓ`, its gradient,
//! mini-batch estimators of both, the cached Hamiltonian used by the
//! samplers, and the collocation losses (penalty-form and Bayesian) that
//! coincide with `H` for particular weight choices — the bridge between
//! Gibbs-prior inference and residual-penalty training.

use nalgebra::{DMatrix, DVector};

use crate::basis::FieldBasis;
use crate::energy::{CachedEnergy, EnergyModel, ResidualOp};
use crate::error::{PiftError, Result};
use crate::grid::{Domain, Quadrature};

/// Noisy point observations of a scalar field.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// Flat locations, `space_dim` coordinates per observation.
    locations: Vec<f64>,
    values: Vec<f64>,
    noise_std: f64,
    space_dim: usize,
}

impl Dataset {
    pub fn new(
        locations: Vec<f64>,
        values: Vec<f64>,
        noise_std: f64,
        space_dim: usize,
    ) -> Result<Self> {
        if space_dim == 0 || space_dim > 2 {
            return Err(PiftError::InvalidConfig("space_dim must be 1 or 2".into()));
        }
        if locations.len() != values.len() * space_dim {
            return Err(PiftError::DimMismatch {
                expected: values.len() * space_dim,
                got: locations.len(),
            });
        }
        if !(noise_std > 0.0) {
            return Err(PiftError::InvalidConfig("noise std must be positive".into()));
        }
        Ok(Dataset { locations, values, noise_std, space_dim })
    }

    /// Validate that every observation site lies in `domain`.
    pub fn checked_in(self, domain: &Domain) -> Result<Self> {
        if domain.dim() != self.space_dim {
            return Err(PiftError::DimMismatch {
                expected: domain.dim(),
                got: self.space_dim,
            });
        }
        for i in 0..self.len() {
            domain.check(self.location(i))?;
        }
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn location(&self, i: usize) -> &[f64] {
        &self.locations[i * self.space_dim..(i + 1) * self.space_dim]
    }

    pub fn value(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_std * self.noise_std
    }

    pub fn space_dim(&self) -> usize {
        self.space_dim
    }
}

/// Gaussian negative log-likelihood `Σ_i (d_i - φ(x_i; θ))² / (2σ²)` up to
/// its θ-independent constant. With `subset = Some(S)` the sum runs over `S`
/// only and is rescaled by `N/|S|`, giving an unbiased single-batch
/// estimator when `S` is drawn uniformly.
pub fn neg_log_likelihood<B: FieldBasis>(
    basis: &B,
    theta: &[f64],
    data: &Dataset,
    subset: Option<&[usize]>,
) -> Result<f64> {
    sum_over(data, subset, |i| {
        let r = data.value(i) - basis.eval(theta, data.location(i))?;
        Ok(r * r / (2.0 * data.noise_var()))
    })
}

/// Gradient of [`neg_log_likelihood`], same subset convention.
pub fn neg_log_likelihood_grad<B: FieldBasis>(
    basis: &B,
    theta: &[f64],
    data: &Dataset,
    subset: Option<&[usize]>,
    out: &mut [f64],
) -> Result<()> {
    if out.len() != basis.dim() {
        return Err(PiftError::DimMismatch { expected: basis.dim(), got: out.len() });
    }
    out.iter_mut().for_each(|v| *v = 0.0);
    let mut feat = vec![0.0; basis.dim()];
    let scale = subset_scale(data, subset)?;
    let inv_var = 1.0 / data.noise_var();
    let mut each = |i: usize| -> Result<()> {
        let x = data.location(i);
        let r = data.value(i) - basis.eval(theta, x)?;
        basis.features(x, &mut feat);
        for (o, f) in out.iter_mut().zip(&feat) {
            *o -= scale * inv_var * r * f;
        }
        Ok(())
    };
    match subset {
        None => {
            for i in 0..data.len() {
                each(i)?;
            }
        }
        Some(s) => {
            for &i in s {
                check_index(data, i)?;
                each(i)?;
            }
        }
    }
    Ok(())
}

fn check_index(data: &Dataset, i: usize) -> Result<()> {
    if i >= data.len() {
        return Err(PiftError::DimMismatch { expected: data.len(), got: i + 1 });
    }
    Ok(())
}

fn subset_scale(data: &Dataset, subset: Option<&[usize]>) -> Result<f64> {
    match subset {
        None => Ok(1.0),
        Some(s) => {
            if s.is_empty() {
                return Err(PiftError::Empty { what: "data subset" });
            }
            Ok(data.len() as f64 / s.len() as f64)
        }
    }
}

fn sum_over(
    data: &Dataset,
    subset: Option<&[usize]>,
    mut term: impl FnMut(usize) -> Result<f64>,
) -> Result<f64> {
    let scale = subset_scale(data, subset)?;
    let mut acc = 0.0;
    match subset {
        None => {
            for i in 0..data.len() {
                acc += term(i)?;
            }
        }
        Some(s) => {
            for &i in s {
                check_index(data, i)?;
                acc += term(i)?;
            }
        }
    }
    Ok(scale * acc)
}

/// Data-term features tabulated once, so likelihood evaluations inside
/// sampler loops are matrix-vector products.
pub struct CachedLikelihood {
    feat: DMatrix<f64>,
    offset: DVector<f64>,
    values: DVector<f64>,
    inv_var: f64,
}

impl CachedLikelihood {
    pub fn new<B: FieldBasis>(basis: &B, data: &Dataset) -> Result<Self> {
        if data.space_dim() != basis.space_dim() {
            return Err(PiftError::DimMismatch {
                expected: basis.space_dim(),
                got: data.space_dim(),
            });
        }
        let n = data.len();
        let dim = basis.dim();
        let mut feat = DMatrix::zeros(n, dim);
        let mut offset = DVector::zeros(n);
        let mut row = vec![0.0; dim];
        for i in 0..n {
            let x = data.location(i);
            basis.check_point(x)?;
            basis.features(x, &mut row);
            for j in 0..dim {
                feat[(i, j)] = row[j];
            }
            offset[i] = basis.offset(x);
        }
        Ok(CachedLikelihood {
            feat,
            offset,
            values: DVector::from_row_slice(data.values()),
            inv_var: 1.0 / data.noise_var(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn residuals(&self, theta: &[f64]) -> DVector<f64> {
        let th = DVector::from_column_slice(theta);
        &self.values - (&self.feat * th + &self.offset)
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        let r = self.residuals(theta);
        0.5 * self.inv_var * r.norm_squared()
    }

    pub fn value_grad(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let r = self.residuals(theta);
        let value = 0.5 * self.inv_var * r.norm_squared();
        let grad = self.feat.tr_mul(&r) * (-self.inv_var);
        (value, grad.iter().copied().collect())
    }

    /// Mini-batch gradient over `indices` (uniform draws, with-replacement
    /// allowed), rescaled by `N/|indices|`; added into `out`.
    pub fn add_grad_subset(&self, theta: &[f64], indices: &[usize], out: &mut [f64]) -> Result<()> {
        if indices.is_empty() {
            return Err(PiftError::Empty { what: "data subset" });
        }
        let n = self.len();
        let scale = n as f64 / indices.len() as f64;
        let r = self.residuals(theta);
        for &i in indices {
            if i >= n {
                return Err(PiftError::DimMismatch { expected: n, got: i + 1 });
            }
            let c = -scale * self.inv_var * r[i];
            for (j, o) in out.iter_mut().enumerate() {
                *o += c * self.feat[(i, j)];
            }
        }
        Ok(())
    }
}

/// The cached information Hamiltonian `H(θ) = ℓ(d, θ) + β U(θ)`; with no
/// data it degenerates to the prior potential `β U(θ)`.
pub struct InfoHamiltonian<'a, B: FieldBasis> {
    energy: CachedEnergy<'a, B>,
    likelihood: Option<CachedLikelihood>,
    beta: f64,
    dim: usize,
}

impl<'a, B: FieldBasis> InfoHamiltonian<'a, B> {
    pub fn new(
        model: &'a EnergyModel,
        basis: &'a B,
        quad: &Quadrature,
        data: Option<&Dataset>,
        beta: f64,
    ) -> Result<Self> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(PiftError::InvalidConfig("β must be positive and finite".into()));
        }
        let energy = CachedEnergy::new(model, basis, quad)?;
        let likelihood = match data {
            Some(d) if !d.is_empty() => Some(CachedLikelihood::new(basis, d)?),
            _ => None,
        };
        Ok(InfoHamiltonian { energy, likelihood, beta, dim: basis.dim() })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn value(&self, theta: &[f64]) -> Result<f64> {
        let mut h = self.beta * self.energy.value(theta)?;
        if let Some(l) = &self.likelihood {
            h += l.value(theta);
        }
        Ok(h)
    }

    pub fn value_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (u, ug) = self.energy.value_grad(theta)?;
        let mut h = self.beta * u;
        let mut g: Vec<f64> = ug.iter().map(|v| self.beta * v).collect();
        if let Some(l) = &self.likelihood {
            let (lv, lg) = l.value_grad(theta);
            h += lv;
            for (a, b) in g.iter_mut().zip(&lg) {
                *a += b;
            }
        }
        Ok((h, g))
    }
}

/// Residual-penalty training loss over collocation quadrature:
///
/// ```text
/// L(θ) = w_data Σ_i (d_i - φ(x_i))²  +  w_resid Σ_j w_j r(x_j)².
/// ```
///
/// With `w_data = 1/(2σ²)` and `w_resid = β` this is *identical* to the
/// information Hamiltonian of the squared-residual energy evaluated on the
/// same quadrature rule — penalty training is MAP estimation under a
/// strong-form Gibbs prior.
pub fn pinn_loss<B: FieldBasis>(
    basis: &B,
    theta: &[f64],
    data: &Dataset,
    w_data: f64,
    op: &ResidualOp,
    colloc: &Quadrature,
    w_resid: f64,
) -> Result<f64> {
    let mut loss = 0.0;
    for i in 0..data.len() {
        let r = data.value(i) - basis.eval(theta, data.location(i))?;
        loss += w_data * r * r;
    }
    for (x, w) in colloc.iter() {
        let r = op.residual_at(basis, theta, x)?;
        loss += w_resid * w * r * r;
    }
    Ok(loss)
}

/// Negative log-posterior of the Bayesian collocation formulation: Gaussian
/// data noise `σ`, Gaussian residual "noise" `σ_r` at `m` collocation
/// points, and an optional isotropic Gaussian prior `σ_θ` on coefficients
/// (`None` = improper flat prior):
///
/// ```text
/// Σ_i (d_i-φ(x_i))²/(2σ²) + Σ_j r(x_j)²/(2σ_r²) + Σ_k θ_k²/(2σ_θ²).
/// ```
///
/// On a unit-volume domain with `σ_r² = m/(2β)` and a flat coefficient
/// prior the residual term equals `β U` for the squared-residual energy
/// with equal-weight quadrature on the same points, so this coincides with
/// the information Hamiltonian.
pub fn bpinn_neg_log_posterior<B: FieldBasis>(
    basis: &B,
    theta: &[f64],
    data: &Dataset,
    op: &ResidualOp,
    colloc_points: &[f64],
    sigma_r: f64,
    sigma_theta: Option<f64>,
) -> Result<f64> {
    if !(sigma_r > 0.0) {
        return Err(PiftError::InvalidConfig("residual noise scale must be positive".into()));
    }
    let sd = basis.space_dim();
    if colloc_points.len() % sd != 0 {
        return Err(PiftError::DimMismatch {
            expected: sd * (colloc_points.len() / sd + 1),
            got: colloc_points.len(),
        });
    }
    let mut nlp = neg_log_likelihood(basis, theta, data, None)?;
    let inv = 1.0 / (2.0 * sigma_r * sigma_r);
    for x in colloc_points.chunks_exact(sd) {
        let r = op.residual_at(basis, theta, x)?;
        nlp += inv * r * r;
    }
    if let Some(st) = sigma_theta {
        if !(st > 0.0) {
            return Err(PiftError::InvalidConfig("coefficient prior scale must be positive".into()));
        }
        let inv_t = 1.0 / (2.0 * st * st);
        nlp += theta.iter().map(|t| inv_t * t * t).sum::<f64>();
    }
    Ok(nlp)
}

/// Prior on one unconstrained hyperparameter coordinate. Positive physical
/// constants are carried in log space ([`crate::energy::LambdaEntry`]), so
/// the scale-invariant prior `p(x) ∝ 1/x` is *flat* there — `Jeffreys` and
/// `Flat` contribute nothing and differ only in declared intent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaPrior {
    /// Scale-invariant prior on a log-coordinate: zero potential.
    Jeffreys,
    /// Improper flat prior: zero potential.
    Flat,
    /// Gaussian on the unconstrained coordinate.
    Gaussian { mean: f64, std: f64 },
}

impl LambdaPrior {
    pub fn neg_log(&self, v: f64) -> f64 {
        match *self {
            LambdaPrior::Jeffreys | LambdaPrior::Flat => 0.0,
            LambdaPrior::Gaussian { mean, std } => {
                let z = (v - mean) / std;
                0.5 * z * z
            }
        }
    }

    pub fn d_neg_log(&self, v: f64) -> f64 {
        match *self {
            LambdaPrior::Jeffreys | LambdaPrior::Flat => 0.0,
            LambdaPrior::Gaussian { mean, std } => (v - mean) / (std * std),
        }
    }
}

/// One prior per λ entry.
#[derive(Debug, Clone, Default)]
pub struct LambdaPriors(pub Vec<LambdaPrior>);

impl LambdaPriors {
    pub fn flat(dim: usize) -> Self {
        LambdaPriors(vec![LambdaPrior::Flat; dim])
    }

    pub fn standard_normal(dim: usize) -> Self {
        LambdaPriors(vec![LambdaPrior::Gaussian { mean: 0.0, std: 1.0 }; dim])
    }

    pub fn check(&self, lambda: &[f64]) -> Result<()> {
        if lambda.len() != self.0.len() {
            return Err(PiftError::DimMismatch { expected: self.0.len(), got: lambda.len() });
        }
        Ok(())
    }

    pub fn neg_log(&self, lambda: &[f64]) -> Result<f64> {
        self.check(lambda)?;
        Ok(self.0.iter().zip(lambda).map(|(p, &v)| p.neg_log(v)).sum())
    }

    pub fn grad(&self, lambda: &[f64]) -> Result<Vec<f64>> {
        self.check(lambda)?;
        Ok(self.0.iter().zip(lambda).map(|(p, &v)| p.d_neg_log(v)).collect())
    }
}
