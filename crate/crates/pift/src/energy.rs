//! Energy functionals that define physics-informed field priors.
//!
//! A PDE whose solution minimizes an energy `U[φ] = ∫ u(x, φ, ∇φ) dx` induces
//! a Gibbs measure `p(φ) ∝ exp(-β U[φ])` over fields: at small `β` the prior
//! is diffuse, at large `β` it concentrates on the solution of the
//! variational problem. Restricted to an affine parameterization
//! ([`crate::basis::FieldBasis`]) the energy becomes an ordinary function of
//! the coefficients θ, and this module supplies everything samplers need:
//!
//! * pointwise densities `u` and their partials ([`EnergyModel::density`]);
//! * coefficient gradients, pointwise and integrated
//!   ([`EnergyModel::grad_theta_density`], [`grad_theta_total_energy`]);
//! * deterministic quadrature totals ([`total_energy`]) and a feature-matrix
//!   cache ([`CachedEnergy`]) for repeated evaluation at fixed nodes;
//! * unbiased single-batch estimators of `∇_θ U` for stochastic-gradient
//!   Langevin sampling ([`stochastic_grad_energy`]);
//! * gradients with respect to physical parameters in log space
//!   ([`grad_lambda_density`]), the building block of nested inversion.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::basis::{FieldBasis, KleBasis};
use crate::error::{PiftError, Result};
use crate::grid::{Quadrature, SpatialDensity};
use crate::par;

/// Closed-form scalar source functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SourceFn {
    Zero,
    Constant(f64),
    /// `exp(-x)`.
    ExpNegX,
    /// `cos(ω x)`.
    CosFreq(f64),
    /// `a exp(-(x - c)² / (2 w²))` — smooth and effectively compactly
    /// supported, convenient for Green's-function residual checks.
    GaussianBump { center: f64, width: f64, amplitude: f64 },
    /// The source that makes `φ*(x, y) = a exp(-(x²+y²)) sin(πx) sin(πy)` an
    /// exact steady state of the Allen-Cahn equation with interface width ε:
    /// `f = -ε ∇²φ* + φ*(φ*² - 1)`.
    AllenCahnManufactured { epsilon: f64, amplitude: f64 },
}

impl SourceFn {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            SourceFn::Zero => 0.0,
            SourceFn::Constant(c) => c,
            SourceFn::ExpNegX => (-x[0]).exp(),
            SourceFn::CosFreq(w) => (w * x[0]).cos(),
            SourceFn::GaussianBump { center, width, amplitude } => {
                let r = (x[0] - center) / width;
                amplitude * (-0.5 * r * r).exp()
            }
            SourceFn::AllenCahnManufactured { epsilon, amplitude } => {
                use crate::basis::WellInformed2d;
                let phi = amplitude * WellInformed2d::shape(x[0], x[1]);
                let lap = amplitude * WellInformed2d::shape_lap(x[0], x[1]);
                -epsilon * lap + phi * (phi * phi - 1.0)
            }
        }
    }
}

/// A source term appearing linearly in an energy density.
#[derive(Debug, Clone)]
pub enum SourceTerm {
    /// A fixed closed-form function.
    Fixed(SourceFn),
    /// Convex blend `γ · primary + (1-γ) · secondary` between two candidate
    /// sources — the knob for controlled model-form error.
    Blend { gamma: f64, primary: SourceFn, secondary: SourceFn },
    /// A Karhunen-Loève expansion with free coefficients: the source itself
    /// is an unknown field, inferred alongside the physical constants.
    Kle { basis: Arc<KleBasis>, coeffs: Vec<f64> },
}

impl SourceTerm {
    pub fn zero() -> Self {
        SourceTerm::Fixed(SourceFn::Zero)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            SourceTerm::Fixed(f) => f.eval(x),
            SourceTerm::Blend { gamma, primary, secondary } => {
                gamma * primary.eval(x) + (1.0 - gamma) * secondary.eval(x)
            }
            SourceTerm::Kle { basis, coeffs } => {
                let mut b = vec![0.0; basis.dim()];
                basis.features(x, &mut b);
                b.iter().zip(coeffs).map(|(f, c)| f * c).sum()
            }
        }
    }

    /// `∂(source)/∂c_m` for a KLE source; errors for fixed sources.
    pub fn coeff_features(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            SourceTerm::Kle { basis, .. } => {
                let mut b = vec![0.0; basis.dim()];
                basis.features(x, &mut b);
                Ok(b)
            }
            _ => Err(PiftError::InvalidConfig(
                "source has no free coefficients".into(),
            )),
        }
    }

    /// Number of free coefficients (0 for fixed sources).
    pub fn coeff_count(&self) -> usize {
        match self {
            SourceTerm::Kle { coeffs, .. } => coeffs.len(),
            _ => 0,
        }
    }

    fn set_coeff(&mut self, m: usize, value: f64) -> Result<()> {
        match self {
            SourceTerm::Kle { coeffs, .. } => {
                if m >= coeffs.len() {
                    return Err(PiftError::DimMismatch { expected: coeffs.len(), got: m + 1 });
                }
                coeffs[m] = value;
                Ok(())
            }
            _ => Err(PiftError::InvalidConfig(
                "source has no free coefficients".into(),
            )),
        }
    }
}

/// The differential-operator residual `r(x) = D[φ](x) - f(x)` of a PDE,
/// evaluated from the field value and Laplacian. `r = 0` everywhere is the
/// strong form of the equation.
#[derive(Debug, Clone)]
pub enum ResidualOp {
    /// `D ∇²φ + q` (steady heat/diffusion with source `q`).
    Heat { conductivity: f64, source: SourceTerm },
    /// `D ∇²φ - γκφ³ - (1-γ)φ - f` (cubic reaction-diffusion, blendable).
    Cubic { conductivity: f64, kappa: f64, quartic_blend: f64, source: SourceTerm },
    /// `ε ∇²φ - φ(φ² - 1) + f` (steady Allen-Cahn).
    AllenCahn { epsilon: f64, source: SourceTerm },
}

impl ResidualOp {
    pub fn source(&self) -> &SourceTerm {
        match self {
            ResidualOp::Heat { source, .. }
            | ResidualOp::Cubic { source, .. }
            | ResidualOp::AllenCahn { source, .. } => source,
        }
    }

    fn source_mut(&mut self) -> &mut SourceTerm {
        match self {
            ResidualOp::Heat { source, .. }
            | ResidualOp::Cubic { source, .. }
            | ResidualOp::AllenCahn { source, .. } => source,
        }
    }

    /// Residual value given field value, Laplacian and source value.
    pub fn residual(&self, phi: f64, lap: f64, f: f64) -> f64 {
        match *self {
            ResidualOp::Heat { conductivity, .. } => conductivity * lap + f,
            ResidualOp::Cubic { conductivity, kappa, quartic_blend, .. } => {
                conductivity * lap
                    - quartic_blend * kappa * phi.powi(3)
                    - (1.0 - quartic_blend) * phi
                    - f
            }
            ResidualOp::AllenCahn { epsilon, .. } => {
                epsilon * lap - phi * (phi * phi - 1.0) + f
            }
        }
    }

    /// Convenience: residual at a point for a parameterized field.
    pub fn residual_at<B: FieldBasis>(&self, basis: &B, theta: &[f64], x: &[f64]) -> Result<f64> {
        let phi = basis.eval(theta, x)?;
        let lap = basis.eval_lap(theta, x)?;
        Ok(self.residual(phi, lap, self.source().eval(x)))
    }

    fn d_phi(&self, phi: f64) -> f64 {
        match *self {
            ResidualOp::Heat { .. } => 0.0,
            ResidualOp::Cubic { kappa, quartic_blend, .. } => {
                -3.0 * quartic_blend * kappa * phi * phi - (1.0 - quartic_blend)
            }
            ResidualOp::AllenCahn { .. } => -3.0 * phi * phi + 1.0,
        }
    }

    fn d_lap(&self) -> f64 {
        match *self {
            ResidualOp::Heat { conductivity, .. }
            | ResidualOp::Cubic { conductivity, .. } => conductivity,
            ResidualOp::AllenCahn { epsilon, .. } => epsilon,
        }
    }

    /// `∂r/∂(source value)`.
    fn d_source(&self) -> f64 {
        match self {
            ResidualOp::Heat { .. } | ResidualOp::AllenCahn { .. } => 1.0,
            ResidualOp::Cubic { .. } => -1.0,
        }
    }
}

/// An energy density `u(x, φ, ∇φ [, ∇²φ])` defining a Gibbs field prior
/// `p(φ) ∝ exp(-β ∫ u)`.
///
/// Sign conventions (fixed by the variational identities: minimizers solve
/// the corresponding PDE):
///
/// * `DirichletHeat`:  `u = ½ D |∇φ|² - φ q`          ⇒ `D ∇²φ + q = 0`
/// * `CubicNonlinear`: `u = ½ D |∇φ|² + γ¼κφ⁴ + ½(1-γ)φ² + φ f`
///                                                     ⇒ `D ∇²φ - γκφ³ - (1-γ)φ = f`
/// * `AllenCahn`:      `u = ½ ε‖∇φ‖² + ¼(1-φ²)² - f φ` ⇒ `ε ∇²φ - φ(φ²-1) + f = 0`
/// * `SquaredResidual`: `u = r²` for a [`ResidualOp`] — the strong-form
///   penalty used by collocation-style schemes.
#[derive(Debug, Clone)]
pub enum EnergyModel {
    DirichletHeat { conductivity: f64, source: SourceTerm },
    CubicNonlinear { conductivity: f64, kappa: f64, quartic_blend: f64, source: SourceTerm },
    AllenCahn { epsilon: f64, source: SourceTerm },
    SquaredResidual { op: ResidualOp },
}

/// Partials of the density at one point, the common currency of every
/// gradient in this module.
#[derive(Debug, Clone, Copy)]
pub struct DensityPartials {
    pub value: f64,
    /// ∂u/∂φ
    pub wrt_phi: f64,
    /// ∂u/∂(∇φ), one entry per spatial axis (second unused in 1-d).
    pub wrt_grad: [f64; 2],
    /// ∂u/∂(∇²φ) — nonzero only for `SquaredResidual`.
    pub wrt_lap: f64,
}

impl EnergyModel {
    /// Whether densities need the field Laplacian.
    pub fn needs_laplacian(&self) -> bool {
        matches!(self, EnergyModel::SquaredResidual { .. })
    }

    pub fn source(&self) -> &SourceTerm {
        match self {
            EnergyModel::DirichletHeat { source, .. }
            | EnergyModel::CubicNonlinear { source, .. }
            | EnergyModel::AllenCahn { source, .. } => source,
            EnergyModel::SquaredResidual { op } => op.source(),
        }
    }

    pub fn source_mut(&mut self) -> &mut SourceTerm {
        match self {
            EnergyModel::DirichletHeat { source, .. }
            | EnergyModel::CubicNonlinear { source, .. }
            | EnergyModel::AllenCahn { source, .. } => source,
            EnergyModel::SquaredResidual { op } => op.source_mut(),
        }
    }

    /// Density and its partials from raw field data. `grad` has one entry per
    /// spatial axis; `lap` is only read by residual models; `f` is the source
    /// value at the point.
    pub fn partials_raw(&self, phi: f64, grad: &[f64], lap: f64, f: f64) -> DensityPartials {
        let grad_sq: f64 = grad.iter().map(|g| g * g).sum();
        let mut wrt_grad = [0.0; 2];
        match *self {
            EnergyModel::DirichletHeat { conductivity, .. } => {
                for (o, g) in wrt_grad.iter_mut().zip(grad) {
                    *o = conductivity * g;
                }
                DensityPartials {
                    value: 0.5 * conductivity * grad_sq - phi * f,
                    wrt_phi: -f,
                    wrt_grad,
                    wrt_lap: 0.0,
                }
            }
            EnergyModel::CubicNonlinear { conductivity, kappa, quartic_blend, .. } => {
                for (o, g) in wrt_grad.iter_mut().zip(grad) {
                    *o = conductivity * g;
                }
                let phi2 = phi * phi;
                DensityPartials {
                    value: 0.5 * conductivity * grad_sq
                        + quartic_blend * 0.25 * kappa * phi2 * phi2
                        + 0.5 * (1.0 - quartic_blend) * phi2
                        + phi * f,
                    wrt_phi: quartic_blend * kappa * phi2 * phi
                        + (1.0 - quartic_blend) * phi
                        + f,
                    wrt_grad,
                    wrt_lap: 0.0,
                }
            }
            EnergyModel::AllenCahn { epsilon, .. } => {
                for (o, g) in wrt_grad.iter_mut().zip(grad) {
                    *o = epsilon * g;
                }
                let well = 1.0 - phi * phi;
                DensityPartials {
                    value: 0.5 * epsilon * grad_sq + 0.25 * well * well - f * phi,
                    wrt_phi: phi * phi * phi - phi - f,
                    wrt_grad,
                    wrt_lap: 0.0,
                }
            }
            EnergyModel::SquaredResidual { ref op } => {
                let r = op.residual(phi, lap, f);
                DensityPartials {
                    value: r * r,
                    wrt_phi: 2.0 * r * op.d_phi(phi),
                    wrt_grad,
                    wrt_lap: 2.0 * r * op.d_lap(),
                }
            }
        }
    }

    /// Density value from raw field data at `x`.
    pub fn density(&self, x: &[f64], phi: f64, grad: &[f64], lap: f64) -> f64 {
        self.partials_raw(phi, grad, lap, self.source().eval(x)).value
    }

    /// Density of a parameterized field at a point.
    pub fn density_at<B: FieldBasis>(&self, basis: &B, theta: &[f64], x: &[f64]) -> Result<f64> {
        let phi = basis.eval(theta, x)?;
        let grad = basis.eval_dx(theta, x)?;
        let lap = if self.needs_laplacian() { basis.eval_lap(theta, x)? } else { 0.0 };
        Ok(self.density(x, phi, &grad, lap))
    }

    /// Coefficient gradient of the density at a point (chain rule through the
    /// affine field map), written into `out` (length `basis.dim()`).
    pub fn grad_theta_density<B: FieldBasis>(
        &self,
        basis: &B,
        theta: &[f64],
        x: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        basis.check_theta(theta)?;
        if out.len() != basis.dim() {
            return Err(PiftError::DimMismatch { expected: basis.dim(), got: out.len() });
        }
        let sd = basis.space_dim();
        let phi = basis.eval(theta, x)?;
        let grad = basis.eval_dx(theta, x)?;
        let need_lap = self.needs_laplacian();
        let lap = if need_lap { basis.eval_lap(theta, x)? } else { 0.0 };
        let p = self.partials_raw(phi, &grad, lap, self.source().eval(x));

        let mut b = vec![0.0; basis.dim()];
        basis.features(x, &mut b);
        let mut bdx = vec![0.0; basis.dim() * sd];
        basis.features_dx(x, &mut bdx);
        let mut blap = vec![0.0; basis.dim()];
        if need_lap {
            basis.features_lap(x, &mut blap);
        }
        for j in 0..basis.dim() {
            let mut g = p.wrt_phi * b[j];
            for a in 0..sd {
                g += p.wrt_grad[a] * bdx[j * sd + a];
            }
            if need_lap {
                g += p.wrt_lap * blap[j];
            }
            out[j] = g;
        }
        Ok(())
    }

    /// ∂u/∂(conductivity-like parameter): `D` for heat and cubic models, `ε`
    /// for Allen-Cahn, the operator coefficient for residual models.
    fn conductivity_partial(&self, phi: f64, grad: &[f64], lap: f64, f: f64) -> f64 {
        let grad_sq: f64 = grad.iter().map(|g| g * g).sum();
        match self {
            EnergyModel::DirichletHeat { .. }
            | EnergyModel::CubicNonlinear { .. }
            | EnergyModel::AllenCahn { .. } => 0.5 * grad_sq,
            EnergyModel::SquaredResidual { op } => {
                2.0 * op.residual(phi, lap, f) * lap
            }
        }
    }

    fn kappa_partial(&self, phi: f64, lap: f64, f: f64) -> Result<f64> {
        match self {
            EnergyModel::CubicNonlinear { quartic_blend, .. } => {
                Ok(quartic_blend * 0.25 * phi.powi(4))
            }
            EnergyModel::SquaredResidual {
                op: op @ ResidualOp::Cubic { quartic_blend, .. },
            } => Ok(2.0 * op.residual(phi, lap, f) * (-quartic_blend * phi.powi(3))),
            _ => Err(PiftError::InvalidConfig(
                "model has no κ parameter".into(),
            )),
        }
    }

    /// ∂u/∂(source value at the point).
    fn source_value_partial(&self, phi: f64, lap: f64, f: f64) -> f64 {
        match self {
            EnergyModel::DirichletHeat { .. } | EnergyModel::AllenCahn { .. } => -phi,
            EnergyModel::CubicNonlinear { .. } => phi,
            EnergyModel::SquaredResidual { op } => {
                2.0 * op.residual(phi, lap, f) * op.d_source()
            }
        }
    }

    fn conductivity(&self) -> f64 {
        match self {
            EnergyModel::DirichletHeat { conductivity, .. }
            | EnergyModel::CubicNonlinear { conductivity, .. } => *conductivity,
            EnergyModel::AllenCahn { epsilon, .. } => *epsilon,
            EnergyModel::SquaredResidual { op } => op.d_lap(),
        }
    }

    fn set_conductivity(&mut self, value: f64) {
        match self {
            EnergyModel::DirichletHeat { conductivity, .. }
            | EnergyModel::CubicNonlinear { conductivity, .. } => *conductivity = value,
            EnergyModel::AllenCahn { epsilon, .. } => *epsilon = value,
            EnergyModel::SquaredResidual { op } => match op {
                ResidualOp::Heat { conductivity, .. }
                | ResidualOp::Cubic { conductivity, .. } => *conductivity = value,
                ResidualOp::AllenCahn { epsilon, .. } => *epsilon = value,
            },
        }
    }

    fn kappa(&self) -> Result<f64> {
        match self {
            EnergyModel::CubicNonlinear { kappa, .. } => Ok(*kappa),
            EnergyModel::SquaredResidual { op: ResidualOp::Cubic { kappa, .. } } => Ok(*kappa),
            _ => Err(PiftError::InvalidConfig("model has no κ parameter".into())),
        }
    }

    fn set_kappa(&mut self, value: f64) -> Result<()> {
        match self {
            EnergyModel::CubicNonlinear { kappa, .. } => {
                *kappa = value;
                Ok(())
            }
            EnergyModel::SquaredResidual { op: ResidualOp::Cubic { kappa, .. } } => {
                *kappa = value;
                Ok(())
            }
            _ => Err(PiftError::InvalidConfig("model has no κ parameter".into())),
        }
    }
}

/// One inferable physical parameter. Positive constants are carried in log
/// space so the unconstrained Langevin updates respect positivity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaEntry {
    /// `log β` — the inverse temperature itself.
    LogBeta,
    /// `log D` (or `log ε` for Allen-Cahn).
    LogConductivity,
    /// `log κ`.
    LogKappa,
    /// The `m`-th coefficient of a KLE source (identity transform; the
    /// natural prior is standard normal).
    SourceCoeff(usize),
}

/// Ordered list of inferable parameters; defines the layout of every
/// λ-vector passed to [`apply_lambda`] and [`grad_lambda_density`].
#[derive(Debug, Clone, Default)]
pub struct LambdaSpec {
    pub entries: Vec<LambdaEntry>,
}

impl LambdaSpec {
    pub fn new(entries: Vec<LambdaEntry>) -> Self {
        LambdaSpec { entries }
    }

    /// Spec with the `LogBeta` entry only.
    pub fn log_beta() -> Self {
        LambdaSpec { entries: vec![LambdaEntry::LogBeta] }
    }

    /// Append one entry per KLE source coefficient.
    pub fn with_source_coeffs(mut self, count: usize) -> Self {
        for m in 0..count {
            self.entries.push(LambdaEntry::SourceCoeff(m));
        }
        self
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn check(&self, lambda: &[f64]) -> Result<()> {
        if lambda.len() != self.entries.len() {
            return Err(PiftError::DimMismatch {
                expected: self.entries.len(),
                got: lambda.len(),
            });
        }
        Ok(())
    }

    /// Read the current parameter values of `(model, beta)` into λ layout.
    pub fn read(&self, model: &EnergyModel, beta: f64) -> Result<Vec<f64>> {
        self.entries
            .iter()
            .map(|e| match e {
                LambdaEntry::LogBeta => Ok(beta.ln()),
                LambdaEntry::LogConductivity => Ok(model.conductivity().ln()),
                LambdaEntry::LogKappa => model.kappa().map(f64::ln),
                LambdaEntry::SourceCoeff(m) => match model.source() {
                    SourceTerm::Kle { coeffs, .. } => {
                        coeffs.get(*m).copied().ok_or(PiftError::DimMismatch {
                            expected: coeffs.len(),
                            got: m + 1,
                        })
                    }
                    _ => Err(PiftError::InvalidConfig(
                        "source has no free coefficients".into(),
                    )),
                },
            })
            .collect()
    }
}

/// Produce the `(model, β)` pair described by a λ-vector, leaving entries not
/// mentioned in the spec at their template values.
pub fn apply_lambda(
    template: &EnergyModel,
    beta: f64,
    spec: &LambdaSpec,
    lambda: &[f64],
) -> Result<(EnergyModel, f64)> {
    spec.check(lambda)?;
    let mut model = template.clone();
    let mut beta_out = beta;
    for (entry, &v) in spec.entries.iter().zip(lambda) {
        match entry {
            LambdaEntry::LogBeta => beta_out = v.exp(),
            LambdaEntry::LogConductivity => model.set_conductivity(v.exp()),
            LambdaEntry::LogKappa => model.set_kappa(v.exp())?,
            LambdaEntry::SourceCoeff(m) => model.source_mut().set_coeff(*m, v)?,
        }
    }
    Ok((model, beta_out))
}

/// Gradient of the pointwise *Hamiltonian density* `h = β u(x, φ, ∇φ)` with
/// respect to the λ entries, evaluated at a parameterized field. Log-space
/// entries pick up their chain-rule factor:
/// `∂h/∂log β = β u`, `∂h/∂log D = β D ∂u/∂D`, `∂h/∂log κ = β κ ∂u/∂κ`,
/// and `∂h/∂c_m = β ∂u/∂f · ∂f/∂c_m` for source coefficients.
pub fn grad_lambda_density<B: FieldBasis>(
    model: &EnergyModel,
    basis: &B,
    theta: &[f64],
    x: &[f64],
    beta: f64,
    spec: &LambdaSpec,
) -> Result<Vec<f64>> {
    let phi = basis.eval(theta, x)?;
    let grad = basis.eval_dx(theta, x)?;
    let lap = if model.needs_laplacian() { basis.eval_lap(theta, x)? } else { 0.0 };
    let f = model.source().eval(x);
    let u = model.partials_raw(phi, &grad, lap, f).value;

    let coeff_feats = if spec
        .entries
        .iter()
        .any(|e| matches!(e, LambdaEntry::SourceCoeff(_)))
    {
        Some(model.source().coeff_features(x)?)
    } else {
        None
    };

    spec.entries
        .iter()
        .map(|entry| match entry {
            LambdaEntry::LogBeta => Ok(beta * u),
            LambdaEntry::LogConductivity => {
                let d = model.conductivity();
                Ok(beta * d * model.conductivity_partial(phi, &grad, lap, f))
            }
            LambdaEntry::LogKappa => {
                let k = model.kappa()?;
                Ok(beta * k * model.kappa_partial(phi, lap, f)?)
            }
            LambdaEntry::SourceCoeff(m) => {
                let feats = coeff_feats.as_ref().expect("features computed above");
                let df = feats.get(*m).copied().ok_or(PiftError::DimMismatch {
                    expected: feats.len(),
                    got: m + 1,
                })?;
                Ok(beta * model.source_value_partial(phi, lap, f) * df)
            }
        })
        .collect()
}

/// λ-gradient of the integrated Hamiltonian `β U(θ)` by quadrature:
/// `Σ_i w_i ∇_λ h(x_i)`.
pub fn grad_lambda_total<B: FieldBasis>(
    model: &EnergyModel,
    basis: &B,
    theta: &[f64],
    quad: &Quadrature,
    beta: f64,
    spec: &LambdaSpec,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; spec.dim()];
    for (x, w) in quad.iter() {
        let g = grad_lambda_density(model, basis, theta, x, beta, spec)?;
        for (o, v) in out.iter_mut().zip(&g) {
            *o += w * v;
        }
    }
    Ok(out)
}

/// Deterministic quadrature approximation of `U(θ) = ∫ u dx`.
pub fn total_energy<B: FieldBasis>(
    model: &EnergyModel,
    basis: &B,
    theta: &[f64],
    quad: &Quadrature,
) -> Result<f64> {
    if quad.is_empty() {
        return Err(PiftError::Empty { what: "quadrature" });
    }
    CachedEnergy::new(model, basis, quad)?.value(theta)
}

/// Quadrature approximation of `∇_θ U(θ)`.
pub fn grad_theta_total_energy<B: FieldBasis>(
    model: &EnergyModel,
    basis: &B,
    theta: &[f64],
    quad: &Quadrature,
) -> Result<Vec<f64>> {
    if quad.is_empty() {
        return Err(PiftError::Empty { what: "quadrature" });
    }
    Ok(CachedEnergy::new(model, basis, quad)?.value_grad(theta)?.1)
}

/// Unbiased estimator of `∇_θ U(θ)` from `n` points drawn from the sampling
/// density `q`: `(1/n) Σ_i ∇_θ u(x_i) / q(x_i)`.
pub fn stochastic_grad_energy<B: FieldBasis, Q: SpatialDensity, R: Rng + ?Sized>(
    model: &EnergyModel,
    basis: &B,
    theta: &[f64],
    n: usize,
    q: &Q,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(PiftError::InvalidConfig("spatial batch size must be positive".into()));
    }
    let mut acc = vec![0.0; basis.dim()];
    let mut g = vec![0.0; basis.dim()];
    for _ in 0..n {
        let x = q.sample(rng);
        let dens = q.density(&x);
        if dens <= 0.0 {
            return Err(PiftError::InvalidConfig(format!(
                "sampling density vanished at {x:?}"
            )));
        }
        model.grad_theta_density(basis, theta, &x, &mut g)?;
        for (a, v) in acc.iter_mut().zip(&g) {
            *a += v / dens;
        }
    }
    acc.iter_mut().for_each(|v| *v /= n as f64);
    Ok(acc)
}

/// Feature matrices of a basis tabulated on a fixed quadrature rule, so that
/// repeated energy/gradient evaluations (leapfrog trajectories, grid scans)
/// reduce to matrix-vector products instead of per-node transcendentals.
pub struct CachedEnergy<'a, B: FieldBasis> {
    model: &'a EnergyModel,
    basis: &'a B,
    weights: Vec<f64>,
    feat: DMatrix<f64>,
    feat_dx: Vec<DMatrix<f64>>,
    feat_lap: Option<DMatrix<f64>>,
    off: DVector<f64>,
    off_dx: Vec<DVector<f64>>,
    off_lap: Option<DVector<f64>>,
    src: Vec<f64>,
}

impl<'a, B: FieldBasis> CachedEnergy<'a, B> {
    pub fn new(model: &'a EnergyModel, basis: &'a B, quad: &Quadrature) -> Result<Self> {
        if quad.is_empty() {
            return Err(PiftError::Empty { what: "quadrature" });
        }
        if quad.space_dim() != basis.space_dim() {
            return Err(PiftError::DimMismatch {
                expected: basis.space_dim(),
                got: quad.space_dim(),
            });
        }
        let n = quad.len();
        let dim = basis.dim();
        let sd = basis.space_dim();
        let need_lap = model.needs_laplacian();
        for i in 0..n {
            basis.check_point(quad.node(i))?;
        }

        // Tabulate rows in parallel, then assemble the column-major matrices.
        struct Row {
            b: Vec<f64>,
            bdx: Vec<f64>,
            blap: Vec<f64>,
            off: f64,
            off_dx: Vec<f64>,
            off_lap: f64,
            src: f64,
        }
        let rows: Vec<Row> = par::map_indexed(n, |i| {
            let x = quad.node(i);
            let mut b = vec![0.0; dim];
            basis.features(x, &mut b);
            let mut bdx = vec![0.0; dim * sd];
            basis.features_dx(x, &mut bdx);
            let mut blap = vec![0.0; if need_lap { dim } else { 0 }];
            if need_lap {
                basis.features_lap(x, &mut blap);
            }
            let mut off_dx = vec![0.0; sd];
            basis.offset_dx(x, &mut off_dx);
            Row {
                b,
                bdx,
                blap,
                off: basis.offset(x),
                off_dx,
                off_lap: if need_lap { basis.offset_lap(x) } else { 0.0 },
                src: model.source().eval(x),
            }
        });

        let feat = DMatrix::from_fn(n, dim, |i, j| rows[i].b[j]);
        let feat_dx: Vec<DMatrix<f64>> = (0..sd)
            .map(|a| DMatrix::from_fn(n, dim, |i, j| rows[i].bdx[j * sd + a]))
            .collect();
        let feat_lap =
            need_lap.then(|| DMatrix::from_fn(n, dim, |i, j| rows[i].blap[j]));
        let off = DVector::from_fn(n, |i, _| rows[i].off);
        let off_dx: Vec<DVector<f64>> =
            (0..sd).map(|a| DVector::from_fn(n, |i, _| rows[i].off_dx[a])).collect();
        let off_lap = need_lap.then(|| DVector::from_fn(n, |i, _| rows[i].off_lap));
        let src = rows.iter().map(|r| r.src).collect();

        Ok(CachedEnergy {
            model,
            basis,
            weights: quad.weights().to_vec(),
            feat,
            feat_dx,
            feat_lap,
            off,
            off_dx,
            off_lap,
            src,
        })
    }

    pub fn node_count(&self) -> usize {
        self.weights.len()
    }

    fn field_at_nodes(
        &self,
        theta: &[f64],
    ) -> Result<(DVector<f64>, Vec<DVector<f64>>, Option<DVector<f64>>)> {
        self.basis.check_theta(theta)?;
        let th = DVector::from_column_slice(theta);
        let phi = &self.feat * &th + &self.off;
        let grads: Vec<DVector<f64>> = self
            .feat_dx
            .iter()
            .zip(&self.off_dx)
            .map(|(m, o)| m * &th + o)
            .collect();
        let lap = match (&self.feat_lap, &self.off_lap) {
            (Some(m), Some(o)) => Some(m * &th + o),
            _ => None,
        };
        Ok((phi, grads, lap))
    }

    /// `U(θ)` over the cached rule (deterministic chunked reduction).
    pub fn value(&self, theta: &[f64]) -> Result<f64> {
        let (phi, grads, lap) = self.field_at_nodes(theta)?;
        let sd = grads.len();
        Ok(par::sum_indexed(self.node_count(), |i| {
            let mut g = [0.0; 2];
            for a in 0..sd {
                g[a] = grads[a][i];
            }
            let l = lap.as_ref().map_or(0.0, |v| v[i]);
            self.weights[i]
                * self.model.partials_raw(phi[i], &g[..sd], l, self.src[i]).value
        }))
    }

    /// `(U(θ), ∇_θ U(θ))` over the cached rule.
    pub fn value_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (phi, grads, lap) = self.field_at_nodes(theta)?;
        let n = self.node_count();
        let sd = grads.len();
        // Per-node weighted partials, computed in parallel in index order.
        let parts: Vec<DensityPartials> = par::map_indexed(n, |i| {
            let mut g = [0.0; 2];
            for a in 0..sd {
                g[a] = grads[a][i];
            }
            let l = lap.as_ref().map_or(0.0, |v| v[i]);
            self.model.partials_raw(phi[i], &g[..sd], l, self.src[i])
        });
        let value: f64 = par::sum_indexed(n, |i| self.weights[i] * parts[i].value);

        let wphi = DVector::from_fn(n, |i, _| self.weights[i] * parts[i].wrt_phi);
        let mut grad = self.feat.tr_mul(&wphi);
        for a in 0..sd {
            let wg = DVector::from_fn(n, |i, _| self.weights[i] * parts[i].wrt_grad[a]);
            grad += self.feat_dx[a].tr_mul(&wg);
        }
        if let Some(fl) = &self.feat_lap {
            let wl = DVector::from_fn(n, |i, _| self.weights[i] * parts[i].wrt_lap);
            grad += fl.tr_mul(&wl);
        }
        Ok((value, grad.iter().copied().collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{BoundaryWrapped1d, Fourier1d, Fourier2d, WellInformed2d};
    use crate::findiff;
    use crate::grid::{Domain, TriangularRamp, Uniform};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cubic_model() -> EnergyModel {
        EnergyModel::CubicNonlinear {
            conductivity: 0.1,
            kappa: 1.0,
            quartic_blend: 1.0,
            source: SourceTerm::Fixed(SourceFn::CosFreq(4.0)),
        }
    }

    #[test]
    fn cubic_density_worked_example() {
        // x=0, φ=1, φ'=2, D=0.1, κ=1, f(0)=1:
        // 0.5·0.1·4 + 0.25·1 + 1·1 = 1.45.
        let m = cubic_model();
        let v = m.density(&[0.0], 1.0, &[2.0], 0.0);
        assert!((v - 1.45).abs() < 1e-15, "got {v}");
    }

    #[test]
    fn heat_density_signs() {
        // u = ½D(φ')² - φq: with q = e^{-x} at x = 0, φ = 2, φ' = 0 → -2.
        let m = EnergyModel::DirichletHeat {
            conductivity: 0.25,
            source: SourceTerm::Fixed(SourceFn::ExpNegX),
        };
        assert!((m.density(&[0.0], 2.0, &[0.0], 0.0) + 2.0).abs() < 1e-15);
    }

    #[test]
    fn allen_cahn_double_well_stationary_at_zero_field() {
        // ∂u/∂φ of ¼(1-φ²)² vanishes at φ = 0; with f = 0 the whole φ-partial
        // is zero.
        let m = EnergyModel::AllenCahn { epsilon: 0.01, source: SourceTerm::zero() };
        let p = m.partials_raw(0.0, &[0.3, -0.2], 0.0, 0.0);
        assert_eq!(p.wrt_phi, 0.0);
        // And the quartic well value at φ=0 is 1/4.
        let v = m.density(&[0.1, 0.2], 0.0, &[0.0, 0.0], 0.0);
        assert!((v - 0.25).abs() < 1e-15);
    }

    #[test]
    fn energy_blend_interpolates_quartic_and_quadratic_wells() {
        let mk = |gamma: f64| EnergyModel::CubicNonlinear {
            conductivity: 0.1,
            kappa: 2.0,
            quartic_blend: gamma,
            source: SourceTerm::zero(),
        };
        let phi: f64 = 1.3;
        let quartic = 0.25 * 2.0 * phi.powi(4);
        let quadratic = 0.5 * phi * phi;
        assert!((mk(1.0).density(&[0.5], phi, &[0.0], 0.0) - quartic).abs() < 1e-14);
        assert!((mk(0.0).density(&[0.5], phi, &[0.0], 0.0) - quadratic).abs() < 1e-14);
        let half = mk(0.5).density(&[0.5], phi, &[0.0], 0.0);
        assert!((half - 0.5 * (quartic + quadratic)).abs() < 1e-14);
    }

    #[test]
    fn source_blend_interpolates_endpoints() {
        let blend = |gamma| SourceTerm::Blend {
            gamma,
            primary: SourceFn::CosFreq(4.0),
            secondary: SourceFn::ExpNegX,
        };
        let x = [0.33];
        assert!((blend(1.0).eval(&x) - (4.0 * x[0]).cos()).abs() < 1e-15);
        assert!((blend(0.0).eval(&x) - (-x[0]).exp()).abs() < 1e-15);
    }

    #[test]
    fn grad_theta_density_matches_finite_differences() {
        let basis = BoundaryWrapped1d::new(Fourier1d::new(3, 0.0, 1.0).unwrap(), 0.0, 0.0);
        let models = [
            EnergyModel::DirichletHeat {
                conductivity: 0.25,
                source: SourceTerm::Fixed(SourceFn::ExpNegX),
            },
            cubic_model(),
            EnergyModel::SquaredResidual {
                op: ResidualOp::Cubic {
                    conductivity: 0.1,
                    kappa: 1.0,
                    quartic_blend: 0.7,
                    source: SourceTerm::Fixed(SourceFn::CosFreq(4.0)),
                },
            },
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for model in &models {
            for _ in 0..10 {
                let theta: Vec<f64> =
                    (0..basis.dim()).map(|_| rng.gen_range(-1.5..1.5)).collect();
                let x = [rng.gen_range(0.05..0.95)];
                let mut g = vec![0.0; basis.dim()];
                model.grad_theta_density(&basis, &theta, &x, &mut g).unwrap();
                let fd = findiff::grad(
                    |t| model.density_at(&basis, t, &x).unwrap(),
                    &theta,
                    1e-6,
                );
                let err = findiff::max_rel_err(&g, &fd, 1e-6);
                assert!(err < 1e-6, "θ-gradient rel err {err} for {model:?}");
            }
        }
    }

    #[test]
    fn grad_theta_density_matches_fd_in_2d() {
        let basis = Fourier2d::standard_nine();
        let model = EnergyModel::AllenCahn {
            epsilon: 0.01,
            source: SourceTerm::Fixed(SourceFn::AllenCahnManufactured {
                epsilon: 0.01,
                amplitude: 2.0,
            }),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..10 {
            let theta: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x = [rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9)];
            let mut g = vec![0.0; 9];
            model.grad_theta_density(&basis, &theta, &x, &mut g).unwrap();
            let fd =
                findiff::grad(|t| model.density_at(&basis, t, &x).unwrap(), &theta, 1e-6);
            let err = findiff::max_rel_err(&g, &fd, 1e-6);
            assert!(err < 1e-6, "2-d θ-gradient rel err {err}");
        }
    }

    #[test]
    fn manufactured_allen_cahn_source_zeroes_residual_at_truth() {
        // φ* = 2·shape solves εΔφ - φ(φ²-1) + f = 0 by construction.
        let eps = 0.01;
        let op = ResidualOp::AllenCahn {
            epsilon: eps,
            source: SourceTerm::Fixed(SourceFn::AllenCahnManufactured {
                epsilon: eps,
                amplitude: 2.0,
            }),
        };
        for (x, y) in [(0.3, -0.4), (0.0, 0.0), (0.71, 0.9), (-0.5, -0.5)] {
            let phi = 2.0 * WellInformed2d::shape(x, y);
            let lap = 2.0 * WellInformed2d::shape_lap(x, y);
            let f = op.source().eval(&[x, y]);
            let r = op.residual(phi, lap, f);
            assert!(r.abs() < 1e-12, "residual {r} at ({x}, {y})");
        }
    }

    #[test]
    fn total_energy_closed_form_quadratic_case() {
        // Boundary-wrapped constant inner term, zero source:
        // field = (1-x)·1 + x·0.1 + x(1-x)θ, so
        // U(θ) = ½D ∫ (Δφ + (1-2x)θ)² dx = ½D[(Δφ)² + θ²/3], Δφ = -0.9.
        let basis = BoundaryWrapped1d::new(Fourier1d::new(0, 0.0, 1.0).unwrap(), 1.0, 0.1);
        let model = EnergyModel::DirichletHeat {
            conductivity: 0.25,
            source: SourceTerm::zero(),
        };
        let quad = Quadrature::trapezoid(0.0, 1.0, 4097).unwrap();
        for theta in [-1.0, 0.0, 0.7, 2.5] {
            let got = total_energy(&model, &basis, &[theta], &quad).unwrap();
            let want = 0.5 * 0.25 * (0.81 + theta * theta / 3.0);
            assert!((got - want).abs() < 1e-7, "U({theta}) = {got}, want {want}");
        }
    }

    #[test]
    fn total_energy_gradient_matches_fd_and_convergence_is_second_order() {
        let basis = BoundaryWrapped1d::new(Fourier1d::new(2, 0.0, 1.0).unwrap(), 0.0, 0.0);
        let model = cubic_model();
        let theta = [0.4, -0.2, 0.9, 0.1, -0.6];
        let quad = Quadrature::trapezoid(0.0, 1.0, 2048).unwrap();
        let g = grad_theta_total_energy(&model, &basis, &theta, &quad).unwrap();
        let fd = findiff::grad(
            |t| total_energy(&model, &basis, t, &quad).unwrap(),
            &theta,
            1e-6,
        );
        assert!(findiff::max_rel_err(&g, &fd, 1e-8) < 1e-7);

        // Richardson: trapezoid error should fall ~4x when h halves.
        let exact = total_energy(&model, &basis, &theta,
            &Quadrature::trapezoid(0.0, 1.0, 65537).unwrap()).unwrap();
        let e1 = (total_energy(&model, &basis, &theta,
            &Quadrature::trapezoid(0.0, 1.0, 129).unwrap()).unwrap() - exact).abs();
        let e2 = (total_energy(&model, &basis, &theta,
            &Quadrature::trapezoid(0.0, 1.0, 257).unwrap()).unwrap() - exact).abs();
        let ratio = e1 / e2;
        assert!(ratio > 3.3 && ratio < 4.7, "convergence ratio {ratio}");
    }

    #[test]
    fn cached_energy_agrees_with_direct_evaluation() {
        let basis = Fourier2d::standard_nine();
        let model = EnergyModel::AllenCahn {
            epsilon: 0.01,
            source: SourceTerm::Fixed(SourceFn::AllenCahnManufactured {
                epsilon: 0.01,
                amplitude: 2.0,
            }),
        };
        let quad = Quadrature::tensor_trapezoid(&Domain::symmetric_square(), 33, 33).unwrap();
        let cache = CachedEnergy::new(&model, &basis, &quad).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let theta: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let direct: f64 = (0..quad.len())
                .map(|i| quad.weight(i) * model.density_at(&basis, &theta, quad.node(i)).unwrap())
                .sum();
            let (v, g) = cache.value_grad(&theta).unwrap();
            assert!((v - direct).abs() < 1e-10 * direct.abs().max(1.0));
            assert!((cache.value(&theta).unwrap() - v).abs() < 1e-12);
            let fd = findiff::grad(|t| cache.value(t).unwrap(), &theta, 1e-6);
            assert!(findiff::max_rel_err(&g, &fd, 1e-7) < 1e-6);
        }
    }

    #[test]
    fn stochastic_gradient_is_unbiased_under_uniform_and_ramp() {
        let basis = BoundaryWrapped1d::new(Fourier1d::new(1, 0.0, 1.0).unwrap(), 0.0, 0.0);
        let model = cubic_model();
        let theta = [0.5, -0.3, 0.8];
        let quad = Quadrature::trapezoid(0.0, 1.0, 8193).unwrap();
        let exact = grad_theta_total_energy(&model, &basis, &theta, &quad).unwrap();

        let n = 100_000;
        // Uniform proposal.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let uni = Uniform(Domain::unit_interval());
        check_unbiased(&model, &basis, &theta, &exact, n, &uni, &mut rng);
        // Non-uniform triangular proposal.
        let ramp = TriangularRamp { a: 0.0, b: 1.0 };
        check_unbiased(&model, &basis, &theta, &exact, n, &ramp, &mut rng);
    }

    fn check_unbiased<Q: SpatialDensity>(
        model: &EnergyModel,
        basis: &BoundaryWrapped1d,
        theta: &[f64],
        exact: &[f64],
        n: usize,
        q: &Q,
        rng: &mut ChaCha8Rng,
    ) {
        // Accumulate per-sample estimates to get mean and standard error.
        let dim = basis.dim();
        let mut sum = vec![0.0; dim];
        let mut sumsq = vec![0.0; dim];
        for _ in 0..n {
            let g = stochastic_grad_energy(model, basis, theta, 1, q, rng).unwrap();
            for j in 0..dim {
                sum[j] += g[j];
                sumsq[j] += g[j] * g[j];
            }
        }
        for j in 0..dim {
            let mean = sum[j] / n as f64;
            let var = (sumsq[j] / n as f64 - mean * mean).max(0.0);
            let se = (var / n as f64).sqrt();
            let dev = (mean - exact[j]).abs();
            assert!(
                dev <= 3.0 * se + 1e-12,
                "component {j}: mean {mean} vs exact {} (dev {dev}, 3se {})",
                exact[j],
                3.0 * se
            );
        }
    }

    #[test]
    fn lambda_gradients_match_finite_differences() {
        // Perturb each λ entry, rebuild the model, and FD the Hamiltonian
        // density h = β u at a point.
        let kernel = crate::kernel::Kernel1d::SquaredExponential {
            lengthscale: 0.3,
            variance: 1.0,
        };
        let kle = Arc::new(crate::basis::nystrom_kle(kernel, 0.0, 1.0, 48, 4).unwrap());
        let basis = BoundaryWrapped1d::new(Fourier1d::new(2, 0.0, 1.0).unwrap(), 0.0, 0.0);
        let model = EnergyModel::CubicNonlinear {
            conductivity: 0.1,
            kappa: 1.0,
            quartic_blend: 1.0,
            source: SourceTerm::Kle { basis: kle, coeffs: vec![0.4, -0.2, 0.1, 0.9] },
        };
        let beta = 250.0;
        let spec = LambdaSpec::new(vec![
            LambdaEntry::LogBeta,
            LambdaEntry::LogConductivity,
            LambdaEntry::LogKappa,
        ])
        .with_source_coeffs(4);
        let lambda0 = spec.read(&model, beta).unwrap();
        let theta = [0.3, -0.7, 0.2, 0.5, -0.1];
        let x = [0.41];

        let g = grad_lambda_density(&model, &basis, &theta, &x, beta, &spec).unwrap();
        let fd = findiff::grad(
            |lam| {
                let (m, b) = apply_lambda(&model, beta, &spec, lam).unwrap();
                b * m.density_at(&basis, &theta, &x).unwrap()
            },
            &lambda0,
            1e-6,
        );
        let err = findiff::max_rel_err(&g, &fd, 1e-8);
        assert!(err < 1e-6, "λ-gradient rel err {err}: {g:?} vs {fd:?}");
    }

    #[test]
    fn log_conductivity_gradient_closed_form() {
        // ∂(βu)/∂log D = β · D · ½(φ')².
        let model = cubic_model();
        let basis = BoundaryWrapped1d::new(Fourier1d::new(1, 0.0, 1.0).unwrap(), 0.0, 0.0);
        let theta = [1.0, 0.5, -0.5];
        let x = [0.63];
        let beta = 100.0;
        let spec = LambdaSpec::new(vec![LambdaEntry::LogConductivity]);
        let g = grad_lambda_density(&model, &basis, &theta, &x, beta, &spec).unwrap();
        let dphi = basis.eval_dx(&theta, &[x[0]]).unwrap()[0];
        let want = beta * 0.1 * 0.5 * dphi * dphi;
        assert!((g[0] - want).abs() < 1e-12, "{} vs {want}", g[0]);
    }

    #[test]
    fn log_beta_gradient_is_beta_times_density() {
        let model = cubic_model();
        let basis = BoundaryWrapped1d::new(Fourier1d::new(1, 0.0, 1.0).unwrap(), 0.0, 0.0);
        let theta = [0.2, -0.4, 0.9];
        let x = [0.27];
        let beta = 512.0;
        let spec = LambdaSpec::log_beta();
        let g = grad_lambda_density(&model, &basis, &theta, &x, beta, &spec).unwrap();
        let u = model.density_at(&basis, &theta, &x).unwrap();
        assert!((g[0] - beta * u).abs() < 1e-12);
    }

    #[test]
    fn apply_lambda_round_trips_through_read() {
        let model = cubic_model();
        let spec = LambdaSpec::new(vec![
            LambdaEntry::LogBeta,
            LambdaEntry::LogConductivity,
            LambdaEntry::LogKappa,
        ]);
        let lambda = [3.2f64.ln(), 0.05f64.ln(), 2.0f64.ln()];
        let (m, b) = apply_lambda(&model, 1.0, &spec, &lambda).unwrap();
        let back = spec.read(&m, b).unwrap();
        for (l, r) in lambda.iter().zip(&back) {
            assert!((l - r).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_lambda_entries_error() {
        let heat = EnergyModel::DirichletHeat {
            conductivity: 1.0,
            source: SourceTerm::zero(),
        };
        let spec = LambdaSpec::new(vec![LambdaEntry::LogKappa]);
        assert!(apply_lambda(&heat, 1.0, &spec, &[0.0]).is_err());
        let spec = LambdaSpec::new(vec![LambdaEntry::SourceCoeff(0)]);
        assert!(apply_lambda(&heat, 1.0, &spec, &[0.0]).is_err());
        let basis = Fourier1d::new(1, 0.0, 1.0).unwrap();
        assert!(grad_lambda_density(&heat, &basis, &[0.0; 3], &[0.5], 1.0, &spec).is_err());
    }

    #[test]
    fn empty_quadrature_and_bad_batch_are_errors() {
        let basis = Fourier1d::new(1, 0.0, 1.0).unwrap();
        let model = cubic_model();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let uni = Uniform(Domain::unit_interval());
        assert!(stochastic_grad_energy(&model, &basis, &[0.0; 3], 0, &uni, &mut rng).is_err());
    }
}
