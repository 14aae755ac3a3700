//! Finite-dimensional field parameterizations.
//!
//! Every parameterization here is affine in its coefficient vector:
//!
//! ```text
//! field(x; θ) = offset(x) + Σ_j θ_j B_j(x)
//! ```
//!
//! where `offset` carries any hard-wired boundary information and the `B_j`
//! are fixed shape functions. Energies, likelihoods and samplers only touch a
//! field through this interface, so coefficient gradients are exactly the
//! shape functions and all spatial derivatives are analytic.
//!
//! Available families:
//! * [`Fourier1d`] — constant plus `K` cosine/sine pairs on `[a, b]`;
//! * [`BoundaryWrapped1d`] — an inner Fourier field windowed by `t(1-t)` and
//!   shifted by the linear interpolant of the boundary values, so Dirichlet
//!   conditions hold exactly for every θ;
//! * [`Fourier2d`] — tensor cosine/sine modes on a rectangle;
//! * [`WellInformed2d`] — a single hand-crafted shape function matching the
//!   structure of a known solution;
//! * [`KleBasis`] — leading Karhunen-Loève modes of a covariance kernel,
//!   computed by Nyström quadrature ([`nystrom_kle`]).

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{PiftError, Result};
use crate::grid::{Domain, Quadrature};
use crate::kernel::Kernel1d;

/// An affine-in-coefficients field parameterization.
///
/// Implementors provide the shape functions and their spatial derivatives;
/// the provided methods assemble field values and gradients and enforce the
/// dimension/domain contract.
pub trait FieldBasis: Send + Sync {
    /// Number of coefficients.
    fn dim(&self) -> usize;

    /// The spatial domain the field is defined on.
    fn domain(&self) -> Domain;

    /// Coefficient-independent part of the field (boundary interpolant).
    fn offset(&self, x: &[f64]) -> f64;

    /// Shape functions `B_j(x)`, written into `out` (length `dim`).
    fn features(&self, x: &[f64], out: &mut [f64]);

    /// Spatial gradient of the offset, written into `out` (length `space_dim`).
    fn offset_dx(&self, x: &[f64], out: &mut [f64]);

    /// Spatial gradients of the shape functions, row-major
    /// `out[j * space_dim + a] = ∂B_j/∂x_a` (length `dim * space_dim`).
    fn features_dx(&self, x: &[f64], out: &mut [f64]);

    /// Laplacian of the offset.
    fn offset_lap(&self, x: &[f64]) -> f64;

    /// Laplacians `ΔB_j(x)`, written into `out` (length `dim`).
    fn features_lap(&self, x: &[f64], out: &mut [f64]);

    /// Spatial dimension, 1 or 2.
    fn space_dim(&self) -> usize {
        self.domain().dim()
    }

    /// Check a coefficient vector's length.
    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(PiftError::DimMismatch { expected: self.dim(), got: theta.len() });
        }
        Ok(())
    }

    /// Check a point against the domain (with boundary tolerance).
    fn check_point(&self, x: &[f64]) -> Result<()> {
        self.domain().check(x)
    }

    /// Field value `offset(x) + features(x) · θ`.
    fn eval(&self, theta: &[f64], x: &[f64]) -> Result<f64> {
        self.check_theta(theta)?;
        self.check_point(x)?;
        let mut b = vec![0.0; self.dim()];
        self.features(x, &mut b);
        Ok(self.offset(x) + dot(&b, theta))
    }

    /// Spatial gradient of the field, length `space_dim`.
    fn eval_dx(&self, theta: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        self.check_point(x)?;
        let sd = self.space_dim();
        let mut out = vec![0.0; sd];
        self.offset_dx(x, &mut out);
        let mut bdx = vec![0.0; self.dim() * sd];
        self.features_dx(x, &mut bdx);
        for j in 0..self.dim() {
            for a in 0..sd {
                out[a] += theta[j] * bdx[j * sd + a];
            }
        }
        Ok(out)
    }

    /// Laplacian of the field.
    fn eval_lap(&self, theta: &[f64], x: &[f64]) -> Result<f64> {
        self.check_theta(theta)?;
        self.check_point(x)?;
        let mut bl = vec![0.0; self.dim()];
        self.features_lap(x, &mut bl);
        Ok(self.offset_lap(x) + dot(&bl, theta))
    }

    /// Coefficient gradient of the field value: exactly the shape functions,
    /// independent of θ.
    fn grad_theta(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let mut b = vec![0.0; self.dim()];
        self.features(x, &mut b);
        Ok(b)
    }

    /// Coefficient gradient of the spatial derivative, row-major
    /// `dim x space_dim`.
    fn grad_theta_dx(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let mut b = vec![0.0; self.dim() * self.space_dim()];
        self.features_dx(x, &mut b);
        Ok(b)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Constant plus `K` cosine/sine pairs on `[a, b]`:
///
/// ```text
/// ψ(x; θ) = θ_0 + Σ_{j=1..K} θ_j cos(2πj t) + θ_{K+j} sin(2πj t),   t = (x-a)/(b-a)
/// ```
///
/// Coefficient count is `1 + 2K`.
#[derive(Debug, Clone)]
pub struct Fourier1d {
    pairs: usize,
    a: f64,
    b: f64,
}

impl Fourier1d {
    pub fn new(pairs: usize, a: f64, b: f64) -> Result<Self> {
        if !(b > a) {
            return Err(PiftError::InvalidConfig(format!(
                "Fourier1d needs b > a, got [{a}, {b}]"
            )));
        }
        Ok(Fourier1d { pairs, a, b })
    }

    pub fn pairs(&self) -> usize {
        self.pairs
    }

    fn t(&self, x: f64) -> f64 {
        (x - self.a) / (self.b - self.a)
    }

    /// d t / d x.
    fn scale(&self) -> f64 {
        1.0 / (self.b - self.a)
    }
}

impl FieldBasis for Fourier1d {
    fn dim(&self) -> usize {
        1 + 2 * self.pairs
    }

    fn domain(&self) -> Domain {
        Domain::Interval { a: self.a, b: self.b }
    }

    fn offset(&self, _x: &[f64]) -> f64 {
        0.0
    }

    fn features(&self, x: &[f64], out: &mut [f64]) {
        let t = self.t(x[0]);
        out[0] = 1.0;
        for j in 1..=self.pairs {
            let arg = 2.0 * std::f64::consts::PI * j as f64 * t;
            out[j] = arg.cos();
            out[self.pairs + j] = arg.sin();
        }
    }

    fn offset_dx(&self, _x: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }

    fn features_dx(&self, x: &[f64], out: &mut [f64]) {
        let t = self.t(x[0]);
        out[0] = 0.0;
        for j in 1..=self.pairs {
            let w = 2.0 * std::f64::consts::PI * j as f64;
            let arg = w * t;
            out[j] = -w * self.scale() * arg.sin();
            out[self.pairs + j] = w * self.scale() * arg.cos();
        }
    }

    fn offset_lap(&self, _x: &[f64]) -> f64 {
        0.0
    }

    fn features_lap(&self, x: &[f64], out: &mut [f64]) {
        let t = self.t(x[0]);
        out[0] = 0.0;
        for j in 1..=self.pairs {
            let w = 2.0 * std::f64::consts::PI * j as f64;
            let ws = w * self.scale();
            let arg = w * t;
            out[j] = -ws * ws * arg.cos();
            out[self.pairs + j] = -ws * ws * arg.sin();
        }
    }
}

/// Dirichlet conditions built into the parameterization:
///
/// ```text
/// field(x; θ) = (1-t) φ_0 + t φ_1 + t (1-t) ψ(x; θ),   t = (x-a)/(b-a)
/// ```
///
/// with ψ an inner [`Fourier1d`]. For every θ the field equals `φ_0` at `a`
/// and `φ_1` at `b` exactly, so boundary conditions never need penalties.
#[derive(Debug, Clone)]
pub struct BoundaryWrapped1d {
    inner: Fourier1d,
    phi0: f64,
    phi1: f64,
}

impl BoundaryWrapped1d {
    pub fn new(inner: Fourier1d, phi0: f64, phi1: f64) -> Self {
        BoundaryWrapped1d { inner, phi0, phi1 }
    }

    pub fn boundary_values(&self) -> (f64, f64) {
        (self.phi0, self.phi1)
    }
}

impl FieldBasis for BoundaryWrapped1d {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn domain(&self) -> Domain {
        self.inner.domain()
    }

    fn offset(&self, x: &[f64]) -> f64 {
        let t = self.inner.t(x[0]);
        (1.0 - t) * self.phi0 + t * self.phi1
    }

    fn features(&self, x: &[f64], out: &mut [f64]) {
        let t = self.inner.t(x[0]);
        let window = t * (1.0 - t);
        self.inner.features(x, out);
        out.iter_mut().for_each(|v| *v *= window);
    }

    fn offset_dx(&self, _x: &[f64], out: &mut [f64]) {
        out[0] = (self.phi1 - self.phi0) * self.inner.scale();
    }

    fn features_dx(&self, x: &[f64], out: &mut [f64]) {
        let t = self.inner.t(x[0]);
        let s = self.inner.scale();
        let window = t * (1.0 - t);
        let dwindow = s * (1.0 - 2.0 * t);
        let mut b = vec![0.0; self.dim()];
        self.inner.features(x, &mut b);
        self.inner.features_dx(x, out);
        for j in 0..self.dim() {
            out[j] = dwindow * b[j] + window * out[j];
        }
    }

    fn offset_lap(&self, _x: &[f64]) -> f64 {
        0.0
    }

    fn features_lap(&self, x: &[f64], out: &mut [f64]) {
        let t = self.inner.t(x[0]);
        let s = self.inner.scale();
        let window = t * (1.0 - t);
        let dwindow = s * (1.0 - 2.0 * t);
        let ddwindow = -2.0 * s * s;
        let mut b = vec![0.0; self.dim()];
        let mut bdx = vec![0.0; self.dim()];
        self.inner.features(x, &mut b);
        self.inner.features_dx(x, &mut bdx);
        self.inner.features_lap(x, out);
        for j in 0..self.dim() {
            out[j] = ddwindow * b[j] + 2.0 * dwindow * bdx[j] + window * out[j];
        }
    }
}

/// One multiplicative factor of a 2-d tensor mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModeFactor {
    One,
    /// `cos(π j u)`
    Cos(usize),
    /// `sin(π j u)`
    Sin(usize),
}

impl ModeFactor {
    fn eval(&self, u: f64) -> f64 {
        match *self {
            ModeFactor::One => 1.0,
            ModeFactor::Cos(j) => (std::f64::consts::PI * j as f64 * u).cos(),
            ModeFactor::Sin(j) => (std::f64::consts::PI * j as f64 * u).sin(),
        }
    }

    fn deriv(&self, u: f64) -> f64 {
        match *self {
            ModeFactor::One => 0.0,
            ModeFactor::Cos(j) => {
                let w = std::f64::consts::PI * j as f64;
                -w * (w * u).sin()
            }
            ModeFactor::Sin(j) => {
                let w = std::f64::consts::PI * j as f64;
                w * (w * u).cos()
            }
        }
    }

    fn second_deriv(&self, u: f64) -> f64 {
        match *self {
            ModeFactor::One => 0.0,
            ModeFactor::Cos(j) | ModeFactor::Sin(j) => {
                let w = std::f64::consts::PI * j as f64;
                -w * w * self.eval(u)
            }
        }
    }
}

/// Tensor cosine/sine modes on the square `[-1, 1]^2`:
/// `B_m(x, y) = f_m(x) g_m(y)` with each factor 1, `cos(πjx)` or `sin(πjx)`.
#[derive(Debug, Clone)]
pub struct Fourier2d {
    modes: Vec<(ModeFactor, ModeFactor)>,
}

impl Fourier2d {
    /// Explicit mode list.
    pub fn with_modes(modes: Vec<(ModeFactor, ModeFactor)>) -> Result<Self> {
        if modes.is_empty() {
            return Err(PiftError::Empty { what: "mode list" });
        }
        Ok(Fourier2d { modes })
    }

    /// The canonical nine lowest modes, in this fixed order:
    /// `1, cos(πx), sin(πx), cos(πy), sin(πy), cos(πx)cos(πy), cos(πx)sin(πy),
    /// sin(πx)cos(πy), sin(πx)sin(πy)`.
    pub fn standard_nine() -> Self {
        use ModeFactor::{Cos, One, Sin};
        Fourier2d {
            modes: vec![
                (One, One),
                (Cos(1), One),
                (Sin(1), One),
                (One, Cos(1)),
                (One, Sin(1)),
                (Cos(1), Cos(1)),
                (Cos(1), Sin(1)),
                (Sin(1), Cos(1)),
                (Sin(1), Sin(1)),
            ],
        }
    }

    pub fn modes(&self) -> &[(ModeFactor, ModeFactor)] {
        &self.modes
    }
}

impl FieldBasis for Fourier2d {
    fn dim(&self) -> usize {
        self.modes.len()
    }

    fn domain(&self) -> Domain {
        Domain::symmetric_square()
    }

    fn offset(&self, _x: &[f64]) -> f64 {
        0.0
    }

    fn features(&self, x: &[f64], out: &mut [f64]) {
        for (m, (fx, fy)) in self.modes.iter().enumerate() {
            out[m] = fx.eval(x[0]) * fy.eval(x[1]);
        }
    }

    fn offset_dx(&self, _x: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
        out[1] = 0.0;
    }

    fn features_dx(&self, x: &[f64], out: &mut [f64]) {
        for (m, (fx, fy)) in self.modes.iter().enumerate() {
            out[2 * m] = fx.deriv(x[0]) * fy.eval(x[1]);
            out[2 * m + 1] = fx.eval(x[0]) * fy.deriv(x[1]);
        }
    }

    fn offset_lap(&self, _x: &[f64]) -> f64 {
        0.0
    }

    fn features_lap(&self, x: &[f64], out: &mut [f64]) {
        for (m, (fx, fy)) in self.modes.iter().enumerate() {
            out[m] = fx.second_deriv(x[0]) * fy.eval(x[1])
                + fx.eval(x[0]) * fy.second_deriv(x[1]);
        }
    }
}

/// A single shape function on `[-1, 1]^2` built to match the structure of a
/// known localized solution:
///
/// ```text
/// B(x, y) = exp(-(x² + y²)) sin(πx) sin(πy)
/// ```
///
/// The field is `θ · B(x, y)` with a single coefficient, which vanishes on
/// the entire boundary of the square.
#[derive(Debug, Clone, Copy, Default)]
pub struct WellInformed2d;

impl WellInformed2d {
    /// The shape function itself.
    pub fn shape(x: f64, y: f64) -> f64 {
        (-(x * x + y * y)).exp()
            * (std::f64::consts::PI * x).sin()
            * (std::f64::consts::PI * y).sin()
    }

    /// Analytic gradient of the shape function.
    pub fn shape_dx(x: f64, y: f64) -> (f64, f64) {
        let pi = std::f64::consts::PI;
        let g = (-(x * x + y * y)).exp();
        let (sx, cx) = (pi * x).sin_cos();
        let (sy, cy) = (pi * y).sin_cos();
        let dx = g * sy * (-2.0 * x * sx + pi * cx);
        let dy = g * sx * (-2.0 * y * sy + pi * cy);
        (dx, dy)
    }

    /// Analytic Laplacian of the shape function.
    pub fn shape_lap(x: f64, y: f64) -> f64 {
        let pi = std::f64::consts::PI;
        let g = (-(x * x + y * y)).exp();
        let (sx, cx) = (pi * x).sin_cos();
        let (sy, cy) = (pi * y).sin_cos();
        let ddx = sy * ((4.0 * x * x - 2.0 - pi * pi) * sx - 4.0 * pi * x * cx);
        let ddy = sx * ((4.0 * y * y - 2.0 - pi * pi) * sy - 4.0 * pi * y * cy);
        g * (ddx + ddy)
    }
}

impl FieldBasis for WellInformed2d {
    fn dim(&self) -> usize {
        1
    }

    fn domain(&self) -> Domain {
        Domain::symmetric_square()
    }

    fn offset(&self, _x: &[f64]) -> f64 {
        0.0
    }

    fn features(&self, x: &[f64], out: &mut [f64]) {
        out[0] = Self::shape(x[0], x[1]);
    }

    fn offset_dx(&self, _x: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
        out[1] = 0.0;
    }

    fn features_dx(&self, x: &[f64], out: &mut [f64]) {
        let (dx, dy) = Self::shape_dx(x[0], x[1]);
        out[0] = dx;
        out[1] = dy;
    }

    fn offset_lap(&self, _x: &[f64]) -> f64 {
        0.0
    }

    fn features_lap(&self, x: &[f64], out: &mut [f64]) {
        out[0] = Self::shape_lap(x[0], x[1]);
    }
}

/// Truncated Karhunen-Loève expansion of a covariance kernel, with
/// eigenfunctions extended off the quadrature grid by the Nyström formula.
///
/// The represented field is `f(x; θ) = Σ_m θ_m sqrt(λ_m) ξ_m(x)`; with
/// standard-normal coefficients this approximates a zero-mean Gaussian
/// process with the decomposed kernel.
#[derive(Debug, Clone)]
pub struct KleBasis {
    kernel: Kernel1d,
    a: f64,
    b: f64,
    nodes: Arc<Vec<f64>>,
    weights: Arc<Vec<f64>>,
    /// Top `m` eigenvalues of the integral operator, descending.
    eigvals: Vec<f64>,
    /// Node values of the quadrature-orthonormal eigenvectors, `nodes x m`.
    eigvecs: Arc<DMatrix<f64>>,
    /// Fraction of the operator trace carried by the retained modes.
    retained_energy: f64,
}

/// Decompose `kernel` on `[a, b]` with an `n`-node trapezoid rule and keep the
/// leading `m` modes.
///
/// The discrete eigenproblem is symmetrized as `W^{1/2} K W^{1/2}` so a plain
/// symmetric solver applies; eigenvalues are sorted descending, tiny negative
/// values (round-off from a PSD operator) are clipped to zero, and anything
/// below `-1e-10 · λ_max` is a hard error. Eigenvectors are rescaled to be
/// orthonormal under the quadrature inner product `Σ_i w_i ξ(x_i) ξ'(x_i)`.
pub fn nystrom_kle(kernel: Kernel1d, a: f64, b: f64, n: usize, m: usize) -> Result<KleBasis> {
    if m == 0 || m > n {
        return Err(PiftError::InvalidConfig(format!(
            "mode count {m} must lie in 1..={n}"
        )));
    }
    let quad = Quadrature::trapezoid(a, b, n)?;
    let nodes: Vec<f64> = (0..n).map(|i| quad.node(i)[0]).collect();
    let weights = quad.weights().to_vec();
    let sqrt_w: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();

    let mut sym = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = sqrt_w[i] * kernel.eval(nodes[i], nodes[j]) * sqrt_w[j];
            sym[(i, j)] = v;
            sym[(j, i)] = v;
        }
    }
    let eig = sym.symmetric_eigen();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).expect("finite eigenvalues")
    });
    let lambda_max = eig.eigenvalues[order[0]].max(0.0);
    let floor = -1e-10 * lambda_max;
    let mut eigvals = Vec::with_capacity(m);
    let mut eigvecs = DMatrix::zeros(n, m);
    for (col, &idx) in order.iter().take(m).enumerate() {
        let lam = eig.eigenvalues[idx];
        if lam < floor {
            return Err(PiftError::NegativeEigenvalue { value: lam, floor });
        }
        eigvals.push(lam.max(0.0));
        // Undo the symmetrization: ξ(x_i) = u_i / sqrt(w_i).
        for i in 0..n {
            eigvecs[(i, col)] = eig.eigenvectors[(i, idx)] / sqrt_w[i];
        }
    }
    let trace: f64 = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).sum();
    let retained: f64 = eigvals.iter().sum();

    Ok(KleBasis {
        kernel,
        a,
        b,
        nodes: Arc::new(nodes),
        weights: Arc::new(weights),
        eigvals,
        eigvecs: Arc::new(eigvecs),
        retained_energy: if trace > 0.0 { retained / trace } else { 0.0 },
    })
}

impl KleBasis {
    /// Eigenvalues of the retained modes, descending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigvals
    }

    /// Fraction of the operator trace carried by the retained modes.
    pub fn retained_energy(&self) -> f64 {
        self.retained_energy
    }

    /// Quadrature weights of the underlying rule (for orthonormality checks).
    pub fn node_weights(&self) -> &[f64] {
        &self.weights
    }

    /// Node values of eigenfunction `m`.
    pub fn eigenvector(&self, m: usize) -> Vec<f64> {
        self.eigvecs.column(m).iter().copied().collect()
    }

    /// Nyström extension of eigenfunction `m` to an arbitrary point:
    /// `ξ_m(x) = (1/λ_m) Σ_i w_i k(x, x_i) ξ_m(x_i)`. Modes whose eigenvalue
    /// was clipped to zero evaluate to zero.
    pub fn eigenfunction(&self, m: usize, x: f64) -> f64 {
        let lam = self.eigvals[m];
        if lam <= 0.0 {
            return 0.0;
        }
        let s: f64 = (0..self.nodes.len())
            .map(|i| self.weights[i] * self.kernel.eval(x, self.nodes[i]) * self.eigvecs[(i, m)])
            .sum();
        s / lam
    }

    /// Mercer reconstruction `Σ_m λ_m ξ_m(x) ξ_m(x')` over the retained modes.
    pub fn mercer_sum(&self, x: f64, xp: f64) -> f64 {
        (0..self.eigvals.len())
            .map(|m| self.eigvals[m] * self.eigenfunction(m, x) * self.eigenfunction(m, xp))
            .sum()
    }

    fn extension_weighted(&self, x: f64, kfun: impl Fn(f64, f64) -> f64, out: &mut [f64]) {
        // Common core of features/features_dx/features_lap: replace k with
        // the requested derivative of k in the Nyström formula and scale by
        // sqrt(λ_m).
        let kvals: Vec<f64> =
            self.nodes.iter().map(|&z| kfun(x, z)).collect();
        for m in 0..self.eigvals.len() {
            let lam = self.eigvals[m];
            if lam <= 0.0 {
                out[m] = 0.0;
                continue;
            }
            let s: f64 = (0..self.nodes.len())
                .map(|i| self.weights[i] * kvals[i] * self.eigvecs[(i, m)])
                .sum();
            out[m] = lam.sqrt() * s / lam;
        }
    }

    /// Field value at the quadrature nodes for a coefficient vector, as a
    /// dense vector (convenience for source-term evaluation).
    pub fn field_at_nodes(&self, theta: &[f64]) -> Result<DVector<f64>> {
        self.check_theta(theta)?;
        let n = self.nodes.len();
        let mut out = DVector::zeros(n);
        for i in 0..n {
            let mut acc = 0.0;
            for m in 0..self.eigvals.len() {
                acc += theta[m] * self.eigvals[m].sqrt() * self.eigvecs[(i, m)];
            }
            out[i] = acc;
        }
        Ok(out)
    }
}

impl FieldBasis for KleBasis {
    fn dim(&self) -> usize {
        self.eigvals.len()
    }

    fn domain(&self) -> Domain {
        Domain::Interval { a: self.a, b: self.b }
    }

    fn offset(&self, _x: &[f64]) -> f64 {
        0.0
    }

    fn features(&self, x: &[f64], out: &mut [f64]) {
        self.extension_weighted(x[0], |x, z| self.kernel.eval(x, z), out);
    }

    fn offset_dx(&self, _x: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }

    fn features_dx(&self, x: &[f64], out: &mut [f64]) {
        self.extension_weighted(x[0], |x, z| self.kernel.dx(x, z), out);
    }

    fn offset_lap(&self, _x: &[f64]) -> f64 {
        0.0
    }

    fn features_lap(&self, x: &[f64], out: &mut [f64]) {
        self.extension_weighted(x[0], |x, z| self.kernel.dxx(x, z), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::findiff;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// FD check of eval_dx and eval_lap against eval, plus linearity of the
    /// coefficient map, on a batch of random (θ, x).
    fn check_basis_derivatives<B: FieldBasis>(basis: &B, seed: u64, tol: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = basis.domain();
        for trial in 0..20 {
            let theta: Vec<f64> =
                (0..basis.dim()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            // Keep x away from the boundary so FD stencils stay inside.
            let x: Vec<f64> = match d {
                Domain::Interval { a, b } => {
                    vec![rng.gen_range(a + 0.05 * (b - a)..a + 0.95 * (b - a))]
                }
                Domain::Rect { x0, x1, y0, y1 } => vec![
                    rng.gen_range(x0 + 0.05 * (x1 - x0)..x0 + 0.95 * (x1 - x0)),
                    rng.gen_range(y0 + 0.05 * (y1 - y0)..y0 + 0.95 * (y1 - y0)),
                ],
            };
            let grad = basis.eval_dx(&theta, &x).unwrap();
            let mut lap_fd = 0.0;
            for axis in 0..basis.space_dim() {
                let f = |t: f64| {
                    let mut xx = x.clone();
                    xx[axis] = t;
                    basis.eval(&theta, &xx).unwrap()
                };
                let fd = findiff::central_diff(f, x[axis], 1e-6);
                assert!(
                    findiff::rel_err(grad[axis], fd, 1e-8) < tol,
                    "trial {trial}: d/dx_{axis} = {} vs FD {fd}",
                    grad[axis]
                );
                let f2 = |t: f64| {
                    let mut xx = x.clone();
                    xx[axis] = t;
                    basis.eval(&theta, &xx).unwrap()
                };
                lap_fd += findiff::central_second_diff(f2, x[axis], 1e-4);
            }
            let lap = basis.eval_lap(&theta, &x).unwrap();
            assert!(
                findiff::rel_err(lap, lap_fd, 1e-4) < 100.0 * tol,
                "trial {trial}: lap = {lap} vs FD {lap_fd}"
            );
            // Affine structure: eval(θ) - offset is linear in θ.
            let theta2: Vec<f64> =
                (0..basis.dim()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let alpha = 1.7;
            let combo: Vec<f64> =
                theta.iter().zip(&theta2).map(|(u, v)| alpha * u + v).collect();
            let off = basis.offset(&x);
            let lhs = basis.eval(&combo, &x).unwrap() - off;
            let rhs = alpha * (basis.eval(&theta, &x).unwrap() - off)
                + (basis.eval(&theta2, &x).unwrap() - off);
            assert!((lhs - rhs).abs() < 1e-10, "linearity violated: {lhs} vs {rhs}");
            // grad_theta ⋅ θ reproduces eval - offset.
            let g = basis.grad_theta(&x).unwrap();
            let dot: f64 = g.iter().zip(&theta).map(|(a, b)| a * b).sum();
            assert!((dot + off - basis.eval(&theta, &x).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn fourier1d_derivatives_and_linearity() {
        let basis = Fourier1d::new(3, 0.0, 1.0).unwrap();
        assert_eq!(basis.dim(), 7);
        check_basis_derivatives(&basis, 1, 1e-6);
    }

    #[test]
    fn fourier1d_known_values() {
        // K=2, θ selecting the first cosine: at x=0.25 the argument is π/2.
        let basis = Fourier1d::new(2, 0.0, 1.0).unwrap();
        let theta = [0.0, 1.0, 0.0, 0.0, 0.0];
        let v = basis.eval(&theta, &[0.25]).unwrap();
        assert!(v.abs() < 1e-15, "cos(π/2) term should vanish, got {v}");
        // K=1, θ selecting sine: slope at 0 is 2π.
        let basis = Fourier1d::new(1, 0.0, 1.0).unwrap();
        let theta = [0.0, 0.0, 1.0];
        let d = basis.eval_dx(&theta, &[0.0]).unwrap()[0];
        assert!((d - 2.0 * std::f64::consts::PI).abs() < 1e-12);
        // Shape functions at x=0: constant 1, cos 1, sin 0.
        let g = basis.grad_theta(&[0.0]).unwrap();
        assert_eq!(g, vec![1.0, 1.0, 0.0]);
    }

    #[test]
    fn fourier1d_rescaled_interval() {
        // Same mode structure on [2, 5]: period is the interval length.
        let basis = Fourier1d::new(1, 2.0, 5.0).unwrap();
        let theta = [0.0, 1.0, 0.0];
        let v0 = basis.eval(&theta, &[2.0]).unwrap();
        let v1 = basis.eval(&theta, &[5.0]).unwrap();
        assert!((v0 - 1.0).abs() < 1e-15 && (v1 - 1.0).abs() < 1e-12);
        check_basis_derivatives(&basis, 2, 1e-6);
    }

    #[test]
    fn boundary_wrapped_hits_boundary_values_exactly() {
        let inner = Fourier1d::new(4, 0.0, 1.0).unwrap();
        let basis = BoundaryWrapped1d::new(inner, 1.0, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let theta: Vec<f64> = (0..basis.dim()).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let v0 = basis.eval(&theta, &[0.0]).unwrap();
            let v1 = basis.eval(&theta, &[1.0]).unwrap();
            assert_eq!(v0, 1.0, "left boundary must be exact");
            assert!((v1 - 0.1).abs() < 1e-15, "right boundary must be exact, got {v1}");
        }
    }

    #[test]
    fn boundary_wrapped_window_on_constant_term() {
        // The shape function for the constant inner coefficient is t(1-t).
        let inner = Fourier1d::new(2, 0.0, 1.0).unwrap();
        let basis = BoundaryWrapped1d::new(inner, 0.0, 0.0);
        let x = 0.3;
        let g = basis.grad_theta(&[x]).unwrap();
        assert!((g[0] - x * (1.0 - x)).abs() < 1e-15);
    }

    #[test]
    fn boundary_wrapped_derivatives() {
        let inner = Fourier1d::new(3, 0.0, 1.0).unwrap();
        let basis = BoundaryWrapped1d::new(inner, 1.0, 0.1);
        check_basis_derivatives(&basis, 4, 1e-6);
    }

    #[test]
    fn fourier2d_standard_nine_layout() {
        let basis = Fourier2d::standard_nine();
        assert_eq!(basis.dim(), 9);
        // Mode 5 is cos(πx)cos(πy): at the origin it equals 1.
        let mut theta = vec![0.0; 9];
        theta[5] = 1.0;
        assert!((basis.eval(&theta, &[0.0, 0.0]).unwrap() - 1.0).abs() < 1e-15);
        // Mode 8 is sin(πx)sin(πy): vanishes on the boundary x = 1.
        let mut theta = vec![0.0; 9];
        theta[8] = 1.0;
        assert!(basis.eval(&theta, &[1.0, 0.4]).unwrap().abs() < 1e-12);
        check_basis_derivatives(&basis, 5, 1e-6);
    }

    #[test]
    fn well_informed_shape_vanishes_on_boundary() {
        let basis = WellInformed2d;
        for t in [-1.0, -0.5, 0.0, 0.5, 1.0] {
            for edge in [[t, -1.0], [t, 1.0], [-1.0, t], [1.0, t]] {
                let v = basis.eval(&[3.0], &edge).unwrap();
                assert!(v.abs() < 1e-12, "boundary value {v} at {edge:?}");
            }
        }
        check_basis_derivatives(&basis, 6, 1e-6);
    }

    #[test]
    fn dimension_and_domain_errors() {
        let basis = Fourier1d::new(2, 0.0, 1.0).unwrap();
        assert!(matches!(
            basis.eval(&[1.0, 2.0], &[0.5]),
            Err(PiftError::DimMismatch { expected: 5, got: 2 })
        ));
        assert!(matches!(
            basis.eval(&[0.0; 5], &[1.5]),
            Err(PiftError::OutOfDomain { .. })
        ));
    }

    // ---- Nyström / Karhunen-Loève ----

    #[test]
    fn kle_eigenvalues_descending_and_energy_captured() {
        let kernel = Kernel1d::SquaredExponential { lengthscale: 0.3, variance: 1.0 };
        let kle = nystrom_kle(kernel, 0.0, 1.0, 128, 10).unwrap();
        let ev = kle.eigenvalues();
        assert!(ev.windows(2).all(|w| w[0] >= w[1]), "eigenvalues not descending: {ev:?}");
        assert!(
            kle.retained_energy() > 0.99,
            "retained energy {} too small for 10 modes",
            kle.retained_energy()
        );
    }

    #[test]
    fn kle_eigenfunctions_orthonormal_under_quadrature() {
        let kernel = Kernel1d::SquaredExponential { lengthscale: 0.3, variance: 1.0 };
        let kle = nystrom_kle(kernel, 0.0, 1.0, 128, 6).unwrap();
        let w = kle.node_weights().to_vec();
        for i in 0..6 {
            let vi = kle.eigenvector(i);
            for j in 0..6 {
                let vj = kle.eigenvector(j);
                let ip: f64 = (0..w.len()).map(|k| w[k] * vi[k] * vj[k]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (ip - expect).abs() < 1e-8,
                    "<ξ_{i}, ξ_{j}>_W = {ip}, want {expect}"
                );
            }
        }
    }

    #[test]
    fn kle_mercer_reconstruction_at_full_rank() {
        let kernel = Kernel1d::SquaredExponential { lengthscale: 0.3, variance: 1.0 };
        let n = 64;
        let kle = nystrom_kle(kernel, 0.0, 1.0, n, n).unwrap();
        // With all modes retained the Mercer sum must reproduce the kernel.
        let mut max_err: f64 = 0.0;
        for i in 0..20 {
            let x = i as f64 / 19.0;
            for j in 0..20 {
                let xp = j as f64 / 19.0;
                let err = (kle.mercer_sum(x, xp) - kernel.eval(x, xp)).abs();
                max_err = max_err.max(err);
            }
        }
        assert!(max_err < 1e-3, "Mercer L∞ error {max_err}");
    }

    #[test]
    fn kle_white_noise_eigenvalues_are_scaled_weights() {
        // A diagonal operator c·I on the grid: its symmetrized matrix is
        // c·diag(w), so the eigenvalue multiset is exactly {c w_i}.
        let c = 0.7;
        let n = 32;
        let kle = nystrom_kle(Kernel1d::WhiteNoise { amplitude: c }, 0.0, 1.0, n, n).unwrap();
        let mut got = kle.eigenvalues().to_vec();
        let mut want: Vec<f64> = kle.node_weights().iter().map(|w| c * w).collect();
        got.sort_by(|a, b| b.partial_cmp(a).unwrap());
        want.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "eigenvalue {g} vs weight {w}");
        }
    }

    #[test]
    fn kle_as_field_basis_matches_eigen_expansion() {
        let kernel = Kernel1d::SquaredExponential { lengthscale: 0.3, variance: 1.0 };
        let kle = nystrom_kle(kernel, 0.0, 1.0, 64, 5).unwrap();
        let theta = [0.3, -1.2, 0.5, 0.0, 2.0];
        let x = 0.37;
        let direct: f64 = (0..5)
            .map(|m| theta[m] * kle.eigenvalues()[m].sqrt() * kle.eigenfunction(m, x))
            .sum();
        let via_trait = kle.eval(&theta, &[x]).unwrap();
        assert!((direct - via_trait).abs() < 1e-12);
        check_basis_derivatives(&kle, 7, 1e-5);
    }

    #[test]
    fn kle_rejects_bad_mode_counts() {
        let kernel = Kernel1d::SquaredExponential { lengthscale: 0.3, variance: 1.0 };
        assert!(nystrom_kle(kernel, 0.0, 1.0, 16, 0).is_err());
        assert!(nystrom_kle(kernel, 0.0, 1.0, 16, 17).is_err());
    }
}
