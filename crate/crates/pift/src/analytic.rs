//! Closed-form Gaussian theory for quadratic energy functionals.
//!
//! When the energy is quadratic in the field — the "free theory", e.g. the
//! Klein-Gordon density `u = ½(φ')² + ½α²φ² - qφ` — the Gibbs measure
//! `p(φ) ∝ exp(-β U[φ])` is an exact Gaussian process: its covariance is
//! `β⁻¹ g(x, x')` with `g` the Green's function of the associated
//! self-adjoint operator, and its mean is the source convolved with `g`.
//! Conditioning on noisy point observations is then textbook GP regression
//! with a β-scaled prior. This module provides those closed forms plus an
//! exact finite-lattice version of the same measure, so that samplers and
//! quadrature code elsewhere in the crate can be validated against linear
//! algebra instead of against themselves.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::bvp::thomas;
use crate::error::{PiftError, Result};
use crate::kernel::Kernel1d;

/// Green's function of `-d²/dx² + α²` on the line: `e^{-α|r|} / (2α)`.
pub fn kg_green_1d(alpha: f64, r: f64) -> f64 {
    (-alpha * r.abs()).exp() / (2.0 * alpha)
}

/// Gram matrix `K_ij = k(x_i, x_j)`.
pub fn kernel_matrix(kernel: &Kernel1d, xs: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(xs.len(), xs.len(), |i, j| kernel.eval(xs[i], xs[j]))
}

/// Cross-covariance `K_ij = k(a_i, b_j)`.
pub fn kernel_cross(kernel: &Kernel1d, a: &[f64], b: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| kernel.eval(a[i], b[j]))
}

/// Cholesky factorization with an escalating diagonal jitter ladder
/// (relative to the mean diagonal). Returns the factor and the jitter that
/// was needed.
pub fn cholesky_with_jitter(a: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = a.nrows();
    if n == 0 {
        return Err(PiftError::Empty { what: "matrix" });
    }
    let scale = a.diagonal().iter().map(|d| d.abs()).sum::<f64>() / n as f64;
    for &jitter in &[0.0, 1e-12, 1e-10, 1e-8] {
        let mut m = a.clone();
        if jitter > 0.0 {
            for i in 0..n {
                m[(i, i)] += jitter * scale;
            }
        }
        if let Some(c) = m.cholesky() {
            return Ok((c, jitter * scale));
        }
    }
    Err(PiftError::CholeskyFailed { max_jitter: 1e-8 * scale })
}

/// Prior mean of the Klein-Gordon free theory: the convolution
/// `m(x) = ∫ g(x - y) q(y) dy`, truncated at `radius` and integrated with a
/// trapezoid rule on each side of the kernel kink (so both half-integrals
/// are smooth).
pub struct KgPriorMean<F: Fn(f64) -> f64> {
    pub alpha: f64,
    pub source: F,
    pub radius: f64,
    pub nodes_per_side: usize,
}

impl<F: Fn(f64) -> f64> KgPriorMean<F> {
    pub fn new(alpha: f64, source: F, radius: f64, nodes_per_side: usize) -> Result<Self> {
        if alpha <= 0.0 || radius <= 0.0 || nodes_per_side < 2 {
            return Err(PiftError::InvalidConfig(
                "KG mean needs α > 0, radius > 0 and ≥ 2 nodes per side".into(),
            ));
        }
        Ok(KgPriorMean { alpha, source, radius, nodes_per_side })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.nodes_per_side;
        let h = self.radius / (n - 1) as f64;
        let mut total = 0.0;
        // ∫_0^R g(t) [q(x - t) + q(x + t)] dt, trapezoid in t.
        for i in 0..n {
            let t = i as f64 * h;
            let w = if i == 0 || i == n - 1 { 0.5 * h } else { h };
            let g = kg_green_1d(self.alpha, t);
            total += w * g * ((self.source)(x - t) + (self.source)(x + t));
        }
        total
    }
}

/// Exact posterior of a β-scaled Gaussian field prior under i.i.d. Gaussian
/// point observations.
///
/// Prior: `φ ~ GP(m, β⁻¹ k)`. Data: `d_i = φ(x_i) + ε_i`, `ε_i ~ N(0, s)`.
/// With `A = K + β s I` (Gram matrix of `k` on the observation sites), the
/// posterior is the GP with
///
/// ```text
/// mean(x)      = m(x) + k(x, X) A⁻¹ (d - m(X))
/// cov(x, x')   = β⁻¹ [ k(x, x') - k(x, X) A⁻¹ k(X, x') ]
/// ```
///
/// With no data this reduces to the prior; with `s = 0` the mean
/// interpolates the data.
pub struct FreePosterior {
    kernel: Kernel1d,
    beta: f64,
    mean_fn: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    train_x: Vec<f64>,
    /// `A⁻¹ (d - m(X))`; empty when there is no data.
    weights: DVector<f64>,
    chol: Option<Cholesky<f64, Dyn>>,
}

impl FreePosterior {
    pub fn fit(
        kernel: Kernel1d,
        beta: f64,
        mean_fn: impl Fn(f64) -> f64 + Send + Sync + 'static,
        xs: &[f64],
        data: &[f64],
        noise_var: f64,
    ) -> Result<Self> {
        if beta <= 0.0 || !beta.is_finite() {
            return Err(PiftError::InvalidConfig("β must be positive and finite".into()));
        }
        if noise_var < 0.0 {
            return Err(PiftError::InvalidConfig("noise variance must be ≥ 0".into()));
        }
        if xs.len() != data.len() {
            return Err(PiftError::DimMismatch { expected: xs.len(), got: data.len() });
        }
        if xs.is_empty() {
            return Ok(FreePosterior {
                kernel,
                beta,
                mean_fn: Box::new(mean_fn),
                train_x: Vec::new(),
                weights: DVector::zeros(0),
                chol: None,
            });
        }
        let mut a = kernel_matrix(&kernel, xs);
        let shift = beta * noise_var;
        for i in 0..xs.len() {
            a[(i, i)] += shift;
        }
        let (chol, _) = cholesky_with_jitter(&a)?;
        let resid = DVector::from_fn(xs.len(), |i, _| data[i] - mean_fn(xs[i]));
        let weights = chol.solve(&resid);
        Ok(FreePosterior {
            kernel,
            beta,
            mean_fn: Box::new(mean_fn),
            train_x: xs.to_vec(),
            weights,
            chol: Some(chol),
        })
    }

    /// The prior itself (no conditioning).
    pub fn prior(
        kernel: Kernel1d,
        beta: f64,
        mean_fn: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        Self::fit(kernel, beta, mean_fn, &[], &[], 0.0)
    }

    pub fn mean(&self, x: f64) -> f64 {
        let mut m = (self.mean_fn)(x);
        for (xi, w) in self.train_x.iter().zip(self.weights.iter()) {
            m += self.kernel.eval(x, *xi) * w;
        }
        m
    }

    /// Posterior mean vector and covariance matrix on query points.
    pub fn mean_cov(&self, query: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let mean = DVector::from_fn(query.len(), |i, _| self.mean(query[i]));
        let kqq = kernel_matrix(&self.kernel, query);
        let cov = match &self.chol {
            None => kqq / self.beta,
            Some(chol) => {
                let kqx = kernel_cross(&self.kernel, query, &self.train_x);
                let solved = chol.solve(&kqx.transpose());
                (kqq - &kqx * solved) / self.beta
            }
        };
        (mean, cov)
    }

    /// Posterior mean and pointwise variance on query points.
    pub fn mean_var(&self, query: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (m, c) = self.mean_cov(query);
        let var = (0..query.len()).map(|i| c[(i, i)].max(0.0)).collect();
        (m.iter().copied().collect(), var)
    }
}

/// The Klein-Gordon free theory discretized exactly on a uniform lattice
/// with zero-Dirichlet ends: a finite-dimensional Gaussian whose precision
/// is `β S` with `S = (1/h)·tridiag(-1, 2, -1) + h α² I` over the interior
/// nodes. `S⁻¹` converges to the continuum Green's function as `h → 0`,
/// which is what the operator-residual checks exploit.
pub struct DiscreteKg {
    pub a: f64,
    pub b: f64,
    /// Total nodes including both boundary nodes.
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
}

impl DiscreteKg {
    pub fn new(a: f64, b: f64, n: usize, alpha: f64, beta: f64) -> Result<Self> {
        if n < 3 || !(b > a) || alpha <= 0.0 || beta <= 0.0 {
            return Err(PiftError::InvalidConfig(
                "lattice needs n ≥ 3, b > a, α > 0, β > 0".into(),
            ));
        }
        Ok(DiscreteKg { a, b, n, alpha, beta })
    }

    pub fn spacing(&self) -> f64 {
        (self.b - self.a) / (self.n - 1) as f64
    }

    /// Interior node locations (the boundary values are pinned to zero).
    pub fn interior_nodes(&self) -> Vec<f64> {
        let h = self.spacing();
        (1..self.n - 1).map(|i| self.a + i as f64 * h).collect()
    }

    fn interior_len(&self) -> usize {
        self.n - 2
    }

    fn diag_offdiag(&self) -> (f64, f64) {
        let h = self.spacing();
        (2.0 / h + h * self.alpha * self.alpha, -1.0 / h)
    }

    /// `S v` for an interior vector `v`.
    pub fn apply_s(&self, v: &[f64]) -> Vec<f64> {
        let m = self.interior_len();
        assert_eq!(v.len(), m);
        let (d, e) = self.diag_offdiag();
        (0..m)
            .map(|i| {
                let mut out = d * v[i];
                if i > 0 {
                    out += e * v[i - 1];
                }
                if i + 1 < m {
                    out += e * v[i + 1];
                }
                out
            })
            .collect()
    }

    fn solve_s(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let m = self.interior_len();
        let (d, e) = self.diag_offdiag();
        let lower = vec![e; m];
        let upper = vec![e; m];
        let mut diag = vec![d; m];
        let mut b = rhs.to_vec();
        thomas(&lower, &mut diag, &upper, &mut b)
    }

    /// Mean of the lattice measure: solves `S m = h q` for source values `q`
    /// at the interior nodes.
    pub fn mean(&self, source_vals: &[f64]) -> Result<Vec<f64>> {
        let h = self.spacing();
        let rhs: Vec<f64> = source_vals.iter().map(|q| h * q).collect();
        self.solve_s(&rhs)
    }

    /// One column of the covariance `β⁻¹ S⁻¹`.
    pub fn covariance_column(&self, j: usize) -> Result<Vec<f64>> {
        let m = self.interior_len();
        if j >= m {
            return Err(PiftError::DimMismatch { expected: m, got: j + 1 });
        }
        let mut e = vec![0.0; m];
        e[j] = 1.0;
        let mut col = self.solve_s(&e)?;
        col.iter_mut().for_each(|v| *v /= self.beta);
        Ok(col)
    }

    /// Draw an interior-node field from the lattice Gibbs measure. The
    /// precision `βS` is tridiagonal, so its Cholesky factor is bidiagonal
    /// and sampling is `O(n)`: `x = mean + L⁻ᵀ z`, `z ~ N(0, I)`.
    pub fn sample<R: Rng + ?Sized>(&self, mean: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let m = self.interior_len();
        if mean.len() != m {
            return Err(PiftError::DimMismatch { expected: m, got: mean.len() });
        }
        let (d, e) = self.diag_offdiag();
        let (pd, pe) = (self.beta * d, self.beta * e);
        // Bidiagonal Cholesky of the tridiagonal precision.
        let mut ell = vec![0.0; m]; // diagonal of L
        let mut sub = vec![0.0; m]; // sub[i] couples rows i and i+1
        ell[0] = pd.sqrt();
        for i in 1..m {
            sub[i - 1] = pe / ell[i - 1];
            let v = pd - sub[i - 1] * sub[i - 1];
            if v <= 0.0 {
                return Err(PiftError::CholeskyFailed { max_jitter: 0.0 });
            }
            ell[i] = v.sqrt();
        }
        let z: Vec<f64> = (0..m).map(|_| StandardNormal.sample(rng)).collect();
        // Solve Lᵀ x = z backwards.
        let mut x = vec![0.0; m];
        x[m - 1] = z[m - 1] / ell[m - 1];
        for i in (0..m - 1).rev() {
            x[i] = (z[i] - sub[i] * x[i + 1]) / ell[i];
        }
        for (xi, mi) in x.iter_mut().zip(mean) {
            *xi += mi;
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::SourceFn;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kg_green_value_and_integral() {
        let alpha = 1.7;
        assert!((kg_green_1d(alpha, 0.0) - 1.0 / (2.0 * alpha)).abs() < 1e-15);
        // ∫ g = 1/α² — Simpson over [0, R], doubled.
        let r = 30.0 / alpha;
        let n = 20_001;
        let h = r / (n - 1) as f64;
        let mut s = 0.0;
        for i in 0..n {
            let w = if i == 0 || i == n - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            s += w * kg_green_1d(alpha, i as f64 * h);
        }
        s *= 2.0 * h / 3.0;
        assert!((s - 1.0 / (alpha * alpha)).abs() < 1e-10, "∫g = {s}");
    }

    #[test]
    fn kg_prior_mean_constant_source_closed_form() {
        // m(x) = c ∫_{-R}^{R} g = c (1 - e^{-αR}) / α².
        let alpha = 2.0;
        let c = 3.0;
        let radius = 8.0;
        let m = KgPriorMean::new(alpha, move |_| c, radius, 20_001).unwrap();
        let want = c * (1.0 - (-alpha * radius).exp()) / (alpha * alpha);
        let got = m.eval(0.4);
        assert!((got - want).abs() < 1e-7, "{got} vs {want}");
    }

    #[test]
    fn kg_prior_mean_matches_simpson_oracle() {
        let alpha = 1.0;
        let src = SourceFn::GaussianBump { center: 0.0, width: 1.0, amplitude: 1.0 };
        let m = KgPriorMean::new(alpha, move |x| src.eval(&[x]), 20.0, 40_001).unwrap();
        // Independent Simpson oracle over each smooth half.
        let oracle = |x: f64| {
            let r = 20.0;
            let n = 30_001usize;
            let h = r / (n - 1) as f64;
            let mut s = 0.0;
            for i in 0..n {
                let w = if i == 0 || i == n - 1 {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                let t = i as f64 * h;
                s += w * kg_green_1d(alpha, t) * (src.eval(&[x - t]) + src.eval(&[x + t]));
            }
            s * h / 3.0
        };
        for &x in &[0.0, 0.7, -1.3, 2.5] {
            let a = m.eval(x);
            let b = oracle(x);
            assert!((a - b).abs() < 1e-7, "at {x}: {a} vs {b}");
        }
    }

    /// Longhand GP regression with an explicitly β-scaled prior, solved by LU
    /// (independent of the Cholesky path in the implementation).
    fn gp_oracle(
        kernel: &Kernel1d,
        beta: f64,
        mean_fn: &dyn Fn(f64) -> f64,
        xs: &[f64],
        data: &[f64],
        noise_var: f64,
        query: &[f64],
    ) -> (DVector<f64>, DMatrix<f64>) {
        let n = xs.len();
        // Prior covariance is C = β⁻¹K; observation covariance C + sI.
        let mut a = DMatrix::from_fn(n, n, |i, j| kernel.eval(xs[i], xs[j]) / beta);
        for i in 0..n {
            a[(i, i)] += noise_var;
        }
        let lu = a.lu();
        let resid = DVector::from_fn(n, |i, _| data[i] - mean_fn(xs[i]));
        let w = lu.solve(&resid).unwrap();
        let kq = DMatrix::from_fn(query.len(), n, |i, j| kernel.eval(query[i], xs[j]) / beta);
        let mean = DVector::from_fn(query.len(), |i, _| mean_fn(query[i]))
            + &kq * &w;
        let kqq =
            DMatrix::from_fn(query.len(), query.len(), |i, j| kernel.eval(query[i], query[j]) / beta);
        let cov = &kqq - &kq * lu.solve(&kq.transpose()).unwrap();
        (mean, cov)
    }

    #[test]
    fn free_posterior_matches_lu_gp_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        use rand::Rng;
        for trial in 0..5 {
            let kernel = if trial % 2 == 0 {
                Kernel1d::SquaredExponential { lengthscale: 0.4, variance: 1.3 }
            } else {
                Kernel1d::KleinGordon { alpha: 1.5 }
            };
            let beta = [1.0, 10.0, 250.0][trial % 3];
            let noise_var = 0.01;
            let xs: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let data: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mean_fn = |x: f64| 0.3 * x;
            let post =
                FreePosterior::fit(kernel, beta, mean_fn, &xs, &data, noise_var).unwrap();
            let query: Vec<f64> = vec![-1.7, -0.4, 0.0, 0.9, 1.8];
            let (m, c) = post.mean_cov(&query);
            let (om, oc) = gp_oracle(&kernel, beta, &mean_fn, &xs, &data, noise_var, &query);
            for i in 0..query.len() {
                assert!((m[i] - om[i]).abs() < 1e-10, "mean[{i}]: {} vs {}", m[i], om[i]);
                for j in 0..query.len() {
                    assert!(
                        (c[(i, j)] - oc[(i, j)]).abs() < 1e-10,
                        "cov[{i},{j}]: {} vs {}",
                        c[(i, j)],
                        oc[(i, j)]
                    );
                }
            }
        }
    }

    #[test]
    fn free_posterior_without_data_is_the_prior() {
        let kernel = Kernel1d::KleinGordon { alpha: 2.0 };
        let beta = 50.0;
        let post = FreePosterior::prior(kernel, beta, |x| x * x).unwrap();
        let query = [0.1, 0.5, 1.2];
        let (m, c) = post.mean_cov(&query);
        for (i, &x) in query.iter().enumerate() {
            assert_eq!(m[i], x * x);
            for (j, &y) in query.iter().enumerate() {
                assert_eq!(c[(i, j)], kernel.eval(x, y) / beta);
            }
        }
    }

    #[test]
    fn zero_noise_posterior_interpolates_data() {
        let kernel = Kernel1d::KleinGordon { alpha: 1.0 };
        let xs = [-1.0, -0.2, 0.5, 1.4];
        let data = [0.3, -0.8, 1.1, 0.4];
        let post = FreePosterior::fit(kernel, 30.0, |_| 0.0, &xs, &data, 0.0).unwrap();
        let (m, var) = post.mean_var(&xs);
        for i in 0..xs.len() {
            assert!((m[i] - data[i]).abs() < 1e-8, "interpolation failed at {i}");
            assert!(var[i] < 1e-8, "variance at data point: {}", var[i]);
        }
    }

    #[test]
    fn posterior_variance_shrinks_with_beta_and_data() {
        let kernel = Kernel1d::KleinGordon { alpha: 1.0 };
        let at = [0.25];
        let var_of = |beta: f64, xs: &[f64], d: &[f64]| {
            let p = FreePosterior::fit(kernel, beta, |_| 0.0, xs, d, 0.01).unwrap();
            p.mean_var(&at).1[0]
        };
        let v_nodata_b10 = var_of(10.0, &[], &[]);
        let v_nodata_b100 = var_of(100.0, &[], &[]);
        assert!(v_nodata_b100 < v_nodata_b10);
        let v_data = var_of(10.0, &[0.2, 0.3], &[0.0, 0.0]);
        assert!(v_data < v_nodata_b10);
    }

    #[test]
    fn jitter_ladder_rescues_duplicate_points_and_rejects_indefinite() {
        // Duplicated sites make the Gram matrix exactly singular; the ladder
        // must still produce a factor.
        let kernel = Kernel1d::SquaredExponential { lengthscale: 0.5, variance: 1.0 };
        let xs = [0.3, 0.3, 0.9];
        let k = kernel_matrix(&kernel, &xs);
        let (_, jitter) = cholesky_with_jitter(&k).unwrap();
        assert!(jitter > 0.0);
        // An indefinite matrix must fail even at max jitter.
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            cholesky_with_jitter(&bad),
            Err(PiftError::CholeskyFailed { .. })
        ));
    }

    #[test]
    fn discrete_covariance_equals_scaled_inverse_precision() {
        // Independent oracle: dense-invert S with LU and compare β⁻¹S⁻¹
        // column-by-column against the Thomas-solve implementation.
        let kg = DiscreteKg::new(-4.0, 4.0, 129, 1.3, 7.0).unwrap();
        let m = kg.n - 2;
        let (d, e) = {
            let h = kg.spacing();
            (2.0 / h + h * kg.alpha * kg.alpha, -1.0 / h)
        };
        let mut s = DMatrix::zeros(m, m);
        for i in 0..m {
            s[(i, i)] = d;
            if i > 0 {
                s[(i, i - 1)] = e;
                s[(i - 1, i)] = e;
            }
        }
        let sinv = s.lu().try_inverse().unwrap();
        for &j in &[0usize, 17, 64, 100, m - 1] {
            let col = kg.covariance_column(j).unwrap();
            for i in 0..m {
                let want = sinv[(i, j)] / kg.beta;
                assert!(
                    (col[i] - want).abs() <= 1e-10 * want.abs().max(1e-12),
                    "cov[{i},{j}] = {} vs {want}",
                    col[i]
                );
            }
        }
    }

    #[test]
    fn discrete_mean_matches_green_convolution() {
        // Lattice mean S⁻¹hq vs the continuum convolution m = g * q for a
        // bump source well inside a wide interval.
        let alpha = 1.0;
        let kg = DiscreteKg::new(-20.0, 20.0, 2049, alpha, 1.0).unwrap();
        let src = SourceFn::GaussianBump { center: 0.0, width: 1.0, amplitude: 1.0 };
        let nodes = kg.interior_nodes();
        let qs: Vec<f64> = nodes.iter().map(|&x| src.eval(&[x])).collect();
        let mean = kg.mean(&qs).unwrap();
        let conv = KgPriorMean::new(alpha, move |x| src.eval(&[x]), 25.0, 20_001).unwrap();
        let mut max_err = 0.0f64;
        for (i, &x) in nodes.iter().enumerate() {
            if x.abs() <= 6.0 {
                max_err = max_err.max((mean[i] - conv.eval(x)).abs());
            }
        }
        assert!(max_err < 1e-3, "lattice mean vs convolution: {max_err}");
    }

    #[test]
    fn discrete_operator_annihilates_continuum_kernel() {
        // S applied to a continuum-kernel column should give ≈ e_j in the
        // interior window (the lattice Green's identity).
        let alpha = 1.0;
        let kg = DiscreteKg::new(-24.0, 24.0, 4097, alpha, 1.0).unwrap();
        let nodes = kg.interior_nodes();
        let m = nodes.len();
        let mut max_err = 0.0f64;
        for (j, &xj) in nodes.iter().enumerate() {
            if xj.abs() > 4.0 {
                continue;
            }
            let col: Vec<f64> = nodes.iter().map(|&xi| kg_green_1d(alpha, xi - xj)).collect();
            let sv = kg.apply_s(&col);
            for i in 0..m {
                if nodes[i].abs() <= 4.0 {
                    let want = if i == j { 1.0 } else { 0.0 };
                    max_err = max_err.max((sv[i] - want).abs());
                }
            }
        }
        assert!(max_err < 1e-3, "operator residual {max_err}");
    }

    #[test]
    fn discrete_samples_have_correct_moments() {
        let kg = DiscreteKg::new(0.0, 1.0, 34, 1.0, 2.0).unwrap();
        let m = kg.n - 2;
        let mean = vec![0.5; m];
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let draws = 40_000;
        let mut s1 = vec![0.0; m];
        let mut s2 = vec![0.0; m];
        let mut cross = 0.0; // cov(φ_3, φ_20)
        for _ in 0..draws {
            let x = kg.sample(&mean, &mut rng).unwrap();
            for i in 0..m {
                s1[i] += x[i];
                s2[i] += x[i] * x[i];
            }
            cross += (x[3] - 0.5) * (x[20] - 0.5);
        }
        let col3 = kg.covariance_column(3).unwrap();
        for i in 0..m {
            let mu = s1[i] / draws as f64;
            let var = s2[i] / draws as f64 - mu * mu;
            let want_var = kg.covariance_column(i).unwrap()[i];
            let se_mean = (want_var / draws as f64).sqrt();
            assert!((mu - 0.5).abs() < 4.0 * se_mean, "mean[{i}] = {mu}");
            // Var of sample variance ≈ 2σ⁴/n.
            let se_var = (2.0 * want_var * want_var / draws as f64).sqrt();
            assert!((var - want_var).abs() < 5.0 * se_var, "var[{i}] = {var} vs {want_var}");
        }
        let got_cross = cross / draws as f64;
        let want_cross = col3[20];
        assert!(
            (got_cross - want_cross).abs() < 5.0 * (2.0f64 / draws as f64).sqrt() * col3[3],
            "cross-cov {got_cross} vs {want_cross}"
        );
    }
}
