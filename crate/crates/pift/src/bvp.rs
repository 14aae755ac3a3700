//! Reference solvers for the two-point boundary-value problems whose
//! solutions the field priors concentrate on.
//!
//! These are deliberately independent of the energy/sampling machinery: a
//! damped-Newton finite-difference solver for the cubic reaction-diffusion
//! equation and the closed-form solution of the sourced heat equation. They
//! serve as ground truth when checking that Gibbs measures collapse onto the
//! variational solution as β grows.

use crate::error::{PiftError, Result};

/// Solve the tridiagonal system with Thomas back-substitution. `lower[i]` is
/// the coefficient left of the diagonal in row `i` (with `lower[0]` unused),
/// `upper[i]` right of it (`upper[n-1]` unused). Overwrites its inputs.
pub(crate) fn thomas(
    lower: &[f64],
    diag: &mut [f64],
    upper: &[f64],
    rhs: &mut [f64],
) -> Result<Vec<f64>> {
    let n = diag.len();
    if n == 0 {
        return Err(PiftError::Empty { what: "tridiagonal system" });
    }
    for i in 1..n {
        if diag[i - 1] == 0.0 {
            return Err(PiftError::InvalidConfig("singular tridiagonal pivot".into()));
        }
        let m = lower[i] / diag[i - 1];
        diag[i] -= m * upper[i - 1];
        rhs[i] -= m * rhs[i - 1];
    }
    if diag[n - 1] == 0.0 {
        return Err(PiftError::InvalidConfig("singular tridiagonal pivot".into()));
    }
    let mut x = vec![0.0; n];
    x[n - 1] = rhs[n - 1] / diag[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = (rhs[i] - upper[i] * x[i + 1]) / diag[i];
    }
    Ok(x)
}

/// A finite-difference solution of a 1-d boundary-value problem: node
/// locations, nodal values, and linear interpolation between them.
#[derive(Debug, Clone)]
pub struct BvpSolution {
    pub xs: Vec<f64>,
    pub values: Vec<f64>,
}

impl BvpSolution {
    /// Piecewise-linear interpolation (clamped at the ends).
    pub fn interp(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.values[0];
        }
        if x >= self.xs[n - 1] {
            return self.values[n - 1];
        }
        // Uniform grid: direct index computation.
        let h = self.xs[1] - self.xs[0];
        let i = (((x - self.xs[0]) / h).floor() as usize).min(n - 2);
        let t = (x - self.xs[i]) / (self.xs[i + 1] - self.xs[i]);
        self.values[i] * (1.0 - t) + self.values[i + 1] * t
    }

    /// Supremum of |φ| over the nodes.
    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Closed-form solution of `D φ'' + q(x) = 0` on `[0, 1]` with
/// `q(x) = a e^{-x}` and Dirichlet values `φ(0) = p0`, `φ(1) = p1`:
/// `φ(x) = -(a/D) e^{-x} + c1 x + c0` with the constants fixed by the
/// boundary conditions.
pub fn heat_exact_exp_source(conductivity: f64, amplitude: f64, p0: f64, p1: f64) -> impl Fn(f64) -> f64 {
    let s = amplitude / conductivity;
    let c0 = p0 + s;
    let c1 = p1 + s * (-1.0f64).exp() - c0;
    move |x: f64| -s * (-x).exp() + c1 * x + c0
}

/// Solve `D φ'' - γκφ³ - (1-γ)φ = f(x)` on `[a, b]` with Dirichlet data by
/// damped Newton iteration on a uniform grid of `n` nodes (including the
/// endpoints). Converges to `tol` in the max-norm of the Newton update.
#[allow(clippy::too_many_arguments)]
pub fn solve_cubic_bvp(
    conductivity: f64,
    kappa: f64,
    quartic_blend: f64,
    source: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    phi_a: f64,
    phi_b: f64,
    n: usize,
    tol: f64,
) -> Result<BvpSolution> {
    if n < 3 {
        return Err(PiftError::InvalidConfig("need at least 3 BVP nodes".into()));
    }
    if !(b > a) || conductivity <= 0.0 {
        return Err(PiftError::InvalidConfig("invalid BVP domain or conductivity".into()));
    }
    let h = (b - a) / (n - 1) as f64;
    let xs: Vec<f64> = (0..n).map(|i| a + i as f64 * h).collect();
    let fs: Vec<f64> = xs.iter().map(|&x| source(x)).collect();

    // Interior unknowns φ_1..φ_{n-2}; start from the linear interpolant.
    let m = n - 2;
    let mut phi: Vec<f64> = (1..=m)
        .map(|i| {
            let t = i as f64 / (n - 1) as f64;
            phi_a * (1.0 - t) + phi_b * t
        })
        .collect();

    let residual = |phi: &[f64]| -> Vec<f64> {
        (0..m)
            .map(|i| {
                let left = if i == 0 { phi_a } else { phi[i - 1] };
                let right = if i == m - 1 { phi_b } else { phi[i + 1] };
                let p = phi[i];
                conductivity * (left - 2.0 * p + right) / (h * h)
                    - quartic_blend * kappa * p * p * p
                    - (1.0 - quartic_blend) * p
                    - fs[i + 1]
            })
            .collect()
    };

    for iter in 0..200 {
        let r = residual(&phi);
        // Jacobian row i: [D/h², -2D/h² - 3γκφ² - (1-γ), D/h²].
        let off = conductivity / (h * h);
        let lower = vec![off; m];
        let upper = vec![off; m];
        let mut diag: Vec<f64> = phi
            .iter()
            .map(|&p| {
                -2.0 * off - 3.0 * quartic_blend * kappa * p * p - (1.0 - quartic_blend)
            })
            .collect();
        let mut rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        let delta = thomas(&lower, &mut diag, &upper, &mut rhs)?;

        // Converged: the full Newton correction is below tolerance.
        if delta.iter().fold(0.0f64, |mx, d| mx.max(d.abs())) < tol {
            for (p, d) in phi.iter_mut().zip(&delta) {
                *p += d;
            }
            let mut values = Vec::with_capacity(n);
            values.push(phi_a);
            values.extend_from_slice(&phi);
            values.push(phi_b);
            return Ok(BvpSolution { xs, values });
        }

        // Backtracking line search on the residual norm.
        let norm0: f64 = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial: Vec<f64> =
                phi.iter().zip(&delta).map(|(p, d)| p + step * d).collect();
            let rt = residual(&trial);
            let norm: f64 = rt.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < norm0 || norm0 == 0.0 {
                phi = trial;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return Err(PiftError::NonFinite { step: iter });
        }
        let update: f64 = delta.iter().fold(0.0, |mx, d| mx.max((step * d).abs()));
        if update < tol {
            let mut values = Vec::with_capacity(n);
            values.push(phi_a);
            values.extend_from_slice(&phi);
            values.push(phi_b);
            return Ok(BvpSolution { xs, values });
        }
    }
    Err(PiftError::InvalidConfig(
        "cubic BVP Newton iteration failed to converge".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::findiff;

    #[test]
    fn thomas_solves_small_system_vs_dense_elimination() {
        // -2/1 pattern with a known right-hand side.
        let lower = [0.0, 1.0, 1.0];
        let mut diag = vec![-2.0, -2.0, -2.0];
        let upper = [1.0, 1.0, 0.0];
        let mut rhs = vec![1.0, 0.0, 1.0];
        let x = thomas(&lower, &mut diag, &upper, &mut rhs).unwrap();
        // Verify A x = b directly.
        let l = [0.0, 1.0, 1.0];
        let d = [-2.0, -2.0, -2.0];
        let u = [1.0, 1.0, 0.0];
        let b = [1.0, 0.0, 1.0];
        for i in 0..3 {
            let mut v = d[i] * x[i];
            if i > 0 {
                v += l[i] * x[i - 1];
            }
            if i < 2 {
                v += u[i] * x[i + 1];
            }
            assert!((v - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn heat_exact_satisfies_equation_and_boundaries() {
        let d = 0.25;
        let amp = 1.0;
        let sol = heat_exact_exp_source(d, amp, 1.0, 0.1);
        assert!((sol(0.0) - 1.0).abs() < 1e-12);
        assert!((sol(1.0) - 0.1).abs() < 1e-12);
        for &x in &[0.2, 0.5, 0.8] {
            let phixx = findiff::central_second_diff(&sol, x, 1e-4);
            let r = d * phixx + amp * (-x).exp();
            assert!(r.abs() < 1e-5, "residual {r} at {x}");
        }
    }

    #[test]
    fn linear_bvp_matches_closed_form() {
        // γ = 1, κ = 0 makes the equation linear: D φ'' = f. With
        // f = -a e^{-x} the solver must reproduce heat_exact.
        let d = 0.25;
        let amp = 1.0;
        let exact = heat_exact_exp_source(d, amp, 1.0, 0.1);
        let sol = solve_cubic_bvp(
            d, 0.0, 1.0, &|x| -amp * (-x).exp(), 0.0, 1.0, 1.0, 0.1, 4097, 1e-12,
        )
        .unwrap();
        let max_err = sol
            .xs
            .iter()
            .zip(&sol.values)
            .fold(0.0f64, |m, (&x, &v)| m.max((v - exact(x)).abs()));
        assert!(max_err < 1e-6, "max error {max_err}");
    }

    #[test]
    fn cubic_bvp_residual_vanishes_on_grid() {
        let d = 0.1;
        let kappa = 1.0;
        let f = |x: f64| (4.0 * x).cos();
        let sol = solve_cubic_bvp(d, kappa, 1.0, &f, 0.0, 1.0, 0.0, 0.0, 2049, 1e-12).unwrap();
        let h = sol.xs[1] - sol.xs[0];
        let mut max_r = 0.0f64;
        for i in 1..sol.xs.len() - 1 {
            let lap = findiff::second_diff_tabulated(&sol.values, i, h);
            let p = sol.values[i];
            let r = d * lap - kappa * p * p * p - f(sol.xs[i]);
            max_r = max_r.max(r.abs());
        }
        assert!(max_r < 1e-8, "discrete residual {max_r}");
        assert_eq!(sol.values[0], 0.0);
        assert_eq!(*sol.values.last().unwrap(), 0.0);
    }

    #[test]
    fn cubic_bvp_grid_convergence_is_second_order() {
        let d = 0.1;
        let f = |x: f64| (4.0 * x).cos();
        let fine = solve_cubic_bvp(d, 1.0, 1.0, &f, 0.0, 1.0, 0.0, 0.0, 16385, 1e-12).unwrap();
        let coarse1 = solve_cubic_bvp(d, 1.0, 1.0, &f, 0.0, 1.0, 0.0, 0.0, 129, 1e-12).unwrap();
        let coarse2 = solve_cubic_bvp(d, 1.0, 1.0, &f, 0.0, 1.0, 0.0, 0.0, 257, 1e-12).unwrap();
        let err = |s: &BvpSolution| {
            s.xs.iter()
                .zip(&s.values)
                .fold(0.0f64, |m, (&x, &v)| m.max((v - fine.interp(x)).abs()))
        };
        let ratio = err(&coarse1) / err(&coarse2);
        assert!(ratio > 3.0 && ratio < 5.0, "convergence ratio {ratio}");
    }

    #[test]
    fn interp_is_exact_at_nodes_and_linear_between() {
        let sol = BvpSolution { xs: vec![0.0, 0.5, 1.0], values: vec![1.0, 3.0, 2.0] };
        assert_eq!(sol.interp(0.5), 3.0);
        assert!((sol.interp(0.25) - 2.0).abs() < 1e-12);
        assert_eq!(sol.interp(-1.0), 1.0);
        assert_eq!(sol.interp(2.0), 2.0);
    }
}
