//! Covariance kernels on the line.
//!
//! These serve double duty: as prior covariance operators for the analytic
//! Gaussian theory and as the integral kernels decomposed by the
//! Nyström/Karhunen-Loève machinery in [`crate::basis`].

use serde::{Deserialize, Serialize};

/// A stationary-or-not covariance function `k(x, x')` on an interval,
/// with first and second derivatives in the first argument.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Kernel1d {
    /// `v exp(-(x-x')^2 / (2 l^2))`.
    SquaredExponential { lengthscale: f64, variance: f64 },
    /// Green's function of `-d²/dx² + α²` on the whole line:
    /// `exp(-α|x-x'|) / (2α)`. This is the free-theory prior covariance of a
    /// massive field with stiffness `α` (up to the overall `1/β` factor).
    KleinGordon { alpha: f64 },
    /// `c · 1[x = x']` — the identity operator scaled by `c`, in kernel form.
    /// Degenerate (not a function on the continuum); used to exercise
    /// eigendecompositions of diagonal operators.
    WhiteNoise { amplitude: f64 },
}

impl Kernel1d {
    /// Kernel value `k(x, x')`.
    pub fn eval(&self, x: f64, xp: f64) -> f64 {
        match *self {
            Kernel1d::SquaredExponential { lengthscale, variance } => {
                let r = (x - xp) / lengthscale;
                variance * (-0.5 * r * r).exp()
            }
            Kernel1d::KleinGordon { alpha } => (-alpha * (x - xp).abs()).exp() / (2.0 * alpha),
            Kernel1d::WhiteNoise { amplitude } => {
                if x == xp {
                    amplitude
                } else {
                    0.0
                }
            }
        }
    }

    /// `∂k/∂x (x, x')`. For the Klein-Gordon kernel this is the one-sided
    /// derivative away from the diagonal; at `x = x'` it returns 0 (the
    /// symmetric choice at the kink).
    pub fn dx(&self, x: f64, xp: f64) -> f64 {
        match *self {
            Kernel1d::SquaredExponential { lengthscale, variance } => {
                let r = x - xp;
                -variance * r / (lengthscale * lengthscale)
                    * (-0.5 * r * r / (lengthscale * lengthscale)).exp()
            }
            Kernel1d::KleinGordon { alpha } => {
                let r = x - xp;
                if r == 0.0 {
                    0.0
                } else {
                    -0.5 * r.signum() * (-alpha * r.abs()).exp()
                }
            }
            Kernel1d::WhiteNoise { .. } => 0.0,
        }
    }

    /// `∂²k/∂x² (x, x')` away from the diagonal.
    pub fn dxx(&self, x: f64, xp: f64) -> f64 {
        match *self {
            Kernel1d::SquaredExponential { lengthscale, variance } => {
                let l2 = lengthscale * lengthscale;
                let r = x - xp;
                variance * (r * r / (l2 * l2) - 1.0 / l2) * (-0.5 * r * r / l2).exp()
            }
            Kernel1d::KleinGordon { alpha } => {
                // Away from the kink, k solves -k'' + α² k = 0.
                alpha * alpha * self.eval(x, xp)
            }
            Kernel1d::WhiteNoise { .. } => 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::findiff;

    #[test]
    fn kernels_are_symmetric() {
        let kernels = [
            Kernel1d::SquaredExponential { lengthscale: 0.3, variance: 1.5 },
            Kernel1d::KleinGordon { alpha: 2.0 },
        ];
        for k in kernels {
            for (x, xp) in [(0.1, 0.9), (-1.0, 0.3), (0.5, 0.5)] {
                assert!(
                    (k.eval(x, xp) - k.eval(xp, x)).abs() < 1e-15,
                    "{k:?} asymmetric at ({x}, {xp})"
                );
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let kernels = [
            Kernel1d::SquaredExponential { lengthscale: 0.4, variance: 2.0 },
            Kernel1d::KleinGordon { alpha: 1.5 },
        ];
        for k in kernels {
            for (x, xp) in [(0.2, 0.7), (1.3, 0.1)] {
                let fd1 = findiff::central_diff(|t| k.eval(t, xp), x, 1e-6);
                assert!(
                    findiff::rel_err(k.dx(x, xp), fd1, 1e-12) < 1e-6,
                    "{k:?} dx mismatch at ({x}, {xp}): {} vs {fd1}",
                    k.dx(x, xp)
                );
                let fd2 = findiff::central_second_diff(|t| k.eval(t, xp), x, 1e-4);
                assert!(
                    findiff::rel_err(k.dxx(x, xp), fd2, 1e-9) < 1e-5,
                    "{k:?} dxx mismatch at ({x}, {xp}): {} vs {fd2}",
                    k.dxx(x, xp)
                );
            }
        }
    }

    #[test]
    fn klein_gordon_diagonal_value() {
        // k(x, x) = 1 / (2α).
        let k = Kernel1d::KleinGordon { alpha: 4.0 };
        assert!((k.eval(0.3, 0.3) - 1.0 / 8.0).abs() < 1e-15);
    }
}
