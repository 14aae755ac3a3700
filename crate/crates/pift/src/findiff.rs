//! Central finite differences.
//!
//! Used two ways: as the independent check that every analytic gradient in
//! the crate is compared against, and as the discrete second-derivative
//! operator for residual checks of Green's-function identities.

/// Central difference `(f(x+h) - f(x-h)) / 2h`.
pub fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Second central difference `(f(x+h) - 2 f(x) + f(x-h)) / h^2`.
pub fn central_second_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h)
}

/// Gradient of `f: R^n -> R` by central differences, one coordinate at a time.
pub fn grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        let xi = x[i];
        xp[i] = xi + h;
        let fp = f(&xp);
        xp[i] = xi - h;
        let fm = f(&xp);
        xp[i] = xi;
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Directional derivative of `f` at `x` along `dir` by central differences.
pub fn directional(f: impl Fn(&[f64]) -> f64, x: &[f64], dir: &[f64], h: f64) -> f64 {
    let shift = |s: f64| -> Vec<f64> {
        x.iter().zip(dir).map(|(xi, di)| xi + s * di).collect()
    };
    (f(&shift(h)) - f(&shift(-h))) / (2.0 * h)
}

/// Relative error `|a - b| / max(|a|, |b|, floor)`. The floor keeps the
/// comparison meaningful when both values are near zero.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest componentwise relative error between two vectors.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| rel_err(*x, *y, floor))
        .fold(0.0, f64::max)
}

/// Second difference of a tabulated function on an equispaced grid, at
/// interior index `i`.
pub fn second_diff_tabulated(values: &[f64], i: usize, h: f64) -> f64 {
    (values[i + 1] - 2.0 * values[i] + values[i - 1]) / (h * h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_diff_is_second_order() {
        // d/dx sin at 0.7, errors at h and h/2 should shrink ~4x.
        let e1 = (central_diff(f64::sin, 0.7, 1e-2) - 0.7f64.cos()).abs();
        let e2 = (central_diff(f64::sin, 0.7, 5e-3) - 0.7f64.cos()).abs();
        assert!(e1 / e2 > 3.5 && e1 / e2 < 4.5, "ratio {}", e1 / e2);
    }

    #[test]
    fn gradient_matches_closed_form_quadratic() {
        let f = |x: &[f64]| x[0] * x[0] + 3.0 * x[0] * x[1] - x[1];
        let g = grad(f, &[0.5, -1.2], 1e-6);
        // ∂f = (2x + 3y, 3x - 1)
        assert!((g[0] - (1.0 - 3.6)).abs() < 1e-8);
        assert!((g[1] - 0.5).abs() < 1e-8);
    }

    #[test]
    fn directional_derivative_is_gradient_dot_direction() {
        let f = |x: &[f64]| (x[0] * x[1]).sin();
        let x = [0.3, 0.9];
        let dir = [1.0, -2.0];
        let d = directional(f, &x, &dir, 1e-6);
        let g = grad(f, &x, 1e-6);
        let dot = g[0] * dir[0] + g[1] * dir[1];
        assert!((d - dot).abs() < 1e-8);
    }

    #[test]
    fn tabulated_second_diff_recovers_curvature() {
        let h = 1e-3;
        let values: Vec<f64> = (0..5).map(|i| {
            let x = 1.0 + (i as f64 - 2.0) * h;
            x * x * x
        }).collect();
        // (x^3)'' = 6x at x = 1.
        let d2 = second_diff_tabulated(&values, 2, h);
        assert!((d2 - 6.0).abs() < 1e-5, "got {d2}");
    }
}
