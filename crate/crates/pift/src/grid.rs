//! Domains, quadrature rules and sampling densities over space.
//!
//! Fields live on an interval or an axis-aligned rectangle. Deterministic
//! integrals of energy densities use composite trapezoid rules ([`Quadrature`]);
//! stochastic gradients draw collocation points from a [`SpatialDensity`].

use rand::Rng;

use crate::error::{PiftError, Result};

/// Tolerance used when deciding whether a point lies inside a domain.
/// Points within this distance of the boundary are accepted so that
/// quadrature endpoints survive round-off.
pub const DOMAIN_TOL: f64 = 1e-12;

/// The spatial region a field is defined on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Domain {
    /// The interval `[a, b]`.
    Interval { a: f64, b: f64 },
    /// The rectangle `[x0, x1] x [y0, y1]`.
    Rect { x0: f64, x1: f64, y0: f64, y1: f64 },
}

impl Domain {
    /// Unit interval `[0, 1]`.
    pub fn unit_interval() -> Self {
        Domain::Interval { a: 0.0, b: 1.0 }
    }

    /// The square `[-1, 1]^2`.
    pub fn symmetric_square() -> Self {
        Domain::Rect { x0: -1.0, x1: 1.0, y0: -1.0, y1: 1.0 }
    }

    /// Number of spatial coordinates (1 or 2).
    pub fn dim(&self) -> usize {
        match self {
            Domain::Interval { .. } => 1,
            Domain::Rect { .. } => 2,
        }
    }

    /// Length or area.
    pub fn volume(&self) -> f64 {
        match *self {
            Domain::Interval { a, b } => b - a,
            Domain::Rect { x0, x1, y0, y1 } => (x1 - x0) * (y1 - y0),
        }
    }

    /// Whether `x` lies inside the domain, up to [`DOMAIN_TOL`].
    pub fn contains(&self, x: &[f64]) -> bool {
        match *self {
            Domain::Interval { a, b } => {
                x.len() == 1 && x[0] >= a - DOMAIN_TOL && x[0] <= b + DOMAIN_TOL
            }
            Domain::Rect { x0, x1, y0, y1 } => {
                x.len() == 2
                    && x[0] >= x0 - DOMAIN_TOL
                    && x[0] <= x1 + DOMAIN_TOL
                    && x[1] >= y0 - DOMAIN_TOL
                    && x[1] <= y1 + DOMAIN_TOL
            }
        }
    }

    /// Error unless `x` lies inside the domain.
    pub fn check(&self, x: &[f64]) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(PiftError::OutOfDomain { point: x.to_vec() })
        }
    }

    /// Draw a point uniformly from the domain.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match *self {
            Domain::Interval { a, b } => vec![rng.gen_range(a..=b)],
            Domain::Rect { x0, x1, y0, y1 } => {
                vec![rng.gen_range(x0..=x1), rng.gen_range(y0..=y1)]
            }
        }
    }
}

/// A fixed set of nodes and weights approximating `∫_Ω f(x) dx ≈ Σ_i w_i f(x_i)`.
///
/// Nodes are stored flat, `space_dim` coordinates per node.
#[derive(Debug, Clone)]
pub struct Quadrature {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    space_dim: usize,
}

impl Quadrature {
    /// Composite trapezoid rule with `n >= 2` equispaced nodes on `[a, b]`.
    pub fn trapezoid(a: f64, b: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(PiftError::InvalidConfig(format!(
                "trapezoid rule needs at least 2 nodes, got {n}"
            )));
        }
        if !(b > a) {
            return Err(PiftError::InvalidConfig(format!(
                "trapezoid rule needs b > a, got [{a}, {b}]"
            )));
        }
        let h = (b - a) / (n - 1) as f64;
        let nodes = (0..n).map(|i| a + i as f64 * h).collect();
        let mut weights = vec![h; n];
        weights[0] = 0.5 * h;
        weights[n - 1] = 0.5 * h;
        Ok(Quadrature { nodes, weights, space_dim: 1 })
    }

    /// Tensor-product trapezoid rule on a rectangle, `nx x ny` nodes.
    pub fn tensor_trapezoid(domain: &Domain, nx: usize, ny: usize) -> Result<Self> {
        let (x0, x1, y0, y1) = match *domain {
            Domain::Rect { x0, x1, y0, y1 } => (x0, x1, y0, y1),
            Domain::Interval { .. } => {
                return Err(PiftError::InvalidConfig(
                    "tensor rule needs a rectangular domain".into(),
                ))
            }
        };
        let qx = Quadrature::trapezoid(x0, x1, nx)?;
        let qy = Quadrature::trapezoid(y0, y1, ny)?;
        let mut nodes = Vec::with_capacity(2 * nx * ny);
        let mut weights = Vec::with_capacity(nx * ny);
        for i in 0..nx {
            for j in 0..ny {
                nodes.push(qx.nodes[i]);
                nodes.push(qy.nodes[j]);
                weights.push(qx.weights[i] * qy.weights[j]);
            }
        }
        Ok(Quadrature { nodes, weights, space_dim: 2 })
    }

    /// Build the default rule for a domain: `n` nodes on an interval,
    /// `nx x ny` on a rectangle.
    pub fn for_domain(domain: &Domain, n_1d: usize, n_2d: (usize, usize)) -> Result<Self> {
        match domain {
            Domain::Interval { a, b } => Quadrature::trapezoid(*a, *b, n_1d),
            Domain::Rect { .. } => Quadrature::tensor_trapezoid(domain, n_2d.0, n_2d.1),
        }
    }

    /// Equal-weight rule over explicit points (flat coordinates,
    /// `space_dim` per point): each point carries weight `volume / n`. This
    /// is the Monte Carlo average written as a quadrature, used when an
    /// integral must be approximated on given collocation points.
    pub fn equal_weight(points: Vec<f64>, space_dim: usize, volume: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(PiftError::Empty { what: "collocation point set" });
        }
        if space_dim == 0 || points.len() % space_dim != 0 {
            return Err(PiftError::DimMismatch {
                expected: space_dim.max(1),
                got: points.len(),
            });
        }
        let n = points.len() / space_dim;
        let w = volume / n as f64;
        Ok(Quadrature { nodes: points, weights: vec![w; n], space_dim })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn space_dim(&self) -> usize {
        self.space_dim
    }

    /// Coordinates of node `i`.
    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.space_dim..(i + 1) * self.space_dim]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Iterate over `(node, weight)` pairs.
    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        (0..self.len()).map(move |i| (self.node(i), self.weight(i)))
    }

    /// Integrate a scalar function over the rule.
    pub fn integrate(&self, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        (0..self.len()).map(|i| self.weight(i) * f(self.node(i))).sum()
    }
}

/// A probability density on a domain that supports both sampling and pointwise
/// evaluation. Stochastic energy gradients divide by this density, so it must
/// be strictly positive wherever it can land.
pub trait SpatialDensity: Send + Sync {
    fn domain(&self) -> Domain;
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64>;
    fn density(&self, x: &[f64]) -> f64;
}

/// The uniform density on a domain.
#[derive(Debug, Clone, Copy)]
pub struct Uniform(pub Domain);

impl SpatialDensity for Uniform {
    fn domain(&self) -> Domain {
        self.0
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.0.sample_uniform(rng)
    }

    fn density(&self, _x: &[f64]) -> f64 {
        1.0 / self.0.volume()
    }
}

/// A triangular density on an interval, linearly increasing from `a` to `b`:
/// `q(x) = 2 (x - a) / (b - a)^2`. Exists to exercise importance-weighted
/// estimators with a genuinely non-uniform proposal.
#[derive(Debug, Clone, Copy)]
pub struct TriangularRamp {
    pub a: f64,
    pub b: f64,
}

impl SpatialDensity for TriangularRamp {
    fn domain(&self) -> Domain {
        Domain::Interval { a: self.a, b: self.b }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        // Inverse CDF: F(x) = ((x-a)/(b-a))^2, so x = a + (b-a) sqrt(u).
        let u: f64 = rng.gen();
        vec![self.a + (self.b - self.a) * u.sqrt()]
    }

    fn density(&self, x: &[f64]) -> f64 {
        let w = self.b - self.a;
        2.0 * (x[0] - self.a) / (w * w)
    }
}

/// Equispaced evaluation grid over a domain (`n` points on an interval,
/// `n x n` on a rectangle), returned as flat points. Used for field summaries
/// and ground-truth comparisons rather than integration.
pub fn eval_grid(domain: &Domain, n: usize) -> Vec<Vec<f64>> {
    match *domain {
        Domain::Interval { a, b } => {
            let h = (b - a) / (n - 1).max(1) as f64;
            (0..n).map(|i| vec![a + i as f64 * h]).collect()
        }
        Domain::Rect { x0, x1, y0, y1 } => {
            let hx = (x1 - x0) / (n - 1).max(1) as f64;
            let hy = (y1 - y0) / (n - 1).max(1) as f64;
            let mut pts = Vec::with_capacity(n * n);
            for i in 0..n {
                for j in 0..n {
                    pts.push(vec![x0 + i as f64 * hx, y0 + j as f64 * hy]);
                }
            }
            pts
        }
    }
}
