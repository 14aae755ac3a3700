//! Posterior summaries and mode-separation diagnostics.
//!
//! Three consumers drive this module: field-space credible bands (pushing
//! every retained coefficient sample through the basis on a grid),
//! two-component Gaussian-mixture separation of bimodal chains, and the
//! Spearman rank correlation used to quantify monotone trends between a
//! model-error dial and inferred hyperparameters.

use serde::Serialize;

use crate::basis::FieldBasis;
use crate::error::{PiftError, Result};
use crate::par;
use crate::sampler::Chain;

/// Quantile of an unsorted sample by linear interpolation between order
/// statistics (`q ∈ [0, 1]`, index `q·(n−1)`).
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(PiftError::Empty { what: "sample" });
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(PiftError::InvalidConfig(format!("quantile {q} outside [0, 1]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite sample in quantile"));
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Ok(sorted[lo] * (1.0 - frac) + sorted[hi] * frac)
}

pub fn median(values: &[f64]) -> Result<f64> {
    quantile(values, 0.5)
}

/// Median of one chain column.
pub fn column_median(chain: &Chain, j: usize) -> Result<f64> {
    median(&chain.column(j))
}

/// Pointwise posterior statistics of the field on a grid.
#[derive(Debug, Clone, Serialize)]
pub struct FieldSummary {
    /// Flat grid coordinates, `space_dim` per point.
    pub points: Vec<f64>,
    pub space_dim: usize,
    pub mean: Vec<f64>,
    /// Population standard deviation (a single-sample chain gives 0).
    pub std: Vec<f64>,
    /// 2.5% and 97.5% pointwise quantiles.
    pub q025: Vec<f64>,
    pub q975: Vec<f64>,
}

impl FieldSummary {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn max_std(&self) -> f64 {
        self.std.iter().fold(0.0, |m, v| m.max(*v))
    }

    /// Largest |mean − reference| over the grid.
    pub fn max_mean_error(&self, reference: impl Fn(&[f64]) -> f64) -> f64 {
        let sd = self.space_dim;
        self.mean
            .iter()
            .enumerate()
            .fold(0.0f64, |m, (i, mu)| {
                m.max((mu - reference(&self.points[i * sd..(i + 1) * sd])).abs())
            })
    }

    /// CSV with coordinate columns (`x` or `x,y`) then
    /// `mean,std,q025,q975`; byte-stable formatting.
    pub fn to_csv(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        out.push_str(match self.space_dim {
            1 => "x",
            _ => "x,y",
        });
        out.push_str(",mean,std,q025,q975\n");
        for i in 0..self.len() {
            for k in 0..self.space_dim {
                if k > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{}", self.points[i * self.space_dim + k]);
            }
            let _ = writeln!(
                out,
                ",{},{},{},{}",
                self.mean[i], self.std[i], self.q025[i], self.q975[i]
            );
        }
        out
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Push every retained coefficient row through the basis and summarize the
/// resulting field values per grid point. Grid points are flat coordinates
/// with the basis's spatial stride.
pub fn summarize_field<B: FieldBasis>(
    chain: &Chain,
    basis: &B,
    grid: &[f64],
) -> Result<FieldSummary> {
    if chain.is_empty() {
        return Err(PiftError::Empty { what: "chain" });
    }
    if chain.dim() != basis.dim() {
        return Err(PiftError::DimMismatch { expected: basis.dim(), got: chain.dim() });
    }
    let sd = basis.space_dim();
    if grid.is_empty() || grid.len() % sd != 0 {
        return Err(PiftError::DimMismatch {
            expected: sd.max(1),
            got: grid.len(),
        });
    }
    let npts = grid.len() / sd;
    for i in 0..npts {
        basis.check_point(&grid[i * sd..(i + 1) * sd])?;
    }
    let rows = chain.len() as f64;

    struct PointStats {
        mean: f64,
        std: f64,
        q025: f64,
        q975: f64,
    }
    let stats: Vec<PointStats> = par::map_indexed(npts, |i| {
        let x = &grid[i * sd..(i + 1) * sd];
        let mut feat = vec![0.0; basis.dim()];
        basis.features(x, &mut feat);
        let off = basis.offset(x);
        let values: Vec<f64> = chain
            .rows()
            .map(|th| off + th.iter().zip(&feat).map(|(t, f)| t * f).sum::<f64>())
            .collect();
        let mean = values.iter().sum::<f64>() / rows;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / rows;
        PointStats {
            mean,
            std: var.max(0.0).sqrt(),
            q025: quantile(&values, 0.025).expect("non-empty"),
            q975: quantile(&values, 0.975).expect("non-empty"),
        }
    });

    Ok(FieldSummary {
        points: grid.to_vec(),
        space_dim: sd,
        mean: stats.iter().map(|s| s.mean).collect(),
        std: stats.iter().map(|s| s.std).collect(),
        q025: stats.iter().map(|s| s.q025).collect(),
        q975: stats.iter().map(|s| s.q975).collect(),
    })
}

/// A fitted two-component diagonal-covariance Gaussian mixture.
#[derive(Debug, Clone, Serialize)]
pub struct GmmFit {
    pub weights: [f64; 2],
    pub means: [Vec<f64>; 2],
    pub variances: [Vec<f64>; 2],
    /// Log-likelihood after each EM iteration (non-decreasing within 1e-9).
    pub log_likelihood: Vec<f64>,
    /// Responsibility of component 0 for each sample (component 1's is the
    /// complement). Not serialized — recoverable from the parameters.
    #[serde(skip)]
    pub resp0: Vec<f64>,
}

impl GmmFit {
    /// Component index with the larger mean along coordinate `j` — a
    /// convenience for orienting bimodal fits.
    pub fn upper_component(&self, j: usize) -> usize {
        if self.means[0][j] >= self.means[1][j] {
            0
        } else {
            1
        }
    }
}

const GMM_VAR_FLOOR: f64 = 1e-12;

fn log_gauss_diag(x: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    let mut ll = 0.0;
    for j in 0..x.len() {
        let r = x[j] - mean[j];
        ll += -0.5 * (2.0 * std::f64::consts::PI * var[j]).ln() - r * r / (2.0 * var[j]);
    }
    ll
}

fn gmm_attempt(
    chain: &Chain,
    max_iters: usize,
    tol: f64,
    rng: &mut impl rand::Rng,
) -> Result<GmmFit> {
    let n = chain.len();
    let d = chain.dim();

    let mut global_mean = vec![0.0; d];
    for row in chain.rows() {
        for j in 0..d {
            global_mean[j] += row[j] / n as f64;
        }
    }
    let mut global_var = vec![0.0; d];
    for row in chain.rows() {
        for j in 0..d {
            let r = row[j] - global_mean[j];
            global_var[j] += r * r / n as f64;
        }
    }

    // Initialize with a hard split along the coordinate of largest variance,
    // thresholded where the between-class variance is maximal (Otsu). When
    // the two clusters have very unequal occupancy, random seeding tends to
    // place both centers inside the dominant cluster; the variance-optimal
    // threshold lands in the gap between clusters regardless of imbalance.
    let split_axis = (0..d)
        .max_by(|&a, &b| global_var[a].partial_cmp(&global_var[b]).expect("non-finite variance"))
        .unwrap_or(0);
    let threshold = {
        let mut v: Vec<f64> = (0..n).map(|i| chain.row(i)[split_axis]).collect();
        v.sort_by(|a, b| a.partial_cmp(b).expect("non-finite coordinate"));
        let total: f64 = v.iter().sum();
        let mut run = 0.0;
        let mut best = (f64::NEG_INFINITY, v[0]);
        for k in 1..n {
            run += v[k - 1];
            let (w0, w1) = (k as f64, (n - k) as f64);
            let gap = run / w0 - (total - run) / w1;
            let between = w0 * w1 * gap * gap;
            if between > best.0 {
                best = (between, v[k - 1]);
            }
        }
        best.1
    };
    let (below, above): (Vec<usize>, Vec<usize>) =
        (0..n).partition(|&i| chain.row(i)[split_axis] <= threshold);

    let (mut weights, mut means, mut variances);
    if global_var[split_axis] > 0.0 && !below.is_empty() && !above.is_empty() {
        let side_stats = |idx: &[usize]| {
            let m = idx.len() as f64;
            let mut mean = vec![0.0; d];
            for &i in idx {
                for j in 0..d {
                    mean[j] += chain.row(i)[j] / m;
                }
            }
            let mut var = vec![0.0; d];
            for &i in idx {
                for j in 0..d {
                    let r = chain.row(i)[j] - mean[j];
                    var[j] += r * r / m;
                }
            }
            for j in 0..d {
                // A one-row or near-duplicate side must not start degenerate.
                var[j] = var[j].max(0.05 * global_var[j]);
            }
            (mean, var)
        };
        let (m0, v0) = side_stats(&below);
        let (m1, v1) = side_stats(&above);
        let w0 = (below.len() as f64 / n as f64).clamp(0.05, 0.95);
        weights = [w0, 1.0 - w0];
        means = [m0, m1];
        variances = [v0, v1];
    } else {
        // Degenerate split axis; fall back to k-means++-style seeding: a
        // random first center, second chosen with probability proportional
        // to squared distance from the first.
        let c0 = rng.gen_range(0..n);
        let first: Vec<f64> = chain.row(c0).to_vec();
        let d2: Vec<f64> = (0..n)
            .map(|i| {
                chain
                    .row(i)
                    .iter()
                    .zip(&first)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum()
            })
            .collect();
        let total: f64 = d2.iter().sum();
        let second: Vec<f64> = if total > 0.0 {
            let mut u = rng.gen_range(0.0..total);
            let mut pick = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if u < *w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            chain.row(pick).to_vec()
        } else {
            first.clone()
        };
        weights = [0.5, 0.5];
        means = [first, second];
        variances = [global_var.clone(), global_var.clone()];
    }
    for var in &variances {
        if var.iter().any(|v| *v < GMM_VAR_FLOOR) {
            return Err(PiftError::DegenerateComponent { floor: GMM_VAR_FLOOR });
        }
    }

    let mut trace = Vec::new();
    let mut resp0 = vec![0.5; n];
    for _ in 0..max_iters {
        // E-step with logsumexp normalization.
        let mut ll = 0.0;
        for i in 0..n {
            let x = chain.row(i);
            let l0 = weights[0].ln() + log_gauss_diag(x, &means[0], &variances[0]);
            let l1 = weights[1].ln() + log_gauss_diag(x, &means[1], &variances[1]);
            let m = l0.max(l1);
            let z = m + ((l0 - m).exp() + (l1 - m).exp()).ln();
            resp0[i] = (l0 - z).exp();
            ll += z;
        }
        if let Some(prev) = trace.last() {
            if ll < prev - 1e-9 {
                return Err(PiftError::InvalidConfig(format!(
                    "EM log-likelihood decreased: {prev} → {ll}"
                )));
            }
        }
        let converged = trace.last().is_some_and(|prev: &f64| (ll - prev).abs() < tol);
        trace.push(ll);
        if converged {
            break;
        }

        // M-step.
        let n0: f64 = resp0.iter().sum();
        let n1 = n as f64 - n0;
        if n0 < 1e-9 || n1 < 1e-9 {
            return Err(PiftError::DegenerateComponent { floor: GMM_VAR_FLOOR });
        }
        weights = [n0 / n as f64, n1 / n as f64];
        let mut new_means = [vec![0.0; d], vec![0.0; d]];
        for (i, row) in chain.rows().enumerate() {
            for j in 0..d {
                new_means[0][j] += resp0[i] * row[j] / n0;
                new_means[1][j] += (1.0 - resp0[i]) * row[j] / n1;
            }
        }
        let mut new_vars = [vec![0.0; d], vec![0.0; d]];
        for (i, row) in chain.rows().enumerate() {
            for j in 0..d {
                let r0 = row[j] - new_means[0][j];
                let r1 = row[j] - new_means[1][j];
                new_vars[0][j] += resp0[i] * r0 * r0 / n0;
                new_vars[1][j] += (1.0 - resp0[i]) * r1 * r1 / n1;
            }
        }
        for var in &new_vars {
            if var.iter().any(|v| *v < GMM_VAR_FLOOR) {
                return Err(PiftError::DegenerateComponent { floor: GMM_VAR_FLOOR });
            }
        }
        means = new_means;
        variances = new_vars;
    }

    Ok(GmmFit { weights, means, variances, log_likelihood: trace, resp0 })
}

/// Fit a two-component diagonal Gaussian mixture by EM with seeded
/// initialization. On a degenerate component (variance below 1e-12) the
/// fit re-initializes once with a fresh seed; a second degeneracy is an
/// error.
pub fn fit_gmm2(chain: &Chain, max_iters: usize, tol: f64, seed: u64) -> Result<GmmFit> {
    use rand::SeedableRng;
    if chain.len() < 2 {
        return Err(PiftError::Empty { what: "mixture-fit sample (need ≥ 2)" });
    }
    if max_iters == 0 || !(tol > 0.0) {
        return Err(PiftError::InvalidConfig("need max_iters ≥ 1 and tol > 0".into()));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    match gmm_attempt(chain, max_iters, tol, &mut rng) {
        Ok(fit) => Ok(fit),
        Err(PiftError::DegenerateComponent { .. }) => {
            let mut rng2 =
                rand_chacha::ChaCha8Rng::seed_from_u64(crate::sampler::derive_seed(seed, 1));
            gmm_attempt(chain, max_iters, tol, &mut rng2)
        }
        Err(e) => Err(e),
    }
}

/// Partition a chain by maximum responsibility under a fitted mixture.
/// Every row lands in exactly one part.
pub fn split_modes(chain: &Chain, fit: &GmmFit) -> Result<(Chain, Chain)> {
    if fit.resp0.len() != chain.len() {
        return Err(PiftError::DimMismatch {
            expected: chain.len(),
            got: fit.resp0.len(),
        });
    }
    let mut a = Chain::new(chain.names().to_vec(), chain.seed, format!("{} [mode 0]", chain.schedule));
    let mut b = Chain::new(chain.names().to_vec(), chain.seed, format!("{} [mode 1]", chain.schedule));
    for (i, row) in chain.rows().enumerate() {
        if fit.resp0[i] >= 0.5 {
            a.push(row);
        } else {
            b.push(row);
        }
    }
    Ok((a, b))
}

fn ranks_with_ties(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("non-finite value"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        // Average rank over the tie group (1-based ranks).
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation of `(x, y)` pairs. The x values must be
/// distinct (ties there make the trend question ill-posed); ties in y get
/// average ranks.
pub fn monotone_trend(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.len() < 3 {
        return Err(PiftError::Empty { what: "trend pairs (need ≥ 3)" });
    }
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    for i in 0..xs.len() {
        for j in i + 1..xs.len() {
            if xs[i] == xs[j] {
                return Err(PiftError::TiedRanks);
            }
        }
    }
    let rx = ranks_with_ties(&xs);
    let ry = ranks_with_ties(&ys);
    let n = pairs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..pairs.len() {
        let dx = rx[i] - mx;
        let dy = ry[i] - my;
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    if vy == 0.0 {
        // All y identical: no trend either way.
        return Ok(0.0);
    }
    Ok(cov / (vx.sqrt() * vy.sqrt()))
}
