//! Experiment runner: turns a resolved [`ExperimentConfig`] into objects,
//! executes the selected pipeline, and writes the artifact bundle into the
//! output directory.
//!
//! Every pipeline writes `resolved-config.json` (the complete run
//! description) and `diagnostics.json` (chain statistics, runtime, fitted
//! mixtures, trend statistics). Sampling pipelines write `chain.csv` and a
//! `summary.csv`; the closed-form pipeline writes `posterior-grid.csv`
//! instead of a chain; synthetic observations land in `data.csv`. A chain
//! that aborts on a non-finite state still leaves its retained rows in
//! `chain.csv` before the error propagates.
//!
//! Determinism: all randomness flows from the config seed through
//! counter-derived streams, and every parallel reduction is ordered, so
//! re-running a resolved config reproduces each `chain.csv` byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::analytic::{FreePosterior, KgPriorMean};
use crate::basis::{
    nystrom_kle, BoundaryWrapped1d, FieldBasis, Fourier1d, Fourier2d, WellInformed2d,
};
use crate::bvp;
use crate::config::{
    BasisSpec, DataLayout, DataSpec, EnergySpec, ExperimentConfig, ExperimentKind,
    GeneratorSpec, InverseSpec, LambdaEntrySpec, NoiseSpec, PriorSpec, SourceSpec,
    SweepVariant, DATA_SEED_STREAM,
};
use crate::diagnostics::{
    column_median, fit_gmm2, monotone_trend, quantile, split_modes, summarize_field, GmmFit,
};
use crate::energy::{EnergyModel, LambdaEntry, LambdaSpec, SourceFn, SourceTerm};
use crate::error::{PiftError, Result};
use crate::grid::{eval_grid, Domain, Quadrature};
use crate::inference::{Dataset, InfoHamiltonian, LambdaPrior, LambdaPriors};
use crate::kernel::Kernel1d;
use crate::par;
use crate::sampler::{
    derive_seed, hmc_sample, sgld_inverse, sgld_posterior, sgld_prior, Chain, HmcConfig,
    InverseConfig, NoiseVariance, SgldConfig,
};

/// Seed stream for the mixture-fit initialization.
const GMM_SEED_STREAM: u64 = 0x6313;

/// Two-sided 95% normal quantile, used for closed-form posterior bands.
const Z_95: f64 = 1.959963984540054;

/// A basis built from its config description. Delegates every trait method
/// to the concrete type, so downstream pipelines monomorphize once.
#[derive(Debug, Clone)]
pub enum BuiltBasis {
    /// Free Fourier set on an interval.
    Free(Fourier1d),
    /// Fourier set windowed to interpolate fixed endpoint values.
    Pinned(BoundaryWrapped1d),
    /// Nine-term tensor set on the square.
    Modes2d(Fourier2d),
    /// Single-amplitude 2-D bump.
    Bump2d(WellInformed2d),
}

macro_rules! delegate {
    ($self:ident, $b:ident => $e:expr) => {
        match $self {
            BuiltBasis::Free($b) => $e,
            BuiltBasis::Pinned($b) => $e,
            BuiltBasis::Modes2d($b) => $e,
            BuiltBasis::Bump2d($b) => $e,
        }
    };
}

impl FieldBasis for BuiltBasis {
    fn dim(&self) -> usize {
        delegate!(self, b => b.dim())
    }

    fn domain(&self) -> Domain {
        delegate!(self, b => b.domain())
    }

    fn offset(&self, x: &[f64]) -> f64 {
        delegate!(self, b => b.offset(x))
    }

    fn features(&self, x: &[f64], out: &mut [f64]) {
        delegate!(self, b => b.features(x, out))
    }

    fn offset_dx(&self, x: &[f64], out: &mut [f64]) {
        delegate!(self, b => b.offset_dx(x, out))
    }

    fn features_dx(&self, x: &[f64], out: &mut [f64]) {
        delegate!(self, b => b.features_dx(x, out))
    }

    fn offset_lap(&self, x: &[f64]) -> f64 {
        delegate!(self, b => b.offset_lap(x))
    }

    fn features_lap(&self, x: &[f64], out: &mut [f64]) {
        delegate!(self, b => b.features_lap(x, out))
    }
}

/// Build the basis a config describes.
pub fn build_basis(spec: &BasisSpec) -> Result<BuiltBasis> {
    Ok(match spec {
        BasisSpec::Fourier { pairs, a, b, boundary } => {
            let inner = Fourier1d::new(*pairs, *a, *b)?;
            match boundary {
                Some([p0, p1]) => BuiltBasis::Pinned(BoundaryWrapped1d::new(inner, *p0, *p1)),
                None => BuiltBasis::Free(inner),
            }
        }
        BasisSpec::FourierNine2d => BuiltBasis::Modes2d(Fourier2d::standard_nine()),
        BasisSpec::WellInformed2d => BuiltBasis::Bump2d(WellInformed2d),
    })
}

/// Map a plain source description to its closed-form function.
pub fn build_source_fn(spec: &SourceSpec) -> Result<SourceFn> {
    Ok(match spec {
        SourceSpec::Zero => SourceFn::Zero,
        SourceSpec::Constant { value } => SourceFn::Constant(*value),
        SourceSpec::ExpDecay => SourceFn::ExpNegX,
        SourceSpec::Cosine { frequency } => SourceFn::CosFreq(*frequency),
        SourceSpec::GaussianBump { center, width, amplitude } => SourceFn::GaussianBump {
            center: *center,
            width: *width,
            amplitude: *amplitude,
        },
        SourceSpec::Manufactured2d { epsilon, amplitude } => {
            SourceFn::AllenCahnManufactured { epsilon: *epsilon, amplitude: *amplitude }
        }
        SourceSpec::Blend { .. } | SourceSpec::Kle { .. } => {
            return Err(PiftError::InvalidConfig(
                "expected a plain source, found a composite one".into(),
            ))
        }
    })
}

/// Map any source description (plain, blend, or expansion) to a term.
pub fn build_source_term(spec: &SourceSpec) -> Result<SourceTerm> {
    Ok(match spec {
        SourceSpec::Blend { gamma, primary, secondary } => SourceTerm::Blend {
            gamma: *gamma,
            primary: build_source_fn(primary)?,
            secondary: build_source_fn(secondary)?,
        },
        SourceSpec::Kle { lengthscale, variance, terms, a, b, nodes, coeffs } => {
            let kernel = Kernel1d::SquaredExponential {
                lengthscale: *lengthscale,
                variance: *variance,
            };
            let basis = nystrom_kle(kernel, *a, *b, *nodes, *terms)?;
            let coeffs = coeffs.clone().unwrap_or_else(|| vec![0.0; *terms]);
            SourceTerm::Kle { basis: Arc::new(basis), coeffs }
        }
        plain => SourceTerm::Fixed(build_source_fn(plain)?),
    })
}

/// Build the energy functional a config describes.
pub fn build_energy(spec: &EnergySpec) -> Result<EnergyModel> {
    Ok(match spec {
        EnergySpec::DirichletHeat { conductivity, source } => EnergyModel::DirichletHeat {
            conductivity: *conductivity,
            source: build_source_term(source)?,
        },
        EnergySpec::CubicNonlinear { conductivity, kappa, quartic_blend, source } => {
            EnergyModel::CubicNonlinear {
                conductivity: *conductivity,
                kappa: *kappa,
                quartic_blend: *quartic_blend,
                source: build_source_term(source)?,
            }
        }
        EnergySpec::AllenCahn { epsilon, source } => EnergyModel::AllenCahn {
            epsilon: *epsilon,
            source: build_source_term(source)?,
        },
    })
}

fn build_noise(spec: NoiseSpec) -> NoiseVariance {
    match spec {
        NoiseSpec::Eps => NoiseVariance::Eps,
        NoiseSpec::SqrtEps => NoiseVariance::SqrtEps,
    }
}

fn build_lambda_entry(spec: LambdaEntrySpec) -> LambdaEntry {
    match spec {
        LambdaEntrySpec::LogBeta => LambdaEntry::LogBeta,
        LambdaEntrySpec::LogConductivity => LambdaEntry::LogConductivity,
        LambdaEntrySpec::LogKappa => LambdaEntry::LogKappa,
    }
}

fn build_prior(spec: PriorSpec) -> LambdaPrior {
    match spec {
        PriorSpec::Jeffreys => LambdaPrior::Jeffreys,
        PriorSpec::Flat => LambdaPrior::Flat,
        PriorSpec::Gaussian { mean, std } => LambdaPrior::Gaussian { mean, std },
    }
}

/// Ground-truth field, wrapped uniformly over dimensions.
enum Truth {
    OneD(Box<dyn Fn(f64) -> f64>),
    TwoD(Box<dyn Fn(f64, f64) -> f64>),
}

impl Truth {
    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Truth::OneD(f) => f(x[0]),
            Truth::TwoD(f) => f(x[0], x[1]),
        }
    }
}

fn build_truth(gen: &GeneratorSpec, domain: &Domain) -> Result<Truth> {
    match gen {
        GeneratorSpec::HeatExact { conductivity, amplitude, boundary } => {
            if !matches!(domain, Domain::Interval { a, b } if *a == 0.0 && *b == 1.0) {
                return Err(PiftError::InvalidConfig(
                    "[data].generator: the heat-exact ground truth lives on [0, 1]".into(),
                ));
            }
            let f = bvp::heat_exact_exp_source(*conductivity, *amplitude, boundary[0], boundary[1]);
            Ok(Truth::OneD(Box::new(f)))
        }
        GeneratorSpec::CubicFd {
            conductivity,
            kappa,
            quartic_blend,
            source,
            boundary,
            nodes,
            tol,
        } => {
            let Domain::Interval { a, b } = domain else {
                return Err(PiftError::InvalidConfig(
                    "[data].generator: cubic-fd ground truth is one-dimensional".into(),
                ));
            };
            let sf = build_source_fn(source)?;
            let src = move |x: f64| sf.eval(&[x]);
            let solution = bvp::solve_cubic_bvp(
                *conductivity,
                *kappa,
                *quartic_blend,
                &src,
                *a,
                *b,
                boundary[0],
                boundary[1],
                *nodes,
                *tol,
            )?;
            Ok(Truth::OneD(Box::new(move |x| solution.interp(x))))
        }
        GeneratorSpec::Bump2d { amplitude } => {
            let amp = *amplitude;
            Ok(Truth::TwoD(Box::new(move |x, y| amp * WellInformed2d::shape(x, y))))
        }
        GeneratorSpec::KgMean { alpha, source, radius, nodes_per_side } => {
            let sf = build_source_fn(source)?;
            let mean = KgPriorMean::new(*alpha, move |x| sf.eval(&[x]), *radius, *nodes_per_side)?;
            Ok(Truth::OneD(Box::new(move |x| mean.eval(x))))
        }
        GeneratorSpec::Csv { .. } => Err(PiftError::InvalidConfig(
            "file-backed observations have no synthetic ground truth".into(),
        )),
    }
}

/// Synthesize (or read) observations: flat locations, values, and the
/// spatial dimension. Synthetic draws place the sites first (random draws
/// only for the boundary layout), then add `σ·N(0,1)` per site in order;
/// with `σ = 0` the values are exactly the ground-truth field.
pub fn generate_observations(
    spec: &DataSpec,
    domain: &Domain,
) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    if let GeneratorSpec::Csv { path } = &spec.generator {
        return read_observations_csv(Path::new(path));
    }
    let seed = spec.seed.ok_or_else(|| {
        PiftError::InvalidConfig("[data].seed: unresolved; call resolve() first".into())
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = build_truth(&spec.generator, domain)?;
    let sd = domain.dim();
    let count = spec.count;

    let locations: Vec<f64> = match spec.layout {
        DataLayout::EquidistantInterior => {
            let Domain::Interval { a, b } = domain else {
                return Err(PiftError::InvalidConfig(
                    "[data].layout: equidistant-interior needs an interval domain".into(),
                ));
            };
            (1..=count)
                .map(|j| a + j as f64 / (count + 1) as f64 * (b - a))
                .collect()
        }
        DataLayout::ThreeBoundaries => {
            let Domain::Rect { x0, x1, y0, y1 } = domain else {
                return Err(PiftError::InvalidConfig(
                    "[data].layout: three-boundaries needs a rectangular domain".into(),
                ));
            };
            // The three data-carrying edges: x = x0, x = x1, y = y0. The
            // remaining edge y = y1 stays unobserved.
            let mut pts = Vec::with_capacity(2 * 3 * count);
            for edge in 0..3_u8 {
                for _ in 0..count {
                    let t: f64 = rand::Rng::gen(&mut rng);
                    match edge {
                        0 => {
                            pts.push(*x0);
                            pts.push(y0 + t * (y1 - y0));
                        }
                        1 => {
                            pts.push(*x1);
                            pts.push(y0 + t * (y1 - y0));
                        }
                        _ => {
                            pts.push(x0 + t * (x1 - x0));
                            pts.push(*y0);
                        }
                    }
                }
            }
            pts
        }
    };

    let n = locations.len() / sd;
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let x = &locations[i * sd..(i + 1) * sd];
        let z: f64 = StandardNormal.sample(&mut rng);
        values.push(truth.eval(x) + spec.noise_std * z);
    }
    Ok((locations, values, sd))
}

fn observations_csv(locations: &[f64], values: &[f64], space_dim: usize) -> String {
    let mut out = String::from(if space_dim == 1 { "x,value\n" } else { "x,y,value\n" });
    for (i, v) in values.iter().enumerate() {
        for k in 0..space_dim {
            let _ = write!(out, "{},", locations[i * space_dim + k]);
        }
        let _ = writeln!(out, "{v}");
    }
    out
}

fn write_observations_csv(
    path: &Path,
    locations: &[f64],
    values: &[f64],
    space_dim: usize,
) -> Result<()> {
    fs::write(path, observations_csv(locations, values, space_dim))?;
    Ok(())
}

fn read_observations_csv(path: &Path) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return Err(PiftError::Empty { what: "observation file" });
    };
    let sd = match header.trim() {
        "x,value" => 1,
        "x,y,value" => 2,
        other => {
            return Err(PiftError::Parse(format!(
                "{}: expected header `x,value` or `x,y,value`, found `{other}`",
                path.display()
            )))
        }
    };
    let mut locations = Vec::new();
    let mut values = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != sd + 1 {
            return Err(PiftError::Parse(format!(
                "{} line {}: expected {} comma-separated fields, found {}",
                path.display(),
                idx + 1,
                sd + 1,
                fields.len()
            )));
        }
        let mut parsed = fields.iter().map(|f| {
            f.trim().parse::<f64>().map_err(|e| {
                PiftError::Parse(format!("{} line {}: {e}", path.display(), idx + 1))
            })
        });
        for _ in 0..sd {
            locations.push(parsed.next().expect("field count checked")?);
        }
        values.push(parsed.next().expect("field count checked")?);
    }
    if values.is_empty() {
        return Err(PiftError::Empty { what: "observation file" });
    }
    Ok((locations, values, sd))
}

/// What one pipeline run left on disk.
#[derive(Debug)]
pub struct RunReport {
    pub out_dir: PathBuf,
    /// Chain files written (0 for the closed-form pipeline).
    pub chains: usize,
    pub runtime_seconds: f64,
}

#[derive(Serialize)]
struct ChainReport {
    file: String,
    schedule: String,
    seed: u64,
    rows: usize,
    dim: usize,
    proposed: usize,
    accepted: usize,
    divergences: usize,
}

fn chain_report(chain: &Chain, file: &str) -> ChainReport {
    ChainReport {
        file: file.to_string(),
        schedule: chain.schedule.clone(),
        seed: chain.seed,
        rows: chain.len(),
        dim: chain.dim(),
        proposed: chain.stats.proposed,
        accepted: chain.stats.accepted,
        divergences: chain.stats.divergences,
    }
}

#[derive(Serialize)]
struct GmmReport {
    split_sizes: [usize; 2],
    fit: GmmFit,
}

#[derive(Serialize)]
struct SweepCell {
    seed: u64,
    gamma: f64,
    median_log_beta: f64,
    median_beta: f64,
    rows: usize,
}

#[derive(Serialize)]
struct TrendReport {
    seed: u64,
    /// Rank correlation of median sampled log β against γ.
    spearman: f64,
}

#[derive(Serialize)]
struct Diagnostics {
    name: String,
    kind: String,
    seed: u64,
    runtime_seconds: f64,
    chains: Vec<ChainReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gmm: Option<GmmReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gmm_error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sweep: Option<Vec<SweepCell>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trend: Option<Vec<TrendReport>>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| PiftError::Parse(format!("{}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Run a sampler result to completion on disk: a finished chain is written
/// to `path`; an aborted chain still flushes its retained rows there
/// before the error continues up.
fn flush_chain(result: Result<Chain>, path: &Path) -> Result<Chain> {
    match result {
        Ok(chain) => {
            chain.write_csv(path)?;
            Ok(chain)
        }
        Err(PiftError::SamplerAborted { step, partial }) => {
            partial.write_csv(path)?;
            Err(PiftError::SamplerAborted { step, partial })
        }
        Err(e) => Err(e),
    }
}

fn flat_grid(domain: &Domain, points: usize) -> Vec<f64> {
    eval_grid(domain, points).into_iter().flatten().collect()
}

/// Execute the pipeline a resolved config describes and write its artifact
/// bundle. The config is re-resolved defensively, so callers may pass
/// either a freshly loaded or an already resolved tree.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport> {
    let start = Instant::now();
    let mut cfg = config.clone();
    cfg.resolve()?;
    let out = cfg.output_dir();
    fs::create_dir_all(&out)?;
    write_json(&out.join("resolved-config.json"), &cfg)?;

    let mut diag = Diagnostics {
        name: cfg.name.clone(),
        kind: cfg.kind.as_str().to_string(),
        seed: cfg.seed,
        runtime_seconds: 0.0,
        chains: Vec::new(),
        gmm: None,
        gmm_error: None,
        sweep: None,
        trend: None,
    };
    match cfg.kind {
        ExperimentKind::AnalyticKg => run_analytic(&cfg, &out)?,
        ExperimentKind::ForwardSgld => run_forward(&cfg, &out, &mut diag)?,
        ExperimentKind::InverseSgld => run_inverse(&cfg, &out, &mut diag)?,
        ExperimentKind::ForwardHmc => run_hmc(&cfg, &out, &mut diag)?,
        ExperimentKind::Sweep => run_sweep(&cfg, &out, &mut diag)?,
    }
    diag.runtime_seconds = start.elapsed().as_secs_f64();
    write_json(&out.join("diagnostics.json"), &diag)?;
    Ok(RunReport {
        out_dir: out,
        chains: diag.chains.len(),
        runtime_seconds: diag.runtime_seconds,
    })
}

/// Closed-form screened-free-theory posterior on a grid.
fn run_analytic(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let spec = cfg.analytic.as_ref().expect("resolved");
    let beta = cfg.beta.as_ref().expect("resolved").scalar()?;
    let domain = Domain::Interval { a: spec.a, b: spec.b };

    let sf = build_source_fn(&spec.source)?;
    let prior_mean = KgPriorMean::new(
        spec.alpha,
        move |x| sf.eval(&[x]),
        spec.radius,
        spec.nodes_per_side,
    )?;
    let grid = flat_grid(&domain, spec.grid_points);
    let prior_mean_values: Vec<f64> = grid.iter().map(|&x| prior_mean.eval(x)).collect();

    let (xs, ds, noise_var) = match &cfg.data {
        Some(dspec) => {
            let (locations, values, sd) = generate_observations(dspec, &domain)?;
            write_observations_csv(&out.join("data.csv"), &locations, &values, sd)?;
            (locations, values, dspec.noise_std * dspec.noise_std)
        }
        None => (Vec::new(), Vec::new(), 0.0),
    };

    let kernel = Kernel1d::KleinGordon { alpha: spec.alpha };
    let posterior =
        FreePosterior::fit(kernel, beta, move |x| prior_mean.eval(x), &xs, &ds, noise_var)?;
    let (mean, var) = posterior.mean_var(&grid);

    let mut table = String::from("x,prior_mean,mean,std\n");
    let mut summary = String::from("x,mean,std,q025,q975\n");
    for (i, &x) in grid.iter().enumerate() {
        let std = var[i].sqrt();
        let _ = writeln!(table, "{x},{},{},{std}", prior_mean_values[i], mean[i]);
        let _ = writeln!(
            summary,
            "{x},{},{std},{},{}",
            mean[i],
            mean[i] - Z_95 * std,
            mean[i] + Z_95 * std
        );
    }
    fs::write(out.join("posterior-grid.csv"), table)?;
    fs::write(out.join("summary.csv"), summary)?;
    Ok(())
}

/// Langevin sampling of the field prior/posterior, one run per β value.
fn run_forward(cfg: &ExperimentConfig, out: &Path, diag: &mut Diagnostics) -> Result<()> {
    let sgld = cfg.sgld.as_ref().expect("resolved");
    let basis = build_basis(cfg.basis.as_ref().expect("resolved"))?;
    let model = build_energy(cfg.energy.as_ref().expect("resolved"))?;
    let domain = basis.domain();
    let betas = cfg.beta.as_ref().expect("resolved").values();
    let multi = betas.len() > 1;

    let dataset = match &cfg.data {
        Some(dspec) => {
            let (locations, values, sd) = generate_observations(dspec, &domain)?;
            write_observations_csv(&out.join("data.csv"), &locations, &values, sd)?;
            Some(Dataset::new(locations, values, dspec.noise_std, sd)?.checked_in(&domain)?)
        }
        None => None,
    };

    let grid = flat_grid(&domain, cfg.grid.as_ref().expect("resolved").points);
    let theta0 = sgld.theta0.as_ref().expect("resolved");
    let mut beta_rows = String::from("beta,max_std\n");

    for (i, &beta) in betas.iter().enumerate() {
        let dir = if multi { out.join(format!("beta-{beta}")) } else { out.to_path_buf() };
        fs::create_dir_all(&dir)?;
        let seed = derive_seed(cfg.seed, i as u64);
        let alpha0 = match &dataset {
            Some(d) => SgldConfig::posterior_alpha0(sgld.alpha0_hat, beta, d.noise_std()),
            None => sgld.prior_scale / beta,
        };
        let mut sc = SgldConfig::new(alpha0, sgld.steps, seed);
        sc.alpha1 = sgld.alpha1;
        sc.n_spatial = sgld.n_spatial;
        sc.data_batch = sgld.data_batch;
        sc.burn_in = sgld.burn_in.expect("resolved");
        sc.thin = sgld.thin.expect("resolved");
        sc.noise = build_noise(sgld.noise);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let result = match &dataset {
            Some(d) => sgld_posterior(&model, &basis, beta, d, &sc, theta0, &mut rng),
            None => sgld_prior(&model, &basis, beta, &sc, theta0, &mut rng),
        };
        let chain = flush_chain(result, &dir.join("chain.csv"))?;
        let summary = summarize_field(&chain, &basis, &grid)?;
        summary.write_csv(&dir.join("summary.csv"))?;
        let _ = writeln!(beta_rows, "{beta},{}", summary.max_std());

        let file = if multi { format!("beta-{beta}/chain.csv") } else { "chain.csv".into() };
        diag.chains.push(chain_report(&chain, &file));
    }
    if multi {
        fs::write(out.join("beta-summary.csv"), beta_rows)?;
    }
    Ok(())
}

/// Hamiltonian Monte Carlo on the exact-quadrature posterior.
fn run_hmc(cfg: &ExperimentConfig, out: &Path, diag: &mut Diagnostics) -> Result<()> {
    let hmc = cfg.hmc.as_ref().expect("resolved");
    let basis = build_basis(cfg.basis.as_ref().expect("resolved"))?;
    let model = build_energy(cfg.energy.as_ref().expect("resolved"))?;
    let domain = basis.domain();
    let beta = cfg.beta.as_ref().expect("resolved").scalar()?;
    let qspec = cfg.quadrature.as_ref().expect("resolved");
    let quad = Quadrature::for_domain(
        &domain,
        qspec.points,
        (qspec.points_2d[0], qspec.points_2d[1]),
    )?;

    let dataset = match &cfg.data {
        Some(dspec) => {
            let (locations, values, sd) = generate_observations(dspec, &domain)?;
            write_observations_csv(&out.join("data.csv"), &locations, &values, sd)?;
            Some(Dataset::new(locations, values, dspec.noise_std, sd)?.checked_in(&domain)?)
        }
        None => None,
    };

    let target = InfoHamiltonian::new(&model, &basis, &quad, dataset.as_ref(), beta)?;
    let mut hc = HmcConfig::new(hmc.step_size, hmc.leapfrog_steps, hmc.steps, cfg.seed);
    hc.burn_in = hmc.burn_in.expect("resolved");
    hc.thin = hmc.thin;
    hc.mass = hmc.mass.clone();
    let theta0 = hmc.theta0.as_ref().expect("resolved");

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let result = hmc_sample(&target, &hc, theta0, &mut rng);
    let chain = flush_chain(result, &out.join("chain.csv"))?;

    let grid = flat_grid(&domain, cfg.grid.as_ref().expect("resolved").points);
    let summary = summarize_field(&chain, &basis, &grid)?;
    summary.write_csv(&out.join("summary.csv"))?;
    diag.chains.push(chain_report(&chain, "chain.csv"));

    let dspec = cfg.diagnostics.as_ref().expect("resolved");
    if dspec.gmm {
        // A chain that never left one basin can make the two-component fit
        // degenerate; record the failure instead of discarding the run.
        match fit_gmm2(
            &chain,
            dspec.gmm_max_iters,
            dspec.gmm_tol,
            derive_seed(cfg.seed, GMM_SEED_STREAM),
        ) {
            Ok(fit) => {
                let (mode0, mode1) = split_modes(&chain, &fit)?;
                for (k, part) in [(0, &mode0), (1, &mode1)] {
                    if !part.is_empty() {
                        let s = summarize_field(part, &basis, &grid)?;
                        s.write_csv(&out.join(format!("summary-mode{k}.csv")))?;
                    }
                }
                diag.gmm = Some(GmmReport { split_sizes: [mode0.len(), mode1.len()], fit });
            }
            Err(err) => diag.gmm_error = Some(err.to_string()),
        }
    }
    Ok(())
}

/// Population statistics of one parameter column.
fn parameter_row(out: &mut String, name: &str, values: &[f64]) -> Result<()> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let _ = writeln!(
        out,
        "{name},{mean},{},{},{},{}",
        var.max(0.0).sqrt(),
        quantile(values, 0.5)?,
        quantile(values, 0.025)?,
        quantile(values, 0.975)?
    );
    Ok(())
}

/// `summary.csv` for λ chains: one row per sampled coordinate, plus a row
/// in natural units for each log-carried constant.
fn parameter_summary_csv(chain: &Chain) -> Result<String> {
    let mut out = String::from("name,mean,std,median,q025,q975\n");
    for j in 0..chain.dim() {
        let name = chain.names()[j].clone();
        let col = chain.column(j);
        parameter_row(&mut out, &name, &col)?;
        if let Some(natural) = name.strip_prefix("log_") {
            let exp: Vec<f64> = col.iter().map(|v| v.exp()).collect();
            parameter_row(&mut out, natural, &exp)?;
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn execute_inverse(
    energy_spec: &EnergySpec,
    basis: &BuiltBasis,
    inv: &InverseSpec,
    dataset: &Dataset,
    seed: u64,
    chain_path: &Path,
) -> Result<Chain> {
    let template = build_energy(energy_spec)?;
    let entries: Vec<LambdaEntry> =
        inv.lambda.iter().map(|e| build_lambda_entry(*e)).collect();
    let spec = LambdaSpec::new(entries).with_source_coeffs(inv.source_coeffs);
    let priors = LambdaPriors(
        inv.priors
            .as_ref()
            .expect("resolved")
            .iter()
            .map(|p| build_prior(*p))
            .collect(),
    );
    let lambda0 = inv.lambda0.as_ref().expect("resolved");

    let mut ic = InverseConfig::new(inv.alpha0, inv.alpha0_hat, inv.maxiter, seed);
    ic.alpha1 = inv.alpha1;
    ic.inner_prior_steps = inv.inner_prior_steps;
    ic.inner_posterior_steps = inv.inner_posterior_steps;
    ic.keep_prior = inv.keep_prior;
    ic.keep_posterior = inv.keep_posterior;
    ic.n_spatial = inv.n_spatial;
    ic.inner_n_spatial = inv.inner_n_spatial;
    ic.inner_alpha1 = inv.inner_alpha1;
    ic.prior_alpha0_scale = inv.prior_scale;
    ic.data_batch = inv.data_batch;
    ic.warmup = inv.warmup;
    ic.burn_in = inv.burn_in.expect("resolved");
    ic.thin = inv.thin.expect("resolved");
    ic.noise = build_noise(inv.noise);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let result = sgld_inverse(
        &template, basis, inv.beta0, dataset, &spec, lambda0, &priors, &ic, &mut rng,
    );
    flush_chain(result, chain_path)
}

/// Nested Langevin inference of physical parameters.
fn run_inverse(cfg: &ExperimentConfig, out: &Path, diag: &mut Diagnostics) -> Result<()> {
    let inv = cfg.inverse.as_ref().expect("resolved");
    let energy_spec = cfg.energy.as_ref().expect("resolved");
    let basis = build_basis(cfg.basis.as_ref().expect("resolved"))?;
    let domain = basis.domain();

    let dspec = cfg.data.as_ref().expect("resolved");
    let (locations, values, sd) = generate_observations(dspec, &domain)?;
    write_observations_csv(&out.join("data.csv"), &locations, &values, sd)?;
    let dataset = Dataset::new(locations, values, dspec.noise_std, sd)?.checked_in(&domain)?;

    let chain =
        execute_inverse(energy_spec, &basis, inv, &dataset, cfg.seed, &out.join("chain.csv"))?;
    fs::write(out.join("summary.csv"), parameter_summary_csv(&chain)?)?;

    if inv.source_coeffs > 0 {
        let term = build_source_term(energy_spec.source())?;
        let grid = flat_grid(&domain, cfg.grid.as_ref().expect("resolved").points);
        let offset = inv.lambda.len();
        let mut table = String::from("x,mean,std,q025,q975\n");
        for &x in &grid {
            let feats = term.coeff_features(&[x])?;
            let values: Vec<f64> = chain
                .rows()
                .map(|row| {
                    row[offset..].iter().zip(&feats).map(|(c, f)| c * f).sum::<f64>()
                })
                .collect();
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let _ = writeln!(
                table,
                "{x},{mean},{},{},{}",
                var.max(0.0).sqrt(),
                quantile(&values, 0.025)?,
                quantile(&values, 0.975)?
            );
        }
        fs::write(out.join("source-summary.csv"), table)?;
    }

    diag.chains.push(chain_report(&chain, "chain.csv"));
    Ok(())
}

/// γ-grid of inverse runs, fanned out over replications × grid points.
fn run_sweep(cfg: &ExperimentConfig, out: &Path, diag: &mut Diagnostics) -> Result<()> {
    let sweep = cfg.sweep.as_ref().expect("resolved");
    let inv = cfg.inverse.as_ref().expect("resolved");
    let energy_spec = cfg.energy.as_ref().expect("resolved");
    let basis = build_basis(cfg.basis.as_ref().expect("resolved"))?;
    let domain = basis.domain();
    let data_spec = cfg.data.as_ref().expect("resolved");

    // One dataset per replication, shared across the γ grid.
    let mut datasets = Vec::with_capacity(sweep.seeds.len());
    for &rep_seed in &sweep.seeds {
        let mut dspec = data_spec.clone();
        dspec.seed = Some(derive_seed(rep_seed, DATA_SEED_STREAM));
        let (locations, values, sd) = generate_observations(&dspec, &domain)?;
        let dir = out.join(format!("seed-{rep_seed}"));
        fs::create_dir_all(&dir)?;
        write_observations_csv(&dir.join("data.csv"), &locations, &values, sd)?;
        datasets.push(Dataset::new(locations, values, dspec.noise_std, sd)?.checked_in(&domain)?);
    }

    let n_gamma = sweep.gammas.len();
    let n_cells = sweep.seeds.len() * n_gamma;
    for r in 0..sweep.seeds.len() {
        for i in 0..n_gamma {
            fs::create_dir_all(
                out.join(format!("seed-{}", sweep.seeds[r])).join(format!("gamma-{i}")),
            )?;
        }
    }

    let cells: Vec<Result<(ChainReport, SweepCell)>> = par::map_indexed(n_cells, |idx| {
        let r = idx / n_gamma;
        let i = idx % n_gamma;
        let rep_seed = sweep.seeds[r];
        let gamma = sweep.gammas[i];
        let espec = energy_with_gamma(energy_spec, sweep.variant, gamma)?;
        let rel = format!("seed-{rep_seed}/gamma-{i}/chain.csv");
        let chain = execute_inverse(
            &espec,
            &basis,
            inv,
            &datasets[r],
            derive_seed(rep_seed, i as u64),
            &out.join(&rel),
        )?;
        let j = chain
            .names()
            .iter()
            .position(|n| n == "log_beta")
            .expect("sweeps always infer log-beta");
        let median_log_beta = column_median(&chain, j)?;
        Ok((
            chain_report(&chain, &rel),
            SweepCell {
                seed: rep_seed,
                gamma,
                median_log_beta,
                median_beta: median_log_beta.exp(),
                rows: chain.len(),
            },
        ))
    });

    let mut summary = String::from("seed,gamma,median_log_beta,median_beta\n");
    let mut sweep_cells = Vec::with_capacity(n_cells);
    for cell in cells {
        let (report, cell) = cell?;
        let _ = writeln!(
            summary,
            "{},{},{},{}",
            cell.seed, cell.gamma, cell.median_log_beta, cell.median_beta
        );
        diag.chains.push(report);
        sweep_cells.push(cell);
    }
    fs::write(out.join("sweep-summary.csv"), summary)?;

    let mut trend = Vec::with_capacity(sweep.seeds.len());
    for (r, &rep_seed) in sweep.seeds.iter().enumerate() {
        let pairs: Vec<(f64, f64)> = (0..n_gamma)
            .map(|i| (sweep.gammas[i], sweep_cells[r * n_gamma + i].median_log_beta))
            .collect();
        trend.push(TrendReport { seed: rep_seed, spearman: monotone_trend(&pairs)? });
    }
    diag.sweep = Some(sweep_cells);
    diag.trend = Some(trend);
    Ok(())
}

/// A copy of the energy with the blend parameter the sweep drives set to
/// `gamma`.
fn energy_with_gamma(
    spec: &EnergySpec,
    variant: SweepVariant,
    gamma: f64,
) -> Result<EnergySpec> {
    let mut out = spec.clone();
    match variant {
        SweepVariant::EnergyBlend => match &mut out {
            EnergySpec::CubicNonlinear { quartic_blend, .. } => *quartic_blend = gamma,
            _ => {
                return Err(PiftError::InvalidConfig(
                    "[sweep].variant: energy-blend needs a cubic-nonlinear energy".into(),
                ))
            }
        },
        SweepVariant::SourceBlend => {
            let source = match &mut out {
                EnergySpec::DirichletHeat { source, .. }
                | EnergySpec::CubicNonlinear { source, .. }
                | EnergySpec::AllenCahn { source, .. } => source,
            };
            match source {
                SourceSpec::Blend { gamma: g, .. } => *g = gamma,
                _ => {
                    return Err(PiftError::InvalidConfig(
                        "[sweep].variant: source-blend needs a blend source".into(),
                    ))
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::QuadratureSpec;

    fn temp_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir()
            .join(format!("pift-run-{}-{tag}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn heat_exact_generator_with_zero_noise_matches_the_closed_form() {
        let spec = DataSpec {
            generator: GeneratorSpec::HeatExact {
                conductivity: 0.25,
                amplitude: 1.0,
                boundary: [1.0, 0.1],
            },
            count: 5,
            layout: DataLayout::EquidistantInterior,
            noise_std: 0.0,
            seed: Some(3),
        };
        let domain = Domain::Interval { a: 0.0, b: 1.0 };
        let (locations, values, sd) = generate_observations(&spec, &domain).unwrap();
        assert_eq!(sd, 1);
        assert_eq!(locations.len(), 5);
        for (j, (&x, &v)) in locations.iter().zip(&values).enumerate() {
            let expect_x = (j + 1) as f64 / 6.0;
            assert!((x - expect_x).abs() < 1e-15);
            let c1 = 0.1 + 4.0 * (-1.0f64).exp() - 5.0;
            let reference = -4.0 * (-x).exp() + c1 * x + 5.0;
            assert!((v - reference).abs() < 1e-12, "site {j}: {v} vs {reference}");
        }
    }

    #[test]
    fn observation_noise_is_seed_deterministic() {
        let spec = DataSpec {
            generator: GeneratorSpec::HeatExact {
                conductivity: 1.0,
                amplitude: 1.0,
                boundary: [0.0, 0.0],
            },
            count: 8,
            layout: DataLayout::EquidistantInterior,
            noise_std: 0.05,
            seed: Some(11),
        };
        let domain = Domain::Interval { a: 0.0, b: 1.0 };
        let first = generate_observations(&spec, &domain).unwrap();
        let second = generate_observations(&spec, &domain).unwrap();
        assert_eq!(first.1, second.1);
        let other = DataSpec { seed: Some(12), ..spec };
        let third = generate_observations(&other, &domain).unwrap();
        assert_ne!(first.1, third.1);
    }

    #[test]
    fn boundary_layout_covers_three_edges_and_skips_the_fourth() {
        let spec = DataSpec {
            generator: GeneratorSpec::Bump2d { amplitude: 2.0 },
            count: 6,
            layout: DataLayout::ThreeBoundaries,
            noise_std: 0.0,
            seed: Some(4),
        };
        let domain = Domain::symmetric_square();
        let (locations, values, sd) = generate_observations(&spec, &domain).unwrap();
        assert_eq!(sd, 2);
        assert_eq!(values.len(), 18);
        for i in 0..18 {
            let (x, y) = (locations[2 * i], locations[2 * i + 1]);
            let on_edge = x == -1.0 || x == 1.0 || y == -1.0;
            assert!(on_edge, "({x}, {y}) is not on a data-carrying edge");
            assert!(y < 1.0, "the top edge carries no observations");
            // The bump shape vanishes on every boundary edge.
            assert!(values[i].abs() < 1e-12);
        }
    }

    #[test]
    fn csv_observations_round_trip() {
        let dir = temp_dir("csv");
        let path = dir.join("obs.csv");
        let locations = vec![0.1, 0.9, 0.25];
        let values = vec![1.5, -0.75, 3.0];
        write_observations_csv(&path, &locations, &values, 1).unwrap();
        let spec = DataSpec {
            generator: GeneratorSpec::Csv { path: path.to_string_lossy().into_owned() },
            count: 0,
            layout: DataLayout::EquidistantInterior,
            noise_std: 0.1,
            seed: None,
        };
        let domain = Domain::Interval { a: 0.0, b: 1.0 };
        let (l2, v2, sd) = generate_observations(&spec, &domain).unwrap();
        assert_eq!(sd, 1);
        assert_eq!(l2, locations);
        assert_eq!(v2, values);
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn built_basis_delegates_to_each_concrete_type() {
        let specs = [
            BasisSpec::Fourier { pairs: 2, a: 0.0, b: 1.0, boundary: None },
            BasisSpec::Fourier { pairs: 2, a: 0.0, b: 1.0, boundary: Some([1.0, -0.5]) },
            BasisSpec::FourierNine2d,
            BasisSpec::WellInformed2d,
        ];
        for spec in &specs {
            let built = build_basis(spec).unwrap();
            assert_eq!(built.dim(), spec.dim());
            assert_eq!(built.space_dim(), spec.space_dim());
            let x = if spec.space_dim() == 1 { vec![0.37] } else { vec![0.37, -0.21] };
            let theta: Vec<f64> = (0..built.dim()).map(|j| 0.3 + 0.1 * j as f64).collect();
            let value = built.eval(&theta, &x).unwrap();
            assert!(value.is_finite());
            // Gradient plumbing stays wired through.
            let grad = built.eval_dx(&theta, &x).unwrap();
            assert_eq!(grad.len(), built.space_dim());
            assert!(grad.iter().all(|g: &f64| g.is_finite()));
        }
    }

    fn tiny_forward_config(out: &Path) -> ExperimentConfig {
        let text = format!(
            r#"
            name = "tiny-forward"
            kind = "forward-sgld"
            seed = 5
            output = "{}"
            beta = [10.0, 100.0]
            [basis]
            type = "fourier"
            pairs = 2
            boundary = [1.0, 0.1]
            [energy]
            type = "dirichlet-heat"
            conductivity = 0.25
            source = {{ type = "exp-decay" }}
            [sgld]
            steps = 300
            [grid]
            points = 17
            "#,
            out.display()
        );
        toml::from_str(&text).unwrap()
    }

    #[test]
    fn forward_pipeline_writes_the_bundle_and_reruns_byte_identically() {
        let dir = temp_dir("fwd");
        let cfg = tiny_forward_config(&dir);
        let report = run_experiment(&cfg).unwrap();
        assert_eq!(report.chains, 2);
        for name in [
            "resolved-config.json",
            "beta-10/chain.csv",
            "beta-10/summary.csv",
            "beta-100/chain.csv",
            "beta-100/summary.csv",
            "beta-summary.csv",
            "diagnostics.json",
        ] {
            assert!(dir.join(name).exists(), "missing artifact {name}");
        }
        let first = fs::read(dir.join("beta-10/chain.csv")).unwrap();

        // Re-running the emitted resolved config reproduces the chain.
        let resolved = ExperimentConfig::from_path(&dir.join("resolved-config.json")).unwrap();
        run_experiment(&resolved).unwrap();
        let second = fs::read(dir.join("beta-10/chain.csv")).unwrap();
        assert_eq!(first, second);
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn aborted_chains_flush_their_partial_rows() {
        let dir = temp_dir("abort");
        let mut cfg = tiny_forward_config(&dir);
        cfg.name = "tiny-abort".into();
        cfg.beta = Some(crate::config::BetaSpec::One(10.0));
        // A prior base rate this size multiplies the state by ~1e10 per
        // step, which overflows to infinity within a few dozen steps.
        cfg.sgld.as_mut().unwrap().prior_scale = 1e12;
        let err = run_experiment(&cfg).unwrap_err();
        assert!(matches!(err, PiftError::SamplerAborted { .. }), "got {err}");
        let flushed = fs::read_to_string(dir.join("chain.csv")).unwrap();
        assert!(flushed.starts_with("theta_0,"), "header row expected: {flushed}");
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn inverse_pipeline_reports_log_and_natural_parameters() {
        let dir = temp_dir("inv");
        let text = format!(
            r#"
            name = "tiny-inverse"
            kind = "inverse-sgld"
            seed = 9
            output = "{}"
            [basis]
            type = "fourier"
            pairs = 2
            boundary = [0.0, 0.0]
            [energy]
            type = "cubic-nonlinear"
            conductivity = 1.0
            kappa = 1.0
            source = {{ type = "cosine", frequency = 4.0 }}
            [data]
            generator = {{ type = "cubic-fd", conductivity = 0.1, kappa = 1.0, source = {{ type = "cosine", frequency = 4.0 }}, nodes = 129, tol = 1e-8 }}
            count = 10
            noise-std = 0.01
            [inverse]
            maxiter = 60
            warmup = 20
            alpha0 = 0.05
            alpha0-hat = 2.0
            lambda = ["log-conductivity"]
            "#,
            dir.display()
        );
        let cfg: ExperimentConfig = toml::from_str(&text).unwrap();
        run_experiment(&cfg).unwrap();
        let summary = fs::read_to_string(dir.join("summary.csv")).unwrap();
        let names: Vec<&str> =
            summary.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(names, vec!["log_conductivity", "conductivity"]);
        assert!(dir.join("data.csv").exists());
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn hmc_pipeline_writes_field_summary_on_the_square() {
        let dir = temp_dir("hmc");
        let mut cfg: ExperimentConfig = toml::from_str(&format!(
            r#"
            name = "tiny-hmc"
            kind = "forward-hmc"
            seed = 2
            output = "{}"
            beta = 50.0
            [basis]
            type = "well-informed-2d"
            [energy]
            type = "allen-cahn"
            epsilon = 0.01
            source = {{ type = "manufactured-2d", epsilon = 0.01, amplitude = 2.0 }}
            [hmc]
            step-size = 0.05
            leapfrog-steps = 5
            steps = 40
            [grid]
            points = 9
            "#,
            dir.display()
        ))
        .unwrap();
        cfg.quadrature = Some(QuadratureSpec { points: 33, points_2d: [17, 17] });
        run_experiment(&cfg).unwrap();
        let summary = fs::read_to_string(dir.join("summary.csv")).unwrap();
        assert!(summary.starts_with("x,y,mean,std,q025,q975\n"));
        assert_eq!(summary.lines().count(), 1 + 81);
        let _ = fs::remove_dir_all(&dir);
    }
}
