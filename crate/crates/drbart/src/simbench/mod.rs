//! Synthetic benchmark generators and evaluation metrics.
//!
//! The generators share one family: a steep shifted-logistic mean curve in a
//! single relevant covariate, plus an error whose shape morphs with x between
//! a left-skewed log-gamma and a normal. The mixing weight
//! lambda(x) = exp(-10 (x - 0.8)^2) reaches 1 at x = 0.8, so the conditional
//! law there is exactly Normal(1, 0.3^2) — handy as an analytic anchor.
//! Variants add correlated irrelevant covariates, punch a sampling gap into
//! the x distribution, or swap the mean for a quadratic.
//!
//! Metrics: 1-Wasserstein distance between gridded densities (integral of
//! |CDF difference|), credible-band coverage of a true density inside its own
//! highest-density region, and predictive coverage of held-out responses.

pub mod geweke;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::predict::{hdr_interval, intervals_contain, trapezoid, CredibleBand, PredictError, Predictor};
use crate::special::{ln_gamma, log_normal_pdf, sample_gamma};

#[derive(Debug, Clone, PartialEq)]
pub enum SimError {
    /// Two gridded curves were compared on different grids.
    GridMismatch(String),
    /// A curve failed a sanity requirement (mass, finiteness, shape).
    BadCurve(String),
    /// Malformed generator specification.
    BadSpec(String),
    /// An underlying predictive query failed.
    Predict(PredictError),
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::GridMismatch(s) => write!(f, "grid mismatch: {}", s),
            SimError::BadCurve(s) => write!(f, "bad curve: {}", s),
            SimError::BadSpec(s) => write!(f, "bad generator spec: {}", s),
            SimError::Predict(e) => write!(f, "predictive query failed: {}", e),
        }
    }
}

impl std::error::Error for SimError {}

impl From<PredictError> for SimError {
    fn from(e: PredictError) -> Self {
        SimError::Predict(e)
    }
}

/// Which benchmark generator to draw from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DgpVariant {
    /// One uniform covariate, logistic mean.
    Base,
    /// Fifteen covariates: the relevant one plus 14 noise columns, all
    /// pairwise dependent through a single-factor Gaussian copula with
    /// correlation 0.3 on the Gaussian scale.
    Irrelevant14,
    /// One covariate with a thinly sampled band: x falls in [0.4, 0.6] with
    /// probability 0.05 and spreads uniformly over the flanks otherwise.
    GapX,
    /// Quadratic mean a (x - 1/2)^2 instead of the logistic curve.
    Quadratic(f64),
}

impl FromStr for DgpVariant {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        match s {
            "base" => Ok(DgpVariant::Base),
            "irrelevant14" => Ok(DgpVariant::Irrelevant14),
            "gapx" => Ok(DgpVariant::GapX),
            other => {
                if let Some(a) = other.strip_prefix("quadratic:") {
                    let a: f64 = a
                        .parse()
                        .map_err(|_| SimError::BadSpec(format!("bad quadratic level {:?}", a)))?;
                    if !a.is_finite() {
                        return Err(SimError::BadSpec("quadratic level must be finite".into()));
                    }
                    Ok(DgpVariant::Quadratic(a))
                } else {
                    Err(SimError::BadSpec(format!(
                        "unknown generator {:?}; try base, irrelevant14, gapx, quadratic:<a>",
                        other
                    )))
                }
            }
        }
    }
}

impl fmt::Display for DgpVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DgpVariant::Base => write!(f, "base"),
            DgpVariant::Irrelevant14 => write!(f, "irrelevant14"),
            DgpVariant::GapX => write!(f, "gapx"),
            DgpVariant::Quadratic(a) => write!(f, "quadratic:{}", a),
        }
    }
}

/// A reproducible draw request: generator, sample size, seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DgpSpec {
    pub variant: DgpVariant,
    pub n: usize,
    pub seed: u64,
}

/// A simulated data set on the raw scale, row-major covariates.
#[derive(Debug, Clone)]
pub struct SimData {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

/// The steep shifted-logistic mean curve used by most variants.
pub fn logistic_mean(x: f64) -> f64 {
    5.0 * (15.0 * (x - 0.5)).exp() / (1.0 + (15.0 * (x - 0.5)).exp()) - 4.0 * x
}

/// Mean curve of a given variant at relevant covariate x.
pub fn mean_function(variant: DgpVariant, x: f64) -> f64 {
    match variant {
        DgpVariant::Quadratic(a) => a * (x - 0.5) * (x - 0.5),
        _ => logistic_mean(x),
    }
}

/// Weight of the normal error component; hits 1 at x = 0.8.
pub fn normal_weight(x: f64) -> f64 {
    (-10.0 * (x - 0.8) * (x - 0.8)).exp()
}

/// Density of ln G where G is Gamma(shape, scale 1), evaluated at z.
fn log_gamma_density(z: f64, shape: f64) -> f64 {
    (shape * z - z.exp() - ln_gamma(shape)).exp()
}

/// One error draw at relevant covariate x.
pub fn sample_error<R: Rng + ?Sized>(rng: &mut R, x: f64) -> f64 {
    let lam = normal_weight(x);
    if rng.gen::<f64>() < lam {
        let z: f64 = StandardNormal.sample(rng);
        2.0 * x - 0.6 + 0.3 * z
    } else {
        sample_gamma(rng, 0.5 + x * x, 1.0)
            .expect("shape and rate are positive")
            .ln()
    }
}

fn sample_gap_x<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let c = rng.gen::<f64>();
    if c < 0.475 {
        0.4 * rng.gen::<f64>()
    } else if c < 0.525 {
        0.4 + 0.2 * rng.gen::<f64>()
    } else {
        0.6 + 0.4 * rng.gen::<f64>()
    }
}

fn sample_copula_row<R: Rng + ?Sized>(rng: &mut R) -> Vec<f64> {
    let rho: f64 = 0.3;
    let common: f64 = StandardNormal.sample(rng);
    (0..15)
        .map(|_| {
            let e: f64 = StandardNormal.sample(rng);
            let z = rho.sqrt() * common + (1.0 - rho).sqrt() * e;
            crate::special::normal_cdf(z)
        })
        .collect()
}

/// Draw a full data set. Column 0 is always the relevant covariate.
pub fn sample(spec: &DgpSpec) -> SimData {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut x = Vec::with_capacity(spec.n);
    let mut y = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let row = match spec.variant {
            DgpVariant::Irrelevant14 => sample_copula_row(&mut rng),
            DgpVariant::GapX => vec![sample_gap_x(&mut rng)],
            _ => vec![rng.gen::<f64>()],
        };
        let x1 = row[0];
        y.push(mean_function(spec.variant, x1) + sample_error(&mut rng, x1));
        x.push(row);
    }
    SimData { x, y }
}

/// The exact conditional density of y given relevant covariate x.
pub fn true_density(variant: DgpVariant, x: f64, y_grid: &[f64]) -> Vec<f64> {
    let f0 = mean_function(variant, x);
    let lam = normal_weight(x);
    let shape = 0.5 + x * x;
    y_grid
        .iter()
        .map(|&y| {
            let z = y - f0;
            lam * log_normal_pdf(z, 2.0 * x - 0.6, 0.3).exp()
                + (1.0 - lam) * log_gamma_density(z, shape)
        })
        .collect()
}

fn check_same_grid(a: &[f64], b: &[f64]) -> Result<(), SimError> {
    if a.len() != b.len() {
        return Err(SimError::GridMismatch(format!(
            "lengths {} and {} differ",
            a.len(),
            b.len()
        )));
    }
    if a.iter().zip(b.iter()).any(|(x, y)| x != y) {
        return Err(SimError::GridMismatch("grid values differ".into()));
    }
    if a.len() < 2 || a.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SimError::GridMismatch("grid must be strictly increasing".into()));
    }
    Ok(())
}

fn cumulative_trapezoid(grid: &[f64], values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.len());
    let mut acc = 0.0;
    out.push(0.0);
    for i in 0..grid.len() - 1 {
        acc += 0.5 * (values[i] + values[i + 1]) * (grid[i + 1] - grid[i]);
        out.push(acc);
    }
    out
}

/// 1-Wasserstein distance between two densities tabulated on one grid:
/// the integral of the absolute difference of their distribution functions.
/// Both curves must carry essentially all of their mass on the grid.
pub fn wasserstein1(grid: &[f64], p: &[f64], q: &[f64]) -> Result<f64, SimError> {
    check_same_grid(grid, grid)?;
    if p.len() != grid.len() || q.len() != grid.len() {
        return Err(SimError::GridMismatch(format!(
            "grid has {} points; curves have {} and {}",
            grid.len(),
            p.len(),
            q.len()
        )));
    }
    for (name, v) in [("first", p), ("second", q)] {
        if v.iter().any(|&t| !t.is_finite() || t < 0.0) {
            return Err(SimError::BadCurve(format!("{} curve has negative or non-finite values", name)));
        }
        let mass = trapezoid(grid, v);
        if (mass - 1.0).abs() > 0.02 {
            return Err(SimError::BadCurve(format!(
                "{} curve integrates to {:.4}; widen the grid before comparing",
                name, mass
            )));
        }
    }
    let cp = cumulative_trapezoid(grid, p);
    let cq = cumulative_trapezoid(grid, q);
    let diff: Vec<f64> = cp.iter().zip(cq.iter()).map(|(a, b)| (a - b).abs()).collect();
    Ok(trapezoid(grid, &diff))
}

/// Compare two densities tabulated on their own grids; the grids must agree.
pub fn wasserstein1_checked(
    grid_p: &[f64],
    p: &[f64],
    grid_q: &[f64],
    q: &[f64],
) -> Result<f64, SimError> {
    check_same_grid(grid_p, grid_q)?;
    wasserstein1(grid_p, p, q)
}

/// Whether a pointwise credible band covers a true density everywhere inside
/// the truth's own highest-density region at `hdr_level`.
pub fn band_coverage(
    band: &CredibleBand,
    grid: &[f64],
    truth: &[f64],
    hdr_level: f64,
) -> Result<bool, SimError> {
    if band.lower.len() != grid.len() || band.upper.len() != grid.len() || truth.len() != grid.len()
    {
        return Err(SimError::GridMismatch(
            "band, truth, and grid must have equal lengths".into(),
        ));
    }
    let region = hdr_interval(grid, truth, hdr_level)?;
    for i in 0..grid.len() {
        if intervals_contain(&region, grid[i])
            && !(band.lower[i] <= truth[i] && truth[i] <= band.upper[i])
        {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Fraction of held-out (x, y) pairs whose y lands in the highest-density
/// region, at `level`, of the posterior mean density at their own x.
pub fn predictive_coverage(
    pred: &Predictor<'_>,
    xs: &[Vec<f64>],
    ys: &[f64],
    y_grid: &[f64],
    level: f64,
) -> Result<f64, SimError> {
    if xs.len() != ys.len() || xs.is_empty() {
        return Err(SimError::BadSpec("need equally many covariate rows and responses".into()));
    }
    let hits: Result<Vec<bool>, SimError> = xs
        .par_iter()
        .zip(ys.par_iter())
        .map(|(x, &y)| {
            let dens = pred.mean_density(x, y_grid)?;
            let region = hdr_interval(y_grid, &dens, level)?;
            Ok(intervals_contain(&region, y))
        })
        .collect();
    let hits = hits?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
}
