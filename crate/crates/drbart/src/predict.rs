//! Predictive queries against stored posterior draws: conditional density
//! curves, quantiles, highest-density regions, and summaries across draws.
//!
//! For one draw, the fitted conditional density at covariates x is an exact
//! finite mixture: the latent coordinate u is uniform on [0, 1), and both
//! ensembles are step functions of u once x is fixed, so
//!
//! p(y | x) = sum over intervals h of  len_h * Normal(y; f(x, u_h), sd(x, u_h))
//!
//! where the intervals are delimited by the union of latent cutpoints of all
//! trees along the u line at x, u_h is the interval midpoint, and
//! sd = sigma0 * exp(v / 2). Queries run on the standardized scale and are
//! mapped back to the raw response scale at the boundary (densities pick up a
//! 1/range Jacobian, quantiles pass through the affine map).
//!
//! Everything indexed "per draw" preserves draw order, so downstream
//! functionals can pair draw j of one fit with draw j of another.

use std::fmt;

use rayon::prelude::*;

use crate::data::{AffineMap, StandardizedData};
use crate::sampler::{Draw, PosteriorDraws};
use crate::special::{log_normal_pdf, normal_cdf};
use crate::tree::{u_breakpoints, Point, TreeError};

#[derive(Debug, Clone, PartialEq)]
pub enum PredictError {
    /// Quantile level outside the open interval (0, 1).
    BadQuantileLevel(f64),
    /// Band/interval level outside [0, 1).
    BadLevel(f64),
    /// Query covariate vector has the wrong length.
    DimensionMismatch { expected: usize, got: usize },
    /// No draws to evaluate.
    EmptyDraws,
    /// Grid is empty or not strictly increasing.
    BadGrid(String),
    /// The density mass captured by the grid cannot cover the requested
    /// level; the caller should widen the y grid.
    GridTooNarrow { captured: f64, needed: f64 },
    /// Percent changes are undefined when the baseline quantile is not
    /// positive.
    NonPositiveBaseQuantile { draw: usize, value: f64 },
    /// Paired inputs must have the same number of draws.
    MismatchedDrawCounts { left: usize, right: usize },
    /// A stored tree was structurally invalid.
    Tree(TreeError),
}

impl fmt::Display for PredictError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredictError::BadQuantileLevel(s) => {
                write!(f, "quantile level {} must lie strictly inside (0, 1)", s)
            }
            PredictError::BadLevel(l) => write!(f, "level {} must lie in [0, 1)", l),
            PredictError::DimensionMismatch { expected, got } => {
                write!(f, "query has {} covariates, model expects {}", got, expected)
            }
            PredictError::EmptyDraws => write!(f, "no posterior draws to evaluate"),
            PredictError::BadGrid(why) => write!(f, "bad evaluation grid: {}", why),
            PredictError::GridTooNarrow { captured, needed } => write!(
                f,
                "grid captures mass {:.6} < requested level {:.6}; widen the y grid",
                captured, needed
            ),
            PredictError::NonPositiveBaseQuantile { draw, value } => write!(
                f,
                "baseline quantile {} in draw {} is not positive; percent change undefined",
                value, draw
            ),
            PredictError::MismatchedDrawCounts { left, right } => {
                write!(f, "paired fits have {} and {} draws; counts must match", left, right)
            }
            PredictError::Tree(e) => write!(f, "tree evaluation failed: {}", e),
        }
    }
}

impl std::error::Error for PredictError {}

impl From<TreeError> for PredictError {
    fn from(e: TreeError) -> Self {
        PredictError::Tree(e)
    }
}

/// Density curves for every draw at one covariate point, on the raw response
/// scale. Row j is draw j evaluated over `y_grid`.
#[derive(Debug, Clone)]
pub struct DensityGrid {
    pub y_grid: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

/// Pointwise equal-tailed credible band over a grid. At `level` 0 the band
/// collapses to the pointwise median.
#[derive(Debug, Clone)]
pub struct CredibleBand {
    pub level: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// One mixture component on the standardized scale: interval length, mean
/// level, and scale.
#[derive(Debug, Clone, Copy)]
struct Component {
    len: f64,
    f: f64,
    sd: f64,
}

/// Query interface tying posterior draws to the standardization maps the
/// model was fitted under.
#[derive(Debug, Clone)]
pub struct Predictor<'a> {
    pub draws: &'a PosteriorDraws,
    pub y_map: AffineMap,
    pub x_maps: Vec<AffineMap>,
}

impl<'a> Predictor<'a> {
    pub fn new(draws: &'a PosteriorDraws, data: &StandardizedData) -> Self {
        Predictor { draws, y_map: data.y_map, x_maps: data.x_maps.clone() }
    }

    pub fn with_maps(draws: &'a PosteriorDraws, y_map: AffineMap, x_maps: Vec<AffineMap>) -> Self {
        Predictor { draws, y_map, x_maps }
    }

    pub fn n_draws(&self) -> usize {
        self.draws.draws.len()
    }

    fn standardize_x(&self, x_raw: &[f64]) -> Result<Vec<f64>, PredictError> {
        if x_raw.len() != self.x_maps.len() {
            return Err(PredictError::DimensionMismatch {
                expected: self.x_maps.len(),
                got: x_raw.len(),
            });
        }
        Ok(x_raw
            .iter()
            .zip(self.x_maps.iter())
            .map(|(&v, m)| m.to_standard(v))
            .collect())
    }

    /// A y grid of `points` values spanning the observed response range
    /// widened by a quarter of the range on each side.
    pub fn default_y_grid(&self, points: usize) -> Vec<f64> {
        let lo = self.y_map.min - 0.25 * self.y_map.range;
        let hi = self.y_map.min + 1.25 * self.y_map.range;
        let n = points.max(2);
        (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect()
    }

    /// The mixture components of draw `draw` at standardized covariates.
    fn components(&self, draw: &Draw, x_std: &[f64]) -> Result<Vec<Component>, PredictError> {
        let cuts = u_breakpoints(&draw.mean, &draw.var, x_std);
        let sigma0 = draw.sigma0_sq.sqrt();
        let mut comps = Vec::with_capacity(cuts.len() - 1);
        for w in cuts.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            if hi <= lo {
                continue;
            }
            let mid = 0.5 * (lo + hi);
            let p = Point { x: x_std, u: mid };
            let f = draw.mean.evaluate(p)?;
            let v = draw.var.evaluate(p)?;
            comps.push(Component { len: hi - lo, f, sd: sigma0 * (0.5 * v).exp() });
        }
        Ok(comps)
    }

    fn mixture_density_std(comps: &[Component], y_std: f64) -> f64 {
        comps
            .iter()
            .map(|c| c.len * log_normal_pdf(y_std, c.f, c.sd).exp())
            .sum()
    }

    fn mixture_cdf_std(comps: &[Component], y_std: f64) -> f64 {
        comps
            .iter()
            .map(|c| c.len * normal_cdf((y_std - c.f) / c.sd))
            .sum()
    }

    /// Density of draw `draw` over a raw-scale y grid at raw covariates.
    pub fn density_one_draw(
        &self,
        draw: usize,
        x_raw: &[f64],
        y_grid: &[f64],
    ) -> Result<Vec<f64>, PredictError> {
        let d = self.draws.draws.get(draw).ok_or(PredictError::EmptyDraws)?;
        let x_std = self.standardize_x(x_raw)?;
        let comps = self.components(d, &x_std)?;
        Ok(y_grid
            .iter()
            .map(|&y| {
                Self::mixture_density_std(&comps, self.y_map.to_standard(y)) / self.y_map.range
            })
            .collect())
    }

    /// Density curves for all draws at one covariate point.
    pub fn density_grid(&self, x_raw: &[f64], y_grid: &[f64]) -> Result<DensityGrid, PredictError> {
        if self.draws.draws.is_empty() {
            return Err(PredictError::EmptyDraws);
        }
        let x_std = self.standardize_x(x_raw)?;
        let values: Result<Vec<Vec<f64>>, PredictError> = self
            .draws
            .draws
            .par_iter()
            .map(|d| {
                let comps = self.components(d, &x_std)?;
                Ok(y_grid
                    .iter()
                    .map(|&y| {
                        Self::mixture_density_std(&comps, self.y_map.to_standard(y))
                            / self.y_map.range
                    })
                    .collect())
            })
            .collect();
        Ok(DensityGrid { y_grid: y_grid.to_vec(), values: values? })
    }

    /// Average density over draws, without materializing per-draw curves.
    pub fn mean_density(&self, x_raw: &[f64], y_grid: &[f64]) -> Result<Vec<f64>, PredictError> {
        if self.draws.draws.is_empty() {
            return Err(PredictError::EmptyDraws);
        }
        let x_std = self.standardize_x(x_raw)?;
        let y_std: Vec<f64> = y_grid.iter().map(|&y| self.y_map.to_standard(y)).collect();
        let sum = self
            .draws
            .draws
            .par_iter()
            .try_fold(
                || vec![0.0f64; y_grid.len()],
                |mut acc, d| -> Result<Vec<f64>, PredictError> {
                    let comps = self.components(d, &x_std)?;
                    for (a, &ys) in acc.iter_mut().zip(y_std.iter()) {
                        *a += Self::mixture_density_std(&comps, ys);
                    }
                    Ok(acc)
                },
            )
            .try_reduce(
                || vec![0.0f64; y_grid.len()],
                |mut a, b| {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += y;
                    }
                    Ok(a)
                },
            )?;
        let scale = self.draws.draws.len() as f64 * self.y_map.range;
        Ok(sum.into_iter().map(|v| v / scale).collect())
    }

    /// Raw-scale quantile of draw `draw` at raw covariates, found by
    /// bisection on the standardized mixture distribution function.
    pub fn quantile_one_draw(
        &self,
        draw: usize,
        x_raw: &[f64],
        s: f64,
    ) -> Result<f64, PredictError> {
        let d = self.draws.draws.get(draw).ok_or(PredictError::EmptyDraws)?;
        let x_std = self.standardize_x(x_raw)?;
        let comps = self.components(d, &x_std)?;
        let q_std = Self::mixture_quantile_std(&comps, s)?;
        Ok(self.y_map.to_raw(q_std))
    }

    /// Raw-scale quantile for every draw at one covariate point.
    pub fn quantiles(&self, x_raw: &[f64], s: f64) -> Result<Vec<f64>, PredictError> {
        if !(s.is_finite() && s > 0.0 && s < 1.0) {
            return Err(PredictError::BadQuantileLevel(s));
        }
        let x_std = self.standardize_x(x_raw)?;
        self.draws
            .draws
            .par_iter()
            .map(|d| {
                let comps = self.components(d, &x_std)?;
                Ok(self.y_map.to_raw(Self::mixture_quantile_std(&comps, s)?))
            })
            .collect()
    }

    /// Raw-scale quantiles of one draw at several levels, sharing a single
    /// component build. Level for level this equals `quantile_one_draw`.
    pub fn quantile_curve_one_draw(
        &self,
        draw: usize,
        x_raw: &[f64],
        levels: &[f64],
    ) -> Result<Vec<f64>, PredictError> {
        let d = self.draws.draws.get(draw).ok_or(PredictError::EmptyDraws)?;
        let x_std = self.standardize_x(x_raw)?;
        let comps = self.components(d, &x_std)?;
        levels
            .iter()
            .map(|&s| Ok(self.y_map.to_raw(Self::mixture_quantile_std(&comps, s)?)))
            .collect()
    }

    fn mixture_quantile_std(comps: &[Component], s: f64) -> Result<f64, PredictError> {
        if !(s.is_finite() && s > 0.0 && s < 1.0) {
            return Err(PredictError::BadQuantileLevel(s));
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for c in comps {
            lo = lo.min(c.f - 8.0 * c.sd);
            hi = hi.max(c.f + 8.0 * c.sd);
        }
        let mut span = (hi - lo).max(1e-3);
        for _ in 0..200 {
            if Self::mixture_cdf_std(comps, lo) <= s {
                break;
            }
            lo -= span;
            span *= 2.0;
        }
        let mut span = (hi - lo).max(1e-3);
        for _ in 0..200 {
            if Self::mixture_cdf_std(comps, hi) >= s {
                break;
            }
            hi += span;
            span *= 2.0;
        }
        // The distribution function of a normal mixture is continuous and
        // strictly increasing, so plain bisection converges to the unique
        // root.
        for _ in 0..200 {
            if hi - lo <= 1e-8 {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if Self::mixture_cdf_std(comps, mid) < s {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// Trapezoid integral of `values` over `grid`.
pub fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    grid.windows(2)
        .zip(values.windows(2))
        .map(|(g, v)| 0.5 * (v[0] + v[1]) * (g[1] - g[0]))
        .sum()
}

fn check_grid(grid: &[f64], values: &[f64]) -> Result<(), PredictError> {
    if grid.len() < 2 {
        return Err(PredictError::BadGrid("need at least two grid points".into()));
    }
    if grid.len() != values.len() {
        return Err(PredictError::BadGrid(format!(
            "grid has {} points but {} values",
            grid.len(),
            values.len()
        )));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(PredictError::BadGrid("grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Mass above threshold `c` and the sub-intervals where `values >= c`,
/// using linear interpolation inside grid cells that cross the threshold.
fn region_above(grid: &[f64], values: &[f64], c: f64) -> (f64, Vec<(f64, f64)>) {
    let mut mass = 0.0;
    let mut segments: Vec<(f64, f64)> = Vec::new();
    let mut open: Option<f64> = if values[0] >= c { Some(grid[0]) } else { None };
    for i in 0..grid.len() - 1 {
        let (y0, y1) = (grid[i], grid[i + 1]);
        let (p0, p1) = (values[i], values[i + 1]);
        let above0 = p0 >= c;
        let above1 = p1 >= c;
        if above0 && above1 {
            mass += 0.5 * (p0 + p1) * (y1 - y0);
        } else if above0 != above1 {
            // threshold crossing inside the cell
            let t = if (p1 - p0).abs() > 0.0 { (c - p0) / (p1 - p0) } else { 0.5 };
            let yc = y0 + t.clamp(0.0, 1.0) * (y1 - y0);
            if above0 {
                mass += 0.5 * (p0 + c) * (yc - y0);
                if let Some(start) = open.take() {
                    segments.push((start, yc));
                }
            } else {
                mass += 0.5 * (c + p1) * (y1 - yc);
                open = Some(yc);
            }
        }
    }
    if let Some(start) = open.take() {
        segments.push((start, *grid.last().unwrap()));
    }
    (mass, segments)
}

/// Smallest set of y intervals on which the density is above a common
/// threshold and which carries at least `level` of the curve's mass.
/// Errors when the grid does not capture enough mass to reach `level`.
pub fn hdr_interval(
    grid: &[f64],
    density: &[f64],
    level: f64,
) -> Result<Vec<(f64, f64)>, PredictError> {
    check_grid(grid, density)?;
    if !(level.is_finite() && level > 0.0 && level < 1.0) {
        return Err(PredictError::BadLevel(level));
    }
    if density.iter().any(|&p| !p.is_finite() || p < 0.0) {
        return Err(PredictError::BadGrid("density values must be finite and nonnegative".into()));
    }
    let total = trapezoid(grid, density);
    if total < level {
        return Err(PredictError::GridTooNarrow { captured: total, needed: level });
    }
    // Mass above a threshold decreases continuously as the threshold rises,
    // so bisect for the highest threshold still holding `level` of the mass.
    let mut c_lo = 0.0;
    let mut c_hi = density.iter().cloned().fold(0.0f64, f64::max);
    for _ in 0..100 {
        let c = 0.5 * (c_lo + c_hi);
        let (mass, _) = region_above(grid, density, c);
        if mass >= level {
            c_lo = c;
        } else {
            c_hi = c;
        }
    }
    let (_, segments) = region_above(grid, density, c_lo);
    Ok(segments)
}

/// Whether `y` falls in any of the closed intervals.
pub fn intervals_contain(intervals: &[(f64, f64)], y: f64) -> bool {
    intervals.iter().any(|&(lo, hi)| lo <= y && y <= hi)
}

fn sorted_quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < n {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[n - 1]
    }
}

/// Pointwise equal-tailed band across draws of a per-draw grid matrix.
pub fn band(values: &[Vec<f64>], level: f64) -> Result<CredibleBand, PredictError> {
    if values.is_empty() {
        return Err(PredictError::EmptyDraws);
    }
    if !(level.is_finite() && (0.0..1.0).contains(&level)) {
        return Err(PredictError::BadLevel(level));
    }
    let cols = values[0].len();
    if values.iter().any(|row| row.len() != cols) {
        return Err(PredictError::BadGrid("ragged draw matrix".into()));
    }
    let mut lower = Vec::with_capacity(cols);
    let mut upper = Vec::with_capacity(cols);
    let tail = 0.5 * (1.0 - level);
    let mut col = vec![0.0f64; values.len()];
    for j in 0..cols {
        for (i, row) in values.iter().enumerate() {
            col[i] = row[j];
        }
        col.sort_by(|a, b| a.partial_cmp(b).unwrap());
        lower.push(sorted_quantile(&col, tail));
        upper.push(sorted_quantile(&col, 1.0 - tail));
    }
    Ok(CredibleBand { level, lower, upper })
}

/// Pointwise posterior mean curve plus an equal-tailed band across draws.
pub fn summarize(grid: &DensityGrid, level: f64) -> Result<(Vec<f64>, CredibleBand), PredictError> {
    let b = band(&grid.values, level)?;
    let n = grid.values.len() as f64;
    let cols = grid.values[0].len();
    let mut mean = vec![0.0f64; cols];
    for row in &grid.values {
        for (m, &v) in mean.iter_mut().zip(row.iter()) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    Ok((mean, b))
}

/// Per-draw percent change of the s-quantile between two covariate points:
/// 100 * (Q(s | x2) - Q(s | x1)) / Q(s | x1). With `exponentiate`, both
/// quantiles are exponentiated first (for responses modeled in logs), so the
/// change reads on the level scale. A nonpositive baseline quantile is an
/// error.
pub fn returns_functional(
    pred: &Predictor<'_>,
    x1_raw: &[f64],
    x2_raw: &[f64],
    s: f64,
    exponentiate: bool,
) -> Result<Vec<f64>, PredictError> {
    if pred.draws.draws.is_empty() {
        return Err(PredictError::EmptyDraws);
    }
    let q1 = pred.quantiles(x1_raw, s)?;
    let q2 = pred.quantiles(x2_raw, s)?;
    let mut out = Vec::with_capacity(q1.len());
    for (j, (a, b)) in q1.into_iter().zip(q2.into_iter()).enumerate() {
        let (a, b) = if exponentiate { (a.exp(), b.exp()) } else { (a, b) };
        if a <= 0.0 {
            return Err(PredictError::NonPositiveBaseQuantile { draw: j, value: a });
        }
        out.push(100.0 * (b - a) / a);
    }
    Ok(out)
}

/// Projected response paths for one unit: `scores[stage][draw]`, raw scale.
#[derive(Debug, Clone)]
pub struct GrowthCurve {
    pub s: f64,
    pub scores: Vec<Vec<f64>>,
}

/// Chained quantile projection through a sequence of fitted stages.
///
/// Stage t consumes the most recent `p_t` entries of the accumulated raw
/// history (observed history first, then earlier projections), evaluates its
/// s-quantile under draw j, and appends the result. Pairing by draw index
/// propagates joint posterior uncertainty, so all stages must hold the same
/// number of draws.
pub fn growth_quantile_curves(
    stages: &[&Predictor<'_>],
    history_raw: &[f64],
    s_grid: &[f64],
) -> Result<Vec<GrowthCurve>, PredictError> {
    if stages.is_empty() {
        return Err(PredictError::EmptyDraws);
    }
    let n_draws = stages[0].n_draws();
    if n_draws == 0 {
        return Err(PredictError::EmptyDraws);
    }
    for st in stages.iter().skip(1) {
        if st.n_draws() != n_draws {
            return Err(PredictError::MismatchedDrawCounts {
                left: n_draws,
                right: st.n_draws(),
            });
        }
    }
    s_grid
        .par_iter()
        .map(|&s| {
            let mut scores = vec![vec![0.0f64; n_draws]; stages.len()];
            for j in 0..n_draws {
                let mut hist = history_raw.to_vec();
                for (t, st) in stages.iter().enumerate() {
                    let p = st.x_maps.len();
                    if hist.len() < p {
                        return Err(PredictError::DimensionMismatch {
                            expected: p,
                            got: hist.len(),
                        });
                    }
                    let x = hist[hist.len() - p..].to_vec();
                    let q = st.quantile_one_draw(j, &x, s)?;
                    scores[t][j] = q;
                    hist.push(q);
                }
            }
            Ok(GrowthCurve { s, scores })
        })
        .collect()
}
