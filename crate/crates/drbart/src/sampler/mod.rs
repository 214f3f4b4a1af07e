//! The Markov chain over (mean ensemble, variance ensemble, latent
//! coordinates, baseline scale).
//!
//! One sweep visits every mean tree, every variance tree, the baseline
//! scale (homoscedastic model only), then every observation's latent
//! coordinate (several passes, each closing with a round of pairwise
//! latent exchanges) — always in that order, so a run is a pure function
//! of the seed. Tree updates are birth/death/rule-replacement proposals
//! on the shape with the leaf values integrated out, followed by an
//! exact redraw of all leaf values; latent updates move u_i along the
//! exact step-function representation of the fitted surfaces at x_i, or
//! trade positions between two observations outright.
//!
//! Everything enforces the minimum-leaf-occupancy constraint: shape
//! proposals and latent moves that would leave any leaf of any tree with
//! fewer than `min_leaf` observations are rejected outright, which amounts
//! to sampling the prior restricted to feasible states.

mod latent;
mod leaves;
mod moves;

pub use latent::{latent_swap_pass, latent_update_gibbs, latent_update_slice};
pub use leaves::{LeafStats, MeanLeaf, ScaleDraw, ScaleLeaf};
pub use moves::{mean_tree_update, variance_tree_update};

use crate::data::StandardizedData;
use crate::priors::{BartHyperParams, Sigma0Spec, VarianceHyperParams};
use crate::special::sample_inverse_gamma;
use crate::tree::{Ensemble, Point, Tree};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::fmt;

/// Which noise structure the model carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Variant {
    /// Constant noise scale sigma0; no variance ensemble.
    Homoscedastic,
    /// Noise scale varies with the covariates only: variance trees may not
    /// split on the latent axis.
    CovariateScale,
    /// Noise scale varies with covariates and the latent coordinate.
    FullScale,
}

/// Which latent-coordinate kernel to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum LatentUpdate {
    /// Exact categorical draw over the step intervals, weighted by interval
    /// length times likelihood.
    Gibbs,
    /// Exact slice step: uniform over the union of intervals whose
    /// likelihood clears a uniform slice level.
    Slice,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ChainConfig {
    pub variant: Variant,
    /// Shape prior and mean-leaf scale (shared depth penalty for both
    /// ensembles; `m` is the mean-tree count).
    pub hp: BartHyperParams,
    /// Variance-ensemble size and leaf-scale concentration.
    pub vhp: VarianceHyperParams,
    pub sigma0: Sigma0Spec,
    pub latent: LatentUpdate,
    /// Kept draws after burn-in and thinning.
    pub iterations: usize,
    pub burn_in: usize,
    /// Keep every `thin`-th sweep after burn-in (>= 1).
    pub thin: usize,
    pub seed: u64,
    /// RNG stream, so concurrent chains with one seed stay independent.
    pub stream: u64,
    pub save_latents: bool,
    /// Test instrumentation: added to every shape-move log acceptance
    /// ratio. Zero in real use; the self-consistency harness uses it to
    /// prove it can detect a broken kernel.
    pub mh_log_bias: f64,
}

impl ChainConfig {
    /// Defaults mirroring the usual ensemble sizes: 250 mean trees, 100
    /// variance trees, k = 2, variance-range multiplier 4.
    pub fn standard(variant: Variant, sigma0: Sigma0Spec) -> Self {
        ChainConfig {
            variant,
            hp: BartHyperParams::standard(250),
            vhp: VarianceHyperParams {
                m_v: 100,
                a0: crate::priors::calibrate_a0(4.0).expect("4 > 1"),
            },
            sigma0,
            latent: LatentUpdate::Gibbs,
            iterations: 1000,
            burn_in: 1000,
            thin: 1,
            seed: 0,
            stream: 0,
            save_latents: false,
            mh_log_bias: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SamplerError {
    /// The configuration cannot produce a valid chain.
    Config(String),
    /// An operation was called in a state its contract forbids.
    Contract(String),
    /// Numerical failure inside a kernel.
    Math(String),
}

impl fmt::Display for SamplerError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SamplerError::Config(m) => write!(f, "config error: {}", m),
            SamplerError::Contract(m) => write!(f, "contract violation: {}", m),
            SamplerError::Math(m) => write!(f, "numerical error: {}", m),
        }
    }
}

impl std::error::Error for SamplerError {}

impl From<crate::special::MathError> for SamplerError {
    fn from(e: crate::special::MathError) -> Self {
        SamplerError::Math(e.to_string())
    }
}

/// Acceptance counters and degeneracy tallies for one run.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MoveStats {
    pub mean_birth_proposed: u64,
    pub mean_birth_accepted: u64,
    pub mean_death_proposed: u64,
    pub mean_death_accepted: u64,
    pub var_birth_proposed: u64,
    pub var_birth_accepted: u64,
    pub var_death_proposed: u64,
    pub var_death_accepted: u64,
    #[serde(default)]
    pub mean_change_proposed: u64,
    #[serde(default)]
    pub mean_change_accepted: u64,
    #[serde(default)]
    pub var_change_proposed: u64,
    #[serde(default)]
    pub var_change_accepted: u64,
    pub latent_updates: u64,
    /// Latent updates that kept the current value because no alternative
    /// was feasible.
    pub latent_stuck: u64,
    #[serde(default)]
    pub latent_swap_proposed: u64,
    #[serde(default)]
    pub latent_swap_accepted: u64,
    /// Variance-leaf draws that hit exactly-zero residuals and fell back
    /// to the prior.
    pub degenerate_scale_draws: u64,
    pub sweeps: u64,
}

/// One kept posterior draw.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    /// Sweep number this draw was taken at (1-based).
    pub sweep: u64,
    pub mean: Ensemble,
    pub var: Ensemble,
    pub sigma0_sq: f64,
    pub latents: Option<Vec<f64>>,
}

/// A full run: the configuration it came from, the kept draws, and the
/// move statistics.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub config: ChainConfig,
    pub draws: Vec<Draw>,
    pub stats: MoveStats,
}

/// Scratch buffers reused across updates so the hot loops do not allocate.
#[derive(Debug, Clone, Default)]
pub(crate) struct Scratch {
    pub terms: Vec<LeafStats>,
    pub members: Vec<u32>,
    pub leaf_stats: Vec<LeafStats>,
    pub old_values: Vec<f64>,
    // latent-update buffers
    pub cut_vals: Vec<f64>,
    pub cut_slots: Vec<u32>,
    pub step_ids: Vec<u32>,
    pub active: Vec<ActiveTree>,
    pub bounds: Vec<f64>,
    pub f_run: Vec<f64>,
    pub v_run: Vec<f64>,
    pub feas: Vec<bool>,
    pub weights: Vec<f64>,
    pub order: Vec<u32>,
    // destination leaves (per tree, mean then variance) of a proposed
    // latent exchange
    pub swap_dest_i: Vec<u32>,
    pub swap_dest_j: Vec<u32>,
}

/// One tree that actually varies along u at the current covariates.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct ActiveTree {
    pub is_var: bool,
    pub index: u32,
    /// Range into the shared cut/step buffers.
    pub cut_start: u32,
    pub cut_end: u32,
    pub id_start: u32,
    /// Leaf the observation currently sits in.
    pub from: u32,
    /// True when the occupancy of `from` is exactly at the minimum, so the
    /// observation may not leave that leaf.
    pub pinned: bool,
    /// Walk cursor into the tree's cut range during the interval merge.
    pub cursor: u32,
}

/// Full sampler state plus the caches that make sweeps O(n) per tree.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub mean: Ensemble,
    pub var: Ensemble,
    pub u: Vec<f64>,
    pub sigma0_sq: f64,
    /// Per-observation fitted mean, sum over mean trees.
    pub(crate) f_total: Vec<f64>,
    /// Per-observation summed log variance multiplier (zero when the
    /// variance ensemble is empty).
    pub(crate) v_total: Vec<f64>,
    /// Precision weights 1 / (sigma0^2 exp(v_i)) and their logs.
    pub(crate) w: Vec<f64>,
    pub(crate) log_w: Vec<f64>,
    /// Per-tree, per-observation leaf arena index.
    pub(crate) mean_assign: Vec<Vec<u32>>,
    pub(crate) var_assign: Vec<Vec<u32>>,
    /// Per-tree occupancy, arena-aligned.
    pub(crate) mean_counts: Vec<Vec<u32>>,
    pub(crate) var_counts: Vec<Vec<u32>>,
    pub(crate) scratch: Scratch,
}

impl ModelState {
    /// All-root-leaf starting state: f = v = 0, latents at the ranks of the
    /// linear-fit residuals. Starting u already sorted the way the
    /// likelihood wants it cuts the transient by an order of magnitude
    /// compared to a uniform scatter; the kernels then spread it out.
    pub fn initial<R: Rng + ?Sized>(
        data: &StandardizedData,
        cfg: &ChainConfig,
        _rng: &mut R,
    ) -> Result<Self, SamplerError> {
        validate_config(data, cfg)?;
        let n = data.n();
        let m_v = if cfg.variant == Variant::Homoscedastic { 0 } else { cfg.vhp.m_v };
        let mean = Ensemble::constant(cfg.hp.m, 0.0);
        let var = Ensemble::constant(m_v, 0.0);
        let resid = ols_residuals(data);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| resid[a].partial_cmp(&resid[b]).expect("finite residuals"));
        let mut u = vec![0.0; n];
        for (rank, &i) in order.iter().enumerate() {
            u[i] = (rank as f64 + 0.5) / n as f64;
        }
        let sigma0_sq = match cfg.sigma0 {
            Sigma0Spec::Fixed(s) => s * s,
            Sigma0Spec::InverseGamma { xi0, .. } => xi0,
        };
        let mut state = ModelState {
            mean,
            var,
            u,
            sigma0_sq,
            f_total: vec![0.0; n],
            v_total: vec![0.0; n],
            w: vec![0.0; n],
            log_w: vec![0.0; n],
            mean_assign: vec![vec![0; n]; cfg.hp.m],
            var_assign: vec![vec![0; n]; m_v],
            mean_counts: vec![vec![n as u32]; cfg.hp.m],
            var_counts: vec![vec![n as u32]; m_v],
            scratch: Scratch::default(),
        };
        state.rebuild_caches(data);
        Ok(state)
    }

    /// Draw a state from the prior restricted to feasible shapes, by
    /// rejection over the joint (latents, both ensembles). Leaf values and
    /// the baseline scale come from their exact priors.
    pub fn from_prior<R: Rng + ?Sized>(
        data: &StandardizedData,
        cfg: &ChainConfig,
        rng: &mut R,
    ) -> Result<Self, SamplerError> {
        validate_config(data, cfg)?;
        let n = data.n();
        let m_v = if cfg.variant == Variant::Homoscedastic { 0 } else { cfg.vhp.m_v };
        'attempt: for _ in 0..1_000_000 {
            let u: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let mut mean_trees = Vec::with_capacity(cfg.hp.m);
            for _ in 0..cfg.hp.m {
                let t = moves::grow_prior_tree(rng, data, cfg, false);
                if !feasible(&t, data, &u, cfg.hp.min_leaf) {
                    continue 'attempt;
                }
                mean_trees.push(t);
            }
            let mut var_trees = Vec::with_capacity(m_v);
            for _ in 0..m_v {
                let t = moves::grow_prior_tree(rng, data, cfg, true);
                if !feasible(&t, data, &u, cfg.hp.min_leaf) {
                    continue 'attempt;
                }
                var_trees.push(t);
            }
            // feasible shapes: fill leaves from their priors
            for t in &mut mean_trees {
                for id in t.leaf_ids() {
                    let v = Normal::new(0.0, cfg.hp.sigma_mu)
                        .expect("positive sigma_mu")
                        .sample(rng);
                    t.nodes[id as usize] = crate::tree::Node::Leaf { value: v };
                }
            }
            let a = cfg.vhp.concentration();
            for t in &mut var_trees {
                for id in t.leaf_ids() {
                    let tau = crate::priors::sample_leaf_scale_prior(rng, a, a)
                        .map_err(|e| SamplerError::Math(e.to_string()))?;
                    t.nodes[id as usize] = crate::tree::Node::Leaf { value: tau.ln() };
                }
            }
            let sigma0_sq = match cfg.sigma0 {
                Sigma0Spec::Fixed(s) => s * s,
                Sigma0Spec::InverseGamma { nu0, xi0 } => {
                    sample_inverse_gamma(rng, nu0 / 2.0, nu0 * xi0 / 2.0)?
                }
            };
            let mut state = ModelState {
                mean: Ensemble { trees: mean_trees },
                var: Ensemble { trees: var_trees },
                u,
                sigma0_sq,
                f_total: vec![0.0; n],
                v_total: vec![0.0; n],
                w: vec![0.0; n],
                log_w: vec![0.0; n],
                mean_assign: vec![vec![0; n]; cfg.hp.m],
                var_assign: vec![vec![0; n]; m_v],
                mean_counts: Vec::new(),
                var_counts: Vec::new(),
                scratch: Scratch::default(),
            };
            state.rebuild_caches(data);
            return Ok(state);
        }
        Err(SamplerError::Config(
            "could not draw a feasible prior state in 1e6 attempts; \
             min_leaf is likely too tight for n"
                .into(),
        ))
    }

    /// Recompute every cache from the trees and latents. Also the antidote
    /// to float drift from incremental updates; the chain driver calls it
    /// periodically.
    pub fn rebuild_caches(&mut self, data: &StandardizedData) {
        let n = data.n();
        self.f_total.iter_mut().for_each(|v| *v = 0.0);
        self.v_total.iter_mut().for_each(|v| *v = 0.0);
        self.mean_counts = self
            .mean
            .trees
            .iter()
            .map(|t| vec![0u32; t.nodes.len()])
            .collect();
        self.var_counts =
            self.var.trees.iter().map(|t| vec![0u32; t.nodes.len()]).collect();
        for i in 0..n {
            let pt = Point { x: &data.x[i], u: self.u[i] };
            for (h, t) in self.mean.trees.iter().enumerate() {
                let id = t.leaf_index(pt).expect("consistent dimensions");
                self.mean_assign[h][i] = id;
                self.mean_counts[h][id as usize] += 1;
                self.f_total[i] += t.value_at(id);
            }
            for (h, t) in self.var.trees.iter().enumerate() {
                let id = t.leaf_index(pt).expect("consistent dimensions");
                self.var_assign[h][i] = id;
                self.var_counts[h][id as usize] += 1;
                self.v_total[i] += t.value_at(id);
            }
        }
        self.refresh_weights();
    }

    /// Recompute w and log w from v_total and sigma0^2.
    pub(crate) fn refresh_weights(&mut self) {
        let ls = self.sigma0_sq.ln();
        for i in 0..self.w.len() {
            self.log_w[i] = -self.v_total[i] - ls;
            self.w[i] = self.log_w[i].exp();
        }
    }

    /// Conditional response draw y_i ~ N(f_i, sigma0^2 exp(v_i)) — the
    /// data-refresh half of prior/posterior self-consistency checks.
    pub fn redraw_response<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let s0 = self.sigma0_sq.sqrt();
        (0..self.f_total.len())
            .map(|i| {
                let sd = s0 * (0.5 * self.v_total[i]).exp();
                Normal::new(self.f_total[i], sd).expect("positive sd").sample(rng)
            })
            .collect()
    }

    pub fn n_obs(&self) -> usize {
        self.u.len()
    }

    /// Fitted mean for observation i (from the cache).
    pub fn fitted_mean(&self, i: usize) -> f64 {
        self.f_total[i]
    }

    /// Fitted log variance multiplier for observation i.
    pub fn fitted_log_scale(&self, i: usize) -> f64 {
        self.v_total[i]
    }
}

/// Every leaf of `tree` must hold at least `min_leaf` of the (x, u) points.
fn feasible(tree: &Tree, data: &StandardizedData, u: &[f64], min_leaf: usize) -> bool {
    let mut counts = vec![0u32; tree.nodes.len()];
    for (i, x) in data.x.iter().enumerate() {
        let id = tree.leaf_index(Point { x, u: u[i] }).expect("consistent dims");
        counts[id as usize] += 1;
    }
    tree.leaf_ids().into_iter().all(|id| counts[id as usize] as usize >= min_leaf)
}

fn validate_config(data: &StandardizedData, cfg: &ChainConfig) -> Result<(), SamplerError> {
    if cfg.hp.m == 0 {
        return Err(SamplerError::Config("mean ensemble needs at least one tree".into()));
    }
    if cfg.variant != Variant::Homoscedastic && cfg.vhp.m_v == 0 {
        return Err(SamplerError::Config(
            "heteroscedastic variants need at least one variance tree".into(),
        ));
    }
    if !(cfg.hp.sigma_mu > 0.0) {
        return Err(SamplerError::Config("sigma_mu must be positive".into()));
    }
    if cfg.variant != Variant::Homoscedastic && !(cfg.vhp.a0 > 0.0) {
        return Err(SamplerError::Config("a0 must be positive".into()));
    }
    if cfg.thin == 0 {
        return Err(SamplerError::Config("thin must be at least 1".into()));
    }
    if data.n() <= (2 * cfg.hp.min_leaf).max(1) {
        return Err(SamplerError::Config(format!(
            "need more than 2 * min_leaf = {} observations, have {}",
            2 * cfg.hp.min_leaf,
            data.n()
        )));
    }
    let y0 = data.y[0];
    if data.y.iter().all(|&v| v == y0) {
        return Err(SamplerError::Config("response is constant; nothing to model".into()));
    }
    match cfg.sigma0 {
        Sigma0Spec::Fixed(s) => {
            if !(s > 0.0) || !s.is_finite() {
                return Err(SamplerError::Config(format!(
                    "fixed sigma0 must be positive and finite, got {}",
                    s
                )));
            }
        }
        Sigma0Spec::InverseGamma { nu0, xi0 } => {
            if cfg.variant != Variant::Homoscedastic {
                return Err(SamplerError::Config(
                    "an inverse-gamma sigma0 prior only makes sense for the \
                     homoscedastic variant; heteroscedastic variants fix sigma0"
                        .into(),
                ));
            }
            if !(nu0 > 0.0) || !(xi0 > 0.0) {
                return Err(SamplerError::Config(format!(
                    "inverse-gamma sigma0 prior needs nu0, xi0 > 0, got {} {}",
                    nu0, xi0
                )));
            }
        }
    }
    Ok(())
}

/// Conjugate refresh of sigma0^2 under the homoscedastic model:
/// sigma0^2 | rest ~ InvGamma((nu0 + n)/2, (nu0 xi0 + sum resid^2)/2).
/// Calling this under a heteroscedastic variant is a contract violation.
pub fn sigma0_update<R: Rng + ?Sized>(
    state: &mut ModelState,
    data: &StandardizedData,
    cfg: &ChainConfig,
    rng: &mut R,
) -> Result<(), SamplerError> {
    if cfg.variant != Variant::Homoscedastic {
        return Err(SamplerError::Contract(
            "sigma0_update only applies to the homoscedastic variant; \
             heteroscedastic variants keep sigma0 fixed"
                .into(),
        ));
    }
    let (nu0, xi0) = match cfg.sigma0 {
        Sigma0Spec::InverseGamma { nu0, xi0 } => (nu0, xi0),
        // fixed sigma0 under the homoscedastic model: nothing to refresh
        Sigma0Spec::Fixed(_) => return Ok(()),
    };
    let n = data.n() as f64;
    let ssr: f64 = (0..data.n())
        .map(|i| {
            let e = data.y[i] - state.f_total[i];
            e * e
        })
        .sum();
    state.sigma0_sq =
        sample_inverse_gamma(rng, (nu0 + n) / 2.0, (nu0 * xi0 + ssr) / 2.0)?;
    state.refresh_weights();
    Ok(())
}

/// One full sweep in the fixed order: mean trees, variance trees, baseline
/// scale, latents.
pub fn sweep<R: Rng + ?Sized>(
    state: &mut ModelState,
    data: &StandardizedData,
    cfg: &ChainConfig,
    rng: &mut R,
    stats: &mut MoveStats,
) -> Result<(), SamplerError> {
    for h in 0..state.mean.trees.len() {
        mean_tree_update(state, data, cfg, h, rng, stats)?;
    }
    if cfg.variant != Variant::Homoscedastic {
        for h in 0..state.var.trees.len() {
            variance_tree_update(state, data, cfg, h, rng, stats)?;
        }
    }
    if cfg.variant == Variant::Homoscedastic {
        if let Sigma0Spec::InverseGamma { .. } = cfg.sigma0 {
            sigma0_update(state, data, cfg, rng)?;
        }
    }
    // u is the slowest-mixing block by far — each observation's move is
    // boxed in by every tree it sits in — so the latent pass runs several
    // times per sweep, and each pass ends with the pairwise exchanges
    // that move through arrangements the one-coordinate kernels cannot
    // reach. Cheap relative to the tree updates.
    for _ in 0..LATENT_PASSES {
        for i in 0..data.n() {
            match cfg.latent {
                LatentUpdate::Gibbs => latent_update_gibbs(state, data, cfg, i, rng, stats)?,
                LatentUpdate::Slice => latent_update_slice(state, data, cfg, i, rng, stats)?,
            }
        }
        latent_swap_pass(state, data, cfg, rng, stats)?;
    }
    stats.sweeps += 1;
    Ok(())
}

/// Latent-coordinate passes per sweep.
const LATENT_PASSES: usize = 3;

/// Run a full chain: burn-in plus `iterations * thin` recorded sweeps,
/// deterministic in (seed, stream).
pub fn run_chain(
    data: &StandardizedData,
    cfg: &ChainConfig,
) -> Result<PosteriorDraws, SamplerError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(cfg.stream);
    let mut state = ModelState::initial(data, cfg, &mut rng)?;
    let mut stats = MoveStats::default();
    let total = cfg.burn_in + cfg.iterations * cfg.thin;
    let mut draws = Vec::with_capacity(cfg.iterations);
    for s in 1..=total {
        sweep(&mut state, data, cfg, &mut rng, &mut stats)?;
        if s % 512 == 0 {
            state.rebuild_caches(data);
        }
        if s > cfg.burn_in && (s - cfg.burn_in) % cfg.thin == 0 {
            draws.push(Draw {
                sweep: s as u64,
                mean: state.mean.clone(),
                var: state.var.clone(),
                sigma0_sq: state.sigma0_sq,
                latents: cfg.save_latents.then(|| state.u.clone()),
            });
        }
    }
    Ok(PosteriorDraws { config: cfg.clone(), draws, stats })
}

/// Half the standard deviation of ordinary-least-squares residuals of y on
/// x (with intercept), on the standardized scale — the default fixed
/// sigma0. Falls back to half the response standard deviation if the
/// normal equations are singular.
pub fn default_sigma0(data: &StandardizedData) -> f64 {
    let n = data.n();
    let ssr: f64 = ols_residuals(data).iter().map(|e| e * e).sum();
    let denom = (n as f64 - 1.0).max(1.0);
    0.5 * (ssr / denom).sqrt()
}

/// Residuals of the intercept-plus-linear fit of y on x; falls back to
/// centering alone when the normal equations are near-singular.
fn ols_residuals(data: &StandardizedData) -> Vec<f64> {
    let n = data.n();
    let p = data.p();
    let d = p + 1;
    // normal equations X'X b = X'y with X = [1, x]
    let mut xtx = vec![0.0f64; d * d];
    let mut xty = vec![0.0f64; d];
    for i in 0..n {
        let mut row = Vec::with_capacity(d);
        row.push(1.0);
        row.extend_from_slice(&data.x[i]);
        for a in 0..d {
            xty[a] += row[a] * data.y[i];
            for b in 0..d {
                xtx[a * d + b] += row[a] * row[b];
            }
        }
    }
    let beta = match solve_symmetric(&mut xtx, &mut xty, d) {
        Some(b) => b,
        None => {
            let mean = data.y.iter().sum::<f64>() / n as f64;
            return data.y.iter().map(|y| y - mean).collect();
        }
    };
    (0..n)
        .map(|i| {
            let mut fit = beta[0];
            for j in 0..p {
                fit += beta[j + 1] * data.x[i][j];
            }
            data.y[i] - fit
        })
        .collect()
}

/// Gaussian elimination with partial pivoting; None when near-singular.
fn solve_symmetric(a: &mut [f64], b: &mut [f64], d: usize) -> Option<Vec<f64>> {
    for col in 0..d {
        let mut piv = col;
        for r in col + 1..d {
            if a[r * d + col].abs() > a[piv * d + col].abs() {
                piv = r;
            }
        }
        if a[piv * d + col].abs() < 1e-12 {
            return None;
        }
        if piv != col {
            for c in 0..d {
                a.swap(col * d + c, piv * d + c);
            }
            b.swap(col, piv);
        }
        let diag = a[col * d + col];
        for r in col + 1..d {
            let f = a[r * d + col] / diag;
            for c in col..d {
                a[r * d + c] -= f * a[col * d + c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut out = vec![0.0; d];
    for col in (0..d).rev() {
        let mut s = b[col];
        for c in col + 1..d {
            s -= a[col * d + c] * out[c];
        }
        out[col] = s / a[col * d + col];
    }
    Some(out)
}
