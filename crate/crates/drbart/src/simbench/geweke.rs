//! Joint-distribution consistency testing for the samplers.
//!
//! Two ways to sample the same joint law of (model state, response):
//!
//! * marginal–conditional: draw the state from its prior, then the response
//!   from the observation model — independent exact draws;
//! * successive–conditional: alternate a few transition-kernel sweeps given
//!   the current response with a fresh response draw given the state.
//!
//! If every kernel leaves its conditional invariant, both chains share all
//! moments, and standardized mean differences (z-scores) stay small. A bug
//! anywhere — an acceptance ratio, a conditional draw, a cache — shows up as
//! a drifting statistic with |z| growing like the square root of the round
//! count. Setting `sweeps_per_round` to zero replaces the kernel with fresh
//! prior draws, which calibrates the machinery itself: z-scores are then
//! exact-null by construction.
//!
//! The successive chain is autocorrelated, so its standard errors come from
//! batch means with sqrt(rounds) batches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{AffineMap, StandardizedData};
use crate::priors::Sigma0Spec;
use crate::sampler::{sweep, ChainConfig, ModelState, MoveStats, SamplerError, Variant};
use crate::tree::Point;

/// Harness configuration: the chain settings under test plus the size of the
/// synthetic design and the round budget.
#[derive(Debug, Clone)]
pub struct GewekeConfig {
    pub chain: ChainConfig,
    /// Observations in the synthetic design.
    pub n: usize,
    /// Covariate columns, drawn once, uniform on [0, 1].
    pub p: usize,
    /// Recorded rounds per chain.
    pub rounds: usize,
    /// Kernel sweeps between response redraws; 0 means fresh prior draws.
    pub sweeps_per_round: usize,
}

/// Per-statistic comparison of the two chains.
#[derive(Debug, Clone)]
pub struct GewekeReport {
    pub names: Vec<String>,
    pub prior_mean: Vec<f64>,
    pub chain_mean: Vec<f64>,
    pub z: Vec<f64>,
}

impl GewekeReport {
    pub fn max_abs_z(&self) -> f64 {
        self.z.iter().fold(0.0f64, |a, &b| a.max(b.abs()))
    }
}

struct StatTracker {
    names: Vec<String>,
    track_var: bool,
    track_sigma0: bool,
}

impl StatTracker {
    fn new(cfg: &ChainConfig) -> Self {
        let track_var = cfg.variant != Variant::Homoscedastic;
        let track_sigma0 = matches!(cfg.sigma0, Sigma0Spec::InverseGamma { .. });
        let mut names = vec![
            "mean ensemble leaf total".to_string(),
            "mean ensemble depth total".to_string(),
            "fitted mean at probe A".to_string(),
            "fitted mean at probe B".to_string(),
            "response mean".to_string(),
            "response second moment".to_string(),
            "latent coordinate mean".to_string(),
        ];
        if track_var {
            names.push("variance ensemble leaf total".to_string());
            names.push("fitted log scale at probe A".to_string());
        }
        if track_sigma0 {
            names.push("sigma0 squared".to_string());
        }
        StatTracker { names, track_var, track_sigma0 }
    }

    fn collect(
        &self,
        state: &ModelState,
        data: &StandardizedData,
        out: &mut Vec<f64>,
    ) -> Result<(), SamplerError> {
        let eval = |ens: &crate::tree::Ensemble, row: usize, u: f64| -> Result<f64, SamplerError> {
            ens.evaluate(Point { x: &data.x[row], u })
                .map_err(|e| SamplerError::Math(format!("probe evaluation failed: {}", e)))
        };
        let n = data.n() as f64;
        out.push(state.mean.trees.iter().map(|t| t.n_leaves() as f64).sum());
        out.push(state.mean.trees.iter().map(|t| t.max_depth() as f64).sum());
        out.push(eval(&state.mean, 0, 0.3)?);
        out.push(eval(&state.mean, data.n() - 1, 0.8)?);
        out.push(data.y.iter().sum::<f64>() / n);
        out.push(data.y.iter().map(|v| v * v).sum::<f64>() / n);
        out.push(state.u.iter().sum::<f64>() / n);
        if self.track_var {
            out.push(state.var.trees.iter().map(|t| t.n_leaves() as f64).sum());
            out.push(eval(&state.var, 0, 0.3)?);
        }
        if self.track_sigma0 {
            out.push(state.sigma0_sq);
        }
        Ok(())
    }
}

fn iid_mean_se(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn batch_mean_se(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    let b = (n as f64).sqrt().floor() as usize;
    let len = n / b;
    let used = b * len;
    let mean = samples[..used].iter().sum::<f64>() / used as f64;
    let mut bm = Vec::with_capacity(b);
    for k in 0..b {
        bm.push(samples[k * len..(k + 1) * len].iter().sum::<f64>() / len as f64);
    }
    let var_bm = bm.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (b as f64 - 1.0);
    (mean, (var_bm / b as f64).sqrt())
}

fn synthetic_design(gcfg: &GewekeConfig, rng: &mut impl Rng) -> Result<StandardizedData, SamplerError> {
    let x: Vec<Vec<f64>> = (0..gcfg.n)
        .map(|_| (0..gcfg.p).map(|_| rng.gen::<f64>()).collect())
        .collect();
    // placeholder response; both chains overwrite it before recording
    let y: Vec<f64> = (0..gcfg.n).map(|_| rng.gen::<f64>() - 0.5).collect();
    let y_map = AffineMap { min: -0.5, range: 1.0, shift: -0.5 };
    let x_maps = vec![AffineMap { min: 0.0, range: 1.0, shift: 0.0 }; gcfg.p];
    StandardizedData::from_standardized(x, y, y_map, x_maps)
        .map_err(|e| SamplerError::Config(format!("synthetic design failed: {}", e)))
}

/// Run both chains and report per-statistic z-scores.
pub fn geweke_run(gcfg: &GewekeConfig) -> Result<GewekeReport, SamplerError> {
    if gcfg.rounds < 100 {
        return Err(SamplerError::Config("need at least 100 rounds".into()));
    }
    let tracker = StatTracker::new(&gcfg.chain);
    let k = tracker.names.len();
    let mut rng = ChaCha8Rng::seed_from_u64(gcfg.chain.seed);
    rng.set_stream(gcfg.chain.stream.wrapping_add(0x6e77));
    let mut data = synthetic_design(gcfg, &mut rng)?;

    // marginal-conditional side: independent exact joint draws
    let mut prior_stats = vec![Vec::with_capacity(gcfg.rounds); k];
    let mut buf = Vec::with_capacity(k);
    for _ in 0..gcfg.rounds {
        let state = ModelState::from_prior(&data, &gcfg.chain, &mut rng)?;
        data.y = state.redraw_response(&mut rng);
        buf.clear();
        tracker.collect(&state, &data, &mut buf)?;
        for (col, &v) in prior_stats.iter_mut().zip(buf.iter()) {
            col.push(v);
        }
    }

    // successive-conditional side: kernel sweeps alternating with response
    // redraws
    let mut chain_stats = vec![Vec::with_capacity(gcfg.rounds); k];
    let mut state = ModelState::from_prior(&data, &gcfg.chain, &mut rng)?;
    data.y = state.redraw_response(&mut rng);
    let mut move_stats = MoveStats::default();
    for _ in 0..gcfg.rounds {
        if gcfg.sweeps_per_round == 0 {
            state = ModelState::from_prior(&data, &gcfg.chain, &mut rng)?;
        } else {
            for _ in 0..gcfg.sweeps_per_round {
                sweep(&mut state, &data, &gcfg.chain, &mut rng, &mut move_stats)?;
            }
        }
        data.y = state.redraw_response(&mut rng);
        buf.clear();
        tracker.collect(&state, &data, &mut buf)?;
        for (col, &v) in chain_stats.iter_mut().zip(buf.iter()) {
            col.push(v);
        }
    }

    let mut z = Vec::with_capacity(k);
    let mut prior_mean = Vec::with_capacity(k);
    let mut chain_mean = Vec::with_capacity(k);
    for j in 0..k {
        let (m1, se1) = iid_mean_se(&prior_stats[j]);
        let (m2, se2) = if gcfg.sweeps_per_round == 0 {
            iid_mean_se(&chain_stats[j])
        } else {
            batch_mean_se(&chain_stats[j])
        };
        let denom = (se1 * se1 + se2 * se2).sqrt();
        let zj = if denom > 0.0 {
            (m1 - m2) / denom
        } else if m1 == m2 {
            0.0
        } else {
            f64::INFINITY
        };
        prior_mean.push(m1);
        chain_mean.push(m2);
        z.push(zj);
    }
    Ok(GewekeReport { names: tracker.names, prior_mean, chain_mean, z })
}
