//! Priors for the tree ensembles: the depth-penalized branching process on
//! tree shapes, leaf-scale calibrations for the mean ensemble, and the
//! symmetric gamma / inverse-gamma mixture prior on multiplicative leaf
//! scales in the variance ensemble.

use crate::special::{sample_gamma, sample_inverse_gamma};
use crate::tree::{Cell, Node, SplitAxis, SplitRule, Tree};
use rand::Rng;
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum PriorError {
    Domain(String),
}

impl fmt::Display for PriorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PriorError::Domain(msg) => write!(f, "domain error: {}", msg),
        }
    }
}

impl std::error::Error for PriorError {}

/// Hyperparameters of one tree ensemble's shape-and-leaf prior.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BartHyperParams {
    /// Base split probability at the root.
    pub alpha: f64,
    /// Depth penalty exponent; splits at depth d happen w.p. alpha (1+d)^-beta.
    pub beta: f64,
    /// Spread multiplier in the leaf-scale calibration.
    pub k: f64,
    /// Number of trees in the mean ensemble.
    pub m: usize,
    /// Leaf standard deviation, normally 1 / (2 k sqrt(m)).
    pub sigma_mu: f64,
    /// Fewest observations a leaf may hold.
    pub min_leaf: usize,
    /// Hard cap on node depth (the branching process is a.s. finite, the
    /// cap just bounds the worst case).
    pub max_depth: u32,
}

impl BartHyperParams {
    /// The usual defaults: alpha 0.95, beta 2, k 2, min_leaf 5, depth cap 64.
    pub fn standard(m: usize) -> Self {
        let k = 2.0;
        BartHyperParams {
            alpha: 0.95,
            beta: 2.0,
            k,
            m,
            sigma_mu: calibrate_sigma_mu(k, m).expect("m > 0"),
            min_leaf: 5,
            max_depth: 64,
        }
    }
}

/// Hyperparameters of the variance ensemble's leaf-scale prior. Each leaf's
/// multiplicative scale tau has the symmetric mixture
/// 1/2 Gamma(a, a) + 1/2 InvGamma(a, a) with a = a0 * m_v, giving log tau
/// mean zero and variance ~ 1/(a0 m_v).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VarianceHyperParams {
    /// Number of trees in the variance ensemble.
    pub m_v: usize,
    /// Per-ensemble concentration; the summed log-scale has variance ~ 1/a0.
    pub a0: f64,
}

impl VarianceHyperParams {
    /// Shared shape/rate a = a0 * m_v of the leaf-scale mixture.
    pub fn concentration(&self) -> f64 {
        self.a0 * self.m_v as f64
    }
}

/// How the baseline noise scale sigma0 is handled.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Sigma0Spec {
    /// Held fixed at the given standardized-scale value.
    Fixed(f64),
    /// sigma0^2 ~ InvGamma(nu0/2, nu0 xi0 / 2), refreshed by a conjugate
    /// draw each sweep (homoscedastic model only).
    InverseGamma { nu0: f64, xi0: f64 },
}

/// Probability that a node at `depth` splits: alpha (1 + depth)^-beta.
pub fn split_probability(hp: &BartHyperParams, depth: u32) -> f64 {
    hp.alpha * (1.0 + depth as f64).powf(-hp.beta)
}

/// Expected number of nodes at `depth` under the shape prior:
/// (2 alpha)^depth (depth!)^-beta.
pub fn expected_nodes_at_depth(hp: &BartHyperParams, depth: u32) -> f64 {
    let mut log_fact = 0.0;
    for j in 1..=depth {
        log_fact += (j as f64).ln();
    }
    ((2.0 * hp.alpha).ln() * depth as f64 - hp.beta * log_fact).exp()
}

/// Leaf standard deviation calibration 1 / (2 k sqrt(m)): the m-tree sum of
/// independent leaves then has standard deviation 1/(2k), putting k sigmas
/// on each side of the standardized response's half-range.
pub fn calibrate_sigma_mu(k: f64, m: usize) -> Result<f64, PriorError> {
    if !(k > 0.0) || !k.is_finite() {
        return Err(PriorError::Domain(format!("k must be positive, got {}", k)));
    }
    if m == 0 {
        return Err(PriorError::Domain("tree count m must be positive".into()));
    }
    Ok(1.0 / (2.0 * k * (m as f64).sqrt()))
}

/// Concentration a0 = [log sqrt(d)]^-2 so that the marginal variance
/// multiplier exp(v) falls in (1/d, d) with ~95% prior probability.
/// Needs d > 1 for the log to be positive.
pub fn calibrate_a0(d: f64) -> Result<f64, PriorError> {
    if !(d > 1.0) || !d.is_finite() {
        return Err(PriorError::Domain(format!(
            "variance range d must exceed 1, got {}",
            d
        )));
    }
    let l = d.sqrt().ln();
    Ok(1.0 / (l * l))
}

/// One draw of a leaf scale tau from 1/2 Gamma(a, b) + 1/2 InvGamma(a, b)
/// (shape/rate). Symmetric in log tau: E log tau = 0.
pub fn sample_leaf_scale_prior<R: Rng + ?Sized>(
    rng: &mut R,
    a: f64,
    b: f64,
) -> Result<f64, PriorError> {
    if !(a > 0.0) || !a.is_finite() || !(b > 0.0) || !b.is_finite() {
        return Err(PriorError::Domain(format!(
            "leaf-scale prior needs positive shape/rate, got a={} b={}",
            a, b
        )));
    }
    let draw = if rng.gen::<bool>() {
        sample_gamma(rng, a, b)
    } else {
        sample_inverse_gamma(rng, a, b)
    };
    draw.map_err(|e| PriorError::Domain(e.to_string()))
}

/// Draw a tree shape from the branching-process prior over the given axes,
/// with cutpoints uniform on the node's current interval along the chosen
/// axis. Leaf values are left at zero; callers fill them per their leaf
/// prior. `axes` must be non-empty.
pub fn sample_prior_tree<R: Rng + ?Sized>(
    rng: &mut R,
    hp: &BartHyperParams,
    axes: &[SplitAxis],
) -> Result<Tree, PriorError> {
    if axes.is_empty() {
        return Err(PriorError::Domain("need at least one split axis".into()));
    }
    let dim = axes
        .iter()
        .filter_map(|a| match a {
            SplitAxis::Covariate(j) => Some(*j as usize + 1),
            SplitAxis::Latent => None,
        })
        .max()
        .unwrap_or(0);
    let mut nodes = Vec::new();
    grow(rng, hp, axes, 0, Cell::unit(dim), &mut nodes);
    Ok(Tree { nodes })
}

fn grow<R: Rng + ?Sized>(
    rng: &mut R,
    hp: &BartHyperParams,
    axes: &[SplitAxis],
    depth: u32,
    cell: Cell,
    nodes: &mut Vec<Node>,
) -> u32 {
    let id = nodes.len() as u32;
    let splits = depth < hp.max_depth && rng.gen::<f64>() < split_probability(hp, depth);
    if !splits {
        nodes.push(Node::Leaf { value: 0.0 });
        return id;
    }
    let axis = axes[rng.gen_range(0..axes.len())];
    let (lo, hi) = match axis {
        SplitAxis::Covariate(j) => (cell.x_lo[j as usize], cell.x_hi[j as usize]),
        SplitAxis::Latent => (cell.u_lo, cell.u_hi),
    };
    let cut = lo + (hi - lo) * rng.gen::<f64>();
    let rule = SplitRule { axis, cutpoint: cut };
    nodes.push(Node::Internal { rule, left: 0, right: 0 });
    let mut lcell = cell.clone();
    lcell.clip_left(rule);
    let left = grow(rng, hp, axes, depth + 1, lcell, nodes);
    let mut rcell = cell;
    rcell.clip_right(rule);
    let right = grow(rng, hp, axes, depth + 1, rcell, nodes);
    match &mut nodes[id as usize] {
        Node::Internal { left: l, right: r, .. } => {
            *l = left;
            *r = right;
        }
        Node::Leaf { .. } => unreachable!(),
    }
    id
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn split_probability_values() {
        let hp = BartHyperParams::standard(200);
        assert_eq!(split_probability(&hp, 0), 0.95);
        assert!((split_probability(&hp, 1) - 0.2375).abs() < 1e-15);
        assert!((split_probability(&hp, 2) - 0.95 / 9.0).abs() < 1e-15);
        // monotone decreasing in depth
        for d in 0..20 {
            assert!(split_probability(&hp, d + 1) < split_probability(&hp, d));
        }
    }

    #[test]
    fn sigma_mu_calibration() {
        let v = calibrate_sigma_mu(2.0, 250).unwrap();
        assert!((v - 1.0 / (4.0 * 250f64.sqrt())).abs() < 1e-16);
        assert!((v - 0.015_811_388_300_841_9).abs() < 1e-12);
        assert!(calibrate_sigma_mu(0.0, 10).is_err());
        assert!(calibrate_sigma_mu(-1.0, 10).is_err());
        assert!(calibrate_sigma_mu(2.0, 0).is_err());
    }

    #[test]
    fn a0_calibration() {
        let v = calibrate_a0(4.0).unwrap();
        assert!((v - 1.0 / (2.0f64.ln() * 2.0f64.ln())).abs() < 1e-14);
        assert!((v - 2.081_368_981_005_607_7).abs() < 1e-10);
        assert!(calibrate_a0(1.0).is_err());
        assert!(calibrate_a0(0.5).is_err());
        assert!(calibrate_a0(f64::NAN).is_err());
    }

    #[test]
    fn expected_node_counts() {
        let hp = BartHyperParams::standard(1);
        assert!((expected_nodes_at_depth(&hp, 0) - 1.0).abs() < 1e-15);
        assert!((expected_nodes_at_depth(&hp, 1) - 1.9).abs() < 1e-12);
        assert!((expected_nodes_at_depth(&hp, 2) - 0.9025).abs() < 1e-12);
    }

    #[test]
    fn prior_tree_shape_statistics() {
        // smaller version of the full prior check: 20k draws
        let hp = BartHyperParams::standard(1);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let axes = [SplitAxis::Covariate(0), SplitAxis::Latent];
        let n = 20_000;
        let mut single = 0usize;
        let mut d1_sum = 0.0;
        let mut d2_sum = 0.0;
        for _ in 0..n {
            let t = sample_prior_tree(&mut rng, &hp, &axes).unwrap();
            assert!(t.max_depth() < hp.max_depth, "depth cap hit");
            if t.n_leaves() == 1 {
                single += 1;
            }
            let depths = t.depths();
            d1_sum += depths.iter().filter(|&&d| d == 1).count() as f64;
            d2_sum += depths.iter().filter(|&&d| d == 2).count() as f64;
        }
        let frac = single as f64 / n as f64;
        assert!((frac - 0.05).abs() < 0.006, "single-leaf fraction {}", frac);
        let d1 = d1_sum / n as f64;
        // mean 1.9, sd of the indicator-pair ~0.44 per tree
        assert!((d1 - 1.9).abs() < 0.02, "depth-1 mean {}", d1);
        let d2 = d2_sum / n as f64;
        assert!((d2 - 0.9025).abs() < 0.05, "depth-2 mean {}", d2);
    }

    #[test]
    fn prior_tree_cutpoints_nest() {
        // cutpoints drawn inside the running cell: along any root-to-leaf
        // path the rules must be consistent (no empty cells)
        let hp = BartHyperParams {
            alpha: 0.99,
            beta: 0.5, // deep trees to stress the nesting
            ..BartHyperParams::standard(1)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let axes = [SplitAxis::Covariate(0), SplitAxis::Covariate(1), SplitAxis::Latent];
        for _ in 0..200 {
            let t = sample_prior_tree(&mut rng, &hp, &axes).unwrap();
            for id in 0..t.nodes.len() as u32 {
                let c = t.cell_of(id, 2);
                assert!(c.x_lo[0] < c.x_hi[0]);
                assert!(c.x_lo[1] < c.x_hi[1]);
                assert!(c.u_lo < c.u_hi);
                if let Node::Internal { rule, .. } = t.nodes[id as usize] {
                    let (lo, hi) = match rule.axis {
                        SplitAxis::Covariate(j) => {
                            (c.x_lo[j as usize], c.x_hi[j as usize])
                        }
                        SplitAxis::Latent => (c.u_lo, c.u_hi),
                    };
                    assert!(lo < rule.cutpoint && rule.cutpoint < hi);
                }
            }
        }
    }

    #[test]
    fn leaf_scale_prior_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = 100.0;
        let n = 100_000;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..n {
            let tau = sample_leaf_scale_prior(&mut rng, a, a).unwrap();
            assert!(tau > 0.0);
            let l = tau.ln();
            sum += l;
            sum2 += l * l;
        }
        let mean = sum / n as f64;
        let var = sum2 / n as f64 - mean * mean;
        // E log tau = 0; Var log tau ~ 1/a = 0.01
        assert!(mean.abs() < 0.002, "mean log tau {}", mean);
        assert!((var - 0.01).abs() < 0.001, "var log tau {}", var);
        assert!(sample_leaf_scale_prior(&mut rng, 0.0, 1.0).is_err());
        assert!(sample_leaf_scale_prior(&mut rng, 1.0, -1.0).is_err());
    }

    #[test]
    fn prior_tree_needs_axes() {
        let hp = BartHyperParams::standard(1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_prior_tree(&mut rng, &hp, &[]).is_err());
    }
}
