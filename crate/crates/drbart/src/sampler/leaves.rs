//! Closed-form leaf integrations and conditional leaf draws.
//!
//! Mean-ensemble leaves carry a Gaussian value with prior N(0, sigma_mu^2)
//! against heteroscedastic Gaussian residuals, so both the marginal (value
//! integrated out) and the conditional draw are available exactly.
//!
//! Variance-ensemble leaves carry log tau where tau has the symmetric
//! Gamma/inverse-gamma mixture prior. Against the leaf's scaled residuals
//! the marginal is a two-term sum (inverse-gamma component integrates to a
//! gamma-function ratio, gamma component to a Bessel K), and the full
//! conditional is a mixture of an inverse-gamma and a generalized inverse
//! Gaussian with weights given by those same two terms.

use crate::special::{
    log_add_exp, log_bessel_k, ln_gamma, sample_gig, sample_inverse_gamma, GigParams,
    MathError,
};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::f64::consts::PI;

/// Per-leaf accumulated sufficient statistics. The slots are interpreted by
/// the family: the mean family stores (sum w, sum w r, sum w r^2, sum ln w),
/// the variance family only (sum of squared scaled residuals) in `s1`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LeafStats {
    pub n: u32,
    pub s0: f64,
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
}

impl LeafStats {
    pub fn merged(a: LeafStats, b: LeafStats) -> LeafStats {
        LeafStats {
            n: a.n + b.n,
            s0: a.s0 + b.s0,
            s1: a.s1 + b.s1,
            s2: a.s2 + b.s2,
            s3: a.s3 + b.s3,
        }
    }
}

/// Mean-leaf family: value ~ N(0, sigma_mu^2), residual_i ~ N(value, 1/w_i).
#[derive(Debug, Clone, Copy)]
pub struct MeanLeaf {
    pub sigma_mu: f64,
}

impl MeanLeaf {
    /// Contribution of one residual `r` with weight `w` (and cached ln w).
    pub fn terms(w: f64, ln_w: f64, r: f64) -> LeafStats {
        LeafStats { n: 1, s0: w, s1: w * r, s2: w * r * r, s3: ln_w }
    }

    /// log of the leaf likelihood with the value integrated out:
    /// -(n/2) ln 2pi + (sum ln w)/2 - ln(1 + sm^2 W)/2 - Q/2 + S^2/(2(W + sm^-2))
    /// with W = sum w, S = sum w r, Q = sum w r^2. Empty leaves give 0.
    pub fn log_marginal(&self, st: &LeafStats) -> f64 {
        if st.n == 0 {
            return 0.0;
        }
        let sm2 = self.sigma_mu * self.sigma_mu;
        let denom = 1.0 / sm2 + st.s0;
        -(st.n as f64) / 2.0 * (2.0 * PI).ln() + 0.5 * st.s3
            - 0.5 * (sm2 * st.s0).ln_1p()
            - 0.5 * st.s2
            + 0.5 * st.s1 * st.s1 / denom
    }

    /// Exact conditional draw: N(S / (W + sm^-2), 1 / (W + sm^-2)).
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, st: &LeafStats) -> f64 {
        let denom = 1.0 / (self.sigma_mu * self.sigma_mu) + st.s0;
        let mean = st.s1 / denom;
        let sd = (1.0 / denom).sqrt();
        Normal::new(mean, sd).expect("finite leaf posterior").sample(rng)
    }
}

/// Outcome of a variance-leaf draw, so callers can surface degenerate data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScaleDraw {
    Conditional(f64),
    /// Residuals were exactly zero; fell back to a prior draw.
    DegenerateFallback(f64),
}

impl ScaleDraw {
    pub fn log_tau(self) -> f64 {
        match self {
            ScaleDraw::Conditional(v) | ScaleDraw::DegenerateFallback(v) => v,
        }
    }
}

/// Variance-leaf family: leaf holds ln tau, tau ~ 1/2 Ga(a, a) + 1/2 IG(a, a),
/// scaled residual_i ~ N(0, tau).
#[derive(Debug, Clone, Copy)]
pub struct ScaleLeaf {
    /// Shared shape/rate a = b = a0 * m_v.
    pub a: f64,
}

impl ScaleLeaf {
    /// Contribution of one scaled residual.
    pub fn terms(scaled_residual_sq: f64) -> LeafStats {
        LeafStats { n: 1, s0: 0.0, s1: scaled_residual_sq, s2: 0.0, s3: 0.0 }
    }

    /// The two component log masses (up to the shared prefactor):
    /// inverse-gamma side lnG(n/2+a) - (n/2+a) ln(b + r2/2), and gamma side
    /// ln 2 + (lam/2) ln(r2/(2b)) + ln K_lam(sqrt(2 b r2)), lam = a - n/2.
    fn component_logs(&self, n: f64, r2: f64) -> Result<(f64, f64), MathError> {
        let a = self.a;
        let b = self.a;
        let r2 = r2.max(f64::MIN_POSITIVE); // exact zeros handled by caller
        let t_ig = ln_gamma(n / 2.0 + a) - (n / 2.0 + a) * (b + r2 / 2.0).ln();
        let lam = a - n / 2.0;
        let t_ga = (2.0f64).ln()
            + 0.5 * lam * (r2.ln() - (2.0 * b).ln())
            + log_bessel_k(lam, (2.0 * b * r2).sqrt())?;
        Ok((t_ig, t_ga))
    }

    /// log integrated leaf likelihood. Empty leaves give 0 (the prior
    /// integrates to one).
    pub fn log_marginal(&self, st: &LeafStats) -> Result<f64, MathError> {
        if st.n == 0 {
            return Ok(0.0);
        }
        let n = st.n as f64;
        let (t_ig, t_ga) = self.component_logs(n, st.s1)?;
        Ok(-(2.0f64).ln() - n / 2.0 * (2.0 * PI).ln() + self.a * self.a.ln()
            - ln_gamma(self.a)
            + log_add_exp(t_ig, t_ga))
    }

    /// Posterior probability of the inverse-gamma component.
    pub fn inverse_gamma_weight(&self, st: &LeafStats) -> Result<f64, MathError> {
        if st.n == 0 {
            return Ok(0.5);
        }
        let (t_ig, t_ga) = self.component_logs(st.n as f64, st.s1)?;
        Ok(1.0 / (1.0 + (t_ga - t_ig).exp()))
    }

    /// Exact conditional draw of ln tau: inverse-gamma component
    /// IG(n/2 + a, b + r2/2) vs generalized inverse Gaussian component
    /// GIG(a - n/2, 2b, r2), picked by their integrated masses. Empty leaf:
    /// prior draw. Zero residuals with members: prior draw, flagged.
    pub fn draw<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        st: &LeafStats,
    ) -> Result<ScaleDraw, MathError> {
        let a = self.a;
        if st.n == 0 {
            let tau = prior_scale_draw(rng, a)?;
            return Ok(ScaleDraw::Conditional(tau.ln()));
        }
        if st.s1 <= 0.0 {
            let tau = prior_scale_draw(rng, a)?;
            return Ok(ScaleDraw::DegenerateFallback(tau.ln()));
        }
        let n = st.n as f64;
        let w_ig = self.inverse_gamma_weight(st)?;
        let tau = if rng.gen::<f64>() < w_ig {
            sample_inverse_gamma(rng, n / 2.0 + a, a + st.s1 / 2.0)?
        } else {
            sample_gig(rng, GigParams { lambda: a - n / 2.0, psi: 2.0 * a, chi: st.s1 })?
        };
        Ok(ScaleDraw::Conditional(tau.ln()))
    }
}

fn prior_scale_draw<R: Rng + ?Sized>(rng: &mut R, a: f64) -> Result<f64, MathError> {
    if rng.gen::<bool>() {
        crate::special::sample_gamma(rng, a, a)
    } else {
        sample_inverse_gamma(rng, a, a)
    }
}
