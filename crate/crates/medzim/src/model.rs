//! The joint outcome/mediator model: parameter vector, zero-observation
//! mechanisms, per-subject log-likelihood contributions and the complete
//! log-likelihood, including the numerical integral over possible true
//! mediator values for observed zeros.

use crate::dist::{expit, log_beta_fn};
use crate::quad::{self, QuadratureSpec};
use crate::{MedZimError, Result};

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_74;

/// Full parameter vector, flat order `(b0..b5, delta_err, alpha0, alpha1,
/// phi, gamma0, gamma1)`. Coefficients pinned by a [`ModelConfig`] are held
/// at zero (the gamma links at negative infinity, i.e. no zero mass).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Outcome regression coefficients `b0..b5`.
    pub beta: [f64; 6],
    /// Outcome error scale, > 0.
    pub delta_err: f64,
    /// Mediator-mean link intercept and slope.
    pub alpha0: f64,
    pub alpha1: f64,
    /// Beta dispersion, > 0 (the table symbol xi).
    pub phi: f64,
    /// Zero-mass link intercept and slope.
    pub gamma0: f64,
    pub gamma1: f64,
}

pub const PARAM_DIM: usize = 12;

pub const PARAM_NAMES: [&str; PARAM_DIM] = [
    "beta0", "beta1", "beta2", "beta3", "beta4", "beta5", "delta", "alpha0", "alpha1", "xi",
    "gamma0", "gamma1",
];

impl ModelParams {
    pub fn to_flat(&self) -> [f64; PARAM_DIM] {
        [
            self.beta[0],
            self.beta[1],
            self.beta[2],
            self.beta[3],
            self.beta[4],
            self.beta[5],
            self.delta_err,
            self.alpha0,
            self.alpha1,
            self.phi,
            self.gamma0,
            self.gamma1,
        ]
    }

    pub fn from_flat(v: &[f64; PARAM_DIM]) -> Self {
        Self {
            beta: [v[0], v[1], v[2], v[3], v[4], v[5]],
            delta_err: v[6],
            alpha0: v[7],
            alpha1: v[8],
            phi: v[9],
            gamma0: v[10],
            gamma1: v[11],
        }
    }

    pub fn is_valid(&self) -> bool {
        self.delta_err > 0.0
            && self.phi > 0.0
            && self.to_flat().iter().all(|v| !v.is_nan())
    }

    /// Zero-mass probability at exposure `x`.
    pub fn delta_at(&self, x: f64) -> f64 {
        expit(self.gamma0 + self.gamma1 * x)
    }

    /// Beta-component mean at exposure `x`.
    pub fn mu_at(&self, x: f64) -> f64 {
        expit(self.alpha0 + self.alpha1 * x)
    }
}

/// Rule for observing a zero given the true abundance `m` and library size
/// `l`. Both kinds observe a zero with probability 1 when `m = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ZeroMechanism {
    /// Detection limit: `Pr(M* = 0 | M, L) = 1_(ML < 1)`.
    Lod,
    /// Exponential thinning: `Pr(M* = 0 | M, L) = exp(-eta M L)`.
    Exponential { eta: f64 },
}

/// Which terms of the model are free, plus the zero mechanism and the
/// quadrature settings used for observed-zero contributions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    /// Keep the `b4 * X * 1_(M>0)` interaction.
    pub include_interaction_indicator: bool,
    /// Keep the `b5 * X * M` interaction.
    pub include_interaction_linear: bool,
    /// Model a point mass at zero. When false, `b2`, `b4` and the gamma
    /// links are pinned (used for taxa observed with no zeros, where the
    /// presence terms are not identifiable).
    pub zero_inflation: bool,
    pub mechanism: ZeroMechanism,
    pub quadrature: QuadratureSpec,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            include_interaction_indicator: true,
            include_interaction_linear: true,
            zero_inflation: true,
            mechanism: ZeroMechanism::Lod,
            quadrature: QuadratureSpec::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if let ZeroMechanism::Exponential { eta } = self.mechanism {
            if !(eta > 0.0) {
                return Err(MedZimError::Config(
                    "exponential mechanism requires eta > 0".into(),
                ));
            }
        }
        Ok(())
    }

    /// Indices into the flat 12-vector that are free under this config.
    pub fn free_indices(&self) -> Vec<usize> {
        let mut idx = vec![0usize, 1, 3];
        if self.zero_inflation {
            idx.push(2);
            if self.include_interaction_indicator {
                idx.push(4);
            }
        }
        if self.include_interaction_linear {
            idx.push(5);
        }
        idx.extend([6, 7, 8, 9]);
        if self.zero_inflation {
            idx.extend([10, 11]);
        }
        idx.sort_unstable();
        idx
    }

    pub fn free_dim(&self) -> usize {
        self.free_indices().len()
    }

    /// Extracts the free coordinates of `p` in flat order.
    pub fn pack(&self, p: &ModelParams) -> Vec<f64> {
        let flat = p.to_flat();
        self.free_indices().iter().map(|&i| flat[i]).collect()
    }

    /// Rebuilds a full parameter vector from free coordinates; pinned betas
    /// are zero and pinned gamma links are `-inf` (no zero mass).
    pub fn unpack(&self, free: &[f64]) -> ModelParams {
        let mut flat = [0.0f64; PARAM_DIM];
        if !self.zero_inflation {
            flat[10] = f64::NEG_INFINITY;
            flat[11] = 0.0;
        }
        for (&i, &v) in self.free_indices().iter().zip(free) {
            flat[i] = v;
        }
        ModelParams::from_flat(&flat)
    }
}

/// One observation for a single-taxon analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubjectRecord {
    pub y: f64,
    /// Observed relative abundance in `[0, 1)`.
    pub m_obs: f64,
    /// Presence indicator, `m_obs > 0`.
    pub r: bool,
    /// Library size, >= 1.
    pub l: f64,
    pub x: f64,
}

impl SubjectRecord {
    pub fn new(y: f64, m_obs: f64, l: f64, x: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&m_obs) {
            return Err(MedZimError::Domain(format!(
                "observed relative abundance {m_obs} outside [0, 1)"
            )));
        }
        if !(l >= 1.0) {
            return Err(MedZimError::Domain(format!("library size {l} below 1")));
        }
        if !(y.is_finite() && x.is_finite()) {
            return Err(MedZimError::Domain("non-finite outcome or exposure".into()));
        }
        Ok(Self {
            y,
            m_obs,
            r: m_obs > 0.0,
            l,
            x,
        })
    }
}

/// Mean of the outcome regression,
/// `b0 + b1 m + b2 1_(M>0) + b3 x + b4 x 1_(M>0) + b5 x m`.
pub fn outcome_mean(m: f64, present: bool, x: f64, p: &ModelParams) -> f64 {
    let ind = if present { 1.0 } else { 0.0 };
    p.beta[0]
        + p.beta[1] * m
        + p.beta[2] * ind
        + p.beta[3] * x
        + p.beta[4] * x * ind
        + p.beta[5] * x * m
}

fn normal_logpdf(y: f64, mean: f64, sd: f64) -> f64 {
    -LN_SQRT_2PI - sd.ln() - (y - mean).powi(2) / (2.0 * sd * sd)
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    let hi = a.max(b);
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    hi + ((a - hi).exp() + (b - hi).exp()).ln()
}

/// Log-likelihood contribution of a subject with an observed positive
/// mediator: Gaussian outcome term plus the continuous part of the ZIB
/// density. Non-finite output signals invalid parameters.
pub fn loglik_group1(rec: &SubjectRecord, p: &ModelParams, _cfg: &ModelConfig) -> f64 {
    debug_assert!(rec.r);
    let delta_i = p.delta_at(rec.x);
    let mu_i = p.mu_at(rec.x);
    let a = mu_i * p.phi;
    let b = (1.0 - mu_i) * p.phi;
    let ln_b = match log_beta_fn(a, b) {
        Ok(v) => v,
        Err(_) => return f64::NAN,
    };
    normal_logpdf(rec.y, outcome_mean(rec.m_obs, true, rec.x, p), p.delta_err)
        + (1.0 - delta_i).ln()
        + (a - 1.0) * rec.m_obs.ln()
        + (b - 1.0) * (1.0 - rec.m_obs).ln()
        - ln_b
}

/// Log-likelihood contribution of a subject with an observed zero: mixture
/// of the structural-zero branch and the false-zero branch, the latter
/// integrating the joint density over the true mediator values the
/// mechanism allows. The two branch masses combine in log space.
pub fn loglik_group2(rec: &SubjectRecord, p: &ModelParams, cfg: &ModelConfig) -> Result<f64> {
    debug_assert!(!rec.r);
    let x = rec.x;
    let delta_i = p.delta_at(x);
    let mu_i = p.mu_at(x);
    let a = mu_i * p.phi;
    let b = (1.0 - mu_i) * p.phi;
    let ln_b = log_beta_fn(a, b)?;
    let two_var = 2.0 * p.delta_err * p.delta_err;

    // structural-zero branch: y at mean b0 + b3 x
    let q0 = -(rec.y - p.beta[0] - p.beta[3] * x).powi(2) / two_var;
    let term_zero = if delta_i > 0.0 {
        delta_i.ln() + q0
    } else {
        f64::NEG_INFINITY
    };

    let term_pos = if delta_i < 1.0 {
        // outcome mean for a present mediator is linear in m: lin_a + lin_b m
        let lin_a = p.beta[0] + p.beta[2] + (p.beta[3] + p.beta[4]) * x;
        let lin_b = p.beta[1] + p.beta[5] * x;
        let (upper, eta) = match cfg.mechanism {
            ZeroMechanism::Lod => ((1.0 / rec.l).min(1.0), 0.0),
            ZeroMechanism::Exponential { eta } => (1.0, eta),
        };
        let q = |m: f64| -(rec.y - lin_a - lin_b * m).powi(2) / two_var;
        // factor the dominant Gaussian weight out of the integral
        let m_peak = if lin_b != 0.0 {
            ((rec.y - lin_a) / lin_b).clamp(0.0, upper)
        } else {
            0.0
        };
        let scale = q(m_peak);
        let integrand_m = |m: f64| {
            let w = if eta > 0.0 { (-eta * m * rec.l).exp() } else { 1.0 };
            (1.0 - m).powf(b - 1.0) * w * (q(m) - scale).exp()
        };
        // Under the exponential mechanism the factor exp(-eta*l*m) confines
        // most of the mass to a layer of width ~1/(eta*l), which can be
        // narrower than the initial quadrature grid ever samples.  Split the
        // domain at the layer edge so the adaptive rule resolves both pieces.
        let m_split = if eta > 0.0 {
            let edge = (a + 60.0) / (eta * rec.l);
            if edge < upper { Some(edge) } else { None }
        } else {
            None
        };
        let integral = if a < 1.0 {
            // substitute m = t^(1/a) to absorb the integrable endpoint
            // singularity m^(a-1) at zero
            let t_upper = upper.powf(a);
            let inv_a = 1.0 / a;
            let g = |t: f64| {
                if t <= 0.0 {
                    return 0.0;
                }
                let m = t.powf(inv_a).min(upper);
                inv_a * integrand_m(m)
            };
            match m_split {
                Some(edge) => {
                    let t_edge = edge.powf(a);
                    quad::integrate(&g, 0.0, t_edge, &cfg.quadrature)?
                        + quad::integrate(&g, t_edge, t_upper, &cfg.quadrature)?
                }
                None => quad::integrate(&g, 0.0, t_upper, &cfg.quadrature)?,
            }
        } else {
            let g = |m: f64| {
                if m <= 0.0 {
                    return 0.0;
                }
                m.powf(a - 1.0) * integrand_m(m)
            };
            match m_split {
                Some(edge) => {
                    quad::integrate(&g, 0.0, edge, &cfg.quadrature)?
                        + quad::integrate(&g, edge, upper, &cfg.quadrature)?
                }
                None => quad::integrate(&g, 0.0, upper, &cfg.quadrature)?,
            }
        };
        if integral > 0.0 {
            (1.0 - delta_i).ln() - ln_b + scale + integral.ln()
        } else {
            f64::NEG_INFINITY
        }
    } else {
        f64::NEG_INFINITY
    };

    Ok(-LN_SQRT_2PI - p.delta_err.ln() + log_sum_exp(term_zero, term_pos))
}

/// Complete log-likelihood: group-1 plus group-2 contributions, accumulated
/// with compensated summation so the result is permutation-stable.
pub fn loglik_total(data: &[SubjectRecord], p: &ModelParams, cfg: &ModelConfig) -> Result<f64> {
    if data.is_empty() {
        return Err(MedZimError::Domain("empty dataset".into()));
    }
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for (i, rec) in data.iter().enumerate() {
        let term = if rec.r {
            loglik_group1(rec, p, cfg)
        } else {
            loglik_group2(rec, p, cfg).map_err(|e| match e {
                MedZimError::Quadrature { detail, .. } => {
                    MedZimError::Quadrature { index: i, detail }
                }
                other => other,
            })?
        };
        // Kahan
        let t = term - comp;
        let s = sum + t;
        comp = (s - sum) - t;
        sum = s;
    }
    Ok(sum)
}
