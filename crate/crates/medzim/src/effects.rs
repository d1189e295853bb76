//! Closed-form causal effects of an exposure contrast under the joint
//! model, their analytic gradients in the full parameter vector, and
//! delta-method confidence intervals.
//!
//! The natural indirect effect splits into a numeric-change component
//! (`NIE1`, the mediator moving on its continuous scale) and a
//! presence-change component (`NIE2`, the mediator switching between zero
//! and non-zero status).

use crate::dist::expit;
use crate::estimate::FitResult;
use crate::model::{ModelParams, PARAM_DIM};
use crate::{MedZimError, Result};
use statrs::distribution::{ContinuousCDF, Normal};

/// Exposure values for the contrast "X changing from x1 to x2", plus an
/// optional fixed mediator value for the controlled direct effect.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExposureContrast {
    pub x1: f64,
    pub x2: f64,
    pub m_controlled: Option<f64>,
}

impl ExposureContrast {
    pub fn new(x1: f64, x2: f64) -> Result<Self> {
        if x1 == x2 {
            return Err(MedZimError::Config(
                "exposure contrast requires x1 != x2".into(),
            ));
        }
        Ok(Self {
            x1,
            x2,
            m_controlled: None,
        })
    }

    pub fn with_controlled_mediator(mut self, m: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&m) {
            return Err(MedZimError::Config(
                "controlled mediator value must lie in [0, 1]".into(),
            ));
        }
        self.m_controlled = Some(m);
        Ok(self)
    }
}

impl Default for ExposureContrast {
    /// The conventional contrast x1 = 0, x2 = 1.
    fn default() -> Self {
        Self {
            x1: 0.0,
            x2: 1.0,
            m_controlled: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EffectKind {
    Nie1,
    Nie2,
    Nie,
    Nde,
    Cde,
}

impl EffectKind {
    pub const ALL: [EffectKind; 5] = [
        EffectKind::Nie1,
        EffectKind::Nie2,
        EffectKind::Nie,
        EffectKind::Nde,
        EffectKind::Cde,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            EffectKind::Nie1 => "NIE1",
            EffectKind::Nie2 => "NIE2",
            EffectKind::Nie => "NIE",
            EffectKind::Nde => "NDE",
            EffectKind::Cde => "CDE",
        }
    }
}

/// Mediation effect through the numeric level of the mediator:
/// `(b1 + b5 x2) * (E M_{x2} - E M_{x1})` with `E M_x = (1-Delta(x)) mu(x)`.
pub fn nie1(p: &ModelParams, c: &ExposureContrast) -> f64 {
    let slope = p.beta[1] + p.beta[5] * c.x2;
    let mean = |x: f64| (1.0 - p.delta_at(x)) * p.mu_at(x);
    slope * (mean(c.x2) - mean(c.x1))
}

/// Mediation effect through mediator presence:
/// `(b2 + b4 x2) * (Delta(x1) - Delta(x2))`.
pub fn nie2(p: &ModelParams, c: &ExposureContrast) -> f64 {
    (p.beta[2] + p.beta[4] * c.x2) * (p.delta_at(c.x1) - p.delta_at(c.x2))
}

pub fn nie(p: &ModelParams, c: &ExposureContrast) -> f64 {
    nie1(p, c) + nie2(p, c)
}

/// Natural direct effect. The presence term carries the factor
/// `Pr(M_{x1} > 0) = 1 - Delta(x1)`, which follows from the outcome
/// regression taken at the x1 counterfactual mediator law.
pub fn nde(p: &ModelParams, c: &ExposureContrast) -> f64 {
    let d = c.x2 - c.x1;
    let present = 1.0 - p.delta_at(c.x1);
    let mean = present * p.mu_at(c.x1);
    p.beta[3] * d + p.beta[4] * d * present + p.beta[5] * d * mean
}

/// Controlled direct effect at a fixed mediator value.
pub fn cde(p: &ModelParams, c: &ExposureContrast) -> Result<f64> {
    let m = c.m_controlled.ok_or_else(|| {
        MedZimError::Config("CDE requires a controlled mediator value".into())
    })?;
    let d = c.x2 - c.x1;
    let ind = if m > 0.0 { 1.0 } else { 0.0 };
    Ok(p.beta[3] * d + p.beta[4] * d * ind + p.beta[5] * m * d)
}

pub fn effect_value(kind: EffectKind, p: &ModelParams, c: &ExposureContrast) -> Result<f64> {
    Ok(match kind {
        EffectKind::Nie1 => nie1(p, c),
        EffectKind::Nie2 => nie2(p, c),
        EffectKind::Nie => nie(p, c),
        EffectKind::Nde => nde(p, c),
        EffectKind::Cde => cde(p, c)?,
    })
}

fn d_expit(t: f64) -> f64 {
    let e = expit(t);
    e * (1.0 - e)
}

/// Analytic gradient of the effect in the full flat parameter vector
/// `(b0..b5, delta, alpha0, alpha1, xi, gamma0, gamma1)`. Pinned gamma
/// links (held at -inf) contribute exact zeros.
pub fn effect_gradient(
    kind: EffectKind,
    p: &ModelParams,
    c: &ExposureContrast,
) -> Result<[f64; PARAM_DIM]> {
    let mut g = [0.0; PARAM_DIM];
    let (x1, x2) = (c.x1, c.x2);
    let (d1, d2) = (p.delta_at(x1), p.delta_at(x2));
    let (u1, u2) = (p.mu_at(x1), p.mu_at(x2));
    // derivatives of the links; zero when the link is pinned at -inf
    let dd1 = d_expit(p.gamma0 + p.gamma1 * x1);
    let dd2 = d_expit(p.gamma0 + p.gamma1 * x2);
    let du1 = d_expit(p.alpha0 + p.alpha1 * x1);
    let du2 = d_expit(p.alpha0 + p.alpha1 * x2);
    match kind {
        EffectKind::Nie1 => {
            let slope = p.beta[1] + p.beta[5] * x2;
            let diff = (1.0 - d2) * u2 - (1.0 - d1) * u1;
            g[1] = diff;
            g[5] = x2 * diff;
            g[7] = slope * ((1.0 - d2) * du2 - (1.0 - d1) * du1);
            g[8] = slope * ((1.0 - d2) * du2 * x2 - (1.0 - d1) * du1 * x1);
            g[10] = slope * (dd1 * u1 - dd2 * u2);
            g[11] = slope * (dd1 * x1 * u1 - dd2 * x2 * u2);
        }
        EffectKind::Nie2 => {
            let slope = p.beta[2] + p.beta[4] * x2;
            g[2] = d1 - d2;
            g[4] = x2 * (d1 - d2);
            g[10] = slope * (dd1 - dd2);
            g[11] = slope * (dd1 * x1 - dd2 * x2);
        }
        EffectKind::Nie => {
            let a = effect_gradient(EffectKind::Nie1, p, c)?;
            let b = effect_gradient(EffectKind::Nie2, p, c)?;
            for i in 0..PARAM_DIM {
                g[i] = a[i] + b[i];
            }
        }
        EffectKind::Nde => {
            let d = x2 - x1;
            let present = 1.0 - d1;
            g[3] = d;
            g[4] = d * present;
            g[5] = d * present * u1;
            g[7] = d * p.beta[5] * present * du1;
            g[8] = d * p.beta[5] * present * du1 * x1;
            g[10] = -d * dd1 * (p.beta[4] + p.beta[5] * u1);
            g[11] = -d * dd1 * x1 * (p.beta[4] + p.beta[5] * u1);
        }
        EffectKind::Cde => {
            let m = c.m_controlled.ok_or_else(|| {
                MedZimError::Config("CDE requires a controlled mediator value".into())
            })?;
            let d = x2 - x1;
            g[3] = d;
            g[4] = d * if m > 0.0 { 1.0 } else { 0.0 };
            g[5] = m * d;
        }
    }
    Ok(g)
}

/// Point estimate with delta-method uncertainty for one effect.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectCi {
    pub estimate: f64,
    pub se: f64,
    pub lo: f64,
    pub hi: f64,
    pub p_value: f64,
}

/// Delta-method interval: `se^2 = g' Cov g` with the analytic effect
/// gradient restricted to the free parameters of the fitted config. The
/// p-value is the two-sided Wald test of the effect being zero.
pub fn delta_ci(
    kind: EffectKind,
    fit: &FitResult,
    c: &ExposureContrast,
    level: f64,
) -> Result<EffectCi> {
    if !(0.0 < level && level < 1.0) {
        return Err(MedZimError::Config("confidence level must be in (0,1)".into()));
    }
    let cov = fit.cov_hat.as_ref().ok_or_else(|| {
        MedZimError::Fit("covariance unavailable; interval suppressed".into())
    })?;
    let estimate = effect_value(kind, &fit.params_hat, c)?;
    let full = effect_gradient(kind, &fit.params_hat, c)?;
    let free = fit.config.free_indices();
    let g: Vec<f64> = free.iter().map(|&i| full[i]).collect();
    let mut var = 0.0;
    for (i, gi) in g.iter().enumerate() {
        for (j, gj) in g.iter().enumerate() {
            var += gi * gj * cov[(i, j)];
        }
    }
    if var < -1e-8 {
        return Err(MedZimError::Fit(format!(
            "negative delta-method variance {var:e}; interval suppressed"
        )));
    }
    let se = var.max(0.0).sqrt();
    let norm = Normal::standard();
    let z = norm.inverse_cdf(0.5 + level / 2.0);
    let p_value = if se > 0.0 {
        2.0 * (1.0 - norm.cdf((estimate / se).abs()))
    } else if estimate == 0.0 {
        1.0
    } else {
        0.0
    };
    Ok(EffectCi {
        estimate,
        se,
        lo: estimate - z * se,
        hi: estimate + z * se,
        p_value,
    })
}
