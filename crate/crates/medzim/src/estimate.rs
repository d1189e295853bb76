//! Maximum-likelihood fitting: quasi-Newton optimization in an
//! unconstrained reparameterization, observed Fisher information by central
//! finite differences in the original parameterization, and its inverse for
//! delta-method covariances.

use crate::dist::logit;
use crate::model::{loglik_total, ModelConfig, ModelParams, SubjectRecord};
use crate::{MedZimError, Result};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Flat-vector indices of the two positive-constrained parameters.
const IDX_DELTA: usize = 6;
const IDX_PHI: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerSpec {
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Number of randomized restarts; the first start is deterministic.
    pub n_restarts: usize,
    pub seed: u64,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        Self {
            max_iters: 500,
            grad_tol: 1e-5,
            n_restarts: 1,
            seed: 0,
        }
    }
}

impl OptimizerSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0) || self.n_restarts == 0 {
            return Err(MedZimError::Config(
                "optimizer requires grad_tol > 0 and n_restarts >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Result of a maximum-likelihood fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub params_hat: ModelParams,
    pub loglik_at_max: f64,
    /// Observed Fisher information over the free parameters, in the
    /// original parameterization.
    pub info_obs: DMatrix<f64>,
    /// Inverse information; `None` when the information matrix is singular,
    /// in which case downstream intervals are suppressed.
    pub cov_hat: Option<DMatrix<f64>>,
    pub condition_number: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm_at_max: f64,
    pub config: ModelConfig,
}

/// Maps the free parameters onto an unconstrained vector: `ln` on the two
/// positive scales (outcome error and Beta dispersion), identity elsewhere.
pub fn to_unconstrained(p: &ModelParams, cfg: &ModelConfig) -> Vec<f64> {
    let free = cfg.free_indices();
    cfg.pack(p)
        .into_iter()
        .zip(&free)
        .map(|(v, &i)| {
            if i == IDX_DELTA || i == IDX_PHI {
                v.ln()
            } else {
                v
            }
        })
        .collect()
}

pub fn from_unconstrained(z: &[f64], cfg: &ModelConfig) -> ModelParams {
    let free = cfg.free_indices();
    let v: Vec<f64> = z
        .iter()
        .zip(&free)
        .map(|(&z, &i)| {
            if i == IDX_DELTA || i == IDX_PHI {
                z.exp()
            } else {
                z
            }
        })
        .collect();
    cfg.unpack(&v)
}

/// Central-difference gradient with per-coordinate step
/// `h * max(1, |z_j|)`. A non-finite probe shrinks the step once before
/// giving up.
pub fn numerical_gradient(
    f: &dyn Fn(&[f64]) -> f64,
    z: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    let mut g = vec![0.0; z.len()];
    let mut buf = z.to_vec();
    for j in 0..z.len() {
        let mut step = h * z[j].abs().max(1.0);
        let mut diff = f64::NAN;
        for _ in 0..2 {
            buf[j] = z[j] + step;
            let up = f(&buf);
            buf[j] = z[j] - step;
            let dn = f(&buf);
            buf[j] = z[j];
            if up.is_finite() && dn.is_finite() {
                diff = (up - dn) / (2.0 * step);
                break;
            }
            step *= 0.25;
        }
        if !diff.is_finite() {
            return Err(MedZimError::Fit(format!(
                "non-finite objective near coordinate {j} while differentiating"
            )));
        }
        g[j] = diff;
    }
    Ok(g)
}

/// Central-difference Hessian with steps `h_j = max(1e-5, 1e-5 |z_j|)`.
/// Off-diagonal entries come from the four-point cross difference, which is
/// the central difference of the central-difference gradient and is
/// symmetric by construction.
pub fn numerical_hessian(f: &dyn Fn(&[f64]) -> f64, z: &[f64]) -> DMatrix<f64> {
    let d = z.len();
    let step = |j: usize| (1e-5f64).max(1e-5 * z[j].abs());
    let mut h = DMatrix::zeros(d, d);
    let f0 = f(z);
    let mut buf = z.to_vec();
    for i in 0..d {
        let hi = step(i);
        buf[i] = z[i] + hi;
        let up = f(&buf);
        buf[i] = z[i] - hi;
        let dn = f(&buf);
        buf[i] = z[i];
        h[(i, i)] = (up - 2.0 * f0 + dn) / (hi * hi);
        for j in (i + 1)..d {
            let hj = step(j);
            let mut probe = |si: f64, sj: f64| {
                buf[i] = z[i] + si * hi;
                buf[j] = z[j] + sj * hj;
                let v = f(&buf);
                buf[i] = z[i];
                buf[j] = z[j];
                v
            };
            let v = (probe(1.0, 1.0) - probe(1.0, -1.0) - probe(-1.0, 1.0)
                + probe(-1.0, -1.0))
                / (4.0 * hi * hj);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    h
}

struct BfgsOutcome {
    x: Vec<f64>,
    fval: f64,
    grad_norm: f64,
    iterations: usize,
    converged: bool,
}

/// BFGS with backtracking Armijo line search, minimizing `f`. The inverse
/// Hessian approximation resets to identity whenever the update would lose
/// positive definiteness.
fn bfgs(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], spec: &OptimizerSpec) -> Result<BfgsOutcome> {
    let d = x0.len();
    let grad_h = 1e-6;
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    if !fx.is_finite() {
        return Err(MedZimError::Fit("objective not finite at the start".into()));
    }
    let mut g = numerical_gradient(f, &x, grad_h)?;
    let mut hinv = DMatrix::<f64>::identity(d, d);
    let mut converged = false;
    let mut iter = 0;
    while iter < spec.max_iters {
        iter += 1;
        let gn = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gn <= spec.grad_tol * fx.abs().max(1.0) {
            converged = true;
            break;
        }
        let gv = DMatrix::from_column_slice(d, 1, &g);
        let mut dir = -(&hinv * &gv);
        let mut slope: f64 = dir.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            hinv = DMatrix::identity(d, d);
            dir = -gv.clone();
            slope = -g.iter().map(|v| v * v).sum::<f64>();
            if slope == 0.0 {
                converged = true;
                break;
            }
        }
        // backtracking Armijo
        let mut t = 1.0f64;
        let mut accepted = None;
        for _ in 0..50 {
            let xt: Vec<f64> = x.iter().zip(dir.iter()).map(|(a, b)| a + t * b).collect();
            let ft = f(&xt);
            if ft.is_finite() && ft <= fx + 1e-4 * t * slope {
                accepted = Some((xt, ft));
                break;
            }
            t *= 0.5;
        }
        let Some((xt, ft)) = accepted else {
            break; // line search failed; report best so far
        };
        debug_assert!(ft <= fx);
        let gt = numerical_gradient(f, &xt, grad_h)?;
        let s: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&yv).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        let yy: f64 = yv.iter().map(|v| v * v).sum::<f64>().sqrt();
        if sy > 1e-10 * ss * yy {
            let rho = 1.0 / sy;
            let sm = DMatrix::from_column_slice(d, 1, &s);
            let ym = DMatrix::from_column_slice(d, 1, &yv);
            let i_mat = DMatrix::<f64>::identity(d, d);
            let left = &i_mat - rho * &sm * ym.transpose();
            hinv = &left * hinv * left.transpose() + rho * &sm * sm.transpose();
        } else {
            hinv = DMatrix::identity(d, d);
        }
        x = xt;
        fx = ft;
        g = gt;
    }
    let grad_norm = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(BfgsOutcome {
        x,
        fval: fx,
        grad_norm,
        iterations: iter,
        converged,
    })
}

fn ols(design: &DMatrix<f64>, y: &[f64]) -> (Vec<f64>, f64) {
    let yv = DMatrix::from_column_slice(y.len(), 1, y);
    let svd = design.clone().svd(true, true);
    let coef = svd.solve(&yv, 1e-12).expect("least squares");
    let resid = design * &coef - yv;
    let rss: f64 = resid.iter().map(|v| v * v).sum();
    (coef.iter().copied().collect(), rss)
}

fn logistic_two_param(zero: &[bool], x: &[f64]) -> (f64, f64) {
    // Newton iterations for intercept/slope of Pr(zero | x)
    let mut b0 = 0.0f64;
    let mut b1 = 0.0f64;
    for _ in 0..30 {
        let (mut g0, mut g1) = (0.0, 0.0);
        let (mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0);
        for (&z, &xi) in zero.iter().zip(x) {
            let p = crate::dist::expit(b0 + b1 * xi);
            let w = p * (1.0 - p);
            let r = (if z { 1.0 } else { 0.0 }) - p;
            g0 += r;
            g1 += r * xi;
            h00 += w;
            h01 += w * xi;
            h11 += w * xi * xi;
        }
        let det = h00 * h11 - h01 * h01;
        if det.abs() < 1e-12 {
            break;
        }
        let d0 = (h11 * g0 - h01 * g1) / det;
        let d1 = (h00 * g1 - h01 * g0) / det;
        b0 = (b0 + d0).clamp(-10.0, 10.0);
        b1 = (b1 + d1).clamp(-10.0, 10.0);
        if d0.abs().max(d1.abs()) < 1e-10 {
            break;
        }
    }
    (b0, b1)
}

/// Deterministic starting point: OLS for the outcome coefficients treating
/// observed zeros as true, moment fits for the mediator links and
/// dispersion, logistic regression for the zero links.
fn initial_params(data: &[SubjectRecord], cfg: &ModelConfig) -> ModelParams {
    let n = data.len();
    // outcome design
    let mut cols: Vec<Box<dyn Fn(&SubjectRecord) -> f64>> = vec![
        Box::new(|_| 1.0),
        Box::new(|r| r.m_obs),
        Box::new(|r| r.x),
    ];
    let mut slots = vec![0usize, 1, 3];
    if cfg.zero_inflation {
        cols.push(Box::new(|r| if r.r { 1.0 } else { 0.0 }));
        slots.push(2);
        if cfg.include_interaction_indicator {
            cols.push(Box::new(|r| r.x * if r.r { 1.0 } else { 0.0 }));
            slots.push(4);
        }
    }
    if cfg.include_interaction_linear {
        cols.push(Box::new(|r| r.x * r.m_obs));
        slots.push(5);
    }
    let design = DMatrix::from_fn(n, cols.len(), |i, j| cols[j](&data[i]));
    let y: Vec<f64> = data.iter().map(|r| r.y).collect();
    let (coef, rss) = ols(&design, &y);
    let mut beta = [0.0f64; 6];
    for (&slot, &c) in slots.iter().zip(&coef) {
        beta[slot] = c;
    }
    let dof = n.saturating_sub(cols.len()).max(1);
    let delta_err = (rss / dof as f64).sqrt().clamp(1e-3, 1e6);

    // mediator links from positive observations
    let pos: Vec<&SubjectRecord> = data.iter().filter(|r| r.r).collect();
    let (alpha0, alpha1, phi) = if pos.is_empty() {
        (0.0, 0.0, 10.0)
    } else {
        let xs: Vec<f64> = pos.iter().map(|r| r.x).collect();
        let ms: Vec<f64> = pos.iter().map(|r| r.m_obs).collect();
        let xbar = xs.iter().sum::<f64>() / xs.len() as f64;
        let xsd = (xs.iter().map(|v| (v - xbar).powi(2)).sum::<f64>() / xs.len() as f64).sqrt();
        let mbar = ms.iter().sum::<f64>() / ms.len() as f64;
        let mvar = ms.iter().map(|v| (v - mbar).powi(2)).sum::<f64>() / ms.len() as f64;
        let clamp_mu = |m: f64| m.clamp(1e-8, 1.0 - 1e-8);
        let (a0, a1) = if xsd > 0.0 {
            // linear trend of the positive mean, pushed through the logit
            let dm = DMatrix::from_fn(ms.len(), 2, |i, j| if j == 0 { 1.0 } else { xs[i] });
            let (c, _) = ols(&dm, &ms);
            let (xl, xh) = (xbar - xsd, xbar + xsd);
            let (ml, mh) = (clamp_mu(c[0] + c[1] * xl), clamp_mu(c[0] + c[1] * xh));
            let a1 = (logit(mh) - logit(ml)) / (xh - xl);
            (logit(ml) - a1 * xl, a1)
        } else {
            (logit(clamp_mu(mbar)), 0.0)
        };
        let phi = if mvar > 0.0 {
            (mbar * (1.0 - mbar) / mvar - 1.0).clamp(0.5, 1e4)
        } else {
            10.0
        };
        (a0, a1, phi)
    };

    let (gamma0, gamma1) = if cfg.zero_inflation {
        let zero: Vec<bool> = data.iter().map(|r| !r.r).collect();
        let xs: Vec<f64> = data.iter().map(|r| r.x).collect();
        logistic_two_param(&zero, &xs)
    } else {
        (f64::NEG_INFINITY, 0.0)
    };

    ModelParams {
        beta,
        delta_err,
        alpha0,
        alpha1,
        phi,
        gamma0,
        gamma1,
    }
}

/// Fits the model by maximizing the complete log-likelihood. Multiple
/// restarts jitter the deterministic start; the restart with the highest
/// final log-likelihood wins. The observed information is differentiated in
/// the original parameterization.
pub fn fit(
    data: &[SubjectRecord],
    cfg: &ModelConfig,
    opt: &OptimizerSpec,
) -> Result<FitResult> {
    cfg.validate()?;
    opt.validate()?;
    if data.is_empty() {
        return Err(MedZimError::Domain("empty dataset".into()));
    }
    let x0v = data[0].x;
    if data.iter().all(|r| r.x == x0v) {
        return Err(MedZimError::Domain(
            "exposure is constant; model not identifiable".into(),
        ));
    }
    let n_zero = data.iter().filter(|r| !r.r).count();
    if cfg.zero_inflation && n_zero == 0 {
        return Err(MedZimError::Domain(
            "no observed zeros: fit with zero_inflation disabled".into(),
        ));
    }
    if data.len() == n_zero {
        return Err(MedZimError::Domain(
            "no positive observations; mediator model not identifiable".into(),
        ));
    }

    let objective = |z: &[f64]| -> f64 {
        let p = from_unconstrained(z, cfg);
        if !p.is_valid() {
            return f64::INFINITY;
        }
        match loglik_total(data, &p, cfg) {
            Ok(ll) if ll.is_finite() => -ll,
            _ => f64::INFINITY,
        }
    };

    let start = to_unconstrained(&initial_params(data, cfg), cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(opt.seed);
    let mut best: Option<BfgsOutcome> = None;
    let mut last_err: Option<MedZimError> = None;
    for r in 0..opt.n_restarts {
        let z0: Vec<f64> = if r == 0 {
            start.clone()
        } else {
            start
                .iter()
                .map(|&v| v * (1.0 + 0.05 * rng.gen_range(-1.0..1.0)) + 0.05 * rng.gen_range(-1.0..1.0))
                .collect()
        };
        match bfgs(&objective, &z0, opt) {
            Ok(out) => {
                let better = best
                    .as_ref()
                    .map(|b| out.fval < b.fval || (out.converged && !b.converged && out.fval <= b.fval))
                    .unwrap_or(true);
                if better {
                    best = Some(out);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let best = best.ok_or_else(|| {
        last_err.unwrap_or_else(|| MedZimError::Fit("all restarts failed".into()))
    })?;

    let params_hat = from_unconstrained(&best.x, cfg);
    let loglik_at_max = -best.fval;

    // observed information in the original (constrained) parameterization
    let orig_objective = |v: &[f64]| -> f64 {
        let p = cfg.unpack(v);
        if !p.is_valid() {
            return f64::NAN;
        }
        loglik_total(data, &p, cfg).unwrap_or(f64::NAN)
    };
    let v_hat = cfg.pack(&params_hat);
    let hess = numerical_hessian(&orig_objective, &v_hat);
    let mut info = -hess;
    // symmetrize before inversion
    let info_t = info.transpose();
    info = (info + info_t) * 0.5;

    let (cov, cond) = invert_information(&info);

    Ok(FitResult {
        params_hat,
        loglik_at_max,
        info_obs: info,
        cov_hat: cov,
        condition_number: cond,
        converged: best.converged,
        iterations: best.iterations,
        gradient_norm_at_max: best.grad_norm,
        config: *cfg,
    })
}

fn invert_information(info: &DMatrix<f64>) -> (Option<DMatrix<f64>>, Option<f64>) {
    if info.iter().any(|v| !v.is_finite()) {
        return (None, None);
    }
    let svd = info.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let smin = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(smin > smax * 1e-13) {
        return (None, Some(if smin > 0.0 { smax / smin } else { f64::INFINITY }));
    }
    let cond = smax / smin;
    let Some(mut cov) = info.clone().try_inverse() else {
        return (None, Some(cond));
    };
    // one Newton refinement pass tightens cov * info toward identity
    let d = info.nrows();
    let eye = DMatrix::<f64>::identity(d, d);
    cov = &cov * (2.0 * &eye - info * &cov);
    let cov_t = cov.transpose();
    cov = (cov + cov_t) * 0.5;
    if cov.diagonal().iter().any(|&v| v < 0.0) {
        return (None, Some(cond));
    }
    (Some(cov), Some(cond))
}
