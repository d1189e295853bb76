//! Synthetic-data generators for the two simulation settings and replicate
//! study drivers aggregating bias, SE and coverage.

use crate::dist::DirichletMixtureSpec;
use crate::effects::{delta_ci, effect_value, EffectKind, ExposureContrast};
use crate::estimate::{fit, OptimizerSpec};
use crate::model::{
    outcome_mean, ModelConfig, ModelParams, SubjectRecord, ZeroMechanism, PARAM_NAMES,
};
use crate::screen::{discovery_metrics, screen_all, DiscoveryMetrics, ScreenOptions, TaxaTable};
use crate::{MedZimError, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta as BetaDist, Distribution, StandardNormal};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

/// Synthetic stand-in for an empirical library-size pool: 24 values evenly
/// log-spaced over the observed range 31,607 to 911,652 reads.
pub fn default_library_pool() -> Vec<f64> {
    let (lo, hi) = (31_607f64.ln(), 911_652f64.ln());
    (0..24)
        .map(|i| (lo + (hi - lo) * i as f64 / 23.0).exp().round())
        .collect()
}

/// Single-taxon generator configuration: exposure is Bernoulli(0.5), the
/// mediator is zero-inflated Beta under `true_params`, library sizes are
/// resampled from `library_pool`, and observed zeros follow `mechanism`.
#[derive(Debug, Clone)]
pub struct Setting1Spec {
    pub n: usize,
    pub true_params: ModelParams,
    pub mechanism: ZeroMechanism,
    pub library_pool: Vec<f64>,
}

impl Setting1Spec {
    fn table1(n: usize, alpha0: f64) -> Self {
        Self {
            n,
            true_params: ModelParams {
                beta: [-2.0, 100.0, 4.0, 5.0, 3.0, 0.0],
                delta_err: 1.0,
                alpha0,
                alpha1: 0.4,
                phi: 50.0,
                gamma0: -1.16,
                gamma1: -0.5,
            },
            mechanism: ZeroMechanism::Lod,
            library_pool: default_library_pool(),
        }
    }

    /// Scenario with rare taxa (Beta-scale mean near 0.2%): false zeros are
    /// common under the detection limit.
    pub fn low_ra(n: usize) -> Self {
        Self::table1(n, -6.2)
    }

    /// Scenario with abundant taxa (Beta-scale mean near 30%): the
    /// detection limit essentially never fires.
    pub fn high_ra(n: usize) -> Self {
        Self::table1(n, -1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(MedZimError::Config("need at least 2 samples".into()));
        }
        if self.library_pool.is_empty() || self.library_pool.iter().any(|&l| !(l >= 1.0)) {
            return Err(MedZimError::Config(
                "library pool must be nonempty with entries >= 1".into(),
            ));
        }
        if !self.true_params.is_valid() {
            return Err(MedZimError::Config("invalid true parameters".into()));
        }
        Ok(())
    }
}

fn observe_zero<R: Rng + ?Sized>(m: f64, l: f64, mech: &ZeroMechanism, rng: &mut R) -> bool {
    if m == 0.0 {
        return true;
    }
    match *mech {
        ZeroMechanism::Lod => m * l < 1.0,
        ZeroMechanism::Exponential { eta } => rng.gen::<f64>() < (-eta * m * l).exp(),
    }
}

/// Draws one dataset. The outcome is computed from the TRUE mediator value
/// and presence indicator; only `m_obs` carries the observation mechanism.
pub fn gen_setting1<R: Rng + ?Sized>(spec: &Setting1Spec, rng: &mut R) -> Vec<SubjectRecord> {
    let p = &spec.true_params;
    let mut out = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let x = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
        let m = if rng.gen::<f64>() < p.delta_at(x) {
            0.0
        } else {
            let mu = p.mu_at(x);
            let beta = BetaDist::new(mu * p.phi, (1.0 - mu) * p.phi)
                .expect("valid Beta shapes from true params");
            beta.sample(rng).min(1.0 - 1e-12)
        };
        let l = spec.library_pool[rng.gen_range(0..spec.library_pool.len())];
        let m_obs = if observe_zero(m, l, &spec.mechanism, rng) {
            0.0
        } else {
            m
        };
        let noise: f64 = rng.sample(StandardNormal);
        let y = outcome_mean(m, m > 0.0, x, p) + p.delta_err * noise;
        out.push(SubjectRecord::new(y, m_obs, l, x).expect("generator emits valid records"));
    }
    out
}

/// Compositional generator configuration: zero-inflated Dirichlet mediators
/// with multinomial-logit means; taxon 1 is the only true mediator and the
/// only taxon receiving structural and false zeros.
#[derive(Debug, Clone)]
pub struct Setting2Spec {
    pub n: usize,
    /// Total number of taxa including the Dirichlet reference component.
    pub k_plus_1: usize,
    /// Intercept/slope for the first two logit components; the remaining
    /// K-2 are redrawn per dataset from `alpha0_tail` / `alpha1_tail`.
    pub alpha0_head: [f64; 2],
    pub alpha1_head: [f64; 2],
    /// Uniform ranges for the redrawn tail coefficients.
    pub alpha0_tail: (f64, f64),
    pub alpha1_tail: (f64, f64),
    pub phi: f64,
    pub gamma0: f64,
    pub gamma1: f64,
    /// `(b0, b1, b2, b3, b4)` of the outcome model; taxon 1 is the mediator
    /// and there is no linear interaction term.
    pub outcome_betas: [f64; 5],
    pub mechanism: ZeroMechanism,
    pub library_pool: Vec<f64>,
}

impl Setting2Spec {
    pub fn paper_defaults(n: usize, k_plus_1: usize) -> Self {
        Self {
            n,
            k_plus_1,
            alpha0_head: [-3.0, 1.0],
            alpha1_head: [1.0, 1.5],
            alpha0_tail: (1.0, 2.0),
            alpha1_tail: (-2.0, -1.0),
            phi: 50.0,
            gamma0: -1.5,
            gamma1: 1.0,
            outcome_betas: [-1.73, 35.0, 2.0, 4.55, 1.0],
            mechanism: ZeroMechanism::Lod,
            library_pool: default_library_pool(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(MedZimError::Config("need at least 2 samples".into()));
        }
        if self.k_plus_1 < 3 {
            return Err(MedZimError::Config(
                "need at least 3 taxa (two logit components plus reference)".into(),
            ));
        }
        if self.library_pool.is_empty() || self.library_pool.iter().any(|&l| !(l >= 1.0)) {
            return Err(MedZimError::Config(
                "library pool must be nonempty with entries >= 1".into(),
            ));
        }
        if !(self.phi > 0.0) {
            return Err(MedZimError::Config("phi must be positive".into()));
        }
        Ok(())
    }
}

/// Draws one compositional dataset plus the per-taxon truth flags (taxon 1
/// is the sole true mediator). The tail logit coefficients are redrawn from
/// the given uniform ranges on every call.
pub fn gen_setting2<R: Rng + ?Sized>(
    spec: &Setting2Spec,
    rng: &mut R,
) -> (TaxaTable, Vec<bool>) {
    let k = spec.k_plus_1 - 1; // logit components (reference excluded)
    let mut alpha0 = spec.alpha0_head.to_vec();
    let mut alpha1 = spec.alpha1_head.to_vec();
    for _ in 2..k {
        alpha0.push(rng.gen_range(spec.alpha0_tail.0..spec.alpha0_tail.1));
    }
    for _ in 2..k {
        alpha1.push(rng.gen_range(spec.alpha1_tail.0..spec.alpha1_tail.1));
    }
    let mix = DirichletMixtureSpec {
        alpha0,
        alpha1,
        phi: spec.phi,
        gamma0: spec.gamma0,
        gamma1: spec.gamma1,
    };
    let b = spec.outcome_betas;

    let mut ra = Vec::with_capacity(spec.n);
    let mut library_size = Vec::with_capacity(spec.n);
    let mut xs = Vec::with_capacity(spec.n);
    let mut ys = Vec::with_capacity(spec.n);
    let mut ids = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let x = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
        let comp = crate::dist::zid_sample(&mix, x, rng);
        let l = spec.library_pool[rng.gen_range(0..spec.library_pool.len())];
        let m1 = comp[0];
        let mut obs = comp.clone();
        // false zeros hit taxon 1 only
        if observe_zero(m1, l, &spec.mechanism, rng) {
            obs[0] = 0.0;
        }
        let ind = if m1 > 0.0 { 1.0 } else { 0.0 };
        let noise: f64 = rng.sample(StandardNormal);
        let y = b[0] + b[1] * m1 + b[2] * ind + b[3] * x + b[4] * x * ind + noise;
        ra.push(obs);
        library_size.push(l);
        xs.push(x);
        ys.push(y);
        ids.push(format!("s{:04}", i + 1));
    }
    let table = TaxaTable {
        ra,
        library_size,
        x: xs,
        y: ys,
        taxa_names: (1..=spec.k_plus_1).map(|t| format!("taxon{t:02}")).collect(),
        sample_ids: ids,
    };
    let mut truth = vec![false; spec.k_plus_1];
    truth[0] = true;
    (table, truth)
}

/// One row of a bias/coverage table.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub name: String,
    pub truth: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    /// `None` when the truth is zero.
    pub bias_pct: Option<f64>,
    /// Empirical standard deviation of the estimates.
    pub emp_se: f64,
    /// Mean of the delta-method standard errors.
    pub mean_se: f64,
    /// Percent of 95% intervals covering the truth.
    pub coverage_pct: f64,
}

#[derive(Debug, Clone)]
pub struct ReplicateSummary {
    pub rows: Vec<SummaryRow>,
    pub n_reps: usize,
    pub n_failed: usize,
}

fn replicate_seed(base: u64, rep: usize) -> u64 {
    base ^ (rep as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Fits every replicate of a setting-1 study and aggregates parameter and
/// effect estimates into a bias/SE/coverage table. Replicates whose fit
/// fails (or yields no covariance) are dropped and counted in `n_failed`.
pub fn run_replicates(
    spec: &Setting1Spec,
    n_reps: usize,
    cfg: &ModelConfig,
    opt: &OptimizerSpec,
    contrast: &ExposureContrast,
    base_seed: u64,
) -> Result<ReplicateSummary> {
    spec.validate()?;
    cfg.validate()?;
    opt.validate()?;
    if n_reps == 0 {
        return Err(MedZimError::Config("need at least one replicate".into()));
    }
    let free = cfg.free_indices();
    let mut kinds = vec![EffectKind::Nie1];
    if cfg.zero_inflation {
        kinds.push(EffectKind::Nie2);
    }
    kinds.push(EffectKind::Nie);
    kinds.push(EffectKind::Nde);
    if contrast.m_controlled.is_some() {
        kinds.push(EffectKind::Cde);
    }
    let truth_flat = spec.true_params.to_flat();
    let mut names: Vec<String> = free.iter().map(|&i| PARAM_NAMES[i].to_string()).collect();
    let mut truths: Vec<f64> = free.iter().map(|&i| truth_flat[i]).collect();
    for &k in &kinds {
        names.push(k.label().to_string());
        truths.push(effect_value(k, &spec.true_params, contrast)?);
    }
    let z = Normal::new(0.0, 1.0).unwrap().inverse_cdf(0.975);

    // (estimate, se) per row, or None for a failed replicate
    let reps: Vec<Option<Vec<(f64, f64)>>> = (0..n_reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(replicate_seed(base_seed, rep));
            let data = gen_setting1(spec, &mut rng);
            let fitted = fit(&data, cfg, opt).ok()?;
            let cov = fitted.cov_hat.as_ref()?;
            let hat = fitted.params_hat.to_flat();
            let mut row: Vec<(f64, f64)> = Vec::with_capacity(names.len());
            for (k, &i) in free.iter().enumerate() {
                let var = cov[(k, k)];
                if !(var >= 0.0) {
                    return None;
                }
                row.push((hat[i], var.sqrt()));
            }
            for &kind in &kinds {
                let ci = delta_ci(kind, &fitted, contrast, 0.95).ok()?;
                row.push((ci.estimate, ci.se));
            }
            Some(row)
        })
        .collect();

    let kept: Vec<&Vec<(f64, f64)>> = reps.iter().flatten().collect();
    let n_failed = n_reps - kept.len();
    if kept.is_empty() {
        return Err(MedZimError::Fit("every replicate failed to fit".into()));
    }
    let nk = kept.len() as f64;
    let mut rows = Vec::with_capacity(names.len());
    for (j, (name, &truth)) in names.iter().zip(&truths).enumerate() {
        let ests: Vec<f64> = kept.iter().map(|r| r[j].0).collect();
        let ses: Vec<f64> = kept.iter().map(|r| r[j].1).collect();
        let mean_estimate = ests.iter().sum::<f64>() / nk;
        let emp_se = if kept.len() > 1 {
            (ests.iter().map(|e| (e - mean_estimate).powi(2)).sum::<f64>() / (nk - 1.0)).sqrt()
        } else {
            0.0
        };
        let mean_se = ses.iter().sum::<f64>() / nk;
        let covered = ests
            .iter()
            .zip(&ses)
            .filter(|&(&e, &s)| (e - z * s..=e + z * s).contains(&truth))
            .count();
        let bias = mean_estimate - truth;
        rows.push(SummaryRow {
            name: name.clone(),
            truth,
            mean_estimate,
            bias,
            bias_pct: (truth != 0.0).then(|| 100.0 * bias / truth),
            emp_se,
            mean_se,
            coverage_pct: 100.0 * covered as f64 / nk,
        });
    }
    Ok(ReplicateSummary {
        rows,
        n_reps,
        n_failed,
    })
}

/// Discovery performance of the multi-taxon screen over replicated
/// setting-2 datasets.
#[derive(Debug, Clone)]
pub struct ScreenStudySummary {
    /// Per-replicate means (the convention used for reported F1).
    pub mean_recall: Option<f64>,
    pub mean_precision: f64,
    pub mean_f1: Option<f64>,
    /// Metrics of the pooled confusion counts across replicates.
    pub pooled: DiscoveryMetrics,
    pub n_reps: usize,
    pub n_failed: usize,
}

/// Generates, screens and scores `n_reps` setting-2 datasets against the
/// known truth flags.
pub fn run_screen_replicates(
    spec: &Setting2Spec,
    n_reps: usize,
    opts: &ScreenOptions,
    base_seed: u64,
) -> Result<ScreenStudySummary> {
    spec.validate()?;
    if n_reps == 0 {
        return Err(MedZimError::Config("need at least one replicate".into()));
    }
    let per_rep: Vec<Option<(DiscoveryMetrics, Vec<bool>, Vec<bool>)>> = (0..n_reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(replicate_seed(base_seed, rep));
            let (table, truth) = gen_setting2(spec, &mut rng);
            let res = screen_all(&table, opts).ok()?;
            let flags: Vec<bool> = res.taxa.iter().map(|t| t.sig_nie1).collect();
            let m = discovery_metrics(&flags, &truth).ok()?;
            Some((m, flags, truth))
        })
        .collect();
    let kept: Vec<&(DiscoveryMetrics, Vec<bool>, Vec<bool>)> = per_rep.iter().flatten().collect();
    let n_failed = n_reps - kept.len();
    if kept.is_empty() {
        return Err(MedZimError::Fit("every replicate failed to screen".into()));
    }
    let mean_of = |vals: Vec<Option<f64>>| {
        let xs: Vec<f64> = vals.into_iter().flatten().collect();
        (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
    };
    let mean_recall = mean_of(kept.iter().map(|r| r.0.recall).collect());
    let mean_precision = kept.iter().map(|r| r.0.precision).sum::<f64>() / kept.len() as f64;
    let mean_f1 = mean_of(kept.iter().map(|r| r.0.f1).collect());
    let mut flags_all = Vec::new();
    let mut truth_all = Vec::new();
    for (_, f, t) in kept.iter() {
        flags_all.extend_from_slice(f);
        truth_all.extend_from_slice(t);
    }
    let pooled = discovery_metrics(&flags_all, &truth_all)?;
    Ok(ScreenStudySummary {
        mean_recall,
        mean_precision,
        mean_f1,
        pooled,
        n_reps,
        n_failed,
    })
}
