//! Multi-taxon driver: runs the single-mediator analysis for every taxon of
//! a relative-abundance table, adjusts the p-values with the
//! Benjamini-Hochberg step-up procedure, and derives discovery metrics and
//! heatmap strengths.

use crate::effects::{delta_ci, EffectCi, EffectKind, ExposureContrast};
use crate::estimate::{fit, FitResult, OptimizerSpec};
use crate::model::{ModelConfig, SubjectRecord};
use crate::{MedZimError, Result};
use rayon::prelude::*;

/// Samples-by-taxa relative abundances plus per-sample metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct TaxaTable {
    /// `ra[sample][taxon]`, each value in `[0, 1]`.
    pub ra: Vec<Vec<f64>>,
    pub library_size: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub taxa_names: Vec<String>,
    pub sample_ids: Vec<String>,
}

impl TaxaTable {
    pub fn n_samples(&self) -> usize {
        self.ra.len()
    }

    pub fn n_taxa(&self) -> usize {
        self.taxa_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_samples();
        if self.library_size.len() != n
            || self.x.len() != n
            || self.y.len() != n
            || self.sample_ids.len() != n
        {
            return Err(MedZimError::Ingest(
                "metadata length does not match sample count".into(),
            ));
        }
        for (i, row) in self.ra.iter().enumerate() {
            if row.len() != self.n_taxa() {
                return Err(MedZimError::Ingest(format!(
                    "sample {} has {} abundances, expected {}",
                    self.sample_ids[i],
                    row.len(),
                    self.n_taxa()
                )));
            }
            if row.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(MedZimError::Ingest(format!(
                    "sample {} has relative abundance outside [0, 1]",
                    self.sample_ids[i]
                )));
            }
            let sum: f64 = row.iter().sum();
            if sum > 1.0 + 1e-6 {
                return Err(MedZimError::Ingest(format!(
                    "sample {} abundances sum to {sum} > 1",
                    self.sample_ids[i]
                )));
            }
        }
        for (i, &l) in self.library_size.iter().enumerate() {
            if !(l >= 1.0) {
                return Err(MedZimError::Ingest(format!(
                    "sample {} has library size {l} < 1",
                    self.sample_ids[i]
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TaxonStatus {
    Analyzed,
    /// Skipped before fitting (e.g. too few positive samples).
    Skipped(String),
    /// Fit attempted but failed.
    Failed(String),
}

/// Per-taxon output of the screen.
#[derive(Debug, Clone)]
pub struct TaxonResult {
    pub name: String,
    pub status: TaxonStatus,
    pub nie1: Option<EffectCi>,
    /// Present only for taxa with at least one observed zero; the presence
    /// links are not identifiable otherwise.
    pub nie2: Option<EffectCi>,
    pub nie: Option<EffectCi>,
    pub nde: Option<EffectCi>,
    pub cde: Option<EffectCi>,
    pub q_nie1: Option<f64>,
    pub sig_nie1: bool,
    pub q_nie2: Option<f64>,
    pub sig_nie2: bool,
    pub converged: bool,
    pub condition_number: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ScreenResult {
    pub taxa: Vec<TaxonResult>,
    pub fdr_target: f64,
    pub warnings: Vec<String>,
}

impl ScreenResult {
    pub fn n_failed(&self) -> usize {
        self.taxa
            .iter()
            .filter(|t| matches!(t.status, TaxonStatus::Failed(_)))
            .count()
    }
}

#[derive(Debug, Clone)]
pub struct ScreenOptions {
    pub cfg: ModelConfig,
    pub opt: OptimizerSpec,
    pub contrast: ExposureContrast,
    pub fdr_target: f64,
    /// Taxa positive in fewer samples than this are skipped.
    pub min_present: usize,
}

impl Default for ScreenOptions {
    fn default() -> Self {
        Self {
            cfg: ModelConfig::default(),
            opt: OptimizerSpec::default(),
            contrast: ExposureContrast::default(),
            fdr_target: 0.2,
            min_present: 5,
        }
    }
}

fn clamp_ra(v: f64) -> (f64, bool) {
    if v >= 1.0 {
        (1.0 - 1e-12, true)
    } else {
        (v, false)
    }
}

/// Fits one taxon as the mediator, ignoring the rest of the composition.
fn analyze_taxon(
    table: &TaxaTable,
    taxon: usize,
    opts: &ScreenOptions,
) -> (TaxonResult, Vec<String>) {
    let name = table.taxa_names[taxon].clone();
    let mut warnings = Vec::new();
    let mut empty = TaxonResult {
        name: name.clone(),
        status: TaxonStatus::Analyzed,
        nie1: None,
        nie2: None,
        nie: None,
        nde: None,
        cde: None,
        q_nie1: None,
        sig_nie1: false,
        q_nie2: None,
        sig_nie2: false,
        converged: false,
        condition_number: None,
    };

    let mut records = Vec::with_capacity(table.n_samples());
    let mut n_pos = 0usize;
    for s in 0..table.n_samples() {
        let (m, clamped) = clamp_ra(table.ra[s][taxon]);
        if clamped {
            warnings.push(format!(
                "taxon {name}: relative abundance 1 in sample {} clamped below 1",
                table.sample_ids[s]
            ));
        }
        if m > 0.0 {
            n_pos += 1;
        }
        match SubjectRecord::new(table.y[s], m, table.library_size[s], table.x[s]) {
            Ok(r) => records.push(r),
            Err(e) => {
                empty.status = TaxonStatus::Failed(e.to_string());
                return (empty, warnings);
            }
        }
    }
    if n_pos == 0 {
        empty.status = TaxonStatus::Skipped("observed zero in every sample".into());
        return (empty, warnings);
    }
    if n_pos < opts.min_present {
        empty.status = TaxonStatus::Skipped(format!(
            "positive in only {n_pos} samples (threshold {})",
            opts.min_present
        ));
        return (empty, warnings);
    }
    let has_zeros = n_pos < table.n_samples();
    // taxa with no zeros: presence terms pinned, no zero-inflation
    let cfg = ModelConfig {
        zero_inflation: has_zeros,
        ..opts.cfg
    };

    let fitres: FitResult = match fit(&records, &cfg, &opts.opt) {
        Ok(f) => f,
        Err(e) => {
            empty.status = TaxonStatus::Failed(e.to_string());
            return (empty, warnings);
        }
    };
    empty.converged = fitres.converged;
    empty.condition_number = fitres.condition_number;
    let ci = |kind: EffectKind| delta_ci(kind, &fitres, &opts.contrast, 0.95).ok();
    empty.nie1 = ci(EffectKind::Nie1);
    empty.nie = ci(EffectKind::Nie);
    empty.nde = ci(EffectKind::Nde);
    if has_zeros {
        empty.nie2 = ci(EffectKind::Nie2);
    }
    if opts.contrast.m_controlled.is_some() {
        empty.cde = ci(EffectKind::Cde);
    }
    (empty, warnings)
}

/// Runs the single-mediator analysis independently for each taxon, then
/// adjusts the NIE1 (and, where identifiable, NIE2) p-values with
/// Benjamini-Hochberg at the target FDR. Failed and skipped taxa are
/// reported but excluded from the adjustment family.
pub fn screen_all(table: &TaxaTable, opts: &ScreenOptions) -> Result<ScreenResult> {
    table.validate()?;
    if !(0.0 < opts.fdr_target && opts.fdr_target < 1.0) {
        return Err(MedZimError::Config("fdr target must be in (0, 1)".into()));
    }
    let outcomes: Vec<(TaxonResult, Vec<String>)> = (0..table.n_taxa())
        .into_par_iter()
        .map(|t| analyze_taxon(table, t, opts))
        .collect();
    let mut taxa: Vec<TaxonResult> = Vec::with_capacity(outcomes.len());
    let mut warnings = Vec::new();
    for (res, w) in outcomes {
        warnings.extend(w);
        if let TaxonStatus::Failed(ref msg) = res.status {
            warnings.push(format!("taxon {}: fit failed: {msg}", res.name));
        }
        taxa.push(res);
    }
    if taxa
        .iter()
        .all(|t| !matches!(t.status, TaxonStatus::Analyzed))
    {
        return Err(MedZimError::Fit("no taxon could be analyzed".into()));
    }

    // BH families: converged fits with an available interval
    let apply_bh = |taxa: &mut [TaxonResult],
                    get_p: fn(&TaxonResult) -> Option<f64>,
                    set_q: fn(&mut TaxonResult, f64, bool),
                    fdr: f64| {
        let members: Vec<usize> = taxa
            .iter()
            .enumerate()
            .filter(|(_, t)| matches!(t.status, TaxonStatus::Analyzed) && get_p(t).is_some())
            .map(|(i, _)| i)
            .collect();
        let ps: Vec<f64> = members.iter().map(|&i| get_p(&taxa[i]).unwrap()).collect();
        let qs = bh_adjust(&ps);
        for (&i, &q) in members.iter().zip(&qs) {
            set_q(&mut taxa[i], q, q <= fdr);
        }
    };
    apply_bh(
        &mut taxa,
        |t| t.nie1.map(|c| c.p_value),
        |t, q, sig| {
            t.q_nie1 = Some(q);
            t.sig_nie1 = sig;
        },
        opts.fdr_target,
    );
    apply_bh(
        &mut taxa,
        |t| t.nie2.map(|c| c.p_value),
        |t, q, sig| {
            t.q_nie2 = Some(q);
            t.sig_nie2 = sig;
        },
        opts.fdr_target,
    );

    Ok(ScreenResult {
        taxa,
        fdr_target: opts.fdr_target,
        warnings,
    })
}

/// Benjamini-Hochberg step-up adjustment:
/// `q_(i) = min_{j >= i} (m p_(j) / j)` over the sorted p-values, mapped
/// back to the input order. Rejection at level `a` is `q <= a`.
pub fn bh_adjust(pvals: &[f64]) -> Vec<f64> {
    let m = pvals.len();
    if m == 0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvals[a].partial_cmp(&pvals[b]).unwrap());
    let mut q = vec![0.0; m];
    let mut running = 1.0f64;
    for rank in (1..=m).rev() {
        let i = order[rank - 1];
        running = running.min(m as f64 * pvals[i] / rank as f64);
        q[i] = running;
    }
    q
}

/// Recall/precision/F1 against known truth. `None` marks a quantity the
/// counts cannot define (no true mediators for recall). When there are no
/// false positives, precision is 1 by convention, regardless of TP.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscoveryMetrics {
    pub recall: Option<f64>,
    pub precision: f64,
    pub f1: Option<f64>,
}

pub fn discovery_metrics(flags: &[bool], truth: &[bool]) -> Result<DiscoveryMetrics> {
    if flags.len() != truth.len() {
        return Err(MedZimError::Domain(
            "flag and truth vectors differ in length".into(),
        ));
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fneg = 0usize;
    for (&f, &t) in flags.iter().zip(truth) {
        match (f, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    let recall = if tp + fneg > 0 {
        Some(tp as f64 / (tp + fneg) as f64)
    } else {
        None
    };
    let precision = if fp == 0 {
        1.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let f1 = recall.map(|r| {
        if r == 0.0 || precision == 0.0 {
            0.0
        } else {
            2.0 / (1.0 / r + 1.0 / precision)
        }
    });
    Ok(DiscoveryMetrics {
        recall,
        precision,
        f1,
    })
}

/// Signed mediation-strength matrix, taxa by samples:
/// `sign(NIE1) * (1 - p)` where the taxon is present in the sample, `None`
/// (left blank) where it is absent or was not analyzed.
pub fn heatmap_matrix(result: &ScreenResult, table: &TaxaTable) -> Vec<Vec<Option<f64>>> {
    let mut out = vec![vec![None; table.n_samples()]; table.n_taxa()];
    for (t, taxon) in result.taxa.iter().enumerate() {
        let Some(ci) = taxon.nie1 else { continue };
        let strength = ci.estimate.signum() * (1.0 - ci.p_value);
        for s in 0..table.n_samples() {
            if table.ra[s][t] > 0.0 {
                out[t][s] = Some(strength);
            }
        }
    }
    out
}
