//! Batch front end: file ingestion, command configs, and bit-stable
//! tab-separated outputs.

use crate::effects::ExposureContrast;
use crate::estimate::OptimizerSpec;
use crate::model::{ModelConfig, ZeroMechanism};
use crate::screen::{
    heatmap_matrix, screen_all, ScreenOptions, ScreenResult, TaxaTable, TaxonStatus,
};
use crate::simulate::{
    run_replicates, run_screen_replicates, ReplicateSummary, ScreenStudySummary, Setting1Spec,
    Setting2Spec,
};
use crate::{MedZimError, Result};
use serde_json::json;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Scenario presets for the single-taxon simulation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    LowAbundance,
    HighAbundance,
}

#[derive(Debug, Clone)]
pub struct AnalyzeConfig {
    pub ra_path: PathBuf,
    pub meta_path: PathBuf,
    pub mechanism: ZeroMechanism,
    pub contrast: ExposureContrast,
    pub include_interaction_indicator: bool,
    pub include_interaction_linear: bool,
    pub fdr: f64,
    pub seed: u64,
    pub threads: Option<usize>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone)]
pub struct Simulate1Config {
    pub scenario: Scenario,
    pub n: usize,
    pub reps: usize,
    pub mechanism: ZeroMechanism,
    pub contrast: ExposureContrast,
    pub include_interaction_indicator: bool,
    pub include_interaction_linear: bool,
    pub seed: u64,
    pub threads: Option<usize>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone)]
pub struct Simulate2Config {
    pub n: usize,
    pub taxa: usize,
    pub reps: usize,
    pub fdr: f64,
    pub seed: u64,
    pub threads: Option<usize>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone)]
pub enum RunConfig {
    Analyze(AnalyzeConfig),
    Simulate1(Simulate1Config),
    Simulate2(Simulate2Config),
}

fn mechanism_json(m: &ZeroMechanism) -> serde_json::Value {
    match m {
        ZeroMechanism::Lod => json!({"kind": "lod"}),
        ZeroMechanism::Exponential { eta } => json!({"kind": "exp", "eta": eta}),
    }
}

fn fmt_f(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.5e}")
    } else {
        "NA".to_string()
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), fmt_f)
}

fn split_line(line: &str, delim: char) -> Vec<String> {
    line.split(delim).map(|s| s.trim().to_string()).collect()
}

fn parse_cell(cell: &str, file: &Path, line_no: usize, col_no: usize) -> Result<f64> {
    cell.parse::<f64>().map_err(|_| {
        MedZimError::Ingest(format!(
            "{}:{}:{}: cannot parse '{}' as a number",
            file.display(),
            line_no,
            col_no,
            cell
        ))
    })
}

/// Reads a relative-abundance table (samples as rows, first column sample
/// ID) and a metadata table (columns sample_id, library_size, x, y), joins
/// them on sample ID, and returns the validated table plus warnings for
/// dropped samples. The delimiter (tab or comma) is sniffed per file from
/// the header line.
pub fn ingest(ra_path: &Path, meta_path: &Path) -> Result<(TaxaTable, Vec<String>)> {
    let ra_text = std::fs::read_to_string(ra_path)?;
    let meta_text = std::fs::read_to_string(meta_path)?;
    let sniff = |text: &str| {
        if text.lines().next().is_some_and(|h| h.contains('\t')) {
            '\t'
        } else {
            ','
        }
    };

    // relative abundances
    let delim = sniff(&ra_text);
    let mut lines = ra_text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| MedZimError::Ingest(format!("{}: empty file", ra_path.display())))?;
    let header = split_line(header, delim);
    if header.len() < 2 {
        return Err(MedZimError::Ingest(format!(
            "{}: need a sample-ID column plus at least one taxon",
            ra_path.display()
        )));
    }
    let taxa_names: Vec<String> = header[1..].to_vec();
    let mut ra_rows: Vec<(String, Vec<f64>)> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let cells = split_line(line, delim);
        if cells.len() != header.len() {
            return Err(MedZimError::Ingest(format!(
                "{}:{}: {} cells, header has {}",
                ra_path.display(),
                line_no,
                cells.len(),
                header.len()
            )));
        }
        let id = cells[0].clone();
        if seen.insert(id.clone(), line_no).is_some() {
            return Err(MedZimError::Ingest(format!(
                "{}:{}: duplicate sample ID '{}'",
                ra_path.display(),
                line_no,
                id
            )));
        }
        let mut vals = Vec::with_capacity(taxa_names.len());
        for (j, cell) in cells[1..].iter().enumerate() {
            let v = parse_cell(cell, ra_path, line_no, j + 2)?;
            if !(0.0..=1.0).contains(&v) {
                return Err(MedZimError::Ingest(format!(
                    "{}:{}:{}: relative abundance {} outside [0, 1]",
                    ra_path.display(),
                    line_no,
                    j + 2,
                    v
                )));
            }
            vals.push(v);
        }
        ra_rows.push((id, vals));
    }

    // metadata
    let delim = sniff(&meta_text);
    let mut lines = meta_text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| MedZimError::Ingest(format!("{}: empty file", meta_path.display())))?;
    let header = split_line(header, delim);
    let col = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| {
            MedZimError::Ingest(format!(
                "{}: missing column '{}'",
                meta_path.display(),
                name
            ))
        })
    };
    let (c_id, c_l, c_x, c_y) = (col("sample_id")?, col("library_size")?, col("x")?, col("y")?);
    let mut meta: HashMap<String, (f64, f64, f64)> = HashMap::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let cells = split_line(line, delim);
        if cells.len() != header.len() {
            return Err(MedZimError::Ingest(format!(
                "{}:{}: {} cells, header has {}",
                meta_path.display(),
                line_no,
                cells.len(),
                header.len()
            )));
        }
        let id = cells[c_id].clone();
        let l = parse_cell(&cells[c_l], meta_path, line_no, c_l + 1)?;
        let x = parse_cell(&cells[c_x], meta_path, line_no, c_x + 1)?;
        let y = parse_cell(&cells[c_y], meta_path, line_no, c_y + 1)?;
        if meta.insert(id.clone(), (l, x, y)).is_some() {
            return Err(MedZimError::Ingest(format!(
                "{}:{}: duplicate sample ID '{}'",
                meta_path.display(),
                line_no,
                id
            )));
        }
    }

    // join on sample ID, keeping the abundance-file row order
    let mut warnings = Vec::new();
    let mut table = TaxaTable {
        ra: Vec::new(),
        library_size: Vec::new(),
        x: Vec::new(),
        y: Vec::new(),
        taxa_names,
        sample_ids: Vec::new(),
    };
    let mut used: Vec<&String> = Vec::new();
    for (id, vals) in &ra_rows {
        match meta.get(id) {
            Some(&(l, x, y)) => {
                table.ra.push(vals.clone());
                table.library_size.push(l);
                table.x.push(x);
                table.y.push(y);
                table.sample_ids.push(id.clone());
                used.push(id);
            }
            None => warnings.push(format!("sample '{id}' missing from metadata, dropped")),
        }
    }
    for id in meta.keys() {
        if !ra_rows.iter().any(|(r, _)| r == id) {
            warnings.push(format!(
                "sample '{id}' missing from abundance table, dropped"
            ));
        }
    }
    warnings.sort();
    if table.sample_ids.is_empty() {
        return Err(MedZimError::Ingest(
            "no samples shared between the two files".into(),
        ));
    }
    table.validate()?;
    Ok((table, warnings))
}

/// Writes a table back out in the ingestible two-file layout.
pub fn write_taxa_table(table: &TaxaTable, ra_path: &Path, meta_path: &Path) -> Result<()> {
    let mut ra = String::from("sample_id");
    for t in &table.taxa_names {
        write!(ra, "\t{t}").unwrap();
    }
    ra.push('\n');
    for (s, id) in table.sample_ids.iter().enumerate() {
        ra.push_str(id);
        for v in &table.ra[s] {
            write!(ra, "\t{v:.17e}").unwrap();
        }
        ra.push('\n');
    }
    std::fs::write(ra_path, ra)?;
    let mut meta = String::from("sample_id\tlibrary_size\tx\ty\n");
    for (s, id) in table.sample_ids.iter().enumerate() {
        writeln!(
            meta,
            "{id}\t{:.17e}\t{:.17e}\t{:.17e}",
            table.library_size[s], table.x[s], table.y[s]
        )
        .unwrap();
    }
    std::fs::write(meta_path, meta)?;
    Ok(())
}

const RESULTS_COLUMNS: [&str; 27] = [
    "taxon",
    "status",
    "converged",
    "nie1",
    "nie1_se",
    "nie1_lo",
    "nie1_hi",
    "nie1_p",
    "nie1_q",
    "nie1_sig",
    "nie2",
    "nie2_se",
    "nie2_lo",
    "nie2_hi",
    "nie2_p",
    "nie2_q",
    "nie2_sig",
    "nie",
    "nie_se",
    "nie_lo",
    "nie_hi",
    "nie_p",
    "nde",
    "nde_se",
    "nde_p",
    "cde",
    "cde_se",
];

fn results_tsv(res: &ScreenResult) -> String {
    let mut out = RESULTS_COLUMNS.join("\t");
    out.push('\n');
    for t in &res.taxa {
        let status = match &t.status {
            TaxonStatus::Analyzed => "analyzed".to_string(),
            TaxonStatus::Skipped(r) => format!("skipped: {r}"),
            TaxonStatus::Failed(r) => format!("failed: {r}"),
        };
        let ci_cols = |ci: Option<crate::effects::EffectCi>| {
            let Some(c) = ci else {
                return ("NA".into(), "NA".into(), "NA".into(), "NA".into(), "NA".to_string());
            };
            (fmt_f(c.estimate), fmt_f(c.se), fmt_f(c.lo), fmt_f(c.hi), fmt_f(c.p_value))
        };
        let (n1, n1se, n1lo, n1hi, n1p) = ci_cols(t.nie1);
        let (n2, n2se, n2lo, n2hi, n2p) = ci_cols(t.nie2);
        let (ni, nise, nilo, nihi, nip) = ci_cols(t.nie);
        writeln!(
            out,
            "{}\t{}\t{}\t{n1}\t{n1se}\t{n1lo}\t{n1hi}\t{n1p}\t{}\t{}\t{n2}\t{n2se}\t{n2lo}\t{n2hi}\t{n2p}\t{}\t{}\t{ni}\t{nise}\t{nilo}\t{nihi}\t{nip}\t{}\t{}\t{}\t{}\t{}",
            t.name,
            status,
            t.converged,
            fmt_opt(t.q_nie1),
            t.sig_nie1,
            fmt_opt(t.q_nie2),
            t.sig_nie2,
            fmt_opt(t.nde.map(|c| c.estimate)),
            fmt_opt(t.nde.map(|c| c.se)),
            fmt_opt(t.nde.map(|c| c.p_value)),
            fmt_opt(t.cde.map(|c| c.estimate)),
            fmt_opt(t.cde.map(|c| c.se)),
        )
        .unwrap();
    }
    out
}

fn heatmap_tsv(res: &ScreenResult, table: &TaxaTable) -> String {
    let hm = heatmap_matrix(res, table);
    let mut out = String::from("taxon");
    for id in &table.sample_ids {
        write!(out, "\t{id}").unwrap();
    }
    out.push('\n');
    for (t, row) in hm.iter().enumerate() {
        out.push_str(&table.taxa_names[t]);
        for cell in row {
            write!(out, "\t{}", fmt_opt(*cell)).unwrap();
        }
        out.push('\n');
    }
    out
}

fn summary_tsv(s: &ReplicateSummary) -> String {
    let mut out = format!("# replicates={} failed={}\n", s.n_reps, s.n_failed);
    out.push_str("parameter\ttruth\tmean_estimate\tbias\tbias_pct\tse\tmean_se\tcp_pct\n");
    for r in &s.rows {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.name,
            fmt_f(r.truth),
            fmt_f(r.mean_estimate),
            fmt_f(r.bias),
            fmt_opt(r.bias_pct),
            fmt_f(r.emp_se),
            fmt_f(r.mean_se),
            fmt_f(r.coverage_pct),
        )
        .unwrap();
    }
    out
}

fn metrics_tsv(s: &ScreenStudySummary) -> String {
    let mut out = String::from("metric\tvalue\n");
    writeln!(out, "mean_recall\t{}", fmt_opt(s.mean_recall)).unwrap();
    writeln!(out, "mean_precision\t{}", fmt_f(s.mean_precision)).unwrap();
    writeln!(out, "mean_f1\t{}", fmt_opt(s.mean_f1)).unwrap();
    writeln!(out, "pooled_recall\t{}", fmt_opt(s.pooled.recall)).unwrap();
    writeln!(out, "pooled_precision\t{}", fmt_f(s.pooled.precision)).unwrap();
    writeln!(out, "pooled_f1\t{}", fmt_opt(s.pooled.f1)).unwrap();
    writeln!(out, "n_reps\t{}", s.n_reps).unwrap();
    writeln!(out, "n_failed\t{}", s.n_failed).unwrap();
    out
}

fn write_out(dir: &Path, name: &str, contents: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), contents)?;
    Ok(())
}

fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| MedZimError::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Runs the multi-taxon analysis on ingested files and writes results.tsv,
/// heatmap.tsv and run_manifest.json. Outputs are byte-identical for
/// identical config and seed, independent of the thread count.
pub fn analyze_command(cfg: &AnalyzeConfig) -> Result<Vec<String>> {
    let model_cfg = ModelConfig {
        include_interaction_indicator: cfg.include_interaction_indicator,
        include_interaction_linear: cfg.include_interaction_linear,
        mechanism: cfg.mechanism,
        ..ModelConfig::default()
    };
    model_cfg.validate()?;
    let (table, warnings) = ingest(&cfg.ra_path, &cfg.meta_path)?;
    let opts = ScreenOptions {
        cfg: model_cfg,
        opt: OptimizerSpec {
            seed: cfg.seed,
            ..OptimizerSpec::default()
        },
        contrast: cfg.contrast,
        fdr_target: cfg.fdr,
        ..ScreenOptions::default()
    };
    let res = with_pool(cfg.threads, || screen_all(&table, &opts))??;
    write_out(&cfg.out_dir, "results.tsv", &results_tsv(&res))?;
    write_out(&cfg.out_dir, "heatmap.tsv", &heatmap_tsv(&res, &table))?;
    // thread count intentionally left out: the manifest must be identical
    // whenever the numeric outputs are
    let manifest = json!({
        "command": "analyze",
        "ra": cfg.ra_path.display().to_string(),
        "meta": cfg.meta_path.display().to_string(),
        "mechanism": mechanism_json(&cfg.mechanism),
        "x1": cfg.contrast.x1,
        "x2": cfg.contrast.x2,
        "cde_m": cfg.contrast.m_controlled,
        "beta4": cfg.include_interaction_indicator,
        "beta5": cfg.include_interaction_linear,
        "fdr": cfg.fdr,
        "seed": cfg.seed,
        "version": env!("CARGO_PKG_VERSION"),
    });
    write_out(
        &cfg.out_dir,
        "run_manifest.json",
        &format!("{}\n", serde_json::to_string_pretty(&manifest).unwrap()),
    )?;
    let mut all = warnings;
    all.extend(res.warnings.iter().cloned());
    Ok(all)
}

/// Replicated single-taxon study; writes a bias/SE/coverage summary table.
pub fn simulate1_command(cfg: &Simulate1Config) -> Result<()> {
    let spec = Setting1Spec {
        mechanism: cfg.mechanism,
        ..match cfg.scenario {
            Scenario::LowAbundance => Setting1Spec::low_ra(cfg.n),
            Scenario::HighAbundance => Setting1Spec::high_ra(cfg.n),
        }
    };
    let model_cfg = ModelConfig {
        include_interaction_indicator: cfg.include_interaction_indicator,
        include_interaction_linear: cfg.include_interaction_linear,
        mechanism: cfg.mechanism,
        ..ModelConfig::default()
    };
    model_cfg.validate()?;
    let summary = with_pool(cfg.threads, || {
        run_replicates(
            &spec,
            cfg.reps,
            &model_cfg,
            &OptimizerSpec::default(),
            &cfg.contrast,
            cfg.seed,
        )
    })??;
    write_out(&cfg.out_dir, "summary.tsv", &summary_tsv(&summary))?;
    let manifest = json!({
        "command": "simulate1",
        "scenario": match cfg.scenario {
            Scenario::LowAbundance => "low",
            Scenario::HighAbundance => "high",
        },
        "n": cfg.n,
        "reps": cfg.reps,
        "mechanism": mechanism_json(&cfg.mechanism),
        "x1": cfg.contrast.x1,
        "x2": cfg.contrast.x2,
        "cde_m": cfg.contrast.m_controlled,
        "beta4": cfg.include_interaction_indicator,
        "beta5": cfg.include_interaction_linear,
        "seed": cfg.seed,
        "version": env!("CARGO_PKG_VERSION"),
    });
    write_out(
        &cfg.out_dir,
        "run_manifest.json",
        &format!("{}\n", serde_json::to_string_pretty(&manifest).unwrap()),
    )
}

/// Replicated compositional screening study; writes discovery metrics.
pub fn simulate2_command(cfg: &Simulate2Config) -> Result<()> {
    let spec = Setting2Spec::paper_defaults(cfg.n, cfg.taxa);
    let opts = ScreenOptions {
        cfg: ModelConfig {
            include_interaction_linear: false,
            ..ModelConfig::default()
        },
        fdr_target: cfg.fdr,
        ..ScreenOptions::default()
    };
    let summary = with_pool(cfg.threads, || {
        run_screen_replicates(&spec, cfg.reps, &opts, cfg.seed)
    })??;
    write_out(&cfg.out_dir, "metrics.tsv", &metrics_tsv(&summary))?;
    let manifest = json!({
        "command": "simulate2",
        "n": cfg.n,
        "taxa": cfg.taxa,
        "reps": cfg.reps,
        "fdr": cfg.fdr,
        "seed": cfg.seed,
        "version": env!("CARGO_PKG_VERSION"),
    });
    write_out(
        &cfg.out_dir,
        "run_manifest.json",
        &format!("{}\n", serde_json::to_string_pretty(&manifest).unwrap()),
    )
}

/// Dispatches one parsed command; returns warnings to print on stderr.
pub fn run(cfg: &RunConfig) -> Result<Vec<String>> {
    match cfg {
        RunConfig::Analyze(c) => analyze_command(c),
        RunConfig::Simulate1(c) => simulate1_command(c).map(|()| Vec::new()),
        RunConfig::Simulate2(c) => simulate2_command(c).map(|()| Vec::new()),
    }
}
