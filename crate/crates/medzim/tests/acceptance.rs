//! End-to-end acceptance gates. Each test prints one PASS line; a failing
//! criterion fails its test.

use medzim::cli::{
    analyze_command, simulate1_command, simulate2_command, write_taxa_table, AnalyzeConfig,
    Scenario, Simulate1Config, Simulate2Config,
};
use medzim::dist::log_beta_fn;
use medzim::effects::{
    effect_gradient, effect_value, nie, EffectKind, ExposureContrast,
};
use medzim::estimate::{fit, numerical_gradient, numerical_hessian, OptimizerSpec};
use medzim::model::{
    loglik_group2, loglik_total, outcome_mean, ModelConfig, ModelParams, SubjectRecord,
    ZeroMechanism,
};
use medzim::screen::{bh_adjust, screen_all, ScreenOptions};
use medzim::simulate::{
    default_library_pool, gen_setting1, gen_setting2, run_replicates, run_screen_replicates,
    Setting1Spec, Setting2Spec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta as BetaDist, Distribution};

fn random_params(rng: &mut ChaCha8Rng) -> ModelParams {
    ModelParams {
        beta: [
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0),
        ],
        delta_err: rng.gen_range(0.5..1.5),
        alpha0: rng.gen_range(-7.0..-1.0),
        alpha1: rng.gen_range(-1.0..1.0),
        phi: rng.gen_range(2.0..200.0),
        gamma0: rng.gen_range(-2.0..1.0),
        gamma1: rng.gen_range(-1.0..1.0),
    }
}

/// Table 1 low-abundance truths, n=100, 20 replicates: mediation-effect
/// bias within 15% and NIE coverage in [80, 100].
#[test]
fn criterion_1_low_abundance_bias_and_coverage() {
    let spec = Setting1Spec::low_ra(100);
    let cfg = ModelConfig {
        include_interaction_linear: false,
        ..ModelConfig::default()
    };
    let summary = run_replicates(
        &spec,
        20,
        &cfg,
        &OptimizerSpec::default(),
        &ExposureContrast::default(),
        4,
    )
    .unwrap();
    assert!(
        summary.n_failed <= 2,
        "{} of 20 replicates failed to fit",
        summary.n_failed
    );
    for label in ["NIE", "NIE1", "NIE2"] {
        let row = summary.rows.iter().find(|r| r.name == label).unwrap();
        let bp = row.bias_pct.unwrap();
        assert!(bp.abs() <= 15.0, "{label} bias {bp:.2}%");
        if label == "NIE" {
            assert!(
                (80.0..=100.0).contains(&row.coverage_pct),
                "NIE coverage {:.1}%",
                row.coverage_pct
            );
        }
    }
    println!("criterion 1 PASS: low-abundance bias within 15% and NIE coverage in [80,100]");
}

/// Table 1 high-abundance truths: the closed-form NIE equals 9.85 +- 0.01.
#[test]
fn criterion_2_high_abundance_true_nie() {
    let p = Setting1Spec::high_ra(2).true_params;
    let value = nie(&p, &ExposureContrast::default());
    assert!((value - 9.85).abs() <= 0.01, "NIE {value}");
    println!("criterion 2 PASS: high-abundance true NIE {value:.4} within 9.85 +- 0.01");
}

/// Closed-form NIE1/NIE2/NDE match million-draw Monte-Carlo estimates of
/// their counterfactual definitions within 3 standard errors.
#[test]
fn criterion_3_effects_match_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let c = ExposureContrast::default();
    let n = 1_000_000usize;
    for trial in 0..10 {
        let p = random_params(&mut rng);
        let draw_m = |x: f64, rng: &mut ChaCha8Rng| {
            if rng.gen::<f64>() < p.delta_at(x) {
                0.0
            } else {
                let mu = p.mu_at(x);
                BetaDist::new(mu * p.phi, (1.0 - mu) * p.phi)
                    .unwrap()
                    .sample(rng)
            }
        };
        let mut sums = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        for _ in 0..n {
            let m1 = draw_m(c.x1, &mut rng);
            let m2 = draw_m(c.x2, &mut rng);
            let draws = [
                // numeric component of the indirect effect
                (p.beta[1] + p.beta[5] * c.x2) * (m2 - m1),
                // presence component
                (p.beta[2] + p.beta[4] * c.x2)
                    * ((m2 > 0.0) as i32 - (m1 > 0.0) as i32) as f64,
                // direct effect holding the mediator at its x1 law
                outcome_mean(m1, m1 > 0.0, c.x2, &p) - outcome_mean(m1, m1 > 0.0, c.x1, &p),
            ];
            for (k, d) in draws.iter().enumerate() {
                sums[k] += d;
                sq[k] += d * d;
            }
        }
        let kinds = [EffectKind::Nie1, EffectKind::Nie2, EffectKind::Nde];
        for (k, kind) in kinds.iter().enumerate() {
            let mc = sums[k] / n as f64;
            let var = (sq[k] / n as f64 - mc * mc).max(0.0);
            let se = (var / n as f64).sqrt();
            let closed = effect_value(*kind, &p, &c).unwrap();
            assert!(
                (closed - mc).abs() <= 3.0 * se + 1e-9,
                "trial {trial} {}: closed {closed} vs MC {mc} (se {se})",
                kind.label()
            );
        }
    }
    println!("criterion 3 PASS: NIE1/NIE2/NDE match 1e6-draw Monte-Carlo within 3 SE");
}

/// Brute-force midpoint Riemann likelihood for an observed zero. When the
/// Beta shape a < 1 the sum runs in the substituted variable t = m^a, where
/// the integrand is bounded.
fn group2_oracle(rec: &SubjectRecord, p: &ModelParams, mech: &ZeroMechanism, n: usize) -> f64 {
    let x = rec.x;
    let delta = p.delta_at(x);
    let mu = p.mu_at(x);
    let (a, b) = (mu * p.phi, (1.0 - mu) * p.phi);
    let gauss = |mean: f64| {
        (-(rec.y - mean).powi(2) / (2.0 * p.delta_err * p.delta_err)).exp()
            / ((2.0 * std::f64::consts::PI).sqrt() * p.delta_err)
    };
    let term0 = delta * gauss(p.beta[0] + p.beta[3] * x);
    // for the exponential weight, truncate to the decay layer so the
    // uniform grid resolves it; the neglected tail is ~exp(-60) relative
    let (upper, weight): (f64, Box<dyn Fn(f64) -> f64>) = match *mech {
        ZeroMechanism::Lod => ((1.0f64).min(1.0 / rec.l), Box::new(|_| 1.0)),
        ZeroMechanism::Exponential { eta } => {
            let c = eta * rec.l;
            (
                ((a + 60.0) / c).min(1.0),
                Box::new(move |m: f64| (-c * m).exp()),
            )
        }
    };
    let rest = |m: f64| (1.0 - m).powf(b - 1.0) * weight(m) * gauss(outcome_mean(m, true, x, p));
    let integral = if a < 1.0 {
        let t_up = upper.powf(a);
        let h = t_up / n as f64;
        (0..n)
            .map(|i| {
                let t = (i as f64 + 0.5) * h;
                let m = t.powf(1.0 / a);
                // the m^(a-1) factor cancels the substitution Jacobian
                rest(m) / a
            })
            .sum::<f64>()
            * h
    } else {
        let h = upper / n as f64;
        (0..n)
            .map(|i| {
                let m = (i as f64 + 0.5) * h;
                m.powf(a - 1.0) * rest(m)
            })
            .sum::<f64>()
            * h
    };
    let beta_norm = log_beta_fn(a, b).unwrap().exp();
    (term0 + (1.0 - delta) / beta_norm * integral).ln()
}

/// loglik_group2 agrees with a 1e6-point midpoint Riemann sum within 1e-7
/// relative on 100 random record/parameter pairs.
#[test]
fn criterion_4_quadrature_matches_riemann_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pool = default_library_pool();
    let mut n_singular = 0usize;
    for trial in 0..100 {
        let p = random_params(&mut rng);
        let mech = if trial % 2 == 0 {
            ZeroMechanism::Lod
        } else {
            ZeroMechanism::Exponential {
                eta: rng.gen_range(0.5..2.0),
            }
        };
        let x = f64::from(rng.gen_range(0..2));
        let l = pool[rng.gen_range(0..pool.len())];
        // outcome near one of the branch means so neither mass underflows
        let mean = if rng.gen_bool(0.5) {
            p.beta[0] + p.beta[3] * x
        } else {
            outcome_mean(2.0 * p.mu_at(x), true, x, &p)
        };
        let y = mean + p.delta_err * rng.gen_range(-2.0..2.0);
        let rec = SubjectRecord::new(y, 0.0, l, x).unwrap();
        if p.mu_at(x) * p.phi < 1.0 {
            n_singular += 1;
        }
        let cfg = ModelConfig {
            mechanism: mech,
            ..ModelConfig::default()
        };
        let got = loglik_group2(&rec, &p, &cfg).unwrap();
        let want = group2_oracle(&rec, &p, &mech, 1_000_000);
        assert!(
            (got - want).abs() <= 1e-7 * want.abs().max(1.0),
            "trial {trial}: {got} vs oracle {want}"
        );
    }
    assert!(n_singular >= 10, "only {n_singular} singular cases drawn");
    println!(
        "criterion 4 PASS: group-2 likelihood matches 1e6-point Riemann oracle \
         ({n_singular}/100 cases with Beta shape below 1)"
    );
}

/// Analytic effect gradients match finite differences; the numerical
/// Hessian is symmetric; covariance times information is the identity.
#[test]
fn criterion_5_gradients_hessian_covariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let c = ExposureContrast::default()
        .with_controlled_mediator(0.3)
        .unwrap();
    for trial in 0..50 {
        let p = random_params(&mut rng);
        let flat = p.to_flat();
        for kind in EffectKind::ALL {
            let ga = effect_gradient(kind, &p, &c).unwrap();
            let f = |v: &[f64]| {
                let arr: [f64; 12] = v.try_into().unwrap();
                effect_value(kind, &ModelParams::from_flat(&arr), &c).unwrap()
            };
            let gn = numerical_gradient(&f, &flat, 1e-6).unwrap();
            for j in 0..12 {
                assert!(
                    (ga[j] - gn[j]).abs() <= 1e-6 * ga[j].abs().max(1.0),
                    "trial {trial} {} coord {j}: {} vs {}",
                    kind.label(),
                    ga[j],
                    gn[j]
                );
            }
        }
    }

    let spec = Setting1Spec::low_ra(150);
    let data = gen_setting1(&spec, &mut ChaCha8Rng::seed_from_u64(55));
    let cfg = ModelConfig {
        include_interaction_linear: false,
        ..ModelConfig::default()
    };
    // Hessian symmetry of the log-likelihood at the truth
    let free = cfg.free_indices();
    let truth_flat = spec.true_params.to_flat();
    let obj = |v: &[f64]| {
        let mut flat = truth_flat;
        for (&i, &val) in free.iter().zip(v) {
            flat[i] = val;
        }
        loglik_total(&data, &ModelParams::from_flat(&flat), &cfg).unwrap_or(f64::NAN)
    };
    let at: Vec<f64> = free.iter().map(|&i| truth_flat[i]).collect();
    let h = numerical_hessian(&obj, &at);
    let scale = h.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    let mut asym = 0.0f64;
    for i in 0..h.nrows() {
        for j in 0..h.ncols() {
            asym = asym.max((h[(i, j)] - h[(j, i)]).abs());
        }
    }
    assert!(asym <= 1e-6 * scale, "asymmetry {asym} at scale {scale}");

    // covariance inverts the observed information
    let fitted = fit(&data, &cfg, &OptimizerSpec::default()).unwrap();
    let cov = fitted.cov_hat.as_ref().expect("covariance available");
    let prod = cov * &fitted.info_obs;
    let eye = nalgebra::DMatrix::<f64>::identity(prod.nrows(), prod.ncols());
    let dev = (&prod - &eye).iter().fold(0.0f64, |s, v| s.max(v.abs()));
    assert!(dev <= 1e-6, "cov * info deviates from identity by {dev}");
    println!(
        "criterion 5 PASS: effect gradients, Hessian symmetry and cov*info checks within 1e-6"
    );
}

/// Setting-2 screening at the published truths (10 taxa, n=300, 20
/// replicates, 20% FDR): recall and precision at least 0.75.
#[test]
fn criterion_6_screening_recall_precision() {
    let spec = Setting2Spec::paper_defaults(300, 10);
    let opts = ScreenOptions {
        cfg: ModelConfig {
            include_interaction_linear: false,
            ..ModelConfig::default()
        },
        fdr_target: 0.2,
        ..ScreenOptions::default()
    };
    let s = run_screen_replicates(&spec, 20, &opts, 6).unwrap();
    assert!(s.n_failed <= 2, "{} of 20 replicates failed", s.n_failed);
    let recall = s.mean_recall.unwrap();
    assert!(recall >= 0.75, "mean recall {recall}");
    assert!(s.mean_precision >= 0.75, "mean precision {}", s.mean_precision);
    println!(
        "criterion 6 PASS: screening recall {recall:.3}, precision {:.3} at 20% FDR",
        s.mean_precision
    );
}

/// Step-up adjustment matches hand-computed tables exactly, and the
/// realized false discovery proportion under a global null stays below
/// 0.25 at target 0.2.
#[test]
fn criterion_7_bh_tables_and_global_null_fdr() {
    let tables: Vec<(Vec<f64>, Vec<f64>)> = vec![
        (vec![0.01, 0.02, 0.03], vec![0.03, 0.03, 0.03]),
        (
            vec![0.04, 0.001, 0.9, 0.02, 0.2],
            vec![0.2 / 3.0, 0.005, 0.9, 0.05, 0.25],
        ),
        (
            vec![0.011, 0.02, 0.035, 0.045, 0.89, 0.05, 0.15],
            vec![0.07, 0.07, 0.07, 0.07, 0.89, 0.07, 0.175],
        ),
        (
            vec![0.005, 0.009, 0.019, 0.022, 0.051, 0.101, 0.361, 0.387],
            vec![
                0.036,
                0.036,
                0.044,
                0.044,
                8.0 * 0.051 / 5.0,
                8.0 * 0.101 / 6.0,
                0.387,
                0.387,
            ],
        ),
        (vec![0.0, 0.5, 1.0], vec![0.0, 0.75, 1.0]),
        (vec![0.25, 0.75], vec![0.5, 0.75]),
        (
            vec![0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1],
            vec![0.8; 8],
        ),
        (vec![0.5], vec![0.5]),
        (vec![1.0, 1.0, 1.0, 1.0], vec![1.0; 4]),
        (vec![0.02, 0.01], vec![0.02, 0.02]),
    ];
    for (p, want) in &tables {
        let q = bh_adjust(p);
        for (a, b) in q.iter().zip(want) {
            assert!((a - b).abs() <= 1e-12, "{p:?}: got {q:?}, want {want:?}");
        }
    }

    // global null: the outcome ignores every taxon
    let mut null_spec = Setting2Spec::paper_defaults(120, 6);
    null_spec.outcome_betas = [0.5, 0.0, 0.0, 1.0, 0.0];
    let opts = ScreenOptions {
        cfg: ModelConfig {
            include_interaction_linear: false,
            ..ModelConfig::default()
        },
        fdr_target: 0.2,
        ..ScreenOptions::default()
    };
    let n_reps = 50;
    let mut fdp_sum = 0.0;
    for rep in 0..n_reps {
        let mut rng = ChaCha8Rng::seed_from_u64(7_000 + rep);
        let (table, _) = gen_setting2(&null_spec, &mut rng);
        let res = screen_all(&table, &opts).unwrap();
        let flagged = res.taxa.iter().filter(|t| t.sig_nie1).count();
        // every rejection is false under the null
        fdp_sum += if flagged > 0 { 1.0 } else { 0.0 };
    }
    let fdr = fdp_sum / n_reps as f64;
    assert!(fdr <= 0.25, "empirical FDR {fdr}");
    println!("criterion 7 PASS: BH tables exact, global-null empirical FDR {fdr:.3} <= 0.25");
}

/// Identical config and seed give byte-identical outputs at 1 and 8
/// worker threads for every subcommand.
#[test]
fn criterion_8_outputs_are_thread_count_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let ra = dir.path().join("ra.tsv");
    let meta = dir.path().join("meta.tsv");
    let (table, _) = gen_setting2(
        &Setting2Spec::paper_defaults(100, 4),
        &mut ChaCha8Rng::seed_from_u64(88),
    );
    write_taxa_table(&table, &ra, &meta).unwrap();

    let compare = |a: &std::path::Path, b: &std::path::Path, names: &[&str]| {
        for name in names {
            let fa = std::fs::read(a.join(name)).unwrap();
            let fb = std::fs::read(b.join(name)).unwrap();
            assert_eq!(fa, fb, "{name} differs between thread counts");
        }
    };

    let analyze = |threads: usize, out: std::path::PathBuf| {
        analyze_command(&AnalyzeConfig {
            ra_path: ra.clone(),
            meta_path: meta.clone(),
            mechanism: ZeroMechanism::Lod,
            contrast: ExposureContrast::default(),
            include_interaction_indicator: true,
            include_interaction_linear: false,
            fdr: 0.2,
            seed: 8,
            threads: Some(threads),
            out_dir: out,
        })
        .unwrap();
    };
    analyze(1, dir.path().join("a1"));
    analyze(8, dir.path().join("a8"));
    compare(
        &dir.path().join("a1"),
        &dir.path().join("a8"),
        &["results.tsv", "heatmap.tsv", "run_manifest.json"],
    );

    let sim1 = |threads: usize, out: std::path::PathBuf| {
        simulate1_command(&Simulate1Config {
            scenario: Scenario::LowAbundance,
            n: 60,
            reps: 2,
            mechanism: ZeroMechanism::Lod,
            contrast: ExposureContrast::default(),
            include_interaction_indicator: true,
            include_interaction_linear: false,
            seed: 8,
            threads: Some(threads),
            out_dir: out,
        })
        .unwrap();
    };
    sim1(1, dir.path().join("s1_1"));
    sim1(8, dir.path().join("s1_8"));
    compare(
        &dir.path().join("s1_1"),
        &dir.path().join("s1_8"),
        &["summary.tsv", "run_manifest.json"],
    );

    let sim2 = |threads: usize, out: std::path::PathBuf| {
        simulate2_command(&Simulate2Config {
            n: 100,
            taxa: 4,
            reps: 2,
            fdr: 0.2,
            seed: 8,
            threads: Some(threads),
            out_dir: out,
        })
        .unwrap();
    };
    sim2(1, dir.path().join("s2_1"));
    sim2(8, dir.path().join("s2_8"));
    compare(
        &dir.path().join("s2_1"),
        &dir.path().join("s2_8"),
        &["metrics.tsv", "run_manifest.json"],
    );
    println!("criterion 8 PASS: analyze and simulate outputs byte-identical at 1 and 8 threads");
}
