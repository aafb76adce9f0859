//! End-to-end behavior of the balanced Q-learning pipeline on synthetic
//! trials: contrast recovery, structural zeros, determinism, cross-fit
//! hygiene, and deployment semantics.

use bql_core::bql::{
    fit_bql, fit_bql_with_artifacts, fit_stage2_assessment, fit_stage2_treatment, BqlConfig,
    Stage2Fit,
};
use bql_core::data::{subvector, AssessmentCatalog, CostSpec, Dataset, FeatureIndexSet, Trajectory};
use bql_core::deploy::{deploy, CountingOracle, StaticOracle};
use bql_core::nuisance::LearnerSpec;
use bql_core::seed::rng_for;
use bql_core::synth::{generate, model_preset, run_on_simulator, GenerativeSpec, SimulatedSubject};
use rand::Rng;
use rand_distr::StandardNormal;

fn ridge_cfg(seed: u64) -> BqlConfig {
    BqlConfig::ridge_only(seed)
}

/// Ridge for the nearly-linear outcome regression, a deep forest for the
/// strongly logistic propensity: linear nuisances alone carry real bias on
/// the synthetic stage-2 propensity.
fn mixed_cfg(seed: u64) -> BqlConfig {
    let forest = LearnerSpec::RandomForest(bql_core::nuisance::ForestParams {
        trees: 300,
        max_depth: 14,
        min_leaf: 10,
        feature_fraction: Some(0.5),
    });
    BqlConfig { g2: forest, k_folds: 5, ..BqlConfig::ridge_only(seed) }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A two-candidate catalog over the preset-1 dimensions, but with the
/// trivial stage-1 choice.
fn preset1() -> (GenerativeSpec, AssessmentCatalog, CostSpec) {
    let p = model_preset(1).unwrap();
    (p.generative, p.catalog, p.costs)
}

#[test]
fn null_second_stage_effect_gives_small_contrast() {
    // Outcome never depends on a2: the fitted stage-2 contrast should sit
    // within noise of zero.
    let (mut spec, catalog, costs) = preset1();
    spec.beta2 = vec![0.0; 11];
    spec.beta3 = vec![0.0; 11];
    let d = generate(&spec, 5000, 1).unwrap();
    // With both interaction blocks null the outcome regression is exactly
    // linear in the design, so the ridge outcome nuisance is well-specified
    // and only Monte Carlo noise remains.
    let fit = fit_stage2_treatment(&d, &catalog, &costs, &mixed_cfg(2)).unwrap();
    for (j, c) in fit.alpha_bar.iter().enumerate() {
        assert!(c.abs() < 0.08, "coefficient {j} = {c} too large for a null effect");
    }
}

#[test]
fn stage2_contrast_recovers_the_outcome_interaction_pattern() {
    let (spec, catalog, costs) = preset1();
    let d = generate(&spec, 20_000, 3).unwrap();
    let fit = fit_stage2_treatment(&d, &catalog, &costs, &mixed_cfg(4)).unwrap();
    // Design layout (s1[5], s2[5], a1, 1); the s2 block must reproduce the
    // interaction coefficients (0, 1, 0.5, 0, 1) and everything else stay
    // small. The tolerance reflects the nuisance-product bias floor of the
    // available learners at this sample size (measured across seeds).
    let expected_s2 = [0.0, 1.0, 0.5, 0.0, 1.0];
    for (j, want) in expected_s2.iter().enumerate() {
        let got = fit.alpha_bar[5 + j];
        assert!((got - want).abs() < 0.12, "s2 coefficient {j}: {got} vs {want}");
    }
    for j in 0..5 {
        assert!(fit.alpha_bar[j].abs() < 0.12, "s1 coefficient {j} should vanish");
    }
}

#[test]
fn full_information_projection_reproduces_the_contrast() {
    // Projecting the full-design contrast (a1 fixed) onto the full assessed
    // history plus intercept is exact: the restricted rule and the dense
    // rule agree pointwise.
    let (spec, catalog, costs) = preset1();
    let d = generate(&spec, 800, 5).unwrap();
    let cfg = ridge_cfg(6);
    let fit = fit_stage2_treatment(&d, &catalog, &costs, &cfg).unwrap();
    let j2f = catalog.j2_full_idx();
    for (i, t) in d.trajectories.iter().take(50).enumerate() {
        for a1 in [0.0, 1.0] {
            let full_design = [t.s1.clone(), t.s2.clone(), vec![a1, 1.0]].concat();
            let full_value = dot(&full_design, &fit.alpha_bar);
            let restricted = [
                subvector(&t.s1, &catalog.l1).unwrap(),
                subvector(&t.s1, &catalog.cand1[0]).unwrap(),
                subvector(&t.s2, &catalog.l2).unwrap(),
                subvector(&t.s2, &catalog.cand2[j2f]).unwrap(),
                vec![1.0],
            ]
            .concat();
            let restricted_value = dot(&restricted, &fit.alpha[0][a1 as usize][j2f]);
            assert!(
                (full_value - restricted_value).abs() < 1e-6,
                "row {i}: projection gap {} vs {}",
                full_value,
                restricted_value
            );
        }
    }
}

#[test]
fn baseline_contrasts_are_exact_zeros() {
    let p = model_preset(2).unwrap();
    let mut costs = p.costs.clone();
    costs.lambda = 1.0;
    let d = generate(&p.generative, 400, 7).unwrap();
    let regime = fit_bql(&d, &p.catalog, &costs, &ridge_cfg(8)).unwrap();
    let j1f = p.catalog.j1_full_idx();
    let j2f = p.catalog.j2_full_idx();
    for j1 in 0..p.catalog.cand1.len() {
        for a1 in 0..2 {
            assert!(regime.beta[j1][a1][j2f].iter().all(|c| *c == 0.0));
        }
        assert!(regime.beta_bar[j1][j2f].iter().all(|c| *c == 0.0));
    }
    assert!(regime.delta[j1f].iter().all(|c| *c == 0.0));
}

#[test]
fn lambda_enters_only_through_costs() {
    let (spec, catalog, costs) = preset1();
    let zero = CostSpec { lambda: 0.0, ..CostSpec::zero(&catalog) };
    let seven = CostSpec { lambda: 7.0, ..CostSpec::zero(&catalog) };
    let _ = costs;
    let d = generate(&spec, 300, 9).unwrap();
    let cfg = ridge_cfg(10);
    let a = fit_bql(&d, &catalog, &zero, &cfg).unwrap();
    let b = fit_bql(&d, &catalog, &seven, &cfg).unwrap();
    assert_eq!(a.alpha_bar, b.alpha_bar);
    assert_eq!(a.delta, b.delta);
    assert_eq!(a.gamma, b.gamma);
}

#[test]
fn fit_is_bit_identical_across_runs() {
    let p = model_preset(2).unwrap();
    let d = generate(&p.generative, 300, 11).unwrap();
    let cfg = BqlConfig {
        f2: LearnerSpec::default(), // exercise the super-learner path too
        ..ridge_cfg(12)
    };
    let a = fit_bql(&d, &p.catalog, &p.costs, &cfg).unwrap();
    let b = fit_bql(&d, &p.catalog, &p.costs, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn crossfit_quantities_ignore_heldout_rows() {
    // Inner quantities trained without fold k must not change when fold k
    // rows are corrupted.
    let (spec, catalog, costs) = preset1();
    let d = generate(&spec, 240, 13).unwrap();
    let cfg = ridge_cfg(14);
    let (_, art_before) = fit_bql_with_artifacts(&d, &catalog, &costs, &cfg).unwrap();
    let mut mutated = d.clone();
    let fold0: Vec<usize> = art_before.plan.fold_rows(0);
    for &i in &fold0 {
        mutated.trajectories[i].y += 50.0;
    }
    let (_, art_after) = fit_bql_with_artifacts(&mutated, &catalog, &costs, &cfg).unwrap();
    // Fold plans depend only on (n, k, seed).
    assert_eq!(art_before.plan, art_after.plan);
    for &i in &fold0 {
        assert_eq!(
            art_before.f2_oof[i].to_bits(),
            art_after.f2_oof[i].to_bits(),
            "out-of-fold outcome nuisance for a fold-0 row moved"
        );
        assert_eq!(art_before.f1_oof[0][i].to_bits(), art_after.f1_oof[0][i].to_bits());
    }
}

#[test]
fn too_few_rows_for_inner_crossfit_names_the_minimum() {
    // 17 rows split 16 ways leaves a 15-row complement, too small to re-run
    // the inner 16-fold split. Arms are balanced so positivity passes.
    let (_, catalog, costs) = preset1();
    let mut rng = rng_for(15, &[]);
    let rows: Vec<Trajectory> = (0..17)
        .map(|i| Trajectory {
            s1: (0..5).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
            a1: (i % 2) as f64,
            s2: (0..5).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
            a2: ((i / 2) % 2) as f64,
            y: rng.sample::<f64, _>(StandardNormal),
        })
        .collect();
    let d = Dataset::new(rows, 5, 5);
    let cfg = BqlConfig { k_folds: 16, ..ridge_cfg(16) };
    let err = fit_bql(&d, &catalog, &costs, &cfg).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("at least"), "unexpected error: {msg}");
}

#[test]
fn fold_missing_an_arm_is_a_config_error() {
    let (_, catalog, costs) = preset1();
    // Construct 12 rows where arm a2 = 1 appears once: some training
    // complement will miss it.
    let mut rng = rng_for(17, &[]);
    let mut rows = Vec::new();
    for i in 0..12 {
        let s1: Vec<f64> = (0..5).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let s2: Vec<f64> = (0..5).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        rows.push(Trajectory {
            s1,
            a1: (i % 2) as f64,
            s2,
            a2: f64::from(i == 0),
            y: rng.sample::<f64, _>(StandardNormal),
        });
    }
    let d = Dataset::new(rows, 5, 5);
    let err = fit_bql(&d, &catalog, &costs, &ridge_cfg(18)).unwrap_err();
    assert!(matches!(err, bql_core::Error::Config(_)), "got {err:?}");
}

#[test]
fn stage1_null_effect_gives_small_contrast() {
    // The first treatment influences nothing: no direct outcome term, no
    // stage-2 coefficient picks up the s2 shift, no interaction.
    let (mut spec, catalog, costs) = preset1();
    spec.beta1 = vec![1.0, 1.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    spec.beta2 = vec![0.0; 11];
    spec.beta3 = vec![0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let d = generate(&spec, 5000, 19).unwrap();
    let regime = fit_bql(&d, &catalog, &costs, &ridge_cfg(20)).unwrap();
    for c in &regime.gamma_bar[0] {
        assert!(c.abs() < 0.12, "stage-1 contrast coefficient {c} too large");
    }
}

#[test]
fn stage1_contrast_loads_on_the_heterogeneity_drivers() {
    let p = model_preset(2).unwrap();
    let d = generate(&p.generative, 20_000, 21).unwrap();
    let regime = fit_bql(&d, &p.catalog, &p.costs, &ridge_cfg(22)).unwrap();
    // Informative stage-1 covariates are {1, 3, 4}; {2, 5} are noise.
    // gamma over (s1[5], 1) for the full candidate.
    let j1f = p.catalog.j1_full_idx();
    let g = &regime.gamma[j1f];
    let informative = [g[0].abs(), g[2].abs(), g[3].abs()];
    let noise = [g[1].abs(), g[4].abs()];
    let min_inf = informative.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_noise = noise.iter().cloned().fold(0.0_f64, f64::max);
    assert!(
        min_inf > 3.0 * max_noise.max(0.02),
        "informative {informative:?} vs noise {noise:?}"
    );
}

#[test]
fn regime_deployment_matches_hand_computation() {
    let p = model_preset(2).unwrap();
    let d = generate(&p.generative, 600, 23).unwrap();
    let mut costs = p.costs.clone();
    costs.lambda = 0.5;
    let regime = fit_bql(&d, &p.catalog, &costs, &ridge_cfg(24)).unwrap();
    let subject = &d.trajectories[5];
    let mut oracle = StaticOracle { s1: subject.s1.clone(), s2: subject.s2.clone() };
    let record = deploy(&regime, &mut oracle).unwrap();

    // Recompute each decision directly from the coefficient families.
    let s_l1 = subvector(&subject.s1, &p.catalog.l1).unwrap();
    let design_l1 = [s_l1.clone(), vec![1.0]].concat();
    let scores1: Vec<f64> = regime.delta.iter().map(|c| dot(&design_l1, c)).collect();
    let j1 = scores1
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
        .unwrap()
        .0;
    assert_eq!(record.j1_idx, j1);

    let s_j1 = subvector(&subject.s1, &p.catalog.cand1[j1]).unwrap();
    let design_t1 = [s_l1.clone(), s_j1.clone(), vec![1.0]].concat();
    let a1 = f64::from(dot(&design_t1, &regime.gamma[j1]) > 0.0);
    assert_eq!(record.a1, a1);

    let s_l2 = subvector(&subject.s2, &p.catalog.l2).unwrap();
    let design_l2 = [s_l1.clone(), s_j1.clone(), s_l2.clone(), vec![1.0]].concat();
    let scores2: Vec<f64> = regime.beta[j1][a1 as usize]
        .iter()
        .map(|c| dot(&design_l2, c))
        .collect();
    let j2 = scores2
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
        .unwrap()
        .0;
    assert_eq!(record.j2_idx, j2);

    let s_j2 = subvector(&subject.s2, &p.catalog.cand2[j2]).unwrap();
    let design_t2 = [s_l1, s_j1, s_l2, s_j2, vec![1.0]].concat();
    let a2 = f64::from(dot(&design_t2, &regime.alpha[j1][a1 as usize][j2]) > 0.0);
    assert_eq!(record.a2, a2);
}

#[test]
fn deployment_requests_only_permitted_covariates() {
    let p = model_preset(2).unwrap();
    let d = generate(&p.generative, 400, 25).unwrap();
    let regime = fit_bql(&d, &p.catalog, &p.costs, &ridge_cfg(26)).unwrap();
    let mut rng = rng_for(27, &[]);
    for _ in 0..20 {
        let subject = SimulatedSubject::draw(&p.generative, &mut rng);
        let mut oracle = CountingOracle::new(subject);
        let record = deploy(&regime, &mut oracle).unwrap();
        let allowed1 = p.catalog.l1.union(&record.j1);
        for req in &oracle.stage1_requests {
            assert!(req.is_subset_of(&allowed1), "requested {req} beyond {allowed1}");
        }
        let allowed2 = p.catalog.l2.union(&record.j2);
        for req in &oracle.stage2_requests {
            assert!(req.is_subset_of(&allowed2));
        }
        assert_eq!(
            oracle.stage2_index_count(),
            p.catalog.l2.len() + record.j2.len(),
            "stage-2 pulls must be baseline plus the chosen set"
        );
    }
}

#[test]
fn trivial_stage1_catalog_pulls_only_the_baseline() {
    // With a single empty stage-1 candidate, nothing beyond the baseline
    // covariates is ever requested before the first treatment.
    let (spec, catalog, costs) = preset1();
    let d = generate(&spec, 300, 27).unwrap();
    let regime = fit_bql(&d, &catalog, &costs, &ridge_cfg(28)).unwrap();
    let mut rng = rng_for(29, &[]);
    let subject = SimulatedSubject::draw(&spec, &mut rng);
    let mut oracle = CountingOracle::new(subject);
    deploy(&regime, &mut oracle).unwrap();
    let pulled1: usize = oracle.stage1_requests.iter().map(|s| s.len()).sum();
    assert_eq!(pulled1, catalog.l1.len());
}

#[test]
fn positive_scaling_leaves_decisions_unchanged() {
    let p = model_preset(2).unwrap();
    let d = generate(&p.generative, 400, 29).unwrap();
    let mut costs = p.costs.clone();
    costs.lambda = 1.0;
    let regime = fit_bql(&d, &p.catalog, &costs, &ridge_cfg(30)).unwrap();
    let mut scaled = regime.clone();
    let c = 37.5;
    let scale_family = |f: &mut Vec<Vec<f64>>| {
        f.iter_mut().flatten().for_each(|v| *v *= c);
    };
    scaled.alpha_bar.iter_mut().for_each(|v| *v *= c);
    for j1 in scaled.alpha.iter_mut().chain(scaled.beta.iter_mut()) {
        for a1 in j1.iter_mut() {
            scale_family(a1);
        }
    }
    for fam in scaled.beta_bar.iter_mut() {
        scale_family(fam);
    }
    scale_family(&mut scaled.gamma_bar);
    scale_family(&mut scaled.gamma);
    scale_family(&mut scaled.delta);

    for i in 0..100 {
        let t = &d.trajectories[i];
        let mut o1 = StaticOracle { s1: t.s1.clone(), s2: t.s2.clone() };
        let mut o2 = StaticOracle { s1: t.s1.clone(), s2: t.s2.clone() };
        let r1 = deploy(&regime, &mut o1).unwrap();
        let r2 = deploy(&scaled, &mut o2).unwrap();
        assert_eq!(
            (r1.j1_idx, r1.a1, r1.j2_idx, r1.a2),
            (r2.j1_idx, r2.a1, r2.j2_idx, r2.a2)
        );
    }
}

#[test]
fn expensive_candidates_lose_at_large_lambda() {
    // With a heavy trade-off the cheap three-covariate set should dominate
    // the richer but costly four-covariate set.
    let (spec, catalog, costs) = preset1();
    let mut costs = costs;
    costs.lambda = 4.0;
    let d = generate(&spec, 2000, 31).unwrap();
    let regime = fit_bql(&d, &catalog, &costs, &ridge_cfg(32)).unwrap();
    let results = run_on_simulator(&spec, &regime, &costs, 500, 33).unwrap();
    let freq_cheap = results.iter().filter(|r| r.record.j2_idx == 0).count() as f64 / 500.0;
    assert!(freq_cheap > 0.5, "cheap candidate frequency {freq_cheap}");
}

#[test]
fn full_stage1_candidate_projection_is_the_identity() {
    // For preset 1 the baseline covers everything, so the full stage-1
    // candidate is empty and the restricted design equals the full one:
    // the projection must reproduce the unrestricted contrast.
    let (spec, catalog, costs) = preset1();
    let d = generate(&spec, 400, 37).unwrap();
    let regime = fit_bql(&d, &catalog, &costs, &ridge_cfg(38)).unwrap();
    let j1f = catalog.j1_full_idx();
    for (a, b) in regime.gamma[j1f].iter().zip(&regime.gamma_bar[j1f]) {
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }
}

#[test]
fn uninformative_free_assessment_scores_near_zero() {
    // Stage-1 candidates: the empty set versus a full set of covariates
    // that never enter the outcome. With the full assessment free, the
    // empty set's contrast should vanish.
    let p = 4;
    let spec = GenerativeSpec {
        p,
        alpha1: vec![0.0; p],
        alpha2: vec![0.0; 2 * p + 1],
        // Only the baseline stage-1 covariates (1, 2) matter.
        beta1: vec![1.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        beta2: vec![0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        beta3: vec![0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        noise_sd_y: 0.5,
    };
    let catalog = AssessmentCatalog::new(
        p,
        p,
        FeatureIndexSet::new(vec![1, 2]),
        FeatureIndexSet::new(vec![1, 2]),
        vec![FeatureIndexSet::empty(), FeatureIndexSet::new(vec![3, 4])],
        vec![FeatureIndexSet::new(vec![3, 4])],
    )
    .unwrap();
    let costs = CostSpec::zero(&catalog);
    let d = generate(&spec, 5000, 39).unwrap();
    let regime = fit_bql(&d, &catalog, &costs, &ridge_cfg(40)).unwrap();
    // The empty candidate's contrast against the (free, uninformative)
    // full set: intercept within noise of zero.
    let intercept = *regime.delta[0].last().unwrap();
    assert!(intercept.abs() < 0.12, "empty-set contrast intercept {intercept}");
}

#[test]
fn stage2_fit_bundle_is_consistent() {
    let p = model_preset(2).unwrap();
    let d = generate(&p.generative, 300, 35).unwrap();
    let cfg = ridge_cfg(36);
    let t2 = fit_stage2_treatment(&d, &p.catalog, &p.costs, &cfg).unwrap();
    let a2 = fit_stage2_assessment(&d, &p.catalog, &p.costs, &cfg, &t2).unwrap();
    let bundle = Stage2Fit { treatment: t2, assessment: a2 };
    assert_eq!(bundle.assessment.beta.len(), p.catalog.cand1.len());
    assert_eq!(bundle.assessment.beta[0].len(), 2);
    assert_eq!(bundle.assessment.beta[0][0].len(), p.catalog.cand2.len());
}
