//! Cost-adjusted comparator regimes: a dense analogue that always assesses
//! every covariate, and a sparse lasso-penalized analogue whose assessment
//! sets are the cheapest catalog candidates covering the selected support.
//!
//! Both fit cost-free contrasts with the same residual-on-residual
//! machinery as balanced Q-learning and account for treatment costs only
//! through constant thresholds on the decision boundaries; neither reacts
//! to assessment costs, which is exactly what makes them comparators.

mod lasso;

use serde::{Deserialize, Serialize};

use crate::bql::{fit_bql, fit_with_solver, BqlConfig, ContrastSolver};
use crate::data::{AssessmentCatalog, CostSpec, Dataset, FeatureIndexSet};
use crate::deploy::{treatment_from_score, Policy};
use crate::error::{Error, Result};

pub use lasso::{cv_penalty, lasso_fit, lasso_gradient, penalty_max, LassoFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    Dense,
    Sparse,
}

/// Extra diagnostics carried by the sparse baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseInfo {
    pub penalty_stage2: f64,
    pub penalty_stage1: f64,
    /// Stage-1 covariates with nonzero coefficients in either contrast.
    pub support1: FeatureIndexSet,
    /// Stage-2 covariates with nonzero stage-2 contrast coefficients.
    pub support2: FeatureIndexSet,
}

/// A comparator regime: full-design contrasts, threshold-adjusted treatment
/// rules, and state-independent assessment choices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRegime {
    pub version: u32,
    /// Serialized under a distinct name: the regime document envelope
    /// already uses `kind` as its tag.
    #[serde(rename = "baseline_kind")]
    pub kind: BaselineKind,
    pub catalog: AssessmentCatalog,
    pub costs: CostSpec,
    pub intercept: bool,
    /// Stage-2 contrast over `(s1, s2, a1 [, 1])`.
    pub alpha_full: Vec<f64>,
    /// Stage-1 contrast over `(s1 [, 1])`.
    pub gamma_full: Vec<f64>,
    /// Treat at stage 1 iff the contrast exceeds this threshold.
    pub threshold1: f64,
    pub threshold2: f64,
    pub chosen_j1: usize,
    pub chosen_j2: usize,
    pub sparse: Option<SparseInfo>,
    pub n: usize,
    pub train_norm_s1: f64,
    pub train_norm_s2: f64,
}

fn dense_catalog(cat: &AssessmentCatalog) -> Result<AssessmentCatalog> {
    AssessmentCatalog::new(
        cat.d1,
        cat.d2,
        cat.l1.clone(),
        cat.l2.clone(),
        vec![cat.j1_full()],
        vec![cat.j2_full()],
    )
}

/// Fits the dense comparator: the balanced pipeline restricted to the full
/// assessment sets with all costs zeroed, deployed with treatment-cost
/// thresholds on the decision boundaries.
pub fn fit_dense(
    d: &Dataset,
    cat: &AssessmentCatalog,
    costs: &CostSpec,
    cfg: &BqlConfig,
) -> Result<BaselineRegime> {
    costs.validate(cat)?;
    let dcat = dense_catalog(cat)?;
    let zero = CostSpec::zero(&dcat);
    let fitted = fit_bql(d, &dcat, &zero, cfg)?;
    let lambda = costs.lambda;
    Ok(BaselineRegime {
        version: 1,
        kind: BaselineKind::Dense,
        catalog: cat.clone(),
        costs: costs.clone(),
        intercept: cfg.intercept,
        alpha_full: fitted.alpha_bar,
        gamma_full: fitted.gamma_bar.into_iter().next().expect("one candidate"),
        threshold1: lambda * (costs.c1t.1 - costs.c1t.0),
        threshold2: lambda * (costs.c2t.1 - costs.c2t.0),
        chosen_j1: cat.j1_full_idx(),
        chosen_j2: cat.j2_full_idx(),
        sparse: None,
        n: d.n(),
        train_norm_s1: fitted.train_norm_s1,
        train_norm_s2: fitted.train_norm_s2,
    })
}

/// Nonzero-coefficient stage-1/stage-2 covariate positions of the two
/// contrast vectors.
fn supports(
    alpha_full: &[f64],
    gamma_full: &[f64],
    d1: usize,
    d2: usize,
) -> (FeatureIndexSet, FeatureIndexSet) {
    const EPS: f64 = 1e-10;
    let mut s1: Vec<usize> = (0..d1).filter(|&j| alpha_full[j].abs() > EPS).map(|j| j + 1).collect();
    s1.extend((0..d1).filter(|&j| gamma_full[j].abs() > EPS).map(|j| j + 1));
    let s2: Vec<usize> =
        (0..d2).filter(|&j| alpha_full[d1 + j].abs() > EPS).map(|j| j + 1).collect();
    (FeatureIndexSet::new(s1), FeatureIndexSet::new(s2))
}

/// Cheapest candidate covering `needed` (the full set always qualifies).
fn cheapest_covering(
    cands: &[FeatureIndexSet],
    costs: &[f64],
    needed: &FeatureIndexSet,
) -> usize {
    let mut best: Option<usize> = None;
    for (i, c) in cands.iter().enumerate() {
        if needed.is_subset_of(c)
            && best.is_none_or(|b| costs[i] < costs[b]) {
                best = Some(i);
            }
    }
    best.expect("the full candidate covers any within-range support")
}

/// Fits the sparse comparator: the same pipeline as the dense one but with
/// lasso-penalized contrast regressions, support-derived assessment sets,
/// and threshold-adjusted treatment rules. `penalty` applies to both
/// stages; when absent each stage picks its own by cross-validation with
/// the one-standard-error rule.
pub fn fit_sparse(
    d: &Dataset,
    cat: &AssessmentCatalog,
    costs: &CostSpec,
    penalty: Option<f64>,
    cfg: &BqlConfig,
) -> Result<BaselineRegime> {
    costs.validate(cat)?;
    if let Some(p) = penalty {
        if p.is_nan() || p < 0.0 {
            return Err(Error::Config("sparse penalty must be nonnegative".into()));
        }
    }
    let dcat = dense_catalog(cat)?;
    let zero = CostSpec::zero(&dcat);
    let solver = ContrastSolver::Lasso { stage2: penalty, stage1: penalty };
    let (fitted, _, pens) = fit_with_solver(d, &dcat, &zero, cfg, solver)?;
    let alpha_full = fitted.alpha_bar;
    let gamma_full = fitted.gamma_bar.into_iter().next().expect("one candidate");
    let pen2 = pens.stage2.or(penalty).unwrap_or(0.0);
    let pen1 = pens.stage1.or(penalty).unwrap_or(0.0);

    let (support1, support2) = supports(&alpha_full, &gamma_full, d.d1, d.d2);
    let needed1 = FeatureIndexSet::new(
        support1.indices().iter().copied().filter(|i| !cat.l1.contains(*i)).collect(),
    );
    let needed2 = FeatureIndexSet::new(
        support2.indices().iter().copied().filter(|i| !cat.l2.contains(*i)).collect(),
    );
    let chosen_j1 = cheapest_covering(&cat.cand1, &costs.c1c, &needed1);
    let chosen_j2 = cheapest_covering(&cat.cand2, &costs.c2c, &needed2);

    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let lambda = costs.lambda;
    Ok(BaselineRegime {
        version: 1,
        kind: BaselineKind::Sparse,
        catalog: cat.clone(),
        costs: costs.clone(),
        intercept: cfg.intercept,
        alpha_full,
        gamma_full,
        threshold1: lambda * (costs.c1t.1 - costs.c1t.0),
        threshold2: lambda * (costs.c2t.1 - costs.c2t.0),
        chosen_j1,
        chosen_j2,
        sparse: Some(SparseInfo {
            penalty_stage2: pen2,
            penalty_stage1: pen1,
            support1,
            support2,
        }),
        n: d.n(),
        train_norm_s1: d.trajectories.iter().map(|t| norm(&t.s1)).fold(0.0, f64::max),
        train_norm_s2: d
            .trajectories
            .iter()
            .map(|t| (norm(&t.s1).powi(2) + norm(&t.s2).powi(2)).sqrt())
            .fold(0.0, f64::max),
    })
}

impl BaselineRegime {
    /// Dot product of a coefficient vector laid out over raw stage
    /// positions against partially assessed values. Coefficients on
    /// unassessed positions must be zero.
    fn masked_dot(
        coef: &[f64],
        offset: usize,
        sets_vals: &[(&FeatureIndexSet, &[f64])],
        covered_len: usize,
    ) -> Result<f64> {
        let mut covered = vec![false; covered_len];
        let mut acc = 0.0;
        for (set, vals) in sets_vals {
            for (pos, v) in set.indices().iter().zip(*vals) {
                acc += coef[offset + pos - 1] * v;
                covered[pos - 1] = true;
            }
        }
        for (j, was_covered) in covered.iter().enumerate() {
            if !was_covered && coef[offset + j].abs() > 1e-10 {
                return Err(Error::Numeric(format!(
                    "nonzero coefficient on unassessed covariate position {}",
                    j + 1
                )));
            }
        }
        Ok(acc)
    }

    fn stage1_score(&self, s_l1: &[f64], s_j1: &[f64], j1: usize) -> Result<f64> {
        let cat = &self.catalog;
        let mut score = Self::masked_dot(
            &self.gamma_full,
            0,
            &[(&cat.l1, s_l1), (&cat.cand1[j1], s_j1)],
            cat.d1,
        )?;
        if self.intercept {
            score += self.gamma_full[cat.d1];
        }
        Ok(score)
    }

    #[allow(clippy::too_many_arguments)]
    fn stage2_score(
        &self,
        j1: usize,
        a1: f64,
        j2: usize,
        s_l1: &[f64],
        s_j1: &[f64],
        s_l2: &[f64],
        s_j2: &[f64],
    ) -> Result<f64> {
        let cat = &self.catalog;
        let mut score = Self::masked_dot(
            &self.alpha_full,
            0,
            &[(&cat.l1, s_l1), (&cat.cand1[j1], s_j1)],
            cat.d1,
        )?;
        score += Self::masked_dot(
            &self.alpha_full,
            cat.d1,
            &[(&cat.l2, s_l2), (&cat.cand2[j2], s_j2)],
            cat.d2,
        )?;
        score += a1 * self.alpha_full[cat.d1 + cat.d2];
        if self.intercept {
            score += self.alpha_full[cat.d1 + cat.d2 + 1];
        }
        Ok(score)
    }
}

impl Policy for BaselineRegime {
    fn catalog(&self) -> &AssessmentCatalog {
        &self.catalog
    }

    fn stage1_assessment(&self, _s_l1: &[f64]) -> Result<(usize, Vec<f64>)> {
        // Assessment is state-independent: the comparator ignores
        // assessment costs at decision time.
        Ok((self.chosen_j1, vec![0.0; self.catalog.cand1.len()]))
    }

    fn stage1_treatment(&self, j1: usize, s_l1: &[f64], s_j1: &[f64]) -> Result<(f64, f64)> {
        let margin = self.stage1_score(s_l1, s_j1, j1)? - self.threshold1;
        Ok((treatment_from_score(margin), margin))
    }

    fn stage2_assessment(
        &self,
        _j1: usize,
        _a1: f64,
        _s_l1: &[f64],
        _s_j1: &[f64],
        _s_l2: &[f64],
    ) -> Result<(usize, Vec<f64>)> {
        Ok((self.chosen_j2, vec![0.0; self.catalog.cand2.len()]))
    }

    fn stage2_treatment(
        &self,
        j1: usize,
        a1: f64,
        j2: usize,
        s_l1: &[f64],
        s_j1: &[f64],
        s_l2: &[f64],
        s_j2: &[f64],
    ) -> Result<(f64, f64)> {
        let margin = self.stage2_score(j1, a1, j2, s_l1, s_j1, s_l2, s_j2)? - self.threshold2;
        Ok((treatment_from_score(margin), margin))
    }

    fn design_norm_bounds(&self) -> Option<(f64, f64)> {
        Some((self.train_norm_s1, self.train_norm_s2))
    }
}
