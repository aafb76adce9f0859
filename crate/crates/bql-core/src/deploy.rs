//! Sequential application of a fitted regime to a new subject.
//!
//! Deployment alternates covariate assessment and treatment assignment:
//! assess the free stage-1 covariates, pick a stage-1 assessment set, assess
//! it, assign the first treatment, assess the free stage-2 covariates, pick
//! a stage-2 assessment set, assess it, assign the second treatment.
//!
//! Covariates are pulled through an explicit [`CovariateOracle`] so that the
//! same code deploys against simulators, CSV rows, or instrumented sources,
//! and so tests can prove that unassessed covariates are never requested.

use crate::data::{AssessmentCatalog, FeatureIndexSet};
use crate::error::{Error, Result};

/// Answers covariate requests for one subject. Stage-2 values may depend on
/// the first treatment, so the chosen `a1` is committed before any stage-2
/// query.
pub trait CovariateOracle {
    fn stage1(&mut self, set: &FeatureIndexSet) -> Result<Vec<f64>>;
    fn commit_stage1(&mut self, a1: f64) -> Result<()>;
    fn stage2(&mut self, set: &FeatureIndexSet) -> Result<Vec<f64>>;
}

/// A four-rule dynamic treatment regime over a fixed assessment catalog.
///
/// Covariate arguments arrive split into the pieces accumulated so far
/// (baseline and assessed sets, in stage order); implementations assemble
/// their own designs from them.
pub trait Policy {
    fn catalog(&self) -> &AssessmentCatalog;

    /// Chooses a stage-1 assessment set from the baseline covariates;
    /// returns the candidate position and all candidate scores.
    fn stage1_assessment(&self, s_l1: &[f64]) -> Result<(usize, Vec<f64>)>;

    /// Chooses the first treatment; returns the action and its score.
    fn stage1_treatment(&self, j1: usize, s_l1: &[f64], s_j1: &[f64]) -> Result<(f64, f64)>;

    fn stage2_assessment(
        &self,
        j1: usize,
        a1: f64,
        s_l1: &[f64],
        s_j1: &[f64],
        s_l2: &[f64],
    ) -> Result<(usize, Vec<f64>)>;

    #[allow(clippy::too_many_arguments)]
    fn stage2_treatment(
        &self,
        j1: usize,
        a1: f64,
        j2: usize,
        s_l1: &[f64],
        s_j1: &[f64],
        s_l2: &[f64],
        s_j2: &[f64],
    ) -> Result<(f64, f64)>;

    /// Training maxima of the stage-1 and stage-2 design norms, when known;
    /// used to flag extrapolation at deployment.
    fn design_norm_bounds(&self) -> Option<(f64, f64)> {
        None
    }
}

/// Index of the maximal score, ties broken by the lowest position.
pub fn argmax_lowest(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

/// Treatment from a contrast score under the strict sign rule:
/// treat iff the score is strictly positive.
pub fn treatment_from_score(score: f64) -> f64 {
    if score > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Everything decided and observed while deploying one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionRecord {
    pub j1_idx: usize,
    pub j1: FeatureIndexSet,
    pub a1: f64,
    pub j2_idx: usize,
    pub j2: FeatureIndexSet,
    pub a2: f64,
    /// Covariate values assessed at stage 1 (baseline then chosen set).
    pub assessed1: Vec<f64>,
    /// Covariate values assessed at stage 2 (baseline then chosen set).
    pub assessed2: Vec<f64>,
    /// Scores of every stage-1 candidate set.
    pub scores1: Vec<f64>,
    /// Scores of every stage-2 candidate set.
    pub scores2: Vec<f64>,
    /// Contrast scores behind the two treatment decisions.
    pub treatment_scores: (f64, f64),
    /// Set when a decision design's norm exceeded the training maximum.
    pub extrapolation: bool,
}

fn norm(parts: &[&[f64]]) -> f64 {
    parts.iter().flat_map(|p| p.iter()).map(|v| v * v).sum::<f64>().sqrt()
}

/// Runs the full deployment pipeline for one subject. Only covariates in
/// the baseline sets and the chosen candidate sets are ever requested from
/// the oracle.
pub fn deploy(policy: &dyn Policy, oracle: &mut dyn CovariateOracle) -> Result<DecisionRecord> {
    let step = |stage: &str, e: Error| Error::Eval(format!("deployment failed at {stage}: {e}"));
    let catalog = policy.catalog().clone();

    let s_l1 = oracle.stage1(&catalog.l1).map_err(|e| step("stage-1 baseline assessment", e))?;
    let (j1_idx, scores1) =
        policy.stage1_assessment(&s_l1).map_err(|e| step("stage-1 assessment choice", e))?;
    let j1 = catalog.cand1[j1_idx].clone();
    let s_j1 = oracle.stage1(&j1).map_err(|e| step("stage-1 chosen assessment", e))?;
    let (a1, score1t) = policy
        .stage1_treatment(j1_idx, &s_l1, &s_j1)
        .map_err(|e| step("stage-1 treatment choice", e))?;
    oracle.commit_stage1(a1).map_err(|e| step("stage-1 treatment commit", e))?;

    let s_l2 = oracle.stage2(&catalog.l2).map_err(|e| step("stage-2 baseline assessment", e))?;
    let (j2_idx, scores2) = policy
        .stage2_assessment(j1_idx, a1, &s_l1, &s_j1, &s_l2)
        .map_err(|e| step("stage-2 assessment choice", e))?;
    let j2 = catalog.cand2[j2_idx].clone();
    let s_j2 = oracle.stage2(&j2).map_err(|e| step("stage-2 chosen assessment", e))?;
    let (a2, score2t) = policy
        .stage2_treatment(j1_idx, a1, j2_idx, &s_l1, &s_j1, &s_l2, &s_j2)
        .map_err(|e| step("stage-2 treatment choice", e))?;

    let extrapolation = match policy.design_norm_bounds() {
        Some((n1, n2)) => {
            norm(&[&s_l1, &s_j1]) > n1 || norm(&[&s_l1, &s_j1, &s_l2, &s_j2]) > n2
        }
        None => false,
    };

    let mut assessed1 = s_l1.clone();
    assessed1.extend_from_slice(&s_j1);
    let mut assessed2 = s_l2.clone();
    assessed2.extend_from_slice(&s_j2);
    Ok(DecisionRecord {
        j1_idx,
        j1,
        a1,
        j2_idx,
        j2,
        a2,
        assessed1,
        assessed2,
        scores1,
        scores2,
        treatment_scores: (score1t, score2t),
        extrapolation,
    })
}

/// Oracle wrapper that records every requested index set, for access
/// accounting in tests.
pub struct CountingOracle<O> {
    pub inner: O,
    pub stage1_requests: Vec<FeatureIndexSet>,
    pub stage2_requests: Vec<FeatureIndexSet>,
}

impl<O> CountingOracle<O> {
    pub fn new(inner: O) -> Self {
        CountingOracle { inner, stage1_requests: Vec::new(), stage2_requests: Vec::new() }
    }

    /// Total number of distinct stage-2 indices pulled.
    pub fn stage2_index_count(&self) -> usize {
        self.stage2_requests.iter().map(|s| s.len()).sum()
    }
}

impl<O: CovariateOracle> CovariateOracle for CountingOracle<O> {
    fn stage1(&mut self, set: &FeatureIndexSet) -> Result<Vec<f64>> {
        self.stage1_requests.push(set.clone());
        self.inner.stage1(set)
    }

    fn commit_stage1(&mut self, a1: f64) -> Result<()> {
        self.inner.commit_stage1(a1)
    }

    fn stage2(&mut self, set: &FeatureIndexSet) -> Result<Vec<f64>> {
        self.stage2_requests.push(set.clone());
        self.inner.stage2(set)
    }
}

/// Oracle backed by fully known covariate vectors (an offline subject row).
/// Stage-2 values are whatever the row recorded, regardless of the
/// committed treatment.
pub struct StaticOracle {
    pub s1: Vec<f64>,
    pub s2: Vec<f64>,
}

impl CovariateOracle for StaticOracle {
    fn stage1(&mut self, set: &FeatureIndexSet) -> Result<Vec<f64>> {
        crate::data::subvector(&self.s1, set)
    }

    fn commit_stage1(&mut self, _a1: f64) -> Result<()> {
        Ok(())
    }

    fn stage2(&mut self, set: &FeatureIndexSet) -> Result<Vec<f64>> {
        crate::data::subvector(&self.s2, set)
    }
}
