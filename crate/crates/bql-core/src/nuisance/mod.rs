//! Cross-fitted flexible estimation of nuisance regression functions with
//! ridge-linear and random-forest base learners and discrete super-learner
//! selection between them.

mod forest;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regress::dot;
use crate::seed::{derive_seed, rng_for};

pub use forest::{fit_forest, ForestModel, ForestParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RidgeParams {
    pub penalty: f64,
}

impl Default for RidgeParams {
    fn default() -> Self {
        RidgeParams { penalty: 1e-4 }
    }
}

/// Base-learner choice for a nuisance regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LearnerSpec {
    RidgeLinear(RidgeParams),
    RandomForest(ForestParams),
    /// Picks, per fold, the base learner with the lower internal
    /// cross-validated mean squared error.
    DiscreteSuperLearner {
        #[serde(default = "default_cv_folds")]
        cv_folds: usize,
        #[serde(default)]
        ridge: RidgeParams,
        #[serde(default)]
        forest: ForestParams,
    },
}

fn default_cv_folds() -> usize {
    5
}

impl Default for LearnerSpec {
    fn default() -> Self {
        LearnerSpec::DiscreteSuperLearner {
            cv_folds: default_cv_folds(),
            ridge: RidgeParams::default(),
            forest: ForestParams::default(),
        }
    }
}

impl LearnerSpec {
    pub fn ridge(penalty: f64) -> Self {
        LearnerSpec::RidgeLinear(RidgeParams { penalty })
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            LearnerSpec::RidgeLinear(r) => r.penalty > 0.0,
            LearnerSpec::RandomForest(f) => {
                f.trees > 0
                    && f.max_depth > 0
                    && f.min_leaf > 0
                    && f.feature_fraction.is_none_or(|x| x > 0.0 && x <= 1.0)
            }
            LearnerSpec::DiscreteSuperLearner { cv_folds, ridge, forest } => {
                *cv_folds >= 2
                    && LearnerSpec::RidgeLinear(ridge.clone()).validate().is_ok()
                    && LearnerSpec::RandomForest(forest.clone()).validate().is_ok()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid learner hyperparameters: {self:?}")))
        }
    }
}

/// Ridge regression with an internal intercept; columns are standardized
/// inside the solver and coefficients mapped back to the original scale.
#[derive(Debug, Clone)]
pub struct RidgeModel {
    coefs: Vec<f64>,
    intercept: f64,
}

pub fn fit_ridge(x: &[Vec<f64>], y: &[f64], params: &RidgeParams) -> Result<RidgeModel> {
    let n = x.len();
    let p = x[0].len();
    let mean_y = y.iter().sum::<f64>() / n as f64;
    let mut means = vec![0.0; p];
    let mut scales = vec![0.0; p];
    for j in 0..p {
        means[j] = x.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        let var = x.iter().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / n as f64;
        scales[j] = var.sqrt().max(1e-12);
    }
    // Solve (Z'Z + n*penalty*I) b = Z'yc on standardized columns.
    let mut gram = nalgebra::DMatrix::<f64>::zeros(p, p);
    let mut rhs = nalgebra::DVector::<f64>::zeros(p);
    for (row, &yi) in x.iter().zip(y) {
        let z: Vec<f64> = (0..p).map(|j| (row[j] - means[j]) / scales[j]).collect();
        for a in 0..p {
            rhs[a] += z[a] * (yi - mean_y);
            for b in a..p {
                gram[(a, b)] += z[a] * z[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
        gram[(a, a)] += n as f64 * params.penalty;
    }
    let sol = gram
        .cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or_else(|| Error::Numeric("ridge normal equations not positive definite".into()))?;
    let coefs: Vec<f64> = (0..p).map(|j| sol[j] / scales[j]).collect();
    let intercept = mean_y - dot(&coefs, &means);
    Ok(RidgeModel { coefs, intercept })
}

impl RidgeModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + dot(&self.coefs, x)
    }
}

/// A trained single-fold predictor.
#[derive(Debug, Clone)]
pub enum Predictor {
    Ridge(RidgeModel),
    Forest(ForestModel),
}

impl Predictor {
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            Predictor::Ridge(m) => m.predict(x),
            Predictor::Forest(m) => m.predict(x),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Predictor::Ridge(_) => "ridge-linear",
            Predictor::Forest(_) => "random-forest",
        }
    }
}

fn fit_base(x: &[Vec<f64>], y: &[f64], spec: &LearnerSpec, seed: u64) -> Result<Predictor> {
    match spec {
        LearnerSpec::RidgeLinear(r) => Ok(Predictor::Ridge(fit_ridge(x, y, r)?)),
        LearnerSpec::RandomForest(f) => Ok(Predictor::Forest(fit_forest(x, y, f, seed))),
        LearnerSpec::DiscreteSuperLearner { .. } => {
            Err(Error::Config("super-learner cannot be used as a base learner".into()))
        }
    }
}

/// Internal cross-validated MSE of a base learner on the given rows.
fn cv_mse(x: &[Vec<f64>], y: &[f64], spec: &LearnerSpec, folds: usize, seed: u64) -> Result<f64> {
    let n = x.len();
    let k = folds.min(n);
    let plan = make_folds(n, k.max(2).min(n), seed)?;
    let mut sse = 0.0;
    for fold in 0..plan.k {
        let (train, test): (Vec<usize>, Vec<usize>) =
            (0..n).partition(|&i| plan.assignment[i] != fold);
        if train.is_empty() || test.is_empty() {
            continue;
        }
        let xt: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
        let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let model = fit_base(&xt, &yt, spec, derive_seed(seed, &[fold as u64]))?;
        for &i in &test {
            let e = y[i] - model.predict(&x[i]);
            sse += e * e;
        }
    }
    Ok(sse / n as f64)
}

/// Fits one learner on the full given rows, resolving a discrete
/// super-learner by internal cross-validation. Returns the trained
/// predictor and, for the super-learner, its selection diagnostics.
pub fn fit_learner(
    x: &[Vec<f64>],
    y: &[f64],
    spec: &LearnerSpec,
    seed: u64,
) -> Result<(Predictor, Option<SuperLearnerChoice>)> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::Dimension("learner needs matching non-empty inputs".into()));
    }
    match spec {
        LearnerSpec::DiscreteSuperLearner { cv_folds, ridge, forest } => {
            let candidates = [
                LearnerSpec::RidgeLinear(ridge.clone()),
                LearnerSpec::RandomForest(forest.clone()),
            ];
            let mut best: Option<(usize, f64)> = None;
            let mut mses = Vec::new();
            for (ci, cand) in candidates.iter().enumerate() {
                let mse = cv_mse(x, y, cand, *cv_folds, derive_seed(seed, &[90, ci as u64]))?;
                mses.push(mse);
                if best.is_none_or(|(_, b)| mse < b) {
                    best = Some((ci, mse));
                }
            }
            let (ci, _) = best.expect("at least one candidate");
            let model = fit_base(x, y, &candidates[ci], derive_seed(seed, &[91]))?;
            Ok((model, Some(SuperLearnerChoice { chosen: ci, cv_mse: mses })))
        }
        _ => Ok((fit_base(x, y, spec, seed)?, None)),
    }
}

/// Which base learner the discrete super-learner picked and why.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperLearnerChoice {
    /// 0 = ridge-linear, 1 = random-forest.
    pub chosen: usize,
    pub cv_mse: Vec<f64>,
}

/// A deterministic partition of `n` rows into `k` folds of near-equal size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub n: usize,
    pub k: usize,
    /// Fold label per row, in `0..k`.
    pub assignment: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn fold_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.assignment[i] == fold).collect()
    }

    pub fn complement_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.assignment[i] != fold).collect()
    }
}

pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 || k > n {
        return Err(Error::Config(format!("fold count {k} must satisfy 2 <= k <= n = {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng_for(seed, &[0x0f01d]);
    order.shuffle(&mut rng);
    let mut assignment = vec![0usize; n];
    for (pos, &row) in order.iter().enumerate() {
        assignment[row] = pos % k;
    }
    Ok(FoldPlan { n, k, assignment, seed })
}

/// Cross-fitted predictions: the predictor applied to fold `k` was trained
/// without fold `k`.
#[derive(Debug, Clone)]
pub struct CrossFitPredictor {
    pub models: Vec<Predictor>,
    pub oof: Vec<f64>,
    pub chosen: Vec<&'static str>,
    pub clip: Option<(f64, f64)>,
}

impl CrossFitPredictor {
    /// Prediction from the model trained without `fold`, clipped if the
    /// predictor carries a clamp range.
    pub fn predict_for_fold(&self, fold: usize, x: &[f64]) -> f64 {
        let raw = self.models[fold].predict(x);
        match self.clip {
            Some((lo, hi)) => raw.clamp(lo, hi),
            None => raw,
        }
    }
}

/// Fits one learner per fold (on the fold's complement) and fills
/// out-of-fold predictions for every row. When `clip` is given (propensity
/// use), predictions are clamped into the range.
pub fn fit_crossfit(
    x: &[Vec<f64>],
    y: &[f64],
    plan: &FoldPlan,
    spec: &LearnerSpec,
    clip: Option<(f64, f64)>,
    seed: u64,
) -> Result<CrossFitPredictor> {
    if x.len() != plan.n || y.len() != plan.n {
        return Err(Error::Dimension(format!(
            "cross-fit inputs have {} rows but the fold plan covers {}",
            x.len(),
            plan.n
        )));
    }
    spec.validate()?;
    let mut models = Vec::with_capacity(plan.k);
    let mut chosen = Vec::with_capacity(plan.k);
    let mut oof = vec![0.0; plan.n];
    for fold in 0..plan.k {
        let train = plan.complement_rows(fold);
        let xt: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
        let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let (model, choice) = fit_learner(&xt, &yt, spec, derive_seed(seed, &[fold as u64]))?;
        chosen.push(match &choice {
            Some(c) if c.chosen == 1 => "random-forest",
            Some(_) => "ridge-linear",
            None => model.name(),
        });
        for &i in &plan.fold_rows(fold) {
            let raw = model.predict(&x[i]);
            oof[i] = match clip {
                Some((lo, hi)) => raw.clamp(lo, hi),
                None => raw,
            };
        }
        models.push(model);
    }
    Ok(CrossFitPredictor { models, oof, chosen, clip })
}
