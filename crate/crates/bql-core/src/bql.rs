//! Balanced Q-learning: the full estimation pipeline producing a
//! [`FittedRegime`].
//!
//! The procedure works backward through the four decisions. Cross-fitted
//! nuisance regressions feed a residual-on-residual (R-learner) fit of the
//! stage-2 treatment contrast; nested projections restrict that contrast to
//! each candidate covariate subset; pseudo-outcomes then encode the value
//! of each stage-2 assessment choice, and the same machinery repeats for
//! the first stage. Every regression design optionally carries a trailing
//! intercept column (on by default) so the linear working models can absorb
//! additive cost constants.
//!
//! The utility/cost trade-off scalar multiplies every cost term before
//! fitting, so with all costs zero the fit is identical for every lambda.

use serde::{Deserialize, Serialize};

use crate::data::{validate_dataset, AssessmentCatalog, CostSpec, Dataset};
use crate::deploy::{argmax_lowest, treatment_from_score, Policy};
use crate::error::{Error, Result};
use crate::nuisance::{fit_crossfit, fit_learner, make_folds, FoldPlan, LearnerSpec, Predictor};
use crate::regress::{dot, nested_projection, ols, residual_on_residual};
use crate::seed::derive_seed;

const TAG_FOLDS: u64 = 1;
const TAG_F2: u64 = 2;
const TAG_G2: u64 = 3;
const TAG_INNER: u64 = 4;
const TAG_F1: u64 = 5;
const TAG_G1: u64 = 6;
const TAG_PEN2: u64 = 7;
const TAG_PEN1: u64 = 8;

/// How the two residual-on-residual contrast fits are solved. The balanced
/// pipeline uses minimum-norm least squares; the sparse comparator swaps in
/// a lasso (with per-stage penalties, `None` meaning cross-validated).
/// Nested projections always stay least squares.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum ContrastSolver {
    MinNorm,
    Lasso { stage2: Option<f64>, stage1: Option<f64> },
}

/// Solves one residual-on-residual problem under the chosen solver.
/// Returns the coefficients and the penalty actually used (lasso only).
fn solve_contrast(
    rf: &[f64],
    rg: &[f64],
    designs: &[Vec<f64>],
    offset: f64,
    pen: Option<f64>,
    solver_is_lasso: bool,
    cv_seed: u64,
) -> Result<(Vec<f64>, Option<f64>)> {
    if !solver_is_lasso {
        return Ok((residual_on_residual(rf, rg, designs, offset)?.coefficients, None));
    }
    let rows: Vec<Vec<f64>> = designs
        .iter()
        .zip(rg)
        .map(|(x, &g)| x.iter().map(|v| v * g).collect())
        .collect();
    let resp: Vec<f64> = rf.iter().zip(rg).map(|(&f, &g)| f - g * offset).collect();
    let pen = match pen {
        Some(p) => p,
        None => crate::baselines::cv_penalty(&rows, &resp, 5, cv_seed)?,
    };
    Ok((crate::baselines::lasso_fit(&rows, &resp, pen)?.coefficients, Some(pen)))
}

/// Range into which estimated propensities are clamped.
pub const PROPENSITY_CLIP: (f64, f64) = (0.01, 0.99);

/// Configuration of one balanced Q-learning fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BqlConfig {
    /// Number of cross-fitting folds (at least 2).
    pub k_folds: usize,
    /// Learner for the stage-2 outcome regression.
    pub f2: LearnerSpec,
    /// Learner for the stage-2 propensity.
    pub g2: LearnerSpec,
    /// Learner for the stage-1 pseudo-outcome regression.
    pub f1: LearnerSpec,
    /// Learner for the stage-1 propensity.
    pub g1: LearnerSpec,
    /// Append an intercept column to every contrast design.
    pub intercept: bool,
    pub seed: u64,
}

impl Default for BqlConfig {
    fn default() -> Self {
        BqlConfig {
            k_folds: 2,
            f2: LearnerSpec::default(),
            g2: LearnerSpec::default(),
            f1: LearnerSpec::default(),
            g1: LearnerSpec::default(),
            intercept: true,
            seed: 0,
        }
    }
}

impl BqlConfig {
    /// A configuration with every nuisance learner set to ridge regression.
    pub fn ridge_only(seed: u64) -> Self {
        let r = LearnerSpec::ridge(1e-4);
        BqlConfig { f2: r.clone(), g2: r.clone(), f1: r.clone(), g1: r, seed, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_folds < 2 {
            return Err(Error::Config("k_folds must be at least 2".into()));
        }
        for l in [&self.f2, &self.g2, &self.f1, &self.g1] {
            l.validate()?;
        }
        Ok(())
    }
}

/// Per-row covariate pieces and design builders shared by all stages.
struct Ctx<'a> {
    d: &'a Dataset,
    cat: &'a AssessmentCatalog,
    /// Costs with the trade-off scalar already applied.
    costs: CostSpec,
    cfg: &'a BqlConfig,
    seed: u64,
    solver: ContrastSolver,
    s_l1: Vec<Vec<f64>>,
    s_j1: Vec<Vec<Vec<f64>>>,
    s_l2: Vec<Vec<f64>>,
    s_j2: Vec<Vec<Vec<f64>>>,
}

impl<'a> Ctx<'a> {
    fn new(
        d: &'a Dataset,
        cat: &'a AssessmentCatalog,
        costs: &CostSpec,
        cfg: &'a BqlConfig,
        seed: u64,
        solver: ContrastSolver,
    ) -> Result<Self> {
        let sub = |x: &[f64], s: &crate::data::FeatureIndexSet| crate::data::subvector(x, s);
        let s_l1 = d.trajectories.iter().map(|t| sub(&t.s1, &cat.l1)).collect::<Result<_>>()?;
        let s_l2 = d.trajectories.iter().map(|t| sub(&t.s2, &cat.l2)).collect::<Result<_>>()?;
        let s_j1 = cat
            .cand1
            .iter()
            .map(|c| d.trajectories.iter().map(|t| sub(&t.s1, c)).collect::<Result<_>>())
            .collect::<Result<_>>()?;
        let s_j2 = cat
            .cand2
            .iter()
            .map(|c| d.trajectories.iter().map(|t| sub(&t.s2, c)).collect::<Result<_>>())
            .collect::<Result<_>>()?;
        Ok(Ctx { d, cat, costs: costs.lambda_adjusted(), cfg, seed, solver, s_l1, s_j1, s_l2, s_j2 })
    }

    fn n(&self) -> usize {
        self.d.n()
    }

    fn assemble(&self, parts: &[&[f64]]) -> Vec<f64> {
        crate::data::assemble_design(parts, self.cfg.intercept)
    }

    fn t(&self, i: usize) -> &crate::data::Trajectory {
        &self.d.trajectories[i]
    }

    /// Full stage-2 treatment design `(s1, s2, a1)`.
    fn full2_at(&self, i: usize, a1: f64) -> Vec<f64> {
        let t = self.t(i);
        self.assemble(&[&t.s1, &t.s2, &[a1]])
    }

    fn full2(&self, i: usize) -> Vec<f64> {
        self.full2_at(i, self.t(i).a1)
    }

    /// Restricted stage-2 treatment design over the assessed history.
    fn sjbar2(&self, i: usize, j1: usize, j2: usize) -> Vec<f64> {
        self.assemble(&[&self.s_l1[i], &self.s_j1[j1][i], &self.s_l2[i], &self.s_j2[j2][i]])
    }

    /// Full stage-2 assessment design `(s1, s_l2, a1)`.
    fn xl2f_at(&self, i: usize, a1: f64) -> Vec<f64> {
        let t = self.t(i);
        self.assemble(&[&t.s1, &self.s_l2[i], &[a1]])
    }

    fn xl2f(&self, i: usize) -> Vec<f64> {
        self.xl2f_at(i, self.t(i).a1)
    }

    /// Restricted stage-2 assessment design over the assessed history.
    fn sl2bar(&self, i: usize, j1: usize) -> Vec<f64> {
        self.assemble(&[&self.s_l1[i], &self.s_j1[j1][i], &self.s_l2[i]])
    }

    fn s1v(&self, i: usize) -> Vec<f64> {
        self.assemble(&[&self.t(i).s1])
    }

    fn sj1bar(&self, i: usize, j1: usize) -> Vec<f64> {
        self.assemble(&[&self.s_l1[i], &self.s_j1[j1][i]])
    }

    fn sl1(&self, i: usize) -> Vec<f64> {
        self.assemble(&[&self.s_l1[i]])
    }

}

/// Output of the stage-2 treatment fit: the full-design contrast and its
/// restrictions onto every assessed-history design.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Treatment {
    /// Coefficients of the stage-2 contrast over `(s1, s2, a1 [, 1])`.
    pub alpha_bar: Vec<f64>,
    /// Restricted contrast coefficients, indexed `[j1][a1][j2]`.
    pub alpha: Vec<Vec<Vec<Vec<f64>>>>,
    pub plan: FoldPlan,
    pub f2_oof: Vec<f64>,
    pub g2_oof: Vec<f64>,
    /// Lasso penalty the contrast fit resolved to, when applicable.
    pub(crate) used_pen2: Option<f64>,
}

/// Output of the stage-2 assessment fit.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Assessment {
    /// Full-design assessment contrasts, indexed `[j1][j2]`.
    pub beta_bar: Vec<Vec<Vec<f64>>>,
    /// Restricted assessment contrasts, indexed `[j1][a1][j2]`.
    pub beta: Vec<Vec<Vec<Vec<f64>>>>,
    /// Pseudo-outcomes, indexed `[j1][j2][row]`.
    pub y2c: Vec<Vec<Vec<f64>>>,
}

/// Both stage-2 fits together.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Fit {
    pub treatment: Stage2Treatment,
    pub assessment: Stage2Assessment,
}

/// Output of the stage-1 treatment fit.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Treatment {
    /// Full-design stage-1 contrasts over `(s1 [, 1])`, indexed `[j1]`.
    pub gamma_bar: Vec<Vec<f64>>,
    /// Restricted stage-1 contrasts, indexed `[j1]`.
    pub gamma: Vec<Vec<f64>>,
    /// Stage-1 pseudo-outcomes, indexed `[j1][row]`.
    pub y1t: Vec<Vec<f64>>,
    /// Out-of-fold stage-1 outcome-nuisance predictions, indexed `[j1][row]`.
    pub f1_oof: Vec<Vec<f64>>,
    /// Out-of-fold stage-1 propensity predictions.
    pub g1_oof: Vec<f64>,
    /// Lasso penalty the stage-1 contrast fit resolved to, when applicable.
    pub(crate) used_pen1: Option<f64>,
}

/// Output of the stage-1 assessment fit.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Assessment {
    /// Assessment-contrast coefficients over the baseline design, `[j1]`.
    pub delta: Vec<Vec<f64>>,
    /// Pseudo-outcomes, indexed `[j1][row]`.
    pub y1c: Vec<Vec<f64>>,
}

fn validated_ctx<'a>(
    d: &'a Dataset,
    cat: &'a AssessmentCatalog,
    costs: &CostSpec,
    cfg: &'a BqlConfig,
    solver: ContrastSolver,
) -> Result<Ctx<'a>> {
    cfg.validate()?;
    cat.validate()?;
    costs.validate(cat)?;
    if d.d1 != cat.d1 || d.d2 != cat.d2 {
        return Err(Error::Config(format!(
            "catalog dimensions ({}, {}) do not match dataset ({}, {})",
            cat.d1, cat.d2, d.d1, d.d2
        )));
    }
    let violations = validate_dataset(d);
    if !violations.is_empty() {
        return Err(Error::Data(format!(
            "dataset has {} violation(s); first: {}",
            violations.len(),
            violations[0]
        )));
    }
    Ctx::new(d, cat, costs, cfg, cfg.seed, solver)
}

/// Cross-fitted stage-2 nuisance predictions and residuals on a dataset.
/// Shared by the balanced pipeline and the comparator fits so that equal
/// seeds give byte-equal nuisance behavior.
#[derive(Debug, Clone)]
pub(crate) struct Stage2Residuals {
    pub plan: FoldPlan,
    pub f2_oof: Vec<f64>,
    pub g2_oof: Vec<f64>,
    /// Outcome residuals `y - f2`.
    pub rf: Vec<f64>,
    /// Treatment residuals `a2 - g2`.
    pub rg: Vec<f64>,
}

pub(crate) fn stage2_residuals(d: &Dataset, cfg: &BqlConfig) -> Result<Stage2Residuals> {
    cfg.validate()?;
    let n = d.n();
    let plan = make_folds(n, cfg.k_folds, derive_seed(cfg.seed, &[TAG_FOLDS]))?;
    for k in 0..plan.k {
        let rows = plan.complement_rows(k);
        for (stage, get) in [
            (1, (|t: &crate::data::Trajectory| t.a1) as fn(&crate::data::Trajectory) -> f64),
            (2, |t: &crate::data::Trajectory| t.a2),
        ] {
            for arm in [0.0, 1.0] {
                if !rows.iter().any(|&i| get(&d.trajectories[i]) == arm) {
                    return Err(Error::Config(format!(
                        "training complement of fold {k} is missing treatment arm {arm} at \
                         stage {stage}; positivity fails on this split"
                    )));
                }
            }
        }
    }
    let x2: Vec<Vec<f64>> = d
        .trajectories
        .iter()
        .map(|t| crate::data::assemble_design(&[&t.s1, &t.s2, &[t.a1]], false))
        .collect();
    let y: Vec<f64> = d.trajectories.iter().map(|t| t.y).collect();
    let a2: Vec<f64> = d.trajectories.iter().map(|t| t.a2).collect();
    let f2 = fit_crossfit(&x2, &y, &plan, &cfg.f2, None, derive_seed(cfg.seed, &[TAG_F2]))?;
    let g2 = fit_crossfit(
        &x2,
        &a2,
        &plan,
        &cfg.g2,
        Some(PROPENSITY_CLIP),
        derive_seed(cfg.seed, &[TAG_G2]),
    )?;
    let rf: Vec<f64> = (0..n).map(|i| y[i] - f2.oof[i]).collect();
    let rg: Vec<f64> = (0..n).map(|i| a2[i] - g2.oof[i]).collect();
    Ok(Stage2Residuals { plan, f2_oof: f2.oof, g2_oof: g2.oof, rf, rg })
}

/// Steps behind the stage-2 treatment rule: cross-fitted nuisances, the
/// residual-on-residual contrast fit (with the treatment-cost difference as
/// offset), and one nested projection per `(j1, a1, j2)`.
fn stage2_treatment_inner(ctx: &Ctx) -> Result<Stage2Treatment> {
    let n = ctx.n();
    let res = stage2_residuals(ctx.d, ctx.cfg)?;
    let designs: Vec<Vec<f64>> = (0..n).map(|i| ctx.full2(i)).collect();
    let offset = ctx.costs.c2t.1 - ctx.costs.c2t.0;
    let (is_lasso, pen) = match &ctx.solver {
        ContrastSolver::MinNorm => (false, None),
        ContrastSolver::Lasso { stage2, .. } => (true, *stage2),
    };
    let (alpha_bar, used_pen2) = solve_contrast(
        &res.rf,
        &res.rg,
        &designs,
        offset,
        pen,
        is_lasso,
        derive_seed(ctx.seed, &[TAG_PEN2]),
    )?;
    let (plan, f2, g2) = (res.plan, res.f2_oof, res.g2_oof);

    let mut alpha = Vec::with_capacity(ctx.cat.cand1.len());
    for j1 in 0..ctx.cat.cand1.len() {
        let mut per_a1 = Vec::with_capacity(2);
        for a1 in [0.0, 1.0] {
            let target: Vec<f64> =
                (0..n).map(|i| dot(&ctx.full2_at(i, a1), &alpha_bar)).collect();
            let mut per_j2 = Vec::with_capacity(ctx.cat.cand2.len());
            for j2 in 0..ctx.cat.cand2.len() {
                let z: Vec<Vec<f64>> = (0..n).map(|i| ctx.sjbar2(i, j1, j2)).collect();
                per_j2.push(nested_projection(&target, &z)?.coefficients);
            }
            per_a1.push(per_j2);
        }
        alpha.push(per_a1);
    }
    Ok(Stage2Treatment { alpha_bar, alpha, plan, f2_oof: f2, g2_oof: g2, used_pen2 })
}

fn a1_idx(a1: f64) -> usize {
    usize::from(a1 > 0.5)
}

/// Indicator of the restricted stage-2 rule recommending treatment.
fn stage2_rule(ctx: &Ctx, t2: &Stage2Treatment, i: usize, j1: usize, a1: f64, j2: usize) -> f64 {
    let score = dot(&ctx.sjbar2(i, j1, j2), &t2.alpha[j1][a1_idx(a1)][j2]);
    f64::from(score > 0.0)
}

/// Pseudo-outcomes and nested regressions behind the stage-2 assessment
/// rule. The full-information candidate is the contrast's own baseline, so
/// its coefficients are identically zero.
fn stage2_assessment_inner(ctx: &Ctx, t2: &Stage2Treatment) -> Result<Stage2Assessment> {
    let n = ctx.n();
    let j2f = ctx.cat.j2_full_idx();
    let contrast_full: Vec<f64> = (0..n).map(|i| dot(&ctx.full2(i), &t2.alpha_bar)).collect();
    let mut beta_bar = Vec::with_capacity(ctx.cat.cand1.len());
    let mut beta = Vec::with_capacity(ctx.cat.cand1.len());
    let mut y2c_all = Vec::with_capacity(ctx.cat.cand1.len());
    for j1 in 0..ctx.cat.cand1.len() {
        let mut bb_j1 = Vec::with_capacity(ctx.cat.cand2.len());
        let mut y2c_j1 = Vec::with_capacity(ctx.cat.cand2.len());
        let xl2f_rows: Vec<Vec<f64>> = (0..n).map(|i| ctx.xl2f(i)).collect();
        for j2 in 0..ctx.cat.cand2.len() {
            let y2c: Vec<f64> = (0..n)
                .map(|i| {
                    let a1 = ctx.t(i).a1;
                    let gap = stage2_rule(ctx, t2, i, j1, a1, j2)
                        - stage2_rule(ctx, t2, i, j1, a1, j2f);
                    contrast_full[i] * gap - ctx.costs.c2c[j2] + ctx.costs.c2c[j2f]
                })
                .collect();
            bb_j1.push(ols(&xl2f_rows, &y2c)?.coefficients);
            y2c_j1.push(y2c);
        }
        let mut b_j1 = Vec::with_capacity(2);
        for a1 in [0.0, 1.0] {
            let z: Vec<Vec<f64>> = (0..n).map(|i| ctx.sl2bar(i, j1)).collect();
            let mut per_j2 = Vec::with_capacity(ctx.cat.cand2.len());
            for bb in &bb_j1 {
                let target: Vec<f64> =
                    (0..n).map(|i| dot(&ctx.xl2f_at(i, a1), bb)).collect();
                per_j2.push(nested_projection(&target, &z)?.coefficients);
            }
            b_j1.push(per_j2);
        }
        beta_bar.push(bb_j1);
        beta.push(b_j1);
        y2c_all.push(y2c_j1);
    }
    Ok(Stage2Assessment { beta_bar, beta, y2c: y2c_all })
}

/// Stage-1 pseudo-outcomes: realized outcome, stage-2 treatment correction,
/// and the value of the estimated stage-2 assessment choice, minus costs.
fn compute_y1t(ctx: &Ctx, fit: &Stage2Fit) -> Vec<Vec<f64>> {
    let n = ctx.n();
    let j2f = ctx.cat.j2_full_idx();
    let t2 = &fit.treatment;
    let contrast_full: Vec<f64> = (0..n).map(|i| dot(&ctx.full2(i), &t2.alpha_bar)).collect();
    (0..ctx.cat.cand1.len())
        .map(|j1| {
            (0..n)
                .map(|i| {
                    let t = ctx.t(i);
                    let a1 = t.a1;
                    let sl2bar = ctx.sl2bar(i, j1);
                    let scores: Vec<f64> = (0..ctx.cat.cand2.len())
                        .map(|j2| dot(&sl2bar, &fit.assessment.beta[j1][a1_idx(a1)][j2]))
                        .collect();
                    let chosen = argmax_lowest(&scores);
                    t.y - ctx.costs.c2t_of(t.a2)
                        + contrast_full[i] * (stage2_rule(ctx, t2, i, j1, a1, j2f) - t.a2)
                        - ctx.costs.c2c[j2f]
                        + dot(&ctx.xl2f(i), &fit.assessment.beta_bar[j1][chosen])
                        - ctx.costs.c1t_of(a1)
                })
                .collect()
        })
        .collect()
}

fn stage2_chain(ctx: &Ctx) -> Result<Stage2Fit> {
    let treatment = stage2_treatment_inner(ctx)?;
    let assessment = stage2_assessment_inner(ctx, &treatment)?;
    Ok(Stage2Fit { treatment, assessment })
}

/// Stage-1 treatment fit. For each outer fold the whole stage-2 chain is
/// re-run on the fold's complement (with a fresh inner split) to produce
/// cross-fitted pseudo-outcomes; the stage-1 nuisances are trained on those,
/// while the residual regression itself uses the full-sample pseudo-outcomes
/// centered by the cross-fitted outcome nuisance.
fn stage1_treatment_inner(ctx: &Ctx, fit: &Stage2Fit) -> Result<Stage1Treatment> {
    let n = ctx.n();
    let n_j1 = ctx.cat.cand1.len();
    let plan = &fit.treatment.plan;
    let y1t = compute_y1t(ctx, fit);

    let mut f1_oof = vec![vec![0.0; n]; n_j1];
    let mut g1_oof = vec![0.0; n];
    for k in 0..plan.k {
        let train = plan.complement_rows(k);
        let k_folds = ctx.cfg.k_folds;
        if train.len() < k_folds {
            let min_n = (k_folds * k_folds).div_ceil(k_folds - 1);
            return Err(Error::Config(format!(
                "fold {k} leaves only {} rows for the inner stage-2 re-run; \
                 need at least {k_folds} (total n of at least {min_n})",
                train.len()
            )));
        }
        let sub = ctx.d.subset(&train);
        let inner_seed = derive_seed(ctx.seed, &[TAG_INNER, k as u64]);
        let mut inner_cfg = ctx.cfg.clone();
        inner_cfg.seed = inner_seed;
        // The inner re-run inherits the resolved stage-2 penalty so it never
        // nests another cross-validation.
        let inner_solver = match &ctx.solver {
            ContrastSolver::MinNorm => ContrastSolver::MinNorm,
            ContrastSolver::Lasso { stage1, .. } => ContrastSolver::Lasso {
                stage2: fit.treatment.used_pen2,
                stage1: *stage1,
            },
        };
        // ctx.costs already carries the trade-off scalar (lambda = 1), so
        // re-adjusting inside the inner context is the identity.
        let inner_ctx = Ctx::new(&sub, ctx.cat, &ctx.costs, &inner_cfg, inner_seed, inner_solver)?;
        let inner_fit = stage2_chain(&inner_ctx)?;
        let y1t_sub = compute_y1t(&inner_ctx, &inner_fit);

        let s1_train: Vec<Vec<f64>> = sub.trajectories.iter().map(|t| t.s1.clone()).collect();
        let a1_train: Vec<f64> = sub.trajectories.iter().map(|t| t.a1).collect();
        let (g1_model, _) = fit_learner(
            &s1_train,
            &a1_train,
            &ctx.cfg.g1,
            derive_seed(ctx.seed, &[TAG_G1, k as u64]),
        )?;
        let f1_models: Vec<Predictor> = (0..n_j1)
            .map(|j1| {
                fit_learner(
                    &s1_train,
                    &y1t_sub[j1],
                    &ctx.cfg.f1,
                    derive_seed(ctx.seed, &[TAG_F1, k as u64, j1 as u64]),
                )
                .map(|(m, _)| m)
            })
            .collect::<Result<_>>()?;
        for &i in &plan.fold_rows(k) {
            let s1 = &ctx.t(i).s1;
            g1_oof[i] = g1_model.predict(s1).clamp(PROPENSITY_CLIP.0, PROPENSITY_CLIP.1);
            for (j1, m) in f1_models.iter().enumerate() {
                f1_oof[j1][i] = m.predict(s1);
            }
        }
    }

    let rg1: Vec<f64> = (0..n).map(|i| ctx.t(i).a1 - g1_oof[i]).collect();
    let s1_designs: Vec<Vec<f64>> = (0..n).map(|i| ctx.s1v(i)).collect();
    let mut gamma_bar = Vec::with_capacity(n_j1);
    let mut gamma = Vec::with_capacity(n_j1);
    let mut used_pen1 = None;
    let (is_lasso, pen1) = match &ctx.solver {
        ContrastSolver::MinNorm => (false, None),
        ContrastSolver::Lasso { stage1, .. } => (true, *stage1),
    };
    for j1 in 0..n_j1 {
        let rf1: Vec<f64> = (0..n).map(|i| y1t[j1][i] - f1_oof[j1][i]).collect();
        let (gb, pen_used) = solve_contrast(
            &rf1,
            &rg1,
            &s1_designs,
            0.0,
            pen1,
            is_lasso,
            derive_seed(ctx.seed, &[TAG_PEN1, j1 as u64]),
        )?;
        used_pen1 = used_pen1.or(pen_used);
        let target: Vec<f64> = (0..n).map(|i| dot(&s1_designs[i], &gb)).collect();
        let z: Vec<Vec<f64>> = (0..n).map(|i| ctx.sj1bar(i, j1)).collect();
        gamma.push(nested_projection(&target, &z)?.coefficients);
        gamma_bar.push(gb);
    }
    Ok(Stage1Treatment { gamma_bar, gamma, y1t, f1_oof, g1_oof, used_pen1 })
}

/// Stage-1 assessment fit: contrast each candidate's pseudo-outcome against
/// the full-information candidate and regress on the baseline design. The
/// full candidate's own contrast is identically zero.
fn stage1_assessment_inner(ctx: &Ctx, t1: &Stage1Treatment) -> Result<Stage1Assessment> {
    let n = ctx.n();
    let n_j1 = ctx.cat.cand1.len();
    let j1f = ctx.cat.j1_full_idx();
    let y1c: Vec<Vec<f64>> = (0..n_j1)
        .map(|j1| {
            (0..n)
                .map(|i| {
                    let rule = f64::from(dot(&ctx.sj1bar(i, j1), &t1.gamma[j1]) > 0.0);
                    t1.y1t[j1][i]
                        + dot(&ctx.s1v(i), &t1.gamma_bar[j1]) * (rule - ctx.t(i).a1)
                        - ctx.costs.c1c[j1]
                })
                .collect()
        })
        .collect();
    let z: Vec<Vec<f64>> = (0..n).map(|i| ctx.sl1(i)).collect();
    let delta = (0..n_j1)
        .map(|j1| {
            let resp: Vec<f64> = (0..n).map(|i| y1c[j1][i] - y1c[j1f][i]).collect();
            Ok(ols(&z, &resp)?.coefficients)
        })
        .collect::<Result<_>>()?;
    Ok(Stage1Assessment { delta, y1c })
}

/// Fits the stage-2 treatment contrast and its restrictions.
pub fn fit_stage2_treatment(
    d: &Dataset,
    cat: &AssessmentCatalog,
    costs: &CostSpec,
    cfg: &BqlConfig,
) -> Result<Stage2Treatment> {
    let ctx = validated_ctx(d, cat, costs, cfg, ContrastSolver::MinNorm)?;
    stage2_treatment_inner(&ctx)
}

/// Fits the stage-2 assessment contrasts given a stage-2 treatment fit.
pub fn fit_stage2_assessment(
    d: &Dataset,
    cat: &AssessmentCatalog,
    costs: &CostSpec,
    cfg: &BqlConfig,
    treatment: &Stage2Treatment,
) -> Result<Stage2Assessment> {
    let ctx = validated_ctx(d, cat, costs, cfg, ContrastSolver::MinNorm)?;
    stage2_assessment_inner(&ctx, treatment)
}

/// Fits the stage-1 treatment contrasts given the stage-2 fit.
pub fn fit_stage1_treatment(
    d: &Dataset,
    cat: &AssessmentCatalog,
    costs: &CostSpec,
    cfg: &BqlConfig,
    stage2: &Stage2Fit,
) -> Result<Stage1Treatment> {
    let ctx = validated_ctx(d, cat, costs, cfg, ContrastSolver::MinNorm)?;
    stage1_treatment_inner(&ctx, stage2)
}

/// Fits the stage-1 assessment contrasts given the earlier stages.
pub fn fit_stage1_assessment(
    d: &Dataset,
    cat: &AssessmentCatalog,
    costs: &CostSpec,
    cfg: &BqlConfig,
    stage1t: &Stage1Treatment,
) -> Result<Stage1Assessment> {
    let ctx = validated_ctx(d, cat, costs, cfg, ContrastSolver::MinNorm)?;
    stage1_assessment_inner(&ctx, stage1t)
}

/// All coefficient families of a fitted balanced Q-learning regime, plus
/// the catalog, costs, and fit metadata needed to deploy it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedRegime {
    pub version: u32,
    pub catalog: AssessmentCatalog,
    pub costs: CostSpec,
    pub config: BqlConfig,
    pub n: usize,
    /// Stage-2 contrast over the full design.
    pub alpha_bar: Vec<f64>,
    /// Restricted stage-2 treatment contrasts, `[j1][a1][j2]`.
    pub alpha: Vec<Vec<Vec<Vec<f64>>>>,
    /// Full-design stage-2 assessment contrasts, `[j1][j2]`.
    pub beta_bar: Vec<Vec<Vec<f64>>>,
    /// Restricted stage-2 assessment contrasts, `[j1][a1][j2]`.
    pub beta: Vec<Vec<Vec<Vec<f64>>>>,
    /// Full-design stage-1 treatment contrasts, `[j1]`.
    pub gamma_bar: Vec<Vec<f64>>,
    /// Restricted stage-1 treatment contrasts, `[j1]`.
    pub gamma: Vec<Vec<f64>>,
    /// Stage-1 assessment contrasts over the baseline design, `[j1]`.
    pub delta: Vec<Vec<f64>>,
    /// Largest stage-1 covariate norm seen in training.
    pub train_norm_s1: f64,
    /// Largest joint stage-1/stage-2 covariate norm seen in training.
    pub train_norm_s2: f64,
}

/// Intermediate quantities of a fit, retained for covariance estimation.
#[derive(Debug, Clone, PartialEq)]
pub struct FitArtifacts {
    pub plan: FoldPlan,
    pub f2_oof: Vec<f64>,
    pub g2_oof: Vec<f64>,
    /// `[j1][j2][row]`
    pub y2c: Vec<Vec<Vec<f64>>>,
    /// `[j1][row]`
    pub y1t: Vec<Vec<f64>>,
    pub f1_oof: Vec<Vec<f64>>,
    pub g1_oof: Vec<f64>,
    pub y1c: Vec<Vec<f64>>,
}

/// Penalties the lasso solver resolved to, reported back to the sparse
/// comparator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct UsedPenalties {
    pub stage2: Option<f64>,
    pub stage1: Option<f64>,
}

/// Runs the complete pipeline with an explicit contrast solver.
pub(crate) fn fit_with_solver(
    d: &Dataset,
    cat: &AssessmentCatalog,
    costs: &CostSpec,
    cfg: &BqlConfig,
    solver: ContrastSolver,
) -> Result<(FittedRegime, FitArtifacts, UsedPenalties)> {
    let ctx = validated_ctx(d, cat, costs, cfg, solver)?;
    let stage2 = stage2_chain(&ctx).map_err(|e| label_stage("stage-2", e))?;
    let stage1t =
        stage1_treatment_inner(&ctx, &stage2).map_err(|e| label_stage("stage-1 treatment", e))?;
    let stage1c =
        stage1_assessment_inner(&ctx, &stage1t).map_err(|e| label_stage("stage-1 assessment", e))?;

    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let train_norm_s1 =
        d.trajectories.iter().map(|t| norm(&t.s1)).fold(0.0_f64, f64::max);
    let train_norm_s2 = d
        .trajectories
        .iter()
        .map(|t| (norm(&t.s1).powi(2) + norm(&t.s2).powi(2)).sqrt())
        .fold(0.0_f64, f64::max);

    let regime = FittedRegime {
        version: 1,
        catalog: cat.clone(),
        costs: costs.clone(),
        config: cfg.clone(),
        n: d.n(),
        alpha_bar: stage2.treatment.alpha_bar.clone(),
        alpha: stage2.treatment.alpha.clone(),
        beta_bar: stage2.assessment.beta_bar.clone(),
        beta: stage2.assessment.beta.clone(),
        gamma_bar: stage1t.gamma_bar.clone(),
        gamma: stage1t.gamma.clone(),
        delta: stage1c.delta.clone(),
        train_norm_s1,
        train_norm_s2,
    };
    let artifacts = FitArtifacts {
        plan: stage2.treatment.plan,
        f2_oof: stage2.treatment.f2_oof,
        g2_oof: stage2.treatment.g2_oof,
        y2c: stage2.assessment.y2c,
        y1t: stage1t.y1t,
        f1_oof: stage1t.f1_oof,
        g1_oof: stage1t.g1_oof,
        y1c: stage1c.y1c,
    };
    let penalties =
        UsedPenalties { stage2: stage2.treatment.used_pen2, stage1: stage1t.used_pen1 };
    Ok((regime, artifacts, penalties))
}

/// Runs the complete pipeline and also returns the fit artifacts needed by
/// plug-in covariance estimation.
pub fn fit_bql_with_artifacts(
    d: &Dataset,
    cat: &AssessmentCatalog,
    costs: &CostSpec,
    cfg: &BqlConfig,
) -> Result<(FittedRegime, FitArtifacts)> {
    fit_with_solver(d, cat, costs, cfg, ContrastSolver::MinNorm).map(|(r, a, _)| (r, a))
}

/// Prefixes a stage label onto an error message, keeping the variant.
fn label_stage(stage: &str, e: Error) -> Error {
    match e {
        Error::Config(m) => Error::Config(format!("{stage}: {m}")),
        Error::Data(m) => Error::Data(format!("{stage}: {m}")),
        Error::Dimension(m) => Error::Dimension(format!("{stage}: {m}")),
        Error::Numeric(m) => Error::Numeric(format!("{stage}: {m}")),
        Error::Eval(m) => Error::Eval(format!("{stage}: {m}")),
        other => other,
    }
}

/// Balanced Q-learning: orchestrates every stage in order and returns the
/// fitted regime. Deterministic given the seed.
pub fn fit_bql(
    d: &Dataset,
    cat: &AssessmentCatalog,
    costs: &CostSpec,
    cfg: &BqlConfig,
) -> Result<FittedRegime> {
    fit_bql_with_artifacts(d, cat, costs, cfg).map(|(r, _)| r)
}

impl FittedRegime {
    fn with_intercept(&self, parts: &[&[f64]]) -> Vec<f64> {
        crate::data::assemble_design(parts, self.config.intercept)
    }
}

impl Policy for FittedRegime {
    fn catalog(&self) -> &AssessmentCatalog {
        &self.catalog
    }

    fn stage1_assessment(&self, s_l1: &[f64]) -> Result<(usize, Vec<f64>)> {
        let design = self.with_intercept(&[s_l1]);
        let scores: Vec<f64> = self
            .delta
            .iter()
            .map(|coef| {
                if coef.len() != design.len() {
                    return Err(Error::Dimension(format!(
                        "stage-1 assessment rule expects design length {}, got {}",
                        coef.len(),
                        design.len()
                    )));
                }
                Ok(dot(&design, coef))
            })
            .collect::<Result<_>>()?;
        Ok((argmax_lowest(&scores), scores))
    }

    fn stage1_treatment(&self, j1: usize, s_l1: &[f64], s_j1: &[f64]) -> Result<(f64, f64)> {
        let design = self.with_intercept(&[s_l1, s_j1]);
        let coef = &self.gamma[j1];
        if coef.len() != design.len() {
            return Err(Error::Dimension(format!(
                "stage-1 treatment rule expects design length {}, got {}",
                coef.len(),
                design.len()
            )));
        }
        let score = dot(&design, coef);
        Ok((treatment_from_score(score), score))
    }

    fn stage2_assessment(
        &self,
        j1: usize,
        a1: f64,
        s_l1: &[f64],
        s_j1: &[f64],
        s_l2: &[f64],
    ) -> Result<(usize, Vec<f64>)> {
        let design = self.with_intercept(&[s_l1, s_j1, s_l2]);
        let fam = &self.beta[j1][a1_idx(a1)];
        let scores: Vec<f64> = fam
            .iter()
            .map(|coef| {
                if coef.len() != design.len() {
                    return Err(Error::Dimension(format!(
                        "stage-2 assessment rule expects design length {}, got {}",
                        coef.len(),
                        design.len()
                    )));
                }
                Ok(dot(&design, coef))
            })
            .collect::<Result<_>>()?;
        Ok((argmax_lowest(&scores), scores))
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
        let design = self.with_intercept(&[s_l1, s_j1, s_l2, s_j2]);
        let coef = &self.alpha[j1][a1_idx(a1)][j2];
        if coef.len() != design.len() {
            return Err(Error::Dimension(format!(
                "stage-2 treatment rule expects design length {}, got {}",
                coef.len(),
                design.len()
            )));
        }
        let score = dot(&design, coef);
        Ok((treatment_from_score(score), score))
    }

    fn design_norm_bounds(&self) -> Option<(f64, f64)> {
        Some((self.train_norm_s1, self.train_norm_s2))
    }
}
