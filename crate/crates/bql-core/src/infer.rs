//! Plug-in asymptotic covariance matrices and confidence intervals for the
//! fitted linear parameter families.
//!
//! Every family's limiting covariance is a sandwich whose meat stacks the
//! family's own residual term with the influence contributions of the
//! estimated quantities it was built from: restricted stage-2 projections
//! feed on the stage-2 contrast fit, assessment contrasts feed on both, and
//! the stage-1 assessment family chains through everything below it. All
//! population expectations are replaced by sample averages, unknown
//! functions by their cross-fitted estimates, and indicator events by their
//! fitted versions with strict inequalities (ties count as the lower
//! catalog position, mirroring fit-time tie-breaking).
//!
//! Standard errors describe `sqrt(n) * (estimate - target)`, where the
//! targets are the population working-model parameters (best linear
//! approximations), not the true nonlinear contrasts.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::bql::{FitArtifacts, FittedRegime};
use crate::data::{assemble_design, subvector, CostSpec, Dataset};
use crate::deploy::argmax_lowest;
use crate::error::{Error, Result};
use crate::regress::dot;

/// Which fitted linear parameter a covariance report describes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum ParamFamily {
    AlphaBar,
    Alpha { j1: usize, a1: u8, j2: usize },
    BetaBar { j1: usize, j2: usize },
    Beta { j1: usize, a1: u8, j2: usize },
    GammaBar { j1: usize },
    Gamma { j1: usize },
    Delta { j1: usize },
}

impl std::fmt::Display for ParamFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParamFamily::AlphaBar => write!(f, "alpha_bar"),
            ParamFamily::Alpha { j1, a1, j2 } => write!(f, "alpha[{j1},{a1},{j2}]"),
            ParamFamily::BetaBar { j1, j2 } => write!(f, "beta_bar[{j1},{j2}]"),
            ParamFamily::Beta { j1, a1, j2 } => write!(f, "beta[{j1},{a1},{j2}]"),
            ParamFamily::GammaBar { j1 } => write!(f, "gamma_bar[{j1}]"),
            ParamFamily::Gamma { j1 } => write!(f, "gamma[{j1}]"),
            ParamFamily::Delta { j1 } => write!(f, "delta[{j1}]"),
        }
    }
}

/// Estimated limiting covariance of `sqrt(n) * (estimate - target)` for one
/// parameter family, with per-coordinate standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceReport {
    pub family: ParamFamily,
    pub estimate: Vec<f64>,
    /// Row-major covariance matrix of the scaled estimator.
    pub covariance: Vec<Vec<f64>>,
    pub std_errors: Vec<f64>,
    pub n: usize,
    /// Set when more than 1% of the fitted decision scores behind the
    /// plugged-in indicator events sit within 1e-6 of a boundary, where
    /// the strict-inequality plug-in is least trustworthy.
    pub boundary_flagged: bool,
}

struct Ctx<'a> {
    regime: &'a FittedRegime,
    d: &'a Dataset,
    art: &'a FitArtifacts,
    /// Costs with the trade-off already applied, as used at fit time.
    costs: CostSpec,
    n: usize,
    x2: Vec<Vec<f64>>,
    xl2f: Vec<Vec<f64>>,
    s1v: Vec<Vec<f64>>,
    sl1: Vec<Vec<f64>>,
    s_l1: Vec<Vec<f64>>,
    s_j1: Vec<Vec<Vec<f64>>>,
    s_l2: Vec<Vec<f64>>,
    s_j2: Vec<Vec<Vec<f64>>>,
}

impl<'a> Ctx<'a> {
    fn new(regime: &'a FittedRegime, d: &'a Dataset, art: &'a FitArtifacts) -> Result<Self> {
        if d.n() != art.g1_oof.len() || d.n() != art.f2_oof.len() {
            return Err(Error::Dimension(
                "fit artifacts do not match the dataset they were computed on".into(),
            ));
        }
        let cat = &regime.catalog;
        let ic = regime.config.intercept;
        let n = d.n();
        let x2 = d
            .trajectories
            .iter()
            .map(|t| assemble_design(&[&t.s1, &t.s2, &[t.a1]], ic))
            .collect();
        let s_l1: Vec<Vec<f64>> = d
            .trajectories
            .iter()
            .map(|t| subvector(&t.s1, &cat.l1))
            .collect::<Result<_>>()?;
        let s_l2: Vec<Vec<f64>> = d
            .trajectories
            .iter()
            .map(|t| subvector(&t.s2, &cat.l2))
            .collect::<Result<_>>()?;
        let s_j1: Vec<Vec<Vec<f64>>> = cat
            .cand1
            .iter()
            .map(|c| d.trajectories.iter().map(|t| subvector(&t.s1, c)).collect::<Result<_>>())
            .collect::<Result<_>>()?;
        let s_j2: Vec<Vec<Vec<f64>>> = cat
            .cand2
            .iter()
            .map(|c| d.trajectories.iter().map(|t| subvector(&t.s2, c)).collect::<Result<_>>())
            .collect::<Result<_>>()?;
        let xl2f = (0..n)
            .map(|i| {
                let t = &d.trajectories[i];
                assemble_design(&[&t.s1, &s_l2[i], &[t.a1]], ic)
            })
            .collect();
        let s1v = d.trajectories.iter().map(|t| assemble_design(&[&t.s1], ic)).collect();
        let sl1 = (0..n).map(|i| assemble_design(&[&s_l1[i]], ic)).collect();
        Ok(Ctx {
            regime,
            d,
            art,
            costs: regime.costs.lambda_adjusted(),
            n,
            x2,
            xl2f,
            s1v,
            sl1,
            s_l1,
            s_j1,
            s_l2,
            s_j2,
        })
    }

    fn ic(&self) -> bool {
        self.regime.config.intercept
    }

    fn x2_at(&self, i: usize, a1: f64) -> Vec<f64> {
        let t = &self.d.trajectories[i];
        assemble_design(&[&t.s1, &t.s2, &[a1]], self.ic())
    }

    fn xl2f_at(&self, i: usize, a1: f64) -> Vec<f64> {
        let t = &self.d.trajectories[i];
        assemble_design(&[&t.s1, &self.s_l2[i], &[a1]], self.ic())
    }

    fn sjbar2(&self, i: usize, j1: usize, j2: usize) -> Vec<f64> {
        assemble_design(
            &[&self.s_l1[i], &self.s_j1[j1][i], &self.s_l2[i], &self.s_j2[j2][i]],
            self.ic(),
        )
    }

    fn sl2bar(&self, i: usize, j1: usize) -> Vec<f64> {
        assemble_design(&[&self.s_l1[i], &self.s_j1[j1][i], &self.s_l2[i]], self.ic())
    }

    fn sj1bar(&self, i: usize, j1: usize) -> Vec<f64> {
        assemble_design(&[&self.s_l1[i], &self.s_j1[j1][i]], self.ic())
    }

    fn a1_idx(&self, i: usize) -> usize {
        usize::from(self.d.trajectories[i].a1 > 0.5)
    }

    /// Fitted restricted stage-2 rule indicator at the observed `a1`.
    fn rule2(&self, i: usize, j1: usize, j2: usize) -> f64 {
        let score = dot(&self.sjbar2(i, j1, j2), &self.regime.alpha[j1][self.a1_idx(i)][j2]);
        f64::from(score > 0.0)
    }

    /// Fitted stage-2 assessment choice (argmax over candidates, ties to
    /// the lower position).
    fn chosen2(&self, i: usize, j1: usize) -> usize {
        let design = self.sl2bar(i, j1);
        let scores: Vec<f64> = (0..self.regime.catalog.cand2.len())
            .map(|j2| dot(&design, &self.regime.beta[j1][self.a1_idx(i)][j2]))
            .collect();
        argmax_lowest(&scores)
    }
}

/// Fraction of fitted decision scores within `1e-6` of their boundary
/// (stage-2 sign rules, stage-2 argmax margins, stage-1 sign rules).
fn boundary_fraction(ctx: &Ctx) -> f64 {
    let mut near = 0usize;
    let mut total = 0usize;
    let n_j1 = ctx.regime.catalog.cand1.len();
    let n_j2 = ctx.regime.catalog.cand2.len();
    for i in 0..ctx.n {
        for j1 in 0..n_j1 {
            for j2 in 0..n_j2 {
                let score =
                    dot(&ctx.sjbar2(i, j1, j2), &ctx.regime.alpha[j1][ctx.a1_idx(i)][j2]);
                near += usize::from(score.abs() < 1e-6);
                total += 1;
            }
            let design = ctx.sl2bar(i, j1);
            let mut scores: Vec<f64> = (0..n_j2)
                .map(|j2| dot(&design, &ctx.regime.beta[j1][ctx.a1_idx(i)][j2]))
                .collect();
            scores.sort_by(|a, b| b.partial_cmp(a).unwrap());
            if scores.len() > 1 {
                near += usize::from((scores[0] - scores[1]).abs() < 1e-6);
                total += 1;
            }
            let s1_score = dot(&ctx.sj1bar(i, j1), &ctx.regime.gamma[j1]);
            near += usize::from(s1_score.abs() < 1e-6);
            total += 1;
        }
    }
    near as f64 / total.max(1) as f64
}

fn inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone().try_inverse().ok_or_else(|| {
        Error::Numeric(format!(
            "{what} is singular; the plug-in covariance needs more data or fewer columns"
        ))
    })
}

fn symmetrize(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let p = m.nrows();
    for a in 0..p {
        for b in (a + 1)..p {
            m[(a, b)] = m[(b, a)];
        }
    }
    m
}

fn weighted_gram(designs: &[Vec<f64>], weights: impl Fn(usize) -> f64) -> DMatrix<f64> {
    let p = designs[0].len();
    let mut m = DMatrix::zeros(p, p);
    for (i, row) in designs.iter().enumerate() {
        let v = DVector::from_column_slice(row);
        m.syger(weights(i), &v, &v, 1.0);
    }
    symmetrize(m / designs.len() as f64)
}

fn mean_outer(vectors: &[DVector<f64>]) -> DMatrix<f64> {
    let p = vectors[0].len();
    let mut m = DMatrix::zeros(p, p);
    for v in vectors {
        m.syger(1.0, v, v, 1.0);
    }
    symmetrize(m / vectors.len() as f64)
}

/// `(1/n) sum_i w_i * left_i * right_i'` for per-row weights and designs.
fn mean_cross(
    weights: &[f64],
    left: &[Vec<f64>],
    right: &[Vec<f64>],
) -> DMatrix<f64> {
    let p = left[0].len();
    let q = right[0].len();
    let mut m = DMatrix::zeros(p, q);
    for i in 0..left.len() {
        let w = weights[i];
        if w == 0.0 {
            continue;
        }
        for a in 0..p {
            for b in 0..q {
                m[(a, b)] += w * left[i][a] * right[i][b];
            }
        }
    }
    m / left.len() as f64
}

/// The empirical stage-2 weighting matrix `(1/n) sum (a2 - g2)^2 x2 x2'`;
/// exposed so tests can assert self-consistency with the fit.
pub fn v_alpha_hat(regime: &FittedRegime, d: &Dataset, art: &FitArtifacts) -> Result<Vec<Vec<f64>>> {
    let ctx = Ctx::new(regime, d, art)?;
    let m = v_alpha(&ctx);
    Ok((0..m.nrows()).map(|a| (0..m.ncols()).map(|b| m[(a, b)]).collect()).collect())
}

fn v_alpha(ctx: &Ctx) -> DMatrix<f64> {
    weighted_gram(&ctx.x2, |i| {
        (ctx.d.trajectories[i].a2 - ctx.art.g2_oof[i]).powi(2)
    })
}

fn v_gamma(ctx: &Ctx) -> DMatrix<f64> {
    weighted_gram(&ctx.s1v, |i| {
        (ctx.d.trajectories[i].a1 - ctx.art.g1_oof[i]).powi(2)
    })
}

/// Influence vectors of the stage-2 contrast fit.
fn q_alpha(ctx: &Ctx) -> Vec<DVector<f64>> {
    let delta_c2t = ctx.costs.c2t.1 - ctx.costs.c2t.0;
    (0..ctx.n)
        .map(|i| {
            let t = &ctx.d.trajectories[i];
            let rg = t.a2 - ctx.art.g2_oof[i];
            let resid = t.y
                - ctx.art.f2_oof[i]
                - rg * (dot(&ctx.x2[i], &ctx.regime.alpha_bar) + delta_c2t);
            DVector::from_column_slice(&ctx.x2[i]) * (rg * resid)
        })
        .collect()
}

/// Influence vectors of the full-design stage-2 assessment fit for
/// `(j1, j2)`.
fn q_beta_bar(
    ctx: &Ctx,
    qa: &[DVector<f64>],
    va_inv: &DMatrix<f64>,
    j1: usize,
    j2: usize,
) -> Vec<DVector<f64>> {
    let j2f = ctx.regime.catalog.j2_full_idx();
    let gaps: Vec<f64> =
        (0..ctx.n).map(|i| ctx.rule2(i, j1, j2) - ctx.rule2(i, j1, j2f)).collect();
    let coupling = mean_cross(&gaps, &ctx.xl2f, &ctx.x2) * va_inv;
    (0..ctx.n)
        .map(|i| {
            let resid = ctx.art.y2c[j1][j2][i] - dot(&ctx.xl2f[i], &ctx.regime.beta_bar[j1][j2]);
            DVector::from_column_slice(&ctx.xl2f[i]) * resid + &coupling * &qa[i]
        })
        .collect()
}

/// Influence vectors of the full-design stage-1 contrast fit for `j1`.
fn q_gamma_bar(
    ctx: &Ctx,
    qa: &[DVector<f64>],
    va_inv: &DMatrix<f64>,
    h_inv: &DMatrix<f64>,
    j1: usize,
) -> Vec<DVector<f64>> {
    let j2f = ctx.regime.catalog.j2_full_idx();
    let n_j2 = ctx.regime.catalog.cand2.len();
    let rg1: Vec<f64> =
        (0..ctx.n).map(|i| ctx.d.trajectories[i].a1 - ctx.art.g1_oof[i]).collect();

    let w_a: Vec<f64> = (0..ctx.n)
        .map(|i| rg1[i] * (ctx.rule2(i, j1, j2f) - ctx.d.trajectories[i].a2))
        .collect();
    let coupling_a = mean_cross(&w_a, &ctx.s1v, &ctx.x2) * va_inv;

    let chosen: Vec<usize> = (0..ctx.n).map(|i| ctx.chosen2(i, j1)).collect();
    let mut couplings_b = Vec::with_capacity(n_j2);
    let mut qb_all = Vec::with_capacity(n_j2);
    for j2 in 0..n_j2 {
        let w: Vec<f64> =
            (0..ctx.n).map(|i| rg1[i] * f64::from(chosen[i] == j2)).collect();
        couplings_b.push(mean_cross(&w, &ctx.s1v, &ctx.xl2f) * h_inv);
        qb_all.push(q_beta_bar(ctx, qa, va_inv, j1, j2));
    }

    (0..ctx.n)
        .map(|i| {
            let resid = ctx.art.y1t[j1][i]
                - ctx.art.f1_oof[j1][i]
                - rg1[i] * dot(&ctx.s1v[i], &ctx.regime.gamma_bar[j1]);
            let mut q = DVector::from_column_slice(&ctx.s1v[i]) * (rg1[i] * resid);
            q += &coupling_a * &qa[i];
            for j2 in 0..n_j2 {
                q += &couplings_b[j2] * &qb_all[j2][i];
            }
            q
        })
        .collect()
}

fn sandwich(outer_inv: &DMatrix<f64>, q: &[DVector<f64>]) -> DMatrix<f64> {
    outer_inv * mean_outer(q) * outer_inv.transpose()
}

/// Nested-projection influence: the projection's own residual term plus the
/// projected influence of the parent fit.
fn projection_influence(
    z: &[Vec<f64>],
    target: &[f64],
    fitted_coef: &[f64],
    parent_design: &[Vec<f64>],
    parent_outer_inv: &DMatrix<f64>,
    parent_q: &[DVector<f64>],
) -> Vec<DVector<f64>> {
    let n = z.len();
    let ones = vec![1.0; n];
    let coupling = mean_cross(&ones, z, parent_design) * parent_outer_inv;
    (0..n)
        .map(|i| {
            let resid = target[i] - dot(&z[i], fitted_coef);
            DVector::from_column_slice(&z[i]) * resid + &coupling * &parent_q[i]
        })
        .collect()
}

/// Plug-in covariance of one fitted parameter family.
pub fn plugin_covariance(
    regime: &FittedRegime,
    d: &Dataset,
    art: &FitArtifacts,
    family: &ParamFamily,
) -> Result<CovarianceReport> {
    let ctx = Ctx::new(regime, d, art)?;
    let va_inv = inverse(&v_alpha(&ctx), "stage-2 weighting matrix")?;
    let qa = q_alpha(&ctx);
    let gram = |designs: &[Vec<f64>]| weighted_gram(designs, |_| 1.0);

    let (estimate, covariance): (Vec<f64>, DMatrix<f64>) = match family {
        ParamFamily::AlphaBar => (regime.alpha_bar.clone(), sandwich(&va_inv, &qa)),
        ParamFamily::Alpha { j1, a1, j2 } => {
            let z: Vec<Vec<f64>> = (0..ctx.n).map(|i| ctx.sjbar2(i, *j1, *j2)).collect();
            let parent: Vec<Vec<f64>> = (0..ctx.n).map(|i| ctx.x2_at(i, *a1 as f64)).collect();
            let target: Vec<f64> =
                parent.iter().map(|row| dot(row, &regime.alpha_bar)).collect();
            let coef = &regime.alpha[*j1][*a1 as usize][*j2];
            let q = projection_influence(&z, &target, coef, &parent, &va_inv, &qa);
            let g_inv = inverse(&gram(&z), "restricted stage-2 design gram")?;
            (coef.clone(), sandwich(&g_inv, &q))
        }
        ParamFamily::BetaBar { j1, j2 } => {
            let h_inv = inverse(&gram(&ctx.xl2f), "stage-2 assessment design gram")?;
            let q = q_beta_bar(&ctx, &qa, &va_inv, *j1, *j2);
            (regime.beta_bar[*j1][*j2].clone(), sandwich(&h_inv, &q))
        }
        ParamFamily::Beta { j1, a1, j2 } => {
            let h_inv = inverse(&gram(&ctx.xl2f), "stage-2 assessment design gram")?;
            let qb = q_beta_bar(&ctx, &qa, &va_inv, *j1, *j2);
            let z: Vec<Vec<f64>> = (0..ctx.n).map(|i| ctx.sl2bar(i, *j1)).collect();
            let parent: Vec<Vec<f64>> =
                (0..ctx.n).map(|i| ctx.xl2f_at(i, *a1 as f64)).collect();
            let target: Vec<f64> =
                parent.iter().map(|row| dot(row, &regime.beta_bar[*j1][*j2])).collect();
            let coef = &regime.beta[*j1][*a1 as usize][*j2];
            let q = projection_influence(&z, &target, coef, &parent, &h_inv, &qb);
            let g_inv = inverse(&gram(&z), "restricted stage-2 assessment gram")?;
            (coef.clone(), sandwich(&g_inv, &q))
        }
        ParamFamily::GammaBar { j1 } => {
            let h_inv = inverse(&gram(&ctx.xl2f), "stage-2 assessment design gram")?;
            let vg_inv = inverse(&v_gamma(&ctx), "stage-1 weighting matrix")?;
            let q = q_gamma_bar(&ctx, &qa, &va_inv, &h_inv, *j1);
            (regime.gamma_bar[*j1].clone(), sandwich(&vg_inv, &q))
        }
        ParamFamily::Gamma { j1 } => {
            let h_inv = inverse(&gram(&ctx.xl2f), "stage-2 assessment design gram")?;
            let vg_inv = inverse(&v_gamma(&ctx), "stage-1 weighting matrix")?;
            let qg = q_gamma_bar(&ctx, &qa, &va_inv, &h_inv, *j1);
            let z: Vec<Vec<f64>> = (0..ctx.n).map(|i| ctx.sj1bar(i, *j1)).collect();
            let target: Vec<f64> =
                (0..ctx.n).map(|i| dot(&ctx.s1v[i], &regime.gamma_bar[*j1])).collect();
            let coef = &regime.gamma[*j1];
            let q = projection_influence(&z, &target, coef, &ctx.s1v, &vg_inv, &qg);
            let g_inv = inverse(&gram(&z), "restricted stage-1 design gram")?;
            (coef.clone(), sandwich(&g_inv, &q))
        }
        ParamFamily::Delta { j1 } => {
            let j1f = regime.catalog.j1_full_idx();
            let j2f = regime.catalog.j2_full_idx();
            let n_j2 = regime.catalog.cand2.len();
            let h_inv = inverse(&gram(&ctx.xl2f), "stage-2 assessment design gram")?;
            let vg_inv = inverse(&v_gamma(&ctx), "stage-1 weighting matrix")?;

            let w_a: Vec<f64> = (0..ctx.n)
                .map(|i| ctx.rule2(i, *j1, j2f) - ctx.rule2(i, j1f, j2f))
                .collect();
            let coupling_a = mean_cross(&w_a, &ctx.sl1, &ctx.x2) * &va_inv;

            let chosen_j1: Vec<usize> = (0..ctx.n).map(|i| ctx.chosen2(i, *j1)).collect();
            let chosen_f: Vec<usize> = (0..ctx.n).map(|i| ctx.chosen2(i, j1f)).collect();
            let mut terms_b: Vec<(DMatrix<f64>, Vec<DVector<f64>>, f64)> = Vec::new();
            for j2 in 0..n_j2 {
                let w: Vec<f64> =
                    (0..ctx.n).map(|i| f64::from(chosen_j1[i] == j2)).collect();
                terms_b.push((
                    mean_cross(&w, &ctx.sl1, &ctx.xl2f) * &h_inv,
                    q_beta_bar(&ctx, &qa, &va_inv, *j1, j2),
                    1.0,
                ));
                let w_f: Vec<f64> =
                    (0..ctx.n).map(|i| f64::from(chosen_f[i] == j2)).collect();
                terms_b.push((
                    mean_cross(&w_f, &ctx.sl1, &ctx.xl2f) * &h_inv,
                    q_beta_bar(&ctx, &qa, &va_inv, j1f, j2),
                    -1.0,
                ));
            }

            let qg_j1 = q_gamma_bar(&ctx, &qa, &va_inv, &h_inv, *j1);
            let qg_f = q_gamma_bar(&ctx, &qa, &va_inv, &h_inv, j1f);
            let rule1 =
                |i: usize, j: usize| f64::from(dot(&ctx.sj1bar(i, j), &regime.gamma[j]) > 0.0);
            let w_g1: Vec<f64> = (0..ctx.n)
                .map(|i| rule1(i, *j1) - ctx.d.trajectories[i].a1)
                .collect();
            let coupling_g1 = mean_cross(&w_g1, &ctx.sl1, &ctx.s1v) * &vg_inv;
            let w_gf: Vec<f64> = (0..ctx.n)
                .map(|i| rule1(i, j1f) - ctx.d.trajectories[i].a1)
                .collect();
            let coupling_gf = mean_cross(&w_gf, &ctx.sl1, &ctx.s1v) * &vg_inv;

            let coef = &regime.delta[*j1];
            let q: Vec<DVector<f64>> = (0..ctx.n)
                .map(|i| {
                    let resid =
                        ctx.art.y1c[*j1][i] - ctx.art.y1c[j1f][i] - dot(&ctx.sl1[i], coef);
                    let mut q = DVector::from_column_slice(&ctx.sl1[i]) * resid;
                    q += &coupling_a * &qa[i];
                    for (m, qb, sign) in &terms_b {
                        q += (m * &qb[i]) * *sign;
                    }
                    q += &coupling_g1 * &qg_j1[i];
                    q -= &coupling_gf * &qg_f[i];
                    q
                })
                .collect();
            let g_inv = inverse(&gram(&ctx.sl1), "baseline design gram")?;
            (coef.clone(), sandwich(&g_inv, &q))
        }
    };

    let p = estimate.len();
    if covariance.nrows() != p {
        return Err(Error::Dimension(format!(
            "covariance dimension {} does not match the {}-dimensional estimate",
            covariance.nrows(),
            p
        )));
    }
    let std_errors: Vec<f64> = (0..p).map(|j| covariance[(j, j)].max(0.0).sqrt()).collect();
    let covariance: Vec<Vec<f64>> =
        (0..p).map(|a| (0..p).map(|b| covariance[(a, b)]).collect()).collect();
    // Indicator events enter every family past the stage-2 contrast fit.
    let boundary_flagged = match family {
        ParamFamily::AlphaBar | ParamFamily::Alpha { .. } => false,
        _ => {
            let fraction = boundary_fraction(&ctx);
            if fraction > 0.01 {
                log::warn!(
                    "{family}: {:.1}% of fitted decision scores lie within 1e-6 of a                      boundary; indicator plug-ins may be unstable",
                    100.0 * fraction
                );
            }
            fraction > 0.01
        }
    };
    Ok(CovarianceReport {
        family: family.clone(),
        estimate,
        covariance,
        std_errors,
        n: ctx.n,
        boundary_flagged,
    })
}

/// Two-sided confidence intervals `estimate_j +/- z * se_j / sqrt(n)`.
pub fn confidence_intervals(report: &CovarianceReport, level: f64) -> Result<Vec<(f64, f64)>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config("confidence level must be in (0, 1)".into()));
    }
    let z = Normal::new(0.0, 1.0)
        .map_err(|e| Error::Numeric(e.to_string()))?
        .inverse_cdf(0.5 * (1.0 + level));
    let scale = (report.n as f64).sqrt();
    Ok(report
        .estimate
        .iter()
        .zip(&report.std_errors)
        .map(|(est, se)| {
            let half = z * se / scale;
            (est - half, est + half)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_scores_raise_the_boundary_flag() {
        // A zero outcome fits all-zero coefficient families, so every
        // decision score sits exactly on its boundary.
        use crate::bql::{fit_bql_with_artifacts, BqlConfig};
        use crate::data::{AssessmentCatalog, CostSpec, Dataset, FeatureIndexSet, Trajectory};
        let catalog = AssessmentCatalog::new(
            1,
            1,
            FeatureIndexSet::empty(),
            FeatureIndexSet::empty(),
            vec![FeatureIndexSet::new(vec![1])],
            vec![FeatureIndexSet::new(vec![1])],
        )
        .unwrap();
        let rows: Vec<Trajectory> = (0..40)
            .map(|i| Trajectory {
                s1: vec![(i % 5) as f64 - 2.0],
                a1: (i % 2) as f64,
                s2: vec![(i % 3) as f64 - 1.0],
                a2: ((i / 2) % 2) as f64,
                y: 0.0,
            })
            .collect();
        let d = Dataset::new(rows, 1, 1);
        let costs = CostSpec::zero(&catalog);
        let (regime, art) =
            fit_bql_with_artifacts(&d, &catalog, &costs, &BqlConfig::ridge_only(1)).unwrap();
        let report =
            plugin_covariance(&regime, &d, &art, &ParamFamily::Delta { j1: 0 }).unwrap();
        assert!(report.boundary_flagged);
        let report =
            plugin_covariance(&regime, &d, &art, &ParamFamily::AlphaBar).unwrap();
        assert!(!report.boundary_flagged);
    }

    #[test]
    fn ci_arithmetic_matches_the_normal_quantile() {
        let report = CovarianceReport {
            family: ParamFamily::AlphaBar,
            estimate: vec![0.0],
            covariance: vec![vec![1.0]],
            std_errors: vec![1.0],
            n: 100,
            boundary_flagged: false,
        };
        let ci = confidence_intervals(&report, 0.95).unwrap();
        assert!((ci[0].0 + 0.196).abs() < 1e-3, "lower {}", ci[0].0);
        assert!((ci[0].1 - 0.196).abs() < 1e-3);
    }

    #[test]
    fn vanishing_level_degenerates_to_the_estimate() {
        let report = CovarianceReport {
            family: ParamFamily::Delta { j1: 0 },
            estimate: vec![2.5],
            covariance: vec![vec![4.0]],
            std_errors: vec![2.0],
            n: 25,
            boundary_flagged: false,
        };
        let ci = confidence_intervals(&report, 1e-12).unwrap();
        assert!((ci[0].0 - 2.5).abs() < 1e-9);
        assert!((ci[0].1 - 2.5).abs() < 1e-9);
        assert!(confidence_intervals(&report, 0.0).is_err());
        assert!(confidence_intervals(&report, 1.0).is_err());
    }
}
