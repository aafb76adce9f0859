//! Synthetic-trial engine: the two-stage generative process used by the
//! built-in scenario presets, and Monte Carlo ground-truth profit
//! evaluation of any regime against it.
//!
//! The generative process draws stage-1 covariates from a standard normal,
//! assigns treatments through logistic propensities, evolves stage-2
//! covariates as `s2 = s1 + a1*s1 + noise`, and produces the outcome from a
//! linear model in `(s1, a1, s2)` with treatment interactions.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{AssessmentCatalog, CostSpec, Dataset, FeatureIndexSet, Trajectory};
use crate::deploy::{deploy, CovariateOracle, DecisionRecord, Policy};
use crate::error::{Error, Result};
use crate::regress::dot;
use crate::seed::rng_for;

/// Numerically stable logistic function.
pub fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Parameters of the synthetic two-stage trial.
///
/// `alpha1` (length `p`) and `alpha2` (length `2p+1`) drive the behavior
/// propensities; `beta1`, `beta2`, `beta3` (length `2p+1`) drive the outcome
/// `y = x2' (beta1 + a1*beta2 + a2*beta3) + noise` with
/// `x2 = (s1, a1, s2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerativeSpec {
    pub p: usize,
    pub alpha1: Vec<f64>,
    pub alpha2: Vec<f64>,
    pub beta1: Vec<f64>,
    pub beta2: Vec<f64>,
    pub beta3: Vec<f64>,
    #[serde(default = "default_noise_sd")]
    pub noise_sd_y: f64,
}

fn default_noise_sd() -> f64 {
    0.5
}

impl GenerativeSpec {
    pub fn validate(&self) -> Result<()> {
        let d = 2 * self.p + 1;
        if self.alpha1.len() != self.p {
            return Err(Error::Config(format!(
                "alpha1 must have length p = {}, found {}",
                self.p,
                self.alpha1.len()
            )));
        }
        for (name, v) in
            [("alpha2", &self.alpha2), ("beta1", &self.beta1), ("beta2", &self.beta2), ("beta3", &self.beta3)]
        {
            if v.len() != d {
                return Err(Error::Config(format!(
                    "{name} must have length 2p+1 = {d}, found {}",
                    v.len()
                )));
            }
        }
        if self.noise_sd_y.is_nan() || self.noise_sd_y <= 0.0 {
            return Err(Error::Config("outcome noise scale must be positive".into()));
        }
        Ok(())
    }

    /// The outcome-model design `(s1, a1, s2)`.
    pub fn x2(&self, s1: &[f64], a1: f64, s2: &[f64]) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.p + 1);
        v.extend_from_slice(s1);
        v.push(a1);
        v.extend_from_slice(s2);
        v
    }

    pub fn mean_outcome(&self, s1: &[f64], a1: f64, s2: &[f64], a2: f64) -> f64 {
        let x2 = self.x2(s1, a1, s2);
        let coef: Vec<f64> = self
            .beta1
            .iter()
            .zip(&self.beta2)
            .zip(&self.beta3)
            .map(|((b1, b2), b3)| b1 + a1 * b2 + a2 * b3)
            .collect();
        dot(&x2, &coef)
    }
}

fn draw_normal_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Draws `n` i.i.d. observational trajectories. Each subject has its own
/// derived seed, so generation is order-independent and reproducible.
pub fn generate(spec: &GenerativeSpec, n: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Config("sample size must be at least 1".into()));
    }
    let trajectories = (0..n)
        .map(|i| {
            let mut rng = rng_for(seed, &[i as u64]);
            let s1 = draw_normal_vec(&mut rng, spec.p);
            let a1 = f64::from(rng.random::<f64>() < logistic(dot(&s1, &spec.alpha1)));
            let noise2 = draw_normal_vec(&mut rng, spec.p);
            let s2: Vec<f64> =
                s1.iter().zip(&noise2).map(|(s, e)| s + a1 * s + e).collect();
            let x2 = spec.x2(&s1, a1, &s2);
            let a2 = f64::from(rng.random::<f64>() < logistic(dot(&x2, &spec.alpha2)));
            let y = spec.mean_outcome(&s1, a1, &s2, a2)
                + spec.noise_sd_y * rng.sample::<f64, _>(StandardNormal);
            Trajectory { s1, a1, s2, a2, y }
        })
        .collect();
    Ok(Dataset::new(trajectories, spec.p, spec.p))
}

/// One simulated subject with its noise stream frozen at construction, so
/// the potential stage-2 covariates and outcome depend only on the actions
/// taken (common random numbers across regimes).
pub struct SimulatedSubject<'a> {
    spec: &'a GenerativeSpec,
    pub s1: Vec<f64>,
    noise2: Vec<f64>,
    noise_y: f64,
    a1: Option<f64>,
    s2: Option<Vec<f64>>,
}

impl<'a> SimulatedSubject<'a> {
    pub fn draw(spec: &'a GenerativeSpec, rng: &mut ChaCha8Rng) -> Self {
        SimulatedSubject {
            spec,
            s1: draw_normal_vec(rng, spec.p),
            noise2: draw_normal_vec(rng, spec.p),
            noise_y: rng.sample::<f64, _>(StandardNormal),
            a1: None,
            s2: None,
        }
    }

    /// The realized outcome under the committed `a1` and the given `a2`.
    pub fn outcome(&self, a2: f64) -> Result<f64> {
        let (Some(a1), Some(s2)) = (self.a1, self.s2.as_ref()) else {
            return Err(Error::Eval("outcome requested before the first treatment".into()));
        };
        Ok(self.spec.mean_outcome(&self.s1, a1, s2, a2) + self.spec.noise_sd_y * self.noise_y)
    }
}

impl CovariateOracle for SimulatedSubject<'_> {
    fn stage1(&mut self, set: &FeatureIndexSet) -> Result<Vec<f64>> {
        crate::data::subvector(&self.s1, set)
    }

    fn commit_stage1(&mut self, a1: f64) -> Result<()> {
        self.a1 = Some(a1);
        self.s2 = Some(
            self.s1.iter().zip(&self.noise2).map(|(s, e)| s + a1 * s + e).collect(),
        );
        Ok(())
    }

    fn stage2(&mut self, set: &FeatureIndexSet) -> Result<Vec<f64>> {
        match &self.s2 {
            Some(s2) => crate::data::subvector(s2, set),
            None => Err(Error::Eval("stage-2 covariates requested before the first treatment".into())),
        }
    }
}

/// Outcome and decisions for one simulated deployment.
#[derive(Debug, Clone)]
pub struct SimulatedResult {
    pub record: DecisionRecord,
    pub y: f64,
    /// (assessment1, treatment1, assessment2, treatment2) raw costs.
    pub cost_components: (f64, f64, f64, f64),
}

/// Deploys a policy on `n` fresh subjects and records outcomes and costs.
pub fn run_on_simulator(
    spec: &GenerativeSpec,
    policy: &dyn Policy,
    costs: &CostSpec,
    n: usize,
    seed: u64,
) -> Result<Vec<SimulatedResult>> {
    spec.validate()?;
    (0..n)
        .map(|i| {
            let mut rng = rng_for(seed, &[0x51b, i as u64]);
            let mut subject = SimulatedSubject::draw(spec, &mut rng);
            let record = deploy(policy, &mut subject)?;
            let y = subject.outcome(record.a2)?;
            let cost_components = (
                costs.c1c[record.j1_idx],
                costs.c1t_of(record.a1),
                costs.c2c[record.j2_idx],
                costs.c2t_of(record.a2),
            );
            Ok(SimulatedResult { record, y, cost_components })
        })
        .collect()
}

/// Monte Carlo estimate of a regime's expected profit under the generative
/// law, with costs scaled by `lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfitEstimate {
    pub profit: f64,
    pub std_error: f64,
    pub utility: f64,
    /// Mean raw (unscaled) cost components (c1c, c1t, c2c, c2t).
    pub mean_costs: (f64, f64, f64, f64),
    pub n_mc: usize,
}

/// Pairwise summation, for reproducible and accurate reductions.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        2 => v[0] + v[1],
        n => pairwise_sum(&v[..n / 2]) + pairwise_sum(&v[n / 2..]),
    }
}

pub fn summarize_profits(results: &[SimulatedResult], lambda: f64) -> ProfitEstimate {
    let n = results.len();
    let profits: Vec<f64> = results
        .iter()
        .map(|r| {
            let (c1c, c1t, c2c, c2t) = r.cost_components;
            r.y - lambda * (c1c + c1t + c2c + c2t)
        })
        .collect();
    let mean = pairwise_sum(&profits) / n as f64;
    let var = if n > 1 {
        let sq: Vec<f64> = profits.iter().map(|p| (p - mean) * (p - mean)).collect();
        pairwise_sum(&sq) / (n as f64 - 1.0)
    } else {
        0.0
    };
    let sum_of = |f: fn(&(f64, f64, f64, f64)) -> f64| {
        let vals: Vec<f64> = results.iter().map(|r| f(&r.cost_components)).collect();
        pairwise_sum(&vals) / n as f64
    };
    ProfitEstimate {
        profit: mean,
        std_error: (var / n as f64).sqrt(),
        utility: pairwise_sum(&results.iter().map(|r| r.y).collect::<Vec<f64>>()) / n as f64,
        mean_costs: (sum_of(|c| c.0), sum_of(|c| c.1), sum_of(|c| c.2), sum_of(|c| c.3)),
        n_mc: n,
    }
}

/// Monte Carlo ground-truth profit of a regime: fresh subjects, stage-2
/// covariates drawn under the regime's own first treatment, costs scaled by
/// `lambda`.
pub fn true_profit(
    spec: &GenerativeSpec,
    policy: &dyn Policy,
    costs: &CostSpec,
    lambda: f64,
    n_mc: usize,
    seed: u64,
) -> Result<ProfitEstimate> {
    if n_mc == 0 {
        return Err(Error::Config("n_mc must be at least 1".into()));
    }
    let results = run_on_simulator(spec, policy, costs, n_mc, seed)?;
    Ok(summarize_profits(&results, lambda))
}

/// How a preset sweeps its difficulty knob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SweepGrid {
    /// Vary the cost trade-off scalar.
    Lambda(Vec<f64>),
    /// Vary the training-set size at a fixed trade-off.
    SampleSize(Vec<usize>),
    /// Vary the cost of one treatment arm (stage, arm, values).
    TreatmentCost { stage: u8, arm: u8, values: Vec<f64> },
}

/// A complete built-in scenario: generative parameters, catalog, cost
/// table, and the default sweep grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPreset {
    pub id: u8,
    pub generative: GenerativeSpec,
    pub catalog: AssessmentCatalog,
    pub costs: CostSpec,
    pub sweep: SweepGrid,
    pub default_n: usize,
}

fn fis(v: &[usize]) -> FeatureIndexSet {
    FeatureIndexSet::new(v.to_vec())
}

fn model1_base() -> (GenerativeSpec, AssessmentCatalog) {
    let spec = GenerativeSpec {
        p: 5,
        alpha1: vec![1.0, 1.0, 0.0, 0.0, 0.0],
        alpha2: vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0],
        beta1: vec![1.0, 1.0, 0.5, 0.0, 0.0, 0.0, 0.0, 1.0, 0.5, 0.0, 1.0],
        beta2: vec![1.0, 1.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        beta3: vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.5, 0.0, 1.0],
        noise_sd_y: 0.5,
    };
    let catalog = AssessmentCatalog::new(
        5,
        5,
        fis(&[1, 2, 3, 4, 5]),
        fis(&[1]),
        vec![FeatureIndexSet::empty()],
        vec![fis(&[2, 3, 4]), fis(&[2, 3, 4, 5])],
    )
    .expect("valid preset catalog");
    (spec, catalog)
}

/// The built-in scenario presets 1 through 7.
///
/// Presets 6 and 7 reuse the preset-1 setup with all assessment costs
/// removed and one treatment-cost arm swept.
pub fn model_preset(id: u8) -> Result<ModelPreset> {
    let lambda_grid = vec![0.0, 0.25, 0.5, 1.0, 2.0, 4.0];
    match id {
        1 => {
            let (generative, catalog) = model1_base();
            Ok(ModelPreset {
                id,
                costs: CostSpec {
                    c1c: vec![0.0],
                    c2c: vec![0.0, 0.1],
                    c1t: (0.0, 0.0),
                    c2t: (0.0, 0.0),
                    lambda: 0.0,
                },
                generative,
                catalog,
                sweep: SweepGrid::Lambda(lambda_grid),
                default_n: 500,
            })
        }
        2 => {
            let generative = GenerativeSpec {
                p: 5,
                alpha1: vec![1.0, 0.0, 0.0, 0.0, 0.0],
                alpha2: vec![1.0, 0.0, 0.5, 0.5, 0.5, 0.5, 0.5, 0.0, 0.5, 0.5, 0.0],
                beta1: vec![1.0, 0.0, 0.5, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0],
                beta2: vec![1.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
                beta3: vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0],
                noise_sd_y: 0.5,
            };
            let catalog = AssessmentCatalog::new(
                5,
                5,
                fis(&[1]),
                fis(&[1]),
                vec![fis(&[3, 4, 5]), fis(&[2, 3, 4, 5])],
                vec![fis(&[2, 3]), fis(&[2, 3, 4]), fis(&[2, 3, 4, 5])],
            )?;
            Ok(ModelPreset {
                id,
                generative,
                catalog,
                costs: CostSpec {
                    c1c: vec![0.0, 0.2],
                    c2c: vec![0.0, 0.1, 0.2],
                    c1t: (0.0, 0.0),
                    c2t: (0.0, 0.0),
                    lambda: 0.0,
                },
                sweep: SweepGrid::Lambda(lambda_grid),
                default_n: 500,
            })
        }
        3 => {
            let pw = |k: i32| 0.6_f64.powi(k);
            let generative = GenerativeSpec {
                p: 3,
                alpha1: vec![pw(1), pw(2), pw(3)],
                alpha2: vec![pw(1), pw(2), pw(3), pw(4), 0.0, pw(6), pw(7)],
                beta1: vec![1.5, 1.0, 0.0, 0.0, 0.0, 1.0, 2.0],
                // All-zero first-treatment effect; the stated length follows
                // the dimension 2p+1 = 7.
                beta2: vec![0.0; 7],
                beta3: vec![0.5, 0.0, 0.0, 0.0, 0.0, 1.0, 2.0],
                noise_sd_y: 0.5,
            };
            let cand2: Vec<FeatureIndexSet> = vec![
                FeatureIndexSet::empty(),
                fis(&[1]),
                fis(&[2]),
                fis(&[3]),
                fis(&[1, 2]),
                fis(&[1, 3]),
                fis(&[2, 3]),
                fis(&[1, 2, 3]),
            ];
            let c2c: Vec<f64> = cand2.iter().map(|c| 0.1 * c.len() as f64).collect();
            let catalog = AssessmentCatalog::new(
                3,
                3,
                fis(&[1, 2, 3]),
                FeatureIndexSet::empty(),
                vec![FeatureIndexSet::empty()],
                cand2,
            )?;
            Ok(ModelPreset {
                id,
                generative,
                catalog,
                costs: CostSpec {
                    c1c: vec![0.0],
                    c2c,
                    c1t: (0.0, 0.0),
                    c2t: (0.0, 0.0),
                    lambda: 0.0,
                },
                sweep: SweepGrid::Lambda(lambda_grid),
                default_n: 500,
            })
        }
        4 => {
            let mut preset = model_preset(1)?;
            preset.id = 4;
            preset.sweep = SweepGrid::SampleSize(vec![250, 500, 1000, 2000]);
            Ok(preset)
        }
        5 => {
            let pw = |k: i32| 0.5_f64.powi(k);
            let generative = GenerativeSpec {
                p: 5,
                alpha1: (1..=5).map(pw).collect(),
                alpha2: (1..=11).map(pw).collect(),
                beta1: vec![1.2, 0.4, 0.4, 0.4, 0.4, 0.2, 0.2, 0.2, 0.2, 1.5, 1.0],
                beta2: vec![0.5, 0.2, 0.2, 0.2, 0.2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
                beta3: vec![0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 1.5, 1.0],
                noise_sd_y: 0.5,
            };
            let catalog = AssessmentCatalog::new(
                5,
                5,
                fis(&[1, 2, 3, 4, 5]),
                fis(&[1]),
                vec![FeatureIndexSet::empty()],
                vec![fis(&[2, 3]), fis(&[2, 3, 4]), fis(&[2, 3, 4, 5])],
            )?;
            Ok(ModelPreset {
                id,
                generative,
                catalog,
                costs: CostSpec {
                    c1c: vec![0.0],
                    c2c: vec![0.0, 0.1, 0.2],
                    c1t: (0.0, 0.0),
                    c2t: (0.0, 0.0),
                    lambda: 0.0,
                },
                sweep: SweepGrid::Lambda(lambda_grid),
                default_n: 500,
            })
        }
        6 => {
            let mut preset = model_preset(1)?;
            preset.id = 6;
            preset.costs = CostSpec {
                c1c: vec![0.0],
                c2c: vec![0.0, 0.0],
                c1t: (0.0, 0.0),
                c2t: (7.5, 0.0),
                lambda: 1.0,
            };
            preset.sweep = SweepGrid::TreatmentCost {
                stage: 2,
                arm: 1,
                values: vec![0.0, 2.5, 5.0, 7.5, 10.0, 12.5, 15.0],
            };
            Ok(preset)
        }
        7 => {
            let mut preset = model_preset(1)?;
            preset.id = 7;
            preset.costs = CostSpec {
                c1c: vec![0.0],
                c2c: vec![0.0, 0.0],
                c1t: (7.5, 0.0),
                c2t: (0.0, 0.0),
                lambda: 1.0,
            };
            preset.sweep = SweepGrid::TreatmentCost {
                stage: 1,
                arm: 1,
                values: vec![0.0, 2.5, 5.0, 7.5, 10.0, 12.5, 15.0],
            };
            Ok(preset)
        }
        other => Err(Error::Config(format!("unknown model preset id {other}; expected 1..=7"))),
    }
}
