//! Finite-support instances on which regime values are exactly computable.
//!
//! An instance fixes small supports for the stage covariates, an exact
//! transition table, and an exact outcome-mean table. Population objects
//! (Q-functions, regime profits) reduce to finite sums, so optimality
//! claims can be tested as identities instead of statistically.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{AssessmentCatalog, CostSpec, Dataset, FeatureIndexSet, Trajectory};
use crate::error::{Error, Result};
use crate::seed::rng_for;

/// A finite two-stage decision problem with exact tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteInstance {
    pub d1: usize,
    pub d2: usize,
    /// Stage-1 support points in `R^{d1}`.
    pub s1_support: Vec<Vec<f64>>,
    /// Marginal probabilities of the stage-1 points.
    pub s1_probs: Vec<f64>,
    /// Stage-2 support points in `R^{d2}`.
    pub s2_support: Vec<Vec<f64>>,
    /// `transition[s1][a1][s2] = P(s2 | s1, a1)`.
    pub transition: Vec<Vec<Vec<f64>>>,
    /// `outcome_mean[s1][a1][s2][a2] = E[Y | s1, a1, s2, a2]`.
    pub outcome_mean: Vec<Vec<Vec<Vec<f64>>>>,
    pub catalog: AssessmentCatalog,
    pub costs: CostSpec,
    /// Behavior propensity `P(A1 = 1 | s1)` used when sampling
    /// observational data from the instance. Defaults to 1/2.
    #[serde(default)]
    pub behavior1: Option<Vec<f64>>,
    /// Behavior propensity `P(A2 = 1 | s1, a1, s2)`. Defaults to 1/2.
    #[serde(default)]
    pub behavior2: Option<Vec<Vec<Vec<f64>>>>,
    /// Gaussian noise scale around the outcome mean when sampling.
    #[serde(default = "default_outcome_noise")]
    pub outcome_noise_sd: f64,
}

fn default_outcome_noise() -> f64 {
    0.5
}

const PROB_TOL: f64 = 1e-9;

impl DiscreteInstance {
    pub fn n1(&self) -> usize {
        self.s1_support.len()
    }

    pub fn n2(&self) -> usize {
        self.s2_support.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.catalog.validate()?;
        self.costs.validate(&self.catalog)?;
        if self.catalog.d1 != self.d1 || self.catalog.d2 != self.d2 {
            return Err(Error::Config("catalog dimensions do not match the instance".into()));
        }
        if self.s1_support.is_empty() || self.s2_support.is_empty() {
            return Err(Error::Config("supports must be nonempty".into()));
        }
        if self.s1_support.iter().any(|p| p.len() != self.d1)
            || self.s2_support.iter().any(|p| p.len() != self.d2)
        {
            return Err(Error::Config("support points must match the declared dimensions".into()));
        }
        if self.s1_probs.len() != self.n1() {
            return Err(Error::Config("s1_probs must cover the stage-1 support".into()));
        }
        if self.s1_probs.iter().any(|p| *p < 0.0)
            || (self.s1_probs.iter().sum::<f64>() - 1.0).abs() > PROB_TOL
        {
            return Err(Error::Config("s1_probs must be nonnegative and sum to 1".into()));
        }
        if self.transition.len() != self.n1() {
            return Err(Error::Config("transition table must cover the stage-1 support".into()));
        }
        for (i, per_a1) in self.transition.iter().enumerate() {
            if per_a1.len() != 2 {
                return Err(Error::Config(format!("transition[{i}] must have rows for a1 in {{0,1}}")));
            }
            for (a1, row) in per_a1.iter().enumerate() {
                if row.len() != self.n2() {
                    return Err(Error::Config(format!(
                        "transition[{i}][{a1}] must cover the stage-2 support"
                    )));
                }
                if row.iter().any(|p| *p < 0.0) || (row.iter().sum::<f64>() - 1.0).abs() > PROB_TOL {
                    return Err(Error::Config(format!(
                        "transition[{i}][{a1}] must be a probability vector summing to 1"
                    )));
                }
            }
        }
        if self.outcome_mean.len() != self.n1()
            || self.outcome_mean.iter().any(|p| {
                p.len() != 2
                    || p.iter().any(|q| q.len() != self.n2() || q.iter().any(|r| r.len() != 2))
            })
        {
            return Err(Error::Config(
                "outcome_mean must have shape [s1][a1 in {0,1}][s2][a2 in {0,1}]".into(),
            ));
        }
        if let Some(b1) = &self.behavior1 {
            if b1.len() != self.n1() || b1.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Config("behavior1 must be probabilities over the support".into()));
            }
        }
        if let Some(b2) = &self.behavior2 {
            let ok = b2.len() == self.n1()
                && b2.iter().all(|p| {
                    p.len() == 2
                        && p.iter().all(|q| {
                            q.len() == self.n2() && q.iter().all(|v| (0.0..=1.0).contains(v))
                        })
                });
            if !ok {
                return Err(Error::Config("behavior2 must have shape [s1][a1][s2]".into()));
            }
        }
        Ok(())
    }

    pub fn behavior1_at(&self, s1: usize) -> f64 {
        self.behavior1.as_ref().map_or(0.5, |b| b[s1])
    }

    pub fn behavior2_at(&self, s1: usize, a1: usize, s2: usize) -> f64 {
        self.behavior2.as_ref().map_or(0.5, |b| b[s1][a1][s2])
    }

    /// Draws observational trajectories from the instance law (behavior
    /// propensities, transition table, Gaussian outcome noise).
    pub fn sample_dataset(&self, n: usize, seed: u64) -> Result<Dataset> {
        self.validate()?;
        let trajectories = (0..n)
            .map(|i| {
                let mut rng = rng_for(seed, &[0xd15c, i as u64]);
                let s1 = sample_index(&self.s1_probs, rng.random::<f64>());
                let a1 = usize::from(rng.random::<f64>() < self.behavior1_at(s1));
                let s2 = sample_index(&self.transition[s1][a1], rng.random::<f64>());
                let a2 = usize::from(rng.random::<f64>() < self.behavior2_at(s1, a1, s2));
                let y = self.outcome_mean[s1][a1][s2][a2]
                    + self.outcome_noise_sd * rng.sample::<f64, _>(StandardNormal);
                Trajectory {
                    s1: self.s1_support[s1].clone(),
                    a1: a1 as f64,
                    s2: self.s2_support[s2].clone(),
                    a2: a2 as f64,
                    y,
                }
            })
            .collect();
        Ok(Dataset::new(trajectories, self.d1, self.d2))
    }
}

fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// A small random instance suitable for exhaustive oracle checks: two or
/// three support points per stage, two covariates per stage, and candidate
/// catalogs small enough to keep the regime space enumerable.
pub fn random_instance(seed: u64) -> DiscreteInstance {
    let mut rng = rng_for(seed, &[0x0c0de]);
    let n1 = 2 + (rng.random::<u32>() % 2) as usize; // 2..=3
    let n2 = 2;
    let d1 = 2;
    let d2 = 2;
    let support = |rng: &mut rand_chacha::ChaCha8Rng, n: usize, d: usize| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..d).map(|_| (rng.random::<u32>() % 5) as f64 - 2.0).collect())
            .collect()
    };
    // Distinct support points: resample until keys differ.
    let mut s1_support;
    loop {
        s1_support = support(&mut rng, n1, d1);
        let mut keys: Vec<String> = s1_support.iter().map(|p| format!("{p:?}")).collect();
        keys.dedup();
        keys.sort();
        keys.dedup();
        if keys.len() == n1 {
            break;
        }
    }
    let mut s2_support;
    loop {
        s2_support = support(&mut rng, n2, d2);
        let mut keys: Vec<String> = s2_support.iter().map(|p| format!("{p:?}")).collect();
        keys.sort();
        keys.dedup();
        if keys.len() == n2 {
            break;
        }
    }

    let rand_probs = |rng: &mut rand_chacha::ChaCha8Rng, n: usize| -> Vec<f64> {
        let raw: Vec<f64> = (0..n).map(|_| 0.25 + rng.random::<f64>()).collect();
        let s: f64 = raw.iter().sum();
        raw.iter().map(|v| v / s).collect()
    };
    let s1_probs = rand_probs(&mut rng, n1);
    let transition: Vec<Vec<Vec<f64>>> =
        (0..n1).map(|_| (0..2).map(|_| rand_probs(&mut rng, n2)).collect()).collect();
    let outcome_mean: Vec<Vec<Vec<Vec<f64>>>> = (0..n1)
        .map(|_| {
            (0..2)
                .map(|_| {
                    (0..n2)
                        .map(|_| (0..2).map(|_| rng.random::<f64>() * 8.0 - 4.0).collect())
                        .collect()
                })
                .collect()
        })
        .collect();

    let l1 = FeatureIndexSet::new(vec![1]);
    let l2 = if rng.random::<f64>() < 0.5 {
        FeatureIndexSet::new(vec![1])
    } else {
        FeatureIndexSet::empty()
    };
    let j1f = FeatureIndexSet::complement_of(&l1, d1);
    let j2f = FeatureIndexSet::complement_of(&l2, d2);
    let cand1 = vec![FeatureIndexSet::empty(), j1f];
    let cand2 = if l2.is_empty() && rng.random::<f64>() < 0.5 {
        vec![FeatureIndexSet::empty(), FeatureIndexSet::new(vec![1]), j2f]
    } else {
        vec![FeatureIndexSet::empty(), j2f]
    };
    let catalog = AssessmentCatalog::new(d1, d2, l1, l2, cand1, cand2).expect("valid random catalog");
    let rand_cost = |rng: &mut rand_chacha::ChaCha8Rng| (rng.random::<u32>() % 4) as f64 * 0.25;
    let costs = CostSpec {
        c1c: catalog.cand1.iter().map(|_| rand_cost(&mut rng)).collect(),
        c2c: catalog.cand2.iter().map(|_| rand_cost(&mut rng)).collect(),
        c1t: (rand_cost(&mut rng), rand_cost(&mut rng)),
        c2t: (rand_cost(&mut rng), rand_cost(&mut rng)),
        lambda: 1.0,
    };
    DiscreteInstance {
        d1,
        d2,
        s1_support,
        s1_probs,
        s2_support,
        transition,
        outcome_mean,
        catalog,
        costs,
        behavior1: None,
        behavior2: None,
        outcome_noise_sd: 0.5,
    }
}
