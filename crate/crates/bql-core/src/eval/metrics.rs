//! Regime evaluation: inverse-probability-weighted utility on held-out
//! data, profit assembly, selection-frequency tables, and empirical regret.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::Dataset;
use crate::deploy::{deploy, CovariateOracle, DecisionRecord, Policy, StaticOracle};
use crate::error::{Error, Result};
use crate::eval::instance::DiscreteInstance;
use crate::seed::rng_for;
use crate::synth::{pairwise_sum, true_profit, GenerativeSpec, ProfitEstimate};

/// Self-normalized (Hajek) inverse-probability-weighted utility of a regime
/// on logged data.
///
/// `p1[i]` and `p2[i]` are the estimated probabilities of treatment 1 at
/// each stage for row `i`; they are clamped into `[0.01, 0.99]` before use.
/// A subject contributes only when the regime's decisions reproduce both
/// logged treatments.
pub fn ipw_utility(test: &Dataset, policy: &dyn Policy, p1: &[f64], p2: &[f64]) -> Result<f64> {
    let n = test.n();
    if p1.len() != n || p2.len() != n {
        return Err(Error::Dimension("propensity vectors must match the dataset".into()));
    }
    let mut num = Vec::with_capacity(n);
    let mut den = Vec::with_capacity(n);
    for (i, t) in test.trajectories.iter().enumerate() {
        let mut oracle = StaticOracle { s1: t.s1.clone(), s2: t.s2.clone() };
        let record = deploy(policy, &mut oracle)?;
        if record.a1 == t.a1 && record.a2 == t.a2 {
            let q1 = prob_of_observed(p1[i], t.a1);
            let q2 = prob_of_observed(p2[i], t.a2);
            let w = 1.0 / (q1 * q2);
            num.push(w * t.y);
            den.push(w);
        }
    }
    let total_w = pairwise_sum(&den);
    if total_w <= 0.0 {
        return Err(Error::Eval(
            "zero total weight: the regime matches no logged action sequence".into(),
        ));
    }
    Ok(pairwise_sum(&num) / total_w)
}

fn prob_of_observed(p_treat: f64, a: f64) -> f64 {
    let p = p_treat.clamp(0.01, 0.99);
    if a > 0.5 {
        p
    } else {
        1.0 - p
    }
}

/// Profit under the cost trade-off: utility minus `lambda` times the summed
/// cost components `(c1c, c1t, c2c, c2t)`.
pub fn profit_lambda(utility: f64, costs: (f64, f64, f64, f64), lambda: f64) -> f64 {
    utility - lambda * (costs.0 + costs.1 + costs.2 + costs.3)
}

/// Empirical selection frequencies of deployed decisions.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyTable {
    pub freq1: Vec<f64>,
    pub freq2: Vec<f64>,
    pub p_a1: f64,
    pub p_a2: f64,
}

pub fn selection_frequencies(
    records: &[DecisionRecord],
    n_cand1: usize,
    n_cand2: usize,
) -> Result<FrequencyTable> {
    if records.is_empty() {
        return Err(Error::Eval("frequency table needs at least one subject".into()));
    }
    let n = records.len() as f64;
    let mut freq1 = vec![0.0; n_cand1];
    let mut freq2 = vec![0.0; n_cand2];
    let mut a1 = 0.0;
    let mut a2 = 0.0;
    for r in records {
        freq1[r.j1_idx] += 1.0;
        freq2[r.j2_idx] += 1.0;
        a1 += r.a1;
        a2 += r.a2;
    }
    for f in freq1.iter_mut().chain(freq2.iter_mut()) {
        *f /= n;
    }
    Ok(FrequencyTable { freq1, freq2, p_a1: a1 / n, p_a2: a2 / n })
}

/// Difference between an oracle profit and the Monte Carlo profit of a
/// fitted regime under the generative law. May be slightly negative from
/// Monte Carlo noise; reported with its standard error.
pub fn empirical_regret(
    spec: &GenerativeSpec,
    policy: &dyn Policy,
    costs: &crate::data::CostSpec,
    lambda: f64,
    oracle_profit: f64,
    n_mc: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let est = true_profit(spec, policy, costs, lambda, n_mc, seed)?;
    Ok((oracle_profit - est.profit, est.std_error))
}

/// One subject drawn from a finite instance, with the randomness frozen at
/// construction so potential stage-2 states depend only on the committed
/// first treatment.
pub struct InstanceSubject<'a> {
    inst: &'a DiscreteInstance,
    s1_idx: usize,
    u_transition: f64,
    noise_y: f64,
    s2_idx: Option<usize>,
    a1: Option<f64>,
}

impl<'a> InstanceSubject<'a> {
    pub fn draw(inst: &'a DiscreteInstance, rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        let u1: f64 = rng.random();
        let mut acc = 0.0;
        let mut s1_idx = inst.n1() - 1;
        for (i, p) in inst.s1_probs.iter().enumerate() {
            acc += p;
            if u1 < acc {
                s1_idx = i;
                break;
            }
        }
        InstanceSubject {
            inst,
            s1_idx,
            u_transition: rng.random(),
            noise_y: rng.sample::<f64, _>(StandardNormal),
            s2_idx: None,
            a1: None,
        }
    }

    pub fn outcome(&self, a2: f64) -> Result<f64> {
        let (Some(a1), Some(s2)) = (self.a1, self.s2_idx) else {
            return Err(Error::Eval("outcome requested before the first treatment".into()));
        };
        Ok(self.inst.outcome_mean[self.s1_idx][a1 as usize][s2][a2 as usize]
            + self.inst.outcome_noise_sd * self.noise_y)
    }
}

impl CovariateOracle for InstanceSubject<'_> {
    fn stage1(&mut self, set: &crate::data::FeatureIndexSet) -> Result<Vec<f64>> {
        crate::data::subvector(&self.inst.s1_support[self.s1_idx], set)
    }

    fn commit_stage1(&mut self, a1: f64) -> Result<()> {
        let probs = &self.inst.transition[self.s1_idx][a1 as usize];
        let mut acc = 0.0;
        let mut idx = probs.len() - 1;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if self.u_transition < acc {
                idx = i;
                break;
            }
        }
        self.a1 = Some(a1);
        self.s2_idx = Some(idx);
        Ok(())
    }

    fn stage2(&mut self, set: &crate::data::FeatureIndexSet) -> Result<Vec<f64>> {
        match self.s2_idx {
            Some(s2) => crate::data::subvector(&self.inst.s2_support[s2], set),
            None => Err(Error::Eval("stage-2 covariates requested before the first treatment".into())),
        }
    }
}

/// Monte Carlo profit of a policy under the instance law (the sampling
/// counterpart of exact summation, for cross-checking).
pub fn mc_profit_on_instance(
    inst: &DiscreteInstance,
    policy: &dyn Policy,
    lambda: f64,
    n_mc: usize,
    seed: u64,
) -> Result<ProfitEstimate> {
    inst.validate()?;
    let mut profits = Vec::with_capacity(n_mc);
    let mut ys = Vec::with_capacity(n_mc);
    let c = &inst.costs;
    for i in 0..n_mc {
        let mut rng = rng_for(seed, &[0x1ca5e, i as u64]);
        let mut subject = InstanceSubject::draw(inst, &mut rng);
        let record = deploy(policy, &mut subject)?;
        let y = subject.outcome(record.a2)?;
        let cost = c.c1c[record.j1_idx]
            + c.c1t_of(record.a1)
            + c.c2c[record.j2_idx]
            + c.c2t_of(record.a2);
        ys.push(y);
        profits.push(y - lambda * cost);
    }
    let n = n_mc as f64;
    let mean = pairwise_sum(&profits) / n;
    let var = profits.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / (n - 1.0);
    Ok(ProfitEstimate {
        profit: mean,
        std_error: (var / n).sqrt(),
        utility: pairwise_sum(&ys) / n,
        mean_costs: (0.0, 0.0, 0.0, 0.0),
        n_mc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{AssessmentCatalog, FeatureIndexSet, Trajectory};
    use crate::eval::instance::random_instance;
    use crate::eval::oracle::{backward_induction_optimal, exact_profit};
    use approx::assert_abs_diff_eq;

    /// Fixed-action policy over a given catalog.
    struct ConstantPolicy {
        catalog: AssessmentCatalog,
        j1: usize,
        a1: f64,
        j2: usize,
        a2: f64,
    }

    impl Policy for ConstantPolicy {
        fn catalog(&self) -> &AssessmentCatalog {
            &self.catalog
        }
        fn stage1_assessment(&self, _: &[f64]) -> Result<(usize, Vec<f64>)> {
            Ok((self.j1, vec![0.0; self.catalog.cand1.len()]))
        }
        fn stage1_treatment(&self, _: usize, _: &[f64], _: &[f64]) -> Result<(f64, f64)> {
            Ok((self.a1, self.a1 - 0.5))
        }
        fn stage2_assessment(
            &self,
            _: usize,
            _: f64,
            _: &[f64],
            _: &[f64],
            _: &[f64],
        ) -> Result<(usize, Vec<f64>)> {
            Ok((self.j2, vec![0.0; self.catalog.cand2.len()]))
        }
        fn stage2_treatment(
            &self,
            _: usize,
            _: f64,
            _: usize,
            _: &[f64],
            _: &[f64],
            _: &[f64],
            _: &[f64],
        ) -> Result<(f64, f64)> {
            Ok((self.a2, self.a2 - 0.5))
        }
    }

    fn match_all_policy(cat: &AssessmentCatalog, a1: f64, a2: f64) -> ConstantPolicy {
        ConstantPolicy { catalog: cat.clone(), j1: 0, a1, j2: 0, a2, }
    }

    fn tiny_dataset() -> Dataset {
        let t = |a1: f64, a2: f64, y: f64| Trajectory {
            s1: vec![0.5],
            a1,
            s2: vec![-0.5],
            a2,
            y,
        };
        Dataset::new(vec![t(1.0, 1.0, 2.0), t(1.0, 1.0, 4.0), t(0.0, 0.0, -1.0)], 1, 1)
    }

    fn tiny_catalog() -> AssessmentCatalog {
        AssessmentCatalog::new(
            1,
            1,
            FeatureIndexSet::empty(),
            FeatureIndexSet::empty(),
            vec![FeatureIndexSet::new(vec![1])],
            vec![FeatureIndexSet::new(vec![1])],
        )
        .unwrap()
    }

    #[test]
    fn matching_regime_with_unit_propensities_gives_sample_mean() {
        let d = tiny_dataset();
        let cat = tiny_catalog();
        // Policy that reproduces the logged actions of the two treated rows
        // only; to match everywhere, use rows with identical actions.
        let treated = Dataset::new(d.trajectories[..2].to_vec(), 1, 1);
        let policy = match_all_policy(&cat, 1.0, 1.0);
        let u = ipw_utility(&treated, &policy, &[1.0, 1.0], &[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(u, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn no_matching_rows_is_an_evaluation_error() {
        let d = tiny_dataset();
        let cat = tiny_catalog();
        let policy = match_all_policy(&cat, 1.0, 0.0);
        assert!(matches!(
            ipw_utility(&d, &policy, &[0.5; 3], &[0.5; 3]),
            Err(Error::Eval(_))
        ));
    }

    #[test]
    fn ipw_is_invariant_to_subject_order() {
        let mut d = tiny_dataset();
        let cat = tiny_catalog();
        let policy = match_all_policy(&cat, 1.0, 1.0);
        let u1 = ipw_utility(&d, &policy, &[0.7, 0.7, 0.7], &[0.6, 0.6, 0.6]).unwrap();
        d.trajectories.reverse();
        let u2 = ipw_utility(&d, &policy, &[0.7, 0.7, 0.7], &[0.6, 0.6, 0.6]).unwrap();
        assert_abs_diff_eq!(u1, u2, epsilon = 1e-12);
    }

    #[test]
    fn profit_lambda_arithmetic() {
        assert_eq!(profit_lambda(0.8487, (1.0, 2.0, 3.0, 4.0), 0.0), 0.8487);
        assert_abs_diff_eq!(
            profit_lambda(1.0, (0.1, 0.0, 0.1, 0.0), 2.0),
            0.6,
            epsilon = 1e-12
        );
    }

    #[test]
    fn frequencies_sum_to_one_and_respect_tie_rule() {
        let cat = tiny_catalog();
        let policy = match_all_policy(&cat, 0.0, 1.0);
        let records: Vec<_> = (0..7)
            .map(|_| {
                let mut oracle = StaticOracle { s1: vec![1.0], s2: vec![2.0] };
                deploy(&policy, &mut oracle).unwrap()
            })
            .collect();
        let table = selection_frequencies(&records, 1, 1).unwrap();
        assert_abs_diff_eq!(table.freq1.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(table.freq2.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_eq!(table.freq1[0], 1.0);
        assert_eq!((table.p_a1, table.p_a2), (0.0, 1.0));
    }

    #[test]
    fn mc_profit_matches_exact_profit_on_instance() {
        let inst = random_instance(4);
        let (exact, regime) = backward_induction_optimal(&inst, 1.0).unwrap();
        let mc = mc_profit_on_instance(&inst, &regime, 1.0, 100_000, 17).unwrap();
        assert!(
            (mc.profit - exact).abs() <= 2.0 * mc.std_error + 1e-9,
            "mc {} vs exact {exact} (se {})",
            mc.profit,
            mc.std_error
        );
        let direct = exact_profit(&inst, &regime, 1.0).unwrap();
        assert_abs_diff_eq!(direct, exact, epsilon = 1e-12);
    }
}
