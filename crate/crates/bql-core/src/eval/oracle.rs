//! Exact optimal-regime oracles on finite instances.
//!
//! Two independent routes compute the best achievable profit:
//!
//! - [`brute_force_optimal`] enumerates every information-feasible regime
//!   (all maps from assessed histories to decisions) and evaluates each by
//!   exact summation;
//! - [`backward_induction_optimal`] builds the Q-functions backward from
//!   the second treatment and reads off the greedy regime.
//!
//! Their profits must agree exactly; the property-based equality test is
//! the executable form of the optimality theorem.

#![allow(clippy::needless_range_loop)]

use std::collections::HashMap;

use crate::data::subvector;
use crate::deploy::Policy;
use crate::error::{Error, Result};
use crate::eval::instance::DiscreteInstance;

/// Bit-exact grouping key for assessed covariate values.
pub type Key = Vec<u64>;

pub fn value_key(vals: &[f64]) -> Key {
    vals.iter().map(|v| v.to_bits()).collect()
}

fn cat_keys(parts: &[&[f64]]) -> Key {
    parts.iter().flat_map(|p| p.iter()).map(|v| v.to_bits()).collect()
}

/// The four decision tables of a tabulated regime, by reference.
type TableRefs<'a> = (
    &'a HashMap<Key, usize>,
    &'a HashMap<(usize, Key), f64>,
    &'a HashMap<(usize, u8, Key), usize>,
    &'a HashMap<(usize, u8, usize, Key), f64>,
);

/// A regime stored as lookup tables over assessed-history keys.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleRegime {
    pub catalog: crate::data::AssessmentCatalog,
    pub pi1c: HashMap<Key, usize>,
    pub pi1t: HashMap<(usize, Key), f64>,
    pub pi2c: HashMap<(usize, u8, Key), usize>,
    pub pi2t: HashMap<(usize, u8, usize, Key), f64>,
}

impl Policy for OracleRegime {
    fn catalog(&self) -> &crate::data::AssessmentCatalog {
        &self.catalog
    }

    fn stage1_assessment(&self, s_l1: &[f64]) -> Result<(usize, Vec<f64>)> {
        let j1 = *self
            .pi1c
            .get(&value_key(s_l1))
            .ok_or_else(|| Error::Eval("state outside the tabulated support".into()))?;
        let mut scores = vec![0.0; self.catalog.cand1.len()];
        scores[j1] = 1.0;
        Ok((j1, scores))
    }

    fn stage1_treatment(&self, j1: usize, s_l1: &[f64], s_j1: &[f64]) -> Result<(f64, f64)> {
        let a1 = *self
            .pi1t
            .get(&(j1, cat_keys(&[s_l1, s_j1])))
            .ok_or_else(|| Error::Eval("state outside the tabulated support".into()))?;
        Ok((a1, a1 - 0.5))
    }

    fn stage2_assessment(
        &self,
        j1: usize,
        a1: f64,
        s_l1: &[f64],
        s_j1: &[f64],
        s_l2: &[f64],
    ) -> Result<(usize, Vec<f64>)> {
        let j2 = *self
            .pi2c
            .get(&(j1, a1 as u8, cat_keys(&[s_l1, s_j1, s_l2])))
            .ok_or_else(|| Error::Eval("state outside the tabulated support".into()))?;
        let mut scores = vec![0.0; self.catalog.cand2.len()];
        scores[j2] = 1.0;
        Ok((j2, scores))
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
        let a2 = *self
            .pi2t
            .get(&(j1, a1 as u8, j2, cat_keys(&[s_l1, s_j1, s_l2, s_j2])))
            .ok_or_else(|| Error::Eval("state outside the tabulated support".into()))?;
        Ok((a2, a2 - 0.5))
    }
}

/// Assessed-history pieces of a support pair, precomputed per candidate.
struct Pieces {
    /// `[s1][j1] -> s_{j1}` values.
    s_j1: Vec<Vec<Vec<f64>>>,
    /// `[s1] -> s_{l1}` values.
    s_l1: Vec<Vec<f64>>,
    /// `[s2][j2] -> s_{j2}` values.
    s_j2: Vec<Vec<Vec<f64>>>,
    /// `[s2] -> s_{l2}` values.
    s_l2: Vec<Vec<f64>>,
}

impl Pieces {
    fn new(inst: &DiscreteInstance) -> Result<Self> {
        let cat = &inst.catalog;
        Ok(Pieces {
            s_l1: inst
                .s1_support
                .iter()
                .map(|p| subvector(p, &cat.l1))
                .collect::<Result<_>>()?,
            s_j1: inst
                .s1_support
                .iter()
                .map(|p| cat.cand1.iter().map(|c| subvector(p, c)).collect::<Result<_>>())
                .collect::<Result<_>>()?,
            s_l2: inst
                .s2_support
                .iter()
                .map(|p| subvector(p, &cat.l2))
                .collect::<Result<_>>()?,
            s_j2: inst
                .s2_support
                .iter()
                .map(|p| cat.cand2.iter().map(|c| subvector(p, c)).collect::<Result<_>>())
                .collect::<Result<_>>()?,
        })
    }

    fn key1c(&self, s1: usize) -> Key {
        value_key(&self.s_l1[s1])
    }

    fn key1t(&self, s1: usize, j1: usize) -> (usize, Key) {
        (j1, cat_keys(&[&self.s_l1[s1], &self.s_j1[s1][j1]]))
    }

    fn key2c(&self, s1: usize, s2: usize, j1: usize, a1: usize) -> (usize, u8, Key) {
        (j1, a1 as u8, cat_keys(&[&self.s_l1[s1], &self.s_j1[s1][j1], &self.s_l2[s2]]))
    }

    fn key2t(&self, s1: usize, s2: usize, j1: usize, a1: usize, j2: usize) -> (usize, u8, usize, Key) {
        (
            j1,
            a1 as u8,
            j2,
            cat_keys(&[&self.s_l1[s1], &self.s_j1[s1][j1], &self.s_l2[s2], &self.s_j2[s2][j2]]),
        )
    }
}

/// Exact expected profit of any policy under the instance law, with costs
/// scaled by `lambda`.
pub fn exact_profit(inst: &DiscreteInstance, policy: &dyn Policy, lambda: f64) -> Result<f64> {
    inst.validate()?;
    let pieces = Pieces::new(inst)?;
    let c = &inst.costs;
    let mut total = 0.0;
    for s1 in 0..inst.n1() {
        let p1 = inst.s1_probs[s1];
        if p1 == 0.0 {
            continue;
        }
        let (j1, _) = policy.stage1_assessment(&pieces.s_l1[s1])?;
        let (a1, _) = policy.stage1_treatment(j1, &pieces.s_l1[s1], &pieces.s_j1[s1][j1])?;
        let a1i = a1 as usize;
        let mut value = -lambda * (c.c1c[j1] + c.c1t_of(a1));
        for s2 in 0..inst.n2() {
            let p2 = inst.transition[s1][a1i][s2];
            if p2 == 0.0 {
                continue;
            }
            let (j2, _) = policy.stage2_assessment(
                j1,
                a1,
                &pieces.s_l1[s1],
                &pieces.s_j1[s1][j1],
                &pieces.s_l2[s2],
            )?;
            let (a2, _) = policy.stage2_treatment(
                j1,
                a1,
                j2,
                &pieces.s_l1[s1],
                &pieces.s_j1[s1][j1],
                &pieces.s_l2[s2],
                &pieces.s_j2[s2][j2],
            )?;
            let mean_y = inst.outcome_mean[s1][a1i][s2][a2 as usize];
            value += p2 * (mean_y - lambda * (c.c2c[j2] + c.c2t_of(a2)));
        }
        total += p1 * value;
    }
    Ok(total)
}

/// Exhaustive search over every information-feasible regime.
///
/// Decision tables are enumerated over the cells actually reachable given
/// the upstream choices (unreachable cells cannot affect the profit), each
/// candidate regime is evaluated by exact summation, and the best is
/// returned. Fails with a size error when more than `max_evals` regimes
/// would need evaluating.
pub fn brute_force_optimal(
    inst: &DiscreteInstance,
    lambda: f64,
    max_evals: u64,
) -> Result<(f64, OracleRegime)> {
    inst.validate()?;
    let pieces = Pieces::new(inst)?;
    let n_j1 = inst.catalog.cand1.len();
    let n_j2 = inst.catalog.cand2.len();

    // Stage-1 assessment cells: distinct baseline keys.
    let mut cells1c: Vec<Key> = Vec::new();
    let mut cell_of_s1: Vec<usize> = Vec::new();
    for s1 in 0..inst.n1() {
        let k = pieces.key1c(s1);
        let pos = cells1c.iter().position(|c| *c == k).unwrap_or_else(|| {
            cells1c.push(k.clone());
            cells1c.len() - 1
        });
        cell_of_s1.push(pos);
    }

    struct Search<'a> {
        inst: &'a DiscreteInstance,
        lambda: f64,
        max_evals: u64,
        evals: u64,
        best: Option<(f64, OracleRegime)>,
    }

    impl Search<'_> {
        fn leaf(
            &mut self,
            j1_of_s1: &[usize],
            a1_of_s1: &[usize],
            j2_of_pair: &HashMap<(usize, usize), usize>,
            a2_of_pair: &HashMap<(usize, usize), usize>,
            tables: TableRefs<'_>,
        ) -> Result<()> {
            self.evals += 1;
            if self.evals > self.max_evals {
                return Err(Error::EnumerationSize {
                    estimate: self.evals as u128,
                    limit: self.max_evals as u128,
                });
            }
            let c = &self.inst.costs;
            let mut total = 0.0;
            for s1 in 0..self.inst.n1() {
                let p1 = self.inst.s1_probs[s1];
                let (j1, a1) = (j1_of_s1[s1], a1_of_s1[s1]);
                let mut value = -self.lambda * (c.c1c[j1] + c.c1t_of(a1 as f64));
                for s2 in 0..self.inst.n2() {
                    let p2 = self.inst.transition[s1][a1][s2];
                    if p2 == 0.0 {
                        continue;
                    }
                    let j2 = j2_of_pair[&(s1, s2)];
                    let a2 = a2_of_pair[&(s1, s2)];
                    let mean_y = self.inst.outcome_mean[s1][a1][s2][a2];
                    value += p2 * (mean_y - self.lambda * (c.c2c[j2] + c.c2t_of(a2 as f64)));
                }
                total += p1 * value;
            }
            if self.best.as_ref().is_none_or(|(b, _)| total > *b) {
                let (t1c, t1t, t2c, t2t) = tables;
                self.best = Some((
                    total,
                    OracleRegime {
                        catalog: self.inst.catalog.clone(),
                        pi1c: t1c.clone(),
                        pi1t: t1t.clone(),
                        pi2c: t2c.clone(),
                        pi2t: t2t.clone(),
                    },
                ));
            }
            Ok(())
        }
    }

    let mut search =
        Search { inst, lambda, max_evals, evals: 0, best: None };

    // Enumerate stage-1 assessment tables (j1 per baseline cell).
    let m1 = cells1c.len();
    let mut assign1c = vec![0usize; m1];
    loop {
        let j1_of_s1: Vec<usize> = cell_of_s1.iter().map(|&c| assign1c[c]).collect();
        let t1c: HashMap<Key, usize> =
            cells1c.iter().cloned().zip(assign1c.iter().copied()).collect();

        // Reachable stage-1 treatment cells under this assessment table.
        let mut cells1t: Vec<(usize, Key)> = Vec::new();
        let mut cell1t_of_s1: Vec<usize> = Vec::new();
        for s1 in 0..inst.n1() {
            let k = pieces.key1t(s1, j1_of_s1[s1]);
            let pos = cells1t.iter().position(|c| *c == k).unwrap_or_else(|| {
                cells1t.push(k.clone());
                cells1t.len() - 1
            });
            cell1t_of_s1.push(pos);
        }
        let mut assign1t = vec![0usize; cells1t.len()];
        'pi1t: loop {
            let a1_of_s1: Vec<usize> = cell1t_of_s1.iter().map(|&c| assign1t[c]).collect();
            let t1t: HashMap<(usize, Key), f64> = cells1t
                .iter()
                .cloned()
                .zip(assign1t.iter().map(|&a| a as f64))
                .collect();

            // Reachable stage-2 assessment cells.
            let mut cells2c: Vec<(usize, u8, Key)> = Vec::new();
            let mut cell2c_of_pair: HashMap<(usize, usize), usize> = HashMap::new();
            for s1 in 0..inst.n1() {
                for s2 in 0..inst.n2() {
                    if inst.transition[s1][a1_of_s1[s1]][s2] == 0.0 {
                        continue;
                    }
                    let k = pieces.key2c(s1, s2, j1_of_s1[s1], a1_of_s1[s1]);
                    let pos = cells2c.iter().position(|c| *c == k).unwrap_or_else(|| {
                        cells2c.push(k.clone());
                        cells2c.len() - 1
                    });
                    cell2c_of_pair.insert((s1, s2), pos);
                }
            }
            let mut assign2c = vec![0usize; cells2c.len()];
            'pi2c: loop {
                let j2_of_pair: HashMap<(usize, usize), usize> =
                    cell2c_of_pair.iter().map(|(&p, &c)| (p, assign2c[c])).collect();
                let t2c: HashMap<(usize, u8, Key), usize> =
                    cells2c.iter().cloned().zip(assign2c.iter().copied()).collect();

                // Reachable stage-2 treatment cells.
                let mut cells2t: Vec<(usize, u8, usize, Key)> = Vec::new();
                let mut cell2t_of_pair: HashMap<(usize, usize), usize> = HashMap::new();
                for (&(s1, s2), &j2) in &j2_of_pair {
                    let k = pieces.key2t(s1, s2, j1_of_s1[s1], a1_of_s1[s1], j2);
                    let pos = cells2t.iter().position(|c| *c == k).unwrap_or_else(|| {
                        cells2t.push(k.clone());
                        cells2t.len() - 1
                    });
                    cell2t_of_pair.insert((s1, s2), pos);
                }
                let mut assign2t = vec![0usize; cells2t.len()];
                'pi2t: loop {
                    let a2_of_pair: HashMap<(usize, usize), usize> =
                        cell2t_of_pair.iter().map(|(&p, &c)| (p, assign2t[c])).collect();
                    let t2t: HashMap<(usize, u8, usize, Key), f64> = cells2t
                        .iter()
                        .cloned()
                        .zip(assign2t.iter().map(|&a| a as f64))
                        .collect();
                    search.leaf(
                        &j1_of_s1,
                        &a1_of_s1,
                        &j2_of_pair,
                        &a2_of_pair,
                        (&t1c, &t1t, &t2c, &t2t),
                    )?;
                    if !increment(&mut assign2t, 2) {
                        break 'pi2t;
                    }
                }
                if !increment(&mut assign2c, n_j2) {
                    break 'pi2c;
                }
            }
            if !increment(&mut assign1t, 2) {
                break 'pi1t;
            }
        }
        if !increment(&mut assign1c, n_j1) {
            break;
        }
    }
    let (profit, regime) =
        search.best.ok_or_else(|| Error::Eval("empty regime space".into()))?;
    Ok((profit, regime))
}

/// Advances a mixed-radix counter; false when it wraps to all zeros.
fn increment(digits: &mut [usize], radix: usize) -> bool {
    for d in digits.iter_mut() {
        *d += 1;
        if *d < radix {
            return true;
        }
        *d = 0;
    }
    false
}

/// Exact backward induction over the instance.
///
/// Builds the restricted and unrestricted Q-functions from the second
/// treatment backward, taking conditional expectations over the states
/// consistent with each assessed history, and returns the induced greedy
/// regime with its exact profit. Argmax ties resolve to the lowest
/// candidate position; treatment ties resolve to action 0 (strict-sign
/// rule).
pub fn backward_induction_optimal(
    inst: &DiscreteInstance,
    lambda: f64,
) -> Result<(f64, OracleRegime)> {
    inst.validate()?;
    let pieces = Pieces::new(inst)?;
    let n_j1 = inst.catalog.cand1.len();
    let n_j2 = inst.catalog.cand2.len();
    let c = &inst.costs;

    // Joint weights under committed a1: w[s1][a1][s2] = P(s1) P(s2 | s1, a1).
    let weight = |s1: usize, a1: usize, s2: usize| inst.s1_probs[s1] * inst.transition[s1][a1][s2];

    // Q2t restricted: group (s1, s2) by assessed key per (j1, a1, j2).
    let mut q2t: HashMap<(usize, u8, usize, Key), [f64; 2]> = HashMap::new();
    let mut w2t: HashMap<(usize, u8, usize, Key), f64> = HashMap::new();
    for j1 in 0..n_j1 {
        for a1 in 0..2usize {
            for j2 in 0..n_j2 {
                for s1 in 0..inst.n1() {
                    for s2 in 0..inst.n2() {
                        let w = weight(s1, a1, s2);
                        if w == 0.0 {
                            continue;
                        }
                        let key = pieces.key2t(s1, s2, j1, a1, j2);
                        let entry = q2t.entry(key.clone()).or_insert([0.0, 0.0]);
                        for a2 in 0..2usize {
                            let qbar = inst.outcome_mean[s1][a1][s2][a2]
                                - lambda * c.c2t_of(a2 as f64);
                            entry[a2] += w * qbar;
                        }
                        *w2t.entry(key).or_insert(0.0) += w;
                    }
                }
            }
        }
    }
    let pi2t: HashMap<(usize, u8, usize, Key), f64> = q2t
        .iter()
        .map(|(k, vals)| {
            // Weights cancel in the comparison; strict rule: treat iff the
            // contrast is positive.
            (k.clone(), f64::from(vals[1] > vals[0]))
        })
        .collect();

    // Unrestricted stage-2 assessment value at (s1, s_l2): expectation over
    // s2 consistent with s_l2 of the value under the restricted rule.
    // Computed pointwise for every (s1, a1, s2, j1, j2) then aggregated.
    let qbar2t_at = |s1: usize, a1: usize, s2: usize, a2: usize| {
        inst.outcome_mean[s1][a1][s2][a2] - lambda * c.c2t_of(a2 as f64)
    };
    let value2_under_rule = |s1: usize, a1: usize, s2: usize, j1: usize, j2: usize| {
        let key = pieces.key2t(s1, s2, j1, a1, j2);
        let a2 = pi2t[&key] as usize;
        qbar2t_at(s1, a1, s2, a2)
    };

    // Restricted stage-2 assessment Q: group (s1, s2) by the pre-assessment
    // history key, average the post-rule value, subtract assessment cost.
    let mut q2c_num: HashMap<(usize, u8, Key), Vec<f64>> = HashMap::new();
    let mut q2c_den: HashMap<(usize, u8, Key), f64> = HashMap::new();
    for j1 in 0..n_j1 {
        for a1 in 0..2usize {
            for s1 in 0..inst.n1() {
                for s2 in 0..inst.n2() {
                    let w = weight(s1, a1, s2);
                    if w == 0.0 {
                        continue;
                    }
                    let key = pieces.key2c(s1, s2, j1, a1);
                    let num = q2c_num.entry(key.clone()).or_insert_with(|| vec![0.0; n_j2]);
                    for j2 in 0..n_j2 {
                        num[j2] += w * (value2_under_rule(s1, a1, s2, j1, j2)
                            - lambda * c.c2c[j2]);
                    }
                    *q2c_den.entry(key).or_insert(0.0) += w;
                }
            }
        }
    }
    let pi2c: HashMap<(usize, u8, Key), usize> = q2c_num
        .iter()
        .map(|(k, nums)| {
            let mut best = 0;
            for (j2, v) in nums.iter().enumerate().skip(1) {
                if *v > nums[best] {
                    best = j2;
                }
            }
            (k.clone(), best)
        })
        .collect();

    // Unrestricted stage-1 treatment value at s1: expectation over s2 of the
    // stage-2 value under the chosen assessment and restricted treatment
    // rules, minus the first treatment cost.
    let mut qbar1t = vec![vec![[0.0; 2]; n_j1]; inst.n1()];
    for s1 in 0..inst.n1() {
        for j1 in 0..n_j1 {
            for a1 in 0..2usize {
                let mut v = -lambda * c.c1t_of(a1 as f64);
                for s2 in 0..inst.n2() {
                    let p2 = inst.transition[s1][a1][s2];
                    if p2 == 0.0 {
                        continue;
                    }
                    let j2 = pi2c[&pieces.key2c(s1, s2, j1, a1)];
                    v += p2 * (value2_under_rule(s1, a1, s2, j1, j2) - lambda * c.c2c[j2]);
                }
                qbar1t[s1][j1][a1] = v;
            }
        }
    }

    // Restricted stage-1 treatment Q over assessed stage-1 histories.
    let mut q1t_num: HashMap<(usize, Key), [f64; 2]> = HashMap::new();
    let mut q1t_den: HashMap<(usize, Key), f64> = HashMap::new();
    for j1 in 0..n_j1 {
        for s1 in 0..inst.n1() {
            let w = inst.s1_probs[s1];
            if w == 0.0 {
                continue;
            }
            let key = pieces.key1t(s1, j1);
            let entry = q1t_num.entry(key.clone()).or_insert([0.0, 0.0]);
            for a1 in 0..2usize {
                entry[a1] += w * qbar1t[s1][j1][a1];
            }
            *q1t_den.entry(key).or_insert(0.0) += w;
        }
    }
    let pi1t: HashMap<(usize, Key), f64> =
        q1t_num.iter().map(|(k, v)| (k.clone(), f64::from(v[1] > v[0]))).collect();

    // Stage-1 assessment Q over the baseline key.
    let mut q1c_num: HashMap<Key, Vec<f64>> = HashMap::new();
    let mut q1c_den: HashMap<Key, f64> = HashMap::new();
    for s1 in 0..inst.n1() {
        let w = inst.s1_probs[s1];
        if w == 0.0 {
            continue;
        }
        let key = pieces.key1c(s1);
        let num = q1c_num.entry(key.clone()).or_insert_with(|| vec![0.0; n_j1]);
        for j1 in 0..n_j1 {
            let a1 = pi1t[&pieces.key1t(s1, j1)] as usize;
            num[j1] += w * (qbar1t[s1][j1][a1] - lambda * c.c1c[j1]);
        }
        *q1c_den.entry(key).or_insert(0.0) += w;
    }
    let pi1c: HashMap<Key, usize> = q1c_num
        .iter()
        .map(|(k, nums)| {
            let mut best = 0;
            for (j1, v) in nums.iter().enumerate().skip(1) {
                if *v > nums[best] {
                    best = j1;
                }
            }
            (k.clone(), best)
        })
        .collect();

    let regime = OracleRegime { catalog: inst.catalog.clone(), pi1c, pi1t, pi2c, pi2t };
    let profit = exact_profit(inst, &regime, lambda)?;
    Ok((profit, regime))
}
