//! Domain types shared by every other module: subject trajectories,
//! covariate index sets, assessment catalogs, and cost specifications.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};

/// One subject's observed record: stage-1 covariates, first treatment,
/// stage-2 covariates, second treatment, and the outcome (higher is better).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub s1: Vec<f64>,
    pub a1: f64,
    pub s2: Vec<f64>,
    pub a2: f64,
    pub y: f64,
}

/// An ordered collection of trajectories with declared covariate dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
    pub d1: usize,
    pub d2: usize,
}

impl Dataset {
    pub fn new(trajectories: Vec<Trajectory>, d1: usize, d2: usize) -> Self {
        Dataset { trajectories, d1, d2 }
    }

    pub fn n(&self) -> usize {
        self.trajectories.len()
    }

    /// A new dataset holding only the given rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            trajectories: rows.iter().map(|&i| self.trajectories[i].clone()).collect(),
            d1: self.d1,
            d2: self.d2,
        }
    }
}

/// A dataset-invariant violation. Violations are data, not failures:
/// validation reports all of them instead of stopping at the first.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// Offending row, when the problem is row-local.
    pub row: Option<usize>,
    pub reason: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.row {
            Some(r) => write!(f, "row {}: {}", r, self.reason),
            None => write!(f, "{}", self.reason),
        }
    }
}

fn is_binary(a: f64) -> bool {
    a == 0.0 || a == 1.0
}

/// Checks every dataset invariant and returns the list of violations
/// (empty iff the dataset is usable). Pure: identical input gives an
/// identical list.
pub fn validate_dataset(d: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();
    if d.trajectories.is_empty() {
        out.push(Violation { row: None, reason: "dataset is empty".into() });
        return out;
    }
    let mut arms1 = [false, false];
    let mut arms2 = [false, false];
    for (i, t) in d.trajectories.iter().enumerate() {
        if t.s1.len() != d.d1 {
            out.push(Violation {
                row: Some(i),
                reason: format!("s1 has length {}, expected d1={}", t.s1.len(), d.d1),
            });
        }
        if t.s2.len() != d.d2 {
            out.push(Violation {
                row: Some(i),
                reason: format!("s2 has length {}, expected d2={}", t.s2.len(), d.d2),
            });
        }
        if !is_binary(t.a1) {
            out.push(Violation { row: Some(i), reason: format!("treatment a1={} not binary", t.a1) });
        } else {
            arms1[t.a1 as usize] = true;
        }
        if !is_binary(t.a2) {
            out.push(Violation { row: Some(i), reason: format!("treatment a2={} not binary", t.a2) });
        } else {
            arms2[t.a2 as usize] = true;
        }
        if t.s1.iter().chain(t.s2.iter()).any(|v| !v.is_finite()) {
            out.push(Violation { row: Some(i), reason: "non-finite covariate value".into() });
        }
        if !t.y.is_finite() {
            out.push(Violation { row: Some(i), reason: "non-finite outcome".into() });
        }
    }
    for (stage, arms) in [(1, arms1), (2, arms2)] {
        for (arm, seen) in arms.iter().enumerate() {
            if !seen {
                out.push(Violation {
                    row: None,
                    reason: format!("positivity: arm {arm} absent at stage {stage}"),
                });
            }
        }
    }
    out
}

/// A sorted, duplicate-free set of 1-based covariate positions within a stage.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct FeatureIndexSet(Vec<usize>);

impl<'de> Deserialize<'de> for FeatureIndexSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<usize>::deserialize(deserializer)?;
        Ok(FeatureIndexSet::new(v))
    }
}

impl FeatureIndexSet {
    /// Sorts and deduplicates the given 1-based indices.
    pub fn new(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        FeatureIndexSet(indices)
    }

    pub fn empty() -> Self {
        FeatureIndexSet(Vec::new())
    }

    /// The complement of `other` within `[d]`.
    pub fn complement_of(other: &FeatureIndexSet, d: usize) -> Self {
        FeatureIndexSet((1..=d).filter(|i| !other.contains(*i)).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.0.binary_search(&idx).is_ok()
    }

    pub fn is_subset_of(&self, other: &FeatureIndexSet) -> bool {
        self.0.iter().all(|i| other.contains(*i))
    }

    pub fn is_disjoint_from(&self, other: &FeatureIndexSet) -> bool {
        self.0.iter().all(|i| !other.contains(*i))
    }

    pub fn union(&self, other: &FeatureIndexSet) -> FeatureIndexSet {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        FeatureIndexSet::new(v)
    }

    pub fn max_index(&self) -> Option<usize> {
        self.0.last().copied()
    }
}

impl fmt::Display for FeatureIndexSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|i| i.to_string()).collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

/// Components of `x` at the 1-based positions in `s`, in ascending index
/// order. The empty set yields the empty vector.
pub fn subvector(x: &[f64], s: &FeatureIndexSet) -> Result<Vec<f64>> {
    if let Some(m) = s.max_index() {
        if m > x.len() {
            return Err(Error::Dimension(format!(
                "index {} out of range for vector of length {}",
                m,
                x.len()
            )));
        }
    }
    Ok(s.indices().iter().map(|&i| x[i - 1]).collect())
}

/// Concatenates the given parts in order, appending a constant 1 last when
/// `intercept` is set.
pub fn assemble_design(parts: &[&[f64]], intercept: bool) -> Vec<f64> {
    let len: usize = parts.iter().map(|p| p.len()).sum::<usize>() + usize::from(intercept);
    let mut out = Vec::with_capacity(len);
    for p in parts {
        out.extend_from_slice(p);
    }
    if intercept {
        out.push(1.0);
    }
    out
}

/// Free baseline index sets and the ordered candidate collections of
/// additional covariate subsets available at each stage.
///
/// Candidate sets are identified by their position in the ordered lists,
/// which is stable across runs and used for downstream tie-breaking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentCatalog {
    pub d1: usize,
    pub d2: usize,
    pub l1: FeatureIndexSet,
    pub l2: FeatureIndexSet,
    pub cand1: Vec<FeatureIndexSet>,
    pub cand2: Vec<FeatureIndexSet>,
}

impl AssessmentCatalog {
    pub fn new(
        d1: usize,
        d2: usize,
        l1: FeatureIndexSet,
        l2: FeatureIndexSet,
        cand1: Vec<FeatureIndexSet>,
        cand2: Vec<FeatureIndexSet>,
    ) -> Result<Self> {
        let cat = AssessmentCatalog { d1, d2, l1, l2, cand1, cand2 };
        cat.validate()?;
        Ok(cat)
    }

    fn validate_stage(
        stage: usize,
        d: usize,
        l: &FeatureIndexSet,
        cands: &[FeatureIndexSet],
    ) -> Result<()> {
        if l.max_index().unwrap_or(0) > d {
            return Err(Error::Config(format!("stage-{stage} baseline set exceeds dimension {d}")));
        }
        let full = FeatureIndexSet::complement_of(l, d);
        let mut seen = std::collections::HashSet::new();
        for (i, c) in cands.iter().enumerate() {
            if !c.is_disjoint_from(l) {
                return Err(Error::Config(format!(
                    "stage-{stage} candidate {i} {c} overlaps the baseline set {l}"
                )));
            }
            if !c.is_subset_of(&full) {
                return Err(Error::Config(format!(
                    "stage-{stage} candidate {i} {c} not within [{d}] minus baseline"
                )));
            }
            if !seen.insert(c.clone()) {
                return Err(Error::Config(format!("stage-{stage} candidate {c} is duplicated")));
            }
        }
        if !cands.contains(&full) {
            return Err(Error::Config(format!(
                "stage-{stage} candidates must include the full set {full}"
            )));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        Self::validate_stage(1, self.d1, &self.l1, &self.cand1)?;
        Self::validate_stage(2, self.d2, &self.l2, &self.cand2)?;
        Ok(())
    }

    /// The full additional set at stage 1 (`[d1]` minus the baseline).
    pub fn j1_full(&self) -> FeatureIndexSet {
        FeatureIndexSet::complement_of(&self.l1, self.d1)
    }

    pub fn j2_full(&self) -> FeatureIndexSet {
        FeatureIndexSet::complement_of(&self.l2, self.d2)
    }

    /// Position of the full set in the stage-1 candidate list.
    pub fn j1_full_idx(&self) -> usize {
        let full = self.j1_full();
        self.cand1.iter().position(|c| *c == full).expect("validated catalog has full set")
    }

    pub fn j2_full_idx(&self) -> usize {
        let full = self.j2_full();
        self.cand2.iter().position(|c| *c == full).expect("validated catalog has full set")
    }
}

/// Assessment cost tables (aligned positionally with the catalog candidate
/// lists), per-arm treatment costs, and the utility/cost trade-off scalar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    /// Cost of assessing each stage-1 candidate set, by catalog position.
    pub c1c: Vec<f64>,
    /// Cost of assessing each stage-2 candidate set, by catalog position.
    pub c2c: Vec<f64>,
    /// Costs of assigning (a1=0, a1=1).
    pub c1t: (f64, f64),
    /// Costs of assigning (a2=0, a2=1).
    pub c2t: (f64, f64),
    pub lambda: f64,
}

impl CostSpec {
    pub fn zero(catalog: &AssessmentCatalog) -> Self {
        CostSpec {
            c1c: vec![0.0; catalog.cand1.len()],
            c2c: vec![0.0; catalog.cand2.len()],
            c1t: (0.0, 0.0),
            c2t: (0.0, 0.0),
            lambda: 0.0,
        }
    }

    pub fn validate(&self, catalog: &AssessmentCatalog) -> Result<()> {
        if self.c1c.len() != catalog.cand1.len() || self.c2c.len() != catalog.cand2.len() {
            return Err(Error::Config(format!(
                "cost tables must cover exactly the catalog candidates ({} and {} entries)",
                catalog.cand1.len(),
                catalog.cand2.len()
            )));
        }
        let all_costs = self
            .c1c
            .iter()
            .chain(self.c2c.iter())
            .chain([&self.c1t.0, &self.c1t.1, &self.c2t.0, &self.c2t.1]);
        for c in all_costs {
            if !c.is_finite() {
                return Err(Error::Config("costs must be finite".into()));
            }
        }
        if self.c1c.iter().chain(self.c2c.iter()).any(|c| *c < 0.0) {
            return Err(Error::Config("assessment costs must be nonnegative".into()));
        }
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return Err(Error::Config("lambda must be nonnegative".into()));
        }
        Ok(())
    }

    /// All cost terms multiplied by `lambda`, with the trade-off already
    /// folded in (`lambda` resets to 1). Fitting always works on these
    /// adjusted costs.
    pub fn lambda_adjusted(&self) -> CostSpec {
        let l = self.lambda;
        CostSpec {
            c1c: self.c1c.iter().map(|c| c * l).collect(),
            c2c: self.c2c.iter().map(|c| c * l).collect(),
            c1t: (self.c1t.0 * l, self.c1t.1 * l),
            c2t: (self.c2t.0 * l, self.c2t.1 * l),
            lambda: 1.0,
        }
    }

    pub fn c1t_of(&self, a1: f64) -> f64 {
        if a1 > 0.5 {
            self.c1t.1
        } else {
            self.c1t.0
        }
    }

    pub fn c2t_of(&self, a2: f64) -> f64 {
        if a2 > 0.5 {
            self.c2t.1
        } else {
            self.c2t.0
        }
    }
}

/// Reads a dataset from CSV with header `s1_1..s1_d1,a1,s2_1..s2_d2,a2,y`.
pub fn read_dataset_csv<P: AsRef<Path>>(path: P) -> Result<Dataset> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    let d1 = cols.iter().take_while(|c| c.starts_with("s1_")).count();
    let rest = &cols[d1..];
    if d1 == 0 || rest.first() != Some(&"a1") {
        return Err(Error::Data("expected header s1_1..s1_d1,a1,s2_1..s2_d2,a2,y".into()));
    }
    let d2 = rest[1..].iter().take_while(|c| c.starts_with("s2_")).count();
    if d2 == 0 || rest.get(1 + d2) != Some(&"a2") || rest.get(2 + d2) != Some(&"y") {
        return Err(Error::Data("expected header s1_1..s1_d1,a1,s2_1..s2_d2,a2,y".into()));
    }
    let mut trajectories = Vec::new();
    for (row_idx, record) in rdr.records().enumerate() {
        let record = record?;
        let nums: Vec<f64> = record
            .iter()
            .map(|v| {
                v.parse::<f64>().map_err(|_| {
                    Error::Data(format!("row {row_idx}: cannot parse `{v}` as a number"))
                })
            })
            .collect::<Result<_>>()?;
        if nums.len() != d1 + d2 + 3 {
            return Err(Error::Data(format!(
                "row {row_idx}: expected {} fields, found {}",
                d1 + d2 + 3,
                nums.len()
            )));
        }
        trajectories.push(Trajectory {
            s1: nums[..d1].to_vec(),
            a1: nums[d1],
            s2: nums[d1 + 1..d1 + 1 + d2].to_vec(),
            a2: nums[d1 + 1 + d2],
            y: nums[d1 + 2 + d2],
        });
    }
    Ok(Dataset::new(trajectories, d1, d2))
}

/// Writes a dataset in the CSV layout accepted by [`read_dataset_csv`].
pub fn write_dataset_csv<P: AsRef<Path>>(d: &Dataset, path: P) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    let mut header = Vec::new();
    for i in 1..=d.d1 {
        header.push(format!("s1_{i}"));
    }
    header.push("a1".into());
    for i in 1..=d.d2 {
        header.push(format!("s2_{i}"));
    }
    header.push("a2".into());
    header.push("y".into());
    wtr.write_record(&header)?;
    for t in &d.trajectories {
        let mut rec: Vec<String> = Vec::with_capacity(d.d1 + d.d2 + 3);
        rec.extend(t.s1.iter().map(|v| v.to_string()));
        rec.push(t.a1.to_string());
        rec.extend(t.s2.iter().map(|v| v.to_string()));
        rec.push(t.a2.to_string());
        rec.push(t.y.to_string());
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(s1: &[f64], a1: f64, s2: &[f64], a2: f64, y: f64) -> Trajectory {
        Trajectory { s1: s1.to_vec(), a1, s2: s2.to_vec(), a2, y }
    }

    #[test]
    fn nonbinary_treatment_is_flagged_with_row() {
        let mut rows = vec![
            traj(&[0.0], 0.0, &[0.0], 0.0, 1.0),
            traj(&[0.0], 1.0, &[0.0], 1.0, 1.0),
            traj(&[0.0], 0.0, &[0.0], 1.0, 1.0),
            traj(&[0.0], 2.0, &[0.0], 0.0, 1.0),
        ];
        rows.swap(2, 3);
        let d = Dataset::new(rows, 1, 1);
        let v = validate_dataset(&d);
        assert!(v.iter().any(|x| x.row == Some(2) && x.reason.contains("a1=2")));
    }

    #[test]
    fn degenerate_arm_is_a_positivity_violation() {
        let rows = vec![
            traj(&[0.0], 0.0, &[0.0], 1.0, 1.0),
            traj(&[0.0], 1.0, &[0.0], 1.0, 1.0),
        ];
        let v = validate_dataset(&Dataset::new(rows, 1, 1));
        assert!(v.iter().any(|x| x.reason.contains("positivity") && x.reason.contains("stage 2")));
    }

    #[test]
    fn validation_is_pure() {
        let rows = vec![traj(&[0.0], 0.0, &[f64::NAN], 3.0, 1.0)];
        let d = Dataset::new(rows, 1, 1);
        assert_eq!(validate_dataset(&d), validate_dataset(&d));
    }

    #[test]
    fn subvector_picks_requested_components() {
        let s = FeatureIndexSet::new(vec![2]);
        assert_eq!(subvector(&[5.0, 6.0, 7.0], &s).unwrap(), vec![6.0]);
        let s = FeatureIndexSet::new(vec![2, 3, 4]);
        assert_eq!(subvector(&[1.0, 2.0, 3.0, 4.0, 5.0], &s).unwrap(), vec![2.0, 3.0, 4.0]);
        assert_eq!(subvector(&[1.0, 2.0], &FeatureIndexSet::empty()).unwrap(), Vec::<f64>::new());
    }

    #[test]
    fn subvector_rejects_out_of_range() {
        let s = FeatureIndexSet::new(vec![4]);
        assert!(matches!(subvector(&[1.0, 2.0], &s), Err(Error::Dimension(_))));
    }

    #[test]
    fn subvector_of_full_range_is_identity() {
        let x = [3.0, 1.0, 4.0, 1.5];
        let s = FeatureIndexSet::new((1..=4).collect());
        assert_eq!(subvector(&x, &s).unwrap(), x.to_vec());
    }

    #[test]
    fn index_sets_sort_regardless_of_construction_order() {
        let a = FeatureIndexSet::new(vec![4, 2, 3]);
        let b = FeatureIndexSet::new(vec![3, 4, 2, 2]);
        assert_eq!(a, b);
        assert_eq!(a.indices(), &[2, 3, 4]);
    }

    #[test]
    fn assemble_design_concatenates_and_appends_intercept() {
        assert_eq!(assemble_design(&[&[1.0, 2.0], &[0.0]], false), vec![1.0, 2.0, 0.0]);
        assert_eq!(assemble_design(&[&[1.0, 2.0], &[0.0]], true), vec![1.0, 2.0, 0.0, 1.0]);
        assert_eq!(assemble_design(&[&[], &[1.0]], true), vec![1.0, 1.0]);
    }

    #[test]
    fn catalog_rejects_overlap_and_missing_full_set() {
        let l1 = FeatureIndexSet::new(vec![1]);
        let bad = AssessmentCatalog::new(
            3,
            2,
            l1.clone(),
            FeatureIndexSet::empty(),
            vec![FeatureIndexSet::new(vec![1, 2])],
            vec![FeatureIndexSet::new(vec![1, 2])],
        );
        assert!(bad.is_err());
        let missing_full = AssessmentCatalog::new(
            3,
            2,
            l1,
            FeatureIndexSet::empty(),
            vec![FeatureIndexSet::new(vec![2])],
            vec![FeatureIndexSet::new(vec![1, 2])],
        );
        assert!(missing_full.is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let d = Dataset::new(
            vec![
                traj(&[0.25, -1.5], 1.0, &[3.0], 0.0, 0.125),
                traj(&[1.0, 2.0], 0.0, &[-0.75], 1.0, -2.0),
            ],
            2,
            1,
        );
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("d.csv");
        write_dataset_csv(&d, &path).unwrap();
        let back = read_dataset_csv(&path).unwrap();
        assert_eq!(d, back);
    }
}
