//! Configuration-driven experiment runner: replicated synthetic trials over
//! a sweep grid, with per-replication training draws, method fits, and
//! ground-truth evaluation on fresh subjects.
//!
//! Output is a raw long-format CSV (one row per method, grid point, and
//! replication) plus a summary CSV of means and Monte Carlo standard
//! errors. Runs are resumable (rows already on disk are kept) and
//! deterministic: a given config and seed produce byte-identical CSVs at
//! any parallelism level.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{fit_dense, fit_sparse};
use crate::bql::{fit_bql, BqlConfig};
use crate::data::CostSpec;
use crate::error::{Error, Result};
use crate::eval::{
    backward_induction_optimal, brute_force_optimal, selection_frequencies, DiscreteInstance,
};
use crate::nuisance::LearnerSpec;
use crate::regime::RegimeDocument;
use crate::seed::derive_seed;
use crate::synth::{generate, model_preset, run_on_simulator, summarize_profits, SweepGrid};

const TAG_TRAIN: u64 = 31;
const TAG_TEST: u64 = 32;
const TAG_FIT: u64 = 33;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Bql,
    Dense,
    Sparse,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Bql => write!(f, "bql"),
            Method::Dense => write!(f, "dense"),
            Method::Sparse => write!(f, "sparse"),
        }
    }
}

/// Per-nuisance learner overrides; unset fields keep the pipeline default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerConfig {
    pub f2: Option<LearnerSpec>,
    pub g2: Option<LearnerSpec>,
    pub f1: Option<LearnerSpec>,
    pub g1: Option<LearnerSpec>,
}

/// A full experiment description. Unknown fields are rejected so config
/// typos fail fast instead of silently corrupting long runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Built-in scenario preset id (1..=7) or paths to a custom setup.
    pub model: ModelSource,
    pub methods: Vec<Method>,
    pub n_train: usize,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    pub replications: usize,
    /// Sweep grid; defaults to the preset's own grid.
    #[serde(default)]
    pub grid: Option<SweepGrid>,
    #[serde(default = "default_k_folds")]
    pub k_folds: usize,
    #[serde(default)]
    pub learners: LearnerConfig,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Fixed lasso penalty for the sparse method; absent means
    /// cross-validated.
    #[serde(default)]
    pub sparse_penalty: Option<f64>,
}

/// Where the generative law, catalog, and costs come from: a built-in
/// preset id or a trio of JSON files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSource {
    Preset(u8),
    Custom { generative: PathBuf, catalog: PathBuf, costs: PathBuf },
}

impl ModelSource {
    pub fn label(&self) -> String {
        match self {
            ModelSource::Preset(id) => id.to_string(),
            ModelSource::Custom { .. } => "custom".into(),
        }
    }
}

/// A resolved model: everything an experiment needs to draw and score.
#[derive(Debug, Clone)]
pub struct ResolvedModel {
    pub label: String,
    pub generative: crate::synth::GenerativeSpec,
    pub catalog: crate::data::AssessmentCatalog,
    pub costs: CostSpec,
    pub default_sweep: SweepGrid,
}

fn load_json_file<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {what} at {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("invalid {what}: {e}")))
}

pub fn resolve_model(source: &ModelSource) -> Result<ResolvedModel> {
    match source {
        ModelSource::Preset(id) => {
            let preset = model_preset(*id)?;
            Ok(ResolvedModel {
                label: id.to_string(),
                generative: preset.generative,
                catalog: preset.catalog,
                costs: preset.costs,
                default_sweep: preset.sweep,
            })
        }
        ModelSource::Custom { generative, catalog, costs } => {
            let generative: crate::synth::GenerativeSpec =
                load_json_file(generative, "generative spec")?;
            let catalog: crate::data::AssessmentCatalog = load_json_file(catalog, "catalog")?;
            let costs: CostSpec = load_json_file(costs, "costs")?;
            generative.validate()?;
            catalog.validate()?;
            costs.validate(&catalog)?;
            Ok(ResolvedModel {
                label: "custom".into(),
                generative,
                catalog,
                costs,
                default_sweep: SweepGrid::Lambda(vec![0.0]),
            })
        }
    }
}

fn default_n_test() -> usize {
    5000
}

fn default_k_folds() -> usize {
    2
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        if let Some(grid) = &self.grid {
            let empty = match grid {
                SweepGrid::Lambda(v) => v.is_empty(),
                SweepGrid::SampleSize(v) => v.is_empty(),
                SweepGrid::TreatmentCost { values, .. } => values.is_empty(),
            };
            if empty {
                return Err(Error::Config("sweep grid must be nonempty".into()));
            }
        }
        resolve_model(&self.model)?;
        Ok(())
    }

    pub fn from_json_file<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::Config(format!("cannot read config: {e}")))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn bql_config(&self, seed: u64) -> BqlConfig {
        let mut cfg = BqlConfig { k_folds: self.k_folds, seed, ..BqlConfig::default() };
        if let Some(f2) = &self.learners.f2 {
            cfg.f2 = f2.clone();
        }
        if let Some(g2) = &self.learners.g2 {
            cfg.g2 = g2.clone();
        }
        if let Some(f1) = &self.learners.f1 {
            cfg.f1 = f1.clone();
        }
        if let Some(g1) = &self.learners.g1 {
            cfg.g1 = g1.clone();
        }
        cfg
    }
}

/// One grid point resolved into concrete run parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub label: String,
    pub value: f64,
    pub n_train: usize,
    pub costs: CostSpec,
}

fn resolve_grid(cfg: &ExperimentConfig, model: &ResolvedModel) -> Result<Vec<GridPoint>> {
    let grid = cfg.grid.clone().unwrap_or_else(|| model.default_sweep.clone());
    let base = model.costs.clone();
    let points = match grid {
        SweepGrid::Lambda(values) => values
            .into_iter()
            .map(|v| GridPoint {
                label: "lambda".into(),
                value: v,
                n_train: cfg.n_train,
                costs: CostSpec { lambda: v, ..base.clone() },
            })
            .collect(),
        SweepGrid::SampleSize(values) => values
            .into_iter()
            .map(|n| GridPoint {
                label: "n_train".into(),
                value: n as f64,
                n_train: n,
                costs: base.clone(),
            })
            .collect(),
        SweepGrid::TreatmentCost { stage, arm, values } => values
            .into_iter()
            .map(|v| {
                let mut costs = base.clone();
                let slot = if stage == 1 { &mut costs.c1t } else { &mut costs.c2t };
                if arm == 0 {
                    slot.0 = v;
                } else {
                    slot.1 = v;
                }
                GridPoint {
                    label: format!("c{stage}t_{arm}"),
                    value: v,
                    n_train: cfg.n_train,
                    costs,
                }
            })
            .collect(),
    };
    Ok(points)
}

/// One measurement row of the raw results table.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub model: String,
    pub method: Method,
    pub grid_label: String,
    pub grid_value: f64,
    pub replication: usize,
    pub profit: Option<f64>,
    pub profit_se: Option<f64>,
    pub utility: Option<f64>,
    pub p_a1: Option<f64>,
    pub p_a2: Option<f64>,
    pub freq1: Vec<Option<f64>>,
    pub freq2: Vec<Option<f64>>,
    pub status: String,
}

fn fmt_opt(v: &Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Fits one method and evaluates it on fresh test subjects.
fn run_one(
    cfg: &ExperimentConfig,
    model: &ResolvedModel,
    point: &GridPoint,
    method: Method,
    rep: usize,
) -> Result<ResultRow> {
    let train_seed = derive_seed(cfg.seed, &[TAG_TRAIN, rep as u64]);
    let fit_seed = derive_seed(cfg.seed, &[TAG_FIT, rep as u64]);
    let test_seed = derive_seed(cfg.seed, &[TAG_TEST, rep as u64]);
    let d = generate(&model.generative, point.n_train, train_seed)?;
    let bql_cfg = cfg.bql_config(fit_seed);
    let doc = match method {
        Method::Bql => RegimeDocument::Bql(fit_bql(&d, &model.catalog, &point.costs, &bql_cfg)?),
        Method::Dense => RegimeDocument::from_baseline(fit_dense(
            &d,
            &model.catalog,
            &point.costs,
            &bql_cfg,
        )?),
        Method::Sparse => RegimeDocument::from_baseline(fit_sparse(
            &d,
            &model.catalog,
            &point.costs,
            cfg.sparse_penalty,
            &bql_cfg,
        )?),
    };
    let results =
        run_on_simulator(&model.generative, doc.policy(), &point.costs, cfg.n_test, test_seed)?;
    let est = summarize_profits(&results, point.costs.lambda);
    let records: Vec<_> = results.iter().map(|r| r.record.clone()).collect();
    let freq =
        selection_frequencies(&records, model.catalog.cand1.len(), model.catalog.cand2.len())?;
    Ok(ResultRow {
        model: model.label.clone(),
        method,
        grid_label: point.label.clone(),
        grid_value: point.value,
        replication: rep,
        profit: Some(est.profit),
        profit_se: Some(est.std_error),
        utility: Some(est.utility),
        p_a1: Some(freq.p_a1),
        p_a2: Some(freq.p_a2),
        freq1: freq.freq1.into_iter().map(Some).collect(),
        freq2: freq.freq2.into_iter().map(Some).collect(),
        status: "ok".into(),
    })
}

type TaskKey = (String, String, usize);

fn row_key(method: &str, grid_value: f64, rep: usize) -> TaskKey {
    (method.to_string(), grid_value.to_string(), rep)
}

fn results_header(n_cand1: usize, n_cand2: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "model",
        "method",
        "grid",
        "grid_value",
        "replication",
        "profit",
        "profit_se",
        "utility",
        "p_a1",
        "p_a2",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for i in 0..n_cand1 {
        h.push(format!("freq1_{i}"));
    }
    for i in 0..n_cand2 {
        h.push(format!("freq2_{i}"));
    }
    h.push("status".into());
    h
}

fn row_to_record(r: &ResultRow) -> Vec<String> {
    let mut rec = vec![
        r.model.to_string(),
        r.method.to_string(),
        r.grid_label.clone(),
        r.grid_value.to_string(),
        r.replication.to_string(),
        fmt_opt(&r.profit),
        fmt_opt(&r.profit_se),
        fmt_opt(&r.utility),
        fmt_opt(&r.p_a1),
        fmt_opt(&r.p_a2),
    ];
    rec.extend(r.freq1.iter().map(fmt_opt));
    rec.extend(r.freq2.iter().map(fmt_opt));
    rec.push(r.status.clone());
    rec
}

fn atomic_write_csv(path: &Path, header: &[String], records: &[Vec<String>]) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    {
        let mut w = csv::Writer::from_path(&tmp)?;
        w.write_record(header)?;
        for rec in records {
            w.write_record(rec)?;
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Aggregate of one (method, grid point) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub grid_value: f64,
    pub n_ok: usize,
    pub mean_profit: f64,
    pub se_profit: f64,
    pub mean_utility: f64,
    pub mean_freq1: Vec<f64>,
    pub mean_freq2: Vec<f64>,
    pub mean_p_a1: f64,
    pub mean_p_a2: f64,
}

/// The complete result of an experiment run.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryRow>,
    pub results_path: PathBuf,
    pub summary_path: PathBuf,
}

fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(Method, String), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.method, r.grid_value.to_string())).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((method, _), rows)| {
            let ok: Vec<&&ResultRow> = rows.iter().filter(|r| r.status == "ok").collect();
            let n = ok.len().max(1) as f64;
            let mean = |f: &dyn Fn(&ResultRow) -> f64| {
                ok.iter().map(|r| f(r)).sum::<f64>() / n
            };
            let mean_profit = mean(&|r| r.profit.unwrap_or(0.0));
            let var_profit = if ok.len() > 1 {
                ok.iter()
                    .map(|r| (r.profit.unwrap_or(0.0) - mean_profit).powi(2))
                    .sum::<f64>()
                    / (n - 1.0)
            } else {
                0.0
            };
            let n1 = rows[0].freq1.len();
            let n2 = rows[0].freq2.len();
            SummaryRow {
                method,
                grid_value: rows[0].grid_value,
                n_ok: ok.len(),
                mean_profit,
                se_profit: (var_profit / n).sqrt(),
                mean_utility: mean(&|r| r.utility.unwrap_or(0.0)),
                mean_freq1: (0..n1)
                    .map(|i| mean(&|r| r.freq1[i].unwrap_or(0.0)))
                    .collect(),
                mean_freq2: (0..n2)
                    .map(|i| mean(&|r| r.freq2[i].unwrap_or(0.0)))
                    .collect(),
                mean_p_a1: mean(&|r| r.p_a1.unwrap_or(0.0)),
                mean_p_a2: mean(&|r| r.p_a2.unwrap_or(0.0)),
            }
        })
        .collect()
}

/// Runs (or resumes) the configured experiment with up to `jobs` worker
/// threads; `jobs = 0` uses all available cores.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let model = resolve_model(&cfg.model)?;
    let points = resolve_grid(cfg, &model)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let results_path = cfg.out_dir.join("results.csv");
    let summary_path = cfg.out_dir.join("summary.csv");
    let header = results_header(model.catalog.cand1.len(), model.catalog.cand2.len());

    // Resume: keep rows already on disk (matched by method/grid/rep).
    let mut done: BTreeMap<TaskKey, ResultRow> = BTreeMap::new();
    if results_path.exists() {
        for row in read_results_csv(&results_path, &model)? {
            done.insert(
                row_key(&row.method.to_string(), row.grid_value, row.replication),
                row,
            );
        }
    }

    let mut tasks: Vec<(usize, GridPoint, Method, usize)> = Vec::new();
    let mut order = 0;
    for method in &cfg.methods {
        for point in &points {
            for rep in 0..cfg.replications {
                tasks.push((order, point.clone(), *method, rep));
                order += 1;
            }
        }
    }
    let pending: Vec<&(usize, GridPoint, Method, usize)> = tasks
        .iter()
        .filter(|(_, p, m, rep)| !done.contains_key(&row_key(&m.to_string(), p.value, *rep)))
        .collect();

    let computed: Vec<(usize, ResultRow)> = {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
        pool.install(|| {
            pending
                .par_iter()
                .map(|(idx, point, method, rep)| {
                    let row = run_one(cfg, &model, point, *method, *rep).unwrap_or_else(|e| {
                        ResultRow {
                        model: model.label.clone(),
                        method: *method,
                        grid_label: point.label.clone(),
                        grid_value: point.value,
                        replication: *rep,
                        profit: None,
                        profit_se: None,
                        utility: None,
                        p_a1: None,
                        p_a2: None,
                        freq1: vec![None; model.catalog.cand1.len()],
                        freq2: vec![None; model.catalog.cand2.len()],
                        status: format!("error: {e}"),
                        }
                    });
                    (*idx, row)
                })
                .collect()
        })
    };
    let mut by_order: BTreeMap<usize, ResultRow> = computed.into_iter().collect();
    let rows: Vec<ResultRow> = tasks
        .iter()
        .map(|(idx, p, m, rep)| {
            if let Some(row) = by_order.remove(idx) {
                row
            } else {
                done.remove(&row_key(&m.to_string(), p.value, *rep))
                    .expect("resumed row present")
            }
        })
        .collect();

    let records: Vec<Vec<String>> = rows.iter().map(row_to_record).collect();
    atomic_write_csv(&results_path, &header, &records)?;

    let summary = summarize(&rows);
    let mut sh: Vec<String> =
        ["method", "grid_value", "n_ok", "mean_profit", "se_profit", "mean_utility", "p_a1", "p_a2"]
            .iter()
            .map(|s| s.to_string())
            .collect();
    for i in 0..model.catalog.cand1.len() {
        sh.push(format!("freq1_{i}"));
    }
    for i in 0..model.catalog.cand2.len() {
        sh.push(format!("freq2_{i}"));
    }
    let srecords: Vec<Vec<String>> = summary
        .iter()
        .map(|s| {
            let mut rec = vec![
                s.method.to_string(),
                s.grid_value.to_string(),
                s.n_ok.to_string(),
                s.mean_profit.to_string(),
                s.se_profit.to_string(),
                s.mean_utility.to_string(),
                s.mean_p_a1.to_string(),
                s.mean_p_a2.to_string(),
            ];
            rec.extend(s.mean_freq1.iter().map(|v| v.to_string()));
            rec.extend(s.mean_freq2.iter().map(|v| v.to_string()));
            rec
        })
        .collect();
    atomic_write_csv(&summary_path, &sh, &srecords)?;

    log::info!(
        "experiment complete: {} rows ({} computed, {} resumed)",
        rows.len(),
        tasks.len() - done.len(),
        done.len()
    );
    Ok(ExperimentOutput { rows, summary, results_path, summary_path })
}

fn parse_opt(field: &str) -> Option<f64> {
    if field.is_empty() {
        None
    } else {
        field.parse().ok()
    }
}

fn read_results_csv(path: &Path, model: &ResolvedModel) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let n1 = model.catalog.cand1.len();
    let n2 = model.catalog.cand2.len();
    let mut rows = Vec::new();
    for record in rdr.records() {
        let rec = record?;
        let get = |i: usize| rec.get(i).unwrap_or_default();
        let method = match get(1) {
            "bql" => Method::Bql,
            "dense" => Method::Dense,
            "sparse" => Method::Sparse,
            other => return Err(Error::Data(format!("unknown method `{other}` in results"))),
        };
        rows.push(ResultRow {
            model: get(0).to_string(),
            method,
            grid_label: get(2).to_string(),
            grid_value: get(3).parse().map_err(|_| Error::Data("bad grid_value".into()))?,
            replication: get(4).parse().map_err(|_| Error::Data("bad replication".into()))?,
            profit: parse_opt(get(5)),
            profit_se: parse_opt(get(6)),
            utility: parse_opt(get(7)),
            p_a1: parse_opt(get(8)),
            p_a2: parse_opt(get(9)),
            freq1: (0..n1).map(|i| parse_opt(get(10 + i))).collect(),
            freq2: (0..n2).map(|i| parse_opt(get(10 + n1 + i))).collect(),
            status: get(10 + n1 + n2).to_string(),
        });
    }
    Ok(rows)
}

/// Verdict of one oracle cross-check.
#[derive(Debug, Clone, Serialize)]
pub struct OracleCheckReport {
    pub brute_force_profit: f64,
    pub backward_induction_profit: f64,
    pub gap: f64,
    pub pass: bool,
}

/// Runs both optimal-regime oracles on an instance and compares profits at
/// tolerance `1e-10`.
pub fn oracle_check(
    inst: &DiscreteInstance,
    lambda: f64,
    max_evals: u64,
) -> Result<OracleCheckReport> {
    let (bf, _) = brute_force_optimal(inst, lambda, max_evals)?;
    let (bi, _) = backward_induction_optimal(inst, lambda)?;
    let gap = (bf - bi).abs();
    Ok(OracleCheckReport {
        brute_force_profit: bf,
        backward_induction_profit: bi,
        gap,
        pass: gap <= 1e-10,
    })
}

/// Writes a human-readable pass/fail line per check.
pub fn write_check_line<W: Write>(mut w: W, label: &str, report: &OracleCheckReport) -> Result<()> {
    writeln!(
        w,
        "{}: brute force {:.12} vs backward induction {:.12} (gap {:.3e}) -> {}",
        label,
        report.brute_force_profit,
        report.backward_induction_profit,
        report.gap,
        if report.pass { "PASS" } else { "FAIL" }
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::random_instance;

    fn tiny_config(dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            model: ModelSource::Preset(1),
            methods: vec![Method::Bql, Method::Dense, Method::Sparse],
            n_train: 120,
            n_test: 200,
            replications: 1,
            grid: Some(SweepGrid::Lambda(vec![0.0])),
            k_folds: 2,
            learners: LearnerConfig {
                f2: Some(LearnerSpec::ridge(1e-4)),
                g2: Some(LearnerSpec::ridge(1e-4)),
                f1: Some(LearnerSpec::ridge(1e-4)),
                g1: Some(LearnerSpec::ridge(1e-4)),
            },
            seed: 5,
            out_dir: dir.to_path_buf(),
            sparse_penalty: Some(0.02),
        }
    }

    #[test]
    fn single_replication_yields_one_row_per_method() {
        let tmp = tempfile::tempdir().unwrap();
        let out = run_experiment(&tiny_config(tmp.path()), 1).unwrap();
        assert_eq!(out.rows.len(), 3);
        assert!(out.rows.iter().all(|r| r.status == "ok"));
        assert_eq!(out.summary.len(), 3);
    }

    #[test]
    fn reruns_and_parallelism_are_byte_identical() {
        let tmp1 = tempfile::tempdir().unwrap();
        let tmp2 = tempfile::tempdir().unwrap();
        let mut cfg1 = tiny_config(tmp1.path());
        cfg1.replications = 2;
        let mut cfg2 = tiny_config(tmp2.path());
        cfg2.replications = 2;
        let out1 = run_experiment(&cfg1, 1).unwrap();
        let out2 = run_experiment(&cfg2, 2).unwrap();
        let bytes1 = std::fs::read(&out1.results_path).unwrap();
        let bytes2 = std::fs::read(&out2.results_path).unwrap();
        assert_eq!(bytes1, bytes2);
        // Re-running in place (full resume) leaves the file unchanged.
        let out3 = run_experiment(&cfg1, 2).unwrap();
        assert_eq!(bytes1, std::fs::read(&out3.results_path).unwrap());
    }

    #[test]
    fn summary_means_match_raw_rows() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(tmp.path());
        cfg.replications = 3;
        cfg.methods = vec![Method::Dense];
        let out = run_experiment(&cfg, 1).unwrap();
        let raw_mean = out.rows.iter().map(|r| r.profit.unwrap()).sum::<f64>() / 3.0;
        assert!((out.summary[0].mean_profit - raw_mean).abs() < 1e-12);
    }

    #[test]
    fn unknown_config_fields_are_rejected() {
        let bad = r#"{"model":1,"methods":["bql"],"n_train":100,"replications":1,
                      "seed":1,"out_dir":"/tmp/x","bogus_field":3}"#;
        let parsed: std::result::Result<ExperimentConfig, _> = serde_json::from_str(bad);
        assert!(parsed.is_err());
    }

    #[test]
    fn custom_model_source_runs_from_files() {
        let tmp = tempfile::tempdir().unwrap();
        let preset = model_preset(1).unwrap();
        let gpath = tmp.path().join("gen.json");
        let cpath = tmp.path().join("cat.json");
        let kpath = tmp.path().join("costs.json");
        std::fs::write(&gpath, serde_json::to_string(&preset.generative).unwrap()).unwrap();
        std::fs::write(&cpath, serde_json::to_string(&preset.catalog).unwrap()).unwrap();
        std::fs::write(&kpath, serde_json::to_string(&preset.costs).unwrap()).unwrap();
        let mut cfg = tiny_config(tmp.path());
        cfg.model = ModelSource::Custom { generative: gpath, catalog: cpath, costs: kpath };
        cfg.methods = vec![Method::Dense];
        let out = run_experiment(&cfg, 1).unwrap();
        assert_eq!(out.rows.len(), 1);
        assert_eq!(out.rows[0].model, "custom");
        assert_eq!(out.rows[0].status, "ok");
    }

    #[test]
    fn oracle_check_passes_on_random_instances() {
        let inst = random_instance(12);
        let report = oracle_check(&inst, 1.0, 2_000_000).unwrap();
        assert!(report.pass, "gap {}", report.gap);
    }
}
