//! Command-line frontend: synthetic-trial simulation, regime fitting,
//! deployment, evaluation, inference, oracle cross-checks, and replicated
//! experiment sweeps.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! error. The `BQL_LOG` environment variable controls log verbosity.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bql_core::baselines::{fit_dense, fit_sparse};
use bql_core::bql::{fit_bql, fit_bql_with_artifacts, BqlConfig};
use bql_core::data::{read_dataset_csv, write_dataset_csv, AssessmentCatalog, CostSpec};
use bql_core::deploy::{deploy, StaticOracle};
use bql_core::error::{Error, Result};
use bql_core::eval::{ipw_utility, random_instance, selection_frequencies, DiscreteInstance};
use bql_core::experiment::{oracle_check, run_experiment, write_check_line, ExperimentConfig, LearnerConfig};
use bql_core::infer::{confidence_intervals, plugin_covariance, ParamFamily};
use bql_core::nuisance::{fit_crossfit, make_folds, LearnerSpec};
use bql_core::regime::{load_regime, save_regime, RegimeDocument};
use bql_core::synth::{generate, model_preset, run_on_simulator, summarize_profits};

#[derive(Parser)]
#[command(name = "bql", about = "Balanced Q-learning for cost-aware treatment regimes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic observational dataset from a scenario preset.
    Simulate(SimulateArgs),
    /// Fit a regime (balanced, dense, or sparse) on a dataset.
    Fit(FitArgs),
    /// Apply a fitted regime to offline subjects.
    Deploy(DeployArgs),
    /// Evaluate a fitted regime on a simulator or logged data.
    Evaluate(EvaluateArgs),
    /// Plug-in covariances and confidence intervals for fitted parameters.
    Infer(InferArgs),
    /// Cross-check the two exact optimal-regime oracles.
    Oracle(OracleArgs),
    /// Run a replicated experiment sweep from a JSON config.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario preset id (1..=7).
    #[arg(long)]
    model: u8,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dataset CSV.
    #[arg(long)]
    out: PathBuf,
    /// Also dump the full preset (parameters, catalog, costs) as JSON.
    #[arg(long)]
    dump_preset: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// Training dataset CSV.
    #[arg(long)]
    data: PathBuf,
    /// Fitting method.
    #[arg(long, value_parser = ["bql", "dense", "sparse"])]
    method: String,
    /// Take catalog and costs from a scenario preset.
    #[arg(long, conflicts_with_all = ["catalog", "costs"])]
    model: Option<u8>,
    /// Assessment catalog JSON (with --costs).
    #[arg(long, requires = "costs")]
    catalog: Option<PathBuf>,
    /// Cost specification JSON (with --catalog).
    #[arg(long, requires = "catalog")]
    costs: Option<PathBuf>,
    /// Override the trade-off scalar.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    k_folds: usize,
    /// Learner overrides as JSON ({"f2": {...}, ...}).
    #[arg(long)]
    learners: Option<PathBuf>,
    /// Fixed lasso penalty for the sparse method.
    #[arg(long)]
    sparse_penalty: Option<f64>,
    /// Output regime JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DeployArgs {
    #[arg(long)]
    regime: PathBuf,
    /// Subjects CSV in the dataset layout (treatments and outcomes in the
    /// file are ignored; recorded stage-2 covariates are replayed as-is).
    #[arg(long)]
    subjects: PathBuf,
    /// Output decisions CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    regime: PathBuf,
    /// Evaluate on fresh subjects from this scenario preset.
    #[arg(long, conflicts_with = "data")]
    model: Option<u8>,
    #[arg(long, default_value_t = 5000)]
    n_test: usize,
    /// Evaluate on logged data by inverse probability weighting.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Override the trade-off scalar (defaults to the regime's).
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output metrics JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InferArgs {
    /// Fitted balanced regime JSON (used for its catalog, costs, and fit
    /// configuration; the fit is reproduced on the dataset).
    #[arg(long)]
    regime: PathBuf,
    /// The dataset the regime was fit on.
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated families: alpha_bar, alpha:J1:A1:J2,
    /// beta_bar:J1:J2, beta:J1:A1:J2, gamma_bar:J1, gamma:J1, delta:J1.
    #[arg(long, default_value = "alpha_bar")]
    families: String,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    /// Instance description JSON.
    #[arg(long, conflicts_with = "random")]
    instance: Option<PathBuf>,
    /// Check this many randomly generated instances instead.
    #[arg(long)]
    random: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trade-off scalar applied to the instance costs.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Cap on exhaustive-search regime evaluations.
    #[arg(long, default_value_t = 1_000_000)]
    max_evals: u64,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

fn parse_family(text: &str) -> Result<ParamFamily> {
    let parts: Vec<&str> = text.split(':').collect();
    let idx = |i: usize| -> Result<usize> {
        parts
            .get(i)
            .and_then(|p| p.parse().ok())
            .ok_or_else(|| Error::Config(format!("family `{text}` needs an index at slot {i}")))
    };
    match parts[0] {
        "alpha_bar" => Ok(ParamFamily::AlphaBar),
        "alpha" => Ok(ParamFamily::Alpha { j1: idx(1)?, a1: idx(2)? as u8, j2: idx(3)? }),
        "beta_bar" => Ok(ParamFamily::BetaBar { j1: idx(1)?, j2: idx(2)? }),
        "beta" => Ok(ParamFamily::Beta { j1: idx(1)?, a1: idx(2)? as u8, j2: idx(3)? }),
        "gamma_bar" => Ok(ParamFamily::GammaBar { j1: idx(1)? }),
        "gamma" => Ok(ParamFamily::Gamma { j1: idx(1)? }),
        "delta" => Ok(ParamFamily::Delta { j1: idx(1)? }),
        other => Err(Error::Config(format!("unknown parameter family `{other}`"))),
    }
}

fn load_json<T: serde::de::DeserializeOwned>(path: &PathBuf, what: &str) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {what}: {e}")))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("invalid {what}: {e}")))
}

fn write_json<T: serde::Serialize>(value: &T, path: &PathBuf) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let preset = model_preset(args.model)?;
    let d = generate(&preset.generative, args.n, args.seed)?;
    write_dataset_csv(&d, &args.out)?;
    if let Some(path) = args.dump_preset {
        write_json(&preset, &path)?;
    }
    println!("wrote {} subjects to {}", args.n, args.out.display());
    Ok(())
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let d = read_dataset_csv(&args.data)?;
    let (catalog, mut costs): (AssessmentCatalog, CostSpec) = match (args.model, &args.catalog) {
        (Some(id), _) => {
            let preset = model_preset(id)?;
            (preset.catalog, preset.costs)
        }
        (None, Some(cat_path)) => {
            let catalog: AssessmentCatalog = load_json(cat_path, "catalog")?;
            let costs: CostSpec = load_json(args.costs.as_ref().unwrap(), "costs")?;
            (catalog, costs)
        }
        (None, None) => {
            return Err(Error::Config("provide either --model or --catalog/--costs".into()))
        }
    };
    if let Some(lambda) = args.lambda {
        costs.lambda = lambda;
    }
    let mut cfg = BqlConfig { k_folds: args.k_folds, seed: args.seed, ..BqlConfig::default() };
    if let Some(path) = &args.learners {
        let learners: LearnerConfig = load_json(path, "learners")?;
        if let Some(l) = learners.f2 {
            cfg.f2 = l;
        }
        if let Some(l) = learners.g2 {
            cfg.g2 = l;
        }
        if let Some(l) = learners.f1 {
            cfg.f1 = l;
        }
        if let Some(l) = learners.g1 {
            cfg.g1 = l;
        }
    }
    let doc = match args.method.as_str() {
        "bql" => RegimeDocument::Bql(fit_bql(&d, &catalog, &costs, &cfg)?),
        "dense" => RegimeDocument::from_baseline(fit_dense(&d, &catalog, &costs, &cfg)?),
        "sparse" => RegimeDocument::from_baseline(fit_sparse(
            &d,
            &catalog,
            &costs,
            args.sparse_penalty,
            &cfg,
        )?),
        other => return Err(Error::Config(format!("unknown method `{other}`"))),
    };
    save_regime(&doc, &args.out)?;
    println!("fit {} regime on n={} -> {}", doc.kind_name(), d.n(), args.out.display());
    Ok(())
}

fn cmd_deploy(args: DeployArgs) -> Result<()> {
    let doc = load_regime(&args.regime)?;
    let subjects = read_dataset_csv(&args.subjects)?;
    let costs = match &doc {
        RegimeDocument::Bql(r) => r.costs.clone(),
        RegimeDocument::Dense(b) | RegimeDocument::Sparse(b) => b.costs.clone(),
    };
    let mut w = csv::Writer::from_path(&args.out)?;
    w.write_record([
        "row",
        "j1",
        "a1",
        "j2",
        "a2",
        "cost_assess1",
        "cost_treat1",
        "cost_assess2",
        "cost_treat2",
        "cost_total",
        "extrapolation",
    ])?;
    let fmt_set = |s: &bql_core::data::FeatureIndexSet| {
        s.indices().iter().map(|i| i.to_string()).collect::<Vec<_>>().join(";")
    };
    for (i, t) in subjects.trajectories.iter().enumerate() {
        let mut oracle = StaticOracle { s1: t.s1.clone(), s2: t.s2.clone() };
        let record = deploy(doc.policy(), &mut oracle)?;
        let c = (
            costs.c1c[record.j1_idx],
            costs.c1t_of(record.a1),
            costs.c2c[record.j2_idx],
            costs.c2t_of(record.a2),
        );
        w.write_record([
            i.to_string(),
            fmt_set(&record.j1),
            record.a1.to_string(),
            fmt_set(&record.j2),
            record.a2.to_string(),
            c.0.to_string(),
            c.1.to_string(),
            c.2.to_string(),
            c.3.to_string(),
            (c.0 + c.1 + c.2 + c.3).to_string(),
            record.extrapolation.to_string(),
        ])?;
    }
    w.flush()?;
    println!("deployed on {} subjects -> {}", subjects.n(), args.out.display());
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let doc = load_regime(&args.regime)?;
    let costs = match &doc {
        RegimeDocument::Bql(r) => r.costs.clone(),
        RegimeDocument::Dense(b) | RegimeDocument::Sparse(b) => b.costs.clone(),
    };
    let lambda = args.lambda.unwrap_or(costs.lambda);
    let metrics = if let Some(model) = args.model {
        let preset = model_preset(model)?;
        let results =
            run_on_simulator(&preset.generative, doc.policy(), &costs, args.n_test, args.seed)?;
        let est = summarize_profits(&results, lambda);
        let records: Vec<_> = results.iter().map(|r| r.record.clone()).collect();
        let freq = selection_frequencies(
            &records,
            preset.catalog.cand1.len(),
            preset.catalog.cand2.len(),
        )?;
        serde_json::json!({
            "mode": "simulator",
            "model": model,
            "n_test": args.n_test,
            "lambda": lambda,
            "utility": est.utility,
            "profit": est.profit,
            "profit_se": est.std_error,
            "mean_costs": {
                "assess1": est.mean_costs.0,
                "treat1": est.mean_costs.1,
                "assess2": est.mean_costs.2,
                "treat2": est.mean_costs.3,
            },
            "freq1": freq.freq1,
            "freq2": freq.freq2,
            "p_a1": freq.p_a1,
            "p_a2": freq.p_a2,
        })
    } else if let Some(data_path) = args.data {
        let d = read_dataset_csv(&data_path)?;
        // Cross-fitted ridge propensities for the weighting.
        let plan = make_folds(d.n(), 2, args.seed)?;
        let x2: Vec<Vec<f64>> = d
            .trajectories
            .iter()
            .map(|t| [t.s1.clone(), t.s2.clone(), vec![t.a1]].concat())
            .collect();
        let s1: Vec<Vec<f64>> = d.trajectories.iter().map(|t| t.s1.clone()).collect();
        let a1: Vec<f64> = d.trajectories.iter().map(|t| t.a1).collect();
        let a2: Vec<f64> = d.trajectories.iter().map(|t| t.a2).collect();
        let spec = LearnerSpec::ridge(1e-4);
        let g1 = fit_crossfit(&s1, &a1, &plan, &spec, Some((0.01, 0.99)), args.seed ^ 1)?;
        let g2 = fit_crossfit(&x2, &a2, &plan, &spec, Some((0.01, 0.99)), args.seed ^ 2)?;
        let utility = ipw_utility(&d, doc.policy(), &g1.oof, &g2.oof)?;
        // Decision costs under the regime on the logged covariates.
        let mut records = Vec::with_capacity(d.n());
        for t in &d.trajectories {
            let mut oracle = StaticOracle { s1: t.s1.clone(), s2: t.s2.clone() };
            records.push(deploy(doc.policy(), &mut oracle)?);
        }
        let cat = doc.catalog();
        let freq = selection_frequencies(&records, cat.cand1.len(), cat.cand2.len())?;
        let mean_cost = |f: &dyn Fn(&bql_core::deploy::DecisionRecord) -> f64| {
            records.iter().map(f).sum::<f64>() / records.len() as f64
        };
        let c1c = mean_cost(&|r| costs.c1c[r.j1_idx]);
        let c1t = mean_cost(&|r| costs.c1t_of(r.a1));
        let c2c = mean_cost(&|r| costs.c2c[r.j2_idx]);
        let c2t = mean_cost(&|r| costs.c2t_of(r.a2));
        let profit = bql_core::eval::profit_lambda(utility, (c1c, c1t, c2c, c2t), lambda);
        serde_json::json!({
            "mode": "ipw",
            "n": d.n(),
            "lambda": lambda,
            "utility": utility,
            "profit": profit,
            "mean_costs": {"assess1": c1c, "treat1": c1t, "assess2": c2c, "treat2": c2t},
            "freq1": freq.freq1,
            "freq2": freq.freq2,
            "p_a1": freq.p_a1,
            "p_a2": freq.p_a2,
        })
    } else {
        return Err(Error::Config("provide either --model or --data".into()));
    };
    write_json(&metrics, &args.out)?;
    println!("metrics -> {}", args.out.display());
    Ok(())
}

fn cmd_infer(args: InferArgs) -> Result<()> {
    let doc = load_regime(&args.regime)?;
    let RegimeDocument::Bql(regime) = doc else {
        return Err(Error::Config("inference applies to balanced regimes only".into()));
    };
    let d = read_dataset_csv(&args.data)?;
    // Reproduce the fit deterministically from the recorded configuration.
    let (refit, art) = fit_bql_with_artifacts(&d, &regime.catalog, &regime.costs, &regime.config)?;
    let drift = refit
        .alpha_bar
        .iter()
        .zip(&regime.alpha_bar)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0_f64, f64::max);
    if drift > 1e-8 {
        return Err(Error::Data(format!(
            "regime does not reproduce on this dataset (coefficient drift {drift:.3e}); \
             pass the dataset the regime was fit on"
        )));
    }
    let mut reports = Vec::new();
    for name in args.families.split(',') {
        let family = parse_family(name.trim())?;
        let report = plugin_covariance(&refit, &d, &art, &family)?;
        let intervals = confidence_intervals(&report, args.level)?;
        reports.push(serde_json::json!({
            "family": report.family,
            "estimate": report.estimate,
            "std_errors": report.std_errors,
            "covariance": report.covariance,
            "n": report.n,
            "level": args.level,
            "intervals": intervals,
        }));
    }
    write_json(&serde_json::json!({ "reports": reports }), &args.out)?;
    println!("{} covariance report(s) -> {}", reports.len(), args.out.display());
    Ok(())
}

fn cmd_oracle(args: OracleArgs) -> Result<()> {
    let stdout = std::io::stdout();
    if let Some(path) = args.instance {
        let inst: DiscreteInstance = load_json(&path, "instance")?;
        inst.validate()?;
        let report = oracle_check(&inst, args.lambda, args.max_evals)?;
        write_check_line(stdout.lock(), &path.display().to_string(), &report)?;
        if !report.pass {
            return Err(Error::Eval("oracle profits disagree".into()));
        }
        return Ok(());
    }
    let count = args
        .random
        .ok_or_else(|| Error::Config("provide --instance FILE or --random N".into()))?;
    let mut failures = 0;
    for i in 0..count {
        let inst = random_instance(args.seed.wrapping_add(i as u64));
        let report = oracle_check(&inst, args.lambda, args.max_evals)?;
        write_check_line(stdout.lock(), &format!("random[{i}]"), &report)?;
        if !report.pass {
            failures += 1;
        }
    }
    if failures > 0 {
        return Err(Error::Eval(format!("{failures} of {count} oracle checks failed")));
    }
    Ok(())
}

fn cmd_experiment(args: ExperimentArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::from_json_file(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = args.out {
        cfg.out_dir = out;
    }
    let output = run_experiment(&cfg, args.jobs)?;
    println!(
        "{} rows -> {} (summary: {})",
        output.rows.len(),
        output.results_path.display(),
        output.summary_path.display()
    );
    Ok(())
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Deploy(args) => cmd_deploy(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Infer(args) => cmd_infer(args),
        Command::Oracle(args) => cmd_oracle(args),
        Command::Experiment(args) => cmd_experiment(args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("BQL_LOG")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
