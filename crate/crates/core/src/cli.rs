//! Command-line entry point: wires flags and config files to the simulation,
//! coverage, empirical, and single-estimate workflows and writes report
//! files. Every command is a pure function of (flags, input files, seed).

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::bootstrap::{bootstrap_se, ci95, BootstrapConfig};
use crate::dataset::{load_creditcard_csv, load_generic_csv};
use crate::empirical::{
    run_empirical_coverage, run_empirical_study, synthetic_precursor, EmpiricalStudyConfig,
    ScoreNoise, TreatedSize,
};
use crate::error::{Error, Result};
use crate::estimators::{EstimateResult, EstimatorConfig, EstimatorId, MatchMode};
use crate::models::{FitConfig, WeightFormula};
use crate::report::{
    write_coverage_outputs, write_json, write_metrics_csv, write_scatter_csv, RunManifest,
};
use crate::rng::child_seed;
use crate::simgen::{generate_design, run_table_study, SimDesignConfig};

const HISTOGRAM_BINS: usize = 25;

#[derive(Parser, Debug)]
#[command(name = "fpr", version, about = "Estimators for the mean outcome of a blocked group")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a simulation table study over synthetic designs.
    Simulate(SimulateArgs),
    /// Run the bootstrap coverage experiment over synthetic designs.
    Coverage(CoverageArgs),
    /// Run the empirical studies over a credit-card style dataset.
    Empirical(EmpiricalArgs),
    /// Estimate the treated-group mean of one dataset, with bootstrap CIs.
    Estimate(EstimateArgs),
}

/// Options shared by every command. Flags win over the config file; the
/// seed falls back to config, then the FPR_SEED env var, then 0.
#[derive(Args, Debug, Clone)]
struct CommonArgs {
    /// Master seed; all internal streams derive from it.
    #[arg(long)]
    seed: Option<u64>,
    /// JSON config file with the same keys as the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker thread cap; defaults to the available cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Weight formula for IPW / WMPO: `odds` or `paper`.
    #[arg(long)]
    weight_formula: Option<String>,
    /// Use the per-treated-unit multiset matching average instead of the
    /// set average.
    #[arg(long)]
    multiset: bool,
    #[arg(long)]
    l2_lambda: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    prob_clamp_eps: Option<f64>,
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    threads: Option<usize>,
    weight_formula: Option<String>,
    multiset: Option<bool>,
    l2_lambda: Option<f64>,
    max_iter: Option<usize>,
    tol: Option<f64>,
    prob_clamp_eps: Option<f64>,
    sigma: Option<f64>,
    bootstrap_replicates: Option<usize>,
}

/// Fully resolved common options.
struct Resolved {
    seed: u64,
    threads: Option<usize>,
    est_config: EstimatorConfig,
    file: FileConfig,
}

fn resolve_common(common: &CommonArgs) -> Result<Resolved> {
    let file: FileConfig = match &common.config {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)
            .map_err(|e| Error::InvalidConfig(format!("config file: {e}")))?,
        None => FileConfig::default(),
    };
    let seed = common
        .seed
        .or(file.seed)
        .or_else(|| std::env::var("FPR_SEED").ok().and_then(|v| v.parse().ok()))
        .unwrap_or(0);
    let weight_formula = match common.weight_formula.as_deref().or(file.weight_formula.as_deref())
    {
        Some(s) => s.parse::<WeightFormula>()?,
        None => WeightFormula::Odds,
    };
    let match_mode = if common.multiset || file.multiset == Some(true) {
        MatchMode::Multiset
    } else {
        MatchMode::Set
    };
    let defaults = FitConfig::default();
    let fit = FitConfig {
        l2_lambda: common.l2_lambda.or(file.l2_lambda).unwrap_or(defaults.l2_lambda),
        max_iter: common.max_iter.or(file.max_iter).unwrap_or(defaults.max_iter),
        tol: common.tol.or(file.tol).unwrap_or(defaults.tol),
        prob_clamp_eps: common
            .prob_clamp_eps
            .or(file.prob_clamp_eps)
            .unwrap_or(defaults.prob_clamp_eps),
    };
    Ok(Resolved {
        seed,
        threads: common.threads.or(file.threads),
        est_config: EstimatorConfig {
            fit,
            weight_formula,
            match_mode,
            osm_k_list: vec![1, 10],
        },
        file,
    })
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Outcome design: 1 (linear) or 2 (squared first covariate).
    #[arg(long)]
    design: u8,
    #[arg(long, default_value_t = 10_000)]
    n_samples: usize,
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
    /// Outcome noise scale.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args, Debug)]
struct CoverageArgs {
    #[arg(long)]
    design: u8,
    #[arg(long, default_value_t = 10_000)]
    n_samples: usize,
    #[arg(long, default_value_t = 100)]
    iterations: usize,
    #[arg(long)]
    bootstrap_replicates: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args, Debug)]
struct EmpiricalArgs {
    /// Path to the credit-card CSV (Time, V1..V28, Amount, Class).
    #[arg(long, conflicts_with = "synthetic_rows")]
    data: Option<PathBuf>,
    /// Use a synthetic stand-in dataset with this many rows (smoke runs).
    #[arg(long)]
    synthetic_rows: Option<usize>,
    /// `table6` (fixed treated group) or `table7` (coverage study).
    #[arg(long)]
    mode: String,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    bootstrap_replicates: Option<usize>,
    #[arg(long)]
    treated_size: Option<usize>,
    #[arg(long)]
    treated_min: Option<usize>,
    #[arg(long)]
    treated_max: Option<usize>,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long)]
    policy_features: Option<usize>,
    #[arg(long)]
    selected_features: Option<usize>,
    /// `none` or `uniform01`.
    #[arg(long)]
    score_noise: Option<String>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    /// Generic dataset CSV with `__treatment` / `__outcome` columns.
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated list, e.g. `psm_1nn,osm_1nn,osm_10nn,ipw_nr,mpo,wmpo`.
    #[arg(long)]
    estimators: String,
    #[arg(long)]
    bootstrap_replicates: Option<usize>,
    /// Optional output directory for estimates.json + manifest.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

/// Parses `args` (excluding argv[0] handling: pass the full argv) and runs.
/// Returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidConfig(_) => 2,
                _ => 1,
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let common = match &cli.command {
        Command::Simulate(a) => a.common.clone(),
        Command::Coverage(a) => a.common.clone(),
        Command::Empirical(a) => a.common.clone(),
        Command::Estimate(a) => a.common.clone(),
    };
    let resolved = resolve_common(&common)?;
    let body = || match cli.command {
        Command::Simulate(args) => cmd_simulate(args, &resolved),
        Command::Coverage(args) => cmd_coverage(args, &resolved),
        Command::Empirical(args) => cmd_empirical(args, &resolved),
        Command::Estimate(args) => cmd_estimate(args, &resolved),
    };
    match resolved.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidConfig(format!("threads: {e}")))?;
            pool.install(body)
        }
        None => body(),
    }
}

fn ensure_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn manifest_for(
    command: &str,
    config: serde_json::Value,
    resolved: &Resolved,
) -> RunManifest {
    RunManifest::new(
        command,
        config,
        resolved.seed,
        &resolved.est_config.weight_formula.to_string(),
        match resolved.est_config.match_mode {
            MatchMode::Set => "set",
            MatchMode::Multiset => "multiset",
        },
    )
}

fn cmd_simulate(args: SimulateArgs, resolved: &Resolved) -> Result<()> {
    let sigma = args.sigma.or(resolved.file.sigma).unwrap_or(1.0);
    let report = run_table_study(
        args.design,
        args.n_samples,
        args.iterations,
        sigma,
        resolved.seed,
        &resolved.est_config,
    )?;
    ensure_out_dir(&args.out)?;
    write_metrics_csv(&args.out.join("metrics.csv"), &report.metrics)?;
    write_json(&args.out.join("metrics.json"), &report.metrics)?;
    write_scatter_csv(&args.out.join("scatter.csv"), &report.scatter)?;
    let config = serde_json::json!({
        "design": args.design,
        "n_samples": args.n_samples,
        "iterations": args.iterations,
        "sigma": sigma,
        "fit": resolved.est_config.fit,
    });
    manifest_for("simulate", config, resolved).write(&args.out)?;
    Ok(())
}

fn cmd_coverage(args: CoverageArgs, resolved: &Resolved) -> Result<()> {
    let sigma = args.sigma.or(resolved.file.sigma).unwrap_or(1.0);
    let n_replicates = args
        .bootstrap_replicates
        .or(resolved.file.bootstrap_replicates)
        .unwrap_or(100);
    let boot = BootstrapConfig {
        n_replicates,
        seed: child_seed(resolved.seed, 2),
        max_redraws: 10,
    };
    boot.validate()?;
    let data_seed = child_seed(resolved.seed, 1);
    let design = args.design;
    let n_samples = args.n_samples;
    let report = crate::bootstrap::coverage_experiment(
        |i| {
            generate_design(&SimDesignConfig {
                outcome_design: design,
                n_samples,
                sigma,
                seed: child_seed(data_seed, i),
            })
        },
        args.iterations,
        &resolved.est_config,
        &boot,
    )?;
    ensure_out_dir(&args.out)?;
    write_coverage_outputs(&args.out, &report, HISTOGRAM_BINS)?;
    let config = serde_json::json!({
        "design": args.design,
        "n_samples": args.n_samples,
        "iterations": args.iterations,
        "bootstrap_replicates": n_replicates,
        "sigma": sigma,
        "fit": resolved.est_config.fit,
    });
    manifest_for("coverage", config, resolved).write(&args.out)?;
    Ok(())
}

fn cmd_empirical(args: EmpiricalArgs, resolved: &Resolved) -> Result<()> {
    let precursor = match (&args.data, args.synthetic_rows) {
        (Some(path), None) => load_creditcard_csv(path)?,
        (None, Some(rows)) => synthetic_precursor(rows, 10, 0.15, resolved.seed),
        _ => {
            return Err(Error::InvalidConfig(
                "exactly one of --data and --synthetic-rows is required".into(),
            ))
        }
    };
    let mut config = match args.mode.as_str() {
        "table6" => EmpiricalStudyConfig::table6(
            args.iterations.unwrap_or(1000),
            resolved.seed,
        ),
        "table7" => EmpiricalStudyConfig::table7(
            args.iterations.unwrap_or(100),
            resolved.seed,
        ),
        other => {
            return Err(Error::InvalidConfig(format!(
                "mode must be `table6` or `table7`, got `{other}`"
            )))
        }
    };
    if let Some(n) = args.treated_size {
        config.treated_size = TreatedSize::Fixed(n);
    }
    if let (Some(lo), Some(hi)) = (args.treated_min, args.treated_max) {
        config.treated_size = TreatedSize::Range(lo, hi);
    }
    if let Some(f) = args.train_fraction {
        config.train_fraction = f;
    }
    if let Some(k) = args.policy_features {
        config.n_policy_features = k;
    }
    if let Some(k) = args.selected_features {
        config.n_selected_features = k;
    }
    if let Some(noise) = &args.score_noise {
        config.score_noise = match noise.as_str() {
            "none" => ScoreNoise::None,
            "uniform01" => ScoreNoise::Uniform01,
            other => {
                return Err(Error::InvalidConfig(format!("unknown score noise `{other}`")))
            }
        };
    }

    ensure_out_dir(&args.out)?;
    let config_echo = serde_json::json!({
        "mode": args.mode,
        "study": config,
        "data": args.data,
        "synthetic_rows": args.synthetic_rows,
        "standardize_policy_features": true,
        "fit": resolved.est_config.fit,
    });
    match args.mode.as_str() {
        "table6" => {
            let report = run_empirical_study(&precursor, &config, &resolved.est_config)?;
            write_metrics_csv(&args.out.join("metrics.csv"), &report.metrics)?;
            write_json(&args.out.join("metrics.json"), &report.metrics)?;
            write_scatter_csv(&args.out.join("scatter.csv"), &report.scatter)?;
        }
        _ => {
            let n_replicates = args
                .bootstrap_replicates
                .or(resolved.file.bootstrap_replicates)
                .unwrap_or(100);
            let boot = BootstrapConfig {
                n_replicates,
                seed: child_seed(resolved.seed, 2),
                max_redraws: 10,
            };
            boot.validate()?;
            let report =
                run_empirical_coverage(&precursor, &config, &resolved.est_config, &boot)?;
            write_coverage_outputs(&args.out, &report, HISTOGRAM_BINS)?;
        }
    }
    manifest_for("empirical", config_echo, resolved).write(&args.out)?;
    Ok(())
}

fn cmd_estimate(args: EstimateArgs, resolved: &Resolved) -> Result<()> {
    let estimators: Vec<EstimatorId> = args
        .estimators
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    if estimators.is_empty() {
        return Err(Error::InvalidConfig("--estimators list is empty".into()));
    }
    let mut dataset = load_generic_csv(&args.data)?;
    if dataset.has_treated_outcomes() {
        eprintln!(
            "warning: treated units carry observed outcomes; they are ignored for estimation"
        );
        dataset = dataset.mask_treated();
    }
    let n_replicates = args
        .bootstrap_replicates
        .or(resolved.file.bootstrap_replicates)
        .unwrap_or(100);
    let boot = BootstrapConfig {
        n_replicates,
        seed: child_seed(resolved.seed, 2),
        max_redraws: 10,
    };
    boot.validate()?;

    let mut results: Vec<EstimateResult> = Vec::new();
    for id in estimators {
        let (point, se) = bootstrap_se(&dataset, id, &resolved.est_config, &boot)?;
        results.push(EstimateResult {
            estimator: id,
            point,
            se: Some(se),
            ci95: Some(ci95(point, se)),
        });
    }
    println!("{}", serde_json::to_string_pretty(&results)?);
    if let Some(out) = &args.out {
        ensure_out_dir(out)?;
        write_json(&out.join("estimates.json"), &results)?;
        let config = serde_json::json!({
            "data": args.data,
            "estimators": args.estimators,
            "bootstrap_replicates": n_replicates,
            "fit": resolved.est_config.fit,
        });
        manifest_for("estimate", config, resolved).write(out)?;
    }
    Ok(())
}
