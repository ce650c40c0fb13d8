//! Synthetic designs and the simulation table studies.
//!
//! Treatment: W = 1[a1*X1 + a2*X2 + a3*X3 > w].
//! Outcome design 1: Y = 1[b1*X1 + b2*X2 + b3*X3 + eps > y] (linear, the
//! fitted models are correctly specified).
//! Outcome design 2: Y = 1[b1*X1^2 + b2*X2 + b3*X3 + eps > y] (the linear
//! outcome model is misspecified).
//! a, b ~ U(0,1) and w, y ~ U(-1,1) are redrawn per dataset; X ~ N(0,1),
//! eps ~ N(0, sigma).

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{GroundTruth, Matrix, ObservationalDataset};
use crate::error::{Error, Result};
use crate::estimators::{estimator_roster, run_all, EstimatorConfig, EstimatorId};
use crate::rng::{child_seed, stream_rng};

const MAX_TREATMENT_REDRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimDesignConfig {
    pub outcome_design: u8,
    pub n_samples: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl SimDesignConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outcome_design != 1 && self.outcome_design != 2 {
            return Err(Error::InvalidConfig(format!(
                "outcome design must be 1 or 2, got {}",
                self.outcome_design
            )));
        }
        if self.n_samples < 100 {
            return Err(Error::InvalidConfig(format!(
                "n_samples must be >= 100, got {}",
                self.n_samples
            )));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidConfig(format!("sigma must be > 0, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// One synthetic dataset with full outcomes plus its ground truth.
/// Coefficients and thresholds are drawn fresh from the config seed; a draw
/// with an empty treatment arm redraws (a, w) up to 100 times.
pub fn generate_design(config: &SimDesignConfig) -> Result<(ObservationalDataset, GroundTruth)> {
    config.validate()?;
    let mut rng = stream_rng(config.seed, 0);
    let n = config.n_samples;

    let mut a: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..1.0));
    let b: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..1.0));
    let mut w_threshold: f64 = rng.gen_range(-1.0..1.0);
    let y_threshold: f64 = rng.gen_range(-1.0..1.0);

    let mut x = Vec::with_capacity(n * 3);
    let mut eps = Vec::with_capacity(n);
    for _ in 0..n {
        for _ in 0..3 {
            x.push(rng.sample::<f64, _>(rand_distr::StandardNormal));
        }
        eps.push(config.sigma * rng.sample::<f64, _>(rand_distr::StandardNormal));
    }

    let treatment_of = |a: &[f64; 3], w: f64| -> Vec<u8> {
        (0..n)
            .map(|i| {
                let xi = &x[i * 3..i * 3 + 3];
                u8::from(a[0] * xi[0] + a[1] * xi[1] + a[2] * xi[2] > w)
            })
            .collect()
    };
    let mut treatment = treatment_of(&a, w_threshold);
    let mut attempts = 0;
    while treatment.iter().all(|&t| t == 1) || treatment.iter().all(|&t| t == 0) {
        attempts += 1;
        if attempts > MAX_TREATMENT_REDRAWS {
            return Err(Error::InvalidConfig(
                "could not draw a treatment assignment with both arms populated".into(),
            ));
        }
        a = std::array::from_fn(|_| rng.gen_range(0.0..1.0));
        w_threshold = rng.gen_range(-1.0..1.0);
        treatment = treatment_of(&a, w_threshold);
    }

    let outcome: Vec<Option<u8>> = (0..n)
        .map(|i| {
            let xi = &x[i * 3..i * 3 + 3];
            let x1 = if config.outcome_design == 1 { xi[0] } else { xi[0] * xi[0] };
            Some(u8::from(b[0] * x1 + b[1] * xi[1] + b[2] * xi[2] + eps[i] > y_threshold))
        })
        .collect();

    let dataset = ObservationalDataset::new(
        Matrix::from_vec(x, n, 3)?,
        treatment,
        outcome,
        vec!["x1".into(), "x2".into(), "x3".into()],
    )?;
    let truth = dataset.true_treated_mean()?;
    Ok((dataset, truth))
}

/// Bias / RMSE / MAE of a vector of raw errors (estimate - truth), each
/// multiplied by 100 on output.
pub fn compute_metrics(errors: &[f64]) -> Result<(f64, f64, f64)> {
    if errors.is_empty() {
        return Err(Error::InvalidConfig("empty error vector".into()));
    }
    if errors.iter().any(|e| !e.is_finite()) {
        return Err(Error::InvalidConfig("non-finite error".into()));
    }
    let n = errors.len() as f64;
    let bias = errors.iter().sum::<f64>() / n;
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    let mae = errors.iter().map(|e| e.abs()).sum::<f64>() / n;
    Ok((bias * 100.0, rmse * 100.0, mae * 100.0))
}

/// One line of a results table; values follow the x100 percentage convention.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsRow {
    pub estimator: EstimatorId,
    pub bias: f64,
    pub rmse: f64,
    pub mae: f64,
    pub n_iterations_used: usize,
    pub n_failures: usize,
}

/// (truth, estimate) pair for the scatter plots.
#[derive(Debug, Clone, Serialize)]
pub struct ScatterPoint {
    pub estimator: EstimatorId,
    pub truth: f64,
    pub estimate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TableStudyReport {
    pub metrics: Vec<MetricsRow>,
    pub scatter: Vec<ScatterPoint>,
}

/// Repeats (generate dataset, run all estimators) `n_iterations` times and
/// aggregates per-estimator bias / RMSE / MAE. Iterations run in parallel on
/// per-iteration derived seeds; results are independent of thread count.
pub fn run_table_study(
    design: u8,
    n_samples: usize,
    n_iterations: usize,
    sigma: f64,
    seed: u64,
    est_config: &EstimatorConfig,
) -> Result<TableStudyReport> {
    if n_iterations == 0 {
        return Err(Error::InvalidConfig("n_iterations must be >= 1".into()));
    }
    SimDesignConfig { outcome_design: design, n_samples, sigma, seed }.validate()?;
    let roster = estimator_roster(&est_config.osm_k_list);

    let iterations: Vec<Result<IterationOutcome>> = (0..n_iterations as u64)
        .into_par_iter()
        .map(|i| {
            let config = SimDesignConfig {
                outcome_design: design,
                n_samples,
                sigma,
                seed: child_seed(seed, i),
            };
            let (dataset, truth) = generate_design(&config)?;
            let out = run_all(&dataset.mask_treated(), est_config);
            let estimates =
                roster.iter().map(|id| out.get(*id).map(|r| r.point)).collect();
            Ok(IterationOutcome { truth: truth.true_treated_mean, estimates })
        })
        .collect();

    aggregate_iterations(&roster, iterations)
}

/// One study iteration: the true treated mean plus an estimate per roster
/// slot (None where that estimator failed).
pub(crate) struct IterationOutcome {
    pub truth: f64,
    pub estimates: Vec<Option<f64>>,
}

/// Aggregates per-iteration results into the metrics table and scatter data.
/// Shared by the simulation and empirical studies.
pub(crate) fn aggregate_iterations(
    roster: &[EstimatorId],
    iterations: Vec<Result<IterationOutcome>>,
) -> Result<TableStudyReport> {
    let mut metrics = Vec::with_capacity(roster.len());
    let mut scatter = Vec::new();
    for (slot, id) in roster.iter().enumerate() {
        let mut errors = Vec::new();
        let mut n_failures = 0;
        for it in &iterations {
            match it {
                Ok(rec) => match rec.estimates[slot] {
                    Some(est) => errors.push(est - rec.truth),
                    None => n_failures += 1,
                },
                Err(_) => n_failures += 1,
            }
        }
        let (bias, rmse, mae) = compute_metrics(&errors)?;
        metrics.push(MetricsRow {
            estimator: *id,
            bias,
            rmse,
            mae,
            n_iterations_used: errors.len(),
            n_failures,
        });
    }
    for it in &iterations {
        if let Ok(rec) = it {
            for (slot, id) in roster.iter().enumerate() {
                if let Some(est) = rec.estimates[slot] {
                    scatter.push(ScatterPoint { estimator: *id, truth: rec.truth, estimate: est });
                }
            }
        }
    }
    if let Some(Err(e)) = iterations.into_iter().find(|r| r.is_err()) {
        return Err(e);
    }
    Ok(TableStudyReport { metrics, scatter })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn metrics_arithmetic_examples() {
        let (bias, rmse, mae) = compute_metrics(&[0.01, -0.01]).unwrap();
        assert_relative_eq!(bias, 0.0, epsilon = 1e-12);
        assert_relative_eq!(rmse, 1.0, max_relative = 1e-12);
        assert_relative_eq!(mae, 1.0, max_relative = 1e-12);

        assert_eq!(compute_metrics(&[0.0, 0.0, 0.0]).unwrap(), (0.0, 0.0, 0.0));

        let (bias, rmse, mae) = compute_metrics(&[0.03]).unwrap();
        assert_relative_eq!(bias, 3.0, max_relative = 1e-12);
        assert_relative_eq!(rmse, 3.0, max_relative = 1e-12);
        assert_relative_eq!(mae, 3.0, max_relative = 1e-12);
    }

    #[test]
    fn metrics_reject_empty_input() {
        assert!(compute_metrics(&[]).is_err());
    }

    #[test]
    fn generated_covariates_are_standard_normal() {
        let config = SimDesignConfig { outcome_design: 1, n_samples: 100_000, sigma: 1.0, seed: 61 };
        let (ds, _) = generate_design(&config).unwrap();
        for j in 0..3 {
            let n = ds.n_units() as f64;
            let mean = ds.covariates().column(j).sum::<f64>() / n;
            let var = ds.covariates().column(j).map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            assert!(mean.abs() < 0.02, "feature {j} mean {mean}");
            assert!((var - 1.0).abs() < 0.05, "feature {j} var {var}");
        }
    }

    #[test]
    fn both_arms_always_populated() {
        for seed in 0..20 {
            let config =
                SimDesignConfig { outcome_design: 1, n_samples: 10_000, sigma: 1.0, seed };
            let (ds, _) = generate_design(&config).unwrap();
            assert!(ds.n_treated() > 0 && ds.n_untreated() > 0);
        }
    }

    #[test]
    fn masking_hides_exactly_treated_outcomes() {
        let config = SimDesignConfig { outcome_design: 2, n_samples: 1000, sigma: 1.0, seed: 62 };
        let (ds, _) = generate_design(&config).unwrap();
        let masked = ds.mask_treated();
        for i in 0..ds.n_units() {
            assert_eq!(masked.outcome()[i].is_none(), ds.treatment()[i] == 1);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let config = SimDesignConfig { outcome_design: 1, n_samples: 500, sigma: 0.5, seed: 63 };
        let (a, ta) = generate_design(&config).unwrap();
        let (b, tb) = generate_design(&config).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta.true_treated_mean.to_bits(), tb.true_treated_mean.to_bits());
    }

    #[test]
    fn design2_squared_term_shifts_treated_outcome_mean() {
        // With a1 > 0 the treated group has X1 shifted upward, so X1^2 has a
        // larger mean among treated; with b1 dominating, treated outcomes are
        // more often 1 than untreated ones. Checked against a large sample.
        let mut gaps = Vec::new();
        for seed in [640, 641, 642, 643, 644] {
            let config =
                SimDesignConfig { outcome_design: 2, n_samples: 100_000, sigma: 0.1, seed };
            let (ds, truth) = generate_design(&config).unwrap();
            let untreated_mean = ds
                .untreated_outcomes()
                .iter()
                .map(|&y| y as f64)
                .sum::<f64>()
                / ds.n_untreated() as f64;
            gaps.push(truth.true_treated_mean - untreated_mean);
        }
        // sign-predictable on average across draws (b1 is not always dominant)
        let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
        assert!(mean_gap > 0.0, "gaps {gaps:?}");
    }

    #[test]
    fn table_study_metrics_satisfy_jensen_ordering() {
        let report =
            run_table_study(1, 500, 20, 1.0, 64, &EstimatorConfig::default()).unwrap();
        assert_eq!(report.metrics.len(), 6);
        for row in &report.metrics {
            assert!(row.rmse >= row.mae - 1e-12, "{row:?}");
            assert!(row.mae >= row.bias.abs() - 1e-12, "{row:?}");
        }
        assert!(!report.scatter.is_empty());
    }

    #[test]
    fn table_study_rejects_bad_design() {
        assert!(run_table_study(3, 500, 5, 1.0, 0, &EstimatorConfig::default()).is_err());
    }
}
