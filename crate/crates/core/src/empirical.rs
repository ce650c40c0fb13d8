//! The credit-card empirical studies: a Gaussian NB mock policy assigns the
//! treated (blocked) group, the held-out fraud labels provide ground truth,
//! and the estimators are evaluated against it.
//!
//! The policy model and the estimation models are deliberately distinct: the
//! policy scores with GNB on a few standardized features, while the
//! estimators fit their own logit models on the selected covariates.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{coverage_experiment, BootstrapConfig, CoverageReport};
use crate::dataset::{CreditCardPrecursor, GroundTruth, Matrix, ObservationalDataset};
use crate::error::{Error, Result};
use crate::estimators::{estimator_roster, run_all, EstimatorConfig};
use crate::models::{anova_select, fit_gnb};
use crate::rng::stream_rng;
use crate::simgen::{aggregate_iterations, IterationOutcome, TableStudyReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TreatedSize {
    Fixed(usize),
    /// Discrete uniform over the inclusive integer range.
    Range(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreNoise {
    None,
    Uniform01,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalStudyConfig {
    pub n_iterations: usize,
    pub n_policy_features: usize,
    pub n_selected_features: usize,
    pub treated_size: TreatedSize,
    pub train_fraction: f64,
    pub score_noise: ScoreNoise,
    pub seed: u64,
}

impl EmpiricalStudyConfig {
    /// Defaults matching the fixed-treated-group study (treated group of 100,
    /// 50:50 split, no score noise).
    pub fn table6(n_iterations: usize, seed: u64) -> Self {
        Self {
            n_iterations,
            n_policy_features: 4,
            n_selected_features: 10,
            treated_size: TreatedSize::Fixed(100),
            train_fraction: 0.5,
            score_noise: ScoreNoise::None,
            seed,
        }
    }

    /// Defaults matching the empirical coverage study (treated group of
    /// U{50..80}, 10% policy training split, uniform score noise).
    pub fn table7(n_iterations: usize, seed: u64) -> Self {
        Self {
            n_iterations,
            n_policy_features: 4,
            n_selected_features: 10,
            treated_size: TreatedSize::Range(50, 80),
            train_fraction: 0.1,
            score_noise: ScoreNoise::Uniform01,
            seed,
        }
    }

    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.n_policy_features > self.n_selected_features
            || self.n_selected_features > n_features
        {
            return Err(Error::InvalidConfig(format!(
                "need n_policy_features <= n_selected_features <= d, got {} / {} / {}",
                self.n_policy_features, self.n_selected_features, n_features
            )));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "train_fraction must be in (0,1), got {}",
                self.train_fraction
            )));
        }
        if let TreatedSize::Range(lo, hi) = self.treated_size {
            if lo == 0 || lo > hi {
                return Err(Error::InvalidConfig(format!(
                    "invalid treated size range {lo}..{hi}"
                )));
            }
        }
        if self.n_iterations == 0 {
            return Err(Error::InvalidConfig("n_iterations must be >= 1".into()));
        }
        Ok(())
    }
}

fn draw_treated_size(size: TreatedSize, rng: &mut ChaCha8Rng) -> usize {
    match size {
        TreatedSize::Fixed(n) => n,
        TreatedSize::Range(lo, hi) => rng.gen_range(lo..=hi),
    }
}

/// Standardizes `columns` of `rows` by the given per-column (mean, std).
fn standardize(rows: &Matrix, stats: &[(f64, f64)]) -> Matrix {
    let data: Vec<f64> = rows
        .rows()
        .flat_map(|r| {
            r.iter()
                .zip(stats)
                .map(|(&v, &(mean, std))| (v - mean) / std)
                .collect::<Vec<f64>>()
        })
        .collect();
    Matrix::from_vec(data, rows.n_rows(), rows.n_cols()).unwrap()
}

fn column_stats(m: &Matrix) -> Vec<(f64, f64)> {
    let n = m.n_rows() as f64;
    (0..m.n_cols())
        .map(|j| {
            let mean = m.column(j).sum::<f64>() / n;
            let var = m.column(j).map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let std = var.sqrt();
            (mean, if std > 1e-12 { std } else { 1.0 })
        })
        .collect()
}

/// Ranks of `scores` from highest down, ties broken toward the lower index.
fn top_score_positions(scores: &[f64], m: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b))
    });
    order.truncate(m);
    order
}

/// Mock policy for one iteration: picks policy features, trains GNB on a
/// train split, scores the scoring rows, assigns the top scores as treated.
/// Returns (treatment vector over scoring rows, policy features used).
struct PolicyAssignment {
    treatment: Vec<u8>,
    #[allow(dead_code)] // retained for inspection in debugging and tests
    policy_features: Vec<usize>,
}

fn assign_policy(
    features: &Matrix,
    labels: &[u8],
    selected: &[usize],
    train_rows: &[usize],
    score_rows: &[usize],
    config: &EmpiricalStudyConfig,
    rng: &mut ChaCha8Rng,
) -> Result<PolicyAssignment> {
    let mut pool = selected.to_vec();
    pool.shuffle(rng);
    let mut policy_features: Vec<usize> = pool[..config.n_policy_features].to_vec();
    policy_features.sort_unstable();

    let train_x = features.select_rows(train_rows).select_columns(&policy_features);
    let train_y: Vec<u8> = train_rows.iter().map(|&i| labels[i]).collect();
    let stats = column_stats(&train_x);
    let gnb = fit_gnb(&standardize(&train_x, &stats), &train_y)?;

    let score_x = features.select_rows(score_rows).select_columns(&policy_features);
    let mut scores = gnb.scores(&standardize(&score_x, &stats));
    if config.score_noise == ScoreNoise::Uniform01 {
        for s in scores.iter_mut() {
            *s += rng.gen_range(0.0..1.0);
        }
    }

    let m = draw_treated_size(config.treated_size, rng);
    if m >= score_rows.len() {
        return Err(Error::InvalidConfig(format!(
            "treated size {m} too large for {} scoring rows",
            score_rows.len()
        )));
    }
    let mut treatment = vec![0u8; score_rows.len()];
    for pos in top_score_positions(&scores, m) {
        treatment[pos] = 1;
    }
    Ok(PolicyAssignment { treatment, policy_features })
}

fn build_dataset(
    features: &Matrix,
    labels: &[u8],
    selected: &[usize],
    feature_names: &[String],
    rows: &[usize],
    treatment: Vec<u8>,
) -> Result<(ObservationalDataset, GroundTruth)> {
    let covariates = features.select_rows(rows).select_columns(selected);
    let names: Vec<String> = selected.iter().map(|&j| feature_names[j].clone()).collect();
    let outcome: Vec<Option<u8>> = rows.iter().map(|&i| Some(labels[i])).collect();
    let dataset = ObservationalDataset::new(covariates, treatment, outcome, names)?;
    let truth = dataset.true_treated_mean()?;
    Ok((dataset, truth))
}

/// The fixed-treated-group empirical study: per iteration, a fresh mock
/// policy blocks the top-scoring test units and every estimator is evaluated
/// against the held-out labels.
pub fn run_empirical_study(
    precursor: &CreditCardPrecursor,
    config: &EmpiricalStudyConfig,
    est_config: &EstimatorConfig,
) -> Result<TableStudyReport> {
    config.validate(precursor.features.n_cols())?;
    let selected =
        anova_select(&precursor.features, &precursor.labels, config.n_selected_features)?;
    let roster = estimator_roster(&est_config.osm_k_list);
    let n = precursor.features.n_rows();

    let iterations: Vec<Result<IterationOutcome>> = (0..config.n_iterations as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(config.seed, i);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let n_train = ((n as f64) * config.train_fraction).round() as usize;
            let (train_rows, test_rows) = order.split_at(n_train);
            let assignment = assign_policy(
                &precursor.features,
                &precursor.labels,
                &selected,
                train_rows,
                test_rows,
                config,
                &mut rng,
            )?;
            let (dataset, truth) = build_dataset(
                &precursor.features,
                &precursor.labels,
                &selected,
                &precursor.feature_names,
                test_rows,
                assignment.treatment,
            )?;
            let out = run_all(&dataset.mask_treated(), est_config);
            let estimates = roster.iter().map(|id| out.get(*id).map(|r| r.point)).collect();
            Ok(IterationOutcome { truth: truth.true_treated_mean, estimates })
        })
        .collect();

    aggregate_iterations(&roster, iterations)
}

/// One iteration's sampled dataset for the empirical coverage study:
/// 900 non-fraud + 100 fraud rows, a mock policy trained on a 10% split,
/// uniform score noise, and a random treated-group size.
pub fn empirical_coverage_dataset(
    precursor: &CreditCardPrecursor,
    selected: &[usize],
    config: &EmpiricalStudyConfig,
    iteration: u64,
) -> Result<(ObservationalDataset, GroundTruth)> {
    let mut rng = stream_rng(config.seed, iteration);
    let mut nonfraud: Vec<usize> = Vec::new();
    let mut fraud: Vec<usize> = Vec::new();
    for (i, &c) in precursor.labels.iter().enumerate() {
        if c == 1 {
            fraud.push(i);
        } else {
            nonfraud.push(i);
        }
    }
    if nonfraud.len() < 900 || fraud.len() < 100 {
        return Err(Error::InvalidDataset(format!(
            "need >= 900 non-fraud and >= 100 fraud rows, got {} / {}",
            nonfraud.len(),
            fraud.len()
        )));
    }
    nonfraud.shuffle(&mut rng);
    fraud.shuffle(&mut rng);
    let mut sample: Vec<usize> = nonfraud[..900].to_vec();
    sample.extend_from_slice(&fraud[..100]);

    let n = sample.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_train = ((n as f64) * config.train_fraction).round() as usize;
    let train_rows: Vec<usize> = order[..n_train].iter().map(|&p| sample[p]).collect();
    // the policy scores the whole sample, training rows included
    let assignment = assign_policy(
        &precursor.features,
        &precursor.labels,
        selected,
        &train_rows,
        &sample,
        config,
        &mut rng,
    )?;
    build_dataset(
        &precursor.features,
        &precursor.labels,
        selected,
        &precursor.feature_names,
        &sample,
        assignment.treatment,
    )
}

/// The empirical coverage study: bootstrap CIs per estimator over repeated
/// policy-sampled datasets, reporting coverage of the known treated mean.
pub fn run_empirical_coverage(
    precursor: &CreditCardPrecursor,
    config: &EmpiricalStudyConfig,
    est_config: &EstimatorConfig,
    boot_config: &BootstrapConfig,
) -> Result<CoverageReport> {
    config.validate(precursor.features.n_cols())?;
    let selected =
        anova_select(&precursor.features, &precursor.labels, config.n_selected_features)?;
    coverage_experiment(
        |i| empirical_coverage_dataset(precursor, &selected, config, i),
        config.n_iterations,
        est_config,
        boot_config,
    )
}

/// Synthetic stand-in for the credit-card file: two Gaussian classes over
/// `d` features, with only the first few features informative. Used by smoke
/// tests when the real dataset is not on disk.
pub fn synthetic_precursor(
    n: usize,
    d: usize,
    fraud_rate: f64,
    seed: u64,
) -> CreditCardPrecursor {
    use rand_distr::StandardNormal;
    let mut rng = stream_rng(seed, 0);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let c = u8::from(rng.gen_bool(fraud_rate));
        let row: Vec<f64> = (0..d)
            .map(|j| {
                let shift = if c == 1 && j < 4 { 1.5 } else { 0.0 };
                shift + rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        rows.push(row);
        labels.push(c);
    }
    CreditCardPrecursor {
        features: Matrix::from_rows(rows).unwrap(),
        labels,
        feature_names: (0..d).map(|j| format!("f{j}")).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smoke_precursor() -> CreditCardPrecursor {
        synthetic_precursor(4000, 10, 0.15, 71)
    }

    #[test]
    fn table6_smoke_pipeline_completes() {
        let pre = smoke_precursor();
        let config = EmpiricalStudyConfig {
            treated_size: TreatedSize::Fixed(60),
            ..EmpiricalStudyConfig::table6(8, 72)
        };
        let report = run_empirical_study(&pre, &config, &EstimatorConfig::default()).unwrap();
        assert_eq!(report.metrics.len(), 6);
        for row in &report.metrics {
            assert!(row.rmse >= row.mae - 1e-12);
            assert!(row.mae >= row.bias.abs() - 1e-12);
        }
    }

    #[test]
    fn treated_size_is_exact_and_truths_vary() {
        let pre = smoke_precursor();
        let config = EmpiricalStudyConfig {
            treated_size: TreatedSize::Fixed(60),
            ..EmpiricalStudyConfig::table6(6, 73)
        };
        let selected = anova_select(&pre.features, &pre.labels, 10).unwrap();
        let mut truths = Vec::new();
        for i in 0..config.n_iterations as u64 {
            // replicate the study's per-iteration split and policy
            let mut rng = stream_rng(config.seed, i);
            let n = pre.features.n_rows();
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let n_train = ((n as f64) * config.train_fraction).round() as usize;
            let (train_rows, test_rows) = order.split_at(n_train);
            let assignment = assign_policy(
                &pre.features,
                &pre.labels,
                &selected,
                train_rows,
                test_rows,
                &config,
                &mut rng,
            )
            .unwrap();
            assert_eq!(
                assignment.treatment.iter().filter(|&&t| t == 1).count(),
                60
            );
            assert!(assignment.policy_features.iter().all(|f| selected.contains(f)));
            assert_eq!(assignment.policy_features.len(), 4);
            let (ds, truth) = build_dataset(
                &pre.features,
                &pre.labels,
                &selected,
                &pre.feature_names,
                test_rows,
                assignment.treatment,
            )
            .unwrap();
            assert_eq!(ds.n_treated(), 60);
            truths.push(truth.true_treated_mean);
        }
        let mean = truths.iter().sum::<f64>() / truths.len() as f64;
        let var = truths.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>()
            / truths.len() as f64;
        assert!(var > 0.0, "ground truths constant across iterations: {truths:?}");
    }

    #[test]
    fn coverage_dataset_shape_and_balance() {
        let pre = smoke_precursor();
        let config = EmpiricalStudyConfig::table7(1, 74);
        let selected = anova_select(&pre.features, &pre.labels, 10).unwrap();
        let (ds, truth) = empirical_coverage_dataset(&pre, &selected, &config, 0).unwrap();
        assert_eq!(ds.n_units(), 1000);
        let n_treated = ds.n_treated();
        assert!((50..=80).contains(&n_treated), "treated size {n_treated}");
        assert!((0.0..=1.0).contains(&truth.true_treated_mean));
        // 100 of the 1000 rows are fraud
        let frauds: usize = ds.outcome().iter().map(|y| y.unwrap() as usize).sum();
        assert_eq!(frauds, 100);
    }

    #[test]
    fn coverage_dataset_reproducible_bitwise() {
        let pre = smoke_precursor();
        let config = EmpiricalStudyConfig::table7(1, 75);
        let selected = anova_select(&pre.features, &pre.labels, 10).unwrap();
        let (a, ta) = empirical_coverage_dataset(&pre, &selected, &config, 5).unwrap();
        let (b, tb) = empirical_coverage_dataset(&pre, &selected, &config, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta.true_treated_mean.to_bits(), tb.true_treated_mean.to_bits());
    }

    #[test]
    fn no_noise_on_separable_data_treats_top_scores() {
        // classes far apart: the GNB score ranks fraud rows first, so with
        // no noise the treated group is exactly the top-n scores, which are
        // fraud rows almost surely
        let mut pre = synthetic_precursor(2000, 10, 0.3, 76);
        // widen the separation
        let rows: Vec<Vec<f64>> = (0..pre.features.n_rows())
            .map(|i| {
                let mut r = pre.features.row(i).to_vec();
                if pre.labels[i] == 1 {
                    for v in r.iter_mut().take(4) {
                        *v += 6.0;
                    }
                }
                r
            })
            .collect();
        pre.features = Matrix::from_rows(rows).unwrap();
        let config = EmpiricalStudyConfig {
            treated_size: TreatedSize::Fixed(50),
            score_noise: ScoreNoise::None,
            ..EmpiricalStudyConfig::table6(1, 77)
        };
        let selected = anova_select(&pre.features, &pre.labels, 10).unwrap();
        let mut rng = stream_rng(config.seed, 0);
        let n = pre.features.n_rows();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let (train_rows, test_rows) = order.split_at(n / 2);
        let assignment = assign_policy(
            &pre.features,
            &pre.labels,
            &selected,
            train_rows,
            test_rows,
            &config,
            &mut rng,
        )
        .unwrap();
        let treated_frauds = test_rows
            .iter()
            .zip(&assignment.treatment)
            .filter(|&(&row, &t)| t == 1 && pre.labels[row] == 1)
            .count();
        assert_eq!(treated_frauds, 50);
    }

    #[test]
    fn config_validation_rejects_bad_shapes() {
        let pre = smoke_precursor();
        let mut config = EmpiricalStudyConfig::table6(2, 0);
        config.n_selected_features = 20; // > d = 10
        assert!(run_empirical_study(&pre, &config, &EstimatorConfig::default()).is_err());
        let mut config = EmpiricalStudyConfig::table6(2, 0);
        config.train_fraction = 1.0;
        assert!(run_empirical_study(&pre, &config, &EstimatorConfig::default()).is_err());
    }

    #[test]
    fn coverage_requires_enough_fraud_rows() {
        let pre = synthetic_precursor(500, 10, 0.05, 78);
        let config = EmpiricalStudyConfig::table7(1, 79);
        let selected = anova_select(&pre.features, &pre.labels, 10).unwrap();
        assert!(empirical_coverage_dataset(&pre, &selected, &config, 0).is_err());
    }
}
