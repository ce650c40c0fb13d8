//! Bootstrap standard errors and the coverage-rate experiment.
//!
//! The whole dataset is resampled jointly (rows i.i.d. with replacement,
//! same size) and every score model is refit inside each replicate, so
//! model-fitting variance enters the standard error. Replicate RNG streams
//! derive from (seed, replicate index), making parallel runs reproducible.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{GroundTruth, ObservationalDataset};
use crate::error::{Error, Result};
use crate::estimators::{
    estimate_ipw_nr, estimate_mpo, estimate_osm, estimate_psm, estimate_wmpo, estimator_roster,
    run_all, EstimatorConfig, EstimatorId,
};
use crate::models::{fit_outcome, fit_propensity};
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub n_replicates: usize,
    pub seed: u64,
    pub max_redraws: usize,
}

impl BootstrapConfig {
    pub fn new(n_replicates: usize, seed: u64) -> Result<Self> {
        let config = Self { n_replicates, seed, max_redraws: 10 };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_replicates < 2 {
            return Err(Error::InvalidConfig(format!(
                "n_replicates must be >= 2, got {}",
                self.n_replicates
            )));
        }
        Ok(())
    }
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { n_replicates: 100, seed: 0, max_redraws: 10 }
    }
}

/// 95% normal-approximation confidence interval. Not clipped to [0,1].
pub fn ci95(point: f64, se: f64) -> (f64, f64) {
    debug_assert!(se >= 0.0);
    (point - 1.96 * se, point + 1.96 * se)
}

fn sample_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn resample(dataset: &ObservationalDataset, rng: &mut impl Rng) -> ObservationalDataset {
    let n = dataset.n_units();
    let rows: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
    dataset.select_rows(&rows)
}

/// Bootstrap of an arbitrary statistic. Returns the statistic on the
/// original dataset, the standard error over completed replicates, and how
/// many replicates were skipped after exhausting redraws.
pub fn bootstrap_statistic<F>(
    dataset: &ObservationalDataset,
    config: &BootstrapConfig,
    statistic: F,
) -> Result<(f64, f64, usize)>
where
    F: Fn(&ObservationalDataset) -> Result<f64> + Sync,
{
    config.validate()?;
    let point = statistic(dataset)?;
    let samples: Vec<Option<f64>> = (0..config.n_replicates)
        .into_par_iter()
        .map(|j| {
            let mut rng = stream_rng(config.seed, j as u64);
            for _ in 0..=config.max_redraws {
                let rep = resample(dataset, &mut rng);
                if rep.n_treated() == 0 || rep.n_untreated() == 0 {
                    continue;
                }
                if let Ok(v) = statistic(&rep) {
                    return Some(v);
                }
            }
            None
        })
        .collect();
    let completed: Vec<f64> = samples.iter().flatten().copied().collect();
    let skipped = samples.len() - completed.len();
    if completed.len() < 2 {
        return Err(Error::Bootstrap(format!(
            "only {} completed replicates (need >= 2)",
            completed.len()
        )));
    }
    Ok((point, sample_std(&completed), skipped))
}

/// Computes a single estimator, fitting only the models it needs.
pub fn estimate_single(
    dataset: &ObservationalDataset,
    id: EstimatorId,
    config: &EstimatorConfig,
) -> Result<f64> {
    let point = match id {
        EstimatorId::Psm1Nn => {
            let pm = fit_propensity(dataset, &config.fit)?;
            estimate_psm(dataset, &pm, 1, config.match_mode)?.point
        }
        EstimatorId::Osm1Nn => {
            let om = fit_outcome(dataset, None, &config.fit)?;
            estimate_osm(dataset, &om, 1, config.match_mode)?.point
        }
        EstimatorId::OsmKnn(k) => {
            let om = fit_outcome(dataset, None, &config.fit)?;
            estimate_osm(dataset, &om, k, config.match_mode)?.point
        }
        EstimatorId::IpwNr => {
            let pm = fit_propensity(dataset, &config.fit)?;
            estimate_ipw_nr(dataset, &pm, config.weight_formula)?.point
        }
        EstimatorId::Mpo => {
            let om = fit_outcome(dataset, None, &config.fit)?;
            estimate_mpo(dataset, &om)?.point
        }
        EstimatorId::Wmpo => {
            let pm = fit_propensity(dataset, &config.fit)?;
            estimate_wmpo(dataset, &pm, config.weight_formula, &config.fit)?.point
        }
    };
    Ok(point)
}

/// Bootstrap standard error for one estimator: the point estimate on the
/// original dataset plus the sample standard deviation over replicates.
pub fn bootstrap_se(
    dataset: &ObservationalDataset,
    estimator: EstimatorId,
    est_config: &EstimatorConfig,
    config: &BootstrapConfig,
) -> Result<(f64, f64)> {
    let (point, se, _skipped) =
        bootstrap_statistic(dataset, config, |ds| estimate_single(ds, estimator, est_config))?;
    Ok((point, se))
}

/// Bootstrap summary for one estimator within a joint run.
#[derive(Debug, Clone, Serialize)]
pub struct EstimatorBootstrap {
    pub estimator: EstimatorId,
    pub point: Option<f64>,
    pub se: Option<f64>,
    pub completed: usize,
    pub skipped: usize,
    pub error: Option<String>,
}

/// Bootstraps every estimator at once, sharing resamples and fitted models
/// across estimators within each replicate. Per estimator, a replicate whose
/// resample is degenerate or whose estimate fails falls through to the next
/// redraw of the same stream, up to `max_redraws`, then is skipped.
pub fn bootstrap_all(
    dataset: &ObservationalDataset,
    est_config: &EstimatorConfig,
    config: &BootstrapConfig,
) -> Result<Vec<EstimatorBootstrap>> {
    config.validate()?;
    let roster = estimator_roster(&est_config.osm_k_list);
    let original = run_all(dataset, est_config);

    // per replicate: value per roster slot, or None if skipped
    let replicate_values: Vec<Vec<Option<f64>>> = (0..config.n_replicates)
        .into_par_iter()
        .map(|j| {
            let mut rng = stream_rng(config.seed, j as u64);
            let mut values: Vec<Option<f64>> = vec![None; roster.len()];
            for _ in 0..=config.max_redraws {
                if values.iter().all(|v| v.is_some()) {
                    break;
                }
                let rep = resample(dataset, &mut rng);
                if rep.n_treated() == 0 || rep.n_untreated() == 0 {
                    continue;
                }
                let out = run_all(&rep, est_config);
                for (slot, id) in roster.iter().enumerate() {
                    if values[slot].is_none() {
                        if let Some(r) = out.get(*id) {
                            values[slot] = Some(r.point);
                        }
                    }
                }
            }
            values
        })
        .collect();

    let mut summaries = Vec::with_capacity(roster.len());
    for (slot, id) in roster.iter().enumerate() {
        let samples: Vec<f64> =
            replicate_values.iter().filter_map(|rep| rep[slot]).collect();
        let skipped = config.n_replicates - samples.len();
        let original_error = original
            .errors
            .iter()
            .find(|(eid, _)| eid == id)
            .map(|(_, msg)| msg.clone());
        let point = original.get(*id).map(|r| r.point);
        let se = if original_error.is_none() && samples.len() >= 2 {
            Some(sample_std(&samples))
        } else {
            None
        };
        summaries.push(EstimatorBootstrap {
            estimator: *id,
            point,
            se,
            completed: samples.len(),
            skipped,
            error: original_error,
        });
    }
    Ok(summaries)
}

/// Per-estimator coverage of the 95% CI plus the error/SE ratio samples
/// behind the histogram figures.
#[derive(Debug, Clone, Serialize)]
pub struct EstimatorCoverage {
    pub estimator: EstimatorId,
    pub coverage_rate: f64,
    pub n_valid: usize,
    pub n_failed: usize,
    pub error_over_se_samples: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoverageReport {
    pub n_iterations: usize,
    pub per_estimator: Vec<EstimatorCoverage>,
}

/// Runs the coverage experiment: per iteration, a fresh dataset with known
/// truth, a bootstrap CI per estimator, and a covered/not-covered record.
/// `data_source(i)` must be a pure function of the iteration index.
pub fn coverage_experiment<G>(
    data_source: G,
    n_iterations: usize,
    est_config: &EstimatorConfig,
    boot_config: &BootstrapConfig,
) -> Result<CoverageReport>
where
    G: Fn(u64) -> Result<(ObservationalDataset, GroundTruth)> + Sync,
{
    boot_config.validate()?;
    let roster = estimator_roster(&est_config.osm_k_list);

    struct IterationRecord {
        covered: Vec<Option<bool>>,
        ratio: Vec<Option<f64>>,
    }

    let records: Vec<Result<IterationRecord>> = (0..n_iterations as u64)
        .into_par_iter()
        .map(|i| {
            let (dataset, truth) = data_source(i)?;
            // the bootstrap seed is shared across iterations: replicate
            // streams act on per-iteration datasets, and a degenerate
            // generator then yields identical CIs in every iteration
            let summaries = bootstrap_all(&dataset.mask_treated(), est_config, boot_config)?;
            let mut covered = Vec::with_capacity(roster.len());
            let mut ratio = Vec::with_capacity(roster.len());
            for s in &summaries {
                match (s.point, s.se) {
                    (Some(point), Some(se)) => {
                        let err = point - truth.true_treated_mean;
                        if se == 0.0 {
                            // zero spread: covered only when the error is zero
                            covered.push(Some(err == 0.0));
                            ratio.push(Some(if err == 0.0 {
                                0.0
                            } else {
                                f64::INFINITY.copysign(err)
                            }));
                        } else {
                            let (lo, hi) = ci95(point, se);
                            covered.push(Some(
                                truth.true_treated_mean >= lo && truth.true_treated_mean <= hi,
                            ));
                            ratio.push(Some(err / se));
                        }
                    }
                    _ => {
                        covered.push(None);
                        ratio.push(None);
                    }
                }
            }
            Ok(IterationRecord { covered, ratio })
        })
        .collect();

    let mut per_estimator = Vec::with_capacity(roster.len());
    for (slot, id) in roster.iter().enumerate() {
        let mut n_covered = 0usize;
        let mut n_valid = 0usize;
        let mut n_failed = 0usize;
        let mut samples = Vec::new();
        for record in &records {
            match record {
                Ok(rec) => match rec.covered[slot] {
                    Some(c) => {
                        n_valid += 1;
                        if c {
                            n_covered += 1;
                        }
                        samples.push(rec.ratio[slot].unwrap());
                    }
                    None => n_failed += 1,
                },
                Err(_) => n_failed += 1,
            }
        }
        per_estimator.push(EstimatorCoverage {
            estimator: *id,
            coverage_rate: if n_valid == 0 { 0.0 } else { n_covered as f64 / n_valid as f64 },
            n_valid,
            n_failed,
            error_over_se_samples: samples,
        });
    }
    // surface a generator failure rather than silently shrinking denominators
    if let Some(Err(e)) = records.into_iter().find(|r| r.is_err()) {
        return Err(e);
    }
    Ok(CoverageReport { n_iterations, per_estimator })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Matrix;
    use rand_distr::{Distribution, StandardNormal};

    fn bernoulli_dataset(n: usize, p: f64, treated_every: usize, seed: u64) -> ObservationalDataset {
        let mut rng = stream_rng(seed, 0);
        let mut rows = Vec::new();
        let mut w = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            rows.push(vec![StandardNormal.sample(&mut rng)]);
            let t = u8::from(i % treated_every == 0);
            w.push(t);
            y.push(if t == 1 { None } else { Some(u8::from(rng.gen_bool(p))) });
        }
        ObservationalDataset::new(Matrix::from_rows(rows).unwrap(), w, y, vec!["x".into()])
            .unwrap()
    }

    fn untreated_mean(ds: &ObservationalDataset) -> Result<f64> {
        let ys = ds.untreated_outcomes();
        Ok(ys.iter().map(|&y| y as f64).sum::<f64>() / ys.len() as f64)
    }

    #[test]
    fn ci95_arithmetic() {
        assert_eq!(ci95(0.5, 0.1), (0.5 - 0.196, 0.5 + 0.196));
        assert_eq!(ci95(0.2, 0.0), (0.2, 0.2));
        let (lo, hi) = ci95(0.01, 0.02);
        assert!((lo - (-0.0292)).abs() < 1e-12);
        assert!((hi - 0.0492).abs() < 1e-12);
        assert!(lo < 0.0, "CI must not be clipped to [0,1]");
    }

    #[test]
    fn constant_statistic_has_zero_se() {
        let ds = bernoulli_dataset(200, 0.5, 4, 51);
        let config = BootstrapConfig { n_replicates: 20, seed: 3, max_redraws: 10 };
        let (_, se, skipped) = bootstrap_statistic(&ds, &config, |_| Ok(0.25)).unwrap();
        assert_eq!(se, 0.0);
        assert_eq!(skipped, 0);
    }

    #[test]
    fn resample_preserves_size() {
        let ds = bernoulli_dataset(137, 0.3, 5, 52);
        let mut rng = stream_rng(9, 0);
        let rep = resample(&ds, &mut rng);
        assert_eq!(rep.n_units(), 137);
    }

    #[test]
    fn bootstrap_se_matches_analytic_anchor() {
        // linear statistic: plain mean of untreated outcomes
        for (case, p) in [(0usize, 0.2), (1, 0.5), (2, 0.8)] {
            let mut rel_errors = Vec::new();
            for trial in 0..20 {
                let ds = bernoulli_dataset(1000, p, 1000, 100 + case as u64 * 37 + trial);
                let n0 = ds.n_untreated() as f64;
                let p_hat = untreated_mean(&ds).unwrap();
                let analytic = (p_hat * (1.0 - p_hat) / n0).sqrt();
                let config = BootstrapConfig { n_replicates: 200, seed: trial, max_redraws: 10 };
                let (_, se, _) = bootstrap_statistic(&ds, &config, untreated_mean).unwrap();
                rel_errors.push((se - analytic).abs() / analytic);
            }
            let mean_rel = rel_errors.iter().sum::<f64>() / rel_errors.len() as f64;
            assert!(mean_rel < 0.25, "p={p}: mean relative error {mean_rel}");
        }
    }

    #[test]
    fn too_few_replicates_rejected() {
        assert!(BootstrapConfig::new(1, 0).is_err());
        assert!(BootstrapConfig::new(2, 0).is_ok());
    }

    #[test]
    fn always_failing_statistic_errors_out() {
        let ds = bernoulli_dataset(50, 0.5, 5, 53);
        let config = BootstrapConfig { n_replicates: 5, seed: 1, max_redraws: 2 };
        let point_fails =
            bootstrap_statistic(&ds, &config, |_| Err(Error::Fit("nope".into())));
        assert!(point_fails.is_err());
    }

    #[test]
    fn bootstrap_is_reproducible_bitwise() {
        let ds = bernoulli_dataset(300, 0.4, 4, 54);
        let config = BootstrapConfig { n_replicates: 50, seed: 77, max_redraws: 10 };
        let a = bootstrap_statistic(&ds, &config, untreated_mean).unwrap();
        let b = bootstrap_statistic(&ds, &config, untreated_mean).unwrap();
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert_eq!(a.1.to_bits(), b.1.to_bits());
    }

    #[test]
    fn degenerate_generator_gives_identical_cis() {
        let base = bernoulli_dataset(300, 0.4, 4, 55);
        // pretend truth for the fixed dataset
        let truth = GroundTruth { true_treated_mean: 0.4 };
        let est_config = EstimatorConfig::default();
        let boot = BootstrapConfig { n_replicates: 10, seed: 5, max_redraws: 10 };
        let report = coverage_experiment(
            |_| Ok((base.clone(), truth)),
            3,
            &est_config,
            &boot,
        )
        .unwrap();
        for cov in &report.per_estimator {
            assert_eq!(cov.n_valid + cov.n_failed, 3);
            // identical dataset + shared bootstrap seed: every iteration
            // produces the same CI, hence the same error/SE ratio
            if cov.error_over_se_samples.len() > 1 {
                let first = cov.error_over_se_samples[0];
                assert!(cov.error_over_se_samples.iter().all(|&r| r == first));
            }
        }
        let report2 = coverage_experiment(
            |_| Ok((base.clone(), truth)),
            3,
            &est_config,
            &boot,
        )
        .unwrap();
        for (a, b) in report.per_estimator.iter().zip(&report2.per_estimator) {
            assert_eq!(a.error_over_se_samples, b.error_over_se_samples);
            assert_eq!(a.coverage_rate, b.coverage_rate);
        }
    }
}
