//! L2-regularized logistic regression fitted by IRLS with step halving.
//!
//! Features are standardized internally; the penalty applies to the
//! standardized coefficients and never to the intercept. The fit is fully
//! deterministic: same data and config give identical coefficients.

use nalgebra::{DMatrix, DVector};

use super::FitConfig;
use crate::dataset::{Matrix, ObservationalDataset};
use crate::error::{Error, Result};

const STD_FLOOR: f64 = 1e-12;
const IRLS_WEIGHT_FLOOR: f64 = 1e-10;

/// A fitted logistic model: standardized-space coefficients plus the
/// per-feature standardization applied at prediction time.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedLogit {
    weights: Vec<f64>,
    intercept: f64,
    standardization: Vec<(f64, f64)>,
    prob_clamp_eps: f64,
    pub converged: bool,
    pub iterations_used: usize,
}

impl FittedLogit {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn standardization(&self) -> &[(f64, f64)] {
        &self.standardization
    }

    /// Coefficients folded back to the raw feature scale: (weights, intercept).
    pub fn raw_coefficients(&self) -> (Vec<f64>, f64) {
        let mut raw = Vec::with_capacity(self.weights.len());
        let mut intercept = self.intercept;
        for (w, &(mean, std)) in self.weights.iter().zip(&self.standardization) {
            raw.push(w / std);
            intercept -= w * mean / std;
        }
        (raw, intercept)
    }

    /// Predicted probability for one unit, clamped away from 0 and 1.
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut eta = self.intercept;
        for ((x, w), &(mean, std)) in row.iter().zip(&self.weights).zip(&self.standardization) {
            eta += w * (x - mean) / std;
        }
        let p = sigmoid(eta);
        p.clamp(self.prob_clamp_eps, 1.0 - self.prob_clamp_eps)
    }

    /// Predicted probabilities for every row of a matrix.
    pub fn scores(&self, x: &Matrix) -> Vec<f64> {
        (0..x.n_rows()).map(|i| self.predict(x.row(i))).collect()
    }
}

fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Propensity model: treatment regressed on covariates over all units.
pub fn fit_propensity(dataset: &ObservationalDataset, config: &FitConfig) -> Result<FittedLogit> {
    let n_treated = dataset.n_treated();
    if n_treated == 0 || n_treated == dataset.n_units() {
        return Err(Error::Fit(format!(
            "propensity fit needs both groups ({} treated of {} units)",
            n_treated,
            dataset.n_units()
        )));
    }
    let y: Vec<f64> = dataset.treatment().iter().map(|&w| w as f64).collect();
    fit_logit(dataset.covariates(), &y, None, config)
}

/// Outcome model fitted on the untreated units only; `unit_weights`, when
/// given, aligns with the untreated units in index order and yields the
/// weighted variant used by the doubly robust estimator.
pub fn fit_outcome(
    dataset: &ObservationalDataset,
    unit_weights: Option<&[f64]>,
    config: &FitConfig,
) -> Result<FittedLogit> {
    let untreated = dataset.untreated_indices();
    if untreated.is_empty() {
        return Err(Error::Fit("no untreated units to fit the outcome model on".into()));
    }
    let y: Vec<f64> = dataset.untreated_outcomes().iter().map(|&v| v as f64).collect();
    let positives = y.iter().filter(|&&v| v == 1.0).count();
    if positives == 0 || positives == y.len() {
        return Err(Error::Fit(format!(
            "degenerate outcome labels among untreated ({positives} of {} positive)",
            y.len()
        )));
    }
    if let Some(w) = unit_weights {
        if w.len() != untreated.len() {
            return Err(Error::Fit(format!(
                "weight length {} != untreated count {}",
                w.len(),
                untreated.len()
            )));
        }
        if w.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::Fit("unit weights must be positive and finite".into()));
        }
    }
    let x = dataset.covariates().select_rows(&untreated);
    fit_logit(&x, &y, unit_weights, config)
}

/// Fits a weighted L2-regularized logit of `y` on the rows of `x`.
pub fn fit_logit(
    x: &Matrix,
    y: &[f64],
    sample_weights: Option<&[f64]>,
    config: &FitConfig,
) -> Result<FittedLogit> {
    let n = x.n_rows();
    let d = x.n_cols();
    if n == 0 || y.len() != n {
        return Err(Error::Fit("empty input or label length mismatch".into()));
    }
    let uniform = vec![1.0; n];
    let s = sample_weights.unwrap_or(&uniform);
    let total_weight: f64 = s.iter().sum();
    if !(total_weight > 0.0) {
        return Err(Error::Fit("non-positive total sample weight".into()));
    }

    let standardization = column_standardization(x);
    // standardized design, kept dense: d is small (<= a few dozen)
    let xs: Vec<f64> = {
        let mut out = Vec::with_capacity(n * d);
        for i in 0..n {
            for (j, &(mean, std)) in standardization.iter().enumerate() {
                out.push((x.get(i, j) - mean) / std);
            }
        }
        out
    };
    let row = |i: usize| &xs[i * d..(i + 1) * d];

    let p_dim = d + 1; // intercept last
    let mut beta = DVector::<f64>::zeros(p_dim);
    let lambda = config.l2_lambda;

    let objective = |beta: &DVector<f64>| -> f64 {
        let mut nll = 0.0;
        for i in 0..n {
            let eta = eta_of(row(i), beta);
            // log(1+e^eta) - y*eta, computed stably
            let log1pe = if eta > 0.0 { eta + (-eta).exp().ln_1p() } else { eta.exp().ln_1p() };
            nll += s[i] * (log1pe - y[i] * eta);
        }
        let mut pen = 0.0;
        for j in 0..d {
            pen += beta[j] * beta[j];
        }
        nll / total_weight + 0.5 * lambda * pen
    };

    let gradient = |beta: &DVector<f64>| -> DVector<f64> {
        let mut g = DVector::<f64>::zeros(p_dim);
        for i in 0..n {
            let p = sigmoid(eta_of(row(i), beta));
            let r = s[i] * (p - y[i]);
            for (j, &xij) in row(i).iter().enumerate() {
                g[j] += r * xij;
            }
            g[d] += r;
        }
        g /= total_weight;
        for j in 0..d {
            g[j] += lambda * beta[j];
        }
        g
    };

    let mut converged = false;
    let mut iterations_used = 0;
    let mut obj = objective(&beta);
    for iter in 1..=config.max_iter {
        iterations_used = iter;
        let g = gradient(&beta);
        if g.norm() <= config.tol {
            converged = true;
            iterations_used = iter - 1;
            break;
        }
        // Newton system from the IRLS working response
        let mut a = DMatrix::<f64>::zeros(p_dim, p_dim);
        let mut b = DVector::<f64>::zeros(p_dim);
        for i in 0..n {
            let eta = eta_of(row(i), &beta);
            let p = sigmoid(eta);
            let w_irls = (p * (1.0 - p)).max(IRLS_WEIGHT_FLOOR);
            let w = s[i] * w_irls / total_weight;
            let z = eta + (y[i] - p) / w_irls;
            let xi = row(i);
            for j in 0..d {
                let wx = w * xi[j];
                for k in j..d {
                    a[(j, k)] += wx * xi[k];
                }
                a[(j, d)] += wx;
                b[j] += wx * z;
            }
            a[(d, d)] += w;
            b[d] += w * z;
        }
        for j in 0..p_dim {
            for k in 0..j {
                a[(j, k)] = a[(k, j)];
            }
        }
        for j in 0..d {
            a[(j, j)] += lambda;
        }
        let candidate = match a.clone().cholesky() {
            Some(chol) => chol.solve(&b),
            None => a
                .lu()
                .solve(&b)
                .ok_or_else(|| Error::Fit("singular IRLS system".into()))?,
        };
        // step halving toward the Newton point keeps the objective non-increasing
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..50 {
            let trial = &beta * (1.0 - step) + &candidate * step;
            let trial_obj = objective(&trial);
            if trial_obj <= obj + 1e-15 {
                beta = trial;
                obj = trial_obj;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break; // no descent possible at machine precision
        }
    }
    if !converged && gradient(&beta).norm() <= config.tol {
        converged = true;
    }

    Ok(FittedLogit {
        weights: (0..d).map(|j| beta[j]).collect(),
        intercept: beta[d],
        standardization,
        prob_clamp_eps: config.prob_clamp_eps,
        converged,
        iterations_used,
    })
}

fn eta_of(xi: &[f64], beta: &DVector<f64>) -> f64 {
    let d = xi.len();
    let mut eta = beta[d];
    for (j, &x) in xi.iter().enumerate() {
        eta += beta[j] * x;
    }
    eta
}

fn column_standardization(x: &Matrix) -> Vec<(f64, f64)> {
    let n = x.n_rows() as f64;
    (0..x.n_cols())
        .map(|j| {
            let mean = x.column(j).sum::<f64>() / n;
            let var = x.column(j).map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let std = var.sqrt();
            (mean, if std < STD_FLOOR { 1.0 } else { std })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Matrix;
    use crate::rng::stream_rng;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn dataset_from(
        x: Vec<Vec<f64>>,
        w: Vec<u8>,
        y: Vec<Option<u8>>,
    ) -> ObservationalDataset {
        let d = x[0].len();
        ObservationalDataset::new(
            Matrix::from_rows(x).unwrap(),
            w,
            y,
            (0..d).map(|j| format!("x{j}")).collect(),
        )
        .unwrap()
    }

    #[test]
    fn propensity_on_random_labels_predicts_base_rate() {
        let mut rng = stream_rng(11, 0);
        let n = 10_000;
        let mut rows = Vec::with_capacity(n);
        let mut w = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            rows.push(vec![
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            ]);
            let t = if rng.gen_bool(0.3) { 1u8 } else { 0 };
            w.push(t);
            y.push(if t == 0 { Some(0) } else { None });
        }
        let treated_frac = w.iter().filter(|&&v| v == 1).count() as f64 / n as f64;
        let ds = dataset_from(rows, w, y);
        let model = fit_propensity(&ds, &FitConfig::default()).unwrap();
        let scores = model.scores(ds.covariates());
        let mean: f64 = scores.iter().sum::<f64>() / n as f64;
        assert!((mean - treated_frac).abs() < 0.03, "mean {mean} vs {treated_frac}");
    }

    #[test]
    fn propensity_monotone_in_single_separating_feature() {
        let mut rng = stream_rng(12, 0);
        let n = 10_000;
        let mut rows = Vec::new();
        let mut w = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let x: f64 = StandardNormal.sample(&mut rng);
            rows.push(vec![x]);
            let t = if x > 0.0 { 1u8 } else { 0 };
            w.push(t);
            y.push(if t == 0 { Some(0) } else { None });
        }
        let ds = dataset_from(rows, w, y);
        let model = fit_propensity(&ds, &FitConfig::default()).unwrap();
        assert!(model.weights()[0] > 0.0);
        assert!(model.predict(&[-1.0]) < model.predict(&[0.0]));
        assert!(model.predict(&[0.0]) < model.predict(&[1.0]));
    }

    #[test]
    fn propensity_all_treated_errors() {
        let ds = dataset_from(
            vec![vec![0.0], vec![1.0]],
            vec![1, 1],
            vec![None, None],
        );
        assert!(fit_propensity(&ds, &FitConfig::default()).is_err());
    }

    #[test]
    fn outcome_fit_recovers_separable_threshold() {
        let mut rng = stream_rng(13, 0);
        let n = 10_000;
        let mut rows = Vec::new();
        let mut w = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let x: f64 = StandardNormal.sample(&mut rng);
            rows.push(vec![x]);
            // keep a handful treated so the dataset is valid for estimation ops
            let t = if i % 100 == 0 { 1u8 } else { 0 };
            w.push(t);
            y.push(if t == 0 { Some(u8::from(x > 0.0)) } else { None });
        }
        let ds = dataset_from(rows, w, y);
        let model = fit_outcome(&ds, None, &FitConfig::default()).unwrap();
        let untreated = ds.untreated_indices();
        let correct = untreated
            .iter()
            .filter(|&&i| {
                let pred = model.predict(ds.covariates().row(i)) > 0.5;
                pred == (ds.covariates().get(i, 0) > 0.0)
            })
            .count();
        let acc = correct as f64 / untreated.len() as f64;
        assert!(acc > 0.95, "accuracy {acc}");
    }

    #[test]
    fn uniform_weights_match_unweighted_fit() {
        let mut rng = stream_rng(14, 0);
        let n = 500;
        let mut rows = Vec::new();
        let mut w = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let x: f64 = StandardNormal.sample(&mut rng);
            rows.push(vec![x, StandardNormal.sample(&mut rng)]);
            let t = u8::from(i % 10 == 0);
            w.push(t);
            y.push(if t == 0 { Some(u8::from(rng.gen_bool(sigmoid(x)))) } else { None });
        }
        let ds = dataset_from(rows, w, y);
        let base = fit_outcome(&ds, None, &FitConfig::default()).unwrap();
        let weights = vec![7.5; ds.n_untreated()];
        let scaled = fit_outcome(&ds, Some(&weights), &FitConfig::default()).unwrap();
        for (a, b) in base.weights().iter().zip(scaled.weights()) {
            assert_relative_eq!(a, b, epsilon = 1e-8);
        }
        assert_relative_eq!(base.intercept(), scaled.intercept(), epsilon = 1e-8);
    }

    #[test]
    fn concentrated_weights_match_subsample_fit() {
        let mut rng = stream_rng(15, 0);
        let n = 400;
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let x: f64 = StandardNormal.sample(&mut rng);
            rows.push(vec![x]);
            labels.push(f64::from(u8::from(rng.gen_bool(sigmoid(1.5 * x)))));
        }
        let x = Matrix::from_rows(rows.clone()).unwrap();
        // nearly all mass on the first half
        let mut weights = vec![1e-9; n];
        for w in weights.iter_mut().take(n / 2) {
            *w = 1.0;
        }
        let full = fit_logit(&x, &labels, Some(&weights), &FitConfig::default()).unwrap();
        let x_sub = Matrix::from_rows(rows[..n / 2].to_vec()).unwrap();
        let sub = fit_logit(&x_sub, &labels[..n / 2], None, &FitConfig::default()).unwrap();
        let (raw_full, b_full) = full.raw_coefficients();
        let (raw_sub, b_sub) = sub.raw_coefficients();
        assert_relative_eq!(raw_full[0], raw_sub[0], max_relative = 1e-3);
        assert!((b_full - b_sub).abs() < 1e-2);
    }

    #[test]
    fn degenerate_outcome_labels_error() {
        let ds = dataset_from(
            vec![vec![0.0], vec![1.0], vec![2.0]],
            vec![0, 0, 1],
            vec![Some(0), Some(0), None],
        );
        assert!(fit_outcome(&ds, None, &FitConfig::default()).is_err());
    }

    #[test]
    fn nonpositive_weight_errors() {
        let ds = dataset_from(
            vec![vec![0.0], vec![1.0], vec![2.0]],
            vec![0, 0, 1],
            vec![Some(0), Some(1), None],
        );
        assert!(fit_outcome(&ds, Some(&[1.0, f64::INFINITY]), &FitConfig::default()).is_err());
        assert!(fit_outcome(&ds, Some(&[1.0, 0.0]), &FitConfig::default()).is_err());
    }

    #[test]
    fn predictions_clamped_into_open_interval() {
        // perfectly separated labels drive probabilities to the clamp bounds
        let x = Matrix::from_rows((0..40).map(|i| vec![i as f64 - 20.0]).collect()).unwrap();
        let y: Vec<f64> = (0..40).map(|i| f64::from(u8::from(i >= 20))).collect();
        let model = fit_logit(&x, &y, None, &FitConfig::default()).unwrap();
        let eps = FitConfig::default().prob_clamp_eps;
        for p in model.scores(&x) {
            assert!(p >= eps && p <= 1.0 - eps);
        }
    }

    #[test]
    fn gradient_norm_below_tol_when_converged() {
        let mut rng = stream_rng(16, 0);
        let n = 2000;
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let x: f64 = StandardNormal.sample(&mut rng);
            rows.push(vec![x]);
            y.push(f64::from(u8::from(rng.gen_bool(sigmoid(0.7 * x - 0.2)))));
        }
        let x = Matrix::from_rows(rows).unwrap();
        let config = FitConfig::default();
        let model = fit_logit(&x, &y, None, &config).unwrap();
        assert!(model.converged, "IRLS did not converge in {} iters", model.iterations_used);
    }

    #[test]
    fn predictions_invariant_under_feature_rescaling() {
        let mut rng = stream_rng(17, 0);
        let n = 1000;
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            rows.push(vec![a, b]);
            y.push(f64::from(u8::from(rng.gen_bool(sigmoid(a - 0.5 * b)))));
        }
        let x = Matrix::from_rows(rows.clone()).unwrap();
        let scaled_rows: Vec<Vec<f64>> =
            rows.iter().map(|r| vec![r[0] * 1000.0 + 3.0, r[1]]).collect();
        let x_scaled = Matrix::from_rows(scaled_rows.clone()).unwrap();
        let m1 = fit_logit(&x, &y, None, &FitConfig::default()).unwrap();
        let m2 = fit_logit(&x_scaled, &y, None, &FitConfig::default()).unwrap();
        for (r1, r2) in rows.iter().zip(&scaled_rows) {
            assert!((m1.predict(r1) - m2.predict(r2)).abs() < 1e-8);
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let x = Matrix::from_rows(vec![vec![0.1], vec![0.9], vec![-0.4], vec![1.3]]).unwrap();
        let y = vec![0.0, 1.0, 0.0, 1.0];
        let a = fit_logit(&x, &y, None, &FitConfig::default()).unwrap();
        let b = fit_logit(&x, &y, None, &FitConfig::default()).unwrap();
        assert_eq!(a, b);
    }
}
