//! Gaussian Naive Bayes, used as the mock blocking policy in the empirical
//! study. Scores are computed in log space and variances are floored.

use crate::dataset::Matrix;
use crate::error::{Error, Result};

const RELATIVE_VAR_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct FittedGNB {
    class_priors: [f64; 2],
    /// class x feature
    means: [Vec<f64>; 2],
    variances: [Vec<f64>; 2],
    variance_floor: f64,
}

impl FittedGNB {
    pub fn class_priors(&self) -> [f64; 2] {
        self.class_priors
    }

    pub fn variance_floor(&self) -> f64 {
        self.variance_floor
    }

    pub fn means(&self, class: usize) -> &[f64] {
        &self.means[class]
    }

    pub fn variances(&self, class: usize) -> &[f64] {
        &self.variances[class]
    }

    /// P(class = 1 | x).
    pub fn score(&self, row: &[f64]) -> f64 {
        let log_joint = |class: usize| -> f64 {
            let mut lp = self.class_priors[class].ln();
            for ((&x, &mean), &var) in
                row.iter().zip(&self.means[class]).zip(&self.variances[class])
            {
                let diff = x - mean;
                lp -= 0.5 * ((2.0 * std::f64::consts::PI * var).ln() + diff * diff / var);
            }
            lp
        };
        let l0 = log_joint(0);
        let l1 = log_joint(1);
        let m = l0.max(l1);
        let e0 = (l0 - m).exp();
        let e1 = (l1 - m).exp();
        e1 / (e0 + e1)
    }

    pub fn scores(&self, x: &Matrix) -> Vec<f64> {
        (0..x.n_rows()).map(|i| self.score(x.row(i))).collect()
    }
}

/// Fits a two-class Gaussian NB with empirical priors.
pub fn fit_gnb(features: &Matrix, labels: &[u8]) -> Result<FittedGNB> {
    let n = features.n_rows();
    let d = features.n_cols();
    if labels.len() != n {
        return Err(Error::Fit("label length mismatch".into()));
    }
    let counts = [
        labels.iter().filter(|&&c| c == 0).count(),
        labels.iter().filter(|&&c| c == 1).count(),
    ];
    if counts[0] < 2 || counts[1] < 2 {
        return Err(Error::Fit(format!(
            "need >= 2 rows per class, got {} / {}",
            counts[0], counts[1]
        )));
    }

    let mut means = [vec![0.0; d], vec![0.0; d]];
    let mut variances = [vec![0.0; d], vec![0.0; d]];
    for (i, &c) in labels.iter().enumerate() {
        for (j, &x) in features.row(i).iter().enumerate() {
            means[c as usize][j] += x;
        }
    }
    for c in 0..2 {
        for j in 0..d {
            means[c][j] /= counts[c] as f64;
        }
    }
    for (i, &c) in labels.iter().enumerate() {
        for (j, &x) in features.row(i).iter().enumerate() {
            let diff = x - means[c as usize][j];
            variances[c as usize][j] += diff * diff;
        }
    }
    for c in 0..2 {
        for j in 0..d {
            variances[c][j] /= counts[c] as f64;
        }
    }

    // floor relative to the largest per-feature total variance
    let mut max_total_var = 0.0f64;
    for j in 0..d {
        let grand = features.column(j).sum::<f64>() / n as f64;
        let var = features.column(j).map(|v| (v - grand) * (v - grand)).sum::<f64>() / n as f64;
        max_total_var = max_total_var.max(var);
    }
    let variance_floor = if max_total_var > 0.0 {
        RELATIVE_VAR_FLOOR * max_total_var
    } else {
        RELATIVE_VAR_FLOOR
    };
    for c in 0..2 {
        for v in variances[c].iter_mut() {
            if *v < variance_floor {
                *v = variance_floor;
            }
        }
    }

    Ok(FittedGNB {
        class_priors: [counts[0] as f64 / n as f64, counts[1] as f64 / n as f64],
        means,
        variances,
        variance_floor,
    })
}
