//! One-way ANOVA F-statistic feature ranking for a binary label.

use crate::dataset::Matrix;
use crate::error::{Error, Result};

/// F-statistic per feature for the two label groups. A feature with zero
/// within-group variance but distinct group means gets +infinity; a fully
/// constant feature gets 0.
pub fn anova_f_statistics(features: &Matrix, labels: &[u8]) -> Result<Vec<f64>> {
    let n = features.n_rows();
    if labels.len() != n {
        return Err(Error::InvalidDataset("label length mismatch".into()));
    }
    let n1 = labels.iter().filter(|&&c| c == 1).count();
    let n0 = n - n1;
    if n0 == 0 || n1 == 0 {
        return Err(Error::InvalidDataset("both classes must be present".into()));
    }
    let d = features.n_cols();
    let mut f = Vec::with_capacity(d);
    for j in 0..d {
        let mut sum = [0.0f64; 2];
        for (i, &c) in labels.iter().enumerate() {
            sum[c as usize] += features.get(i, j);
        }
        let mean0 = sum[0] / n0 as f64;
        let mean1 = sum[1] / n1 as f64;
        let grand = (sum[0] + sum[1]) / n as f64;
        let ss_between =
            n0 as f64 * (mean0 - grand).powi(2) + n1 as f64 * (mean1 - grand).powi(2);
        let mut ss_within = 0.0;
        for (i, &c) in labels.iter().enumerate() {
            let mean = if c == 0 { mean0 } else { mean1 };
            let diff = features.get(i, j) - mean;
            ss_within += diff * diff;
        }
        let ms_between = ss_between; // df_between = 1 for two groups
        let stat = if n > 2 && ss_within > 0.0 {
            ms_between / (ss_within / (n - 2) as f64)
        } else if ss_between > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        f.push(stat);
    }
    Ok(f)
}

/// Indices of the k features with the largest F, in descending F order;
/// ties broken toward the lower index.
pub fn anova_select(features: &Matrix, labels: &[u8], k: usize) -> Result<Vec<usize>> {
    let d = features.n_cols();
    if k > d {
        return Err(Error::InvalidConfig(format!("k = {k} exceeds feature count {d}")));
    }
    let f = anova_f_statistics(features, labels)?;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        f[b].partial_cmp(&f[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    order.truncate(k);
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand::Rng;
    use rand_distr::{Distribution, Normal, StandardNormal};

    #[test]
    fn informative_feature_selected() {
        let mut rng = stream_rng(31, 0);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..200 {
            let c = (i % 2) as u8;
            rows.push(vec![c as f64 + noise.sample(&mut rng), StandardNormal.sample(&mut rng)]);
            labels.push(c);
        }
        let x = Matrix::from_rows(rows).unwrap();
        assert_eq!(anova_select(&x, &labels, 1).unwrap(), vec![0]);
    }

    #[test]
    fn k_equals_d_returns_permutation() {
        let mut rng = stream_rng(32, 0);
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..4).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let labels: Vec<u8> = (0..50).map(|i| (i % 2) as u8).collect();
        let mut selected = anova_select(&Matrix::from_rows(rows).unwrap(), &labels, 4).unwrap();
        selected.sort_unstable();
        assert_eq!(selected, vec![0, 1, 2, 3]);
    }

    #[test]
    fn ties_break_toward_lower_index() {
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let v = (i % 2) as f64 + (i as f64) * 0.01;
                vec![v, v]
            })
            .collect();
        let labels: Vec<u8> = (0..20).map(|i| (i % 2) as u8).collect();
        let selected = anova_select(&Matrix::from_rows(rows).unwrap(), &labels, 1).unwrap();
        assert_eq!(selected, vec![0]);
    }

    #[test]
    fn perfectly_separating_feature_ranks_first() {
        // feature 1 is constant within each class, distinct between classes
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![(i as f64).sin(), (i % 2) as f64])
            .collect();
        let labels: Vec<u8> = (0..20).map(|i| (i % 2) as u8).collect();
        let x = Matrix::from_rows(rows).unwrap();
        let f = anova_f_statistics(&x, &labels).unwrap();
        assert!(f[1].is_infinite());
        assert_eq!(anova_select(&x, &labels, 1).unwrap(), vec![1]);
    }

    #[test]
    fn scale_invariance_of_selection() {
        let mut rng = stream_rng(33, 0);
        let rows: Vec<Vec<f64>> = (0..100)
            .map(|i| {
                let c = (i % 2) as f64;
                vec![
                    c + rng.sample::<f64, _>(StandardNormal),
                    StandardNormal.sample(&mut rng),
                    0.3 * c + rng.sample::<f64, _>(StandardNormal),
                ]
            })
            .collect();
        let labels: Vec<u8> = (0..100).map(|i| (i % 2) as u8).collect();
        let x = Matrix::from_rows(rows.clone()).unwrap();
        let scaled: Vec<Vec<f64>> =
            rows.iter().map(|r| vec![r[0], r[1] * 250.0, r[2]]).collect();
        let xs = Matrix::from_rows(scaled).unwrap();
        assert_eq!(
            anova_select(&x, &labels, 2).unwrap(),
            anova_select(&xs, &labels, 2).unwrap()
        );
    }
}
