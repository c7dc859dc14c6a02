use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::RecordMatrix;
use crate::error::{Error, Result};

/// Eigenvalues below this fraction of the largest count as zero variance.
const RANK_TOL: f64 = 1e-12;

/// Linear projection onto the leading principal directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `q` orthonormal rows of length `m`.
    pub components: Vec<Vec<f64>>,
    pub explained_variance_ratio: Vec<f64>,
}

impl PcaModel {
    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn project(&self, record: &[f64]) -> Result<Vec<f64>> {
        if record.len() != self.n_features() {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                got: record.len(),
            });
        }
        Ok(self
            .components
            .iter()
            .map(|c| {
                c.iter()
                    .zip(record)
                    .zip(&self.mean)
                    .map(|((w, x), mu)| w * (x - mu))
                    .sum()
            })
            .collect())
    }

    pub fn project_matrix(&self, x: &RecordMatrix) -> Result<RecordMatrix> {
        let mut values = Vec::with_capacity(x.n_rows() * self.n_components());
        for row in x.rows() {
            values.extend(self.project(row)?);
        }
        let names = (1..=self.n_components())
            .map(|j| format!("pc{j}"))
            .collect();
        RecordMatrix::new(values, names)
    }

    /// Maps projected coordinates back to feature space.
    pub fn reconstruct(&self, projected: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, &y) in self.components.iter().zip(projected) {
            for (o, w) in out.iter_mut().zip(c) {
                *o += w * y;
            }
        }
        out
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let m = self.n_features();
        if m == 0 || self.components.is_empty() {
            return Err(Error::MalformedModel("empty PCA".into()));
        }
        if self.components.iter().any(|c| c.len() != m) {
            return Err(Error::MalformedModel(
                "PCA component length differs from mean".into(),
            ));
        }
        if self.explained_variance_ratio.len() != self.components.len() {
            return Err(Error::MalformedModel(
                "explained variance length differs from component count".into(),
            ));
        }
        Ok(())
    }
}

/// Keeps the smallest prefix of principal directions whose cumulative
/// explained-variance ratio reaches `variance_target`.
///
/// Covariance uses the `n − 1` denominator. Each direction is signed so that
/// its largest-magnitude entry is positive.
pub fn fit_pca(x: &RecordMatrix, variance_target: f64) -> Result<PcaModel> {
    if !(variance_target > 0.0 && variance_target <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "variance target {variance_target} not in (0, 1]"
        )));
    }
    let n = x.n_rows();
    if n < 2 {
        return Err(Error::InvalidParameter(
            "PCA needs at least two records".into(),
        ));
    }
    let m = x.n_cols();
    let data = x.to_dmatrix();
    let mean: Vec<f64> = (0..m).map(|j| data.column(j).mean()).collect();
    let mut centered = data;
    for (j, mu) in mean.iter().enumerate() {
        centered.column_mut(j).add_scalar_mut(-mu);
    }
    let cov: DMatrix<f64> = centered.tr_mul(&centered) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let largest = eig.eigenvalues[order[0]];
    if !(largest > 0.0) {
        return Err(Error::DegenerateData);
    }
    let positive: Vec<usize> = order
        .into_iter()
        .filter(|&i| eig.eigenvalues[i] > RANK_TOL * largest)
        .collect();
    let total: f64 = positive.iter().map(|&i| eig.eigenvalues[i]).sum();

    let mut components = Vec::new();
    let mut ratios = Vec::new();
    let mut cumulative = 0.0;
    for &i in &positive {
        let ratio = eig.eigenvalues[i] / total;
        let mut dir: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
        let pivot = dir
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(1.0);
        if pivot < 0.0 {
            dir.iter_mut().for_each(|v| *v = -*v);
        }
        components.push(dir);
        ratios.push(ratio);
        cumulative += ratio;
        if cumulative >= variance_target - 1e-12 {
            break;
        }
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance_ratio: ratios,
    })
}

/// Number of leading directions needed to reach `target` given ratios sorted
/// in decreasing order.
pub fn components_for_target(ratios: &[f64], target: f64) -> usize {
    let mut cumulative = 0.0;
    for (i, r) in ratios.iter().enumerate() {
        cumulative += r;
        if cumulative >= target - 1e-12 {
            return i + 1;
        }
    }
    ratios.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    use crate::rng;

    fn random_matrix(n: usize, m: usize, seed: u64) -> RecordMatrix {
        let mut r = rng::stream(seed, 0);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..m)
                    .map(|j| r.random_range(-1.0..1.0) * (j + 1) as f64)
                    .collect()
            })
            .collect();
        RecordMatrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn prefix_rule_picks_smallest_sufficient_prefix() {
        assert_eq!(components_for_target(&[0.6, 0.25, 0.10, 0.05], 0.8), 2);
        assert_eq!(components_for_target(&[0.6, 0.25, 0.10, 0.05], 1.0), 4);
        assert_eq!(components_for_target(&[0.6, 0.25, 0.10, 0.05], 0.6), 1);
    }

    #[test]
    fn full_target_keeps_full_rank() {
        let x = random_matrix(200, 4, 1);
        let pca = fit_pca(&x, 1.0).unwrap();
        assert_eq!(pca.n_components(), 4);
    }

    #[test]
    fn collinear_data_has_one_direction() {
        // points on the line y = 2x; the direction is (1, 2)/√5
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let pca = fit_pca(&RecordMatrix::from_rows(&rows).unwrap(), 0.8).unwrap();
        assert_eq!(pca.n_components(), 1);
        assert!((pca.explained_variance_ratio[0] - 1.0).abs() < 1e-12);
        let s5 = 5f64.sqrt();
        assert!((pca.components[0][0] - 1.0 / s5).abs() < 1e-12);
        assert!((pca.components[0][1] - 2.0 / s5).abs() < 1e-12);
        let pca_full = fit_pca(&RecordMatrix::from_rows(&rows).unwrap(), 1.0).unwrap();
        assert_eq!(pca_full.n_components(), 1);
    }

    #[test]
    fn constant_data_is_degenerate() {
        let x = RecordMatrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        assert!(matches!(fit_pca(&x, 0.8), Err(Error::DegenerateData)));
    }

    #[test]
    fn components_are_orthonormal_and_sorted() {
        let x = random_matrix(300, 5, 2);
        let pca = fit_pca(&x, 1.0).unwrap();
        for (a, ca) in pca.components.iter().enumerate() {
            for (b, cb) in pca.components.iter().enumerate() {
                let dot: f64 = ca.iter().zip(cb).map(|(u, v)| u * v).sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-8);
            }
            let pivot = ca
                .iter()
                .copied()
                .max_by(|u, v| u.abs().total_cmp(&v.abs()))
                .unwrap();
            assert!(pivot > 0.0);
        }
        assert!(pca
            .explained_variance_ratio
            .windows(2)
            .all(|w| w[0] >= w[1]));
        assert!(pca.explained_variance_ratio.iter().all(|&r| r > 0.0));
        assert!(pca.explained_variance_ratio.iter().sum::<f64>() <= 1.0 + 1e-9);
    }

    #[test]
    fn full_reconstruction_is_exact() {
        let x = random_matrix(50, 3, 3);
        let pca = fit_pca(&x, 1.0).unwrap();
        for row in x.rows() {
            let back = pca.reconstruct(&pca.project(row).unwrap());
            for (a, b) in back.iter().zip(row) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = random_matrix(10, 2, 4);
        assert!(fit_pca(&x, 0.0).is_err());
        assert!(fit_pca(&x, 1.5).is_err());
        let one = RecordMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(fit_pca(&one, 0.8).is_err());
        let pca = fit_pca(&x, 0.8).unwrap();
        assert!(matches!(
            pca.project(&[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
