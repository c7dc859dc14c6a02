//! Evaluation metrics: exact Wasserstein-1 distance between weighted point
//! sets, weighted per-attribute statistics and their absolute errors.

mod transport;

pub use transport::{solve_transport, TransportSolution};

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::RecordMatrix;
use crate::error::{Error, Result};
use crate::server::WeightedDataset;

/// Finite support with probability masses.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    points: RecordMatrix,
    masses: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(points: RecordMatrix, masses: Vec<f64>) -> Result<Self> {
        if masses.len() != points.n_rows() {
            return Err(Error::DimensionMismatch {
                expected: points.n_rows(),
                got: masses.len(),
            });
        }
        if masses.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter(
                "masses must be finite and non-negative".into(),
            ));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("masses sum to {total}")));
        }
        Ok(Self { points, masses })
    }

    /// Rescales arbitrary non-negative weights to sum to one.
    pub fn from_weights(points: RecordMatrix, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::EmptyEstimate);
        }
        Self::new(points, weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(points: RecordMatrix) -> Self {
        let n = points.n_rows();
        Self {
            points,
            masses: vec![1.0 / n as f64; n],
        }
    }

    pub fn points(&self) -> &RecordMatrix {
        &self.points
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn dim(&self) -> usize {
        self.points.n_cols()
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    /// Merges identical support points and drops zero-mass ones. Points keep
    /// their first-appearance order.
    pub fn merged(&self) -> Result<Self> {
        let mut slot: HashMap<Vec<u64>, usize> = HashMap::with_capacity(self.len());
        let mut values = Vec::new();
        let mut masses: Vec<f64> = Vec::new();
        for (i, row) in self.points.rows().enumerate() {
            if !(self.masses[i] > 0.0) {
                continue;
            }
            // -0.0 and 0.0 are the same point.
            let key = row
                .iter()
                .map(|&x| if x == 0.0 { 0 } else { x.to_bits() })
                .collect();
            match slot.get(&key) {
                Some(&k) => masses[k] += self.masses[i],
                None => {
                    slot.insert(key, masses.len());
                    values.extend_from_slice(row);
                    masses.push(self.masses[i]);
                }
            }
        }
        Self::from_weights(
            RecordMatrix::new(values, self.points.feature_names().to_vec())?,
            masses,
        )
    }

    /// At most `max_points` support points chosen uniformly without
    /// replacement, masses renormalized.
    pub fn subsample<R: Rng + ?Sized>(&self, max_points: usize, rng: &mut R) -> Result<Self> {
        if self.len() <= max_points {
            return Ok(self.clone());
        }
        let mut picked = rand::seq::index::sample(rng, self.len(), max_points).into_vec();
        picked.sort_unstable();
        let weights = picked.iter().map(|&i| self.masses[i]).collect();
        Self::from_weights(self.points.select_rows(&picked)?, weights)
    }
}

impl From<WeightedDataset> for DiscreteDistribution {
    fn from(w: WeightedDataset) -> Self {
        Self {
            points: w.records,
            masses: w.masses,
        }
    }
}

/// Convex combination of distributions over a common schema.
pub fn mixture(parts: &[(f64, &DiscreteDistribution)]) -> Result<DiscreteDistribution> {
    let (_, first) = parts.first().ok_or(Error::EmptyResult)?;
    let mut points = first.points.clone();
    let mut weights: Vec<f64> = Vec::new();
    for (idx, (w, d)) in parts.iter().enumerate() {
        if idx > 0 {
            points = points.vstack(&d.points)?;
        }
        weights.extend(d.masses.iter().map(|m| w * m));
    }
    DiscreteDistribution::from_weights(points, weights)
}

/// Participants and an estimated non-participant distribution combined in
/// proportion `n1 : n0`.
pub fn compose_entire(
    participants: &RecordMatrix,
    non_participant: &DiscreteDistribution,
    n0: usize,
) -> Result<DiscreteDistribution> {
    let n1 = participants.n_rows() as f64;
    let total = n1 + n0 as f64;
    mixture(&[
        (
            n1 / total,
            &DiscreteDistribution::uniform(participants.clone()),
        ),
        (n0 as f64 / total, non_participant),
    ])
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Exact Wasserstein-1 distance with Euclidean ground cost.
pub fn wasserstein1(a: &DiscreteDistribution, b: &DiscreteDistribution) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let (a, b) = (a.merged()?, b.merged()?);
    let mut cost = Vec::with_capacity(a.len() * b.len());
    for p in a.points.rows() {
        cost.extend(b.points.rows().map(|q| euclidean(p, q)));
    }
    let plan = solve_transport(&a.masses, &b.masses, &cost)?;
    log::trace!("W1 {}×{} in {} pivots", a.len(), b.len(), plan.pivots);
    Ok(plan.cost)
}

pub fn weighted_mean(d: &DiscreteDistribution) -> Vec<f64> {
    let mut mean = vec![0.0; d.dim()];
    for (row, w) in d.points.rows().zip(&d.masses) {
        mean.iter_mut().zip(row).for_each(|(m, x)| *m += w * x);
    }
    mean
}

/// Population form: `Σ w_i (x_i − mean)²`.
pub fn weighted_variance(d: &DiscreteDistribution) -> Vec<f64> {
    let mean = weighted_mean(d);
    let mut var = vec![0.0; d.dim()];
    for (row, w) in d.points.rows().zip(&d.masses) {
        var.iter_mut()
            .zip(row.iter().zip(&mean))
            .for_each(|(v, (x, m))| *v += w * (x - m) * (x - m));
    }
    var
}

/// Smallest value whose cumulative weight reaches half the total.
pub fn lower_weighted_median(values: &[f64], weights: &[f64]) -> f64 {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let total: f64 = weights.iter().sum();
    let half = 0.5 * total * (1.0 - 1e-12);
    let mut acc = 0.0;
    for &i in &order {
        acc += weights[i];
        if acc >= half && weights[i] > 0.0 {
            return values[i];
        }
    }
    order.last().map_or(f64::NAN, |&i| values[i])
}

pub fn weighted_median(d: &DiscreteDistribution) -> Vec<f64> {
    (0..d.dim())
        .map(|j| {
            let col: Vec<f64> = d.points.column(j).collect();
            lower_weighted_median(&col, &d.masses)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Mean,
    Variance,
    Median,
}

impl Statistic {
    pub const ALL: [Statistic; 3] = [Statistic::Mean, Statistic::Variance, Statistic::Median];

    pub fn name(self) -> &'static str {
        match self {
            Statistic::Mean => "mean",
            Statistic::Variance => "variance",
            Statistic::Median => "median",
        }
    }
}

/// Per-attribute summary statistics of a distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub median: Vec<f64>,
}

impl StatReport {
    pub fn of(d: &DiscreteDistribution) -> Self {
        Self {
            mean: weighted_mean(d),
            variance: weighted_variance(d),
            median: weighted_median(d),
        }
    }

    pub fn get(&self, stat: Statistic) -> &[f64] {
        match stat {
            Statistic::Mean => &self.mean,
            Statistic::Variance => &self.variance,
            Statistic::Median => &self.median,
        }
    }

    /// Per-attribute MAE of every statistic against `truth`.
    pub fn errors(&self, truth: &StatReport) -> Result<StatErrors> {
        Ok(StatErrors {
            mean: mae_per_attribute(&self.mean, &truth.mean)?,
            variance: mae_per_attribute(&self.variance, &truth.variance)?,
            median: mae_per_attribute(&self.median, &truth.median)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatErrors {
    pub mean: f64,
    pub variance: f64,
    pub median: f64,
}

impl StatErrors {
    pub fn get(&self, stat: Statistic) -> f64 {
        match stat {
            Statistic::Mean => self.mean,
            Statistic::Variance => self.variance,
            Statistic::Median => self.median,
        }
    }
}

/// `Σ_j |est_j − truth_j| / m`.
pub fn mae_per_attribute(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    if estimate.len() != truth.len() || truth.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: estimate.len(),
        });
    }
    Ok(estimate
        .iter()
        .zip(truth)
        .map(|(e, t)| (e - t).abs())
        .sum::<f64>()
        / truth.len() as f64)
}

/// Participant data taken at face value.
pub fn naive_estimate(x1: &RecordMatrix) -> DiscreteDistribution {
    DiscreteDistribution::uniform(x1.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(rows: &[Vec<f64>], w: &[f64]) -> DiscreteDistribution {
        DiscreteDistribution::new(RecordMatrix::from_rows(rows).unwrap(), w.to_vec()).unwrap()
    }

    #[test]
    fn identical_distributions_are_at_distance_zero() {
        let a = dist(&[vec![0.0, 1.0], vec![2.0, 3.0]], &[0.3, 0.7]);
        assert!(wasserstein1(&a, &a).unwrap().abs() < 1e-15);
    }

    #[test]
    fn point_masses_are_euclidean() {
        let a = dist(&[vec![0.0, 0.0]], &[1.0]);
        let b = dist(&[vec![3.0, 4.0]], &[1.0]);
        assert!((wasserstein1(&a, &b).unwrap() - 5.0).abs() < 1e-15);
    }

    #[test]
    fn two_point_uniform_versus_midpoint() {
        let a = dist(&[vec![0.0], vec![1.0]], &[0.5, 0.5]);
        let b = dist(&[vec![0.5]], &[1.0]);
        assert!((wasserstein1(&a, &b).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn duplicates_merge() {
        let a = dist(&[vec![1.0], vec![1.0], vec![2.0]], &[0.25, 0.25, 0.5]);
        let b = dist(&[vec![2.0], vec![1.0]], &[0.5, 0.5]);
        assert!(wasserstein1(&a, &b).unwrap().abs() < 1e-15);
        assert_eq!(a.merged().unwrap().len(), 2);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = dist(&[vec![1.0]], &[1.0]);
        let b = dist(&[vec![1.0, 2.0]], &[1.0]);
        assert!(wasserstein1(&a, &b).is_err());
    }

    #[test]
    fn uniform_statistics() {
        let d = DiscreteDistribution::uniform(
            RecordMatrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap(),
        );
        let s = StatReport::of(&d);
        assert!((s.mean[0] - 2.0).abs() < 1e-15);
        assert!((s.variance[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.median[0], 2.0);
    }

    #[test]
    fn skewed_weights() {
        let d = dist(&[vec![0.0], vec![10.0]], &[0.9, 0.1]);
        assert!((weighted_mean(&d)[0] - 1.0).abs() < 1e-15);
        assert_eq!(weighted_median(&d)[0], 0.0);
    }

    #[test]
    fn lower_median_on_even_split() {
        assert_eq!(
            lower_weighted_median(&[4.0, 1.0, 3.0, 2.0], &[0.25; 4]),
            2.0
        );
    }

    #[test]
    fn mae_examples() {
        assert_eq!(mae_per_attribute(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((mae_per_attribute(&[0.1, 0.7], &[0.0, 0.4]).unwrap() - 0.2).abs() < 1e-15);
        assert!(mae_per_attribute(&[0.1], &[0.0, 0.4]).is_err());
    }

    #[test]
    fn mae_on_unit_range_is_twice_relative_error() {
        // on a feature range of width 2, an absolute error of δ is a relative
        // error of δ/2 of the range
        let truth = [0.2, -0.5, 0.9];
        let rel = [0.01, 0.03, 0.05];
        let est: Vec<f64> = truth.iter().zip(&rel).map(|(t, r)| t + 2.0 * r).collect();
        let mean_rel = rel.iter().sum::<f64>() / 3.0;
        assert!((mae_per_attribute(&est, &truth).unwrap() - 2.0 * mean_rel).abs() < 1e-15);
    }

    #[test]
    fn naive_is_uniform() {
        let x = RecordMatrix::from_rows(&[vec![1.0], vec![5.0], vec![2.0], vec![0.0]]).unwrap();
        let d = naive_estimate(&x);
        assert_eq!(d.masses(), &[0.25; 4]);
        let s = StatReport::of(&d);
        assert!((s.mean[0] - 2.0).abs() < 1e-15);
        assert_eq!(s.median[0], 1.0);
    }

    #[test]
    fn compose_entire_weights_by_counts() {
        let x1 = RecordMatrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let est = dist(&[vec![5.0]], &[1.0]);
        let e = compose_entire(&x1, &est, 2).unwrap();
        assert_eq!(e.masses(), &[0.25, 0.25, 0.5]);
    }

    #[test]
    fn subsample_caps_support() {
        let x =
            RecordMatrix::from_rows(&(0..100).map(|i| vec![i as f64]).collect::<Vec<_>>()).unwrap();
        let d = naive_estimate(&x);
        let mut r = crate::rng::stream(1, 0);
        let s = d.subsample(10, &mut r).unwrap();
        assert_eq!(s.len(), 10);
        assert!((s.masses().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
