//! Full-covariance Gaussian mixtures fitted by expectation maximization.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::RecordMatrix;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    /// Stop once the relative change in log-likelihood drops below this.
    pub tol: f64,
    pub max_iter: usize,
    pub restarts: usize,
    /// Ridge added to every covariance diagonal.
    pub reg_covar: f64,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            max_iter: 200,
            restarts: 5,
            reg_covar: 1e-6,
            seed: 0,
        }
    }
}

/// Serialized parameter layout of a [`GmmModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmParams {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq)]
struct Factor {
    /// Row-major lower Cholesky factor.
    chol: Vec<f64>,
    log_norm: f64,
}

/// A fitted mixture. Cholesky factors are cached and rebuilt on deserialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GmmParams", into = "GmmParams")]
pub struct GmmModel {
    params: GmmParams,
    factors: Vec<Factor>,
}

impl From<GmmModel> for GmmParams {
    fn from(m: GmmModel) -> Self {
        m.params
    }
}

impl TryFrom<GmmParams> for GmmModel {
    type Error = Error;

    fn try_from(params: GmmParams) -> Result<Self> {
        let k = params.weights.len();
        if k == 0 || params.means.len() != k || params.covariances.len() != k {
            return Err(Error::MalformedModel(
                "mixture parameter counts disagree".into(),
            ));
        }
        let w_sum: f64 = params.weights.iter().sum();
        if params.weights.iter().any(|&w| !(w >= 0.0)) || (w_sum - 1.0).abs() > 1e-9 {
            return Err(Error::MalformedModel(
                "mixture weights are not a probability vector".into(),
            ));
        }
        let q = params.means[0].len();
        if q == 0 || params.means.iter().any(|mu| mu.len() != q) {
            return Err(Error::MalformedModel(
                "mixture means have inconsistent dimension".into(),
            ));
        }
        let factors = params
            .covariances
            .iter()
            .map(|cov| {
                if cov.len() != q || cov.iter().any(|r| r.len() != q) {
                    return Err(Error::MalformedModel(format!("covariance must be {q}×{q}")));
                }
                factorize(&DMatrix::from_fn(q, q, |i, j| cov[i][j]))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { params, factors })
    }
}

fn factorize(cov: &DMatrix<f64>) -> Result<Factor> {
    let q = cov.nrows();
    let l = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("mixture covariance".into()))?
        .l();
    let log_det: f64 = (0..q).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
    let chol = (0..q)
        .flat_map(|i| (0..q).map(move |j| (i, j)))
        .map(|(i, j)| l[(i, j)])
        .collect();
    Ok(Factor {
        chol,
        log_norm: -0.5 * (q as f64 * (2.0 * PI).ln() + log_det),
    })
}

impl Factor {
    fn log_density(&self, mean: &[f64], x: &[f64], scratch: &mut Vec<f64>) -> f64 {
        let q = mean.len();
        scratch.clear();
        let mut maha = 0.0;
        // forward substitution L z = x − μ
        for i in 0..q {
            let row = &self.chol[i * q..i * q + i];
            let partial: f64 = row.iter().zip(scratch.iter()).map(|(l, z)| l * z).sum();
            let z = (x[i] - mean[i] - partial) / self.chol[i * q + i];
            maha += z * z;
            scratch.push(z);
        }
        self.log_norm - 0.5 * maha
    }
}

impl GmmModel {
    pub fn new(params: GmmParams) -> Result<Self> {
        params.try_into()
    }

    pub fn n_components(&self) -> usize {
        self.params.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.params.means[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.params.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.params.means
    }

    pub fn covariances(&self) -> &[Vec<Vec<f64>>] {
        &self.params.covariances
    }

    pub fn params(&self) -> &GmmParams {
        &self.params
    }

    /// Writes `log π_k + log N(y | μ_k, Σ_k)` into `out` and returns the
    /// log-sum-exp over components.
    fn weighted_log_densities(&self, y: &[f64], out: &mut [f64], scratch: &mut Vec<f64>) -> f64 {
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.params.weights[k].ln()
                + self.factors[k].log_density(&self.params.means[k], y, scratch);
        }
        log_sum_exp(out)
    }

    /// Posterior component probabilities of a projected point.
    pub fn responsibilities(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: y.len(),
            });
        }
        let mut out = vec![0.0; self.n_components()];
        let lse = self.weighted_log_densities(y, &mut out, &mut Vec::with_capacity(y.len()));
        out.iter_mut().for_each(|v| *v = (*v - lse).exp());
        let s: f64 = out.iter().sum();
        out.iter_mut().for_each(|v| *v /= s);
        Ok(out)
    }

    /// Total log-likelihood of the rows of `y`.
    pub fn log_likelihood(&self, y: &RecordMatrix) -> Result<f64> {
        if y.n_cols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: y.n_cols(),
            });
        }
        let mut buf = vec![0.0; self.n_components()];
        let mut scratch = Vec::with_capacity(self.dim());
        Ok(y.rows()
            .map(|r| self.weighted_log_densities(r, &mut buf, &mut scratch))
            .sum())
    }
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Outcome of [`fit_gmm`].
#[derive(Debug, Clone)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Total log-likelihood of the returned model.
    pub log_likelihood: f64,
    /// Mean per-record log-likelihood after every EM step of the winning restart.
    pub history: Vec<f64>,
    pub converged: bool,
    pub restart: usize,
}

/// Fits a `k`-component mixture, keeping the best of `config.restarts` runs.
pub fn fit_gmm(y: &RecordMatrix, k: usize, config: &EmConfig) -> Result<GmmFit> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if k > y.n_rows() {
        return Err(Error::InvalidParameter(format!(
            "k = {k} exceeds {} records",
            y.n_rows()
        )));
    }
    if config.restarts == 0 || !(config.tol >= 0.0) || !(config.reg_covar >= 0.0) {
        return Err(Error::InvalidParameter("invalid EM configuration".into()));
    }
    let runs: Vec<Option<GmmFit>> = (0..config.restarts)
        .into_par_iter()
        .map(|r| run_em(y, k, config, r))
        .collect();
    // ties keep the earliest restart, so the choice is order independent
    runs.into_iter()
        .flatten()
        .reduce(|best, f| {
            if f.log_likelihood > best.log_likelihood {
                f
            } else {
                best
            }
        })
        .ok_or(Error::AllRestartsDegenerate)
}

/// Seeds by D²-weighted sampling, then hard-assigns points to the nearest seed.
fn initial_responsibilities<R: Rng>(y: &RecordMatrix, k: usize, rng: &mut R) -> Vec<f64> {
    let n = y.n_rows();
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>();
    let mut centers = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = y.rows().map(|r| dist2(r, y.row(centers[0]))).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in nearest.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(next);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(dist2(y.row(i), y.row(next)));
        }
    }
    let mut resp = vec![0.0; n * k];
    for (i, r) in y.rows().enumerate() {
        let best = (0..k)
            .min_by(|&a, &b| dist2(r, y.row(centers[a])).total_cmp(&dist2(r, y.row(centers[b]))))
            .unwrap_or(0);
        resp[i * k + best] = 1.0;
    }
    resp
}

fn m_step(y: &RecordMatrix, resp: &[f64], k: usize, reg: f64) -> Option<GmmModel> {
    let n = y.n_rows();
    let q = y.n_cols();
    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut covariances = Vec::with_capacity(k);
    for c in 0..k {
        let nk: f64 = (0..n).map(|i| resp[i * k + c]).sum();
        if !(nk > 10.0 * f64::EPSILON * n as f64) {
            return None;
        }
        let mut mu = vec![0.0; q];
        for (i, r) in y.rows().enumerate() {
            let w = resp[i * k + c];
            mu.iter_mut().zip(r).for_each(|(m, x)| *m += w * x);
        }
        mu.iter_mut().for_each(|m| *m /= nk);
        let mut cov = vec![vec![0.0; q]; q];
        for (i, r) in y.rows().enumerate() {
            let w = resp[i * k + c];
            if w == 0.0 {
                continue;
            }
            for a in 0..q {
                let da = r[a] - mu[a];
                for b in 0..=a {
                    cov[a][b] += w * da * (r[b] - mu[b]);
                }
            }
        }
        for a in 0..q {
            for b in 0..=a {
                cov[a][b] /= nk;
                cov[b][a] = cov[a][b];
            }
            cov[a][a] += reg;
        }
        weights.push(nk / n as f64);
        means.push(mu);
        covariances.push(cov);
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    GmmModel::new(GmmParams {
        weights,
        means,
        covariances,
    })
    .ok()
}

/// E-step: fills `resp` and returns the total log-likelihood.
fn e_step(y: &RecordMatrix, model: &GmmModel, resp: &mut [f64]) -> f64 {
    let k = model.n_components();
    let mut scratch = Vec::with_capacity(y.n_cols());
    let mut ll = 0.0;
    for (i, r) in y.rows().enumerate() {
        let slot = &mut resp[i * k..(i + 1) * k];
        let lse = model.weighted_log_densities(r, slot, &mut scratch);
        slot.iter_mut().for_each(|v| *v = (*v - lse).exp());
        ll += lse;
    }
    ll
}

fn run_em(y: &RecordMatrix, k: usize, config: &EmConfig, restart: usize) -> Option<GmmFit> {
    let n = y.n_rows() as f64;
    let mut rng = rng::stream(config.seed, restart as u64);
    let mut resp = initial_responsibilities(y, k, &mut rng);
    let mut model = m_step(y, &resp, k, config.reg_covar)?;
    let mut ll = e_step(y, &model, &mut resp);
    if !ll.is_finite() {
        return None;
    }
    let mut history = vec![ll / n];
    let mut converged = false;
    for _ in 0..config.max_iter {
        let next = m_step(y, &resp, k, config.reg_covar)?;
        let mut next_resp = vec![0.0; resp.len()];
        let next_ll = e_step(y, &next, &mut next_resp);
        if !next_ll.is_finite() {
            return None;
        }
        history.push(next_ll / n);
        let change = (next_ll - ll).abs();
        model = next;
        resp = next_resp;
        let done = change <= config.tol * ll.abs();
        ll = next_ll;
        if done {
            converged = true;
            break;
        }
    }
    Some(GmmFit {
        model,
        log_likelihood: ll,
        history,
        converged,
        restart,
    })
}

/// Interior grid point with the sharpest drop in slope of the log-likelihood
/// curve, i.e. the largest `2L(K) − L(K−1) − L(K+1)`. Ties go to the smaller K.
pub fn elbow_choice(ks: &[usize], log_likelihoods: &[f64]) -> Result<usize> {
    if ks.len() < 3 || ks.len() != log_likelihoods.len() {
        return Err(Error::InvalidParameter(
            "elbow selection needs at least three grid points".into(),
        ));
    }
    if ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter(
            "k grid must be strictly ascending".into(),
        ));
    }
    let mut best = (ks[1], f64::NEG_INFINITY);
    for i in 1..ks.len() - 1 {
        let l = log_likelihoods;
        let drop = 2.0 * l[i] - l[i - 1] - l[i + 1];
        if drop > best.1 {
            best = (ks[i], drop);
        }
    }
    Ok(best.0)
}

/// Fits a mixture for every K in `k_grid` and applies [`elbow_choice`].
pub fn select_k_elbow(y: &RecordMatrix, k_grid: &[usize], config: &EmConfig) -> Result<usize> {
    if k_grid.len() < 3 {
        return Err(Error::InvalidParameter(
            "elbow selection needs at least three grid points".into(),
        ));
    }
    let lls = k_grid
        .par_iter()
        .map(|&k| fit_gmm(y, k, config).map(|f| f.log_likelihood))
        .collect::<Result<Vec<_>>>()?;
    log::debug!(
        "elbow curve: {:?}",
        k_grid.iter().zip(&lls).collect::<Vec<_>>()
    );
    elbow_choice(k_grid, &lls)
}

pub fn default_k_grid() -> Vec<usize> {
    (2..=10).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn blobs(n_each: usize, centers: &[[f64; 2]], seed: u64) -> RecordMatrix {
        let mut r = rng::stream(seed, 0);
        let mut rows = Vec::new();
        for c in centers {
            for _ in 0..n_each {
                let dx: f64 = r.sample(StandardNormal);
                let dy: f64 = r.sample(StandardNormal);
                rows.push(vec![c[0] + dx, c[1] + dy]);
            }
        }
        RecordMatrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn single_component_is_closed_form() {
        let y = blobs(200, &[[1.0, -2.0]], 1);
        let fit = fit_gmm(&y, 1, &EmConfig::default()).unwrap();
        let n = y.n_rows() as f64;
        let mean: Vec<f64> = (0..2).map(|j| y.column(j).sum::<f64>() / n).collect();
        assert_eq!(fit.model.weights(), &[1.0]);
        for j in 0..2 {
            assert!((fit.model.means()[0][j] - mean[j]).abs() < 1e-12);
        }
        for a in 0..2 {
            for b in 0..2 {
                let s: f64 = y
                    .rows()
                    .map(|r| (r[a] - mean[a]) * (r[b] - mean[b]))
                    .sum::<f64>()
                    / n;
                let reg = if a == b { 1e-6 } else { 0.0 };
                assert!((fit.model.covariances()[0][a][b] - s - reg).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn separated_blobs_are_recovered() {
        let y = blobs(2000, &[[-5.0, -5.0], [5.0, 5.0]], 2);
        let fit = fit_gmm(&y, 2, &EmConfig::default()).unwrap();
        for c in [[-5.0, -5.0], [5.0, 5.0]] {
            let close = fit
                .model
                .means()
                .iter()
                .any(|m| ((m[0] - c[0]).powi(2) + (m[1] - c[1]).powi(2)).sqrt() < 0.1);
            assert!(close, "no component near {c:?}: {:?}", fit.model.means());
        }
    }

    #[test]
    fn log_likelihood_never_decreases() {
        let y = blobs(150, &[[0.0, 0.0], [2.0, 1.0], [-1.0, 3.0]], 3);
        for k in 1..=4 {
            let config = EmConfig {
                tol: 0.0,
                max_iter: 60,
                ..EmConfig::default()
            };
            let fit = fit_gmm(&y, k, &config).unwrap();
            for w in fit.history.windows(2) {
                assert!(w[1] >= w[0] - 1e-8, "k={k}: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn fitting_is_deterministic() {
        let y = blobs(100, &[[0.0, 0.0], [4.0, 0.0]], 4);
        let config = EmConfig {
            seed: 11,
            ..EmConfig::default()
        };
        let a = fit_gmm(&y, 2, &config).unwrap();
        let b = fit_gmm(&y, 2, &config).unwrap();
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn rejects_k_above_n() {
        let y = blobs(2, &[[0.0, 0.0]], 5);
        assert!(fit_gmm(&y, 3, &EmConfig::default()).is_err());
        assert!(fit_gmm(&y, 0, &EmConfig::default()).is_err());
    }

    #[test]
    fn elbow_picks_largest_curvature_drop() {
        let ll = [-1000.0, -700.0, -600.0, -580.0, -575.0];
        assert_eq!(elbow_choice(&[1, 2, 3, 4, 5], &ll).unwrap(), 2);
    }

    #[test]
    fn elbow_ties_go_to_smallest_k() {
        let ll = [-10.0, -8.0, -6.0, -4.0, -2.0];
        assert_eq!(elbow_choice(&[2, 3, 4, 5, 6], &ll).unwrap(), 3);
    }

    #[test]
    fn elbow_needs_three_points() {
        assert!(elbow_choice(&[1, 2], &[-3.0, -2.0]).is_err());
        let y = blobs(20, &[[0.0, 0.0]], 6);
        assert!(select_k_elbow(&y, &[1, 2], &EmConfig::default()).is_err());
    }

    #[test]
    fn elbow_finds_three_blobs() {
        let y = blobs(200, &[[-8.0, 0.0], [8.0, 0.0], [0.0, 10.0]], 7);
        let k = select_k_elbow(&y, &[1, 2, 3, 4, 5, 6], &EmConfig::default()).unwrap();
        assert_eq!(k, 3);
    }

    #[test]
    fn responsibilities_are_symmetric_between_twins() {
        let model = GmmModel::new(GmmParams {
            weights: vec![0.5, 0.5],
            means: vec![vec![-1.0, 0.0], vec![1.0, 0.0]],
            covariances: vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]; 2],
        })
        .unwrap();
        let r = model.responsibilities(&[0.0, 3.0]).unwrap();
        assert!((r[0] - 0.5).abs() < 1e-15 && (r[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn malformed_params_are_rejected() {
        let bad = GmmParams {
            weights: vec![0.7, 0.7],
            means: vec![vec![0.0], vec![1.0]],
            covariances: vec![vec![vec![1.0]]; 2],
        };
        assert!(GmmModel::new(bad).is_err());
        let not_pd = GmmParams {
            weights: vec![1.0],
            means: vec![vec![0.0]],
            covariances: vec![vec![vec![-1.0]]],
        };
        assert!(GmmModel::new(not_pd).is_err());
    }
}
