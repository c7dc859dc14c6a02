//! Client-side randomizers: the exponential mechanism over class
//! distributions, direct class sampling, and the per-record numeric
//! mechanisms (Laplace, Duchi, Piecewise, Hybrid) used for comparison.

use rand::distr::Open01;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::model::ClassDistribution;

/// Privacy parameter ε of a local randomizer.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct PrivacyBudget(f64);

impl PrivacyBudget {
    pub fn new(epsilon: f64) -> Result<Self> {
        if epsilon > 0.0 && !epsilon.is_nan() {
            Ok(Self(epsilon))
        } else {
            Err(Error::InvalidParameter(format!(
                "epsilon must be positive, got {epsilon}"
            )))
        }
    }

    pub fn epsilon(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for PrivacyBudget {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<PrivacyBudget> for f64 {
    fn from(b: PrivacyBudget) -> f64 {
        b.0
    }
}

/// The class a client reports. Held 0-based; written as the 1-based integer
/// `1..=K` on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClientReport(usize);

impl ClientReport {
    pub fn new(class: usize) -> Self {
        Self(class)
    }

    /// From a 1-based wire index.
    pub fn from_wire(index: usize) -> Result<Self> {
        index
            .checked_sub(1)
            .map(Self)
            .ok_or(Error::ReportOutOfRange { index, k: 0 })
    }

    pub fn class(self) -> usize {
        self.0
    }

    pub fn wire_index(self) -> usize {
        self.0 + 1
    }
}

impl Serialize for ClientReport {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u64(self.wire_index() as u64)
    }
}

impl<'de> Deserialize<'de> for ClientReport {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let index = u64::deserialize(d)? as usize;
        Self::from_wire(index).map_err(serde::de::Error::custom)
    }
}

/// Output law of the exponential mechanism with utility `ρ_d(k)` and
/// sensitivity 1: `Pr[k] ∝ exp(ε ρ_d(k) / 2)`.
pub fn exp_mech_distribution(rho: &ClassDistribution, eps: PrivacyBudget) -> ClassDistribution {
    let scores: Vec<f64> = rho
        .probs()
        .iter()
        .map(|&p| eps.epsilon() * p / 2.0)
        .collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    ClassDistribution::new(weights.into_iter().map(|w| w / total).collect())
        .expect("softmax of finite scores is a probability vector")
}

fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    // rounding left a sliver above the last cumulative sum
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(probs.len() - 1)
}

pub fn exp_mech_sample<R: Rng + ?Sized>(
    rho: &ClassDistribution,
    eps: PrivacyBudget,
    rng: &mut R,
) -> ClientReport {
    ClientReport(sample_categorical(
        exp_mech_distribution(rho, eps).probs(),
        rng,
    ))
}

/// Non-private ceiling: report a class drawn directly from `ρ_d`.
pub fn ps_sample<R: Rng + ?Sized>(rho: &ClassDistribution, rng: &mut R) -> ClientReport {
    ClientReport(sample_categorical(rho.probs(), rng))
}

/// Laplace(0, b) by inverse CDF.
pub fn sample_laplace<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.sample::<f64, _>(Open01) - 0.5;
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Per-attribute Laplace scale `2m/ε`: each attribute spends `ε/m` on a
/// range of width 2.
pub fn laplace_scale(m: usize, eps: PrivacyBudget) -> f64 {
    2.0 * m as f64 / eps.epsilon()
}

/// Adds independent Laplace noise to every attribute of a record in `[−1, 1]^m`.
/// The output is not clipped.
pub fn laplace_perturb_record<R: Rng + ?Sized>(
    record: &[f64],
    eps: PrivacyBudget,
    rng: &mut R,
) -> Vec<f64> {
    let b = laplace_scale(record.len(), eps);
    record.iter().map(|&x| x + sample_laplace(b, rng)).collect()
}

/// Output magnitude of the Duchi et al. one-dimensional mechanism.
pub fn duchi_bound(eps: PrivacyBudget) -> f64 {
    let e = eps.epsilon().exp();
    (e + 1.0) / (e - 1.0)
}

fn check_unit(x: f64) {
    debug_assert!((-1.0..=1.0).contains(&x), "input {x} outside [-1, 1]");
}

/// Reports `±C'` with `Pr[+C'] = x(e^ε − 1)/(2(e^ε + 1)) + 1/2`; unbiased for `x`.
pub fn duchi_perturb<R: Rng + ?Sized>(x: f64, eps: PrivacyBudget, rng: &mut R) -> f64 {
    check_unit(x);
    let e = eps.epsilon().exp();
    let p_plus = x * (e - 1.0) / (2.0 * (e + 1.0)) + 0.5;
    let c = duchi_bound(eps);
    if rng.random::<f64>() < p_plus {
        c
    } else {
        -c
    }
}

/// Output bound `C = (e^{ε/2} + 1)/(e^{ε/2} − 1)` of the piecewise mechanism.
pub fn piecewise_bound(eps: PrivacyBudget) -> f64 {
    let h = (eps.epsilon() / 2.0).exp();
    (h + 1.0) / (h - 1.0)
}

/// Piecewise mechanism: with probability `e^{ε/2}/(e^{ε/2} + 1)` the output is
/// uniform on the high-density band `[l(x), r(x)]`, otherwise uniform on the
/// rest of `[−C, C]`.
pub fn piecewise_perturb<R: Rng + ?Sized>(x: f64, eps: PrivacyBudget, rng: &mut R) -> f64 {
    check_unit(x);
    let h = (eps.epsilon() / 2.0).exp();
    let c = piecewise_bound(eps);
    let l = (c + 1.0) * x / 2.0 - (c - 1.0) / 2.0;
    let r = l + c - 1.0;
    if rng.random::<f64>() < h / (h + 1.0) {
        rng.random_range(l..=r)
    } else {
        // the two tails have total length C + 1
        let u = rng.random::<f64>() * (c + 1.0);
        let left = l + c;
        if u < left {
            -c + u
        } else {
            r + (u - left)
        }
    }
}

/// Below this ε the hybrid mechanism always uses Duchi.
pub const HYBRID_THRESHOLD: f64 = 0.61;

/// Mixes Piecewise (probability `1 − e^{−ε/2}`) and Duchi when `ε > 0.61`;
/// pure Duchi otherwise.
pub fn hybrid_perturb<R: Rng + ?Sized>(x: f64, eps: PrivacyBudget, rng: &mut R) -> f64 {
    if eps.epsilon() > HYBRID_THRESHOLD {
        let alpha = 1.0 - (-eps.epsilon() / 2.0).exp();
        if rng.random::<f64>() < alpha {
            return piecewise_perturb(x, eps, rng);
        }
    }
    duchi_perturb(x, eps, rng)
}

/// One sampled attribute of a hybrid-perturbed record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttributeReport {
    pub attribute: usize,
    /// Perturbed value already scaled by the record dimension `m`.
    pub value: f64,
}

/// Picks one attribute uniformly, perturbs it with the full budget and scales
/// by `m`, so per-attribute sums over clients divided by the client count are
/// unbiased mean estimates.
pub fn hybrid_perturb_record<R: Rng + ?Sized>(
    record: &[f64],
    eps: PrivacyBudget,
    rng: &mut R,
) -> AttributeReport {
    let m = record.len();
    let attribute = if m == 1 { 0 } else { rng.random_range(0..m) };
    AttributeReport {
        attribute,
        value: m as f64 * hybrid_perturb(record[attribute], eps, rng),
    }
}

/// Per-attribute mean estimate from hybrid reports of `n_clients` clients.
pub fn hybrid_mean_estimate(reports: &[AttributeReport], m: usize) -> Result<Vec<f64>> {
    if reports.is_empty() {
        return Err(Error::NoReports);
    }
    let mut sums = vec![0.0; m];
    for r in reports {
        *sums.get_mut(r.attribute).ok_or(Error::DimensionMismatch {
            expected: m,
            got: r.attribute + 1,
        })? += r.value;
    }
    let n = reports.len() as f64;
    Ok(sums.into_iter().map(|s| s / n).collect())
}
