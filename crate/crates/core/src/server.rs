//! Server-side aggregation: undo the exponential-mechanism distortion on the
//! class counts, turn class masses into propensity scores, and reweight the
//! participant sample.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::RecordMatrix;
use crate::error::{Error, Result};
use crate::ldp::{ClientReport, PrivacyBudget};
use crate::model::ClassDistribution;

/// How many reports named each class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub counts: Vec<u64>,
}

impl ClassCounts {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    fn as_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }
}

pub fn tally_reports(reports: &[ClientReport], k: usize) -> Result<ClassCounts> {
    if reports.is_empty() {
        return Err(Error::NoReports);
    }
    let mut counts = vec![0u64; k];
    for r in reports {
        *counts.get_mut(r.class()).ok_or(Error::ReportOutOfRange {
            index: r.wire_index(),
            k,
        })? += 1;
    }
    Ok(ClassCounts { counts })
}

/// Estimated class distribution of the non-participants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterMassEstimate {
    pub masses: Vec<f64>,
}

impl ClusterMassEstimate {
    pub fn k(&self) -> usize {
        self.masses.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InversionConfig {
    /// Pseudo-count added to every class before taking log-ratios.
    pub smoothing: f64,
    /// Lower clip applied to the solved masses before renormalizing.
    pub floor: f64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            smoothing: 0.5,
            floor: 1e-6,
        }
    }
}

/// Solves `U_k − U_l = (2/ε) log(Ũ_k/Ũ_l)` with `Σ U_k = 1`.
pub fn invert_exponential_counts(
    counts: &ClassCounts,
    eps: PrivacyBudget,
    config: &InversionConfig,
) -> Result<ClusterMassEstimate> {
    invert_count_vector(&counts.as_f64(), eps, config)
}

/// [`invert_exponential_counts`] for real-valued (e.g. expected) counts.
pub fn invert_count_vector(
    counts: &[f64],
    eps: PrivacyBudget,
    config: &InversionConfig,
) -> Result<ClusterMassEstimate> {
    let k = counts.len();
    if k < 2 {
        return Err(Error::InvalidParameter(
            "count inversion needs at least two classes".into(),
        ));
    }
    let smoothed: Vec<f64> = counts.iter().map(|c| c + config.smoothing).collect();
    if smoothed.iter().any(|&c| !(c > 0.0) || !c.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "non-positive count in {counts:?} without smoothing"
        )));
    }
    let scale = 2.0 / eps.epsilon();
    // gaps[k] = U_1 − U_k
    let gaps: Vec<f64> = smoothed
        .iter()
        .map(|c| scale * (smoothed[0] / c).ln())
        .collect();
    let first = (1.0 + gaps[1..].iter().sum::<f64>()) / k as f64;
    let raw: Vec<f64> = gaps.iter().map(|g| first - g).collect();
    Ok(ClusterMassEstimate {
        masses: clip_and_renormalize(&raw, config.floor),
    })
}

fn clip_and_renormalize(raw: &[f64], floor: f64) -> Vec<f64> {
    let clipped: Vec<f64> = raw.iter().map(|&u| u.max(floor)).collect();
    let total: f64 = clipped.iter().sum();
    clipped.into_iter().map(|u| u / total).collect()
}

/// Plain class frequencies, for reports sampled directly from `ρ_d`.
pub fn direct_counts_to_distribution(counts: &ClassCounts) -> Result<ClusterMassEstimate> {
    let n = counts.total();
    if n == 0 {
        return Err(Error::NoReports);
    }
    Ok(ClusterMassEstimate {
        masses: counts.counts.iter().map(|&c| c as f64 / n as f64).collect(),
    })
}

/// Cluster and per-record propensity scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityScores {
    pub cluster: Vec<f64>,
    pub point: Vec<f64>,
}

/// Summed participant responsibilities `Σ_{d∈X1} ρ_d(k)` per class.
pub fn participant_class_mass(rhos: &[ClassDistribution], k: usize) -> Result<Vec<f64>> {
    let mut mass = vec![0.0; k];
    for rho in rhos {
        if rho.k() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: rho.k(),
            });
        }
        mass.iter_mut().zip(rho.probs()).for_each(|(m, p)| *m += p);
    }
    Ok(mass)
}

/// `ẽ(k) = S_k / (S_k + n0 U_k)` with `S_k` the participant mass of class `k`.
pub fn cluster_propensity(
    rhos: &[ClassDistribution],
    u: &ClusterMassEstimate,
    n0: usize,
) -> Result<Vec<f64>> {
    if rhos.is_empty() {
        return Err(Error::InvalidParameter(
            "no participant responsibilities".into(),
        ));
    }
    let mass = participant_class_mass(rhos, u.k())?;
    cluster_propensity_from_mass(&mass, u, n0)
}

/// [`cluster_propensity`] given the participant class masses directly.
pub fn cluster_propensity_from_mass(
    participant_mass: &[f64],
    u: &ClusterMassEstimate,
    n0: usize,
) -> Result<Vec<f64>> {
    if participant_mass.len() != u.k() {
        return Err(Error::DimensionMismatch {
            expected: u.k(),
            got: participant_mass.len(),
        });
    }
    let n0 = n0 as f64;
    participant_mass
        .iter()
        .zip(&u.masses)
        .enumerate()
        .map(|(k, (&s, &uk))| {
            if !(s > 0.0) {
                return Err(Error::EmptyCluster(k));
            }
            Ok(s / (s + n0 * uk))
        })
        .collect()
}

/// `e(d) = Σ_k ẽ(k) ρ_d(k)`.
pub fn point_propensity(rho: &ClassDistribution, cluster: &[f64]) -> f64 {
    rho.probs().iter().zip(cluster).map(|(p, e)| p * e).sum()
}

pub fn propensity_scores(
    rhos: &[ClassDistribution],
    u: &ClusterMassEstimate,
    n0: usize,
) -> Result<PropensityScores> {
    let cluster = cluster_propensity(rhos, u, n0)?;
    let point = rhos.iter().map(|r| point_propensity(r, &cluster)).collect();
    Ok(PropensityScores { cluster, point })
}

/// Participant records with probability masses describing an estimated distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDataset {
    pub records: RecordMatrix,
    pub masses: Vec<f64>,
}

impl WeightedDataset {
    pub fn new(records: RecordMatrix, masses: Vec<f64>) -> Result<Self> {
        if masses.len() != records.n_rows() {
            return Err(Error::DimensionMismatch {
                expected: records.n_rows(),
                got: masses.len(),
            });
        }
        if masses.iter().any(|&w| !(w >= 0.0)) || (masses.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(
                "masses must be non-negative and sum to 1".into(),
            ));
        }
        Ok(Self { records, masses })
    }

    pub fn uniform(records: RecordMatrix) -> Self {
        let n = records.n_rows();
        Self {
            records,
            masses: vec![1.0 / n as f64; n],
        }
    }

    /// CSV with the feature columns followed by a `mass` column.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self
            .records
            .feature_names()
            .iter()
            .map(String::as_str)
            .collect();
        header.push("mass");
        w.write_record(&header)?;
        for (row, mass) in self.records.rows().zip(&self.masses) {
            let fields: Vec<String> = row
                .iter()
                .chain(std::iter::once(mass))
                .map(|v| format!("{v:?}"))
                .collect();
            w.write_record(&fields)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Reads a CSV whose last column is `mass`.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut rdr = csv::Reader::from_path(path)?;
        let headers = rdr.headers()?.clone();
        let m = headers.len().checked_sub(1).filter(|&m| m > 0);
        let m = match (m, headers.iter().last()) {
            (Some(m), Some("mass")) => m,
            _ => {
                return Err(Error::SchemaMismatch(
                    "weighted CSV needs feature columns and a trailing `mass`".into(),
                ))
            }
        };
        let names: Vec<String> = headers.iter().take(m).map(str::to_string).collect();
        let mut values = Vec::new();
        let mut masses = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| Error::NonNumeric {
                    row: i + 1,
                    column: headers.get(j).unwrap_or("?").to_string(),
                    value: field.to_string(),
                })?;
                if j < m {
                    values.push(v);
                } else {
                    masses.push(v);
                }
            }
        }
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) {
            return Err(Error::EmptyEstimate);
        }
        masses.iter_mut().for_each(|w| *w /= total);
        Self::new(RecordMatrix::new(values, names)?, masses)
    }
}

fn normalize_masses(raw: Vec<f64>) -> Result<Vec<f64>> {
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::EmptyEstimate);
    }
    Ok(raw.into_iter().map(|w| w / total).collect())
}

fn check_scores(x1: &RecordMatrix, scores: &[f64]) -> Result<()> {
    if scores.len() != x1.n_rows() {
        return Err(Error::DimensionMismatch {
            expected: x1.n_rows(),
            got: scores.len(),
        });
    }
    if let Some(&e) = scores.iter().find(|&&e| !(e > 0.0 && e <= 1.0)) {
        return Err(Error::InvalidPropensity(e));
    }
    Ok(())
}

/// Estimate of the whole population: record `d` gets raw mass
/// `1/((n0 + n1) e(d))`, then masses are normalized.
pub fn reweight_entire(x1: &RecordMatrix, scores: &[f64], n0: usize) -> Result<WeightedDataset> {
    check_scores(x1, scores)?;
    let n = (x1.n_rows() + n0) as f64;
    let raw = scores.iter().map(|e| 1.0 / (n * e)).collect();
    WeightedDataset::new(x1.clone(), normalize_masses(raw)?)
}

/// Estimate of the non-participant distribution: raw mass `(1/e(d) − 1)/n0`,
/// then normalized.
pub fn reweight_nonparticipant(
    x1: &RecordMatrix,
    scores: &[f64],
    n0: usize,
) -> Result<WeightedDataset> {
    check_scores(x1, scores)?;
    if n0 == 0 {
        return Err(Error::EmptyEstimate);
    }
    let raw = scores.iter().map(|e| (1.0 / e - 1.0) / n0 as f64).collect();
    WeightedDataset::new(x1.clone(), normalize_masses(raw)?)
}
