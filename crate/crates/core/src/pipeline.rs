//! End-to-end estimation for one mechanism: client round, server-side
//! aggregation, and the resulting non-participant and whole-population
//! estimates.

use crate::data::{RecordMatrix, SplitDataset};
use crate::error::{Error, Result};
use crate::eval::{
    compose_entire, naive_estimate, weighted_mean, DiscreteDistribution, StatReport, Statistic,
};
use crate::ldp::{hybrid_mean_estimate, PrivacyBudget};
use crate::model::ClassAssignmentModel;
use crate::protocol::{run_round, transcript_to_counts, Mechanism, RoundTranscript};
use crate::server::{
    direct_counts_to_distribution, invert_exponential_counts, propensity_scores,
    reweight_nonparticipant, ClusterMassEstimate, InversionConfig, PropensityScores,
};

/// What a method produces: a full distribution, or only a mean vector
/// (the hybrid mechanism).
#[derive(Debug, Clone, PartialEq)]
pub enum Estimate {
    Distribution(DiscreteDistribution),
    MeanOnly(Vec<f64>),
}

impl Estimate {
    pub fn distribution(&self) -> Option<&DiscreteDistribution> {
        match self {
            Estimate::Distribution(d) => Some(d),
            Estimate::MeanOnly(_) => None,
        }
    }

    /// Per-attribute statistic, if this estimate supports it.
    pub fn statistic(&self, stat: Statistic) -> Option<Vec<f64>> {
        match (self, stat) {
            (Estimate::Distribution(d), _) => Some(StatReport::of(d).get(stat).to_vec()),
            (Estimate::MeanOnly(m), Statistic::Mean) => Some(m.clone()),
            (Estimate::MeanOnly(_), _) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodEstimate {
    pub mechanism: Mechanism,
    pub nonparticipant: Estimate,
    pub entire: Estimate,
    /// Estimated non-participant class mass `U` (ps and dipps only).
    pub class_mass: Option<ClusterMassEstimate>,
    pub propensity: Option<PropensityScores>,
}

/// Ground-truth distributions of a split dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub nonparticipant: DiscreteDistribution,
    pub entire: DiscreteDistribution,
}

impl Truth {
    pub fn of(split: &SplitDataset) -> Result<Self> {
        Ok(Self {
            nonparticipant: DiscreteDistribution::uniform(split.non_participants.clone()),
            entire: DiscreteDistribution::uniform(
                split.participants.vstack(&split.non_participants)?,
            ),
        })
    }

    pub fn get(&self, population: Population) -> &DiscreteDistribution {
        match population {
            Population::Entire => &self.entire,
            Population::Nonparticipant => &self.nonparticipant,
        }
    }
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Population {
    Entire,
    Nonparticipant,
}

impl Population {
    pub const ALL: [Population; 2] = [Population::Entire, Population::Nonparticipant];

    pub fn name(self) -> &'static str {
        match self {
            Population::Entire => "entire",
            Population::Nonparticipant => "nonparticipant",
        }
    }
}

impl MethodEstimate {
    pub fn get(&self, population: Population) -> &Estimate {
        match population {
            Population::Entire => &self.entire,
            Population::Nonparticipant => &self.nonparticipant,
        }
    }
}

/// Combines participants with a non-participant estimate in proportion `n1 : n0`.
pub fn compose_entire_estimate(
    x1: &RecordMatrix,
    nonparticipant: &Estimate,
    n0: usize,
) -> Result<Estimate> {
    Ok(match nonparticipant {
        Estimate::Distribution(d) => Estimate::Distribution(compose_entire(x1, d, n0)?),
        Estimate::MeanOnly(est) => {
            if est.len() != x1.n_cols() {
                return Err(Error::DimensionMismatch {
                    expected: x1.n_cols(),
                    got: est.len(),
                });
            }
            let n1 = x1.n_rows() as f64;
            let total = n1 + n0 as f64;
            let p = weighted_mean(&naive_estimate(x1));
            Estimate::MeanOnly(
                p.iter()
                    .zip(est)
                    .map(|(p, q)| (n1 * p + n0 as f64 * q) / total)
                    .collect(),
            )
        }
    })
}

pub fn naive(x1: &RecordMatrix) -> MethodEstimate {
    let d = naive_estimate(x1);
    MethodEstimate {
        mechanism: Mechanism::Naive,
        nonparticipant: Estimate::Distribution(d.clone()),
        entire: Estimate::Distribution(d),
        class_mass: None,
        propensity: None,
    }
}

/// Server side: turns a finished round into estimates. Categorical rounds
/// use the model carried in the transcript's broadcast.
pub fn estimate_from_transcript(
    x1: &RecordMatrix,
    transcript: &RoundTranscript,
    inversion: &InversionConfig,
) -> Result<MethodEstimate> {
    let mechanism = transcript.mechanism();
    let n0 = transcript.n_clients();
    if n0 == 0 {
        return Err(Error::NoReports);
    }
    match mechanism {
        Mechanism::Ps | Mechanism::Dipps => {
            let model = transcript.broadcast.model()?;
            let counts = transcript_to_counts(transcript, model.k())?;
            let u = if mechanism == Mechanism::Dipps {
                invert_exponential_counts(&counts, transcript.broadcast.epsilon, inversion)?
            } else {
                direct_counts_to_distribution(&counts)?
            };
            let rhos = model.assign_all(x1)?;
            let scores = propensity_scores(&rhos, &u, n0)?;
            let est =
                Estimate::Distribution(reweight_nonparticipant(x1, &scores.point, n0)?.into());
            Ok(MethodEstimate {
                mechanism,
                entire: compose_entire_estimate(x1, &est, n0)?,
                nonparticipant: est,
                class_mass: Some(u),
                propensity: Some(scores),
            })
        }
        Mechanism::Laplace => {
            let noisy = transcript.noisy_records(x1.feature_names().to_vec())?;
            if noisy.n_cols() != x1.n_cols() {
                return Err(Error::DimensionMismatch {
                    expected: x1.n_cols(),
                    got: noisy.n_cols(),
                });
            }
            let est = Estimate::Distribution(DiscreteDistribution::uniform(noisy));
            Ok(MethodEstimate {
                mechanism,
                entire: compose_entire_estimate(x1, &est, n0)?,
                nonparticipant: est,
                class_mass: None,
                propensity: None,
            })
        }
        Mechanism::Hybrid => {
            let est = Estimate::MeanOnly(hybrid_mean_estimate(
                &transcript.attribute_reports()?,
                x1.n_cols(),
            )?);
            Ok(MethodEstimate {
                mechanism,
                entire: compose_entire_estimate(x1, &est, n0)?,
                nonparticipant: est,
                class_mass: None,
                propensity: None,
            })
        }
        Mechanism::Naive => Err(Error::InvalidParameter(
            "the naive baseline has no transcript".into(),
        )),
    }
}

/// Runs one mechanism on an already normalized split. Categorical
/// mechanisms need the class model fitted on the participants.
pub fn run_method(
    split: &SplitDataset,
    model: Option<&ClassAssignmentModel>,
    mechanism: Mechanism,
    eps: PrivacyBudget,
    seed: u64,
    inversion: &InversionConfig,
) -> Result<MethodEstimate> {
    if mechanism == Mechanism::Naive {
        return Ok(naive(&split.participants));
    }
    let transcript = run_round(model, &split.non_participants, eps, mechanism, seed)?;
    estimate_from_transcript(&split.participants, &transcript, inversion)
}
