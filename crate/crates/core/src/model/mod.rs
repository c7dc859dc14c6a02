//! Class-assignment model: PCA projection followed by a Gaussian mixture.
//! Its JSON document is the payload broadcast to non-participating clients.

mod gmm;
mod pca;

pub use gmm::{
    default_k_grid, elbow_choice, fit_gmm, select_k_elbow, EmConfig, GmmFit, GmmModel, GmmParams,
};
pub use pca::{components_for_target, fit_pca, PcaModel};

use serde::{Deserialize, Serialize};

use crate::data::RecordMatrix;
use crate::error::{Error, Result};

pub const MODEL_VERSION: &str = "dipps.class-model/1";

/// Probability vector over the K classes of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ClassDistribution(Vec<f64>);

impl ClassDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidParameter(
                "class distribution is empty".into(),
            ));
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "negative or non-finite class probability in {probs:?}"
            )));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "class probabilities sum to {s}"
            )));
        }
        Ok(Self(probs))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn one_hot(k: usize, class: usize) -> Self {
        let mut v = vec![0.0; k];
        v[class] = 1.0;
        Self(v)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }
}

impl TryFrom<Vec<f64>> for ClassDistribution {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ClassDistribution> for Vec<f64> {
    fn from(d: ClassDistribution) -> Self {
        d.0
    }
}

/// Hyperparameters for [`fit_class_model`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variance_target: f64,
    pub k: KChoice,
    pub em: EmConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variance_target: 0.8,
            k: KChoice::Grid(default_k_grid()),
            em: EmConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KChoice {
    Fixed(usize),
    /// Chosen by the elbow rule over this grid.
    Grid(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAssignmentModel {
    pub version: String,
    pub pca: PcaModel,
    pub gmm: GmmModel,
}

impl ClassAssignmentModel {
    pub fn new(pca: PcaModel, gmm: GmmModel) -> Result<Self> {
        let m = Self {
            version: MODEL_VERSION.to_string(),
            pca,
            gmm,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn k(&self) -> usize {
        self.gmm.n_components()
    }

    pub fn n_features(&self) -> usize {
        self.pca.n_features()
    }

    fn validate(&self) -> Result<()> {
        self.pca.validate()?;
        if self.gmm.dim() != self.pca.n_components() {
            return Err(Error::MalformedModel(format!(
                "mixture dimension {} differs from PCA output {}",
                self.gmm.dim(),
                self.pca.n_components()
            )));
        }
        Ok(())
    }

    /// Class probabilities of one raw (normalized) record.
    pub fn assign(&self, record: &[f64]) -> Result<ClassDistribution> {
        let y = self.pca.project(record)?;
        Ok(ClassDistribution(self.gmm.responsibilities(&y)?))
    }

    pub fn assign_all(&self, x: &RecordMatrix) -> Result<Vec<ClassDistribution>> {
        x.rows().map(|r| self.assign(r)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Parses a model document, checking the version tag before the body.
    pub fn from_json(doc: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(doc).map_err(|e| Error::MalformedModel(e.to_string()))?;
        let found = value
            .get("version")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::MalformedModel("missing version tag".into()))?;
        if found != MODEL_VERSION {
            return Err(Error::VersionMismatch {
                expected: MODEL_VERSION.into(),
                found: found.into(),
            });
        }
        let model: Self =
            serde_json::from_value(value).map_err(|e| Error::MalformedModel(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }
}

/// Fits PCA then a mixture on the (already normalized) participant records.
pub fn fit_class_model(x1: &RecordMatrix, config: &ModelConfig) -> Result<ClassAssignmentModel> {
    let pca = fit_pca(x1, config.variance_target)?;
    let y = pca.project_matrix(x1)?;
    let k = match &config.k {
        KChoice::Fixed(k) => *k,
        KChoice::Grid(grid) => select_k_elbow(&y, grid, &config.em)?,
    };
    let fit = fit_gmm(&y, k, &config.em)?;
    log::debug!(
        "class model: q={} k={k} ll={:.3} converged={}",
        pca.n_components(),
        fit.log_likelihood,
        fit.converged
    );
    ClassAssignmentModel::new(pca, fit.model)
}
