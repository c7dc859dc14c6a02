//! Single-round collection protocol: the server broadcasts the class model,
//! every simulated non-participant answers with exactly one randomized
//! message, and the shuffled messages form a replayable transcript.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::RecordMatrix;
use crate::error::{Error, Result};
use crate::ldp::{self, AttributeReport, ClientReport, PrivacyBudget};
use crate::model::ClassAssignmentModel;
use crate::rng;
use crate::server::{tally_reports, ClassCounts};

pub const PROTOCOL_VERSION: &str = "dipps.round/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    /// Participants only; no round is run.
    Naive,
    /// Clients report a class drawn directly from their class distribution.
    Ps,
    /// Clients report a class through the exponential mechanism.
    Dipps,
    /// Clients report their whole record with Laplace noise.
    Laplace,
    /// Clients report one hybrid-perturbed attribute.
    Hybrid,
}

impl Mechanism {
    pub const ALL: [Mechanism; 5] = [
        Mechanism::Naive,
        Mechanism::Ps,
        Mechanism::Dipps,
        Mechanism::Laplace,
        Mechanism::Hybrid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Naive => "naive",
            Mechanism::Ps => "ps",
            Mechanism::Dipps => "dipps",
            Mechanism::Laplace => "laplace",
            Mechanism::Hybrid => "hybrid",
        }
    }

    pub fn is_categorical(self) -> bool {
        matches!(self, Mechanism::Ps | Mechanism::Dipps)
    }

    /// Whether results depend on the privacy budget.
    pub fn uses_epsilon(self) -> bool {
        matches!(
            self,
            Mechanism::Dipps | Mechanism::Laplace | Mechanism::Hybrid
        )
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mechanism {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Mechanism::ALL
            .into_iter()
            .find(|m| m.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown mechanism `{s}`")))
    }
}

/// First transcript line: what the server sent out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBroadcast {
    pub protocol_version: String,
    pub mechanism: Mechanism,
    pub epsilon: PrivacyBudget,
    pub n_clients: usize,
    /// Client `i` draws from ChaCha stream `i` of this seed.
    pub master_seed: u64,
    /// Versioned class-model document; absent for record-level mechanisms.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<serde_json::Value>,
}

impl ModelBroadcast {
    pub fn model(&self) -> Result<ClassAssignmentModel> {
        let doc = self
            .model
            .as_ref()
            .ok_or_else(|| Error::MalformedModel("broadcast carries no model".into()))?;
        ClassAssignmentModel::from_json(&doc.to_string())
    }
}

/// The single message a client sends.
#[derive(Debug, Clone, PartialEq)]
pub enum Report {
    Class(ClientReport),
    Record(Vec<f64>),
    Attribute(AttributeReport),
}

impl Report {
    fn to_json(&self) -> serde_json::Value {
        match self {
            Report::Class(c) => serde_json::json!(c.wire_index()),
            Report::Record(r) => serde_json::json!(r),
            Report::Attribute(a) => serde_json::json!([a.attribute + 1, a.value]),
        }
    }

    fn from_json(mechanism: Mechanism, v: serde_json::Value) -> Result<Self> {
        let bad = |what: &str| Error::Config(format!("malformed {mechanism} report: {what}"));
        match mechanism {
            Mechanism::Ps | Mechanism::Dipps => Ok(Report::Class(serde_json::from_value(v)?)),
            Mechanism::Laplace => Ok(Report::Record(serde_json::from_value(v)?)),
            Mechanism::Hybrid => {
                let (index, value): (usize, f64) = serde_json::from_value(v)?;
                let attribute = index
                    .checked_sub(1)
                    .ok_or_else(|| bad("attribute index 0"))?;
                Ok(Report::Attribute(AttributeReport { attribute, value }))
            }
            Mechanism::Naive => Err(bad("naive rounds carry no reports")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientMessage {
    pub client_id: usize,
    pub report: Report,
}

#[derive(Serialize, Deserialize)]
struct MessageLine {
    client_id: usize,
    report: serde_json::Value,
}

/// Broadcast plus one message per client, in shuffled order.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundTranscript {
    pub broadcast: ModelBroadcast,
    pub messages: Vec<ClientMessage>,
}

impl RoundTranscript {
    pub fn mechanism(&self) -> Mechanism {
        self.broadcast.mechanism
    }

    pub fn n_clients(&self) -> usize {
        self.messages.len()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("<transcript>", e);
        serde_json::to_writer(&mut w, &self.broadcast)?;
        w.write_all(b"\n").map_err(io)?;
        for msg in &self.messages {
            let line = MessageLine {
                client_id: msg.client_id,
                report: msg.report.to_json(),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Config("empty transcript".into()))?
            .map_err(|e| Error::io("<transcript>", e))?;
        let broadcast: ModelBroadcast = serde_json::from_str(&header)?;
        if broadcast.protocol_version != PROTOCOL_VERSION {
            return Err(Error::VersionMismatch {
                expected: PROTOCOL_VERSION.into(),
                found: broadcast.protocol_version,
            });
        }
        let mut messages = Vec::with_capacity(broadcast.n_clients);
        for line in lines {
            let line = line.map_err(|e| Error::io("<transcript>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let m: MessageLine = serde_json::from_str(&line)?;
            messages.push(ClientMessage {
                client_id: m.client_id,
                report: Report::from_json(broadcast.mechanism, m.report)?,
            });
        }
        if messages.len() != broadcast.n_clients {
            return Err(Error::Config(format!(
                "transcript announces {} clients but holds {} reports",
                broadcast.n_clients,
                messages.len()
            )));
        }
        Ok(Self {
            broadcast,
            messages,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_jsonl(std::io::BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_jsonl(std::io::BufReader::new(file))
    }

    pub fn class_reports(&self) -> Result<Vec<ClientReport>> {
        self.messages
            .iter()
            .map(|m| match m.report {
                Report::Class(c) => Ok(c),
                _ => Err(Error::NotCategorical(self.mechanism().to_string())),
            })
            .collect()
    }

    /// Noisy records of a Laplace round, in transcript order.
    pub fn noisy_records(&self, feature_names: Vec<String>) -> Result<RecordMatrix> {
        let mut values = Vec::new();
        for m in &self.messages {
            match &m.report {
                Report::Record(r) => values.extend_from_slice(r),
                _ => {
                    return Err(Error::Config(format!(
                        "not a record round (mechanism `{}`)",
                        self.mechanism()
                    )))
                }
            }
        }
        RecordMatrix::new(values, feature_names)
    }

    pub fn attribute_reports(&self) -> Result<Vec<AttributeReport>> {
        self.messages
            .iter()
            .map(|m| match m.report {
                Report::Attribute(a) => Ok(a),
                _ => Err(Error::Config(format!(
                    "not an attribute round (mechanism `{}`)",
                    self.mechanism()
                ))),
            })
            .collect()
    }
}

/// Simulates one collection round over `clients`.
///
/// The model is required for categorical mechanisms; clients work from the
/// deserialized broadcast document, not from the server's in-memory model.
pub fn run_round(
    model: Option<&ClassAssignmentModel>,
    clients: &RecordMatrix,
    eps: PrivacyBudget,
    mechanism: Mechanism,
    master_seed: u64,
) -> Result<RoundTranscript> {
    if mechanism == Mechanism::Naive {
        return Err(Error::InvalidParameter(
            "the naive baseline has no collection round".into(),
        ));
    }
    let model_doc = match (mechanism.is_categorical(), model) {
        (true, Some(m)) => {
            if m.n_features() != clients.n_cols() {
                return Err(Error::DimensionMismatch {
                    expected: m.n_features(),
                    got: clients.n_cols(),
                });
            }
            Some(serde_json::to_value(m)?)
        }
        (true, None) => {
            return Err(Error::InvalidParameter(format!(
                "{mechanism} round needs a class model"
            )))
        }
        (false, _) => None,
    };
    let broadcast = ModelBroadcast {
        protocol_version: PROTOCOL_VERSION.into(),
        mechanism,
        epsilon: eps,
        n_clients: clients.n_rows(),
        master_seed,
        model: model_doc,
    };
    let client_model = if mechanism.is_categorical() {
        Some(broadcast.model()?)
    } else {
        None
    };

    let mut messages = (0..clients.n_rows())
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(master_seed, i as u64);
            let record = clients.row(i);
            let report = match mechanism {
                Mechanism::Dipps | Mechanism::Ps => {
                    let rho = client_model
                        .as_ref()
                        .expect("categorical round has a model")
                        .assign(record)?;
                    Report::Class(if mechanism == Mechanism::Dipps {
                        ldp::exp_mech_sample(&rho, eps, &mut r)
                    } else {
                        ldp::ps_sample(&rho, &mut r)
                    })
                }
                Mechanism::Laplace => {
                    Report::Record(ldp::laplace_perturb_record(record, eps, &mut r))
                }
                Mechanism::Hybrid => {
                    Report::Attribute(ldp::hybrid_perturb_record(record, eps, &mut r))
                }
                Mechanism::Naive => unreachable!("rejected above"),
            };
            Ok(ClientMessage {
                client_id: i,
                report,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut shuffler = rng::stream(rng::derive_seed(master_seed, &[rng::label("shuffle")]), 0);
    messages.shuffle(&mut shuffler);
    Ok(RoundTranscript {
        broadcast,
        messages,
    })
}

pub fn transcript_to_counts(transcript: &RoundTranscript, k: usize) -> Result<ClassCounts> {
    if !transcript.mechanism().is_categorical() {
        return Err(Error::NotCategorical(transcript.mechanism().to_string()));
    }
    tally_reports(&transcript.class_reports()?, k)
}
