//! Dataset ingestion, normalization, participant splitting and the synthetic
//! mixture generator used as ground truth in tests and experiments.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Tokens treated as a missing cell.
const MISSING_TOKENS: &[&str] = &["", "na", "nan", "null", "?"];

/// Dense row-major `n × m` table of real-valued records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMatrix {
    values: Vec<f64>,
    n_rows: usize,
    feature_names: Vec<String>,
}

impl RecordMatrix {
    pub fn new(values: Vec<f64>, feature_names: Vec<String>) -> Result<Self> {
        let m = feature_names.len();
        if m == 0 {
            return Err(Error::InvalidParameter(
                "record matrix needs at least one feature".into(),
            ));
        }
        if values.is_empty() {
            return Err(Error::EmptyResult);
        }
        if values.len() % m != 0 {
            return Err(Error::SchemaMismatch(format!(
                "{} values cannot be arranged in rows of {m}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite entry {v}")));
        }
        Ok(Self {
            n_rows: values.len() / m,
            values,
            feature_names,
        })
    }

    /// Builds a matrix from rows, naming features `x1, x2, ...`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.first().map(Vec::len).ok_or(Error::EmptyResult)?;
        let names = (1..=m).map(|j| format!("x{j}")).collect();
        Self::from_rows_named(rows, names)
    }

    pub fn from_rows_named(rows: &[Vec<f64>], feature_names: Vec<String>) -> Result<Self> {
        let m = feature_names.len();
        let mut values = Vec::with_capacity(rows.len() * m);
        for row in rows {
            if row.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    got: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        Self::new(values, feature_names)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let m = self.n_cols();
        &self.values[i * m..(i + 1) * m]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.n_cols())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.feature_names
            .iter()
            .position(|f| f == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.rows().map(move |r| r[j])
    }

    /// Copy of the selected rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(indices.len() * self.n_cols());
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Self::new(values, self.feature_names.clone())
    }

    /// Copy without column `j`.
    pub fn drop_column(&self, j: usize) -> Result<Self> {
        let names: Vec<String> = self
            .feature_names
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != j)
            .map(|(_, n)| n.clone())
            .collect();
        let values = self
            .rows()
            .flat_map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|&(k, _)| k != j)
                    .map(|(_, v)| *v)
            })
            .collect();
        Self::new(values, names)
    }

    /// Stacks `other` below `self`; schemas must agree.
    pub fn vstack(&self, other: &Self) -> Result<Self> {
        if self.feature_names != other.feature_names {
            return Err(Error::SchemaMismatch(
                "cannot stack matrices with different columns".into(),
            ));
        }
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        Self::new(values, self.feature_names.clone())
    }

    /// Uniform random subset of at most `max_rows` rows, order preserved.
    pub fn subsample<R: Rng + ?Sized>(&self, max_rows: usize, rng: &mut R) -> Result<Self> {
        if max_rows >= self.n_rows {
            return Ok(self.clone());
        }
        let mut picked = index::sample(rng, self.n_rows, max_rows).into_vec();
        picked.sort_unstable();
        self.select_rows(&picked)
    }

    pub(crate) fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_rows, self.n_cols(), &self.values)
    }
}

/// Column selection and categorical encodings for [`load_csv`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub feature_columns: Vec<String>,
    /// Per-column ordinal map from raw string to numeric code.
    #[serde(default)]
    pub categorical: BTreeMap<String, BTreeMap<String, f64>>,
    #[serde(default = "default_true")]
    pub drop_missing: bool,
}

fn default_true() -> bool {
    true
}

impl CsvSchema {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            feature_columns: columns.into_iter().map(Into::into).collect(),
            categorical: BTreeMap::new(),
            drop_missing: true,
        }
    }

    pub fn with_encoding(mut self, column: &str, map: BTreeMap<String, f64>) -> Self {
        self.categorical.insert(column.to_string(), map);
        self
    }

    pub fn drop_missing(mut self, flag: bool) -> Self {
        self.drop_missing = flag;
        self
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<RecordMatrix> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

/// Parses CSV with a header row, keeping only `schema.feature_columns`.
pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<RecordMatrix> {
    if schema.feature_columns.is_empty() {
        return Err(Error::InvalidParameter(
            "no feature columns selected".into(),
        ));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let positions = schema
        .feature_columns
        .iter()
        .map(|c| {
            headers
                .iter()
                .position(|h| h == c)
                .ok_or_else(|| Error::MissingColumn(c.clone()))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut values = Vec::new();
    let mut row_buf = Vec::with_capacity(positions.len());
    'rows: for (row_idx, record) in rdr.records().enumerate() {
        let record = record?;
        row_buf.clear();
        for (col, &pos) in schema.feature_columns.iter().zip(&positions) {
            let raw = record.get(pos).unwrap_or("");
            if MISSING_TOKENS.contains(&raw.to_ascii_lowercase().as_str()) {
                if schema.drop_missing {
                    continue 'rows;
                }
                return Err(Error::MissingValue {
                    row: row_idx + 1,
                    column: col.clone(),
                });
            }
            let parsed = match schema.categorical.get(col) {
                Some(map) => map.get(raw).copied(),
                None => raw.parse::<f64>().ok().filter(|v| v.is_finite()),
            };
            match parsed {
                Some(v) => row_buf.push(v),
                None => {
                    return Err(Error::NonNumeric {
                        row: row_idx + 1,
                        column: col.clone(),
                        value: raw.to_string(),
                    })
                }
            }
        }
        values.extend_from_slice(&row_buf);
    }
    if values.is_empty() {
        return Err(Error::EmptyResult);
    }
    RecordMatrix::new(values, schema.feature_columns.clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBounds {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

/// Per-feature affine map `x ↦ 2(x − lo)/(hi − lo) − 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub features: Vec<FeatureBounds>,
}

impl NormalizationSpec {
    /// Maps the observed range of every feature of `x` onto `[−1, 1]`.
    pub fn fit(x: &RecordMatrix) -> Result<Self> {
        let features = x
            .feature_names()
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let (lo, hi) = x
                    .column(j)
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                        (lo.min(v), hi.max(v))
                    });
                if hi <= lo {
                    return Err(Error::ConstantFeature(name.clone()));
                }
                Ok(FeatureBounds {
                    name: name.clone(),
                    lo,
                    hi,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { features })
    }

    /// Applies the map, clipping anything that lands outside `[−1, 1]`.
    pub fn apply(&self, x: &RecordMatrix) -> Result<RecordMatrix> {
        self.check_schema(x)?;
        let m = self.features.len();
        let values = x
            .values()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let b = &self.features[i % m];
                (2.0 * (v - b.lo) / (b.hi - b.lo) - 1.0).clamp(-1.0, 1.0)
            })
            .collect();
        RecordMatrix::new(values, x.feature_names().to_vec())
    }

    /// Inverse affine map (no clipping to undo).
    pub fn invert(&self, x: &RecordMatrix) -> Result<RecordMatrix> {
        self.check_schema(x)?;
        let m = self.features.len();
        let values = x
            .values()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let b = &self.features[i % m];
                (v + 1.0) * 0.5 * (b.hi - b.lo) + b.lo
            })
            .collect();
        RecordMatrix::new(values, x.feature_names().to_vec())
    }

    fn check_schema(&self, x: &RecordMatrix) -> Result<()> {
        let same = x.n_cols() == self.features.len()
            && self
                .features
                .iter()
                .zip(x.feature_names())
                .all(|(b, n)| &b.name == n);
        if same {
            Ok(())
        } else {
            Err(Error::SchemaMismatch(format!(
                "normalizer fit on {:?}, applied to {:?}",
                self.features
                    .iter()
                    .map(|b| b.name.as_str())
                    .collect::<Vec<_>>(),
                x.feature_names()
            )))
        }
    }
}

/// Participant (`X1`) and non-participant (`X0`) records with a shared schema.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub participants: RecordMatrix,
    pub non_participants: RecordMatrix,
}

impl SplitDataset {
    pub fn new(participants: RecordMatrix, non_participants: RecordMatrix) -> Result<Self> {
        if participants.feature_names() != non_participants.feature_names() {
            return Err(Error::SchemaMismatch(
                "participant and non-participant columns differ".into(),
            ));
        }
        Ok(Self {
            participants,
            non_participants,
        })
    }

    /// Fits bounds on the participants and applies them (clipped) to both sides.
    pub fn normalized(&self) -> Result<(Self, NormalizationSpec)> {
        let spec = NormalizationSpec::fit(&self.participants)?;
        let split = Self::new(
            spec.apply(&self.participants)?,
            spec.apply(&self.non_participants)?,
        )?;
        Ok((split, spec))
    }
}

/// Declarative predicate on a single column value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", content = "value", rename_all = "snake_case")]
pub enum SplitRule {
    Equals(f64),
    NotEquals(f64),
    AtLeast(f64),
    AtMost(f64),
    GreaterThan(f64),
    LessThan(f64),
}

impl SplitRule {
    pub fn matches(&self, v: f64) -> bool {
        match *self {
            SplitRule::Equals(t) => v == t,
            SplitRule::NotEquals(t) => v != t,
            SplitRule::AtLeast(t) => v >= t,
            SplitRule::AtMost(t) => v <= t,
            SplitRule::GreaterThan(t) => v > t,
            SplitRule::LessThan(t) => v < t,
        }
    }
}

/// Rows where `predicate(row[column])` holds become participants.
pub fn split_by_predicate<P>(
    x: &RecordMatrix,
    column: &str,
    predicate: P,
    drop_split_column: bool,
) -> Result<SplitDataset>
where
    P: Fn(f64) -> bool,
{
    let j = x.column_index(column)?;
    let (yes, no): (Vec<usize>, Vec<usize>) =
        (0..x.n_rows()).partition(|&i| predicate(x.row(i)[j]));
    if yes.is_empty() {
        return Err(Error::EmptySplit("participant"));
    }
    if no.is_empty() {
        return Err(Error::EmptySplit("non-participant"));
    }
    let (mut x1, mut x0) = (x.select_rows(&yes)?, x.select_rows(&no)?);
    if drop_split_column {
        if x.n_cols() == 1 {
            return Err(Error::InvalidParameter(
                "cannot drop the only column".into(),
            ));
        }
        x1 = x1.drop_column(j)?;
        x0 = x0.drop_column(j)?;
    }
    SplitDataset::new(x1, x0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub mean: Vec<f64>,
    /// Row-major `m × m` covariance.
    pub covariance: Vec<Vec<f64>>,
}

/// Two Gaussian mixtures sharing components and differing only in weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub components: Vec<GaussianComponent>,
    pub participant_weights: Vec<f64>,
    pub non_participant_weights: Vec<f64>,
    pub n_participants: usize,
    pub n_non_participants: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn dim(&self) -> usize {
        self.components.first().map_or(0, |c| c.mean.len())
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.components.len();
        if k == 0 {
            return Err(Error::InvalidParameter(
                "synthetic spec needs at least one component".into(),
            ));
        }
        let m = self.dim();
        if m == 0 {
            return Err(Error::InvalidParameter(
                "components must have positive dimension".into(),
            ));
        }
        for (name, w) in [
            ("participant", &self.participant_weights),
            ("non-participant", &self.non_participant_weights),
        ] {
            if w.len() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    got: w.len(),
                });
            }
            if w.iter().any(|&p| !(p >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidParameter(format!(
                    "{name} weights are not a probability vector"
                )));
            }
        }
        if self.n_participants == 0 || self.n_non_participants == 0 {
            return Err(Error::InvalidParameter(
                "sample sizes must be positive".into(),
            ));
        }
        for c in &self.components {
            component_cholesky(c, m)?;
        }
        Ok(())
    }
}

/// True mixture labels, kept apart from the records so they never enter the protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticLabels {
    pub participants: Vec<usize>,
    pub non_participants: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub data: SplitDataset,
    pub labels: SyntheticLabels,
}

fn component_cholesky(c: &GaussianComponent, m: usize) -> Result<DMatrix<f64>> {
    if c.mean.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: c.mean.len(),
        });
    }
    if c.covariance.len() != m || c.covariance.iter().any(|r| r.len() != m) {
        return Err(Error::InvalidParameter(format!(
            "covariance must be {m}×{m}"
        )));
    }
    let cov = DMatrix::from_fn(m, m, |i, j| c.covariance[i][j]);
    if (&cov - cov.transpose()).abs().max() > 1e-12 {
        return Err(Error::NotPositiveDefinite(
            "covariance is not symmetric".into(),
        ));
    }
    cov.cholesky()
        .map(|ch| ch.l())
        .ok_or_else(|| Error::NotPositiveDefinite("covariance has no Cholesky factor".into()))
}

fn feature_names(m: usize) -> Vec<String> {
    (1..=m).map(|j| format!("x{j}")).collect()
}

/// Draws `n` i.i.d. records from the mixture with the given weights.
pub fn sample_mixture<R: Rng + ?Sized>(
    components: &[GaussianComponent],
    weights: &[f64],
    n: usize,
    rng: &mut R,
) -> Result<(RecordMatrix, Vec<usize>)> {
    let m = components.first().map_or(0, |c| c.mean.len());
    let factors = components
        .iter()
        .map(|c| component_cholesky(c, m))
        .collect::<Result<Vec<_>>>()?;
    let picker = WeightedIndex::new(weights).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut values = Vec::with_capacity(n * m);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let k = picker.sample(rng);
        let z = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = &factors[k] * z;
        values.extend(
            components[k]
                .mean
                .iter()
                .zip(x.iter())
                .map(|(mu, dx)| mu + dx),
        );
        labels.push(k);
    }
    Ok((RecordMatrix::new(values, feature_names(m))?, labels))
}

/// Generates participants from the participant weights and non-participants
/// from the non-participant weights; bit-reproducible for a fixed seed.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticSample> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, 0);
    let (x1, l1) = sample_mixture(
        &spec.components,
        &spec.participant_weights,
        spec.n_participants,
        &mut rng,
    )?;
    let mut rng = rng::stream(spec.seed, 1);
    let (x0, l0) = sample_mixture(
        &spec.components,
        &spec.non_participant_weights,
        spec.n_non_participants,
        &mut rng,
    )?;
    Ok(SyntheticSample {
        data: SplitDataset::new(x1, x0)?,
        labels: SyntheticLabels {
            participants: l1,
            non_participants: l0,
        },
    })
}

/// An independent non-participant sample for evaluation, drawn on a stream
/// disjoint from the one [`generate_synthetic`] uses.
pub fn fresh_non_participants(
    spec: &SyntheticSpec,
    n: usize,
    salt: u64,
) -> Result<(RecordMatrix, Vec<usize>)> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, 2 + salt);
    sample_mixture(&spec.components, &spec.non_participant_weights, n, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_schema() -> CsvSchema {
        CsvSchema::new(["a", "b"])
    }

    #[test]
    fn parses_numeric_csv() {
        let text = "a,b,c\n1,2,x\n3,4,y\n5,6,z\n";
        let x = read_csv(text.as_bytes(), &csv_schema()).unwrap();
        assert_eq!((x.n_rows(), x.n_cols()), (3, 2));
        assert_eq!(x.row(2), &[5.0, 6.0]);
    }

    #[test]
    fn drops_rows_with_missing_cells() {
        let text = "a,b\n1,2\n3,\n5,6\n";
        let x = read_csv(text.as_bytes(), &csv_schema()).unwrap();
        assert_eq!((x.n_rows(), x.n_cols()), (2, 2));
        let err = read_csv(text.as_bytes(), &csv_schema().drop_missing(false)).unwrap_err();
        assert!(matches!(err, Error::MissingValue { row: 2, .. }));
    }

    #[test]
    fn empty_file_is_an_error() {
        let err = read_csv("a,b\n".as_bytes(), &csv_schema()).unwrap_err();
        assert_eq!(err.to_string(), "empty result");
    }

    #[test]
    fn non_numeric_without_encoding_fails() {
        let err = read_csv("a,b\n1,high\n".as_bytes(), &csv_schema()).unwrap_err();
        assert!(matches!(err, Error::NonNumeric { .. }));
    }

    #[test]
    fn categorical_encoding_is_applied() {
        let map: BTreeMap<String, f64> = [("none", 0.0), ("once", 1.0), ("many", 2.0)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let schema = csv_schema().with_encoding("b", map);
        let x = read_csv("a,b\n1,once\n2,many\n".as_bytes(), &schema).unwrap();
        assert_eq!(x.values(), &[1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn missing_column_is_reported() {
        let err = read_csv("a,c\n1,2\n".as_bytes(), &csv_schema()).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(c) if c == "b"));
    }

    #[test]
    fn normalizer_maps_range_to_unit_interval() {
        let x =
            RecordMatrix::from_rows(&[vec![0.0, -1.0], vec![5.0, 1.0], vec![10.0, 1.0]]).unwrap();
        let spec = NormalizationSpec::fit(&x).unwrap();
        assert_eq!((spec.features[0].lo, spec.features[0].hi), (0.0, 10.0));
        let y = spec.apply(&x).unwrap();
        assert_eq!(y.column(0).collect::<Vec<_>>(), vec![-1.0, 0.0, 1.0]);
        // already normalized feature maps identically
        assert_eq!(y.column(1).collect::<Vec<_>>(), vec![-1.0, 1.0, 1.0]);
    }

    #[test]
    fn normalizer_clips_out_of_range_values() {
        let fit = RecordMatrix::from_rows(&[vec![0.0], vec![10.0]]).unwrap();
        let spec = NormalizationSpec::fit(&fit).unwrap();
        let other = RecordMatrix::from_rows(&[vec![10.0], vec![12.0], vec![-3.0]]).unwrap();
        let y = spec.apply(&other).unwrap();
        assert_eq!(y.values(), &[1.0, 1.0, -1.0]);
    }

    #[test]
    fn constant_feature_is_rejected() {
        let x = RecordMatrix::from_rows(&[vec![3.0], vec![3.0], vec![3.0]]).unwrap();
        assert!(matches!(
            NormalizationSpec::fit(&x),
            Err(Error::ConstantFeature(_))
        ));
    }

    #[test]
    fn schema_mismatch_is_rejected() {
        let x = RecordMatrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let spec = NormalizationSpec::fit(&x).unwrap();
        let y = RecordMatrix::from_rows(&[vec![0.0, 1.0]]).unwrap();
        assert!(matches!(spec.apply(&y), Err(Error::SchemaMismatch(_))));
    }

    #[test]
    fn split_partitions_rows() {
        let x = RecordMatrix::from_rows_named(
            &[vec![1.0, 0.1], vec![0.0, 0.2], vec![1.0, 0.3]],
            vec!["z".into(), "v".into()],
        )
        .unwrap();
        let s = split_by_predicate(&x, "z", |z| z == 1.0, true).unwrap();
        assert_eq!(s.participants.n_rows(), 2);
        assert_eq!(s.non_participants.n_rows(), 1);
        assert_eq!(s.participants.feature_names(), &["v".to_string()]);
        assert_eq!(s.non_participants.values(), &[0.2]);
        let err = split_by_predicate(&x, "z", |z| z > 5.0, false).unwrap_err();
        assert!(matches!(err, Error::EmptySplit("participant")));
    }

    #[test]
    fn at_least_once_rule_selects_nonzero_counts() {
        let x = RecordMatrix::from_rows_named(
            &[
                vec![0.0, 1.0],
                vec![2.0, 0.0],
                vec![1.0, 2.0],
                vec![0.0, 0.0],
            ],
            vec!["bbs".into(), "news".into()],
        )
        .unwrap();
        let rule = SplitRule::AtLeast(1.0);
        let s = split_by_predicate(&x, "bbs", |v| rule.matches(v), false).unwrap();
        assert!(s.participants.column(0).all(|v| v >= 1.0));
        assert!(s.non_participants.column(0).all(|v| v == 0.0));
    }

    fn spec_k(k: usize) -> SyntheticSpec {
        let comps = (0..k)
            .map(|i| GaussianComponent {
                mean: vec![3.0 * i as f64, 0.0],
                covariance: vec![vec![1.0, 0.2], vec![0.2, 0.5]],
            })
            .collect();
        let uniform = vec![1.0 / k as f64; k];
        SyntheticSpec {
            components: comps,
            participant_weights: uniform.clone(),
            non_participant_weights: uniform,
            n_participants: 100,
            n_non_participants: 120,
            seed: 9,
        }
    }

    #[test]
    fn synthetic_is_reproducible() {
        let a = generate_synthetic(&spec_k(2)).unwrap();
        let b = generate_synthetic(&spec_k(2)).unwrap();
        assert_eq!(a.data, b.data);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.data.participants.n_rows(), 100);
        assert_eq!(a.data.non_participants.n_rows(), 120);
    }

    #[test]
    fn single_component_ignores_weights() {
        let s = generate_synthetic(&spec_k(1)).unwrap();
        assert!(s
            .labels
            .participants
            .iter()
            .chain(&s.labels.non_participants)
            .all(|&l| l == 0));
    }

    #[test]
    fn label_frequencies_follow_weights() {
        let mut spec = spec_k(3);
        spec.non_participant_weights = vec![0.1, 0.3, 0.6];
        spec.n_non_participants = 30_000;
        let s = generate_synthetic(&spec).unwrap();
        for (k, &p) in spec.non_participant_weights.iter().enumerate() {
            let freq = s
                .labels
                .non_participants
                .iter()
                .filter(|&&l| l == k)
                .count() as f64
                / 30_000.0;
            assert!((freq - p).abs() < 0.01, "class {k}: {freq} vs {p}");
        }
    }

    #[test]
    fn non_pd_covariance_is_rejected() {
        let mut spec = spec_k(2);
        spec.components[1].covariance = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        assert!(matches!(
            generate_synthetic(&spec),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn synthetic_spec_round_trips_json() {
        let spec = spec_k(2);
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<SyntheticSpec>(&text).unwrap(), spec);
    }
}
