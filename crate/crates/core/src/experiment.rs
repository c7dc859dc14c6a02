//! Batch experiments: every (mechanism, ε, repetition) cell runs the full
//! pipeline and is scored against the held-out non-participants.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    generate_synthetic, load_csv, split_by_predicate, CsvSchema, NormalizationSpec, SplitDataset,
    SplitRule, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::eval::{mae_per_attribute, wasserstein1, DiscreteDistribution, StatReport, Statistic};
use crate::ldp::PrivacyBudget;
use crate::model::{
    default_k_grid, fit_class_model, ClassAssignmentModel, EmConfig, KChoice, ModelConfig,
};
use crate::pipeline::{run_method, Estimate, MethodEstimate, Population, Truth};
use crate::protocol::Mechanism;
use crate::rng;
use crate::server::InversionConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Wasserstein,
    Mean,
    Variance,
    Median,
}

impl Metric {
    pub const ALL: [Metric; 4] = [
        Metric::Wasserstein,
        Metric::Mean,
        Metric::Variance,
        Metric::Median,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Wasserstein => "wasserstein",
            Metric::Mean => "mean",
            Metric::Variance => "variance",
            Metric::Median => "median",
        }
    }

    fn statistic(self) -> Option<Statistic> {
        match self {
            Metric::Wasserstein => None,
            Metric::Mean => Some(Statistic::Mean),
            Metric::Variance => Some(Statistic::Variance),
            Metric::Median => Some(Statistic::Median),
        }
    }
}

/// A metric evaluated on one population, written `metric/population`
/// (e.g. `wasserstein/nonparticipant`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Target {
    pub metric: Metric,
    pub population: Population,
}

impl Target {
    pub fn all() -> Vec<Target> {
        let mut out = Vec::new();
        for metric in Metric::ALL {
            for population in [Population::Nonparticipant, Population::Entire] {
                out.push(Target { metric, population });
            }
        }
        out
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.metric.name(), self.population.name())
    }
}

impl FromStr for Target {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::Config(format!(
                "unknown target `{s}`; expected e.g. `mean/nonparticipant`"
            ))
        };
        let (m, p) = s.split_once('/').ok_or_else(bad)?;
        let metric = Metric::ALL
            .into_iter()
            .find(|x| x.name() == m.trim())
            .ok_or_else(bad)?;
        let population = Population::ALL
            .into_iter()
            .find(|x| x.name() == p.trim())
            .ok_or_else(bad)?;
        Ok(Target { metric, population })
    }
}

impl TryFrom<String> for Target {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Target> for String {
    fn from(t: Target) -> Self {
        t.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub column: String,
    pub rule: SplitRule,
    /// Remove the split column from the features afterwards.
    #[serde(default = "yes")]
    pub drop_column: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    Csv {
        path: PathBuf,
        schema: CsvSchema,
        split: SplitConfig,
    },
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub dataset: DatasetSource,
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    #[serde(default = "default_mechanisms")]
    pub mechanisms: Vec<Mechanism>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_variance")]
    pub variance_target: f64,
    #[serde(default = "default_k")]
    pub k: KChoice,
    /// EM settings; the seed field is replaced per repetition.
    #[serde(default)]
    pub em: EmConfig,
    #[serde(default)]
    pub inversion: InversionConfig,
    #[serde(default = "Target::all")]
    pub targets: Vec<Target>,
    /// Support points kept per side when computing transport distances.
    #[serde(default = "default_ot_subsample")]
    pub ot_subsample: usize,
    #[serde(default)]
    pub ot_seed: u64,
    /// Budgets at which ε-dependent methods get a Wasserstein score.
    #[serde(default = "default_wasserstein_epsilons")]
    pub wasserstein_epsilons: Vec<f64>,
}

fn default_name() -> String {
    "dataset".into()
}
fn default_epsilons() -> Vec<f64> {
    vec![0.5, 1.0, 2.0, 4.0, 8.0]
}
fn default_mechanisms() -> Vec<Mechanism> {
    Mechanism::ALL.to_vec()
}
fn default_repetitions() -> usize {
    5
}
fn default_variance() -> f64 {
    0.8
}
fn default_k() -> KChoice {
    KChoice::Grid(default_k_grid())
}
fn default_ot_subsample() -> usize {
    2000
}
fn default_wasserstein_epsilons() -> Vec<f64> {
    vec![1.0]
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetSource) -> Self {
        Self {
            name: default_name(),
            dataset,
            epsilons: default_epsilons(),
            mechanisms: default_mechanisms(),
            repetitions: default_repetitions(),
            seed: 0,
            variance_target: default_variance(),
            k: default_k(),
            em: EmConfig::default(),
            inversion: InversionConfig::default(),
            targets: Target::all(),
            ot_subsample: default_ot_subsample(),
            ot_seed: 0,
            wasserstein_epsilons: default_wasserstein_epsilons(),
        }
    }

    /// Reads a `.toml` or `.json` config. Relative CSV paths resolve
    /// against the config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: Self = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text)?,
            _ => toml::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
        };
        if let DatasetSource::Csv { path: csv, .. } = &mut config.dataset {
            if csv.is_relative() {
                if let Some(dir) = path.parent() {
                    *csv = dir.join(&*csv);
                }
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(m.into()));
        if self.repetitions == 0 {
            return err("repetitions must be at least 1");
        }
        if self.mechanisms.is_empty() {
            return err("at least one mechanism is required");
        }
        if self.targets.is_empty() {
            return err("at least one target is required");
        }
        if self.epsilons.is_empty() && self.mechanisms.iter().any(|m| m.uses_epsilon()) {
            return err("epsilon list is empty");
        }
        for &e in self.epsilons.iter().chain(&self.wasserstein_epsilons) {
            PrivacyBudget::new(e)
                .map_err(|_| Error::Config(format!("epsilon {e} is not positive")))?;
        }
        if !(self.variance_target > 0.0 && self.variance_target <= 1.0) {
            return err("variance_target must lie in (0, 1]");
        }
        if self.ot_subsample == 0 {
            return err("ot_subsample must be positive");
        }
        if let DatasetSource::Synthetic(spec) = &self.dataset {
            spec.validate()?;
        }
        Ok(())
    }

    pub fn model_config(&self, repetition: usize) -> ModelConfig {
        ModelConfig {
            variance_target: self.variance_target,
            k: self.k.clone(),
            em: EmConfig {
                seed: rng::derive_seed(self.seed, &[rng::label("model"), repetition as u64]),
                ..self.em
            },
        }
    }

    fn needs_model(&self) -> bool {
        self.mechanisms.iter().any(|m| m.is_categorical())
    }
}

/// Normalized split plus the bounds used to normalize it.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub split: SplitDataset,
    pub normalization: NormalizationSpec,
}

pub fn prepare_data(source: &DatasetSource) -> Result<PreparedData> {
    let raw = match source {
        DatasetSource::Csv {
            path,
            schema,
            split,
        } => {
            let mut schema = schema.clone();
            let mut drop = split.drop_column;
            if !schema.feature_columns.contains(&split.column) {
                schema.feature_columns.push(split.column.clone());
                drop = true;
            }
            let x = load_csv(path, &schema)?;
            let rule = split.rule;
            split_by_predicate(&x, &split.column, |v| rule.matches(v), drop)?
        }
        DatasetSource::Synthetic(spec) => generate_synthetic(spec)?.data,
    };
    let (split, normalization) = raw.normalized()?;
    Ok(PreparedData {
        split,
        normalization,
    })
}

/// One scored cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub method: Mechanism,
    /// `None` for methods that do not use the budget.
    pub epsilon: Option<f64>,
    pub repetition: usize,
    pub target: Target,
    pub value: f64,
}

/// Mean and sample standard deviation of one (method, ε, target) across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Mechanism,
    pub epsilon: Option<f64>,
    pub target: Target,
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub dataset: String,
    pub seed: u64,
    pub repetitions: usize,
    pub epsilons: Vec<f64>,
    pub wasserstein_epsilons: Vec<f64>,
    pub mechanisms: Vec<Mechanism>,
    pub targets: Vec<Target>,
    pub n_participants: usize,
    pub n_non_participants: usize,
    pub n_features: usize,
    /// The class model is refit for every repetition with its own EM seed.
    pub model_refit: String,
    /// Chosen number of classes per repetition.
    pub chosen_k: Vec<usize>,
    pub ot_subsample: usize,
    /// Targets a method cannot produce, e.g. `hybrid: median/entire`.
    pub unsupported: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub metadata: ReportMetadata,
    pub cells: Vec<CellResult>,
    pub summary: Vec<SummaryRow>,
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    method: Mechanism,
    epsilon: Option<f64>,
    repetition: usize,
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.epsilon {
            Some(e) => write!(f, "{} eps={e} rep={}", self.method, self.repetition),
            None => write!(f, "{} rep={}", self.method, self.repetition),
        }
    }
}

impl Cell {
    fn seed(&self, master: u64) -> u64 {
        cell_seed(master, self.method, self.epsilon, self.repetition)
    }
}

/// Round seed of one grid cell; depends only on the cell's coordinates.
pub fn cell_seed(master: u64, method: Mechanism, epsilon: Option<f64>, repetition: usize) -> u64 {
    let eps = epsilon.map_or(0, f64::to_bits);
    rng::derive_seed(master, &[rng::label(method.name()), eps, repetition as u64])
}

fn same_eps(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

/// Transport distance on subsamples drawn with fixed seeds, so every method
/// is compared against the same truth sample.
fn subsampled_w1(
    est: &DiscreteDistribution,
    truth: &DiscreteDistribution,
    config: &ExperimentConfig,
) -> Result<f64> {
    let n = config.ot_subsample;
    let mut r_est = rng::stream(
        rng::derive_seed(config.ot_seed, &[rng::label("ot-estimate")]),
        0,
    );
    let mut r_truth = rng::stream(
        rng::derive_seed(config.ot_seed, &[rng::label("ot-truth")]),
        0,
    );
    wasserstein1(
        &est.subsample(n, &mut r_est)?,
        &truth.subsample(n, &mut r_truth)?,
    )
}

fn metric_value(
    estimate: &Estimate,
    reference: &DiscreteDistribution,
    metric: Metric,
    config: &ExperimentConfig,
) -> Result<Option<f64>> {
    match metric.statistic() {
        None => estimate
            .distribution()
            .map(|d| subsampled_w1(d, reference, config))
            .transpose(),
        Some(stat) => estimate
            .statistic(stat)
            .map(|v| mae_per_attribute(&v, StatReport::of(reference).get(stat)))
            .transpose(),
    }
}

/// Scores a pair of estimates on every configured target they support.
pub fn evaluate(
    nonparticipant: &Estimate,
    entire: &Estimate,
    truth: &Truth,
    config: &ExperimentConfig,
) -> Result<Vec<(Target, f64)>> {
    let mut out = Vec::new();
    for &target in &config.targets {
        let estimate = match target.population {
            Population::Entire => entire,
            Population::Nonparticipant => nonparticipant,
        };
        if let Some(v) = metric_value(
            estimate,
            truth.get(target.population),
            target.metric,
            config,
        )? {
            out.push((target, v));
        }
    }
    Ok(out)
}

fn score(
    est: &MethodEstimate,
    truth: &Truth,
    cell: &Cell,
    config: &ExperimentConfig,
) -> Result<Vec<CellResult>> {
    let mut out = Vec::new();
    for &target in &config.targets {
        if target.metric == Metric::Wasserstein
            && cell
                .epsilon
                .is_some_and(|e| !config.wasserstein_epsilons.iter().any(|&w| same_eps(e, w)))
        {
            continue;
        }
        let estimate = est.get(target.population);
        if let Some(value) = metric_value(
            estimate,
            truth.get(target.population),
            target.metric,
            config,
        )? {
            out.push(CellResult {
                method: cell.method,
                epsilon: cell.epsilon,
                repetition: cell.repetition,
                target,
                value,
            });
        }
    }
    Ok(out)
}

/// Runs every cell of the grid. Cells are independent and run in
/// parallel; results do not depend on scheduling.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let data = prepare_data(&config.dataset)?;
    let split = &data.split;
    let truth = Truth::of(split)?;

    let models: Vec<Option<ClassAssignmentModel>> = (0..config.repetitions)
        .into_par_iter()
        .map(|rep| {
            if !config.needs_model() {
                return Ok(None);
            }
            fit_class_model(&split.participants, &config.model_config(rep))
                .map(Some)
                .map_err(|e| Error::Cell {
                    cell: format!("model rep={rep}"),
                    source: Box::new(e),
                })
        })
        .collect::<Result<_>>()?;

    let mut cells = Vec::new();
    for &method in &config.mechanisms {
        match method {
            // Deterministic given the data: one run is enough.
            Mechanism::Naive => cells.push(Cell {
                method,
                epsilon: None,
                repetition: 0,
            }),
            Mechanism::Ps => cells.extend((0..config.repetitions).map(|repetition| Cell {
                method,
                epsilon: None,
                repetition,
            })),
            _ => {
                for &e in &config.epsilons {
                    cells.extend((0..config.repetitions).map(|repetition| Cell {
                        method,
                        epsilon: Some(e),
                        repetition,
                    }));
                }
            }
        }
    }

    let results: Vec<Vec<CellResult>> = cells
        .par_iter()
        .map(|cell| {
            let run = || -> Result<Vec<CellResult>> {
                // The direct-sampling round never looks at the budget.
                let eps = PrivacyBudget::new(cell.epsilon.unwrap_or(1.0))?;
                let model = models[cell.repetition].as_ref();
                let est = run_method(
                    split,
                    model,
                    cell.method,
                    eps,
                    cell.seed(config.seed),
                    &config.inversion,
                )?;
                score(&est, &truth, cell, config)
            };
            run().map_err(|e| Error::Cell {
                cell: cell.to_string(),
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let cells: Vec<CellResult> = results.into_iter().flatten().collect();

    let mut unsupported = Vec::new();
    for &method in &config.mechanisms {
        for &target in &config.targets {
            let evaluated_somewhere = target.metric != Metric::Wasserstein
                || !method.uses_epsilon()
                || config
                    .epsilons
                    .iter()
                    .any(|&e| config.wasserstein_epsilons.iter().any(|&w| same_eps(e, w)));
            if evaluated_somewhere
                && !cells
                    .iter()
                    .any(|c| c.method == method && c.target == target)
            {
                log::warn!("{method} produces no result for {target}; row omitted");
                unsupported.push(format!("{method}: {target}"));
            }
        }
    }

    let metadata = ReportMetadata {
        dataset: config.name.clone(),
        seed: config.seed,
        repetitions: config.repetitions,
        epsilons: config.epsilons.clone(),
        wasserstein_epsilons: config.wasserstein_epsilons.clone(),
        mechanisms: config.mechanisms.clone(),
        targets: config.targets.clone(),
        n_participants: split.participants.n_rows(),
        n_non_participants: split.non_participants.n_rows(),
        n_features: split.participants.n_cols(),
        model_refit: "per-repetition".into(),
        chosen_k: models
            .iter()
            .flatten()
            .map(ClassAssignmentModel::k)
            .collect(),
        ot_subsample: config.ot_subsample,
        unsupported,
    };
    let summary = summarize(&cells);
    Ok(ExperimentReport {
        metadata,
        cells,
        summary,
    })
}

fn method_rank(m: Mechanism) -> usize {
    Mechanism::ALL
        .iter()
        .position(|&x| x == m)
        .unwrap_or(usize::MAX)
}

fn summarize(cells: &[CellResult]) -> Vec<SummaryRow> {
    type Key = (Target, usize, Option<u64>);
    let mut groups: BTreeMap<Key, (Mechanism, Option<f64>, Vec<f64>)> = BTreeMap::new();
    for c in cells {
        // f64 bit patterns of positive values sort like the values.
        let key = (c.target, method_rank(c.method), c.epsilon.map(f64::to_bits));
        groups
            .entry(key)
            .or_insert((c.method, c.epsilon, Vec::new()))
            .2
            .push(c.value);
    }
    groups
        .into_iter()
        .map(|((target, _, _), (method, epsilon, values))| {
            let n = values.len();
            let mean = values.iter().sum::<f64>() / n as f64;
            let std = if n > 1 {
                (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64)
                    .sqrt()
            } else {
                0.0
            };
            SummaryRow {
                method,
                epsilon,
                target,
                mean,
                std,
                runs: n,
            }
        })
        .collect()
}

fn eps_label(e: Option<f64>) -> String {
    e.map_or(String::new(), |e| e.to_string())
}

/// Markdown tables (one per target: methods × ε) and the summary CSV.
pub fn emit_tables(report: &ExperimentReport) -> Result<(String, String)> {
    let mut md = format!("# {}\n", report.metadata.dataset);
    let targets: BTreeSet<Target> = report.summary.iter().map(|r| r.target).collect();
    for target in report
        .metadata
        .targets
        .iter()
        .filter(|t| targets.contains(t))
    {
        let rows: Vec<&SummaryRow> = report
            .summary
            .iter()
            .filter(|r| r.target == *target)
            .collect();
        let mut columns: Vec<f64> = Vec::new();
        for r in &rows {
            if let Some(e) = r.epsilon {
                if !columns.iter().any(|&c| same_eps(c, e)) {
                    columns.push(e);
                }
            }
        }
        columns.sort_by(f64::total_cmp);
        md.push_str(&format!("\n## {target}\n\n| method |"));
        if columns.is_empty() {
            md.push_str(" value |");
        }
        for e in &columns {
            md.push_str(&format!(" ε={e} |"));
        }
        md.push_str("\n|---|");
        md.push_str(&"---|".repeat(columns.len().max(1)));
        md.push('\n');
        let mut methods: Vec<Mechanism> = rows.iter().map(|r| r.method).collect();
        methods.dedup();
        for method in methods {
            md.push_str(&format!("| {method} |"));
            let mine: Vec<&&SummaryRow> = rows.iter().filter(|r| r.method == method).collect();
            let cell = |r: &SummaryRow| format!(" {:.3} ± {:.3} |", r.mean, r.std);
            if columns.is_empty() {
                md.push_str(&cell(mine[0]));
            }
            for &e in &columns {
                match mine
                    .iter()
                    .find(|r| r.epsilon.is_none_or(|x| same_eps(x, e)))
                {
                    Some(r) => md.push_str(&cell(r)),
                    None => md.push_str(" n/a |"),
                }
            }
            md.push('\n');
        }
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "dataset",
        "method",
        "epsilon",
        "metric",
        "population",
        "mean",
        "std",
        "runs",
    ])?;
    for r in &report.summary {
        w.write_record([
            report.metadata.dataset.clone(),
            r.method.to_string(),
            eps_label(r.epsilon),
            r.target.metric.name().into(),
            r.target.population.name().into(),
            r.mean.to_string(),
            r.std.to_string(),
            r.runs.to_string(),
        ])?;
    }
    Ok((md, csv_string(w)?))
}

/// Long-format plot data keyed by ε. Methods that ignore the budget are
/// repeated at every ε so they plot as flat lines.
pub fn emit_plotdata(report: &ExperimentReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "dataset",
        "method",
        "epsilon",
        "statistic",
        "target",
        "value",
    ])?;
    let meta = &report.metadata;
    for r in &report.summary {
        let grid: Vec<f64> = match r.epsilon {
            Some(e) => vec![e],
            None if r.target.metric == Metric::Wasserstein => meta
                .epsilons
                .iter()
                .copied()
                .filter(|&e| meta.wasserstein_epsilons.iter().any(|&w| same_eps(e, w)))
                .collect(),
            None => meta.epsilons.clone(),
        };
        for e in grid {
            w.write_record([
                meta.dataset.clone(),
                r.method.to_string(),
                e.to_string(),
                r.target.metric.name().into(),
                r.target.population.name().into(),
                r.mean.to_string(),
            ])?;
        }
    }
    csv_string(w)
}

fn csv_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::io("<csv>", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Per-cell results as CSV.
pub fn emit_cells(report: &ExperimentReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "dataset",
        "method",
        "epsilon",
        "repetition",
        "metric",
        "population",
        "value",
    ])?;
    for c in &report.cells {
        w.write_record([
            report.metadata.dataset.clone(),
            c.method.to_string(),
            eps_label(c.epsilon),
            c.repetition.to_string(),
            c.target.metric.name().into(),
            c.target.population.name().into(),
            c.value.to_string(),
        ])?;
    }
    csv_string(w)
}

/// Writes `tables.md`, `summary.csv`, `cells.csv`, `plot.csv` and
/// `metadata.json` into `dir`, returning the paths.
pub fn write_report(report: &ExperimentReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (md, summary) = emit_tables(report)?;
    let files = [
        ("tables.md", md),
        ("summary.csv", summary),
        ("cells.csv", emit_cells(report)?),
        ("plot.csv", emit_plotdata(report)?),
        (
            "metadata.json",
            serde_json::to_string_pretty(&report.metadata)? + "\n",
        ),
    ];
    let mut paths = Vec::new();
    for (name, body) in files {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}
