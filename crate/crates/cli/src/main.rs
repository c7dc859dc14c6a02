use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use dipps::eval::DiscreteDistribution;
use dipps::experiment::{
    cell_seed, evaluate, prepare_data, run_experiment, write_report, ExperimentConfig,
};
use dipps::ldp::PrivacyBudget;
use dipps::model::{fit_class_model, ClassAssignmentModel};
use dipps::pipeline::{compose_entire_estimate, estimate_from_transcript, Estimate, Truth};
use dipps::protocol::{run_round, Mechanism, RoundTranscript};
use dipps::server::WeightedDataset;

#[derive(Parser)]
#[command(
    name = "dipps",
    version,
    about = "Participation-bias correction under local differential privacy"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the class model on the participants and save it.
    Fit(Common),
    /// Simulate collection rounds and save their transcripts.
    Round {
        #[command(flatten)]
        common: Common,
        /// Model document from `fit`; needed for ps and dipps rounds.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run the full experiment grid and write report tables.
    Run(Common),
    /// Score a saved transcript or weighted dataset against the truth.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "weights", required_unless_present = "weights")]
        transcript: Option<PathBuf>,
        /// Non-participant estimate as a weighted CSV (trailing `mass` column).
        #[arg(long)]
        weights: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment config (.toml or .json).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated privacy budgets.
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    /// Comma-separated subset of naive,ps,dipps,laplace,hybrid.
    #[arg(long, value_delimiter = ',')]
    mechanisms: Option<Vec<Mechanism>>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut config = ExperimentConfig::load(&self.config)
            .with_context(|| format!("loading {}", self.config.display()))?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(eps) = &self.eps {
            config.epsilons = eps.clone();
        }
        if let Some(m) = &self.mechanisms {
            config.mechanisms = m.clone();
        }
        config.validate()?;
        fs::create_dir_all(&self.out_dir)
            .with_context(|| format!("creating {}", self.out_dir.display()))?;
        Ok(config)
    }
}

fn write(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))?;
    println!("{}", path.display());
    Ok(())
}

fn fit(common: &Common) -> Result<()> {
    let config = common.load()?;
    let data = prepare_data(&config.dataset)?;
    let model = fit_class_model(&data.split.participants, &config.model_config(0))?;
    info!(
        "fitted {} classes on {} features",
        model.k(),
        model.n_features()
    );
    write(&common.out_dir.join("model.json"), &model.to_json()?)?;
    write(
        &common.out_dir.join("normalization.json"),
        &serde_json::to_string_pretty(&data.normalization)?,
    )
}

fn round(common: &Common, model_path: Option<&Path>) -> Result<()> {
    let config = common.load()?;
    let data = prepare_data(&config.dataset)?;
    let model = model_path
        .map(|p| -> Result<ClassAssignmentModel> {
            let doc = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(ClassAssignmentModel::from_json(&doc)?)
        })
        .transpose()?;
    for &mech in &config.mechanisms {
        if mech == Mechanism::Naive {
            info!("naive has no collection round; skipped");
            continue;
        }
        if mech.is_categorical() && model.is_none() {
            bail!("{mech} rounds need --model");
        }
        let budgets: Vec<Option<f64>> = if mech.uses_epsilon() {
            config.epsilons.iter().copied().map(Some).collect()
        } else {
            vec![None]
        };
        for eps in budgets {
            let seed = cell_seed(config.seed, mech, eps, 0);
            let budget = PrivacyBudget::new(eps.unwrap_or(1.0))?;
            let t = run_round(
                model.as_ref(),
                &data.split.non_participants,
                budget,
                mech,
                seed,
            )?;
            let name = match eps {
                Some(e) => format!("transcript-{mech}-eps{e}.jsonl"),
                None => format!("transcript-{mech}.jsonl"),
            };
            let path = common.out_dir.join(name);
            t.save(&path)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn eval(common: &Common, transcript: Option<&Path>, weights: Option<&Path>) -> Result<()> {
    let config = common.load()?;
    let data = prepare_data(&config.dataset)?;
    let x1 = &data.split.participants;
    let n0 = data.split.non_participants.n_rows();
    let truth = Truth::of(&data.split)?;
    let (stem, nonparticipant, entire) = match (transcript, weights) {
        (Some(path), _) => {
            let t = RoundTranscript::load(path)?;
            if t.n_clients() != n0 {
                bail!(
                    "transcript has {} clients but the dataset has {n0} non-participants",
                    t.n_clients()
                );
            }
            let est = estimate_from_transcript(x1, &t, &config.inversion)?;
            if let Estimate::Distribution(d) = &est.nonparticipant {
                let w = WeightedDataset::new(d.points().clone(), d.masses().to_vec())?;
                let out = common
                    .out_dir
                    .join(format!("{}-weights.csv", file_stem(path)));
                w.save_csv(&out)?;
                println!("{}", out.display());
            }
            if let Some(u) = &est.class_mass {
                info!("estimated non-participant class mass: {:?}", u.masses);
            }
            (file_stem(path), est.nonparticipant, est.entire)
        }
        (None, Some(path)) => {
            let w = WeightedDataset::load_csv(path)?;
            let est = Estimate::Distribution(DiscreteDistribution::from(w));
            let entire = compose_entire_estimate(x1, &est, n0)?;
            (file_stem(path), est, entire)
        }
        (None, None) => bail!("pass --transcript or --weights"),
    };
    let mut body = String::from("target,value\n");
    for (target, value) in evaluate(&nonparticipant, &entire, &truth, &config)? {
        body.push_str(&format!("{target},{value}\n"));
    }
    print!("{body}");
    write(&common.out_dir.join(format!("{stem}-metrics.csv")), &body)
}

fn file_stem(p: &Path) -> String {
    p.file_stem()
        .map_or_else(|| "estimate".into(), |s| s.to_string_lossy().into_owned())
}

fn run(common: &Common) -> Result<()> {
    let config = common.load()?;
    let report = run_experiment(&config)?;
    for path in write_report(&report, &common.out_dir)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Fit(c) => fit(c),
        Command::Round { common, model } => round(common, model.as_deref()),
        Command::Run(c) => run(c),
        Command::Eval {
            common,
            transcript,
            weights,
        } => eval(common, transcript.as_deref(), weights.as_deref()),
    }
}
