use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use lapace_core::artifact::{self, ClassifierArtifact, LgmvaeArtifact};
use lapace_core::config::RunConfig;
use lapace_core::data::{read_feature_csv, write_csv, RawTable};
use lapace_core::lapace::{ConstraintSet, TauGrid, DEFAULT_STEPS};
use lapace_core::pipeline;

use crate::server;
use crate::Failure;

#[derive(Parser, Debug)]
#[command(name = "lapace", version, about = "Counterfactual paths through the latent space of a label-conditional mixture VAE")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train the classifier to be explained.
    TrainClassifier {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the master seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the generative model on the classifier's predictions.
    ///
    /// The artifact is written even when centroid validation fails; the
    /// command then exits with status 2.
    TrainLgmvae {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        classifier: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write counterfactual paths for each row of a CSV, as JSON lines.
    Generate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        classifier: PathBuf,
        /// Headered CSV in raw units; a label column is not needed.
        #[arg(long)]
        inputs: PathBuf,
        /// Target class name. Defaults to the class after the predicted one.
        #[arg(long)]
        target: Option<String>,
        /// Number of interpolation steps, endpoints included.
        #[arg(long, default_value_t = DEFAULT_STEPS)]
        grid: usize,
        /// Constraint file (JSON list of terms); enables corrected paths.
        #[arg(long)]
        constraints: Option<PathBuf>,
        #[arg(long, default_value_t = 0.05)]
        learning_rate: f64,
        #[arg(long, default_value_t = 50)]
        max_iterations: usize,
        /// Output file; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the metric suite and write a JSON report.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        classifier: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Draw synthetic rows of one class and write them as CSV.
    Sample {
        #[arg(long)]
        model: PathBuf,
        /// Class name.
        #[arg(long)]
        label: String,
        #[arg(long, short)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the JSON API.
    Serve {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        classifier: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
    },
}

pub fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::TrainClassifier { config, out, seed } => train_classifier(&config, &out, seed),
        Command::TrainLgmvae { config, classifier, out, seed } => train_lgmvae(&config, &classifier, &out, seed),
        Command::Generate {
            model,
            classifier,
            inputs,
            target,
            grid,
            constraints,
            learning_rate,
            max_iterations,
            out,
        } => {
            let constraints = constraints
                .map(|p| -> Result<ConstraintSet, Failure> {
                    Ok(ConstraintSet {
                        terms: ConstraintSet::load_terms(&p)?,
                        learning_rate,
                        max_iterations,
                    })
                })
                .transpose()?;
            generate(&model, &classifier, &inputs, target.as_deref(), grid, constraints.as_ref(), out.as_deref())
        }
        Command::Evaluate { config, classifier, model, out, seed } => {
            evaluate(&config, &classifier, &model, out.as_deref(), seed)
        }
        Command::Sample { model, label, n, seed, out } => sample(&model, &label, n, seed, &out),
        Command::Serve { model, classifier, bind } => server::serve(model, classifier, bind),
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig, Failure> {
    let cfg = RunConfig::load(path)?;
    Ok(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::usage(format!("{}: {e}", p.display()))),
        None => std::io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::usage(e.to_string())),
    }
}

fn train_classifier(config: &Path, out: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let cfg = load_config(config, seed)?;
    let data = pipeline::prepare_data(&cfg)?;
    let clf = pipeline::train_classifier(&cfg, &data)?;
    artifact::save(&clf, out)?;
    eprintln!(
        "{} classifier: train accuracy {:.4}, test accuracy {:.4}",
        cfg.classifier.kind(),
        clf.train_accuracy,
        clf.test_accuracy
    );
    eprintln!("wrote {} (sha256 {})", out.display(), artifact::file_digest(out)?);
    Ok(())
}

fn train_lgmvae(config: &Path, classifier: &Path, out: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let cfg = load_config(config, seed)?;
    let clf: ClassifierArtifact = artifact::load(classifier)?;
    let data = pipeline::prepare_data(&cfg)?;
    let trained = pipeline::train_lgmvae(&cfg, &data, &clf)?;
    artifact::save(&trained, out)?;
    let report = &trained.training;
    eprintln!(
        "trained {} epochs (best {}), validation loss {:.4} -> {:.4}",
        report.history.len() - 1,
        report.best_epoch,
        report.history[0].validation,
        report.history[report.best_epoch].validation
    );
    eprintln!("wrote {} (sha256 {})", out.display(), artifact::file_digest(out)?);
    let check = &trained.centroid_check;
    if !trained.model.recourse_ready {
        return Err(Failure::validation(format!(
            "model is not recourse-ready: decoded centroids of clusters {:?} are misclassified ({} of {} correct)",
            check.failing,
            check.n_clusters - check.failing.len(),
            check.n_clusters
        )));
    }
    eprintln!("all {} centroids classified correctly; model is recourse-ready", check.n_clusters);
    Ok(())
}

fn load_pair(model: &Path, classifier: &Path) -> Result<(LgmvaeArtifact, ClassifierArtifact), Failure> {
    let m: LgmvaeArtifact = artifact::load(model)?;
    let c: ClassifierArtifact = artifact::load(classifier)?;
    pipeline::same_schema(&m.model.schema, &c.schema)?;
    Ok((m, c))
}

fn generate(
    model: &Path,
    classifier: &Path,
    inputs: &Path,
    target: Option<&str>,
    grid: usize,
    constraints: Option<&ConstraintSet>,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let (m, c) = load_pair(model, classifier)?;
    let schema = &m.model.schema;
    let target = target.map(|t| schema.label_index(t)).transpose()?;
    let grid = TauGrid::uniform(grid).map_err(|e| Failure::usage(e.to_string()))?;
    let table = read_feature_csv(inputs, schema)?;
    let records = pipeline::generate(&m.model, &c.classifier, &table, target, &grid, constraints)?;
    emit(&pipeline::to_jsonl(&records)?, out)
}

fn evaluate(
    config: &Path,
    classifier: &Path,
    model: &Path,
    out: Option<&Path>,
    seed: Option<u64>,
) -> Result<(), Failure> {
    let cfg = load_config(config, seed)?;
    let (m, c) = load_pair(model, classifier)?;
    let data = pipeline::prepare_data(&cfg)?;
    let report = pipeline::evaluate(&cfg, &data, &c, &m.model)?;
    let mut text = serde_json::to_string_pretty(&report).map_err(lapace_core::Error::from)?;
    text.push('\n');
    emit(&text, out)
}

fn sample(model: &Path, label: &str, n: usize, seed: u64, out: &Path) -> Result<(), Failure> {
    let m: LgmvaeArtifact = artifact::load(model)?;
    let schema = &m.model.schema;
    let y = schema.label_index(label)?;
    let ds = m.model.sample(y, n, seed)?;
    let mut table = RawTable::default();
    for row in ds.x.rows() {
        table.rows.push(schema.decode_row(&row.to_vec())?);
        table.labels.push(y);
    }
    write_csv(out, schema, &table)?;
    Ok(())
}
