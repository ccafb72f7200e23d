//! The `concept-cil` command-line tool.
//!
//! Errors print as one line, `error[<kind>]: <message>`, and map to exit
//! codes: 2 for invalid configuration or usage, 3 for invalid data, 1 for
//! anything else.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::data::{Checkpoint, EmbeddingBundle, TaskPlan};
use crate::error::{Error, Result};
use crate::evaluator::{task_accuracy, MetricsReport};
use crate::explain::{build_report, concept_drift, render_svg};
use crate::selector::{fit_selector, match_concepts};
use crate::synth::{generate, SynthConfig};
use crate::tensor::Matrix;
use crate::trainer::{checkpoint_file_name, run_sequence, SelectionLog, TrainConfig};

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "concept-cil", version, about = "Class-incremental concept bottleneck models over precomputed embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic embedding bundle.
    Synth(SynthArgs),
    /// Validate a bundle and optionally write a normalized copy.
    Ingest(IngestArgs),
    /// Run concept selection for one task and print the chosen concepts.
    SelectConcepts(SelectArgs),
    /// Train every task of a bundle's plan.
    Train(TrainArgs),
    /// Recompute metrics from the checkpoints of a run.
    Eval(EvalArgs),
    /// Explain one prediction in terms of concept contributions.
    Explain(ExplainArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with generator settings; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub tasks: Option<usize>,
    #[arg(long)]
    pub classes_per_task: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Bundle directory to validate.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Write the normalized bundle here (must differ from the input).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Zero-based task index.
    #[arg(long)]
    pub task: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output JSON file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Disable prototype augmentation.
    #[arg(long)]
    pub no_augment: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    pub run: PathBuf,
    /// Bundle directory; defaults to the one recorded in the run.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Row index of the sample in the bundle.
    #[arg(long)]
    pub sample: usize,
    /// Class to explain; defaults to the predicted class.
    #[arg(long)]
    pub class: Option<usize>,
    #[arg(long, default_value_t = 7)]
    pub top_k: usize,
    /// Also write an SVG bar chart.
    #[arg(long)]
    pub svg: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Earlier checkpoint to compare contributions against.
    #[arg(long)]
    pub compare: Option<PathBuf>,
}

/// A training configuration file: `dataset`, an optional `task_plan`
/// override, and any [`TrainConfig`] field. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfigFile {
    /// Resolved against the config file's directory when relative.
    pub dataset: PathBuf,
    pub task_plan: Option<TaskPlan>,
    pub train: TrainConfig,
}

#[derive(Serialize)]
struct ResolvedConfig<'a> {
    dataset: &'a Path,
    task_plan: &'a TaskPlan,
    #[serde(flatten)]
    train: &'a TrainConfig,
}

impl RunConfigFile {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut map: Map<String, Value> = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("config is not a JSON object: {e}")))?;
        let dataset = match map.remove("dataset") {
            Some(Value::String(s)) => base_dir.join(s),
            Some(other) => return Err(Error::Config(format!("`dataset` must be a string, got {other}"))),
            None => return Err(Error::Config("missing `dataset`".into())),
        };
        let task_plan = match map.remove("task_plan") {
            None | Some(Value::Null) => None,
            Some(v) => Some(
                serde_json::from_value(v)
                    .map_err(|e| Error::Config(format!("`task_plan`: {e}")))?,
            ),
        };
        let train: TrainConfig = serde_json::from_value(Value::Object(map))
            .map_err(|e| Error::Config(e.to_string()))?;
        train.validate()?;
        Ok(Self {
            dataset,
            task_plan,
            train,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Loads the dataset with the task plan override applied.
    pub fn bundle(&self) -> Result<EmbeddingBundle> {
        let bundle = EmbeddingBundle::ingest(&self.dataset)?;
        match &self.task_plan {
            Some(plan) => bundle.with_task_plan(plan.clone()),
            None => Ok(bundle),
        }
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Task(_) => EXIT_CONFIG,
        Error::Format { .. } | Error::Version { .. } | Error::Data(_) | Error::Consistency(_) => {
            EXIT_DATA
        }
        _ => EXIT_RUNTIME,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {}", e.kind(), e.to_string().replace('\n', " "));
            exit_code(&e)
        }
    }
}

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Ingest(a) => ingest(a),
        Command::SelectConcepts(a) => select_concepts(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Explain(a) => explain(a),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::json(path.display().to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(Error::io(format!("writing {}", path.display())))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::io(format!("creating {}", dir.display())))
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        }
        None => SynthConfig::default(),
    };
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.tasks {
        cfg.tasks = v;
    }
    if let Some(v) = a.classes_per_task {
        cfg.classes_per_task = v;
    }
    if let Some(v) = a.dim {
        cfg.dim = v;
    }
    let bundle = generate(&cfg)?;
    bundle.save(&a.out)?;
    write_json(&a.out.join("synth.json"), &cfg)?;
    println!(
        "wrote {} ({} classes, {} samples, {} concepts, seed {})",
        a.out.display(),
        bundle.num_classes(),
        bundle.images().rows(),
        bundle.concepts().len(),
        cfg.seed
    );
    Ok(())
}

#[derive(Serialize)]
struct IngestSummary {
    dim: usize,
    classes: usize,
    samples: usize,
    concepts: usize,
    tasks: usize,
}

fn ingest(a: IngestArgs) -> Result<()> {
    let bundle = EmbeddingBundle::ingest(&a.dataset)?;
    if let Some(out) = &a.out {
        let same = match (fs::canonicalize(&a.dataset), fs::canonicalize(out)) {
            (Ok(x), Ok(y)) => x == y,
            _ => false,
        };
        if same {
            return Err(Error::Config("ingest never rewrites its input; choose another --out".into()));
        }
        bundle.save(out)?;
    }
    let summary = IngestSummary {
        dim: bundle.dim(),
        classes: bundle.num_classes(),
        samples: bundle.images().rows(),
        concepts: bundle.concepts().len(),
        tasks: bundle.task_plan().num_tasks(),
    };
    println!("{}", serde_json::to_string(&summary).map_err(Error::json("summary"))?);
    Ok(())
}

#[derive(Serialize)]
struct SelectionOutput {
    seed: u64,
    #[serde(flatten)]
    selection: SelectionLog,
    ce_trace: Vec<f64>,
    mahalanobis_trace: Vec<f64>,
}

fn select_concepts(a: SelectArgs) -> Result<()> {
    let mut cfg = RunConfigFile::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    let bundle = cfg.bundle()?;
    let view = bundle.task_view(a.task)?;
    let local: Vec<usize> = view
        .train_labels
        .iter()
        .map(|c| view.classes.iter().position(|k| k == c).expect("task label"))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let fit = fit_selector(
        &view.train_features,
        &local,
        view.classes.len(),
        &view.concept_embeddings,
        cfg.train.concepts_per_task,
        &cfg.train.selector,
        &mut rng,
    )?;
    let chosen = match_concepts(&fit.weights, &view.concept_embeddings);
    let ids: Vec<usize> = chosen.concept_indices.iter().map(|&i| view.concept_ids[i]).collect();
    let out = SelectionOutput {
        seed: cfg.train.seed,
        selection: SelectionLog {
            task: a.task,
            pool_size: view.concept_ids.len(),
            requested: cfg.train.concepts_per_task,
            concepts: ids.iter().map(|&i| bundle.concepts()[i].clone()).collect(),
            concept_ids: ids,
        },
        ce_trace: fit.ce_trace,
        mahalanobis_trace: fit.mahalanobis_trace,
    };
    match &a.out {
        Some(path) => write_json(path, &out),
        None => {
            println!("{}", serde_json::to_string_pretty(&out).map_err(Error::json("selection"))?);
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct SelectionFile<'a> {
    seed: u64,
    tasks: &'a [SelectionLog],
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = RunConfigFile::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    if a.no_augment {
        cfg.train.augment = false;
    }
    let bundle = cfg.bundle()?;
    create_dir(&a.out)?;
    let dataset = fs::canonicalize(&cfg.dataset).unwrap_or_else(|_| cfg.dataset.clone());
    write_json(
        &a.out.join("config.json"),
        &ResolvedConfig {
            dataset: &dataset,
            task_plan: bundle.task_plan(),
            train: &cfg.train,
        },
    )?;
    let run = run_sequence(&bundle, &cfg.train, Some(&a.out.join("checkpoints")))?;
    run.metrics.write(&a.out.join("metrics.json"))?;
    run.write_trace(&a.out.join("trace.jsonl"))?;
    write_json(
        &a.out.join("selection.json"),
        &SelectionFile {
            seed: cfg.train.seed,
            tasks: &run.selections,
        },
    )?;
    println!(
        "seed {}: average incremental accuracy {:.4}, last accuracy {:.4}",
        run.metrics.seed, run.metrics.average_incremental_accuracy, run.metrics.last_accuracy
    );
    Ok(())
}

fn recorded_dataset(run: &Path) -> Result<PathBuf> {
    let path = run.join("config.json");
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| Error::Format {
        file: path.clone(),
        message: e.to_string(),
    })?;
    value
        .get("dataset")
        .and_then(Value::as_str)
        .map(PathBuf::from)
        .ok_or_else(|| Error::Format {
            file: path,
            message: "no `dataset` entry".into(),
        })
}

fn eval(a: EvalArgs) -> Result<()> {
    let dataset = match a.dataset {
        Some(d) => d,
        None => recorded_dataset(&a.run)?,
    };
    let bundle = EmbeddingBundle::ingest(&dataset)?;
    let dir = a.run.join("checkpoints");
    let mut evaluations = Vec::new();
    let mut seed = None;
    for t in 0.. {
        let path = dir.join(checkpoint_file_name(t));
        if !path.exists() {
            break;
        }
        let ckpt = Checkpoint::load(&path)?;
        if ckpt.tasks_completed != t + 1 {
            return Err(Error::Consistency(format!(
                "{} holds {} tasks, expected {}",
                path.display(),
                ckpt.tasks_completed,
                t + 1
            )));
        }
        let bundle = bundle.clone().with_task_plan(ckpt.task_plan.clone())?;
        let view = bundle.task_view(t)?;
        evaluations.push(task_accuracy(&ckpt.model, t, &view.test_features, &view.test_labels)?);
        seed.get_or_insert(ckpt.config.seed);
    }
    let Some(seed) = seed else {
        return Err(Error::Data(format!("no checkpoints in {}", dir.display())));
    };
    let metrics = MetricsReport::from_evaluations(seed, evaluations)?;
    metrics.write(&a.out)?;
    println!(
        "seed {seed}: average incremental accuracy {:.4}, last accuracy {:.4}",
        metrics.average_incremental_accuracy, metrics.last_accuracy
    );
    Ok(())
}

fn explain(a: ExplainArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let bundle = EmbeddingBundle::ingest(&a.dataset)?;
    if a.sample >= bundle.images().rows() {
        return Err(Error::Config(format!(
            "sample {} out of range ({} samples)",
            a.sample,
            bundle.images().rows()
        )));
    }
    if bundle.dim() != ckpt.model.dim() {
        return Err(Error::Consistency(format!(
            "bundle dimension {} differs from checkpoint dimension {}",
            bundle.dim(),
            ckpt.model.dim()
        )));
    }
    let feature = bundle.images().row(a.sample).to_vec();
    let x = Matrix::from_vec(1, feature.len(), feature.clone())?;
    let class = match a.class {
        Some(c) => c,
        None => ckpt.model.predict(&x)?[0],
    };
    if ckpt.model.class_row(class).is_none() {
        return Err(Error::Config(format!("class {class} is not known to the checkpoint")));
    }
    let sample_id = format!("sample_{}", a.sample);
    let target = Some(bundle.labels()[a.sample]);
    let report = build_report(&ckpt.model, &sample_id, &feature, class, a.top_k, target)?;

    create_dir(&a.out)?;
    let json_path = a.out.join(format!("{sample_id}.explain.json"));
    let mut text = report.to_json()?;
    text.push('\n');
    fs::write(&json_path, text).map_err(Error::io(format!("writing {}", json_path.display())))?;
    if a.svg {
        let svg_path = a.out.join(format!("{sample_id}.explain.svg"));
        fs::write(&svg_path, render_svg(&report))
            .map_err(Error::io(format!("writing {}", svg_path.display())))?;
    }
    if let Some(earlier) = &a.compare {
        let before_ckpt = Checkpoint::load(earlier)?;
        if before_ckpt.model.class_row(class).is_none() {
            return Err(Error::Config(format!(
                "class {class} is not known to {}",
                earlier.display()
            )));
        }
        let before = build_report(
            &before_ckpt.model,
            &sample_id,
            &feature,
            class,
            before_ckpt.model.num_concepts(),
            target,
        )?;
        let table = concept_drift(&before, &report)?;
        write_json(&a.out.join(format!("{sample_id}.drift.json")), &table)?;
    }
    println!(
        "{sample_id}: class {class} (label {}), logit {:.4}, {} entries",
        bundle.labels()[a.sample],
        report.logit,
        report.entries.len()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_rejects_unknown_keys() {
        let base = Path::new("/data");
        let ok = RunConfigFile::parse(r#"{"dataset": "b", "epochs": 3}"#, base).unwrap();
        assert_eq!(ok.dataset, PathBuf::from("/data/b"));
        assert_eq!(ok.train.epochs, 3);
        assert_eq!(ok.train.seed, 1993);
        let err = RunConfigFile::parse(r#"{"dataset": "b", "epoch": 3}"#, base).unwrap_err();
        assert_eq!(exit_code(&err), EXIT_CONFIG);
        let err = RunConfigFile::parse(r#"{"epochs": 3}"#, base).unwrap_err();
        assert_eq!(exit_code(&err), EXIT_CONFIG);
    }

    #[test]
    fn task_plan_override_parses() {
        let c = RunConfigFile::parse(r#"{"dataset": "/b", "task_plan": [[0, 1], [2]]}"#, Path::new(".")).unwrap();
        assert_eq!(c.task_plan.unwrap().num_tasks(), 2);
        assert_eq!(c.dataset, PathBuf::from("/b"));
    }

    #[test]
    fn unknown_flag_is_a_usage_error() {
        assert_eq!(run(["concept-cil", "train", "--bogus"]), EXIT_CONFIG);
    }
}
