//! The task loop.
//!
//! For each task: select concepts, grow the model, store prototypes of the
//! new classes, generate pseudo-features for old classes, then optimize the
//! bottleneck layer and classifier with Adam on
//!
//! ```text
//! L = L_ce + λ·L_sim + σ·L_sparse
//! ```
//!
//! over the shuffled union of real and pseudo features. All randomness comes
//! from one ChaCha stream seeded by [`TrainConfig::seed`].

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Checkpoint, EmbeddingBundle};
use crate::error::{Error, Result};
use crate::evaluator::{task_accuracy, MetricsReport, TaskEvaluation};
use crate::model::{clip_activations, Bottleneck, ConceptEntry, IncrementalModel};
use crate::prototype::{augment_old_classes, extract_prototypes, AugmentationMatch, PrototypeStore};
use crate::selector::{fit_selector, match_concepts, SelectorConfig};
use crate::tensor::{
    adam_step, cosine_alignment_loss_grad, elastic_net_penalty_grad, softmax_ce_loss_grad,
    AdamConfig, AdamState, Matrix, ZeroColumn,
};

pub const DEFAULT_SEED: u64 = 1993;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Concept budget per task.
    pub concepts_per_task: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Weight of the alignment loss.
    pub lambda_sim: f64,
    /// Weight of the elastic-net penalty.
    pub sigma_sparse: f64,
    /// L1 share of the elastic net.
    pub phi: f64,
    /// Square the Frobenius term of the elastic net.
    pub sparse_frobenius_squared: bool,
    /// Generate pseudo-features for old classes.
    pub augment: bool,
    pub selector: SelectorConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            concepts_per_task: 100,
            epochs: 60,
            batch_size: 64,
            lr: 1e-3,
            lambda_sim: 1.0,
            sigma_sparse: 1e-3,
            phi: 0.99,
            sparse_frobenius_squared: true,
            augment: true,
            selector: SelectorConfig::default(),
            seed: DEFAULT_SEED,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.concepts_per_task == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "concepts_per_task, epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.lambda_sim >= 0.0) || !(self.sigma_sparse >= 0.0) {
            return Err(Error::Config("lambda_sim and sigma_sparse must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.phi) {
            return Err(Error::Config(format!("phi must lie in [0, 1], got {}", self.phi)));
        }
        self.selector.validate()
    }
}

/// Loss terms of one evaluation of the objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub l_ce: f64,
    pub l_sim: f64,
    pub l_sparse: f64,
    pub total: f64,
}

/// One line of the run trace. Epoch 0 is measured before the first update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub task: usize,
    pub epoch: usize,
    pub l_ce: f64,
    pub l_sim: f64,
    pub l_sparse: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionLog {
    pub task: usize,
    pub pool_size: usize,
    pub requested: usize,
    pub concept_ids: Vec<usize>,
    pub concepts: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct TaskOutcome {
    pub task: usize,
    pub selection: SelectionLog,
    pub augmentation: Vec<AugmentationMatch>,
    pub real_samples: usize,
    pub pseudo_samples: usize,
    pub traces: Vec<EpochTrace>,
}

/// Value and gradients of the objective with respect to `W_C` and `W_l`.
///
/// `targets` are classifier-row indices; `reference` is the activation
/// matrix `x · f_T(C)ᵀ` for the same rows.
pub fn objective_grad(
    w_c: &Matrix,
    w_l: &Matrix,
    features: &Matrix,
    reference: &Matrix,
    targets: &[usize],
    config: &TrainConfig,
) -> Result<(LossTerms, Matrix, Matrix)> {
    let scores = features.matmul_t(w_c)?;
    let logits = scores.matmul_t(w_l)?;
    let (l_ce, g_logits) = softmax_ce_loss_grad(&logits, targets)?;
    let (l_sim, g_sim) = cosine_alignment_loss_grad(&scores, reference, ZeroColumn::Skip)?;
    let (l_sparse, g_sparse) =
        elastic_net_penalty_grad(w_l, config.phi, config.sparse_frobenius_squared)?;

    let mut g_wl = g_logits.t_matmul(&scores)?;
    g_wl.add_scaled(&g_sparse, config.sigma_sparse)?;
    let mut g_scores = g_logits.matmul(w_l)?;
    g_scores.add_scaled(&g_sim, config.lambda_sim)?;
    let g_wc = g_scores.t_matmul(features)?;

    let total = l_ce + config.lambda_sim * l_sim + config.sigma_sparse * l_sparse;
    Ok((
        LossTerms {
            l_ce,
            l_sim,
            l_sparse,
            total,
        },
        g_wc,
        g_wl,
    ))
}

/// Holds the evolving model, prototype memory and RNG across tasks.
pub struct Trainer<'a> {
    bundle: &'a EmbeddingBundle,
    config: TrainConfig,
    rng: ChaCha8Rng,
    model: IncrementalModel,
    prototypes: PrototypeStore,
    bottlenecks: Vec<Vec<usize>>,
}

impl<'a> Trainer<'a> {
    pub fn new(bundle: &'a EmbeddingBundle, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            model: IncrementalModel::new(bundle.dim()),
            prototypes: PrototypeStore::new(),
            bottlenecks: Vec::new(),
            bundle,
            config,
        })
    }

    pub fn model(&self) -> &IncrementalModel {
        &self.model
    }

    pub fn prototypes(&self) -> &PrototypeStore {
        &self.prototypes
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn tasks_completed(&self) -> usize {
        self.bottlenecks.len()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            tasks_completed: self.tasks_completed(),
            config: self.config.clone(),
            task_plan: self.bundle.task_plan().clone(),
            model: self.model.clone(),
            bottlenecks: self.bottlenecks.clone(),
            prototypes: self.prototypes.clone(),
        }
    }

    /// Trains task `t`, which must be the next untrained task.
    pub fn run_task(&mut self, t: usize) -> Result<TaskOutcome> {
        if t != self.tasks_completed() {
            return Err(Error::Task(format!(
                "task {t} requested but {} tasks are trained",
                self.tasks_completed()
            )));
        }
        let view = self.bundle.task_view(t)?;
        if view.train_features.rows() == 0 {
            return Err(Error::Task(format!("task {t} has no training data")));
        }
        if view.train_features.cols() != self.model.dim() {
            return Err(Error::Consistency(format!(
                "bundle dimension {} differs from model dimension {}",
                view.train_features.cols(),
                self.model.dim()
            )));
        }

        // Concept selection on the task pool.
        let local_label = |c: usize| view.classes.iter().position(|&k| k == c).unwrap();
        let local_labels: Vec<usize> = view.train_labels.iter().map(|&c| local_label(c)).collect();
        let pool = view.concept_ids.len();
        let requested = self.config.concepts_per_task;
        if pool < requested {
            log::warn!("task {t}: pool has {pool} concepts, fewer than the budget of {requested}; selecting all");
        }
        let fit = fit_selector(
            &view.train_features,
            &local_labels,
            view.classes.len(),
            &view.concept_embeddings,
            requested,
            &self.config.selector,
            &mut self.rng,
        )?;
        let selection = match_concepts(&fit.weights, &view.concept_embeddings);
        let concepts: Vec<ConceptEntry> = selection
            .concept_indices
            .iter()
            .map(|&i| {
                let id = view.concept_ids[i];
                ConceptEntry {
                    id,
                    text: self.bundle.concepts()[id].clone(),
                    task: t,
                }
            })
            .collect();
        let bottleneck = Bottleneck {
            task: t,
            embeddings: selection.embeddings.clone(),
            concepts,
        };
        self.model.expand(&bottleneck, &view.classes)?;
        self.bottlenecks.push(bottleneck.concept_ids());

        // Prototype memory and pseudo-features.
        let current = extract_prototypes(&view.train_features, &view.train_labels, t)?;
        let pseudo = if t > 0 && self.config.augment {
            Some(augment_old_classes(
                &self.prototypes,
                t,
                self.bundle.class_name_embeddings(),
                &current,
                &view.train_features,
                &view.train_labels,
            )?)
        } else {
            None
        };
        self.prototypes.insert_all(current)?;

        let mut features = view.train_features.clone();
        let mut labels = view.train_labels.clone();
        let mut augmentation = Vec::new();
        let mut pseudo_samples = 0;
        if let Some(p) = pseudo {
            features = features.vstack(&p.features)?;
            labels.extend_from_slice(&p.labels);
            pseudo_samples = p.labels.len();
            augmentation = p.matches;
        }
        let targets: Vec<usize> = labels
            .iter()
            .map(|&c| {
                self.model
                    .class_row(c)
                    .ok_or_else(|| Error::Model(format!("class {c} missing from model")))
            })
            .collect::<Result<_>>()?;
        let reference = clip_activations(&features, self.model.concept_embeddings())?;

        let traces = self.optimize(t, &features, &reference, &targets)?;

        Ok(TaskOutcome {
            task: t,
            selection: SelectionLog {
                task: t,
                pool_size: pool,
                requested,
                concept_ids: bottleneck.concept_ids(),
                concepts: bottleneck.concepts.iter().map(|c| c.text.clone()).collect(),
            },
            augmentation,
            real_samples: view.train_features.rows(),
            pseudo_samples,
            traces,
        })
    }

    fn optimize(
        &mut self,
        task: usize,
        features: &Matrix,
        reference: &Matrix,
        targets: &[usize],
    ) -> Result<Vec<EpochTrace>> {
        let cfg = &self.config;
        let adam = AdamConfig::with_lr(cfg.lr);
        let (w_c, w_l) = self.model.weights_mut();
        let mut wc_state = AdamState::for_param(w_c, adam)?;
        let mut wl_state = AdamState::for_param(w_l, adam)?;

        let trace = |epoch: usize, t: LossTerms| EpochTrace {
            task,
            epoch,
            l_ce: t.l_ce,
            l_sim: t.l_sim,
            l_sparse: t.l_sparse,
            total: t.total,
        };
        let n = features.rows();
        let (initial, _, _) = objective_grad(w_c, w_l, features, reference, targets, cfg)?;
        let mut traces = vec![trace(0, initial)];

        let mut idx: Vec<usize> = (0..n).collect();
        for epoch in 1..=cfg.epochs {
            idx.shuffle(&mut self.rng);
            let mut sum = LossTerms::default();
            for batch in idx.chunks(cfg.batch_size) {
                let x = features.select_rows(batch);
                let r = reference.select_rows(batch);
                let y: Vec<usize> = batch.iter().map(|&i| targets[i]).collect();
                let (terms, g_wc, g_wl) = objective_grad(w_c, w_l, &x, &r, &y, cfg)?;
                adam_step(w_c, &g_wc, &mut wc_state)?;
                adam_step(w_l, &g_wl, &mut wl_state)?;
                let share = batch.len() as f64 / n as f64;
                sum.l_ce += terms.l_ce * share;
                sum.l_sim += terms.l_sim * share;
                sum.l_sparse += terms.l_sparse * share;
                sum.total += terms.total * share;
            }
            traces.push(trace(epoch, sum));
        }
        Ok(traces)
    }

    /// Accuracy on the cumulative test set of every task trained so far.
    pub fn evaluate(&self) -> Result<TaskEvaluation> {
        let t = self
            .tasks_completed()
            .checked_sub(1)
            .ok_or_else(|| Error::Task("no task trained yet".into()))?;
        let view = self.bundle.task_view(t)?;
        task_accuracy(&self.model, t, &view.test_features, &view.test_labels)
    }
}

/// Output of [`run_sequence`].
#[derive(Clone, Debug)]
pub struct TrainingRun {
    pub metrics: MetricsReport,
    pub traces: Vec<EpochTrace>,
    pub selections: Vec<SelectionLog>,
    pub augmentations: Vec<Vec<AugmentationMatch>>,
    pub checkpoint_paths: Vec<PathBuf>,
    /// State after the last task.
    pub final_state: Checkpoint,
}

impl TrainingRun {
    pub fn accuracies(&self) -> &[f64] {
        &self.metrics.accuracies
    }

    /// Writes the trace as JSON lines, each tagged with the run seed.
    pub fn write_trace(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Line<'a> {
            seed: u64,
            #[serde(flatten)]
            trace: &'a EpochTrace,
        }
        let ctx = || format!("writing {}", path.display());
        let mut out = Vec::new();
        for trace in &self.traces {
            let line = Line {
                seed: self.metrics.seed,
                trace,
            };
            serde_json::to_writer(&mut out, &line).map_err(Error::json("trace"))?;
            out.push(b'\n');
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&out))
            .map_err(Error::io(ctx()))
    }
}

pub fn checkpoint_file_name(task: usize) -> String {
    format!("task_{task:03}.ckpt")
}

/// Trains every task of the bundle's plan in order, evaluating after each
/// and writing one checkpoint per task into `checkpoint_dir` when given.
pub fn run_sequence(
    bundle: &EmbeddingBundle,
    config: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainingRun> {
    let mut trainer = Trainer::new(bundle, config.clone())?;
    if let Some(dir) = checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(Error::io(format!("creating {}", dir.display())))?;
    }
    let mut evaluations = Vec::new();
    let mut traces = Vec::new();
    let mut selections = Vec::new();
    let mut augmentations = Vec::new();
    let mut checkpoint_paths = Vec::new();
    for t in 0..bundle.task_plan().num_tasks() {
        let outcome = trainer.run_task(t)?;
        let eval = trainer.evaluate()?;
        log::info!(
            "task {t}: {} real + {} pseudo samples, {} concepts, A_t = {:.4}",
            outcome.real_samples,
            outcome.pseudo_samples,
            trainer.model().num_concepts(),
            eval.accuracy
        );
        evaluations.push(eval);
        traces.extend(outcome.traces);
        selections.push(outcome.selection);
        augmentations.push(outcome.augmentation);
        if let Some(dir) = checkpoint_dir {
            let path = dir.join(checkpoint_file_name(t));
            trainer.checkpoint().save(&path)?;
            checkpoint_paths.push(path);
        }
    }
    Ok(TrainingRun {
        metrics: MetricsReport::from_evaluations(config.seed, evaluations)?,
        traces,
        selections,
        augmentations,
        checkpoint_paths,
        final_state: trainer.checkpoint(),
    })
}
