//! Embedding bundles: the on-disk input of every training run.
//!
//! A bundle is a directory holding `manifest.json` and three `CBEM` blobs
//! (image embeddings, class-name embeddings, concept embeddings). All rows
//! are L2-normalized on ingest and stored at float32 precision, so a bundle
//! that has been ingested once is a fixed point of `save` followed by
//! `ingest`.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::blob::{load_blob, save_blob, Precision};
use crate::error::{Error, Result};
use crate::tensor::{l2_norm, Matrix};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

/// Rows whose norm is already this close to one are left untouched, which
/// keeps re-ingest bit-exact.
const UNIT_SLACK: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Ordered partition of class ids into tasks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskPlan(Vec<Vec<usize>>);

impl TaskPlan {
    pub fn new(tasks: Vec<Vec<usize>>) -> Self {
        Self(tasks)
    }

    /// `B-base Inc-increment` split of `0..num_classes` in class order.
    pub fn base_increment(num_classes: usize, base: usize, increment: usize) -> Result<Self> {
        if base == 0 || increment == 0 || base > num_classes {
            return Err(Error::Config(format!(
                "cannot split {num_classes} classes as B-{base} Inc-{increment}"
            )));
        }
        if !(num_classes - base).is_multiple_of(increment) {
            return Err(Error::Config(format!(
                "{} remaining classes are not a multiple of {increment}",
                num_classes - base
            )));
        }
        let mut tasks = vec![(0..base).collect::<Vec<_>>()];
        let mut start = base;
        while start < num_classes {
            tasks.push((start..start + increment).collect());
            start += increment;
        }
        Ok(Self(tasks))
    }

    pub fn num_tasks(&self) -> usize {
        self.0.len()
    }

    pub fn task(&self, t: usize) -> Option<&[usize]> {
        self.0.get(t).map(Vec::as_slice)
    }

    pub fn tasks(&self) -> &[Vec<usize>] {
        &self.0
    }

    /// Classes of tasks `0..=t`, in plan order.
    pub fn seen_classes(&self, t: usize) -> Vec<usize> {
        self.0.iter().take(t + 1).flatten().copied().collect()
    }

    /// Checks that the plan partitions `0..num_classes` into nonempty, disjoint tasks.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::Consistency("task plan has no tasks".into()));
        }
        let mut seen = BTreeSet::new();
        for (t, task) in self.0.iter().enumerate() {
            if task.is_empty() {
                return Err(Error::Consistency(format!("task {t} has no classes")));
            }
            for &c in task {
                if c >= num_classes {
                    return Err(Error::Consistency(format!(
                        "task {t} names class {c}, only {num_classes} classes exist"
                    )));
                }
                if !seen.insert(c) {
                    return Err(Error::Consistency(format!(
                        "class {c} appears in more than one task"
                    )));
                }
            }
        }
        if seen.len() != num_classes {
            let missing: Vec<_> = (0..num_classes).filter(|c| !seen.contains(c)).collect();
            return Err(Error::Consistency(format!(
                "task plan does not cover classes {missing:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobRef {
    pub file: String,
    pub rows: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestBlobs {
    pub images: BlobRef,
    pub class_name_embeddings: BlobRef,
    pub concept_embeddings: BlobRef,
}

/// `manifest.json` schema.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub dim: usize,
    pub class_names: Vec<String>,
    pub concepts: Vec<String>,
    pub concept_class_map: Vec<usize>,
    pub task_plan: TaskPlan,
    /// Class id of every image row.
    pub labels: Vec<usize>,
    pub split: Vec<Split>,
    pub blobs: ManifestBlobs,
}

/// Immutable, validated store of unit-normalized embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingBundle {
    dim: usize,
    images: Matrix,
    labels: Vec<usize>,
    split: Vec<Split>,
    class_names: Vec<String>,
    class_name_embeddings: Matrix,
    concepts: Vec<String>,
    concept_embeddings: Matrix,
    concept_class_map: Vec<usize>,
    task_plan: TaskPlan,
}

/// Raw parts of a bundle before normalization and validation.
#[derive(Clone, Debug)]
pub struct BundleParts {
    pub images: Matrix,
    pub labels: Vec<usize>,
    pub split: Vec<Split>,
    pub class_names: Vec<String>,
    pub class_name_embeddings: Matrix,
    pub concepts: Vec<String>,
    pub concept_embeddings: Matrix,
    pub concept_class_map: Vec<usize>,
    pub task_plan: TaskPlan,
}

/// Training data of one task plus the cumulative test set.
#[derive(Clone, Debug)]
pub struct TaskView {
    pub task: usize,
    /// Classes introduced by this task.
    pub classes: Vec<usize>,
    /// Classes of this and every earlier task, in plan order.
    pub seen_classes: Vec<usize>,
    pub train_features: Matrix,
    pub train_labels: Vec<usize>,
    pub test_features: Matrix,
    pub test_labels: Vec<usize>,
    /// Global ids of the concepts attached to `classes`, ascending.
    pub concept_ids: Vec<usize>,
    pub concept_embeddings: Matrix,
}

/// Normalizes every row to unit norm and rounds to float32 precision.
fn normalize_rows(m: &mut Matrix, what: &str) -> Result<()> {
    for r in 0..m.rows() {
        let row = m.row_mut(r);
        if let Some(c) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("{what} row {r} has non-finite entry at {c}")));
        }
        let norm = l2_norm(row);
        if norm == 0.0 {
            return Err(Error::Data(format!("{what} row {r} has zero norm")));
        }
        let exact_f32 = row.iter().all(|&v| (v as f32) as f64 == v);
        if exact_f32 && (norm - 1.0).abs() <= UNIT_SLACK {
            continue;
        }
        for v in row.iter_mut() {
            *v = ((*v / norm) as f32) as f64;
        }
    }
    Ok(())
}

impl EmbeddingBundle {
    /// Normalizes and validates raw parts.
    pub fn new(parts: BundleParts) -> Result<Self> {
        let BundleParts {
            mut images,
            labels,
            split,
            class_names,
            mut class_name_embeddings,
            concepts,
            mut concept_embeddings,
            concept_class_map,
            task_plan,
        } = parts;
        let dim = images.cols();
        if dim == 0 {
            return Err(Error::Consistency("embedding dimension is zero".into()));
        }
        for (what, m) in [
            ("class-name embeddings", &class_name_embeddings),
            ("concept embeddings", &concept_embeddings),
        ] {
            if m.cols() != dim {
                return Err(Error::Consistency(format!(
                    "{what} have {} columns, images have {dim}",
                    m.cols()
                )));
            }
        }
        normalize_rows(&mut images, "image")?;
        normalize_rows(&mut class_name_embeddings, "class-name")?;
        normalize_rows(&mut concept_embeddings, "concept")?;

        let bundle = Self {
            dim,
            images,
            labels,
            split,
            class_names,
            class_name_embeddings,
            concepts,
            concept_embeddings,
            concept_class_map,
            task_plan,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    fn validate(&self) -> Result<()> {
        let n = self.images.rows();
        let k = self.class_names.len();
        let m = self.concepts.len();
        let check = |ok: bool, msg: String| if ok { Ok(()) } else { Err(Error::Consistency(msg)) };
        check(k > 0, "bundle has no classes".into())?;
        check(
            self.labels.len() == n,
            format!("{} labels for {n} images", self.labels.len()),
        )?;
        check(
            self.split.len() == n,
            format!("{} split flags for {n} images", self.split.len()),
        )?;
        check(
            self.class_name_embeddings.rows() == k,
            format!("{} class-name embeddings for {k} classes", self.class_name_embeddings.rows()),
        )?;
        check(
            self.concept_embeddings.rows() == m,
            format!("{} concept embeddings for {m} concepts", self.concept_embeddings.rows()),
        )?;
        check(
            self.concept_class_map.len() == m,
            format!("concept_class_map has {} entries for {m} concepts", self.concept_class_map.len()),
        )?;
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= k) {
            return Err(Error::Consistency(format!("label {bad} out of range for {k} classes")));
        }
        if let Some(&bad) = self.concept_class_map.iter().find(|&&c| c >= k) {
            return Err(Error::Consistency(format!(
                "concept_class_map names class {bad}, only {k} classes exist"
            )));
        }
        self.task_plan.validate(k)?;

        let mut train = vec![0usize; k];
        let mut test = vec![0usize; k];
        for (&l, s) in self.labels.iter().zip(&self.split) {
            match s {
                Split::Train => train[l] += 1,
                Split::Test => test[l] += 1,
            }
        }
        let mut concepts = vec![0usize; k];
        for &c in &self.concept_class_map {
            concepts[c] += 1;
        }
        for c in 0..k {
            if train[c] == 0 || test[c] == 0 {
                return Err(Error::Data(format!(
                    "class {c} ({}) needs at least one train and one test sample (has {} / {})",
                    self.class_names[c], train[c], test[c]
                )));
            }
            if concepts[c] == 0 {
                return Err(Error::Data(format!(
                    "class {c} ({}) has no concepts",
                    self.class_names[c]
                )));
            }
        }
        Ok(())
    }

    /// Reads and validates a bundle directory.
    pub fn ingest(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path)
            .map_err(Error::io(format!("reading {}", manifest_path.display())))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format {
            file: manifest_path.clone(),
            message: e.to_string(),
        })?;
        if manifest.format_version != MANIFEST_VERSION {
            return Err(Error::Version {
                file: manifest_path,
                found: manifest.format_version,
                expected: MANIFEST_VERSION,
            });
        }
        let load = |r: &BlobRef, cols: usize| -> Result<Matrix> {
            let path = dir.join(&r.file);
            let m = load_blob(&path)?;
            if m.rows() != r.rows || m.cols() != cols {
                return Err(Error::Consistency(format!(
                    "{}: blob is {}x{}, manifest declares {}x{cols}",
                    path.display(),
                    m.rows(),
                    m.cols(),
                    r.rows
                )));
            }
            Ok(m)
        };
        let images = load(&manifest.blobs.images, manifest.dim)?;
        let class_name_embeddings = load(&manifest.blobs.class_name_embeddings, manifest.dim)?;
        let concept_embeddings = load(&manifest.blobs.concept_embeddings, manifest.dim)?;
        Self::new(BundleParts {
            images,
            labels: manifest.labels,
            split: manifest.split,
            class_names: manifest.class_names,
            class_name_embeddings,
            concepts: manifest.concepts,
            concept_embeddings,
            concept_class_map: manifest.concept_class_map,
            task_plan: manifest.task_plan,
        })
    }

    /// Writes the bundle as a directory readable by [`EmbeddingBundle::ingest`].
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(Error::io(format!("creating {}", dir.display())))?;
        let blob = |file: &str, m: &Matrix| -> Result<BlobRef> {
            save_blob(&dir.join(file), m, Precision::F32)?;
            Ok(BlobRef {
                file: file.to_string(),
                rows: m.rows(),
            })
        };
        let manifest = Manifest {
            format_version: MANIFEST_VERSION,
            dim: self.dim,
            class_names: self.class_names.clone(),
            concepts: self.concepts.clone(),
            concept_class_map: self.concept_class_map.clone(),
            task_plan: self.task_plan.clone(),
            labels: self.labels.clone(),
            split: self.split.clone(),
            blobs: ManifestBlobs {
                images: blob("images.cbem", &self.images)?,
                class_name_embeddings: blob("class_names.cbem", &self.class_name_embeddings)?,
                concept_embeddings: blob("concepts.cbem", &self.concept_embeddings)?,
            },
        };
        let path: PathBuf = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).map_err(Error::json("manifest"))?;
        fs::write(&path, text).map_err(Error::io(format!("writing {}", path.display())))
    }

    /// Same bundle under a different task plan.
    pub fn with_task_plan(mut self, plan: TaskPlan) -> Result<Self> {
        plan.validate(self.class_names.len())?;
        self.task_plan = plan;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn images(&self) -> &Matrix {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn split(&self) -> &[Split] {
        &self.split
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn class_name_embeddings(&self) -> &Matrix {
        &self.class_name_embeddings
    }

    pub fn concepts(&self) -> &[String] {
        &self.concepts
    }

    pub fn concept_embeddings(&self) -> &Matrix {
        &self.concept_embeddings
    }

    pub fn concept_class_map(&self) -> &[usize] {
        &self.concept_class_map
    }

    pub fn task_plan(&self) -> &TaskPlan {
        &self.task_plan
    }

    /// Train data of task `t` (0-based), test data of tasks `0..=t`, and
    /// the concept pool of task `t`'s classes.
    pub fn task_view(&self, t: usize) -> Result<TaskView> {
        let classes = self
            .task_plan
            .task(t)
            .ok_or_else(|| {
                Error::Task(format!(
                    "task {t} out of range for a {}-task plan",
                    self.task_plan.num_tasks()
                ))
            })?
            .to_vec();
        let seen_classes = self.task_plan.seen_classes(t);
        let mut in_task = vec![false; self.num_classes()];
        let mut in_seen = vec![false; self.num_classes()];
        classes.iter().for_each(|&c| in_task[c] = true);
        seen_classes.iter().for_each(|&c| in_seen[c] = true);

        let mut train_idx = Vec::new();
        let mut test_idx = Vec::new();
        for (i, (&l, s)) in self.labels.iter().zip(&self.split).enumerate() {
            match s {
                Split::Train if in_task[l] => train_idx.push(i),
                Split::Test if in_seen[l] => test_idx.push(i),
                _ => {}
            }
        }
        let concept_ids: Vec<usize> = (0..self.concepts.len())
            .filter(|&i| in_task[self.concept_class_map[i]])
            .collect();
        Ok(TaskView {
            task: t,
            train_features: self.images.select_rows(&train_idx),
            train_labels: train_idx.iter().map(|&i| self.labels[i]).collect(),
            test_features: self.images.select_rows(&test_idx),
            test_labels: test_idx.iter().map(|&i| self.labels[i]).collect(),
            concept_embeddings: self.concept_embeddings.select_rows(&concept_ids),
            concept_ids,
            classes,
            seen_classes,
        })
    }
}
