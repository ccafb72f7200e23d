//! Seeded synthetic embedding bundles.
//!
//! Each class gets a random unit mean direction. Image embeddings are
//! unit-normalized Gaussian draws around it, the class-name embedding is a
//! unit vector at a fixed cosine to the mean, and the concept pool holds
//! noisy copies of the mean plus unrelated distractors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{BundleParts, EmbeddingBundle, Split, TaskPlan};
use crate::error::{Error, Result};
use crate::tensor::{dot, l2_norm, Matrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub tasks: usize,
    pub classes_per_task: usize,
    pub dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Concepts derived from each class mean.
    pub concepts_per_class: usize,
    /// Random concepts attached to each class.
    pub distractors_per_class: usize,
    /// Per-coordinate standard deviation of image noise before normalization.
    pub image_noise: f64,
    /// Per-coordinate standard deviation of concept noise before normalization.
    pub concept_noise: f64,
    /// Cosine between a class-name embedding and its class mean.
    pub name_cosine: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            tasks: 5,
            classes_per_task: 4,
            dim: 32,
            train_per_class: 100,
            test_per_class: 50,
            concepts_per_class: 6,
            distractors_per_class: 2,
            image_noise: 0.12,
            concept_noise: 0.15,
            name_cosine: 0.8,
            seed: crate::trainer::DEFAULT_SEED,
        }
    }
}

fn gaussian(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = l2_norm(&v);
    v.iter_mut().for_each(|x| *x /= n);
    v
}

fn around(rng: &mut impl Rng, mean: &[f64], sd: f64) -> Vec<f64> {
    let noise = gaussian(rng, mean.len());
    unit(mean.iter().zip(noise).map(|(m, e)| m + sd * e).collect())
}

/// Unit vector at cosine `cos` to the unit vector `dir`.
fn at_cosine(rng: &mut impl Rng, dir: &[f64], cos: f64) -> Vec<f64> {
    let r = gaussian(rng, dir.len());
    let along = dot(&r, dir);
    let ortho = unit(r.iter().zip(dir).map(|(x, d)| x - along * d).collect());
    let sin = (1.0 - cos * cos).max(0.0).sqrt();
    unit(dir.iter().zip(ortho).map(|(d, o)| cos * d + sin * o).collect())
}

pub fn generate(config: &SynthConfig) -> Result<EmbeddingBundle> {
    let c = config;
    if c.tasks == 0 || c.classes_per_task == 0 || c.dim < 2 {
        return Err(Error::Config("synth needs tasks, classes_per_task >= 1 and dim >= 2".into()));
    }
    if c.train_per_class == 0 || c.test_per_class == 0 || c.concepts_per_class + c.distractors_per_class == 0 {
        return Err(Error::Config("synth needs train, test and concept samples per class".into()));
    }
    if !(-1.0..=1.0).contains(&c.name_cosine) {
        return Err(Error::Config(format!("name_cosine {} outside [-1, 1]", c.name_cosine)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let num_classes = c.tasks * c.classes_per_task;
    let means: Vec<Vec<f64>> = (0..num_classes).map(|_| unit(gaussian(&mut rng, c.dim))).collect();

    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut split = Vec::new();
    for (class, mean) in means.iter().enumerate() {
        for (n, s) in [(c.train_per_class, Split::Train), (c.test_per_class, Split::Test)] {
            for _ in 0..n {
                images.push(around(&mut rng, mean, c.image_noise));
                labels.push(class);
                split.push(s);
            }
        }
    }
    let names: Vec<Vec<f64>> = means
        .iter()
        .map(|m| at_cosine(&mut rng, m, c.name_cosine))
        .collect();

    let mut concepts = Vec::new();
    let mut concept_embs = Vec::new();
    let mut concept_class_map = Vec::new();
    for (class, mean) in means.iter().enumerate() {
        for i in 0..c.concepts_per_class {
            concepts.push(format!("class {class} trait {i}"));
            concept_embs.push(around(&mut rng, mean, c.concept_noise));
            concept_class_map.push(class);
        }
        for i in 0..c.distractors_per_class {
            concepts.push(format!("class {class} distractor {i}"));
            concept_embs.push(unit(gaussian(&mut rng, c.dim)));
            concept_class_map.push(class);
        }
    }

    EmbeddingBundle::new(BundleParts {
        images: Matrix::from_rows(&images, c.dim)?,
        labels,
        split,
        class_names: (0..num_classes).map(|k| format!("class {k}")).collect(),
        class_name_embeddings: Matrix::from_rows(&names, c.dim)?,
        concepts,
        concept_embeddings: Matrix::from_rows(&concept_embs, c.dim)?,
        concept_class_map,
        task_plan: TaskPlan::base_increment(num_classes, c.classes_per_task, c.classes_per_task)?,
    })
}
