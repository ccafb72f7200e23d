//! Per-task concept selection by learning to search.
//!
//! A small network `x ↦ head · (Q · x)` is fitted on the task's training
//! features with cross-entropy plus a Mahalanobis term that keeps the rows of
//! `Q` near the distribution of the task's concept embeddings. Each row of
//! `Q` then claims its nearest unclaimed concept.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{
    adam_step, l2_norm, mahalanobis_loss_grad, softmax_ce_loss_grad, spd_inverse, AdamConfig,
    AdamState, Matrix,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectorConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Weight of the Mahalanobis term.
    pub alpha_mahalanobis: f64,
    /// Covariance shrinkage `ε` in `Σ + ε·(tr Σ / D)·I`.
    pub shrinkage: f64,
    /// Standard deviation of the noise added to the initial `Q` rows.
    pub init_noise: f64,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 0.01,
            batch_size: 64,
            alpha_mahalanobis: 1.0,
            shrinkage: 1e-3,
            init_noise: 0.01,
        }
    }
}

impl SelectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("selector epochs and batch_size must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.shrinkage > 0.0) {
            return Err(Error::Config("selector lr and shrinkage must be positive".into()));
        }
        if !(self.alpha_mahalanobis >= 0.0) || !(self.init_noise >= 0.0) {
            return Err(Error::Config(
                "selector alpha_mahalanobis and init_noise must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Learned selector parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectorWeights {
    /// `K x D` pseudo-concept rows.
    pub q: Matrix,
    /// `|Y_t| x K` class head.
    pub head: Matrix,
}

/// Concepts picked from a task pool.
#[derive(Clone, Debug, PartialEq)]
pub struct BottleneckSelection {
    /// Indices into the task's concept pool, in selection order.
    pub concept_indices: Vec<usize>,
    pub embeddings: Matrix,
}

#[derive(Clone, Debug)]
pub struct SelectorFit {
    pub weights: SelectorWeights,
    /// Mean cross-entropy per epoch.
    pub ce_trace: Vec<f64>,
    /// Mahalanobis loss per epoch (unweighted).
    pub mahalanobis_trace: Vec<f64>,
}

/// Mean and shrunk inverse covariance of a concept pool.
pub fn pool_statistics(concepts: &Matrix, shrinkage: f64) -> Result<(Vec<f64>, Matrix)> {
    let (m, d) = concepts.shape();
    if m == 0 {
        return Err(Error::Data("empty concept pool".into()));
    }
    let mut mu = vec![0.0; d];
    for row in concepts.row_iter() {
        mu.iter_mut().zip(row).for_each(|(a, b)| *a += b);
    }
    mu.iter_mut().for_each(|v| *v /= m as f64);

    let mut sigma = Matrix::zeros(d, d);
    if m >= 2 {
        let mut centered = concepts.clone();
        for r in 0..m {
            centered.row_mut(r).iter_mut().zip(&mu).for_each(|(v, u)| *v -= u);
        }
        sigma = centered.t_matmul(&centered)?;
        sigma.scale(1.0 / (m - 1) as f64);
    }
    let trace: f64 = (0..d).map(|i| sigma.get(i, i)).sum();
    // A single-concept pool has no spread; fall back to a unit scale.
    let scale = if trace > 0.0 { trace / d as f64 } else { 1.0 };
    for i in 0..d {
        sigma.set(i, i, sigma.get(i, i) + shrinkage * scale);
    }
    Ok((mu, spd_inverse(&sigma)?))
}

/// Fits the selector on one task.
///
/// `labels` are task-local (`0..num_classes`). `k` rows of `Q` are learned.
pub fn fit_selector<R: Rng>(
    features: &Matrix,
    labels: &[usize],
    num_classes: usize,
    concepts: &Matrix,
    k: usize,
    config: &SelectorConfig,
    rng: &mut R,
) -> Result<SelectorFit> {
    config.validate()?;
    let (n, d) = features.shape();
    if n == 0 || labels.len() != n {
        return Err(Error::Task(format!(
            "selector needs matching features and labels, got {n} rows and {} labels",
            labels.len()
        )));
    }
    if k == 0 || num_classes == 0 {
        return Err(Error::Config("selector needs k >= 1 and at least one class".into()));
    }
    if concepts.cols() != d {
        return Err(Error::Consistency(format!(
            "concepts have dimension {}, features {d}",
            concepts.cols()
        )));
    }
    let (mu, sigma_inv) = pool_statistics(concepts, config.shrinkage)?;

    // Q rows start on pool embeddings (distinct ones first) plus noise.
    let m = concepts.rows();
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(rng);
    let noise = Normal::new(0.0, config.init_noise.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut q = Matrix::zeros(k, d);
    for r in 0..k {
        let src = concepts.row(order[r % m]);
        for (v, s) in q.row_mut(r).iter_mut().zip(src) {
            *v = s + if config.init_noise > 0.0 { noise.sample(rng) } else { 0.0 };
        }
    }
    let head_init = Normal::new(0.0, 0.01).expect("valid normal");
    let mut head = Matrix::zeros(num_classes, k);
    head.as_mut_slice()
        .iter_mut()
        .for_each(|v| *v = head_init.sample(rng));

    let adam = AdamConfig::with_lr(config.lr);
    let mut q_state = AdamState::for_param(&q, adam)?;
    let mut head_state = AdamState::for_param(&head, adam)?;

    let mut idx: Vec<usize> = (0..n).collect();
    let mut ce_trace = Vec::with_capacity(config.epochs);
    let mut mahalanobis_trace = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        idx.shuffle(rng);
        let mut ce_sum = 0.0;
        let mut maha_sum = 0.0;
        let mut batches = 0usize;
        for batch in idx.chunks(config.batch_size) {
            let x = features.select_rows(batch);
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let z = x.matmul_t(&q)?;
            let logits = z.matmul_t(&head)?;
            let (ce, g_logits) = softmax_ce_loss_grad(&logits, &y)?;
            let g_head = g_logits.t_matmul(&z)?;
            let g_z = g_logits.matmul(&head)?;
            let mut g_q = g_z.t_matmul(&x)?;
            let (maha, g_maha) = mahalanobis_loss_grad(&q, &mu, &sigma_inv)?;
            if config.alpha_mahalanobis > 0.0 {
                g_q.add_scaled(&g_maha, config.alpha_mahalanobis)?;
            }
            adam_step(&mut q, &g_q, &mut q_state)?;
            adam_step(&mut head, &g_head, &mut head_state)?;
            ce_sum += ce * batch.len() as f64;
            maha_sum += maha;
            batches += 1;
        }
        ce_trace.push(ce_sum / n as f64);
        mahalanobis_trace.push(maha_sum / batches as f64);
    }
    Ok(SelectorFit {
        weights: SelectorWeights { q, head },
        ce_trace,
        mahalanobis_trace,
    })
}

/// Greedy matching: each `Q` row, in order, takes the nearest concept not yet
/// taken (Euclidean distance after unit-normalizing the row; lowest index on
/// ties). Returns `min(K, M)` distinct indices.
pub fn match_concepts(weights: &SelectorWeights, concepts: &Matrix) -> BottleneckSelection {
    let m = concepts.rows();
    let mut taken = vec![false; m];
    let mut chosen = Vec::with_capacity(weights.q.rows().min(m));
    for row in weights.q.row_iter() {
        if chosen.len() == m {
            break;
        }
        let norm = l2_norm(row);
        let inv = if norm > 0.0 { 1.0 / norm } else { 1.0 };
        let mut best: Option<(usize, f64)> = None;
        for (c, emb) in concepts.row_iter().enumerate() {
            if taken[c] {
                continue;
            }
            let dist: f64 = row
                .iter()
                .zip(emb)
                .map(|(a, b)| (a * inv - b).powi(2))
                .sum();
            if best.is_none_or(|(_, d)| dist < d) {
                best = Some((c, dist));
            }
        }
        if let Some((c, _)) = best {
            taken[c] = true;
            chosen.push(c);
        }
    }
    BottleneckSelection {
        embeddings: concepts.select_rows(&chosen),
        concept_indices: chosen,
    }
}
