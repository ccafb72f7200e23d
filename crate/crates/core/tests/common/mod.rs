#![allow(dead_code)]

use concept_cil::model::{ConceptEntry, IncrementalModel};
use concept_cil::synth::SynthConfig;
use concept_cil::tensor::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

pub fn unit_rows(mut m: Matrix) -> Matrix {
    for r in 0..m.rows() {
        let n = m.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        m.row_mut(r).iter_mut().for_each(|v| *v /= n);
    }
    m
}

/// Central finite-difference gradient of `f` at `x`.
pub fn fd_grad(f: impl Fn(&Matrix) -> f64, x: &Matrix, h: f64) -> Matrix {
    let mut g = Matrix::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for r in 0..x.rows() {
        for c in 0..x.cols() {
            let v = x.get(r, c);
            probe.set(r, c, v + h);
            let up = f(&probe);
            probe.set(r, c, v - h);
            let down = f(&probe);
            probe.set(r, c, v);
            g.set(r, c, (up - down) / (2.0 * h));
        }
    }
    g
}

/// `‖a − b‖ / max(‖b‖, 1e-8)`.
pub fn rel_err(analytic: &Matrix, numeric: &Matrix) -> f64 {
    let diff: f64 = analytic
        .as_slice()
        .iter()
        .zip(numeric.as_slice())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    diff / numeric.frobenius_norm().max(1e-8)
}

/// Greedy nearest-neighbour scan written independently of the library:
/// every step ranks all free concepts by explicit Euclidean distance.
pub fn brute_force_greedy(q: &Matrix, concepts: &Matrix) -> Vec<usize> {
    let mut free: Vec<usize> = (0..concepts.rows()).collect();
    let mut out = Vec::new();
    for r in 0..q.rows() {
        if free.is_empty() {
            break;
        }
        let row = q.row(r);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut ranked: Vec<(f64, usize)> = free
            .iter()
            .map(|&c| {
                let d = row
                    .iter()
                    .zip(concepts.row(c))
                    .map(|(a, b)| (a / norm - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                (d, c)
            })
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let pick = ranked[0].1;
        free.retain(|&c| c != pick);
        out.push(pick);
    }
    out
}

/// Model with random weights over `concepts` concepts and `classes` classes.
pub fn random_model(rng: &mut impl Rng, dim: usize, concepts: usize, classes: usize) -> IncrementalModel {
    let w_c = gaussian(rng, concepts, dim, 1.0);
    let w_l = gaussian(rng, classes, concepts, 1.0);
    let entries = (0..concepts)
        .map(|i| ConceptEntry {
            id: i,
            text: format!("concept {i}"),
            task: i % 3,
        })
        .collect();
    let class_ids = (0..classes).map(|k| 10 + 2 * k).collect();
    let emb = unit_rows(gaussian(rng, concepts, dim, 1.0));
    IncrementalModel::from_parts(w_c, w_l, entries, class_ids, emb).unwrap()
}

/// Small synthetic benchmark that trains in well under a second.
pub fn small_synth() -> SynthConfig {
    SynthConfig {
        tasks: 2,
        classes_per_task: 3,
        dim: 16,
        train_per_class: 30,
        test_per_class: 10,
        ..SynthConfig::default()
    }
}

/// The benchmark used by the ablation criterion.
pub fn ablation_synth() -> SynthConfig {
    SynthConfig::default()
}

pub fn ablation_train() -> concept_cil::trainer::TrainConfig {
    concept_cil::trainer::TrainConfig {
        concepts_per_task: 20,
        ..Default::default()
    }
}
