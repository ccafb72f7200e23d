//! Incremental accuracy metrics.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::IncrementalModel;
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCount {
    pub class: usize,
    pub correct: usize,
    pub total: usize,
}

/// Accuracy over the cumulative test set after one task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskEvaluation {
    pub task: usize,
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub per_class: Vec<ClassCount>,
}

/// Contents of `metrics.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    /// `A_t` after each task, as fractions.
    pub accuracies: Vec<f64>,
    pub average_incremental_accuracy: f64,
    pub last_accuracy: f64,
    pub tasks: Vec<TaskEvaluation>,
}

/// Sample-weighted accuracy of `model` on `features`/`labels` (class ids).
pub fn task_accuracy(
    model: &IncrementalModel,
    task: usize,
    features: &Matrix,
    labels: &[usize],
) -> Result<TaskEvaluation> {
    if labels.len() != features.rows() {
        return Err(Error::Consistency(format!(
            "{} labels for {} test rows",
            labels.len(),
            features.rows()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Task(format!("task {task} has an empty test set")));
    }
    let predicted = model.predict(features)?;
    let mut per_class: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (&p, &y) in predicted.iter().zip(labels) {
        let e = per_class.entry(y).or_default();
        e.1 += 1;
        if p == y {
            e.0 += 1;
        }
    }
    let correct: usize = per_class.values().map(|c| c.0).sum();
    let total = labels.len();
    Ok(TaskEvaluation {
        task,
        accuracy: correct as f64 / total as f64,
        correct,
        total,
        per_class: per_class
            .into_iter()
            .map(|(class, (correct, total))| ClassCount {
                class,
                correct,
                total,
            })
            .collect(),
    })
}

/// `(mean of A_t, A_n)`.
pub fn incremental_metrics(accuracies: &[f64]) -> Result<(f64, f64)> {
    let last = *accuracies
        .last()
        .ok_or_else(|| Error::Task("no task accuracies".into()))?;
    let mean = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
    Ok((mean, last))
}

impl MetricsReport {
    pub fn from_evaluations(seed: u64, tasks: Vec<TaskEvaluation>) -> Result<Self> {
        let accuracies: Vec<f64> = tasks.iter().map(|t| t.accuracy).collect();
        let (average, last) = incremental_metrics(&accuracies)?;
        Ok(Self {
            seed,
            accuracies,
            average_incremental_accuracy: average,
            last_accuracy: last,
            tasks,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(Error::json("metrics"))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text).map_err(Error::io(format!("writing {}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_arithmetic() {
        let (avg, last) = incremental_metrics(&[0.8, 0.6]).unwrap();
        assert!((avg - 0.7).abs() < 1e-15);
        assert_eq!(last, 0.6);
        assert_eq!(incremental_metrics(&[0.42]).unwrap(), (0.42, 0.42));
        assert!(incremental_metrics(&[]).is_err());
    }
}
