//! The incremental concept-bottleneck model.
//!
//! Image features `x` (rows of an `N x D` matrix) are projected onto the
//! concept bottleneck layer `W_C` (`|C| x D`) to give concept scores, and a
//! linear classifier `W_l` (`|Y| x |C|`) maps scores to class logits:
//!
//! ```text
//! scores = x · W_Cᵀ        logits = scores · W_lᵀ
//! ```
//!
//! Both matrices only grow: every task appends its selected concepts as new
//! rows of `W_C` (initialized to the concept's text embedding) and its classes
//! as new zero rows of `W_l`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{dot, Matrix};

/// One row of the concept bottleneck layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptEntry {
    /// Global concept id in the embedding bundle.
    pub id: usize,
    pub text: String,
    /// Task that introduced the concept.
    pub task: usize,
}

/// Concepts selected for one task, in selection order.
#[derive(Clone, Debug, PartialEq)]
pub struct Bottleneck {
    pub task: usize,
    pub concepts: Vec<ConceptEntry>,
    /// Text embedding of each concept, one row per entry.
    pub embeddings: Matrix,
}

impl Bottleneck {
    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn concept_ids(&self) -> Vec<usize> {
        self.concepts.iter().map(|c| c.id).collect()
    }
}

/// `features · concept_embsᵀ`: raw image/text activations.
pub fn clip_activations(features: &Matrix, concept_embs: &Matrix) -> Result<Matrix> {
    Ok(features.matmul_t(concept_embs)?)
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct IncrementalModel {
    dim: usize,
    w_c: Matrix,
    w_l: Matrix,
    concepts: Vec<ConceptEntry>,
    classes: Vec<usize>,
    concept_embeddings: Matrix,
}

impl IncrementalModel {
    /// Empty model over `dim`-dimensional embeddings.
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            w_c: Matrix::zeros(0, dim),
            w_l: Matrix::zeros(0, 0),
            concepts: Vec::new(),
            classes: Vec::new(),
            concept_embeddings: Matrix::zeros(0, dim),
        }
    }

    /// Reassembles a model from stored weights and registries.
    pub fn from_parts(
        w_c: Matrix,
        w_l: Matrix,
        concepts: Vec<ConceptEntry>,
        classes: Vec<usize>,
        concept_embeddings: Matrix,
    ) -> Result<Self> {
        let dim = w_c.cols();
        let c = w_c.rows();
        if concepts.len() != c || concept_embeddings.shape() != (c, dim) {
            return Err(Error::Model(format!(
                "{} concept entries and {}x{} text embeddings for a {c}x{dim} bottleneck",
                concepts.len(),
                concept_embeddings.rows(),
                concept_embeddings.cols()
            )));
        }
        if w_l.shape() != (classes.len(), c) && !(classes.is_empty() && w_l.rows() == 0) {
            return Err(Error::Model(format!(
                "classifier is {}x{}, expected {}x{c}",
                w_l.rows(),
                w_l.cols(),
                classes.len()
            )));
        }
        let unique: BTreeSet<_> = classes.iter().collect();
        if unique.len() != classes.len() {
            return Err(Error::Model("duplicate class in registry".into()));
        }
        let unique: BTreeSet<_> = concepts.iter().map(|e| e.id).collect();
        if unique.len() != concepts.len() {
            return Err(Error::Model("duplicate concept in registry".into()));
        }
        w_c.ensure_finite("W_C")?;
        w_l.ensure_finite("W_l")?;
        Ok(Self {
            dim,
            w_c,
            w_l: if classes.is_empty() { Matrix::zeros(0, c) } else { w_l },
            concepts,
            classes,
            concept_embeddings,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_concepts(&self) -> usize {
        self.concepts.len()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Concept bottleneck layer, `|C| x D`.
    pub fn w_c(&self) -> &Matrix {
        &self.w_c
    }

    /// Classifier, `|Y| x |C|`.
    pub fn w_l(&self) -> &Matrix {
        &self.w_l
    }

    pub(crate) fn weights_mut(&mut self) -> (&mut Matrix, &mut Matrix) {
        (&mut self.w_c, &mut self.w_l)
    }

    pub fn concepts(&self) -> &[ConceptEntry] {
        &self.concepts
    }

    /// Class id of each classifier row.
    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    /// Frozen text embeddings of every registered concept.
    pub fn concept_embeddings(&self) -> &Matrix {
        &self.concept_embeddings
    }

    /// Classifier row of a class id.
    pub fn class_row(&self, class: usize) -> Option<usize> {
        self.classes.iter().position(|&c| c == class)
    }

    /// Appends a task's concepts and classes.
    ///
    /// New `W_C` rows copy the concepts' text embeddings; the classifier gains
    /// zero rows for the classes and zero columns for the concepts. Existing
    /// weights are left bit-identical.
    pub fn expand(&mut self, bottleneck: &Bottleneck, new_classes: &[usize]) -> Result<()> {
        if bottleneck.is_empty() {
            return Err(Error::Model("cannot expand with an empty bottleneck".into()));
        }
        if bottleneck.embeddings.shape() != (bottleneck.len(), self.dim) {
            return Err(Error::Model(format!(
                "bottleneck embeddings are {}x{}, expected {}x{}",
                bottleneck.embeddings.rows(),
                bottleneck.embeddings.cols(),
                bottleneck.len(),
                self.dim
            )));
        }
        let mut ids: BTreeSet<usize> = self.concepts.iter().map(|c| c.id).collect();
        for c in &bottleneck.concepts {
            if !ids.insert(c.id) {
                return Err(Error::Model(format!(
                    "concept {} ({:?}) registered twice",
                    c.id, c.text
                )));
            }
        }
        let mut known: BTreeSet<usize> = self.classes.iter().copied().collect();
        for &k in new_classes {
            if !known.insert(k) {
                return Err(Error::Model(format!("class {k} registered twice")));
            }
        }

        let old_c = self.num_concepts();
        let old_k = self.num_classes();
        let new_c = old_c + bottleneck.len();
        let new_k = old_k + new_classes.len();

        self.w_c = self.w_c.vstack(&bottleneck.embeddings)?;
        self.concept_embeddings = self.concept_embeddings.vstack(&bottleneck.embeddings)?;

        let mut w_l = Matrix::zeros(new_k, new_c);
        for r in 0..old_k {
            w_l.row_mut(r)[..old_c].copy_from_slice(self.w_l.row(r));
        }
        self.w_l = w_l;
        self.concepts.extend(bottleneck.concepts.iter().cloned());
        self.classes.extend_from_slice(new_classes);
        Ok(())
    }

    fn check_features(&self, features: &Matrix) -> Result<()> {
        if self.concepts.is_empty() {
            return Err(Error::Model("model has no concepts yet".into()));
        }
        if features.cols() != self.dim {
            return Err(Error::Model(format!(
                "features have dimension {}, model expects {}",
                features.cols(),
                self.dim
            )));
        }
        Ok(())
    }

    /// `features · W_Cᵀ`.
    pub fn concept_scores(&self, features: &Matrix) -> Result<Matrix> {
        self.check_features(features)?;
        Ok(features.matmul_t(&self.w_c)?)
    }

    /// `features · W_Cᵀ · W_lᵀ`, one column per registered class.
    pub fn logits(&self, features: &Matrix) -> Result<Matrix> {
        let scores = self.concept_scores(features)?;
        Ok(scores.matmul_t(&self.w_l)?)
    }

    /// Predicted class id per row.
    ///
    /// Uses the raw logits: a sigmoid (or any strictly increasing map) would
    /// not change the argmax.
    pub fn predict(&self, features: &Matrix) -> Result<Vec<usize>> {
        if self.classes.is_empty() {
            return Err(Error::Model("model has no classes yet".into()));
        }
        let logits = self.logits(features)?;
        Ok(logits
            .row_iter()
            .map(|row| self.classes[argmax(row)])
            .collect())
    }

    /// Signed contribution of every concept to the logit of `class` for one
    /// sample: `(x · W_C[i]) · W_l[class, i]`. The entries sum to the logit.
    pub fn contributions(&self, feature: &[f64], class: usize) -> Result<Vec<f64>> {
        if feature.len() != self.dim {
            return Err(Error::Model(format!(
                "feature has dimension {}, model expects {}",
                feature.len(),
                self.dim
            )));
        }
        let row = self
            .class_row(class)
            .ok_or_else(|| Error::Model(format!("class {class} is not registered")))?;
        let weights = self.w_l.row(row);
        Ok(self
            .w_c
            .row_iter()
            .zip(weights)
            .map(|(w_c, &w)| dot(feature, w_c) * w)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: usize, task: usize) -> ConceptEntry {
        ConceptEntry {
            id,
            text: format!("concept {id}"),
            task,
        }
    }

    fn bottleneck(task: usize, ids: std::ops::Range<usize>, dim: usize) -> Bottleneck {
        let n = ids.len();
        let data = (0..n * dim).map(|i| ((i * 7 + task) % 11) as f64 / 11.0 - 0.4).collect();
        Bottleneck {
            task,
            concepts: ids.map(|i| entry(i, task)).collect(),
            embeddings: Matrix::from_vec(n, dim, data).unwrap(),
        }
    }

    #[test]
    fn expand_shapes_and_preserves_weights() {
        let mut m = IncrementalModel::new(3);
        m.expand(&bottleneck(0, 0..5, 3), &[0, 1]).unwrap();
        assert_eq!(m.w_c().shape(), (5, 3));
        assert_eq!(m.w_l().shape(), (2, 5));

        let (_, w_l) = m.weights_mut();
        for (i, v) in w_l.as_mut_slice().iter_mut().enumerate() {
            *v = i as f64 + 0.5;
        }
        let before_l = m.w_l().clone();
        let before_c = m.w_c().clone();

        m.expand(&bottleneck(1, 5..12, 3), &[2, 3, 4]).unwrap();
        assert_eq!(m.w_c().shape(), (12, 3));
        assert_eq!(m.w_l().shape(), (5, 12));
        for r in 0..2 {
            assert_eq!(&m.w_l().row(r)[..5], before_l.row(r));
            assert!(m.w_l().row(r)[5..].iter().all(|&v| v == 0.0));
        }
        for r in 2..5 {
            assert!(m.w_l().row(r).iter().all(|&v| v == 0.0));
        }
        for r in 0..5 {
            assert_eq!(m.w_c().row(r), before_c.row(r));
        }
    }

    #[test]
    fn expand_rejects_duplicates() {
        let mut m = IncrementalModel::new(2);
        let mut b = bottleneck(0, 0..2, 2);
        b.concepts[1].id = 0;
        assert!(m.expand(&b, &[0]).is_err());
        m.expand(&bottleneck(0, 0..2, 2), &[0]).unwrap();
        assert!(m.expand(&bottleneck(1, 1..3, 2), &[1]).is_err());
        assert!(m.expand(&bottleneck(1, 2..3, 2), &[0]).is_err());
    }

    #[test]
    fn single_concept_logit() {
        let m = IncrementalModel::from_parts(
            Matrix::from_vec(1, 2, vec![2.0, 0.0]).unwrap(),
            Matrix::from_vec(1, 1, vec![0.5]).unwrap(),
            vec![entry(0, 0)],
            vec![0],
            Matrix::from_vec(1, 2, vec![1.0, 0.0]).unwrap(),
        )
        .unwrap();
        let x = Matrix::from_vec(1, 2, vec![1.0, 0.0]).unwrap();
        assert_eq!(m.logits(&x).unwrap().as_slice(), &[1.0]);
    }

    #[test]
    fn contributions_fixture() {
        let m = IncrementalModel::from_parts(
            Matrix::from_vec(2, 2, vec![2.0, 0.0, 0.0, 3.0]).unwrap(),
            Matrix::from_vec(1, 2, vec![0.5, -1.0]).unwrap(),
            vec![entry(0, 0), entry(1, 0)],
            vec![7],
            Matrix::identity(2),
        )
        .unwrap();
        let con = m.contributions(&[1.0, 0.0], 7).unwrap();
        assert_eq!(con, vec![1.0, 0.0]);
        let logit = m.logits(&Matrix::from_vec(1, 2, vec![1.0, 0.0]).unwrap()).unwrap();
        assert_eq!(con.iter().sum::<f64>(), logit.get(0, 0));
        assert!(m.contributions(&[1.0, 0.0], 3).is_err());
    }

    #[test]
    fn argmax_ties_pick_lowest() {
        assert_eq!(argmax(&[2.0, 5.0, 1.0]), 1);
        assert_eq!(argmax(&[5.0, 5.0]), 0);
    }

    #[test]
    fn fresh_scores_equal_clip_activations() {
        let mut m = IncrementalModel::new(3);
        let b = bottleneck(0, 0..4, 3);
        m.expand(&b, &[0]).unwrap();
        let x = Matrix::from_vec(2, 3, vec![0.1, 0.2, 0.3, -0.4, 0.5, 0.6]).unwrap();
        assert_eq!(
            m.concept_scores(&x).unwrap(),
            clip_activations(&x, &b.embeddings).unwrap()
        );
        assert!(m.concept_scores(&Matrix::zeros(1, 2)).is_err());
    }
}
