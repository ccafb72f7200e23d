//! Exemplar-free memory of past classes.
//!
//! Only class-mean prototypes survive a task boundary. When a new task
//! arrives, each old class `j` borrows the within-class scatter of the new
//! class `h` whose prototype best matches `j`'s class-name embedding:
//! `pseudo = p_j + (V_h − p_h)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{cosine, Matrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    pub vector: Vec<f64>,
    /// Task the class was learned in.
    pub task: usize,
    /// Number of training samples averaged.
    pub count: usize,
}

/// One prototype per seen class, keyed by class id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PrototypeStore {
    entries: BTreeMap<usize, Prototype>,
}

impl PrototypeStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, class: usize) -> Option<&Prototype> {
        self.entries.get(&class)
    }

    /// Entries in ascending class order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &Prototype)> {
        self.entries.iter().map(|(&c, p)| (c, p))
    }

    /// Adds prototypes of newly learned classes. A class is only ever added
    /// once; its prototype is never updated afterwards.
    pub fn insert_all(&mut self, protos: BTreeMap<usize, Prototype>) -> Result<()> {
        if let Some(c) = protos.keys().find(|c| self.entries.contains_key(c)) {
            return Err(Error::Model(format!("prototype for class {c} already stored")));
        }
        self.entries.extend(protos);
        Ok(())
    }
}

/// Class-mean of the rows of `features`, per label.
pub fn extract_prototypes(
    features: &Matrix,
    labels: &[usize],
    task: usize,
) -> Result<BTreeMap<usize, Prototype>> {
    if labels.len() != features.rows() {
        return Err(Error::Consistency(format!(
            "{} labels for {} feature rows",
            labels.len(),
            features.rows()
        )));
    }
    let d = features.cols();
    let mut sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for (row, &l) in features.row_iter().zip(labels) {
        let (sum, n) = sums.entry(l).or_insert_with(|| (vec![0.0; d], 0));
        sum.iter_mut().zip(row).for_each(|(s, v)| *s += v);
        *n += 1;
    }
    Ok(sums
        .into_iter()
        .map(|(class, (mut sum, count))| {
            let inv = 1.0 / count as f64;
            sum.iter_mut().for_each(|v| *v *= inv);
            (
                class,
                Prototype {
                    vector: sum,
                    task,
                    count,
                },
            )
        })
        .collect())
}

/// New class whose prototype has the highest cosine with an old class's
/// name embedding. `candidates` are `(class id, prototype)`; ties go to the
/// lowest class id.
pub fn semantic_match<'a, I>(class_text_embedding: &[f64], candidates: I) -> Result<usize>
where
    I: IntoIterator<Item = (usize, &'a [f64])>,
{
    let mut best: Option<(usize, f64)> = None;
    for (class, proto) in candidates {
        if proto.len() != class_text_embedding.len() {
            return Err(Error::Consistency(format!(
                "prototype of class {class} has dimension {}, text embedding {}",
                proto.len(),
                class_text_embedding.len()
            )));
        }
        let cos = cosine(class_text_embedding, proto);
        best = match best {
            Some((c, b)) if b > cos || (b == cos && c < class) => Some((c, b)),
            _ => Some((class, cos)),
        };
    }
    best.map(|(c, _)| c)
        .ok_or_else(|| Error::Task("no new-class prototypes to match against".into()))
}

/// Pseudo-features for an old class: each row is `p_j + V_h[r] − p_h`.
///
/// The output is not renormalized.
pub fn augment(p_j: &[f64], v_h: &Matrix, p_h: &[f64]) -> Result<Matrix> {
    let d = v_h.cols();
    if p_j.len() != d || p_h.len() != d {
        return Err(Error::Consistency(format!(
            "augment: prototypes of length {} and {} for {d}-dimensional features",
            p_j.len(),
            p_h.len()
        )));
    }
    let mut out = v_h.clone();
    for r in 0..out.rows() {
        for ((v, a), b) in out.row_mut(r).iter_mut().zip(p_j).zip(p_h) {
            *v = a + *v - b;
        }
    }
    Ok(out)
}

/// Which new class each old class borrowed its scatter from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentationMatch {
    pub old_class: usize,
    pub new_class: usize,
    pub samples: usize,
}

#[derive(Clone, Debug)]
pub struct PseudoFeatures {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub matches: Vec<AugmentationMatch>,
}

/// Generates pseudo-features for every class in `store` that was learned
/// before `task`, using the current task's features.
///
/// `class_name_embeddings` is indexed by class id. `current_prototypes` must
/// cover every label in `labels`.
pub fn augment_old_classes(
    store: &PrototypeStore,
    task: usize,
    class_name_embeddings: &Matrix,
    current_prototypes: &BTreeMap<usize, Prototype>,
    features: &Matrix,
    labels: &[usize],
) -> Result<PseudoFeatures> {
    let d = features.cols();
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut out = Matrix::zeros(0, d);
    let mut out_labels = Vec::new();
    let mut matches = Vec::new();
    for (j, proto) in store.iter().filter(|(_, p)| p.task < task) {
        if j >= class_name_embeddings.rows() {
            return Err(Error::Consistency(format!("no class-name embedding for class {j}")));
        }
        let h = semantic_match(
            class_name_embeddings.row(j),
            current_prototypes
                .iter()
                .map(|(&c, p)| (c, p.vector.as_slice())),
        )?;
        let rows = by_class
            .get(&h)
            .ok_or_else(|| Error::Consistency(format!("no current samples of class {h}")))?;
        let v_h = features.select_rows(rows);
        let pseudo = augment(&proto.vector, &v_h, &current_prototypes[&h].vector)?;
        out = out.vstack(&pseudo)?;
        out_labels.extend(std::iter::repeat_n(j, rows.len()));
        matches.push(AugmentationMatch {
            old_class: j,
            new_class: h,
            samples: rows.len(),
        });
    }
    Ok(PseudoFeatures {
        features: out,
        labels: out_labels,
        matches,
    })
}
