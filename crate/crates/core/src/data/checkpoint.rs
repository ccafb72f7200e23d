//! Checkpoint files.
//!
//! ```text
//! magic       b"CBCK"
//! version     u32 LE
//! header_len  u32 LE
//! header      UTF-8 JSON (registries, bottlenecks, config, task plan)
//! blobs       CBEM float64 blobs: W_C, W_l, concept embeddings, prototypes
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::blob::{read_blob, write_blob, Precision};
use super::bundle::TaskPlan;
use crate::error::{Error, Result};
use crate::model::{ConceptEntry, IncrementalModel};
use crate::prototype::{Prototype, PrototypeStore};
use crate::tensor::Matrix;
use crate::trainer::TrainConfig;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CBCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to resume, evaluate or explain a model after some task.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub tasks_completed: usize,
    pub config: TrainConfig,
    pub task_plan: TaskPlan,
    pub model: IncrementalModel,
    /// Global concept ids selected by each task, in `W_C` row order.
    pub bottlenecks: Vec<Vec<usize>>,
    pub prototypes: PrototypeStore,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PrototypeMeta {
    class: usize,
    task: usize,
    count: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    tasks_completed: usize,
    dim: usize,
    config: TrainConfig,
    task_plan: TaskPlan,
    classes: Vec<usize>,
    concepts: Vec<ConceptEntry>,
    bottlenecks: Vec<Vec<usize>>,
    prototypes: Vec<PrototypeMeta>,
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let header = Header {
            tasks_completed: self.tasks_completed,
            dim: self.model.dim(),
            config: self.config.clone(),
            task_plan: self.task_plan.clone(),
            classes: self.model.classes().to_vec(),
            concepts: self.model.concepts().to_vec(),
            bottlenecks: self.bottlenecks.clone(),
            prototypes: self
                .prototypes
                .iter()
                .map(|(class, p)| PrototypeMeta {
                    class,
                    task: p.task,
                    count: p.count,
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(Error::json("checkpoint header"))?;
        let header_len = u32::try_from(json.len())
            .map_err(|_| Error::Model("checkpoint header too large".into()))?;
        let protos: Vec<&[f64]> = self.prototypes.iter().map(|(_, p)| p.vector.as_slice()).collect();
        let protos = Matrix::from_rows(&protos, self.model.dim())?;

        let io = Error::io("writing checkpoint");
        let res = (|| -> std::io::Result<()> {
            w.write_all(&CHECKPOINT_MAGIC)?;
            w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
            w.write_all(&header_len.to_le_bytes())?;
            w.write_all(&json)?;
            for m in [
                self.model.w_c(),
                self.model.w_l(),
                self.model.concept_embeddings(),
                &protos,
            ] {
                write_blob(w, m, Precision::F64)?;
            }
            Ok(())
        })();
        res.map_err(io)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ctx = || format!("writing {}", path.display());
        let mut w = BufWriter::new(File::create(path).map_err(Error::io(ctx()))?);
        self.write_to(&mut w)?;
        w.flush().map_err(Error::io(ctx()))
    }

    /// Reads a checkpoint. `source` names the input in error messages.
    pub fn read_from<R: Read>(r: &mut R, source: &Path) -> Result<Self> {
        let ctx = || format!("reading checkpoint {}", source.display());
        let mut fixed = [0u8; 12];
        r.read_exact(&mut fixed).map_err(Error::io(ctx()))?;
        if fixed[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Format {
                file: source.to_path_buf(),
                message: format!("bad checkpoint magic {:?}", &fixed[..4]),
            });
        }
        let version = u32::from_le_bytes(fixed[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                file: source.to_path_buf(),
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let header_len = u32::from_le_bytes(fixed[8..12].try_into().unwrap()) as usize;
        let mut json = vec![0u8; header_len];
        r.read_exact(&mut json).map_err(Error::io(ctx()))?;
        let header: Header = serde_json::from_slice(&json).map_err(|e| Error::Format {
            file: source.to_path_buf(),
            message: format!("checkpoint header: {e}"),
        })?;

        let w_c = read_blob(r, source)?;
        let w_l = read_blob(r, source)?;
        let concept_embeddings = read_blob(r, source)?;
        let protos = read_blob(r, source)?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(Error::io(ctx()))? != 0 {
            return Err(Error::Format {
                file: source.to_path_buf(),
                message: "trailing bytes after checkpoint".into(),
            });
        }

        let inconsistent = |msg: String| Error::Consistency(format!("{}: {msg}", source.display()));
        if w_c.cols() != header.dim {
            return Err(inconsistent(format!(
                "W_C has {} columns, header says dimension {}",
                w_c.cols(),
                header.dim
            )));
        }
        let selected: usize = header.bottlenecks.iter().map(Vec::len).sum();
        if selected != w_c.rows() {
            return Err(inconsistent(format!(
                "bottlenecks hold {selected} concepts, W_C has {} rows",
                w_c.rows()
            )));
        }
        let registry: Vec<usize> = header.concepts.iter().map(|c| c.id).collect();
        if registry != header.bottlenecks.concat() {
            return Err(inconsistent("concept registry does not match bottlenecks".into()));
        }
        if protos.rows() != header.prototypes.len() || (protos.rows() > 0 && protos.cols() != header.dim) {
            return Err(inconsistent("prototype blob does not match header".into()));
        }
        let model =
            IncrementalModel::from_parts(w_c, w_l, header.concepts, header.classes, concept_embeddings)?;
        let mut entries = BTreeMap::new();
        for (meta, row) in header.prototypes.iter().zip(protos.row_iter()) {
            entries.insert(
                meta.class,
                Prototype {
                    vector: row.to_vec(),
                    task: meta.task,
                    count: meta.count,
                },
            );
        }
        let mut prototypes = PrototypeStore::new();
        prototypes.insert_all(entries)?;
        Ok(Self {
            tasks_completed: header.tasks_completed,
            config: header.config,
            task_plan: header.task_plan,
            model,
            bottlenecks: header.bottlenecks,
            prototypes,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(Error::io(format!("opening {}", path.display())))?;
        Self::read_from(&mut BufReader::new(file), path)
    }
}
