//! `CBEM` tensor blobs.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   b"CBEM"          4 bytes
//! version u32              1 = float32 payload, 2 = float64 payload
//! rows    u32
//! cols    u32
//! payload rows*cols IEEE-754 values, row-major
//! ```
//!
//! Embedding bundles are always written as version 1. Checkpoints use
//! version 2 so trained weights round-trip losslessly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const BLOB_MAGIC: [u8; 4] = *b"CBEM";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn version(self) -> u32 {
        match self {
            Precision::F32 => 1,
            Precision::F64 => 2,
        }
    }

    fn from_version(v: u32) -> Option<Self> {
        match v {
            1 => Some(Precision::F32),
            2 => Some(Precision::F64),
            _ => None,
        }
    }
}

pub fn write_blob<W: Write>(w: &mut W, m: &Matrix, precision: Precision) -> std::io::Result<()> {
    let dim = |n: usize| {
        u32::try_from(n).map_err(|_| {
            std::io::Error::new(std::io::ErrorKind::InvalidInput, "matrix too large for CBEM")
        })
    };
    w.write_all(&BLOB_MAGIC)?;
    w.write_all(&precision.version().to_le_bytes())?;
    w.write_all(&dim(m.rows())?.to_le_bytes())?;
    w.write_all(&dim(m.cols())?.to_le_bytes())?;
    match precision {
        Precision::F32 => {
            for &v in m.as_slice() {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Precision::F64 => {
            for &v in m.as_slice() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// Reads one blob. `source` names the file in error messages.
pub fn read_blob<R: Read>(r: &mut R, source: &Path) -> Result<Matrix> {
    let ctx = || format!("reading blob {}", source.display());
    let mut header = [0u8; 16];
    r.read_exact(&mut header).map_err(Error::io(ctx()))?;
    if header[..4] != BLOB_MAGIC {
        return Err(Error::Format {
            file: source.to_path_buf(),
            message: format!("bad blob magic {:?}", &header[..4]),
        });
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
    let version = word(4);
    let precision = Precision::from_version(version).ok_or_else(|| Error::Version {
        file: source.to_path_buf(),
        found: version,
        expected: Precision::F32.version(),
    })?;
    let (rows, cols) = (word(8) as usize, word(12) as usize);
    let n = rows.checked_mul(cols).ok_or_else(|| Error::Format {
        file: source.to_path_buf(),
        message: format!("blob shape {rows}x{cols} overflows"),
    })?;
    let width = match precision {
        Precision::F32 => 4,
        Precision::F64 => 8,
    };
    let mut bytes = vec![0u8; n * width];
    r.read_exact(&mut bytes).map_err(Error::io(ctx()))?;
    let data = match precision {
        Precision::F32 => bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect(),
        Precision::F64 => bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect(),
    };
    Ok(Matrix::from_vec(rows, cols, data)?)
}

pub fn save_blob(path: &Path, m: &Matrix, precision: Precision) -> Result<()> {
    let ctx = || format!("writing blob {}", path.display());
    let mut w = BufWriter::new(File::create(path).map_err(Error::io(ctx()))?);
    write_blob(&mut w, m, precision).map_err(Error::io(ctx()))?;
    w.flush().map_err(Error::io(ctx()))
}

/// Loads a blob file, rejecting trailing bytes.
pub fn load_blob(path: &Path) -> Result<Matrix> {
    let file = File::open(path).map_err(Error::io(format!("opening {}", path.display())))?;
    let mut r = BufReader::new(file);
    let m = read_blob(&mut r, path)?;
    let mut rest = [0u8; 1];
    match r.read(&mut rest) {
        Ok(0) => Ok(m),
        Ok(_) => Err(Error::Format {
            file: path.to_path_buf(),
            message: "trailing bytes after blob payload".into(),
        }),
        Err(e) => Err(Error::io(format!("reading {}", path.display()))(e)),
    }
}
