//! Versioned binary checkpoints: magic "IDRLCKPT", a u32 version, then
//! named sections of little-endian 64-bit real matrices.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::tape::Arr;

const MAGIC: &[u8; 8] = b"IDRLCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic {found:?}, expected \"IDRLCKPT\"")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("checkpoint truncated while reading {context}")]
    Truncated { context: String },
    #[error("checkpoint has no section named {0:?}")]
    MissingSection(String),
}

/// Named groups of parameter matrices.
#[derive(Debug, Clone, Default)]
pub struct Checkpoint {
    pub sections: Vec<(String, Vec<Arr>)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, arrays: Vec<Arr>) {
        self.sections.push((name.into(), arrays));
    }

    pub fn get(&self, name: &str) -> Result<&[Arr], CheckpointError> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, a)| a.as_slice())
            .ok_or_else(|| CheckpointError::MissingSection(name.to_string()))
    }

    /// Scalars ride along as a single-row matrix.
    pub fn push_scalars(&mut self, name: impl Into<String>, values: &[f64]) {
        let arr = Arr::from_shape_vec((1, values.len()), values.to_vec()).unwrap();
        self.push(name, vec![arr]);
    }

    pub fn get_scalars(&self, name: &str) -> Result<Vec<f64>, CheckpointError> {
        let arrays = self.get(name)?;
        Ok(arrays[0].iter().cloned().collect())
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.sections.len() as u32).to_le_bytes())?;
        for (name, arrays) in &self.sections {
            let bytes = name.as_bytes();
            w.write_all(&(bytes.len() as u32).to_le_bytes())?;
            w.write_all(bytes)?;
            w.write_all(&(arrays.len() as u32).to_le_bytes())?;
            for a in arrays {
                w.write_all(&(a.nrows() as u32).to_le_bytes())?;
                w.write_all(&(a.ncols() as u32).to_le_bytes())?;
                for &v in a.iter() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic, "magic")?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic {
                found: magic.to_vec(),
            });
        }
        let version = read_u32(&mut r, "version")?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::BadVersion(version));
        }
        let n_sections = read_u32(&mut r, "section count")? as usize;
        let mut sections = Vec::with_capacity(n_sections);
        for _ in 0..n_sections {
            let name_len = read_u32(&mut r, "section name length")? as usize;
            let mut name_bytes = vec![0u8; name_len];
            read_exact(&mut r, &mut name_bytes, "section name")?;
            let name = String::from_utf8_lossy(&name_bytes).into_owned();
            let n_arrays = read_u32(&mut r, "array count")? as usize;
            let mut arrays = Vec::with_capacity(n_arrays);
            for _ in 0..n_arrays {
                let rows = read_u32(&mut r, "rows")? as usize;
                let cols = read_u32(&mut r, "cols")? as usize;
                let mut data = vec![0.0f64; rows * cols];
                for v in data.iter_mut() {
                    let mut b = [0u8; 8];
                    read_exact(&mut r, &mut b, "matrix data")?;
                    *v = f64::from_le_bytes(b);
                }
                arrays.push(Arr::from_shape_vec((rows, cols), data).unwrap());
            }
            sections.push((name, arrays));
        }
        Ok(Checkpoint { sections })
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], context: &str) -> Result<(), CheckpointError> {
    r.read_exact(buf).map_err(|_| CheckpointError::Truncated {
        context: context.to_string(),
    })
}

fn read_u32(r: &mut impl Read, context: &str) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, context)?;
    Ok(u32::from_le_bytes(b))
}
