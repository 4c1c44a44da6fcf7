//! Self-contained checkpoint files.
//!
//! A checkpoint carries the canonical config JSON it was produced under, the
//! epoch counter, a digest of the training log so far, and every named
//! parameter tensor. Round trips are bit-exact. The format is a single
//! little-endian binary container:
//!
//! ```text
//! magic "FDVK" | version u32 | config len u64 + utf8 | epoch u64
//! | digest len u64 + utf8 | tensor count u64
//! | per tensor: name len u64 + utf8, rank u64, dims u64…, value count u64, f32…
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use candle_core::Tensor;

use super::ModelError;

const MAGIC: &[u8; 4] = b"FDVK";
const VERSION: u32 = 1;

/// A serializable snapshot of trained parameters plus run provenance.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    /// Canonical JSON of the experiment config the run was launched with.
    pub config_json: String,
    /// Epochs completed when the snapshot was taken.
    pub epoch: usize,
    /// Hex digest of the training log emitted up to this snapshot.
    pub log_digest: String,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new(
        config_json: impl Into<String>,
        epoch: usize,
        log_digest: impl Into<String>,
        tensors: BTreeMap<String, Tensor>,
    ) -> Self {
        Self {
            config_json: config_json.into(),
            epoch,
            log_digest: log_digest.into(),
            tensors,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        write_str(&mut w, &self.config_json)?;
        w.write_all(&(self.epoch as u64).to_le_bytes())?;
        write_str(&mut w, &self.log_digest)?;
        w.write_all(&(self.tensors.len() as u64).to_le_bytes())?;
        for (name, tensor) in &self.tensors {
            write_str(&mut w, name)?;
            let dims = tensor.dims();
            w.write_all(&(dims.len() as u64).to_le_bytes())?;
            for &d in dims {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            let values = tensor.flatten_all()?.to_vec1::<f32>()?;
            w.write_all(&(values.len() as u64).to_le_bytes())?;
            for v in values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, "magic")?;
        if &magic != MAGIC {
            return Err(ModelError::IncompatibleCheckpoint(format!(
                "{}: not a checkpoint file (bad magic)",
                path.display()
            )));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(ModelError::IncompatibleCheckpoint(format!(
                "{}: format version {version}, this build reads {VERSION}",
                path.display()
            )));
        }
        let config_json = read_str(&mut r)?;
        let epoch = read_u64(&mut r)? as usize;
        let log_digest = read_str(&mut r)?;
        let count = read_u64(&mut r)? as usize;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let name = read_str(&mut r)?;
            let rank = read_u64(&mut r)? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(read_u64(&mut r)? as usize);
            }
            let n = read_u64(&mut r)? as usize;
            if n != dims.iter().product::<usize>() {
                return Err(ModelError::IncompatibleCheckpoint(format!(
                    "tensor `{name}` claims {n} values for shape {dims:?}"
                )));
            }
            let mut bytes = vec![0u8; n * 4];
            read_exact(&mut r, &mut bytes, "tensor data")?;
            let values: Vec<f32> = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.insert(name, Tensor::from_vec(values, dims, &crate::device())?);
        }
        Ok(Self {
            config_json,
            epoch,
            log_digest,
            tensors,
        })
    }
}

fn write_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u64).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<(), ModelError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            ModelError::IncompatibleCheckpoint(format!("truncated while reading {what}"))
        } else {
            ModelError::Io(e)
        }
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32, ModelError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, "u32")?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, ModelError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, "u64")?;
    Ok(u64::from_le_bytes(b))
}

fn read_str(r: &mut impl Read) -> Result<String, ModelError> {
    let len = read_u64(r)? as usize;
    if len > 1 << 30 {
        return Err(ModelError::IncompatibleCheckpoint(format!(
            "implausible string length {len}"
        )));
    }
    let mut bytes = vec![0u8; len];
    read_exact(r, &mut bytes, "string")?;
    String::from_utf8(bytes)
        .map_err(|_| ModelError::IncompatibleCheckpoint("non-utf8 string field".into()))
}
