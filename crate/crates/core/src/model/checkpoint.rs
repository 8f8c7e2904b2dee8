//! `SOLGRAPH-CKPT v1` checkpoint files.
//!
//! Layout after the header line (integers are little-endian u32):
//!
//! ```text
//! config length, config text (sorted key=value lines)
//! block count
//! per block: name length, name, rank, extents[rank], row-major f32 values
//! CRC-32 of every float byte in block order
//! ```

use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::params::{param_names, param_shapes};
use super::{ModelConfig, ModelParams, ModelWeights};
use crate::autodiff::Matrix;
use crate::config::{ConfigError, KvDoc};
use crate::data::LabelScaler;

pub const CHECKPOINT_HEADER: &str = "SOLGRAPH-CKPT v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad header, expected {CHECKPOINT_HEADER:?}")]
    BadHeader,
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

/// Trained weights plus everything needed to reproduce predictions in log S units.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub scaler: LabelScaler,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn config_doc(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        self.config.write_kv(&mut doc);
        doc.set("scaler.mean", self.scaler.mean);
        doc.set("scaler.std", self.scaler.std);
        doc
    }

    /// Short identifier derived from the stored floats.
    pub fn fingerprint(&self) -> String {
        let mut h = crc32fast::Hasher::new();
        for m in self.params.iter() {
            for v in m.as_slice() {
                h.update(&v.to_le_bytes());
            }
        }
        format!("{:08x}", h.finalize())
    }
}

fn put_u32<W: Write>(out: &mut W, v: usize) -> io::Result<()> {
    let v = u32::try_from(v).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "length exceeds u32"))?;
    out.write_all(&v.to_le_bytes())
}

fn get_u32<R: Read>(input: &mut R) -> io::Result<usize> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

pub fn write_checkpoint<W: Write>(mut out: W, ckpt: &Checkpoint) -> io::Result<()> {
    out.write_all(CHECKPOINT_HEADER.as_bytes())?;
    out.write_all(b"\n")?;
    let config = ckpt.config_doc().to_string();
    put_u32(&mut out, config.len())?;
    out.write_all(config.as_bytes())?;
    put_u32(&mut out, ckpt.params.len())?;
    let mut crc = crc32fast::Hasher::new();
    for (name, m) in param_names(ckpt.params.layers.len()).iter().zip(ckpt.params.iter()) {
        put_u32(&mut out, name.len())?;
        out.write_all(name.as_bytes())?;
        put_u32(&mut out, 2)?;
        put_u32(&mut out, m.rows())?;
        put_u32(&mut out, m.cols())?;
        let mut bytes = Vec::with_capacity(m.len() * 4);
        for v in m.as_slice() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        crc.update(&bytes);
        out.write_all(&bytes)?;
    }
    out.write_all(&crc.finalize().to_le_bytes())?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Checkpoint, CheckpointError> {
    let mut header = vec![0u8; CHECKPOINT_HEADER.len() + 1];
    input.read_exact(&mut header)?;
    if &header[..CHECKPOINT_HEADER.len()] != CHECKPOINT_HEADER.as_bytes() || header[CHECKPOINT_HEADER.len()] != b'\n' {
        return Err(CheckpointError::BadHeader);
    }
    let len = get_u32(&mut input)?;
    let mut text = vec![0u8; len];
    input.read_exact(&mut text)?;
    let text = String::from_utf8(text).map_err(|_| CheckpointError::Corrupt("config is not UTF-8".into()))?;
    let doc = KvDoc::parse(&text)?;
    let mut known: Vec<&str> = ModelConfig::KEYS.to_vec();
    known.extend(["scaler.mean", "scaler.std"]);
    doc.reject_unknown(&known)?;
    let mut config = ModelConfig::default();
    config.read_kv(&doc)?;
    config.validate()?;
    let missing = |k: &str| CheckpointError::Corrupt(format!("config lacks {k}"));
    let scaler = LabelScaler {
        mean: doc.parsed("scaler.mean")?.ok_or_else(|| missing("scaler.mean"))?,
        std: doc.parsed("scaler.std")?.ok_or_else(|| missing("scaler.std"))?,
    };

    let names = param_names(config.transformer_depth);
    let shapes = param_shapes(&config);
    let count = get_u32(&mut input)?;
    if count != names.len() {
        return Err(CheckpointError::Corrupt(format!("{count} blocks, config implies {}", names.len())));
    }
    let mut crc = crc32fast::Hasher::new();
    let mut tensors = Vec::with_capacity(count);
    for (name, shape) in names.iter().zip(&shapes) {
        let n = get_u32(&mut input)?;
        if n > 256 {
            return Err(CheckpointError::Corrupt("block name too long".into()));
        }
        let mut found = vec![0u8; n];
        input.read_exact(&mut found)?;
        if found != name.as_bytes() {
            return Err(CheckpointError::Corrupt(format!(
                "expected block {name}, found {}",
                String::from_utf8_lossy(&found)
            )));
        }
        let rank = get_u32(&mut input)?;
        if rank != 2 {
            return Err(CheckpointError::Corrupt(format!("{name}: rank {rank}")));
        }
        let extents = (get_u32(&mut input)?, get_u32(&mut input)?);
        if extents != *shape {
            return Err(CheckpointError::Corrupt(format!("{name}: shape {extents:?}, expected {shape:?}")));
        }
        let mut bytes = vec![0u8; extents.0 * extents.1 * 4];
        input.read_exact(&mut bytes)?;
        crc.update(&bytes);
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push(Matrix::from_vec(extents.0, extents.1, values));
    }
    let mut stored = [0u8; 4];
    input.read_exact(&mut stored)?;
    let stored = u32::from_le_bytes(stored);
    let computed = crc.finalize();
    if stored != computed {
        return Err(CheckpointError::Checksum { stored, computed });
    }
    let params = ModelWeights::from_ordered(config.transformer_depth, tensors)
        .ok_or_else(|| CheckpointError::Corrupt("block count".into()))?;
    Ok(Checkpoint { config, scaler, params })
}

/// Written to a temporary sibling then renamed into place.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> io::Result<()> {
    crate::io::write_atomic(path, |w| write_checkpoint(w, ckpt))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let file = std::fs::File::open(path)?;
    read_checkpoint(io::BufReader::new(file))
}
