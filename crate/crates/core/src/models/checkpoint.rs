//! Self-contained checkpoint files.
//!
//! Layout: the 8-byte magic `SHSCKPT1`, a little-endian `u64` header
//! length, a JSON header, then every tensor's `f32` values little-endian in
//! header order. Values round-trip bit-exactly.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sharpscore_nn::Tensor;

use super::{Backbone, HeadKind, ModelError, ModelScale};
use crate::dataset::TargetStats;
use crate::preprocess::PixelStats;

const MAGIC: &[u8; 8] = b"SHSCKPT1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub backbone: Backbone,
    pub head: HeadKind,
    pub scale: ModelScale,
    /// Standardization applied to regression targets during training.
    pub target_stats: Option<TargetStats>,
    pub pixel_stats: Option<PixelStats>,
    /// Epoch (1-based) the weights were taken from, when produced by training.
    pub epoch: Option<usize>,
    /// Parameters and normalization buffers by qualified name.
    pub tensors: BTreeMap<String, Tensor>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    backbone: Backbone,
    head: HeadKind,
    scale: ModelScale,
    target_stats: Option<TargetStats>,
    pixel_stats: Option<PixelStats>,
    epoch: Option<usize>,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), ModelError> {
        let header = Header {
            backbone: self.backbone,
            head: self.head,
            scale: self.scale,
            target_stats: self.target_stats,
            pixel_stats: self.pixel_stats,
            epoch: self.epoch,
            tensors: self
                .tensors
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| ModelError::Format(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for t in self.tensors.values() {
            let mut buf = Vec::with_capacity(t.len() * 4);
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, ModelError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(ModelError::Format("not a sharpscore checkpoint".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)?;
        let header: Header = serde_json::from_slice(&json).map_err(|e| ModelError::Format(e.to_string()))?;
        let mut tensors = BTreeMap::new();
        for entry in header.tensors {
            let count: usize = entry.shape.iter().product();
            let mut raw = vec![0u8; count * 4];
            r.read_exact(&mut raw)?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            tensors.insert(entry.name, Tensor::from_vec(&entry.shape, data));
        }
        Ok(Checkpoint {
            backbone: header.backbone,
            head: header.head,
            scale: header.scale,
            target_stats: header.target_stats,
            pixel_stats: header.pixel_stats,
            epoch: header.epoch,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let file = std::fs::File::open(path)?;
        Checkpoint::read_from(std::io::BufReader::new(file))
    }
}
