//! Binary checkpoint container.
//!
//! Layout: `CQRM` magic, `u32` format version, `u32` header length, a JSON
//! header (architecture, vocabulary, tensor names and shapes), then every
//! tensor as little-endian f32 in header order.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::graph::ParamSet;
use super::tensor::Tensor;
use super::{Arch, SeqModel, Vocabulary};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CQRM";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    arch: Arch,
    vocab: Vec<String>,
    tensors: Vec<(String, [usize; 2])>,
}

impl SeqModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = Header {
            arch: self.arch,
            vocab: self.vocab.tokens().to_vec(),
            tensors: self.params.iter().map(|(n, t)| (n.to_string(), t.shape())).collect(),
        };
        let json = serde_json::to_vec(&header)?;
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        for (_, t) in self.params.iter() {
            for &x in t.data() {
                w.write_all(&(x as f32).to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let bad = |m: &str| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: m.to_string(),
        };
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(bad("not a model checkpoint"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                expected: CHECKPOINT_VERSION,
                found: version,
            });
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = bytes.get(12..12 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        header.arch.validate()?;
        if header.vocab.len() != header.arch.vocab_size {
            return Err(Error::Shape {
                name: "vocabulary".into(),
                expected: vec![header.arch.vocab_size],
                found: vec![header.vocab.len()],
            });
        }
        let expected = header.arch.param_shapes();
        if expected.len() != header.tensors.len() {
            return Err(bad("parameter count does not match architecture"));
        }
        let mut offset = 12 + hlen;
        let mut params = ParamSet::new();
        for ((name, shape), (ename, eshape)) in header.tensors.iter().zip(&expected) {
            if name != ename || shape != eshape {
                return Err(Error::Shape {
                    name: name.clone(),
                    expected: eshape.to_vec(),
                    found: shape.to_vec(),
                });
            }
            let n = shape[0] * shape[1];
            let raw = bytes
                .get(offset..offset + 4 * n)
                .ok_or_else(|| bad("truncated tensor data"))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            offset += 4 * n;
            params.push(name.clone(), Tensor::from_vec(shape[0], shape[1], data));
        }
        if offset != bytes.len() {
            return Err(bad("trailing bytes after tensors"));
        }
        Ok(SeqModel::from_parts(header.arch, Vocabulary::from_tokens(header.vocab), params))
    }

    /// Rounds every parameter through f32 so in-memory state equals a reload.
    pub fn round_to_f32(&mut self) {
        for i in 0..self.params.len() {
            for x in self.params.get_mut(i).data_mut() {
                *x = *x as f32 as f64;
            }
        }
    }
}
