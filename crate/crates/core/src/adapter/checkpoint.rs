//! Adapter checkpoints: `ADP1` container, header `(C, H, 4)`, JSON block
//! with tensor shapes and the residual ratio, then `w1, b1, w2, b2` as
//! little-endian f64.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

use super::{AdapterParams, TENSOR_NAMES};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"ADP1";

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    dim: usize,
    hidden: usize,
    residual_ratio: f64,
    dtype: String,
    tensors: Vec<TensorMeta>,
}

impl AdapterParams {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let (c, h) = (self.dim(), self.hidden());
        let shapes = [vec![h, c], vec![h], vec![c, h], vec![c]];
        let meta = CheckpointMeta {
            dim: c,
            hidden: h,
            residual_ratio: self.residual_ratio,
            dtype: "f64".into(),
            tensors: TENSOR_NAMES
                .iter()
                .zip(shapes)
                .map(|(n, shape)| TensorMeta {
                    name: (*n).into(),
                    shape,
                })
                .collect(),
        };
        let meta = serde_json::to_vec(&meta).expect("metadata serializes");
        let mut payload = Vec::with_capacity(self.param_count() * 8);
        for t in self.tensors() {
            container::f64_bytes(t, &mut payload);
        }
        Ok(container::encode(
            &CHECKPOINT_MAGIC,
            [c as u32, h as u32, 4],
            &meta,
            &payload,
        ))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let c = container::decode(&CHECKPOINT_MAGIC, bytes)?;
        let meta: CheckpointMeta = serde_json::from_slice(c.meta)
            .map_err(|e| Error::InvalidHeader(format!("checkpoint metadata JSON: {e}")))?;
        let [dim, hidden, count] = c.header.map(|x| x as usize);
        if meta.dim != dim || meta.hidden != hidden || count != 4 || meta.tensors.len() != 4 {
            return Err(Error::InvalidHeader(
                "checkpoint header disagrees with metadata".into(),
            ));
        }
        if meta.dtype != "f64" {
            return Err(Error::InvalidHeader(format!(
                "unsupported checkpoint dtype {:?}",
                meta.dtype
            )));
        }
        let expected_shapes = [vec![hidden, dim], vec![hidden], vec![dim, hidden], vec![dim]];
        for ((t, name), shape) in meta.tensors.iter().zip(TENSOR_NAMES).zip(&expected_shapes) {
            if t.name != name || &t.shape != shape {
                return Err(Error::InvalidHeader(format!(
                    "unexpected tensor {:?} with shape {:?}",
                    t.name, t.shape
                )));
            }
        }
        container::check_payload(c.payload, super::param_count(dim, hidden), 8)?;
        let values: Vec<f64> = container::read_f64s(c.payload).collect();
        let (w1, rest) = values.split_at(hidden * dim);
        let (b1, rest) = rest.split_at(hidden);
        let (w2, b2) = rest.split_at(dim * hidden);
        let p = AdapterParams {
            w1: Matrix::from_vec(hidden, dim, w1.to_vec())?,
            b1: b1.to_vec(),
            w2: Matrix::from_vec(dim, hidden, w2.to_vec())?,
            b2: b2.to_vec(),
            residual_ratio: meta.residual_ratio,
        };
        p.validate()?;
        if !(0.0..=1.0).contains(&p.residual_ratio) {
            return Err(Error::InvalidHeader(format!(
                "residual ratio {} outside [0, 1]",
                p.residual_ratio
            )));
        }
        Ok(p)
    }
}

pub fn save_adapter(params: &AdapterParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = params.to_bytes()?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_adapter(path: impl AsRef<Path>) -> Result<AdapterParams> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    AdapterParams::from_bytes(&bytes)
}
