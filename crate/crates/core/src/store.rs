//! Embedding datasets and class-weight files in the `EMB1` container.
//!
//! Loading is strict: anything malformed is rejected, nothing is repaired.
//! Loaded values are immutable and can be shared across threads.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const MAGIC: [u8; 4] = *b"EMB1";

/// Tolerance used when checking that stored vectors are unit-norm.
pub const UNIT_NORM_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidParameter(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub id: String,
    pub split: Split,
    pub label: usize,
    pub vector: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    dim: usize,
    class_names: Vec<String>,
    records: Vec<Record>,
}

#[derive(Serialize, Deserialize)]
struct RecordMeta {
    id: String,
    split: Split,
    label: u32,
}

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    class_names: Vec<String>,
    records: Vec<RecordMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prompt_template: Option<String>,
}

fn check_class_names(names: &[String]) -> Result<()> {
    if names.is_empty() {
        return Err(Error::InvalidHeader("no classes".into()));
    }
    let mut seen = HashSet::with_capacity(names.len());
    for n in names {
        if n.is_empty() {
            return Err(Error::InvalidHeader("empty class name".into()));
        }
        if !seen.insert(n.as_str()) {
            return Err(Error::InvalidHeader(format!("duplicate class name {n:?}")));
        }
    }
    Ok(())
}

fn check_vector(id: &str, v: &[f32], dim: usize) -> Result<()> {
    if v.len() != dim {
        return Err(Error::DimMismatch {
            context: "record vector",
            expected: dim,
            found: v.len(),
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteValue {
            context: format!("record {id:?}"),
        });
    }
    Ok(())
}

fn norm_f32(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

impl EmbeddingDataset {
    pub fn new(dim: usize, class_names: Vec<String>, records: Vec<Record>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidHeader("embedding width must be positive".into()));
        }
        check_class_names(&class_names)?;
        for r in &records {
            if r.label >= class_names.len() {
                return Err(Error::LabelOutOfRange {
                    record: r.id.clone(),
                    label: r.label as u32,
                    num_classes: class_names.len(),
                });
            }
            check_vector(&r.id, &r.vector, dim)?;
        }
        Ok(Self {
            dim,
            class_names,
            records,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records whose split tag matches `which`, in original order.
    pub fn split(&self, which: Split) -> EmbeddingDataset {
        EmbeddingDataset {
            dim: self.dim,
            class_names: self.class_names.clone(),
            records: self
                .records
                .iter()
                .filter(|r| r.split == which)
                .cloned()
                .collect(),
        }
    }

    pub fn split_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for r in &self.records {
            counts[r.split as usize] += 1;
        }
        counts
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for r in &self.records {
            counts[r.label] += 1;
        }
        counts
    }

    /// Scales every vector to unit Euclidean norm.
    pub fn normalize(&self) -> Result<EmbeddingDataset> {
        let mut records = self.records.clone();
        for r in &mut records {
            let n = norm_f32(&r.vector);
            if n == 0.0 {
                return Err(Error::ZeroVector {
                    record: r.id.clone(),
                });
            }
            for x in &mut r.vector {
                *x = (*x as f64 / n) as f32;
            }
        }
        Ok(EmbeddingDataset {
            dim: self.dim,
            class_names: self.class_names.clone(),
            records,
        })
    }

    /// Concatenates records from datasets that share class names and width.
    pub fn concat(parts: &[&EmbeddingDataset]) -> Result<EmbeddingDataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidParameter("nothing to concatenate".into()))?;
        let mut records = Vec::new();
        for p in parts {
            if p.class_names != first.class_names {
                return Err(Error::LabelSpaceMismatch(format!(
                    "{:?} vs {:?}",
                    first.class_names, p.class_names
                )));
            }
            if p.dim != first.dim {
                return Err(Error::DimMismatch {
                    context: "concatenated dataset width",
                    expected: first.dim,
                    found: p.dim,
                });
            }
            records.extend(p.records.iter().cloned());
        }
        Ok(EmbeddingDataset {
            dim: first.dim,
            class_names: first.class_names.clone(),
            records,
        })
    }

    /// Vectors widened to f64, one row per record.
    pub fn matrix(&self) -> Matrix {
        let mut m = Matrix::zeros(self.records.len(), self.dim);
        for (i, r) in self.records.iter().enumerate() {
            for (o, &x) in m.row_mut(i).iter_mut().zip(&r.vector) {
                *o = x as f64;
            }
        }
        m
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        encode_records(self.dim, &self.class_names, &self.records, None)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        decode_records(bytes).map(|(ds, _)| ds)
    }
}

fn encode_records(
    dim: usize,
    class_names: &[String],
    records: &[Record],
    prompt_template: Option<&str>,
) -> Result<Vec<u8>> {
    for r in records {
        check_vector(&r.id, &r.vector, dim)?;
    }
    let meta = DatasetMeta {
        class_names: class_names.to_vec(),
        records: records
            .iter()
            .map(|r| RecordMeta {
                id: r.id.clone(),
                split: r.split,
                label: r.label as u32,
            })
            .collect(),
        prompt_template: prompt_template.map(str::to_owned),
    };
    let meta = serde_json::to_vec(&meta).expect("metadata serializes");
    let mut payload = Vec::with_capacity(records.len() * dim * 4);
    for r in records {
        container::f32_bytes(&r.vector, &mut payload);
    }
    let header = [dim as u32, class_names.len() as u32, records.len() as u32];
    Ok(container::encode(&MAGIC, header, &meta, &payload))
}

fn decode_records(bytes: &[u8]) -> Result<(EmbeddingDataset, Option<String>)> {
    let c = container::decode(&MAGIC, bytes)?;
    let [dim, num_classes, count] = c.header.map(|h| h as usize);
    let meta: DatasetMeta = serde_json::from_slice(c.meta)
        .map_err(|e| Error::InvalidHeader(format!("metadata JSON: {e}")))?;
    if meta.class_names.len() != num_classes {
        return Err(Error::InvalidHeader(format!(
            "header declares {num_classes} classes, metadata lists {}",
            meta.class_names.len()
        )));
    }
    if meta.records.len() != count {
        return Err(Error::InvalidHeader(format!(
            "header declares {count} records, metadata lists {}",
            meta.records.len()
        )));
    }
    for r in &meta.records {
        if r.label as usize >= num_classes {
            return Err(Error::LabelOutOfRange {
                record: r.id.clone(),
                label: r.label,
                num_classes,
            });
        }
    }
    container::check_payload(c.payload, count * dim, 4)?;
    let mut values = container::read_f32s(c.payload);
    let records = meta
        .records
        .into_iter()
        .map(|m| Record {
            id: m.id,
            split: m.split,
            label: m.label as usize,
            vector: values.by_ref().take(dim).collect(),
        })
        .collect();
    let ds = EmbeddingDataset::new(dim, meta.class_names, records)?;
    Ok((ds, meta.prompt_template))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<EmbeddingDataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingDataset::from_bytes(&bytes)
}

pub fn save_dataset(ds: &EmbeddingDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = ds.to_bytes()?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Frozen text-derived class weight matrix for the zero-shot head.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights {
    dim: usize,
    class_names: Vec<String>,
    rows: Vec<Vec<f32>>,
    prompt_template: String,
}

impl ClassWeights {
    pub fn new(
        dim: usize,
        class_names: Vec<String>,
        rows: Vec<Vec<f32>>,
        prompt_template: impl Into<String>,
    ) -> Result<Self> {
        check_class_names(&class_names)?;
        if rows.len() != class_names.len() {
            return Err(Error::DimMismatch {
                context: "class weight rows",
                expected: class_names.len(),
                found: rows.len(),
            });
        }
        for (name, row) in class_names.iter().zip(&rows) {
            check_vector(name, row, dim)?;
            let n = norm_f32(row);
            if (n - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::NotUnitNorm {
                    context: format!("class weight row {name:?}"),
                    norm: n,
                });
            }
        }
        Ok(Self {
            dim,
            class_names,
            rows,
            prompt_template: prompt_template.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn rows(&self) -> &[Vec<f32>] {
        &self.rows
    }

    pub fn prompt_template(&self) -> &str {
        &self.prompt_template
    }

    pub fn matrix(&self) -> Matrix {
        let rows: Vec<Vec<f64>> = self.rows.iter().map(|r| crate::linalg::to_f64(r)).collect();
        Matrix::from_rows(self.dim, &rows).expect("rows validated on construction")
    }

    /// Errors unless `ds` uses the same label space and width.
    pub fn check_compatible(&self, ds: &EmbeddingDataset) -> Result<()> {
        if self.dim != ds.dim() {
            return Err(Error::DimMismatch {
                context: "class weights vs dataset width",
                expected: ds.dim(),
                found: self.dim,
            });
        }
        if self.num_classes() != ds.num_classes() {
            return Err(Error::DimMismatch {
                context: "class weights vs dataset classes",
                expected: ds.num_classes(),
                found: self.num_classes(),
            });
        }
        Ok(())
    }

    /// One `train` record per class, id = class name.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let records: Vec<Record> = self
            .class_names
            .iter()
            .zip(&self.rows)
            .enumerate()
            .map(|(i, (name, row))| Record {
                id: name.clone(),
                split: Split::Train,
                label: i,
                vector: row.clone(),
            })
            .collect();
        encode_records(
            self.dim,
            &self.class_names,
            &records,
            Some(&self.prompt_template),
        )
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (ds, template) = decode_records(bytes)?;
        if ds.len() != ds.num_classes() {
            return Err(Error::InvalidHeader(format!(
                "class weight file must hold one record per class ({} classes, {} records)",
                ds.num_classes(),
                ds.len()
            )));
        }
        for (i, r) in ds.records().iter().enumerate() {
            if r.label != i || r.split != Split::Train || r.id != ds.class_names()[i] {
                return Err(Error::InvalidHeader(format!(
                    "class weight record {i} must be the train row for {:?}",
                    ds.class_names()[i]
                )));
            }
        }
        let EmbeddingDataset {
            dim,
            class_names,
            records,
        } = ds;
        ClassWeights::new(
            dim,
            class_names,
            records.into_iter().map(|r| r.vector).collect(),
            template.unwrap_or_default(),
        )
    }
}

pub fn load_class_weights(path: impl AsRef<Path>) -> Result<ClassWeights> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    ClassWeights::from_bytes(&bytes)
}

pub fn save_class_weights(w: &ClassWeights, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = w.to_bytes()?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
