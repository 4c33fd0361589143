//! Binary embedding tables, training checkpoints and run identifiers.
//!
//! Table layout (all integers little-endian):
//!
//! | bytes | field |
//! |-------|-------|
//! | 4 | magic `GCMT` |
//! | 2 | format version |
//! | 1 | dtype: 4 = f32, 8 = f64 |
//! | 1 | field group |
//! | 8 | rows |
//! | 8 | dim |
//! | 4 | metadata length `n` |
//! | n | UTF-8 JSON metadata |
//! | rows·dim·dtype | row-major values |

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{write_log_jsonl, InteractionLog};
use crate::encoder::VocabSizes;
use crate::error::{GcmError, Result};
use crate::linalg::Matrix;
use crate::model::{BiasParams, ModelState, Parameters};
use crate::training::{AdamState, TrainConfig};

pub const TABLE_MAGIC: &[u8; 4] = b"GCMT";
pub const TABLE_VERSION: u16 = 1;
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GCMC";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn code(self) -> u8 {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            4 => Ok(Dtype::F32),
            8 => Ok(Dtype::F64),
            _ => Err(GcmError::format(format!("unknown dtype code {c}"))),
        }
    }

    fn width(self) -> usize {
        self.code() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableGroup {
    User,
    Item,
    Context,
    PropagatedUser,
    PropagatedItem,
    Bias,
}

impl TableGroup {
    fn code(self) -> u8 {
        match self {
            TableGroup::User => 0,
            TableGroup::Item => 1,
            TableGroup::Context => 2,
            TableGroup::PropagatedUser => 3,
            TableGroup::PropagatedItem => 4,
            TableGroup::Bias => 5,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        Ok(match c {
            0 => TableGroup::User,
            1 => TableGroup::Item,
            2 => TableGroup::Context,
            3 => TableGroup::PropagatedUser,
            4 => TableGroup::PropagatedItem,
            5 => TableGroup::Bias,
            _ => return Err(GcmError::format(format!("unknown field group code {c}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableHeader {
    pub version: u16,
    pub dtype: Dtype,
    pub group: TableGroup,
    pub rows: usize,
    pub dim: usize,
    pub meta: serde_json::Value,
}

fn read_err(e: std::io::Error) -> GcmError {
    if e.kind() == ErrorKind::UnexpectedEof {
        GcmError::format("file is truncated")
    } else {
        GcmError::Io(e)
    }
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(read_err)?;
    Ok(buf)
}

pub fn write_table<W: Write>(
    out: &mut W,
    table: &Matrix,
    group: TableGroup,
    dtype: Dtype,
    meta: &serde_json::Value,
) -> Result<()> {
    let meta = serde_json::to_vec(meta)?;
    out.write_all(TABLE_MAGIC)?;
    out.write_all(&TABLE_VERSION.to_le_bytes())?;
    out.write_all(&[dtype.code(), group.code()])?;
    out.write_all(&(table.rows() as u64).to_le_bytes())?;
    out.write_all(&(table.cols() as u64).to_le_bytes())?;
    out.write_all(&(meta.len() as u32).to_le_bytes())?;
    out.write_all(&meta)?;
    let mut buf = Vec::with_capacity(table.as_slice().len() * dtype.width());
    for &v in table.as_slice() {
        match dtype {
            Dtype::F32 => buf.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::F64 => buf.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_table<R: Read>(input: &mut R) -> Result<(Matrix, TableHeader)> {
    let magic: [u8; 4] = read_array(input)?;
    if &magic != TABLE_MAGIC {
        return Err(GcmError::format("not an embedding table (bad magic)"));
    }
    let version = u16::from_le_bytes(read_array(input)?);
    if version != TABLE_VERSION {
        return Err(GcmError::format(format!(
            "table format version {version}, expected {TABLE_VERSION}"
        )));
    }
    let [dt, gr] = read_array(input)?;
    let dtype = Dtype::from_code(dt)?;
    let group = TableGroup::from_code(gr)?;
    let rows = u64::from_le_bytes(read_array(input)?) as usize;
    let dim = u64::from_le_bytes(read_array(input)?) as usize;
    let meta_len = u32::from_le_bytes(read_array(input)?) as usize;
    let mut meta = vec![0u8; meta_len];
    input.read_exact(&mut meta).map_err(read_err)?;
    let meta: serde_json::Value = serde_json::from_slice(&meta)
        .map_err(|e| GcmError::format(format!("bad table metadata: {e}")))?;
    let n = rows
        .checked_mul(dim)
        .ok_or_else(|| GcmError::format("table shape overflows"))?;
    let mut raw = vec![0u8; n * dtype.width()];
    input.read_exact(&mut raw).map_err(read_err)?;
    let data: Vec<f64> = match dtype {
        Dtype::F32 => raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect(),
        Dtype::F64 => raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    };
    let header = TableHeader {
        version,
        dtype,
        group,
        rows,
        dim,
        meta,
    };
    Ok((Matrix::from_vec(rows, dim, data)?, header))
}

pub fn save_table(
    path: &Path,
    table: &Matrix,
    group: TableGroup,
    dtype: Dtype,
    meta: &serde_json::Value,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_table(&mut w, table, group, dtype, meta)?;
    w.flush()?;
    Ok(())
}

pub fn load_table(path: &Path) -> Result<(Matrix, TableHeader)> {
    let mut r = BufReader::new(File::open(path)?);
    let out = read_table(&mut r)?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(GcmError::format(format!("trailing bytes after table in {}", path.display())));
    }
    Ok(out)
}

/// Hex SHA-256 of the JSON-lines serialization of `log`.
pub fn log_digest(log: &InteractionLog) -> Result<String> {
    let mut h = HashWriter(Sha256::new());
    write_log_jsonl(log, &mut h)?;
    Ok(hex(&h.0.finalize()))
}

struct HashWriter(Sha256);

impl Write for HashWriter {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.update(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Deterministic run identifier: the first 16 hex digits of
/// SHA-256(config JSON ‖ data digest). Identical config and data give the
/// same id.
pub fn run_id(config: &TrainConfig, data_digest: &str) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(config)?);
    h.update(b"\n");
    h.update(data_digest.as_bytes());
    Ok(hex(&h.finalize())[..16].to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    version: u16,
    run_id: String,
    config: TrainConfig,
    epoch: usize,
    adam_step: u64,
    sizes: VocabSizes,
    has_bias: bool,
}

/// Model, optimizer state and provenance of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub run_id: String,
    pub config: TrainConfig,
    /// Epochs completed.
    pub epoch: usize,
    pub model: ModelState,
    pub adam: AdamState,
}

const TENSOR_NAMES: [&str; 7] = [
    "user",
    "item",
    "context",
    "bias_global",
    "bias_user",
    "bias_item",
    "bias_context",
];

fn tensor_group(k: usize) -> TableGroup {
    match k {
        0 => TableGroup::User,
        1 => TableGroup::Item,
        2 => TableGroup::Context,
        _ => TableGroup::Bias,
    }
}

fn write_parameters<W: Write>(out: &mut W, params: &Parameters, role: &str) -> Result<()> {
    let tables = [&params.tables.user, &params.tables.item, &params.tables.context];
    for (k, t) in tables.into_iter().enumerate() {
        let meta = serde_json::json!({ "name": TENSOR_NAMES[k], "role": role });
        write_table(out, t, tensor_group(k), Dtype::F64, &meta)?;
    }
    if let Some(b) = &params.bias {
        for (k, v) in [&b.global, &b.user, &b.item, &b.context].into_iter().enumerate() {
            let meta = serde_json::json!({ "name": TENSOR_NAMES[k + 3], "role": role });
            let m = Matrix::from_vec(v.len(), 1, v.clone())?;
            write_table(out, &m, TableGroup::Bias, Dtype::F64, &meta)?;
        }
    }
    Ok(())
}

fn read_parameters<R: Read>(input: &mut R, sizes: VocabSizes, dim: usize, has_bias: bool, role: &str) -> Result<Parameters> {
    let mut next = |k: usize, rows: usize, cols: usize| -> Result<Matrix> {
        let (m, h) = read_table(input)?;
        let name = h.meta.get("name").and_then(|v| v.as_str()).unwrap_or("");
        let got_role = h.meta.get("role").and_then(|v| v.as_str()).unwrap_or("");
        if name != TENSOR_NAMES[k] || got_role != role || h.rows != rows || h.dim != cols {
            return Err(GcmError::format(format!(
                "checkpoint expected {role}/{} of {rows}x{cols}, found {got_role}/{name} of {}x{}",
                TENSOR_NAMES[k], h.rows, h.dim
            )));
        }
        Ok(m)
    };
    let user = next(0, sizes.user, dim)?;
    let item = next(1, sizes.item, dim)?;
    let context = next(2, sizes.context, dim)?;
    let bias = if has_bias {
        Some(BiasParams {
            global: next(3, 1, 1)?.into_vec(),
            user: next(4, sizes.user, 1)?.into_vec(),
            item: next(5, sizes.item, 1)?.into_vec(),
            context: next(6, sizes.context, 1)?.into_vec(),
        })
    } else {
        None
    };
    Ok(Parameters {
        tables: crate::encoder::EmbeddingTables { user, item, context },
        bias,
    })
}

pub fn write_checkpoint<W: Write>(out: &mut W, ckpt: &Checkpoint) -> Result<()> {
    let header = CheckpointHeader {
        format: "gcm-checkpoint".into(),
        version: CHECKPOINT_VERSION,
        run_id: ckpt.run_id.clone(),
        config: ckpt.config.clone(),
        epoch: ckpt.epoch,
        adam_step: ckpt.adam.step,
        sizes: ckpt.model.params.tables.sizes(),
        has_bias: ckpt.model.params.bias.is_some(),
    };
    let header = serde_json::to_vec(&header)?;
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(header.len() as u32).to_le_bytes())?;
    out.write_all(&header)?;
    write_parameters(out, &ckpt.model.params, "param")?;
    write_parameters(out, &ckpt.adam.m, "adam_m")?;
    write_parameters(out, &ckpt.adam.v, "adam_v")?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(input: &mut R) -> Result<Checkpoint> {
    let magic: [u8; 4] = read_array(input)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(GcmError::format("not a checkpoint (bad magic)"));
    }
    let version = u16::from_le_bytes(read_array(input)?);
    if version != CHECKPOINT_VERSION {
        return Err(GcmError::format(format!(
            "checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let len = u32::from_le_bytes(read_array(input)?) as usize;
    let mut raw = vec![0u8; len];
    input.read_exact(&mut raw).map_err(read_err)?;
    let h: CheckpointHeader =
        serde_json::from_slice(&raw).map_err(|e| GcmError::format(format!("bad checkpoint header: {e}")))?;
    let dim = h.config.model.dim;
    let params = read_parameters(input, h.sizes, dim, h.has_bias, "param")?;
    let m = read_parameters(input, h.sizes, dim, h.has_bias, "adam_m")?;
    let v = read_parameters(input, h.sizes, dim, h.has_bias, "adam_v")?;
    Ok(Checkpoint {
        run_id: h.run_id,
        model: ModelState {
            config: h.config.model.clone(),
            params,
        },
        config: h.config,
        epoch: h.epoch,
        adam: AdamState {
            m,
            v,
            step: h.adam_step,
        },
    })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, ckpt)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let c = read_checkpoint(&mut r)?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(GcmError::format("trailing bytes after checkpoint"));
    }
    Ok(c)
}
