//! Versioned binary checkpoint container.
//!
//! ```text
//! magic "SSEGCKPT" | u32 version
//! config: u32 input_channels | u32 stages | stages x u32 width | u32 k
//!         | stages x f64 pool voxel size | u32 num_classes | u64 seed
//! u32 len + label space name | u64 training step
//! u32 tensor count | per tensor: u32 len + name | u32 rows | u32 cols | rows*cols x f64
//! ```
//! All integers and floats little-endian.

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::io::Read;

use super::{Model, ModelConfig, Param};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SSEGCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub label_space: String,
    pub step: u64,
}

pub fn save_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let cfg = ckpt.model.config();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.write_u32::<LittleEndian>(CHECKPOINT_VERSION).unwrap();
    out.write_u32::<LittleEndian>(cfg.input_channels as u32)
        .unwrap();
    out.write_u32::<LittleEndian>(cfg.stage_widths.len() as u32)
        .unwrap();
    for &w in &cfg.stage_widths {
        out.write_u32::<LittleEndian>(w as u32).unwrap();
    }
    out.write_u32::<LittleEndian>(cfg.k_neighbors as u32)
        .unwrap();
    for &v in &cfg.pool_voxel_sizes {
        out.write_f64::<LittleEndian>(v).unwrap();
    }
    out.write_u32::<LittleEndian>(cfg.num_classes as u32)
        .unwrap();
    out.write_u64::<LittleEndian>(cfg.seed).unwrap();
    write_str(&mut out, &ckpt.label_space);
    out.write_u64::<LittleEndian>(ckpt.step).unwrap();
    out.write_u32::<LittleEndian>(ckpt.model.params().len() as u32)
        .unwrap();
    for p in ckpt.model.params() {
        write_str(&mut out, &p.name);
        out.write_u32::<LittleEndian>(p.tensor.rows as u32).unwrap();
        out.write_u32::<LittleEndian>(p.tensor.cols as u32).unwrap();
        for &v in &p.tensor.data {
            out.write_f64::<LittleEndian>(v).unwrap();
        }
    }
    out
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    out.write_u32::<LittleEndian>(s.len() as u32).unwrap();
    out.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    inner: std::io::Cursor<&'a [u8]>,
}

impl Cursor<'_> {
    fn err(&self, what: &str) -> Error {
        Error::Checkpoint(format!(
            "truncated or corrupt payload at byte {} while reading {what}",
            self.inner.position()
        ))
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        self.inner
            .read_u32::<LittleEndian>()
            .map_err(|_| self.err(what))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        self.inner
            .read_u64::<LittleEndian>()
            .map_err(|_| self.err(what))
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        self.inner
            .read_f64::<LittleEndian>()
            .map_err(|_| self.err(what))
    }
    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let remaining = self.inner.get_ref().len() as u64 - self.inner.position();
        if len as u64 > remaining {
            return Err(self.err(what));
        }
        let mut buf = vec![0; len];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| self.err(what))?;
        String::from_utf8(buf).map_err(|_| self.err(what))
    }
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let mut r = Cursor {
        inner: std::io::Cursor::new(bytes),
    };
    r.inner.set_position(8);
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let input_channels = r.u32("input channels")? as usize;
    let stages = r.u32("stage count")? as usize;
    if stages > 64 {
        return Err(r.err("stage count"));
    }
    let stage_widths = (0..stages)
        .map(|_| r.u32("stage width").map(|w| w as usize))
        .collect::<Result<Vec<_>>>()?;
    let k_neighbors = r.u32("k")? as usize;
    let pool_voxel_sizes = (0..stages)
        .map(|_| r.f64("pool voxel size"))
        .collect::<Result<Vec<_>>>()?;
    let num_classes = r.u32("class count")? as usize;
    let seed = r.u64("seed")?;
    let label_space = r.string("label space")?;
    let step = r.u64("step")?;
    let count = r.u32("tensor count")? as usize;
    let mut params = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name = r.string("tensor name")?;
        let rows = r.u32("rows")? as usize;
        let cols = r.u32("cols")? as usize;
        let remaining = (bytes.len() as u64 - r.inner.position()) / 8;
        if (rows as u64) * (cols as u64) > remaining {
            return Err(r.err(&format!("tensor `{name}`")));
        }
        let data = (0..rows * cols)
            .map(|_| r.f64("tensor data"))
            .collect::<Result<Vec<_>>>()?;
        params.push(Param {
            name,
            tensor: Tensor::from_vec(rows, cols, data),
        });
    }
    if r.inner.position() as usize != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
    }
    let config = ModelConfig {
        input_channels,
        stage_widths,
        k_neighbors,
        pool_voxel_sizes,
        num_classes,
        seed,
    };
    let model = Model::from_parts(config, params).map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(Checkpoint {
        model,
        label_space,
        step,
    })
}

impl Checkpoint {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, save_checkpoint(self)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        load_checkpoint(&bytes)
    }
}
