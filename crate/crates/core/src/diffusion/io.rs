//! Little-endian binary weights file.
//!
//! Layout: magic, format version (u32), variant (u8), model parameters
//! (hidden, blocks, heads, steps, ddim_steps as u32; sigma_frac as f64;
//! learn_variance as u8), seed (u64), tensor count (u32), then per tensor:
//! name length (u32), UTF-8 name, rank (u32), dims (u32 each), f32 data.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use super::{DiffusionError, ModelParams, ModelWeights, Variant};

pub const MAGIC: [u8; 4] = *b"ADWT";
pub const FORMAT_VERSION: u32 = 1;

impl ModelWeights {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&MAGIC);
        b.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        b.push(match self.variant {
            Variant::J => 0,
            Variant::C => 1,
        });
        let p = &self.params;
        for v in [p.hidden, p.blocks, p.heads, p.steps, p.ddim_steps] {
            b.extend_from_slice(&(v as u32).to_le_bytes());
        }
        b.extend_from_slice(&p.sigma_frac.to_le_bytes());
        b.push(p.learn_variance as u8);
        b.extend_from_slice(&self.seed.to_le_bytes());
        b.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            b.extend_from_slice(&(name.len() as u32).to_le_bytes());
            b.extend_from_slice(name.as_bytes());
            b.extend_from_slice(&2u32.to_le_bytes());
            b.extend_from_slice(&(t.nrows() as u32).to_le_bytes());
            b.extend_from_slice(&(t.ncols() as u32).to_le_bytes());
            for v in t.iter() {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DiffusionError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(DiffusionError::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(DiffusionError::Format(format!("unsupported format version {version}")));
        }
        let variant = match r.take(1)?[0] {
            0 => Variant::J,
            1 => Variant::C,
            v => return Err(DiffusionError::Format(format!("unknown variant tag {v}"))),
        };
        let params = ModelParams {
            hidden: r.u32()? as usize,
            blocks: r.u32()? as usize,
            heads: r.u32()? as usize,
            steps: r.u32()? as usize,
            ddim_steps: r.u32()? as usize,
            sigma_frac: f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")),
            learn_variance: r.take(1)?[0] != 0,
        };
        let seed = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let count = r.u32()?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| DiffusionError::Format("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()?;
            if rank != 2 {
                return Err(DiffusionError::Format(format!("tensor {name} has rank {rank}, expected 2")));
            }
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let n = rows
                .checked_mul(cols)
                .ok_or_else(|| DiffusionError::Format("tensor too large".into()))?;
            let raw = r.take(n.checked_mul(4).ok_or_else(|| DiffusionError::Format("tensor too large".into()))?)?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let t = Array2::from_shape_vec((rows, cols), data).expect("length checked");
            if tensors.insert(name.clone(), t).is_some() {
                return Err(DiffusionError::Format(format!("duplicate tensor {name}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(DiffusionError::Format("trailing bytes after last tensor".into()));
        }
        let w = ModelWeights { variant, params, seed, tensors };
        w.validate()?;
        Ok(w)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DiffusionError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.bytes.len())
            .ok_or_else(|| DiffusionError::Format("unexpected end of file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, DiffusionError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Writes to a temporary file beside `path` and renames it into place.
pub fn write_weights(weights: &ModelWeights, path: &Path) -> Result<(), DiffusionError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(&weights.to_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| DiffusionError::Io(e.error))?;
    Ok(())
}

pub fn read_weights(path: &Path) -> Result<ModelWeights, DiffusionError> {
    ModelWeights::from_bytes(&std::fs::read(path)?)
}
