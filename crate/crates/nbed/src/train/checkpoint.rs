//! Checkpoint file format.
//!
//! Layout (all integers little-endian):
//!   magic "NBEDCKPT" (8 bytes)
//!   format_version: u32
//!   config_len: u32, config text (UTF-8 key = value lines)
//!   iteration: u64
//!   model array count: u32, then that many arrays
//!   optimizer array count: u32, then that many arrays
//! Each array: name_len u32 + name, ndim u32, dims u32 each, values f64.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::ArrayD;

use crate::error::{Error, Result};
use crate::model::ModelConfig;

pub const MAGIC: &[u8; 8] = b"NBEDCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub iteration: u64,
    pub named_arrays: Vec<(String, ArrayD<f64>)>,
    pub optimizer_state: Vec<(String, ArrayD<f64>)>,
}

fn write_array(out: &mut impl Write, name: &str, a: &ArrayD<f64>) -> std::io::Result<()> {
    out.write_all(&(name.len() as u32).to_le_bytes())?;
    out.write_all(name.as_bytes())?;
    out.write_all(&(a.ndim() as u32).to_le_bytes())?;
    for &d in a.shape() {
        out.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in a.iter() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

struct Reader<'a> {
    inner: &'a mut dyn Read,
}

impl Reader<'_> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::Checkpoint("truncated checkpoint file".into()))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn array(&mut self) -> Result<(String, ArrayD<f64>)> {
        let name_len = self.u32()? as usize;
        if name_len > 1 << 16 {
            return Err(Error::Checkpoint(format!("implausible name length {name_len}")));
        }
        let name = String::from_utf8(self.bytes(name_len)?)
            .map_err(|_| Error::Checkpoint("array name is not UTF-8".into()))?;
        let ndim = self.u32()? as usize;
        if ndim > 8 {
            return Err(Error::Checkpoint(format!("implausible rank {ndim} for `{name}`")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(self.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = self.bytes(n * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        ArrayD::from_shape_vec(ndarray::IxDyn(&shape), data)
            .map(|a| (name, a))
            .map_err(|e| Error::Checkpoint(format!("bad array shape: {e}")))
    }
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut out = std::io::BufWriter::new(file);
        out.write_all(MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        let cfg = self.model_config.to_text();
        out.write_all(&(cfg.len() as u32).to_le_bytes())?;
        out.write_all(cfg.as_bytes())?;
        out.write_all(&self.iteration.to_le_bytes())?;
        for group in [&self.named_arrays, &self.optimizer_state] {
            out.write_all(&(group.len() as u32).to_le_bytes())?;
            for (name, a) in group {
                write_array(&mut out, name, a)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut file = std::fs::File::open(path)?;
        let mut r = Reader { inner: &mut file };
        let magic = r.bytes(8)?;
        if magic != MAGIC {
            return Err(Error::Checkpoint(format!(
                "{} is not a checkpoint (bad magic)",
                path.display()
            )));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "incompatible checkpoint format version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let cfg_len = r.u32()? as usize;
        let cfg_text = String::from_utf8(r.bytes(cfg_len)?)
            .map_err(|_| Error::Checkpoint("config block is not UTF-8".into()))?;
        let model_config = ModelConfig::from_text(&cfg_text)?;
        let iteration = r.u64()?;
        let mut groups = [Vec::new(), Vec::new()];
        for group in groups.iter_mut() {
            let count = r.u32()?;
            for _ in 0..count {
                group.push(r.array()?);
            }
        }
        let [named_arrays, optimizer_state] = groups;
        Ok(Self { model_config, iteration, named_arrays, optimizer_state })
    }
}
