//! Binary checkpoint container.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        8 bytes   "HMRLCKPT"
//! version      u32
//! header_len   u32
//! header       header_len bytes of UTF-8 JSON (CheckpointHeader)
//! n_arrays     u32
//! n_arrays × { name_len u16, name bytes, len u64, len × f64 }
//! ```
//!
//! Array names: `param.<tensor>`, `adam_m.<tensor>`, `adam_v.<tensor>` for
//! every agent tensor, then `archive.<k>.params` and `archive.<k>.observations`
//! for each archived solution.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{IterationMetrics, RunConfig};
use crate::case::CaseFile;
use crate::env::EnvSnapshot;
use crate::error::{Error, Result};
use crate::rng::RngState;

pub const MAGIC: &[u8; 8] = b"HMRLCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveMeta {
    pub objective: f64,
    pub env_id: usize,
    pub global_step: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: RunConfig,
    pub case: CaseFile,
    pub dim: usize,
    pub hidden: usize,
    pub iteration: u64,
    pub global_step: u64,
    pub adam_t: u64,
    pub agent_updates: u64,
    pub agent_rng: RngState,
    pub envs: Vec<EnvSnapshot>,
    pub archive: Vec<ArchiveMeta>,
    pub history: Vec<IterationMetrics>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub arrays: Vec<(String, Vec<f64>)>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let data: usize = self.arrays.iter().map(|(n, a)| 10 + n.len() + 8 * a.len()).sum();
        let mut out = Vec::with_capacity(20 + header.len() + data);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, values) in &self.arrays {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(values.len() as u64).to_le_bytes());
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(8)? != MAGIC {
            return Err(Error::format(path, "not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                path: path.to_path_buf(),
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let header_len = r.u32()? as usize;
        let header: CheckpointHeader =
            serde_json::from_slice(r.take(header_len)?).map_err(|e| Error::format(path, format!("header: {e}")))?;
        let n = r.u32()? as usize;
        let mut arrays = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let name_len = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::format(path, "array name is not UTF-8"))?
                .to_string();
            let len = r.u64()? as usize;
            let raw = r.take(len.checked_mul(8).ok_or_else(|| Error::format(path, "array too large"))?)?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            arrays.push((name, values));
        }
        if r.pos != bytes.len() {
            return Err(Error::format(path, "trailing bytes after last array"));
        }
        Ok(Self { header, arrays })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("ckpt.tmp");
        std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn array(&self, name: &str) -> Result<&[f64]> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, a)| a.as_slice())
            .ok_or_else(|| Error::Config(format!("checkpoint lacks array {name}")))
    }

    /// Arrays whose names start with `prefix.`, with the prefix removed.
    pub fn group(&self, prefix: &str) -> Vec<(String, Vec<f64>)> {
        let p = format!("{prefix}.");
        self.arrays
            .iter()
            .filter_map(|(n, a)| n.strip_prefix(&p).map(|s| (s.to_string(), a.clone())))
            .collect()
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::format(self.path, format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
