//! `.ofas` checkpoints.
//!
//! Layout (little-endian): magic `OFAS`, `u32` version, `u32` header length,
//! JSON header, `u32` tensor count, then per tensor `u32` name length, UTF-8
//! name, `u32` rank, `u32` dims, `f32` data.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use ofa_core::data::{DatasetId, Normalization};
use ofa_core::schemes::Method;
use ofa_core::supernet::StateTensor;
use ofa_core::{build_supernet, ArchSpec, SupernetParams};

use crate::error::{LabError, Result};

pub const MAGIC: [u8; 4] = *b"OFAS";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub arch: ArchSpec,
    pub dataset: DatasetId,
    pub method: Method,
    pub seed: u64,
    pub dropout: f32,
    pub epochs_completed: usize,
    pub total_epochs: usize,
    pub cumulative_macs: u64,
    pub normalization: Option<Normalization>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub tensors: Vec<StateTensor>,
}

impl Checkpoint {
    pub fn capture(header: CheckpointHeader, net: &SupernetParams) -> Self {
        Checkpoint {
            header,
            tensors: net.state(),
        }
    }

    /// Rebuilds the supernet the tensors were taken from.
    pub fn restore(&self) -> Result<SupernetParams> {
        let mut net = build_supernet(&self.header.arch, 0)?.with_dropout(self.header.dropout)?;
        net.load_state(&self.tensors)?;
        Ok(net)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header).map_err(|e| LabError::Json {
            context: "checkpoint header".into(),
            source: e,
        })?;
        let payload: usize = self
            .tensors
            .iter()
            .map(|t| 8 + t.name.len() + 4 * t.shape.len() + 4 * t.data.len())
            .sum();
        let mut out = Vec::with_capacity(16 + header.len() + payload);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(4)? != MAGIC {
            return Err(LabError::format(path, 0, "not an OFAS checkpoint"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(LabError::format(
                path,
                4,
                format!("checkpoint version {version}, this build reads version {VERSION}"),
            ));
        }
        let hlen = r.u32()? as usize;
        let hstart = r.pos;
        let header: CheckpointHeader =
            serde_json::from_slice(r.take(hlen)?).map_err(|e| {
                LabError::format(path, hstart as u64, format!("checkpoint header: {e}"))
            })?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let at = r.pos;
            let nlen = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(nlen)?)
                .map_err(|_| LabError::format(path, at as u64 + 4, "tensor name is not UTF-8"))?
                .to_string();
            let rank = r.u32()? as usize;
            if rank > 8 {
                return Err(LabError::format(path, at as u64, format!("tensor rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let len = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&l| l <= bytes.len() / 4)
                .ok_or_else(|| LabError::format(path, at as u64, "tensor larger than file"))?;
            let raw = r.take(4 * len)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push(StateTensor { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(LabError::format(path, r.pos as u64, "trailing bytes"));
        }
        Ok(Checkpoint { header, tensors })
    }

    /// Writes through a temporary file and a rename so readers never see a
    /// partial checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| LabError::io(path, e))?;
        Checkpoint::decode(&bytes, path)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| LabError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| LabError::io(&tmp, e))?;
    f.sync_all().map_err(|e| LabError::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| LabError::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(LabError::format(
                self.path,
                self.pos as u64,
                format!("truncated: wanted {n} bytes, {} left", self.bytes.len() - self.pos),
            )),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
