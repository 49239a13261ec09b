use std::path::Path;

use super::TensorError;

pub const CKP_MAGIC: &[u8; 8] = b"E2VCKP1\0";

/// One named tensor in a checkpoint. `shape` has between one and five axes.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl CheckpointEntry {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Self {
        Self {
            name: name.into(),
            shape,
            data,
        }
    }
}

fn bad(msg: impl Into<String>) -> TensorError {
    TensorError::Checkpoint(msg.into())
}

pub fn encode_checkpoint(entries: &[CheckpointEntry]) -> Result<Vec<u8>, TensorError> {
    let count = u32::try_from(entries.len()).map_err(|_| bad("too many entries"))?;
    let mut out = Vec::new();
    out.extend_from_slice(CKP_MAGIC);
    out.extend_from_slice(&count.to_le_bytes());
    for e in entries {
        let name_len = u16::try_from(e.name.len()).map_err(|_| bad(format!("name too long: {}", e.name)))?;
        if e.shape.is_empty() || e.shape.len() > 5 {
            return Err(bad(format!("{}: rank {} unsupported", e.name, e.shape.len())));
        }
        if e.shape.iter().product::<usize>() != e.data.len() {
            return Err(bad(format!("{}: shape {:?} holds {} values", e.name, e.shape, e.data.len())));
        }
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(e.shape.len() as u8);
        for &d in &e.shape {
            let d = u32::try_from(d).map_err(|_| bad(format!("{}: axis too long", e.name)))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.reserve(4 * e.data.len());
        for v in &e.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TensorError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| bad("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, TensorError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<CheckpointEntry>, TensorError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8)? != CKP_MAGIC {
        return Err(bad("bad magic"));
    }
    let count = cur.u32()?;
    let mut entries = Vec::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(cur.take(2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| bad("entry name is not UTF-8"))?
            .to_string();
        let rank = cur.take(1)?[0] as usize;
        if rank == 0 || rank > 5 {
            return Err(bad(format!("{name}: rank {rank} unsupported")));
        }
        let shape = (0..rank).map(|_| cur.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let payload = cur.take(n.checked_mul(4).ok_or_else(|| bad("payload overflow"))?)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push(CheckpointEntry { name, shape, data });
    }
    if cur.pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(entries)
}

pub fn write_checkpoint(path: &Path, entries: &[CheckpointEntry]) -> Result<(), TensorError> {
    std::fs::write(path, encode_checkpoint(entries)?)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<CheckpointEntry>, TensorError> {
    decode_checkpoint(&std::fs::read(path)?)
}
