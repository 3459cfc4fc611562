//! Binary weight files.
//!
//! ```text
//! magic "ECGW" | u32 version | u64 n | n bytes of ModelSpec JSON
//! u64 tensor count | per tensor: u64 len, len x f64
//! ```
//!
//! All integers and reals are little-endian; tensors follow layer order,
//! weight before bias.

use std::path::Path;

use super::network::Network;
use crate::error::{data_err, Error, Result};
use crate::model::ModelSpec;

pub const MAGIC: &[u8; 4] = b"ECGW";
pub const VERSION: u32 = 1;

pub fn to_bytes(net: &Network) -> Result<Vec<u8>> {
    let spec = serde_json::to_vec(&net.spec)?;
    let params = net.parameters();
    let mut out = Vec::with_capacity(
        24 + spec.len() + params.iter().map(|p| 8 + 8 * p.len()).sum::<usize>(),
    );
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(spec.len() as u64).to_le_bytes());
    out.extend_from_slice(&spec);
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&(p.len() as u64).to_le_bytes());
        for v in p {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| data_err!("weight file truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(data_err!("not a weight file (bad magic)"));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(data_err!("unsupported weight file version {version}"));
    }
    let spec_len = r.u64()? as usize;
    let spec: ModelSpec = serde_json::from_slice(r.take(spec_len)?)?;
    let mut net = Network::init(&spec, 0)?;
    let count = r.u64()? as usize;
    let sizes = net.parameter_sizes();
    if count != sizes.len() {
        return Err(data_err!("weight file has {count} tensors, spec needs {}", sizes.len()));
    }
    let mut tensors = Vec::with_capacity(count);
    for &expected in &sizes {
        let len = r.u64()? as usize;
        if len != expected {
            return Err(data_err!("tensor of length {len} where {expected} expected"));
        }
        let raw = r.take(len.checked_mul(8).ok_or_else(|| data_err!("tensor too large"))?)?;
        tensors.push(
            raw.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect::<Vec<f64>>(),
        );
    }
    if r.pos != bytes.len() {
        return Err(data_err!("{} trailing bytes in weight file", bytes.len() - r.pos));
    }
    net.restore(&tensors)?;
    Ok(net)
}

pub fn save(net: &Network, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(net)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Network> {
    from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
