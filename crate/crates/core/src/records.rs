//! Binary tensor records shared by checkpoints and dataset archives.
//!
//! Layout: `u32` record count, then per record `u32` name length, UTF-8
//! name, `u8` dtype code, `u32` rank, `u64` dims, little-endian payload.

use crate::error::{Error, Result};
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;

pub fn write_records<'a, T: Scalar>(
    out: &mut Vec<u8>,
    records: impl ExactSizeIterator<Item = (&'a str, &'a Tensor<T>)>,
) {
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (name, t) in records {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(T::DTYPE.code());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            v.write_le(out);
        }
    }
}

/// Cursor over a byte buffer with bounds-checked reads.
pub struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Artifact("truncated tensor record stream".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn is_empty(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub fn read_records<T: Scalar>(r: &mut Reader<'_>) -> Result<Vec<(String, Tensor<T>)>> {
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Artifact("record name is not UTF-8".into()))?
            .to_string();
        let code = r.u8()?;
        let dtype = DType::from_code(code)
            .ok_or_else(|| Error::Artifact(format!("unknown dtype code {code} in {name}")))?;
        if dtype != T::DTYPE {
            return Err(Error::Artifact(format!(
                "record {name} stores {dtype:?}, expected {:?}",
                T::DTYPE
            )));
        }
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        let size = dtype.size();
        let payload = r.take(n.checked_mul(size).ok_or_else(|| {
            Error::Artifact(format!("record {name} has an oversized shape"))
        })?)?;
        let data = payload.chunks_exact(size).map(T::read_le).collect();
        out.push((name, Tensor::from_vec(&shape, data)?));
    }
    Ok(out)
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
