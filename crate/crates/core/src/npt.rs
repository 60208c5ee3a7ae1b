//! NPT tensor files: `SVTT`, u32 version, u32 dtype, u32 rank, u64 extents,
//! then little-endian f64 data in row-major order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"SVTT";
const VERSION: u32 = 1;
const DTYPE_F64: u32 = 1;

pub fn to_bytes(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * t.dims().len() + 8 * t.numel());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&DTYPE_F64.to_le_bytes());
    out.extend_from_slice(&(t.dims().len() as u32).to_le_bytes());
    for &d in t.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<Tensor> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(Error::Parse("npt: bad magic".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::Parse(format!("npt: unsupported version {version}")));
    }
    let dtype = cur.u32()?;
    if dtype != DTYPE_F64 {
        return Err(Error::Parse(format!("npt: unsupported dtype code {dtype}")));
    }
    let rank = cur.u32()? as usize;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let d = usize::try_from(cur.u64()?).map_err(|_| Error::Parse("npt: extent overflow".into()))?;
        dims.push(d);
    }
    let n = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Parse("npt: element count overflow".into()))?;
    let expected = n
        .checked_mul(8)
        .ok_or_else(|| Error::Parse("npt: element count overflow".into()))?;
    if bytes.len() - cur.pos != expected {
        return Err(Error::Parse(format!(
            "npt: expected {expected} data bytes, found {}",
            bytes.len() - cur.pos
        )));
    }
    let data = bytes[cur.pos..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(&dims, data)
}

pub fn write(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(t)).map_err(|e| Error::file(path, e))
}

pub fn read(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    from_bytes(&bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Parse("npt: truncated header".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(&[2, 1], vec![1.5, -2.0]).unwrap();
        let b = to_bytes(&t);
        assert_eq!(&b[..4], b"SVTT");
        assert_eq!(b.len(), 4 + 4 + 4 + 4 + 2 * 8 + 2 * 8);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 2);
        assert_eq!(from_bytes(&b).unwrap(), t);
    }

    #[test]
    fn rejects_trailing_and_truncated() {
        let t = Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let mut b = to_bytes(&t);
        b.push(0);
        assert!(from_bytes(&b).is_err());
        b.truncate(b.len() - 2);
        assert!(from_bytes(&b).is_err());
        assert!(from_bytes(b"SVT").is_err());
    }

    #[test]
    fn rejects_non_finite_payload() {
        let t = Tensor::new(&[1], vec![0.0]).unwrap();
        let mut b = to_bytes(&t);
        let n = b.len();
        b[n - 8..].copy_from_slice(&f64::INFINITY.to_le_bytes());
        assert!(matches!(from_bytes(&b), Err(Error::NonFinite { .. })));
    }
}
