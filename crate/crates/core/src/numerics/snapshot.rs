//! Binary tensor snapshots: magic `RAST`, u16 version, u16 rank, u64
//! extents, then f64 payload. All little-endian, row-major.

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RAST";
pub const VERSION: u16 = 1;

pub fn encode_into(t: &Tensor, out: &mut Vec<u8>) {
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(t.rank() as u16).to_le_bytes());
    for &e in t.shape() {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * t.rank() + 8 * t.len());
    encode_into(t, &mut out);
    out
}

/// Little-endian cursor that reports the failing offset.
pub struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    source: &'a str,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8], source: &'a str) -> Self {
        Reader { bytes, pos: 0, source }
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    pub fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }

    pub fn error(&self, detail: impl Into<String>) -> Error {
        Error::format(self.source, self.pos as u64, detail)
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.error(format!(
                "truncated: needed {n} bytes, {} remain",
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let start = self.pos;
        let got = self.take(4)?;
        if got != magic {
            self.pos = start;
            return Err(self.error(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(())
    }

    pub fn tensor(&mut self) -> Result<Tensor> {
        self.expect_magic(MAGIC)?;
        let version = self.u16()?;
        if version != VERSION {
            return Err(self.error(format!("unsupported tensor version {version}")));
        }
        let rank = self.u16()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let e = self.u64()?;
            if e == 0 {
                return Err(self.error("zero extent"));
            }
            shape.push(e as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| self.error("extent product overflows"))?;
        if n.checked_mul(8).is_none_or(|b| b > self.bytes.len() - self.pos) {
            return Err(self.error(format!("truncated payload: {n} values declared")));
        }
        let data = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Tensor::new(&shape, data)
    }
}

pub fn decode(bytes: &[u8], source: &str) -> Result<Tensor> {
    let mut r = Reader::new(bytes, source);
    let t = r.tensor()?;
    if !r.at_end() {
        return Err(r.error("trailing bytes after tensor"));
    }
    Ok(t)
}
