//! `PTEN` tensor files.
//!
//! ```text
//! offset  size        field
//! 0       4           magic "PTEN" (50 54 45 4E)
//! 4       2           version, u16 LE = 1
//! 6       1           dtype: 0 = f32, 1 = f16
//! 7       1           padding, zero
//! 8       4           ndim, u32 LE
//! 12      8 * ndim    dims, u64 LE each
//! ...                 row-major payload, little-endian
//! ```

use std::fs;
use std::path::Path;

use crate::error::{PotError, Result};
use crate::fp16::Half;

use super::{DType, Tensor, TensorData};

pub const MAGIC: [u8; 4] = *b"PTEN";
pub const VERSION: u16 = 1;

pub fn to_bytes(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * t.ndim() + t.len() * t.dtype().size_of());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(t.dtype().tag());
    out.push(0);
    out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
    for &d in t.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match t.data() {
        TensorData::F32(v) => v
            .iter()
            .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::F16(v) => v
            .iter()
            .for_each(|h| out.extend_from_slice(&h.to_bits().to_le_bytes())),
    }
    out
}

pub(crate) struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Cursor { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(PotError::Truncated {
                needed: self.pos.saturating_add(n),
                got: self.buf.len(),
            }),
        }
    }

    pub(crate) fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let found: [u8; 4] = self.take(4)?.try_into().unwrap();
        if found != expected {
            return Err(PotError::BadMagic { expected, found });
        }
        Ok(())
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            extra => Err(PotError::TrailingBytes(extra)),
        }
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<Tensor> {
    let mut cur = Cursor::new(buf);
    cur.magic(MAGIC)?;
    let version = cur.u16()?;
    if version != VERSION {
        return Err(PotError::UnsupportedVersion(version));
    }
    let dtype = DType::from_tag(cur.u8()?)?;
    let _pad = cur.u8()?;
    let ndim = cur.u32()? as usize;
    if ndim == 0 {
        return Err(PotError::InvalidShape("empty dims list".into()));
    }
    let mut dims = Vec::with_capacity(ndim.min(64));
    for _ in 0..ndim {
        let d = cur.u64()?;
        dims.push(
            usize::try_from(d).map_err(|_| PotError::InvalidShape(format!("dim {d} too large")))?,
        );
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| PotError::InvalidShape("element count overflows".into()))?;
    let bytes = count
        .checked_mul(dtype.size_of())
        .ok_or_else(|| PotError::InvalidShape("payload size overflows".into()))?;
    let payload = cur.take(bytes)?;
    cur.finish()?;
    match dtype {
        DType::F32 => {
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Tensor::from_f32(dims, data)
        }
        DType::F16 => {
            let data = payload
                .chunks_exact(2)
                .map(|c| Half::from_bits(u16::from_le_bytes(c.try_into().unwrap())))
                .collect();
            Tensor::from_f16(dims, data)
        }
    }
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    fs::write(path, to_bytes(t))?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    from_bytes(&fs::read(path)?)
}
