//! `POTQ` quantized-matrix files.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "POTQ" (50 4F 54 51)
//! 4       2     version, u16 LE = 1
//! 6       1     n_bits (2..=4)
//! 7       1     flags (see FLAG_*)
//! 8       4     group size G, u32 LE
//! 12      4     d_out, u32 LE
//! 16      4     d_in, u32 LE
//! 20      ...   scales: FP16 bits, u16 LE, for each column, for each group
//! ...     ...   codes: for each column, ceil(d_out / (32 / n)) u32 LE words
//! ```
//!
//! Each column starts on a fresh word. Padding bits must be zero.

use std::fs;
use std::path::Path;

use crate::error::{PotError, Result};
use crate::fp16::Half;
use crate::pot::{BitWidth, QuantizedMatrix};
use crate::tensor::pten::Cursor;
use crate::tensor::GroupLayout;

use super::{words_for, PackedCodes};

pub const MAGIC: [u8; 4] = *b"POTQ";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 20;

/// Scales were refined by calibration.
pub const FLAG_CALIBRATED: u8 = 0b01;
/// Scales were set with `b = 1` instead of the grid search.
pub const FLAG_NO_SCALE_SEARCH: u8 = 0b10;
const KNOWN_FLAGS: u8 = FLAG_CALIBRATED | FLAG_NO_SCALE_SEARCH;

#[derive(Debug, Clone, PartialEq)]
pub struct PotqFile {
    pub flags: u8,
    pub matrix: QuantizedMatrix,
}

impl PotqFile {
    pub fn new(matrix: QuantizedMatrix, flags: u8) -> Self {
        PotqFile { flags, matrix }
    }
}

fn dim_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| PotError::InvalidShape(format!("{what} {v} does not fit in u32")))
}

pub fn to_bytes(file: &PotqFile) -> Result<Vec<u8>> {
    let q = &file.matrix;
    let layout = q.layout();
    let mut out = Vec::with_capacity(
        HEADER_LEN
            + 2 * q.scales().len()
            + 4 * q.columns().iter().map(|c| c.words().len()).sum::<usize>(),
    );
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(q.bits().get() as u8);
    out.push(file.flags);
    out.extend_from_slice(&dim_u32(layout.group_size(), "group size")?.to_le_bytes());
    out.extend_from_slice(&dim_u32(layout.d_out(), "d_out")?.to_le_bytes());
    out.extend_from_slice(&dim_u32(layout.d_in(), "d_in")?.to_le_bytes());
    for s in q.scales() {
        out.extend_from_slice(&s.to_bits().to_le_bytes());
    }
    for col in q.columns() {
        for w in col.words() {
            out.extend_from_slice(&w.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(buf: &[u8]) -> Result<PotqFile> {
    let mut cur = Cursor::new(buf);
    cur.magic(MAGIC)?;
    let version = cur.u16()?;
    if version != VERSION {
        return Err(PotError::UnsupportedVersion(version));
    }
    let bits = BitWidth::new(cur.u8()? as u32)?;
    let flags = cur.u8()?;
    if flags & !KNOWN_FLAGS != 0 {
        return Err(PotError::InvalidConfig(format!(
            "unknown flag bits {flags:#04x}"
        )));
    }
    let group_size = cur.u32()? as usize;
    let d_out = cur.u32()? as usize;
    let d_in = cur.u32()? as usize;
    let layout = GroupLayout::new(d_out, d_in, group_size)?;

    let scale_bytes = cur.take(2 * layout.num_groups())?;
    let scales = scale_bytes
        .chunks_exact(2)
        .map(|c| Half::from_bits(u16::from_le_bytes([c[0], c[1]])))
        .collect();
    let per_column = words_for(d_out, bits);
    let mut columns = Vec::with_capacity(d_in);
    for _ in 0..d_in {
        let words = cur
            .take(4 * per_column)?
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        columns.push(PackedCodes::from_words(bits, d_out, words)?);
    }
    cur.finish()?;
    Ok(PotqFile {
        flags,
        matrix: QuantizedMatrix::new(layout, bits, scales, columns)?,
    })
}

pub fn write_potq(path: impl AsRef<Path>, file: &PotqFile) -> Result<()> {
    fs::write(path, to_bytes(file)?)?;
    Ok(())
}

pub fn read_potq(path: impl AsRef<Path>) -> Result<PotqFile> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pot::Code;

    fn tiny() -> PotqFile {
        let b = BitWidth::new(3).unwrap();
        let layout = GroupLayout::new(3, 2, 2).unwrap();
        let scales = vec![
            Half::ONE,
            Half::encode(0.5),
            Half::encode(2.0),
            Half::encode(0.25),
        ];
        let columns = vec![
            PackedCodes::pack(
                &[Code::new(true, 3), Code::new(false, 1), Code::new(false, 0)],
                b,
            )
            .unwrap(),
            PackedCodes::pack(
                &[Code::new(false, 2), Code::new(true, 0), Code::new(true, 1)],
                b,
            )
            .unwrap(),
        ];
        PotqFile::new(
            QuantizedMatrix::new(layout, b, scales, columns).unwrap(),
            FLAG_CALIBRATED,
        )
    }

    #[test]
    fn layout_is_byte_exact() {
        let bytes = to_bytes(&tiny()).unwrap();
        let expect: Vec<u8> = vec![
            0x50, 0x4F, 0x54, 0x51, // magic
            0x01, 0x00, // version
            0x03, 0x01, // n_bits, flags
            0x02, 0x00, 0x00, 0x00, // G
            0x03, 0x00, 0x00, 0x00, // d_out
            0x02, 0x00, 0x00, 0x00, // d_in
            0x00, 0x3C, 0x00, 0x38, // column 0 scales
            0x00, 0x40, 0x00, 0x34, // column 1 scales
            // column 0: 111 | 001 << 3 | 000 << 6 = 0b001111
            0x0F, 0x00, 0x00, 0x00,
            // column 1: 010 | 100 << 3 | 101 << 6 = 0b101_100_010
            0x62, 0x01, 0x00, 0x00,
        ];
        assert_eq!(bytes, expect);
        assert_eq!(from_bytes(&bytes).unwrap(), tiny());
    }

    #[test]
    fn rejects_corruption() {
        let bytes = to_bytes(&tiny()).unwrap();
        let mut b = bytes.clone();
        b[0] = b'X';
        assert!(matches!(from_bytes(&b), Err(PotError::BadMagic { .. })));
        let mut b = bytes.clone();
        b[6] = 5;
        assert!(matches!(
            from_bytes(&b),
            Err(PotError::UnsupportedBitWidth(5))
        ));
        let mut b = bytes.clone();
        b[7] = 0x80;
        assert!(from_bytes(&b).is_err());
        // negative scale
        let mut b = bytes.clone();
        b[21] = 0xBC;
        assert!(matches!(from_bytes(&b), Err(PotError::InvalidScale { .. })));
        // padding bit set in the last word
        let mut b = bytes.clone();
        b[35] = 0x80;
        assert!(matches!(
            from_bytes(&b),
            Err(PotError::NonCanonicalPadding(0))
        ));
        assert!(matches!(
            from_bytes(&bytes[..30]),
            Err(PotError::Truncated { .. })
        ));
    }
}
