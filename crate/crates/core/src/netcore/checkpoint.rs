//! Flat binary checkpoint format.
//!
//! ```text
//! offset  size  field
//! 0       4     magic, ASCII "LMCK"
//! 4       4     format version, u32 little-endian (currently 1)
//! 8       ...   matrices, back to back, each:
//!                 rows  u32 LE
//!                 cols  u32 LE
//!                 rows*cols f64 LE, row-major
//! ```
//!
//! The file carries no architecture description; a reader supplies the
//! expected matrix sequence (see [`crate::trainer::ModelState::load_checkpoint`]).

use std::io::{Read, Write};

use super::Matrix;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"LMCK";
pub const VERSION: u32 = 1;

pub fn write_matrices<W: Write>(mut w: W, matrices: &[&Matrix]) -> Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for m in matrices {
        let rows = u32::try_from(m.rows()).map_err(|_| Error::Format("too many rows".into()))?;
        let cols = u32::try_from(m.cols()).map_err(|_| Error::Format("too many cols".into()))?;
        w.write_all(&rows.to_le_bytes())?;
        w.write_all(&cols.to_le_bytes())?;
        for v in m.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn encode(matrices: &[&Matrix]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_matrices(&mut buf, matrices).expect("writing to a Vec cannot fail");
    buf
}

pub fn read_matrices<R: Read>(mut r: R) -> Result<Vec<Matrix>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode(&bytes)
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Matrix>> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(Error::Format("missing LMCK magic".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut out = Vec::new();
    while cur.pos < bytes.len() {
        let rows = cur.u32()? as usize;
        let cols = cur.u32()? as usize;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Format("matrix size overflows".into()))?;
        let raw = cur.take(n.checked_mul(8).ok_or_else(|| Error::Format("overflow".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        out.push(Matrix::new(rows, cols, data)?);
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated checkpoint: wanted {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
