// SPDX-License-Identifier: MIT OR Apache-2.0

//! SPLB binary container.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "SPLB"
//! 4       2     version, u16 LE (currently 1)
//! 6       2     section count, u16 LE
//! then per section:
//!         4     tag, four ASCII bytes ("DICT", "OBSV", "CODE", "ENCW", ...)
//!         4     rows, u32 LE
//!         4     cols, u32 LE
//!         8·r·c payload, f64 LE, row-major
//! ```
//!
//! Dictionaries are stored as one `DICT` section (`M × N`), observation
//! batches as `OBSV` (`D × M`, one sample per row) and codes as `CODE`
//! (`D × N`).

use std::io::{Read, Write};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SPLB";
pub const VERSION: u16 = 1;

pub const TAG_DICT: [u8; 4] = *b"DICT";
pub const TAG_OBSV: [u8; 4] = *b"OBSV";
pub const TAG_CODE: [u8; 4] = *b"CODE";
/// Sparse autoencoder encoder weights (`N × M`).
pub const TAG_ENCW: [u8; 4] = *b"ENCW";
/// Sparse autoencoder encoder bias (`N × 1`).
pub const TAG_ENCB: [u8; 4] = *b"ENCB";
/// Sparse autoencoder decoder dictionary (`M × N`).
pub const TAG_DECD: [u8; 4] = *b"DECD";

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub tag: [u8; 4],
    pub rows: usize,
    pub cols: usize,
    /// Row-major payload.
    pub data: Vec<f64>,
}

impl Section {
    pub fn from_matrix(tag: [u8; 4], m: &DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(m[(i, j)]);
            }
        }
        Self { tag, rows, cols, data }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn tag_str(&self) -> String {
        String::from_utf8_lossy(&self.tag).into_owned()
    }
}

pub fn write<W: Write>(mut w: W, sections: &[Section]) -> Result<()> {
    let count = u16::try_from(sections.len()).map_err(|_| Error::Format("too many sections".into()))?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&count.to_le_bytes())?;
    for s in sections {
        if s.data.len() != s.rows * s.cols {
            return Err(Error::Format(format!("section {} payload length mismatch", s.tag_str())));
        }
        let rows = u32::try_from(s.rows).map_err(|_| Error::Format("row count overflows u32".into()))?;
        let cols = u32::try_from(s.cols).map_err(|_| Error::Format("column count overflows u32".into()))?;
        w.write_all(&s.tag)?;
        w.write_all(&rows.to_le_bytes())?;
        w.write_all(&cols.to_le_bytes())?;
        let mut buf = Vec::with_capacity(8 * s.data.len());
        for v in &s.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn to_bytes(sections: &[Section]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write(&mut out, sections)?;
    Ok(out)
}

pub fn read<R: Read>(mut r: R) -> Result<Vec<Section>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::Format("truncated header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    let mut u16buf = [0u8; 2];
    r.read_exact(&mut u16buf).map_err(|_| Error::Format("truncated header".into()))?;
    let version = u16::from_le_bytes(u16buf);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    r.read_exact(&mut u16buf).map_err(|_| Error::Format("truncated header".into()))?;
    let count = u16::from_le_bytes(u16buf);
    let mut sections = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let mut head = [0u8; 12];
        r.read_exact(&mut head).map_err(|_| Error::Format("truncated section header".into()))?;
        let tag = [head[0], head[1], head[2], head[3]];
        let rows = u32::from_le_bytes([head[4], head[5], head[6], head[7]]) as usize;
        let cols = u32::from_le_bytes([head[8], head[9], head[10], head[11]]) as usize;
        let len = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Format("section size overflow".into()))?;
        let mut payload = vec![0u8; len];
        r.read_exact(&mut payload).map_err(|_| Error::Format("truncated payload".into()))?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        sections.push(Section { tag, rows, cols, data });
    }
    Ok(sections)
}

/// First section carrying `tag`.
pub fn find<'a>(sections: &'a [Section], tag: &[u8; 4]) -> Result<&'a Section> {
    sections
        .iter()
        .find(|s| &s.tag == tag)
        .ok_or_else(|| Error::Format(format!("missing section {}", String::from_utf8_lossy(tag))))
}
