// SPDX-License-Identifier: MIT OR Apache-2.0

//! Plain-text exports: CSV with a header row, `,` separators and floats in
//! 17 significant digits so every value round-trips exactly.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::Result;
use crate::splb::{self, Section};
use crate::synthdgp::{Dictionary, ObservationBatch};

/// Locale-independent float formatting with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "NaN".to_string()
    } else if v > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

/// Row-major CSV of `m` with header `prefix0, prefix1, ...` and a leading row index column.
pub fn write_matrix_csv<W: Write>(w: W, m: &DMatrix<f64>, index_name: &str, prefix: &str) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec![index_name.to_string()];
    header.extend((0..m.ncols()).map(|j| format!("{prefix}{j}")));
    wtr.write_record(&header)?;
    for i in 0..m.nrows() {
        let mut rec = vec![i.to_string()];
        rec.extend((0..m.ncols()).map(|j| fmt_f64(m[(i, j)])));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

impl Dictionary {
    pub fn to_splb(&self) -> Result<Vec<u8>> {
        splb::to_bytes(&[Section::from_matrix(splb::TAG_DICT, self.atoms())])
    }

    pub fn from_splb(bytes: &[u8]) -> Result<Self> {
        let secs = splb::read(bytes)?;
        Dictionary::new(splb::find(&secs, &splb::TAG_DICT)?.to_matrix())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_matrix_csv(w, self.atoms(), "row", "atom")
    }

    pub fn save_splb(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_splb()?)?;
        Ok(())
    }
}

impl ObservationBatch {
    pub fn to_splb(&self) -> Result<Vec<u8>> {
        splb::to_bytes(&[Section::from_matrix(splb::TAG_OBSV, &self.samples().transpose())])
    }

    pub fn from_splb(bytes: &[u8]) -> Result<Self> {
        let secs = splb::read(bytes)?;
        ObservationBatch::new(splb::find(&secs, &splb::TAG_OBSV)?.to_matrix().transpose())
    }

    /// One row per sample.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_matrix_csv(w, &self.samples().transpose(), "sample", "y")
    }
}

/// Codes stored `D × N` (one sample per row).
pub fn codes_to_splb(codes_by_sample: &DMatrix<f64>) -> Result<Vec<u8>> {
    splb::to_bytes(&[Section::from_matrix(splb::TAG_CODE, codes_by_sample)])
}
