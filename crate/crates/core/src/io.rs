//! Serialization helpers shared by banks, targets and images.
//!
//! Complex data is stored as interleaved `[re, im, re, im, ...]` arrays;
//! matrices carry explicit `rows`/`cols` and are column-major.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::numerics::{CMat, CVec, C64};

pub fn interleave<'a>(values: impl IntoIterator<Item = &'a C64>) -> Vec<f64> {
    values.into_iter().flat_map(|z| [z.re, z.im]).collect()
}

pub fn deinterleave(data: &[f64]) -> Result<Vec<C64>> {
    if !data.len().is_multiple_of(2) {
        return Err(Error::InvalidInput(format!(
            "interleaved complex data has odd length {}",
            data.len()
        )));
    }
    Ok(data.chunks_exact(2).map(|p| C64::new(p[0], p[1])).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexMatrixRecord {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&CMat> for ComplexMatrixRecord {
    fn from(m: &CMat) -> Self {
        ComplexMatrixRecord {
            rows: m.nrows(),
            cols: m.ncols(),
            data: interleave(m.iter()),
        }
    }
}

impl TryFrom<&ComplexMatrixRecord> for CMat {
    type Error = Error;

    fn try_from(r: &ComplexMatrixRecord) -> Result<CMat> {
        let vals = deinterleave(&r.data)?;
        if vals.len() != r.rows * r.cols {
            return Err(Error::InvalidInput(format!(
                "matrix record declares {}x{} but holds {} entries",
                r.rows,
                r.cols,
                vals.len()
            )));
        }
        Ok(CMat::from_vec(r.rows, r.cols, vals))
    }
}

/// `#[serde(with = "cmat_serde")]` adapter for [`CMat`] fields.
pub mod cmat_serde {
    use super::*;

    pub fn serialize<S: Serializer>(m: &CMat, s: S) -> std::result::Result<S::Ok, S::Error> {
        ComplexMatrixRecord::from(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<CMat, D::Error> {
        let r = ComplexMatrixRecord::deserialize(d)?;
        CMat::try_from(&r).map_err(serde::de::Error::custom)
    }
}

/// `#[serde(with = "cvec_serde")]` adapter storing a [`CVec`] interleaved.
pub mod cvec_serde {
    use super::*;

    pub fn serialize<S: Serializer>(v: &CVec, s: S) -> std::result::Result<S::Ok, S::Error> {
        interleave(v.iter()).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<CVec, D::Error> {
        let data = Vec::<f64>::deserialize(d)?;
        let vals = deinterleave(&data).map_err(serde::de::Error::custom)?;
        Ok(CVec::from_vec(vals))
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Binary complex grid: `u64` rows, `u64` cols, then row-major `(re, im)`
/// `f64` pairs, all little endian.
pub fn write_complex_grid(path: &Path, grid: &CMat) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + 16 * grid.len());
    buf.extend_from_slice(&(grid.nrows() as u64).to_le_bytes());
    buf.extend_from_slice(&(grid.ncols() as u64).to_le_bytes());
    for i in 0..grid.nrows() {
        for j in 0..grid.ncols() {
            let z = grid[(i, j)];
            buf.extend_from_slice(&z.re.to_le_bytes());
            buf.extend_from_slice(&z.im.to_le_bytes());
        }
    }
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_complex_grid(path: &Path) -> Result<CMat> {
    let bytes = fs::read(path)?;
    let word = |k: usize| -> Result<[u8; 8]> {
        bytes
            .get(8 * k..8 * k + 8)
            .map(|s| s.try_into().expect("slice of length 8"))
            .ok_or_else(|| Error::InvalidInput("truncated complex grid file".into()))
    };
    let rows = u64::from_le_bytes(word(0)?) as usize;
    let cols = u64::from_le_bytes(word(1)?) as usize;
    if bytes.len() != 16 + 16 * rows * cols {
        return Err(Error::InvalidInput(format!(
            "grid header says {rows}x{cols} but file has {} bytes",
            bytes.len()
        )));
    }
    let mut out = CMat::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let k = 2 + 2 * (i * cols + j);
            out[(i, j)] = C64::new(
                f64::from_le_bytes(word(k)?),
                f64::from_le_bytes(word(k + 1)?),
            );
        }
    }
    Ok(out)
}
