//! Dataset ingestion: CSV point clouds and IDX image files.

use std::fs;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::EmpiricalMeasure;

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
const IDX_HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Idx,
}

impl FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(DataFormat::Csv),
            "idx" => Ok(DataFormat::Idx),
            other => Err(Error::Config(format!("unknown data format '{other}' (expected csv or idx)"))),
        }
    }
}

/// Rows of a data file, with the image shape when the source has one.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub points: Array2<f64>,
    pub image_shape: Option<(usize, usize)>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn into_measure(self) -> Result<EmpiricalMeasure> {
        EmpiricalMeasure::uniform(self.points)
    }
}

/// One sample per line, comma separated, no header. Rows and columns in
/// errors are 1-based.
pub fn parse_csv<R: Read>(reader: R) -> Result<Array2<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::Parse {
                    row: r + 1,
                    col: record.len().min(w) + 1,
                    message: format!("expected {w} columns, found {}", record.len()),
                })
            }
            _ => {}
        }
        for (c, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row: r + 1,
                col: c + 1,
                message: format!("'{cell}' is not a number"),
            })?;
            values.push(v);
        }
        rows += 1;
    }
    let width = width.ok_or(Error::Parse {
        row: 1,
        col: 1,
        message: "no data rows".into(),
    })?;
    Ok(Array2::from_shape_vec((rows, width), values).expect("rows have equal width"))
}

/// IDX image file (magic 0x00000803, big-endian u32 count, rows, cols, then
/// u8 pixels). Each image becomes one row of rows·cols values in [0, 1].
pub fn parse_idx_images(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < IDX_HEADER_LEN {
        return Err(Error::Format {
            offset: bytes.len(),
            message: format!("expected a {IDX_HEADER_LEN}-byte header, found {} bytes", bytes.len()),
        });
    }
    let word = |i: usize| u32::from_be_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes"));
    let magic = word(0);
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad magic 0x{magic:08x}, expected 0x{IDX_IMAGE_MAGIC:08x}"),
        });
    }
    let (count, rows, cols) = (word(1) as usize, word(2) as usize, word(3) as usize);
    let dim = rows * cols;
    if dim == 0 {
        return Err(Error::Format {
            offset: 8,
            message: format!("image shape {rows}x{cols} is empty"),
        });
    }
    let expected = count * dim;
    let payload = &bytes[IDX_HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::Format {
            offset: IDX_HEADER_LEN + payload.len().min(expected),
            message: format!(
                "expected {expected} payload bytes for {count} images of {rows}x{cols}, found {}",
                payload.len()
            ),
        });
    }
    let points = Array2::from_shape_vec((count, dim), payload.iter().map(|&b| f64::from(b) / 255.0).collect())
        .expect("length checked");
    Ok(Dataset {
        points,
        image_shape: Some((rows, cols)),
    })
}

/// Inverse of [`parse_idx_images`]; values are rounded back to bytes.
pub fn encode_idx_images(points: &Array2<f64>, rows: usize, cols: usize) -> Result<Vec<u8>> {
    if points.ncols() != rows * cols {
        return Err(Error::Dimension(format!(
            "{} values per row do not form {rows}x{cols} images",
            points.ncols()
        )));
    }
    let mut out = Vec::with_capacity(IDX_HEADER_LEN + points.len());
    for w in [IDX_IMAGE_MAGIC, points.nrows() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&w.to_be_bytes());
    }
    out.extend(points.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    Ok(out)
}

pub fn read_dataset(path: &Path, format: DataFormat) -> Result<Dataset> {
    match format {
        DataFormat::Csv => Ok(Dataset {
            points: parse_csv(fs::File::open(path)?)?,
            image_shape: None,
        }),
        DataFormat::Idx => parse_idx_images(&fs::read(path)?),
    }
}

/// Reads a file as a uniform empirical measure.
pub fn ingest(path: &Path, format: DataFormat) -> Result<EmpiricalMeasure> {
    read_dataset(path, format)?.into_measure()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn csv_with_blank_trailing_line() {
        let m = parse_csv("0, 0\n1,1\n\n".as_bytes()).unwrap();
        assert_eq!(m, array![[0.0, 0.0], [1.0, 1.0]]);
    }

    #[test]
    fn idx_header_too_short() {
        assert!(matches!(parse_idx_images(&[0, 0, 8]), Err(Error::Format { offset: 3, .. })));
    }
}
