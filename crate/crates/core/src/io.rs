//! Delimited-text matrices.
//!
//! Layout: the first row holds a corner label followed by column ids, every
//! other row holds a row id followed by numeric cells. Numbers are written
//! with 17 significant digits so that reading a written file recovers the
//! exact `f64` values.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::matrix::DataMatrix;

/// Field separator, chosen from the file extension unless given explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delimiter {
    Tab,
    Comma,
}

impl Delimiter {
    pub fn for_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Delimiter::Comma,
            _ => Delimiter::Tab,
        }
    }

    fn byte(self) -> u8 {
        match self {
            Delimiter::Tab => b'\t',
            Delimiter::Comma => b',',
        }
    }
}

/// Formats a value with 17 significant digits; `+∞` is written as `inf`.
pub fn format_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v == f64::INFINITY {
        "inf".to_string()
    } else if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        "nan".to_string()
    }
}

pub fn read_matrix(path: &Path) -> Result<DataMatrix> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    parse_matrix(&text, Delimiter::for_path(path))
}

pub fn parse_matrix(text: &str, delimiter: Delimiter) -> Result<DataMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter.byte())
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());

    let mut col_ids: Option<Vec<String>> = None;
    let mut row_ids = Vec::new();
    let mut cells = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::Parse {
                line,
                column: 0,
                message: e.to_string(),
            }
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        match &col_ids {
            None => {
                let ids: Vec<String> = record.iter().skip(1).map(|s| s.trim().to_string()).collect();
                if ids.is_empty() {
                    return Err(Error::Parse {
                        line,
                        column: 1,
                        message: "header has no column ids".into(),
                    });
                }
                col_ids = Some(ids);
            }
            Some(ids) => {
                if record.len() != ids.len() + 1 {
                    return Err(Error::Parse {
                        line,
                        column: record.len(),
                        message: format!(
                            "expected {} fields, found {}",
                            ids.len() + 1,
                            record.len()
                        ),
                    });
                }
                row_ids.push(record[0].trim().to_string());
                for (j, field) in record.iter().enumerate().skip(1) {
                    let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                        line,
                        column: j + 1,
                        message: format!("'{field}' is not a number"),
                    })?;
                    if !v.is_finite() {
                        return Err(Error::Parse {
                            line,
                            column: j + 1,
                            message: format!("'{field}' is not finite"),
                        });
                    }
                    cells.push(v);
                }
            }
        }
    }
    let col_ids = col_ids.ok_or(Error::Parse {
        line: 1,
        column: 1,
        message: "empty input".into(),
    })?;
    let n = col_ids.len();
    let m = row_ids.len();
    let values = DMatrix::from_row_slice(m, n, &cells);
    DataMatrix::new(values, row_ids, col_ids)
}

/// Writes a matrix with the given identifiers.
pub fn write_matrix(
    path: &Path,
    corner: &str,
    row_ids: &[String],
    col_ids: &[String],
    values: &DMatrix<f64>,
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_matrix_to(&mut out, Delimiter::for_path(path), corner, row_ids, col_ids, values)?;
    out.flush()?;
    Ok(())
}

pub fn write_matrix_to<W: Write>(
    out: &mut W,
    delimiter: Delimiter,
    corner: &str,
    row_ids: &[String],
    col_ids: &[String],
    values: &DMatrix<f64>,
) -> Result<()> {
    assert_eq!(values.shape(), (row_ids.len(), col_ids.len()));
    let sep = delimiter.byte() as char;
    write!(out, "{corner}")?;
    for id in col_ids {
        write!(out, "{sep}{id}")?;
    }
    writeln!(out)?;
    for (i, id) in row_ids.iter().enumerate() {
        write!(out, "{id}")?;
        for j in 0..values.ncols() {
            write!(out, "{sep}{}", format_f64(values[(i, j)]))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn write_data_matrix(path: &Path, mat: &DataMatrix) -> Result<()> {
    write_matrix(path, "id", mat.row_ids(), mat.col_ids(), mat.values())
}

/// Reads a square matrix with no identifiers (e.g. a rotation), one row per
/// line, whitespace, tab or comma separated.
pub fn read_plain_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    parse_plain_matrix(&text)
}

pub fn parse_plain_matrix(text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .enumerate()
            .map(|(j, f)| {
                f.parse::<f64>().map_err(|_| Error::Parse {
                    line: ln + 1,
                    column: j + 1,
                    message: format!("'{f}' is not a number"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse {
                    line: ln + 1,
                    column: row.len(),
                    message: format!("expected {} fields", first.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 1,
            column: 1,
            message: "empty matrix".into(),
        });
    }
    let (k, c) = (rows.len(), rows[0].len());
    Ok(DMatrix::from_fn(k, c, |i, j| rows[i][j]))
}
