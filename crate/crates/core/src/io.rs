//! CSV input and output for capture and covariate matrices.

use std::io::{Read, Write};

use crate::error::{RecapError, Result};
use crate::histories::{CaptureMatrix, CovariateMatrix};

/// Reads a capture matrix: one row per observed unit, `t` columns of 0/1.
/// A single header line is allowed; it is recognised by a non-numeric first
/// cell. Blank lines are skipped.
pub fn read_capture_csv<R: Read>(input: R) -> Result<CaptureMatrix> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(input);
    let mut rows: Vec<Vec<u8>> = Vec::new();
    let mut t: Option<usize> = None;
    let mut first = true;
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.iter().all(|c| c.is_empty()) {
            continue;
        }
        if first {
            first = false;
            if record.get(0).is_some_and(|c| c.parse::<f64>().is_err()) {
                continue;
            }
        }
        let row = record
            .iter()
            .map(|cell| match cell {
                "0" => Ok(0u8),
                "1" => Ok(1u8),
                other => Err(RecapError::Parse { line, msg: format!("expected 0 or 1, found {other:?}") }),
            })
            .collect::<Result<Vec<u8>>>()?;
        match t {
            None => t = Some(row.len()),
            Some(t) if t != row.len() => {
                return Err(RecapError::Parse { line, msg: format!("{} columns, expected {t}", row.len()) })
            }
            _ => {}
        }
        if row.iter().all(|&b| b == 0) {
            return Err(RecapError::Parse { line, msg: "row has no capture".into() });
        }
        rows.push(row);
    }
    let t = t.ok_or_else(|| RecapError::InvalidData("no capture histories in input".into()))?;
    CaptureMatrix::new(t as u32, rows)
}

pub fn read_capture_file(path: &std::path::Path) -> Result<CaptureMatrix> {
    let file = std::fs::File::open(path).map_err(|e| RecapError::Io(format!("{}: {e}", path.display())))?;
    read_capture_csv(file)
}

/// Writes a capture matrix with an `x1,...,xt` header.
pub fn write_capture_csv<W: Write>(data: &CaptureMatrix, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record((1..=data.t()).map(|j| format!("x{j}")))?;
    for i in 0..data.m() {
        out.write_record(data.row(i).iter().map(|b| b.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

/// Writes the observed rows of a covariate matrix as exact rationals
/// (`n/d`, integers without a denominator) with a `z1,...,zt` header.
pub fn write_covariate_csv<W: Write>(z: &CovariateMatrix, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record((1..=z.t).map(|j| format!("z{j}")))?;
    for row in &z.observed {
        out.write_record(row.iter().map(|v| {
            if *v.denom() == 1 {
                v.numer().to_string()
            } else {
                format!("{}/{}", v.numer(), v.denom())
            }
        }))?;
    }
    out.flush()?;
    Ok(())
}
