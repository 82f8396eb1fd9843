//! Plain-text inputs: comma-separated matrices and vectors with an optional
//! header row, `.` as decimal separator.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

fn parse_row(rec: &csv::StringRecord) -> Option<Vec<f64>> {
    rec.iter().map(|f| f.trim().parse::<f64>().ok()).collect()
}

/// Parses a dense matrix. A first row that does not parse as numbers is
/// taken as a header; every other row must be numeric with the same width.
pub fn parse_matrix_csv(text: &str) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Input(format!("csv: {e}")))?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        match parse_row(&rec) {
            Some(r) => rows.push(r),
            None if i == 0 => continue,
            None => {
                return Err(Error::Input(format!(
                    "csv line {}: non-numeric value",
                    i + 1
                )))
            }
        }
    }
    let width = rows
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::Input("csv has no data rows".into()))?;
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != width) {
        return Err(Error::Input(format!(
            "csv is ragged: data row {} has {} fields, expected {width}",
            i + 1,
            r.len()
        )));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Input("csv contains non-finite values".into()));
    }
    Ok(DMatrix::from_row_iterator(
        rows.len(),
        width,
        rows.into_iter().flatten(),
    ))
}

/// Parses a single-column file into a vector.
pub fn parse_vector_csv(text: &str) -> Result<DVector<f64>> {
    let m = parse_matrix_csv(text)?;
    if m.ncols() != 1 {
        return Err(Error::Input(format!(
            "expected a single column, found {}",
            m.ncols()
        )));
    }
    Ok(m.column(0).into_owned())
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_matrix_csv(&text)
}

pub fn read_vector_csv(path: &Path) -> Result<DVector<f64>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_vector_csv(&text)
}

/// One value per line.
pub fn format_vector(v: &DVector<f64>) -> String {
    let mut s = String::with_capacity(v.len() * 20);
    for x in v.iter() {
        s.push_str(&x.to_string());
        s.push('\n');
    }
    s
}
