//! Text input formats. Blank lines and lines starting with `#` are ignored;
//! error line numbers are 1-based.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::finite_group::{FiniteInvariantPair, InstanceDocument};
use crate::regression::RegressionData;

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn real(field: &str, line: usize) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::parse(line, format!("'{}' is not a number", field.trim())))?;
    if !v.is_finite() {
        return Err(Error::parse(line, format!("'{}' is not finite", field.trim())));
    }
    Ok(v)
}

fn reals(row: &str, line: usize) -> Result<Vec<f64>> {
    row.split(',').map(|f| real(f, line)).collect()
}

/// Comma-separated reals, e.g. the value of a vector flag.
pub fn parse_real_list(text: &str) -> Result<Vec<f64>> {
    reals(text, 1)
}

/// One observation per line.
pub fn parse_scalar_column(text: &str) -> Result<Vec<f64>> {
    content_lines(text).map(|(i, l)| real(l, i)).collect()
}

/// A single line of a scalar stream; `None` for blank and comment lines.
pub fn parse_scalar_line(line: &str, line_no: usize) -> Result<Option<f64>> {
    let l = line.trim();
    if l.is_empty() || l.starts_with('#') {
        return Ok(None);
    }
    real(l, line_no).map(Some)
}

/// Whether a stream line carries data.
pub fn is_content(line: &str) -> bool {
    let l = line.trim();
    !l.is_empty() && !l.starts_with('#')
}

/// One parsed line of a vector stream. Kept separate so streaming readers can
/// parse incrementally with the same rules.
pub fn parse_vector_line(line: &str, line_no: usize, d: Option<usize>) -> Result<Vec<f64>> {
    let row = reals(line.trim(), line_no)?;
    if let Some(d) = d {
        if row.len() != d {
            return Err(Error::parse(line_no, format!("expected {d} values, found {}", row.len())));
        }
    }
    Ok(row)
}

/// Rows of `d` comma-separated reals; `d` is fixed by the first row.
pub fn parse_vector_rows(text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, l) in content_lines(text) {
        let d = rows.first().map(Vec::len);
        rows.push(parse_vector_line(l, i, d)?);
    }
    let d = rows.first().map(Vec::len).ok_or_else(|| Error::parse(0, "no data rows"))?;
    Ok(DMatrix::from_fn(rows.len(), d, |r, c| rows[r][c]))
}

/// CSV with header `y,x,z1,...,zd`.
pub fn parse_regression_csv(text: &str) -> Result<RegressionData> {
    let mut lines = content_lines(text);
    let (hline, header) = lines.next().ok_or_else(|| Error::parse(0, "missing header"))?;
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    if names.len() < 2 || names[0] != "y" || names[1] != "x" {
        return Err(Error::parse(hline, "header must start with y,x"));
    }
    for (j, name) in names[2..].iter().enumerate() {
        if *name != format!("z{}", j + 1) {
            return Err(Error::parse(hline, format!("column {} should be z{}, found '{name}'", j + 3, j + 1)));
        }
    }
    let width = names.len();
    let mut rows = Vec::new();
    for (i, l) in lines {
        rows.push(parse_vector_line(l, i, Some(width))?);
    }
    let n = rows.len();
    let y = DVector::from_fn(n, |r, _| rows[r][0]);
    let x = DVector::from_fn(n, |r, _| rows[r][1]);
    let z = DMatrix::from_fn(n, width - 2, |r, c| rows[r][c + 2]);
    RegressionData::new(y, x, z)
}

/// A finite-group instance document.
pub fn parse_instance_json(text: &str) -> Result<FiniteInvariantPair> {
    let doc: InstanceDocument = serde_json::from_str(text).map_err(|e| Error::parse(e.line(), e.to_string()))?;
    doc.into_pair()
}
