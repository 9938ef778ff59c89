//! Plain-text matrix files used for checkpoints.
//!
//! Two layouts share one number format (9 significant digits, single-space
//! separated):
//! - square: a header line `d` followed by `d` rows of `d` values;
//! - sectioned: repeated blocks of `<name> <rows> <cols>` followed by the rows.

use std::io::{BufRead, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::linalg::fmt_sig;

pub const CHECKPOINT_DIGITS: usize = 9;

fn write_rows<W: Write>(out: &mut W, m: ArrayView2<f64>) -> std::io::Result<()> {
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| fmt_sig(*v, CHECKPOINT_DIGITS)).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

pub fn write_square<W: Write>(mut out: W, m: ArrayView2<f64>) -> std::io::Result<()> {
    writeln!(out, "{}", m.nrows())?;
    write_rows(&mut out, m)?;
    out.flush()
}

pub fn write_section<W: Write>(out: &mut W, name: &str, m: ArrayView2<f64>) -> std::io::Result<()> {
    writeln!(out, "{} {} {}", name, m.nrows(), m.ncols())?;
    write_rows(out, m)
}

struct Lines<'a, R> {
    inner: std::io::Lines<R>,
    line: usize,
    path: &'a Path,
}

impl<R: BufRead> Lines<'_, R> {
    fn next_nonempty(&mut self) -> Result<Option<String>> {
        for l in self.inner.by_ref() {
            self.line += 1;
            let l = l.map_err(|e| Error::io(self.path, e))?;
            if !l.trim().is_empty() {
                return Ok(Some(l));
            }
        }
        Ok(None)
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::parse(self.path, self.line, msg)
    }

    fn read_matrix(&mut self, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let line = self
                .next_nonempty()?
                .ok_or_else(|| self.err("unexpected end of file"))?;
            let before = data.len();
            for f in line.split_ascii_whitespace() {
                let v: f64 = f.parse().map_err(|_| self.err(format!("bad number {f:?}")))?;
                if !v.is_finite() {
                    return Err(self.err(format!("non-finite value {f:?}")));
                }
                data.push(v);
            }
            if data.len() - before != cols {
                return Err(self.err(format!(
                    "expected {cols} values, found {}",
                    data.len() - before
                )));
            }
        }
        Ok(Array2::from_shape_vec((rows, cols), data).unwrap())
    }
}

pub fn read_square<R: BufRead>(reader: R, path: &Path) -> Result<Array2<f64>> {
    let mut lines = Lines {
        inner: reader.lines(),
        line: 0,
        path,
    };
    let header = lines
        .next_nonempty()?
        .ok_or_else(|| lines.err("empty matrix file"))?;
    let d: usize = header
        .trim()
        .parse()
        .ok()
        .filter(|&d| d > 0)
        .ok_or_else(|| lines.err(format!("malformed header {header:?}")))?;
    let m = lines.read_matrix(d, d)?;
    if lines.next_nonempty()?.is_some() {
        return Err(lines.err("trailing data after matrix"));
    }
    Ok(m)
}

pub fn read_sections<R: BufRead>(reader: R, path: &Path) -> Result<Vec<(String, Array2<f64>)>> {
    let mut lines = Lines {
        inner: reader.lines(),
        line: 0,
        path,
    };
    let mut out = Vec::new();
    while let Some(header) = lines.next_nonempty()? {
        let f: Vec<&str> = header.split_ascii_whitespace().collect();
        let dims = match f.as_slice() {
            [name, r, c] => r
                .parse::<usize>()
                .ok()
                .zip(c.parse::<usize>().ok())
                .map(|(r, c)| (name.to_string(), r, c)),
            _ => None,
        };
        let (name, r, c) =
            dims.ok_or_else(|| lines.err(format!("malformed section header {header:?}")))?;
        let m = lines.read_matrix(r, c)?;
        out.push((name, m));
    }
    Ok(out)
}
