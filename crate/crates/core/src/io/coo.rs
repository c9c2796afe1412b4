//! Coordinate-format text for sparse matrices:
//! a line `nrows ncols nnz`, then `nnz` lines `i j value` (0-based).
//! Lines starting with `%` or `#` are comments.

use crate::linalg::CsrMatrix;
use crate::{Error, Result};
use std::fmt::Write;

pub fn write_coo(m: &CsrMatrix) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{} {} {}", m.nrows(), m.ncols(), m.nnz());
    for (i, j, v) in m.triplets() {
        // `{:e}` prints the shortest round-tripping form.
        let _ = writeln!(s, "{i} {j} {v:e}");
    }
    s
}

pub fn parse_coo(text: &str) -> Result<CsrMatrix> {
    let mut offset = 0;
    let mut header: Option<(usize, usize, usize)> = None;
    let mut entries = Vec::new();
    for line in text.split_inclusive('\n') {
        let at = offset;
        offset += line.len();
        let body = line.trim();
        if body.is_empty() || body.starts_with('%') || body.starts_with('#') {
            continue;
        }
        let words: Vec<&str> = body.split_whitespace().collect();
        if words.len() != 3 {
            return Err(Error::parse(at, "expected three fields"));
        }
        match header {
            None => {
                let p = |w: &str| w.parse::<usize>().map_err(|_| Error::parse(at, "bad header integer"));
                let (r, c, n) = (p(words[0])?, p(words[1])?, p(words[2])?);
                if n > r.saturating_mul(c) || n > text.len() {
                    return Err(Error::parse(at, "entry count exceeds the matrix or the input"));
                }
                entries.reserve(n);
                header = Some((r, c, n));
            }
            Some((r, c, n)) => {
                if entries.len() == n {
                    return Err(Error::parse(at, "more entries than declared"));
                }
                let i = words[0].parse::<usize>().map_err(|_| Error::parse(at, "bad row index"))?;
                let j = words[1].parse::<usize>().map_err(|_| Error::parse(at, "bad column index"))?;
                let v = words[2].parse::<f64>().map_err(|_| Error::parse(at, "bad value"))?;
                if i >= r || j >= c {
                    return Err(Error::parse(at, "index out of range"));
                }
                if !v.is_finite() {
                    return Err(Error::parse(at, "non-finite value"));
                }
                entries.push((i, j, v));
            }
        }
    }
    let (r, c, n) = header.ok_or_else(|| Error::parse(offset, "missing header"))?;
    if entries.len() != n {
        return Err(Error::parse(offset, format!("expected {n} entries, found {}", entries.len())));
    }
    Ok(CsrMatrix::from_triplets(r, c, &entries))
}
