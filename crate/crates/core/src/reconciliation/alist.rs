//! Parity-check matrices in the alist text format:
//!
//! ```text
//! n m
//! max_column_weight max_row_weight
//! column weights (n numbers)
//! row weights (m numbers)
//! n lines: 1-based row indices of each column, zero padded
//! m lines: 1-based column indices of each row, zero padded
//! ```

use std::io::Write;

use super::code::CodeSpec;
use crate::error::{Error, Result};

pub fn write_alist<W: Write>(mut w: W, code: &CodeSpec) -> Result<()> {
    let max_col = code.cols.iter().map(Vec::len).max().unwrap_or(0);
    let max_row = code.rows.iter().map(Vec::len).max().unwrap_or(0);
    writeln!(w, "{} {}", code.n_bits, code.n_checks())?;
    writeln!(w, "{max_col} {max_row}")?;
    writeln!(w, "{}", join(code.cols.iter().map(Vec::len)))?;
    writeln!(w, "{}", join(code.rows.iter().map(Vec::len)))?;
    for col in &code.cols {
        writeln!(w, "{}", padded(col, max_col))?;
    }
    for row in &code.rows {
        writeln!(w, "{}", padded(row, max_row))?;
    }
    Ok(())
}

fn join(it: impl Iterator<Item = usize>) -> String {
    it.map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn padded(idx: &[u32], width: usize) -> String {
    join(
        idx.iter()
            .map(|&i| i as usize + 1)
            .chain(std::iter::repeat_n(0, width - idx.len())),
    )
}

/// Reads an alist matrix; the row lists are authoritative and the column
/// lists are checked against them.
pub fn read_alist(text: &str, seed: u64) -> Result<CodeSpec> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let mut next_numbers = |what: &str| -> Result<(usize, Vec<usize>)> {
        let (no, line) = lines
            .next()
            .ok_or_else(|| Error::Parse(format!("alist ended before {what}")))?;
        let nums = line
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse(format!("alist line {no}: {e}")))?;
        Ok((no, nums))
    };
    let (no, dims) = next_numbers("dimensions")?;
    let [n, m] = dims[..] else {
        return Err(Error::Parse(format!("alist line {no}: expected `n m`")));
    };
    next_numbers("maximum weights")?;
    let (_, col_w) = next_numbers("column weights")?;
    let (_, row_w) = next_numbers("row weights")?;
    if col_w.len() != n || row_w.len() != m {
        return Err(Error::Parse("alist weight lists have wrong length".into()));
    }
    let mut cols = Vec::with_capacity(n);
    for w in &col_w {
        let (no, idx) = next_numbers("column lists")?;
        cols.push(nonzero(no, &idx, *w, m)?);
    }
    let mut rows = Vec::with_capacity(m);
    for w in &row_w {
        let (no, idx) = next_numbers("row lists")?;
        rows.push(nonzero(no, &idx, *w, n)?);
    }
    let code = CodeSpec::from_rows(n, rows, None, seed)?;
    for (c, list) in cols.iter().enumerate() {
        let mut a = list.clone();
        a.sort_unstable();
        let mut b = code.cols[c].clone();
        b.sort_unstable();
        if a != b {
            return Err(Error::Parse(format!("alist column {} disagrees with the rows", c + 1)));
        }
    }
    Ok(code)
}

fn nonzero(line: usize, idx: &[usize], weight: usize, bound: usize) -> Result<Vec<u32>> {
    let out: Vec<u32> = idx.iter().filter(|&&i| i != 0).map(|&i| (i - 1) as u32).collect();
    if out.len() != weight || idx.iter().any(|&i| i > bound) {
        return Err(Error::Parse(format!("alist line {line}: bad index list")));
    }
    Ok(out)
}
