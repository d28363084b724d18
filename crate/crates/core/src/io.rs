//! Text formats: matrices, claim reports and match results.
//!
//! Matrix files hold `rows cols` on the first line followed by one line per
//! row of space-separated values, printed in shortest round-trip form so a
//! write/read cycle is exact.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{ClaimReport, MatchResult};
use crate::scalar::Scalar;
use crate::tensor::DenseMatrix;

pub const CLAIM_HEADER: &str = "claim_id,instances,violations,worst_margin";
pub const MATCH_HEADER: &str = "a_column,w_column,sign,distance,frobenius_sq";

pub fn format_matrix<T: Scalar>(m: &DenseMatrix<T>) -> String {
    let mut out = String::with_capacity(16 + m.rows() * m.cols() * 24);
    let _ = writeln!(out, "{} {}", m.rows(), m.cols());
    for r in 0..m.rows() {
        for (c, v) in m.row(r).iter().enumerate() {
            if c > 0 {
                out.push(' ');
            }
            // Debug is the shortest representation that parses back exactly
            let _ = write!(out, "{v:?}");
        }
        out.push('\n');
    }
    out
}

pub fn parse_matrix<T: Scalar>(text: &str) -> Result<DenseMatrix<T>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (hl, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty matrix file".into(),
    })?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    let bad_header = || Error::Parse {
        line: hl + 1,
        message: format!("expected `rows cols`, found `{}`", header.trim()),
    };
    if dims.len() != 2 {
        return Err(bad_header());
    }
    let rows: usize = dims[0].parse().map_err(|_| bad_header())?;
    let cols: usize = dims[1].parse().map_err(|_| bad_header())?;
    let mut data = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    for (idx, line) in lines {
        let err = |message: String| Error::Parse { line: idx + 1, message };
        if seen == rows {
            return Err(err(format!("more than {rows} rows")));
        }
        let before = data.len();
        for tok in line.split_whitespace() {
            let v: T = tok.parse().map_err(|e| err(format!("`{tok}`: {e}")))?;
            if !v.is_finite() {
                return Err(err(format!("non-finite entry `{tok}`")));
            }
            data.push(v);
        }
        if data.len() - before != cols {
            return Err(err(format!("expected {cols} values, found {}", data.len() - before)));
        }
        seen += 1;
    }
    if seen != rows {
        return Err(Error::Parse {
            line: text.lines().count(),
            message: format!("expected {rows} rows, found {seen}"),
        });
    }
    DenseMatrix::from_vec(rows, cols, data)
}

pub fn write_matrix<T: Scalar>(path: impl AsRef<Path>, m: &DenseMatrix<T>) -> Result<()> {
    std::fs::write(path, format_matrix(m))?;
    Ok(())
}

pub fn read_matrix<T: Scalar>(path: impl AsRef<Path>) -> Result<DenseMatrix<T>> {
    parse_matrix(&std::fs::read_to_string(path)?)
}

pub fn claims_csv(reports: &[ClaimReport]) -> String {
    let mut out = String::from(CLAIM_HEADER);
    out.push('\n');
    for r in reports {
        let _ = writeln!(out, "{},{},{},{:.16e}", r.claim_id, r.instances, r.violations, r.worst_margin);
    }
    out
}

/// One row per column of `A`: the matched column of `W`, its sign and
/// distance; the total squared error is repeated on every row.
pub fn match_csv<T: Scalar>(mr: &MatchResult<T>) -> String {
    let mut out = String::from(MATCH_HEADER);
    out.push('\n');
    for (i, (&j, &s)) in mr.permutation.iter().zip(&mr.signs).enumerate() {
        let _ = writeln!(
            out,
            "{i},{j},{s},{:.16e},{:.16e}",
            mr.per_column_distance[i].as_f64(),
            mr.frobenius_sq.as_f64()
        );
    }
    out
}
