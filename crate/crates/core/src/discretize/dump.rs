//! Plain-text matrix dumps.
//!
//! ```text
//! N method shift
//! U[0][0] ... U[0][N-1]
//! ...
//! U[N-1][0] ... U[N-1][N-1]
//! w_diag[0] ... w_diag[N-1]
//! r[0] ... r[N-1]
//! ```

use std::fmt::Write as _;

use thiserror::Error;

use super::{DiscreteOperator, MethodKind};
use crate::matrix::DenseMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DumpError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("expected {expected} lines, found {found}")]
    LineCount { expected: usize, found: usize },
}

fn syntax(line: usize, message: impl Into<String>) -> DumpError {
    DumpError::Syntax {
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixDump {
    pub method: MethodKind,
    pub shift: f64,
    pub u: DenseMatrix,
    pub w_diag: Vec<f64>,
    pub r_samples: Vec<f64>,
}

impl MatrixDump {
    pub fn n(&self) -> usize {
        self.w_diag.len()
    }

    pub fn from_operator(op: &DiscreteOperator) -> Self {
        Self {
            method: op.method().kind(),
            shift: op.shift(),
            u: op.u_matrix().clone(),
            w_diag: op.w_diag().to_vec(),
            r_samples: op.r_samples().to_vec(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {} {:e}", self.n(), self.method, self.shift);
        let mut row = |values: &[f64]| {
            let line: Vec<String> = values.iter().map(|v| format!("{v:e}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        };
        for r in self.u.rows() {
            row(r);
        }
        row(&self.w_diag);
        row(&self.r_samples);
        out
    }
}

pub fn write_matrix_dump(op: &DiscreteOperator) -> String {
    MatrixDump::from_operator(op).to_text()
}

fn parse_row(line: &str, lineno: usize, n: usize) -> Result<Vec<f64>, DumpError> {
    let values: Vec<f64> = line
        .split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| syntax(lineno, format!("invalid number '{tok}'")))
        })
        .collect::<Result<_, _>>()?;
    if values.len() != n {
        return Err(syntax(lineno, format!("expected {n} entries, found {}", values.len())));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(syntax(lineno, format!("non-finite entry {bad}")));
    }
    Ok(values)
}

/// Parses a dump produced by [`write_matrix_dump`]. Trailing blank lines are
/// ignored; every other deviation is an error with a 1-based line number.
pub fn parse_matrix_dump(text: &str) -> Result<MatrixDump, DumpError> {
    let mut lines: Vec<&str> = text.lines().collect();
    while lines.last().is_some_and(|l| l.trim().is_empty()) {
        lines.pop();
    }
    let header = lines.first().ok_or_else(|| syntax(1, "missing header"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 3 {
        return Err(syntax(1, "header must be 'N method shift'"));
    }
    let n: usize = fields[0]
        .parse()
        .map_err(|_| syntax(1, format!("invalid size '{}'", fields[0])))?;
    if n == 0 {
        return Err(syntax(1, "size must be positive"));
    }
    let method: MethodKind = fields[1].parse().map_err(|e: String| syntax(1, e))?;
    let shift: f64 = fields[2]
        .parse()
        .map_err(|_| syntax(1, format!("invalid shift '{}'", fields[2])))?;
    if !shift.is_finite() {
        return Err(syntax(1, "shift must be finite"));
    }
    // Checked before allocating anything of size n².
    let expected = n.checked_add(3).ok_or_else(|| syntax(1, "size overflows"))?;
    if lines.len() != expected {
        return Err(DumpError::LineCount {
            expected,
            found: lines.len(),
        });
    }
    let mut data = Vec::with_capacity(n * n);
    for (i, line) in lines[1..=n].iter().enumerate() {
        let row = parse_row(line, i + 2, n)?;
        if let Some(v) = row.iter().find(|v| **v < 0.0) {
            return Err(syntax(i + 2, format!("negative entry {v}")));
        }
        data.extend(row);
    }
    let w_diag = parse_row(lines[n + 1], n + 2, n)?;
    let r_samples = parse_row(lines[n + 2], n + 3, n)?;
    let u = DenseMatrix::from_row_major(n, data).expect("row count checked");
    Ok(MatrixDump {
        method,
        shift,
        u,
        w_diag,
        r_samples,
    })
}
