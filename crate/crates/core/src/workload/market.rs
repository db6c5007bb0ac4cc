//! Matrix Market coordinate-format reader and writer.
//!
//! Supported header: `%%MatrixMarket matrix coordinate real|integer
//! general|symmetric`. Indices are 1-based on disk and 0-based in memory.
//! Symmetric files store one triangle; reading expands off-diagonal entries
//! to both (i,j) and (j,i) without duplicating the diagonal. Every parse
//! error carries the file path and line number.

use crate::sparse::{CooTriples, CsrMatrix};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MarketError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Malformed {
        path: String,
        line: usize,
        msg: String,
    },
}

#[derive(PartialEq, Clone, Copy)]
enum Field {
    Real,
    Integer,
}

#[derive(PartialEq, Clone, Copy)]
enum Symmetry {
    General,
    Symmetric,
}

pub fn read_matrix_market(path: impl AsRef<Path>) -> Result<CooTriples, MarketError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let file = File::open(path).map_err(|source| MarketError::Io {
        path: shown.clone(),
        source,
    })?;
    read_from(BufReader::new(file), &shown)
}

fn malformed(path: &str, line: usize, msg: impl Into<String>) -> MarketError {
    MarketError::Malformed {
        path: path.to_string(),
        line,
        msg: msg.into(),
    }
}

fn read_from(reader: impl BufRead, path: &str) -> Result<CooTriples, MarketError> {
    let mut lines = reader.lines().enumerate();

    // header line
    let (_, header) = lines
        .next()
        .ok_or_else(|| malformed(path, 1, "empty file: missing header"))?;
    let header = header.map_err(|source| MarketError::Io {
        path: path.to_string(),
        source,
    })?;
    let tokens: Vec<String> = header.split_whitespace().map(str::to_lowercase).collect();
    if tokens.first().map(String::as_str) != Some("%%matrixmarket") {
        return Err(malformed(path, 1, "header must start with %%MatrixMarket"));
    }
    if tokens.len() != 5 {
        return Err(malformed(
            path,
            1,
            format!("header needs 5 tokens, found {}", tokens.len()),
        ));
    }
    if tokens[1] != "matrix" || tokens[2] != "coordinate" {
        return Err(malformed(
            path,
            1,
            format!(
                "unsupported object/format '{} {}': only 'matrix coordinate' is handled",
                tokens[1], tokens[2]
            ),
        ));
    }
    let field = match tokens[3].as_str() {
        "real" => Field::Real,
        "integer" => Field::Integer,
        other => {
            return Err(malformed(
                path,
                1,
                format!("unsupported field type '{other}': only real and integer are handled"),
            ));
        }
    };
    let symmetry = match tokens[4].as_str() {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        other => {
            return Err(malformed(
                path,
                1,
                format!("unsupported symmetry '{other}': only general and symmetric are handled"),
            ));
        }
    };
    let _ = field; // integer values are promoted to reals below

    // size line: first non-comment, non-blank line after the header
    let mut size: Option<(usize, usize, usize, usize)> = None;
    let mut t = CooTriples::new(0, 0);
    let mut entries_seen = 0usize;
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.map_err(|source| MarketError::Io {
            path: path.to_string(),
            source,
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('%') {
            continue;
        }
        match size {
            None => {
                let parts: Vec<&str> = trimmed.split_whitespace().collect();
                if parts.len() != 3 {
                    return Err(malformed(
                        path,
                        line_no,
                        format!(
                            "size line needs 'rows cols nnz', found {} fields",
                            parts.len()
                        ),
                    ));
                }
                let parse = |s: &str, what: &str| {
                    s.parse::<usize>()
                        .map_err(|_| malformed(path, line_no, format!("cannot parse {what} '{s}'")))
                };
                let rows = parse(parts[0], "row count")?;
                let cols = parse(parts[1], "column count")?;
                let nnz = parse(parts[2], "nonzero count")?;
                t = CooTriples::new(rows, cols);
                size = Some((rows, cols, nnz, line_no));
            }
            Some((rows, cols, nnz, _)) => {
                if entries_seen == nnz {
                    return Err(malformed(
                        path,
                        line_no,
                        format!("more entries than the declared {nnz}"),
                    ));
                }
                let parts: Vec<&str> = trimmed.split_whitespace().collect();
                if parts.len() != 3 {
                    return Err(malformed(
                        path,
                        line_no,
                        format!("entry needs 'row col value', found {} fields", parts.len()),
                    ));
                }
                let row: usize = parts[0].parse().map_err(|_| {
                    malformed(
                        path,
                        line_no,
                        format!("cannot parse row index '{}'", parts[0]),
                    )
                })?;
                let col: usize = parts[1].parse().map_err(|_| {
                    malformed(
                        path,
                        line_no,
                        format!("cannot parse column index '{}'", parts[1]),
                    )
                })?;
                let val: f64 = parts[2].parse().map_err(|_| {
                    malformed(path, line_no, format!("cannot parse value '{}'", parts[2]))
                })?;
                if row == 0 || row > rows || col == 0 || col > cols {
                    return Err(malformed(
                        path,
                        line_no,
                        format!("entry ({row}, {col}) outside declared {rows}x{cols} bounds (indices are 1-based)"),
                    ));
                }
                let (r, c) = (row - 1, col - 1);
                t.push(r, c, val);
                if symmetry == Symmetry::Symmetric && r != c {
                    t.push(c, r, val);
                }
                entries_seen += 1;
            }
        }
    }
    let (_, _, nnz, size_line) =
        size.ok_or_else(|| malformed(path, 1, "missing size line after header"))?;
    if entries_seen != nnz {
        return Err(malformed(
            path,
            size_line,
            format!("declared {nnz} entries but the file holds {entries_seen}"),
        ));
    }
    Ok(t)
}

/// Writes a canonical matrix as `matrix coordinate real general`, 1-based,
/// row-major order. Values print in the shortest form that parses back to
/// the identical bits, so a write/read round trip is exact.
pub fn write_matrix_market(path: impl AsRef<Path>, a: &CsrMatrix) -> Result<(), MarketError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let io_err = |source| MarketError::Io {
        path: shown.clone(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    let mut body = || -> std::io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", a.n_rows, a.n_cols, a.n_nz())?;
        for i in 0..a.n_rows {
            let (cols, vals) = a.row(i);
            for (c, v) in cols.iter().zip(vals) {
                writeln!(w, "{} {} {}", i + 1, *c as usize + 1, v)?;
            }
        }
        w.flush()
    };
    body().map_err(|source| MarketError::Io {
        path: shown.clone(),
        source,
    })
}
