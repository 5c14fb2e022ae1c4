//! Headerless numeric CSV for matrices, and the small tabular outputs.

use std::fmt::Write as _;
use std::path::Path;

use rankcore_core::sps::SpsRecord;
use rankcore_core::training::TrainTrace;
use rankcore_core::Matrix;

use crate::error::{Error, Result};
use crate::fsutil::{read_to_string, write_atomic};

/// Rows of comma-separated values using the shortest representation that
/// parses back to the same `f64`.
pub fn matrix_to_csv(m: &Matrix) -> String {
    let mut s = String::with_capacity(m.rows() * m.cols() * 20);
    for row in m.row_iter() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                s.push(',');
            }
            write!(s, "{v}").expect("writing to a String");
        }
        s.push('\n');
    }
    s
}

pub fn parse_matrix_csv(path: &Path, text: &str) -> Result<Matrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .enumerate()
            .map(|(c, cell)| {
                cell.trim().parse::<f64>().map_err(|e| Error::Parse {
                    path: path.into(),
                    row: r + 1,
                    col: c + 1,
                    msg: format!("`{}`: {e}", cell.trim()),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Parse {
                    path: path.into(),
                    row: r + 1,
                    col: row.len().min(first.len()) + 1,
                    msg: format!("expected {} columns, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    Matrix::from_rows(&rows).ok_or_else(|| Error::format(path, "empty matrix file"))
}

pub fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    write_atomic(path, matrix_to_csv(m).as_bytes())
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    parse_matrix_csv(path, &read_to_string(path)?)
}

/// 12 significant digits in scientific notation.
pub fn sig12(v: f64) -> String {
    format!("{v:.11e}")
}

/// Quotes a field containing a comma or quote; line breaks are rejected.
fn quote_field(id: &str) -> Option<String> {
    if id.contains(['\n', '\r']) {
        None
    } else if id.contains([',', '"']) {
        Some(format!("\"{}\"", id.replace('"', "\"\"")))
    } else {
        Some(id.to_string())
    }
}

/// Splits off a leading, possibly quoted field; returns it and the rest of
/// the line after the separating comma.
fn split_first_field(line: &str) -> Option<(String, &str)> {
    let Some(body) = line.strip_prefix('"') else {
        let (f, rest) = line.split_once(',')?;
        return Some((f.to_string(), rest));
    };
    let mut out = String::new();
    let mut chars = body.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if c != '"' {
            out.push(c);
        } else if chars.peek().map(|&(_, n)| n) == Some('"') {
            out.push('"');
            chars.next();
        } else {
            return body[i + 1..].strip_prefix(',').map(|rest| (out, rest));
        }
    }
    None
}

pub fn sps_to_csv(sps: &SpsRecord) -> Option<String> {
    let mut s = String::from("sample_id,sps,epochs\n");
    for (id, score) in &sps.scores {
        writeln!(s, "{},{},{}", quote_field(id)?, sig12(*score), sps.epochs).expect("writing to a String");
    }
    Some(s)
}

pub fn write_sps(path: &Path, sps: &SpsRecord) -> Result<()> {
    let text = sps_to_csv(sps).ok_or_else(|| Error::format(path, "sample ids must not contain line breaks"))?;
    write_atomic(path, text.as_bytes())
}

pub fn read_sps(path: &Path) -> Result<SpsRecord> {
    let text = read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "sample_id,sps,epochs" => {}
        _ => return Err(Error::format(path, "expected header `sample_id,sps,epochs`")),
    }
    let mut scores = std::collections::BTreeMap::new();
    let mut epochs = None;
    for (r, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |col: usize, msg: String| Error::Parse { path: path.into(), row: r + 1, col, msg };
        let (id, rest) = split_first_field(line).ok_or_else(|| bad(1, "malformed sample id".into()))?;
        let mut cells: Vec<&str> = vec![""];
        cells.extend(rest.split(','));
        if cells.len() != 3 {
            return Err(bad(cells.len().min(3), "expected 3 columns".into()));
        }
        let score: f64 = cells[1].trim().parse().map_err(|e| bad(2, format!("{e}")))?;
        let ep: usize = cells[2].trim().parse().map_err(|e| bad(3, format!("{e}")))?;
        if *epochs.get_or_insert(ep) != ep {
            return Err(bad(3, "epoch count differs between rows".into()));
        }
        if scores.insert(id.clone(), score).is_some() {
            return Err(bad(1, format!("duplicate sample `{id}`")));
        }
    }
    Ok(SpsRecord { scores, epochs: epochs.unwrap_or(0) })
}

pub fn trace_to_csv(trace: &TrainTrace) -> String {
    let mut s = String::from("epoch,loss,mean_perturbation\n");
    for row in &trace.rows {
        let pert = row.mean_perturbation.map(sig12).unwrap_or_default();
        writeln!(s, "{},{},{pert}", row.epoch, sig12(row.loss)).expect("writing to a String");
    }
    s
}
