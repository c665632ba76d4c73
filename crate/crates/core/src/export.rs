//! Text exports: explicit transition lists (`.tra` / `.lab`), dense CSV
//! matrices with a metadata header, and CSV tables.
//!
//! Floating point values are written with `{}` formatting, which prints the
//! shortest decimal that parses back to the same `f64`.

use std::io::{BufRead, BufReader, Read, Write};
use std::sync::Arc;

use crate::abstraction::{ChainKind, FiniteAbstraction};
use crate::error::{Error, Result};
use crate::geometry::Partition;
use crate::projection::DensityApprox;

/// Entries below this value are omitted from `.tra` files.
pub const DEFAULT_TRA_THRESHOLD: f64 = 1e-12;

/// Ordered `key=value` metadata written as `# key=value` lines.
pub type Header = Vec<(String, String)>;

fn write_header<W: Write>(w: &mut W, header: &[(String, String)]) -> Result<()> {
    for (k, v) in header {
        if k.contains('=') || k.contains('\n') || v.contains('\n') {
            return Err(Error::invalid(format!(
                "header entry {k:?} cannot be written on one line"
            )));
        }
        writeln!(w, "# {k}={v}")?;
    }
    Ok(())
}

/// Number of `.tra` lines for a dense `size × size` matrix.
pub fn count_transitions(matrix: &[f64], threshold: f64) -> usize {
    matrix.iter().filter(|&&p| p > 0.0 && p >= threshold).count()
}

/// Writes `"<states> <transitions>"` followed by one `"i j p"` line per entry
/// `p >= threshold` (and `p > 0`), with 1-based states in row-major order.
pub fn write_tra<W: Write>(w: &mut W, matrix: &[f64], size: usize, threshold: f64) -> Result<()> {
    if matrix.len() != size * size {
        return Err(Error::DimensionMismatch {
            expected: size * size,
            got: matrix.len(),
        });
    }
    writeln!(w, "{} {}", size, count_transitions(matrix, threshold))?;
    for i in 0..size {
        for j in 0..size {
            let p = matrix[i * size + j];
            if p > 0.0 && p >= threshold {
                writeln!(w, "{} {} {}", i + 1, j + 1, p)?;
            }
        }
    }
    Ok(())
}

/// Labelling with a single `sink` proposition on the last state.
pub fn write_lab<W: Write>(w: &mut W, size: usize) -> Result<()> {
    writeln!(w, "#DECLARATION")?;
    writeln!(w, "sink")?;
    writeln!(w, "#END")?;
    writeln!(w, "{size} sink")?;
    Ok(())
}

/// A transition matrix read back from CSV, with its metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainFile {
    pub header: Header,
    pub size: usize,
    pub matrix: Vec<f64>,
}

impl ChainFile {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.header.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Rebuilds the chain, using the partition and kind stored in the header.
    pub fn to_abstraction(&self) -> Result<FiniteAbstraction> {
        let dim: usize = self.parse("dim")?;
        let breaks = (0..dim)
            .map(|k| {
                let raw = self
                    .get(&format!("breakpoints_{k}"))
                    .ok_or_else(|| Error::Parse(format!("missing breakpoints_{k}")))?;
                raw.split(' ')
                    .map(|v| {
                        v.parse::<f64>()
                            .map_err(|e| Error::Parse(format!("breakpoints_{k}: {e}")))
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let partition = Arc::new(Partition::from_breakpoints(breaks)?);
        let kind = match self.get("kind") {
            Some("averaged") => ChainKind::Averaged,
            Some("representative") => ChainKind::Representative,
            other => return Err(Error::Parse(format!("unknown chain kind {other:?}"))),
        };
        let quad_tol: f64 = self.parse("quad_tol")?;
        let dropped: f64 = self.parse("dropped_row_mass")?;
        FiniteAbstraction::from_parts(partition, self.matrix.clone(), kind, quad_tol, dropped)
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self
            .get(key)
            .ok_or_else(|| Error::Parse(format!("missing header key {key}")))?;
        raw.parse().map_err(|e| Error::Parse(format!("{key}: {e}")))
    }
}

/// Header entries describing the chain itself.
pub fn chain_header(chain: &FiniteAbstraction) -> Header {
    let p = chain.partition();
    let mut h: Header = vec![
        ("states".into(), chain.size().to_string()),
        ("sink".into(), chain.size().to_string()),
        (
            "kind".into(),
            match chain.kind() {
                ChainKind::Averaged => "averaged",
                ChainKind::Representative => "representative",
            }
            .into(),
        ),
        ("quad_tol".into(), chain.quad_tol().to_string()),
        ("dropped_row_mass".into(), chain.dropped_row_mass().to_string()),
        ("dim".into(), p.dim().to_string()),
    ];
    for (k, b) in p.breakpoints().iter().enumerate() {
        let joined: Vec<String> = b.iter().map(|v| v.to_string()).collect();
        h.push((format!("breakpoints_{k}"), joined.join(" ")));
    }
    h
}

/// Dense CSV of the chain: `extra` metadata, then [`chain_header`], then one
/// row per state.
pub fn write_chain_csv<W: Write>(w: &mut W, chain: &FiniteAbstraction, extra: &[(String, String)]) -> Result<()> {
    write_header(w, extra)?;
    write_header(w, &chain_header(chain))?;
    let n = chain.size();
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for i in 0..n {
        out.write_record(chain.row(i).iter().map(|v| v.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a file produced by [`write_chain_csv`].
pub fn read_chain_csv<R: Read>(r: R) -> Result<ChainFile> {
    let mut header = Header::new();
    let mut body = String::new();
    for line in BufReader::new(r).lines() {
        let line = line?;
        if let Some(meta) = line.strip_prefix('#') {
            let meta = meta.trim_start();
            if let Some((k, v)) = meta.split_once('=') {
                header.push((k.to_string(), v.to_string()));
            }
        } else if !line.trim().is_empty() {
            body.push_str(&line);
            body.push('\n');
        }
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(body.as_bytes());
    let mut matrix = Vec::new();
    let mut size = None;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        match size {
            None => size = Some(rec.len()),
            Some(s) if s != rec.len() => {
                return Err(Error::Parse(format!("row {i} has {} entries, expected {s}", rec.len())));
            }
            _ => {}
        }
        for v in rec.iter() {
            matrix.push(
                v.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("row {i}: {e}")))?,
            );
        }
    }
    let size = size.ok_or_else(|| Error::Parse("empty matrix".into()))?;
    if matrix.len() != size * size {
        return Err(Error::Parse(format!(
            "matrix is not square: {} entries for width {size}",
            matrix.len()
        )));
    }
    Ok(ChainFile { header, size, matrix })
}

/// CSV table with `#` metadata, a column-name row, and numeric rows.
pub fn write_table<W: Write>(
    w: &mut W,
    header: &[(String, String)],
    columns: &[&str],
    rows: &[Vec<f64>],
) -> Result<()> {
    write_header(w, header)?;
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(columns)?;
    for (i, row) in rows.iter().enumerate() {
        if row.len() != columns.len() {
            return Err(Error::invalid(format!(
                "table row {i} has {} values for {} columns",
                row.len(),
                columns.len()
            )));
        }
        out.write_record(row.iter().map(|v| v.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

/// Per-cell basis coefficients `(cell, basis, t, value)` of a sequence of
/// approximations.
pub fn write_coefficients<W: Write>(w: &mut W, header: &[(String, String)], approxs: &[DensityApprox]) -> Result<()> {
    let mut rows = Vec::new();
    for approx in approxs {
        for i in 0..approx.partition().len() {
            for (j, c) in approx.cell_coefficients(i).into_iter().enumerate() {
                rows.push(vec![i as f64, j as f64, approx.t() as f64, c]);
            }
        }
    }
    write_table(w, header, &["cell", "basis", "t", "value"], &rows)
}
