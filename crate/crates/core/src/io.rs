//! CSV tables, JSON files and binary field snapshots.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{SpectralGrid, SpectralScalarField, SpectralVectorField};

pub const CSV_SCHEMA: u32 = 1;

/// Numeric table written as CSV with a `# schema=1` header line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CsvTable {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn new(name: impl Into<String>, columns: &[&str]) -> Self {
        Self { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::LengthMismatch { expected: self.columns.len(), got: row.len() });
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# schema={CSV_SCHEMA}")?;
        writeln!(w, "{}", self.columns.join(","))?;
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }

    /// Writes `<dir>/<name>.csv`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let file = fs::File::create(dir.join(format!("{}.csv", self.name)))?;
        let mut w = BufWriter::new(file);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

/// Splits a CSV line, honouring double-quoted fields.
pub fn split_csv_line(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(ch) = chars.next() {
        match ch {
            '"' if quoted && chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            '"' => quoted = !quoted,
            ',' if !quoted => out.push(std::mem::take(&mut cur)),
            _ => cur.push(ch),
        }
    }
    out.push(cur);
    out
}

/// Quotes a CSV field when it contains a delimiter or quote.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SnapshotKind {
    Scalar,
    Vector,
}

/// JSON sidecar describing a `.bin` snapshot of Fourier coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotHeader {
    pub kind: SnapshotKind,
    pub d: usize,
    pub n: usize,
    pub k_max: u32,
    pub components: usize,
    /// Always `complex128-le`: real and imaginary parts as little-endian f64.
    pub dtype: String,
    pub t: f64,
}

fn write_snapshot(path: &Path, header: &SnapshotHeader, comps: &[&[Complex64]]) -> Result<()> {
    let mut bytes = Vec::with_capacity(comps.iter().map(|c| c.len() * 16).sum());
    for comp in comps {
        for z in comp.iter() {
            bytes.extend_from_slice(&z.re.to_le_bytes());
            bytes.extend_from_slice(&z.im.to_le_bytes());
        }
    }
    fs::write(path.with_extension("bin"), bytes)?;
    write_json(&path.with_extension("json"), header)
}

fn read_snapshot(path: &Path) -> Result<(SnapshotHeader, Vec<Vec<Complex64>>)> {
    let header: SnapshotHeader = serde_json::from_str(&fs::read_to_string(path.with_extension("json"))?)?;
    if header.dtype != "complex128-le" {
        return Err(Error::InvalidInput(format!("unsupported dtype {}", header.dtype)));
    }
    let bytes = fs::read(path.with_extension("bin"))?;
    let len = header.n.pow(header.d as u32);
    let expected = len * header.components * 16;
    if bytes.len() != expected {
        return Err(Error::LengthMismatch { expected, got: bytes.len() });
    }
    let f = |i: usize| f64::from_le_bytes(bytes[i..i + 8].try_into().expect("eight bytes"));
    let comps = (0..header.components)
        .map(|c| {
            (0..len)
                .map(|j| {
                    let o = (c * len + j) * 16;
                    Complex64::new(f(o), f(o + 8))
                })
                .collect()
        })
        .collect();
    Ok((header, comps))
}

/// Writes `<path>.bin` and `<path>.json`.
pub fn save_scalar(path: &Path, field: &SpectralScalarField, t: f64) -> Result<()> {
    let g = field.grid();
    let header = SnapshotHeader {
        kind: SnapshotKind::Scalar,
        d: g.dim(),
        n: g.size(),
        k_max: g.k_max(),
        components: 1,
        dtype: "complex128-le".into(),
        t,
    };
    write_snapshot(path, &header, &[field.coeffs()])
}

pub fn save_vector(path: &Path, field: &SpectralVectorField, t: f64) -> Result<()> {
    let g = field.grid();
    let header = SnapshotHeader {
        kind: SnapshotKind::Vector,
        d: 3,
        n: g.size(),
        k_max: g.k_max(),
        components: 3,
        dtype: "complex128-le".into(),
        t,
    };
    write_snapshot(path, &header, &[field.component(0), field.component(1), field.component(2)])
}

pub fn load_scalar(path: &Path) -> Result<(SpectralScalarField, f64)> {
    let (h, mut comps) = read_snapshot(path)?;
    if h.kind != SnapshotKind::Scalar || comps.len() != 1 {
        return Err(Error::InvalidInput("snapshot is not a scalar field".into()));
    }
    let grid = SpectralGrid::with_size(h.d, h.k_max, h.n)?;
    Ok((SpectralScalarField::from_coeffs(&grid, comps.remove(0))?, h.t))
}

pub fn load_vector(path: &Path) -> Result<(SpectralVectorField, f64)> {
    let (h, comps) = read_snapshot(path)?;
    if h.kind != SnapshotKind::Vector || comps.len() != 3 {
        return Err(Error::InvalidInput("snapshot is not a vector field".into()));
    }
    let grid = SpectralGrid::with_size(3, h.k_max, h.n)?;
    let [a, b, c]: [Vec<Complex64>; 3] = comps.try_into().expect("three components");
    Ok((SpectralVectorField::from_components(&grid, [a, b, c])?, h.t))
}
