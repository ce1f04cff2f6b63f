//! CSV and manifest serialization.
//!
//! CSVs are comma-separated with a header row, LF line endings, and floats
//! printed with 17 significant digits so they round-trip exactly. The
//! manifest is a line-oriented text file carrying everything needed to
//! reproduce the run bit for bit (except wall-clock duration).

use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// One cell of an output table.
#[derive(Debug, Clone)]
pub enum Cell {
    Int(i64),
    UInt(u64),
    Float(f64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}
impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::UInt(v as u64)
    }
}
impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::UInt(v)
    }
}
impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}
impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

/// 17 significant digits: round-trips every finite f64.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// A named CSV table ready to be written.
#[derive(Debug, Clone)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Table {
            name: name.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.header.join(","));
        out.push('\n');
        for row in &self.rows {
            let mut first = true;
            for cell in row {
                if !first {
                    out.push(',');
                }
                first = false;
                match cell {
                    Cell::Int(v) => {
                        let _ = write!(out, "{v}");
                    }
                    Cell::UInt(v) => {
                        let _ = write!(out, "{v}");
                    }
                    Cell::Float(v) => out.push_str(&format_float(*v)),
                    Cell::Text(v) => out.push_str(v),
                }
            }
            out.push('\n');
        }
        out
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// Everything recorded about a completed run.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub version: String,
    pub experiment: String,
    pub seed: u64,
    pub config_echo: String,
    pub config_checksum: String,
    pub duration_s: f64,
    pub pass: bool,
    /// (file name, sha256 of contents)
    pub outputs: Vec<(String, String)>,
}

impl RunManifest {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "version = {}", self.version);
        let _ = writeln!(out, "experiment = {}", self.experiment);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "config_checksum = sha256:{}", self.config_checksum);
        let _ = writeln!(out, "duration_s = {:.3}", self.duration_s);
        let _ = writeln!(out, "pass = {}", self.pass);
        let _ = writeln!(out, "[config]");
        out.push_str(&self.config_echo);
        let _ = writeln!(out, "[outputs]");
        for (name, checksum) in &self.outputs {
            let _ = writeln!(out, "{name} = sha256:{checksum}");
        }
        out
    }
}

/// Write tables and manifest into `out_dir`, returning the manifest with
/// checksums filled in. Any I/O failure removes files already written this
/// run so no partial output set remains.
pub fn write_outputs(
    tables: &[Table],
    manifest: &mut RunManifest,
    out_dir: &Path,
) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let mut write_all = || -> std::io::Result<()> {
        for table in tables {
            let csv = table.to_csv();
            let path = out_dir.join(&table.name);
            std::fs::write(&path, csv.as_bytes())?;
            written.push(path);
            manifest
                .outputs
                .push((table.name.clone(), sha256_hex(csv.as_bytes())));
        }
        let path = out_dir.join("manifest.txt");
        std::fs::write(&path, manifest.render().as_bytes())?;
        written.push(path);
        Ok(())
    };
    match write_all() {
        Ok(()) => Ok(written),
        Err(e) => {
            for path in &written {
                let _ = std::fs::remove_file(path);
            }
            Err(e)
        }
    }
}
