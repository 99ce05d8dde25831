use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use esnssm::DVector;
use serde::de::DeserializeOwned;
use sha2::{Digest, Sha256};

use crate::CliError;

/// Every file read during a run, with its digest, in read order.
#[derive(Default)]
pub struct InputLog {
    pub entries: Vec<(String, String, String)>,
}

impl InputLog {
    pub fn read(&mut self, role: &str, path: &Path) -> Result<Vec<u8>, CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let digest = Sha256::digest(&bytes);
        let mut hex = String::with_capacity(64);
        for b in digest.iter() {
            let _ = write!(hex, "{b:02x}");
        }
        self.entries.push((role.to_string(), path.display().to_string(), hex));
        Ok(bytes)
    }

    pub fn json<T: DeserializeOwned>(&mut self, role: &str, path: &Path) -> Result<T, CliError> {
        let bytes = self.read(role, path)?;
        serde_json::from_slice(&bytes).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))
    }

    pub fn table(&mut self, role: &str, path: &Path) -> Result<Table, CliError> {
        let bytes = self.read(role, path)?;
        Table::parse(&bytes).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))
    }
}

/// Numeric CSV with a `t` column and `u_i`, `x_i`, `y_i` column groups.
#[derive(Debug, Default)]
pub struct Table {
    pub t: Vec<f64>,
    pub u: Vec<DVector<f64>>,
    pub x: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
}

fn group_index(name: &str, prefix: &str) -> Option<usize> {
    name.strip_prefix(prefix)?.parse::<usize>().ok().filter(|i| *i >= 1)
}

impl Table {
    pub fn parse(bytes: &[u8]) -> Result<Self, String> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
        let header = rdr.headers().map_err(|e| e.to_string())?.clone();
        let mut cols = Vec::new();
        let (mut nu, mut nx, mut ny) = (0, 0, 0);
        for (j, name) in header.iter().enumerate() {
            let slot = if name == "t" {
                ('t', 0)
            } else if let Some(i) = group_index(name, "u_") {
                nu += 1;
                ('u', i)
            } else if let Some(i) = group_index(name, "x_") {
                nx += 1;
                ('x', i)
            } else if let Some(i) = group_index(name, "y_") {
                ny += 1;
                ('y', i)
            } else {
                return Err(format!("unknown column '{name}' at position {}", j + 1));
            };
            cols.push(slot);
        }
        if !cols.contains(&('t', 0)) {
            return Err("missing 't' column".into());
        }
        for (g, count) in [('u', nu), ('x', nx), ('y', ny)] {
            for i in 1..=count {
                if !cols.contains(&(g, i)) {
                    return Err(format!("columns {g}_1..{g}_{count} are not contiguous"));
                }
            }
        }
        let mut table = Table::default();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| e.to_string())?;
            let mut u = DVector::zeros(nu);
            let mut x = DVector::zeros(nx);
            let mut y = DVector::zeros(ny);
            let mut t = 0.0;
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| format!("row {}: '{field}' is not a number", row + 1))?;
                match cols[j] {
                    ('t', _) => t = v,
                    ('u', i) => u[i - 1] = v,
                    ('x', i) => x[i - 1] = v,
                    (_, i) => y[i - 1] = v,
                }
            }
            table.t.push(t);
            table.u.push(u);
            table.x.push(x);
            table.y.push(y);
        }
        if table.t.is_empty() {
            return Err("no data rows".into());
        }
        Ok(table)
    }
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io)?;
    tmp.write_all(contents).map_err(io)?;
    tmp.flush().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

/// CSV text from a header and rows, with shortest round-trip float output.
pub fn csv_text(header: &[String], rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let mut first = true;
        for v in row {
            if !first {
                out.push(',');
            }
            first = false;
            let _ = write!(out, "{v:?}");
        }
        out.push('\n');
    }
    out
}

pub fn names(prefix: &str, count: usize) -> impl Iterator<Item = String> + '_ {
    (1..=count).map(move |i| format!("{prefix}_{i}"))
}
