use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use tempfile::NamedTempFile;

use crate::CliError;

pub const TOOL: &str = "levypx";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Outcome of one named check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), pass, detail: detail.into() }
    }
}

/// Summary written next to the artifacts of every run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub overrides: Vec<String>,
    pub artifacts: Vec<String>,
    pub checks: Vec<Check>,
    pub constants: BTreeMap<String, serde_json::Value>,
    pub warnings: Vec<String>,
}

impl RunManifest {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn file_name(command: &str) -> String {
        format!("manifest-{command}.json")
    }
}

/// A table of numbers with its column names.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Option<f64>>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// CSV with a `#` comment header. Missing values are empty cells; numbers
    /// use the shortest representation that round-trips.
    pub fn to_csv(&self, command: &str, hash: &str) -> String {
        let mut out = format!("# {TOOL} {VERSION}\n# command: {command}\n# config_hash: {hash}\n");
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| v.map(fmt_num).unwrap_or_default()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

pub fn fmt_num(v: f64) -> String {
    if v.is_finite() && v != 0.0 && (v.abs() < 1e-4 || v.abs() >= 1e6) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

/// Reads the first two numeric columns of a CSV written by [`Table::to_csv`].
pub fn read_density_csv(path: &Path) -> Result<Vec<(f64, f64)>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read density file {}: {e}", path.display())))?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    lines.next().ok_or_else(|| CliError::config(format!("{} has no header", path.display())))?;
    lines
        .map(|l| {
            let mut cells = l.split(',');
            let mut num = || cells.next().and_then(|c| c.trim().parse::<f64>().ok());
            match (num(), num()) {
                (Some(a), Some(b)) => Ok((a, b)),
                _ => Err(CliError::config(format!("malformed row in {}: {l}", path.display()))),
            }
        })
        .collect()
}

/// Files to emit, held in memory until the run has finished.
#[derive(Default)]
pub struct Pending {
    files: Vec<(String, Vec<u8>)>,
}

impl Pending {
    pub fn add(&mut self, name: impl Into<String>, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.into(), bytes.into()));
    }

    pub fn names(&self) -> Vec<String> {
        self.files.iter().map(|(n, _)| n.clone()).collect()
    }

    /// Writes every file through a temporary file in `dir` and a rename, then
    /// the manifest last.
    pub fn commit(self, dir: &Path, manifest: &RunManifest) -> Result<Vec<PathBuf>, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let json = serde_json::to_string_pretty(manifest).expect("manifest serializes") + "\n";
        let mut written = Vec::new();
        let manifest_name = RunManifest::file_name(&manifest.command);
        for (name, bytes) in self.files.iter().chain(std::iter::once(&(manifest_name, json.into_bytes()))) {
            let path = dir.join(name);
            write_atomic(&path, bytes)?;
            written.push(path);
        }
        Ok(written)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_header_and_blank_missing_cells() {
        let mut t = Table::new(&["k", "ratio"]);
        t.push(vec![Some(0.0), None]);
        t.push(vec![Some(1.0), Some(2.5e-7)]);
        let csv = t.to_csv("density", "abc");
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], format!("# levypx {VERSION}"));
        assert_eq!(lines[2], "# config_hash: abc");
        assert_eq!(&lines[3..], ["k,ratio", "0,", "1,2.5e-7"]);
    }

    #[test]
    fn numbers_round_trip() {
        for v in [0.1, 1.0 / 3.0, 1e-300, -7.25e8, 0.0, 123.456] {
            assert_eq!(fmt_num(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn density_csv_reads_back() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Table::new(&["x", "value", "error"]);
        t.push(vec![Some(-0.5), Some(0.25), Some(1e-9)]);
        t.push(vec![Some(0.0), Some(0.5), None]);
        let p = dir.path().join("d.csv");
        write_atomic(&p, t.to_csv("density", "h").as_bytes()).unwrap();
        assert_eq!(read_density_csv(&p).unwrap(), vec![(-0.5, 0.25), (0.0, 0.5)]);
    }

    #[test]
    fn commit_writes_files_then_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = Pending::default();
        p.add("a.csv", "x\n");
        let m = RunManifest {
            tool: TOOL.into(),
            version: VERSION.into(),
            command: "density".into(),
            config_hash: "h".into(),
            overrides: vec![],
            artifacts: p.names(),
            checks: vec![Check::new("c", true, "")],
            constants: BTreeMap::new(),
            warnings: vec![],
        };
        let out = dir.path().join("nested");
        let written = p.commit(&out, &m).unwrap();
        assert_eq!(written.len(), 2);
        assert!(out.join("manifest-density.json").exists());
        let leftovers = std::fs::read_dir(&out).unwrap().count();
        assert_eq!(leftovers, 2);
    }
}
