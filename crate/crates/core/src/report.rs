//! CSV tables, suite reports and run manifests.
//!
//! Numbers are written with 17 significant digits so that every `f64`
//! survives a write/parse round trip bit for bit. Cells are quoted per
//! RFC 4180 only when they contain a comma, quote or line break.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Decimal text with 17 significant digits (`1.2345678901234567e-3`).
pub fn format_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:.16e}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
    Bool(bool),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Num(x) => format_f64(*x),
            Cell::Int(i) => i.to_string(),
            Cell::Bool(b) => b.to_string(),
            Cell::Text(s) => quote(s),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::Bool(x)
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::Text(x.to_string())
    }
}

impl From<String> for Cell {
    fn from(x: String) -> Self {
        Cell::Text(x)
    }
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// A rectangular table with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.header.len(), "row width must match header");
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = self.header.iter().map(|h| quote(h)).collect();
        out.push_str(&header.join(","));
        out.push_str("\r\n");
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::render).collect();
            out.push_str(&cells.join(","));
            out.push_str("\r\n");
        }
        out
    }
}

/// Splits RFC 4180 text into records of raw cells.
pub fn parse_csv(text: &str) -> Result<Vec<Vec<String>>> {
    let mut records = Vec::new();
    let mut record = Vec::new();
    let mut cell = String::new();
    let mut chars = text.chars().peekable();
    let mut in_quotes = false;
    let mut any = false;
    while let Some(c) = chars.next() {
        any = true;
        if in_quotes {
            match c {
                '"' if chars.peek() == Some(&'"') => {
                    chars.next();
                    cell.push('"');
                }
                '"' => in_quotes = false,
                _ => cell.push(c),
            }
            continue;
        }
        match c {
            '"' if cell.is_empty() => in_quotes = true,
            ',' => record.push(std::mem::take(&mut cell)),
            '\r' => {}
            '\n' => {
                record.push(std::mem::take(&mut cell));
                records.push(std::mem::take(&mut record));
                any = false;
            }
            _ => cell.push(c),
        }
    }
    if in_quotes {
        return Err(Error::Parse("unterminated quoted cell".into()));
    }
    if any {
        record.push(cell);
        records.push(record);
    }
    Ok(records)
}

/// Parses a cell written by [`format_f64`].
pub fn parse_f64(cell: &str) -> Result<f64> {
    match cell {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => cell
            .parse()
            .map_err(|_| Error::Parse(format!("not a number: {cell:?}"))),
    }
}

/// One named pass/fail check with the measured value and its threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub threshold: f64,
    pub pass: bool,
    pub note: String,
}

impl Check {
    pub fn new(name: &str, measured: f64, threshold: f64, pass: bool, note: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            measured,
            threshold,
            pass,
            note: note.into(),
        }
    }

    /// Passes when `measured <= threshold`.
    pub fn at_most(name: &str, measured: f64, threshold: f64, note: impl Into<String>) -> Self {
        Self::new(name, measured, threshold, measured <= threshold, note)
    }

    /// Passes when `measured >= threshold`.
    pub fn at_least(name: &str, measured: f64, threshold: f64, note: impl Into<String>) -> Self {
        Self::new(name, measured, threshold, measured >= threshold, note)
    }
}

/// Output of one verification suite: its checks plus named CSV tables.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: Vec<Check>,
    pub tables: Vec<(String, Table)>,
    /// Trajectories lost to floating-point overflow, and how many were run.
    pub censored: usize,
    pub trajectories: usize,
}

impl SuiteReport {
    pub fn new(suite: &str) -> Self {
        Self {
            suite: suite.to_string(),
            ..Default::default()
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn censored_fraction(&self) -> f64 {
        if self.trajectories == 0 {
            0.0
        } else {
            self.censored as f64 / self.trajectories as f64
        }
    }

    pub fn checks_table(&self) -> Table {
        let mut t = Table::new(&["check", "measured", "threshold", "pass", "note"]);
        for c in &self.checks {
            t.push(vec![
                c.name.clone().into(),
                c.measured.into(),
                c.threshold.into(),
                c.pass.into(),
                c.note.clone().into(),
            ]);
        }
        t
    }

    /// Every table of the report as `(file name, CSV text)`, checks first.
    pub fn rendered(&self) -> Vec<(String, String)> {
        let mut out = vec![(format!("{}_checks.csv", self.suite), self.checks_table().to_csv())];
        for (name, table) in &self.tables {
            out.push((format!("{}_{}.csv", self.suite, name), table.to_csv()));
        }
        out
    }

    /// SHA-256 over all rendered tables in order.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, text) in self.rendered() {
            h.update(name.as_bytes());
            h.update([0u8]);
            h.update(text.as_bytes());
        }
        hex(&h.finalize())
    }

    /// Plain-text summary, one line per check.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let _ = writeln!(
                s,
                "[{}] {:<40} measured {:>12.5e}  threshold {:>12.5e}  {}",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                c.measured,
                c.threshold,
                c.note
            );
        }
        if self.trajectories > 0 {
            let _ = writeln!(
                s,
                "censored trajectories: {} of {}",
                self.censored, self.trajectories
            );
        }
        s
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Written file and its content digest.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub sha256: String,
}

/// Writes `table` as CSV to `path`.
pub fn write_report(table: &Table, path: &Path) -> Result<ManifestEntry> {
    write_text(&table.to_csv(), path)
}

pub fn write_text(text: &str, path: &Path) -> Result<ManifestEntry> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(ManifestEntry {
        path: path.to_path_buf(),
        sha256: sha256_hex(text.as_bytes()),
    })
}

/// Record of one CLI run: configuration snapshot, code version, per-suite
/// verdicts and the digests of every file written.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunManifest {
    pub config: String,
    pub version: String,
    pub suites: Vec<(String, bool)>,
    pub files: Vec<ManifestEntry>,
}

impl RunManifest {
    pub fn new(config: String) -> Self {
        Self {
            config,
            version: env!("CARGO_PKG_VERSION").to_string(),
            ..Default::default()
        }
    }

    /// Writes every table of `report` into `dir` and records the digests.
    pub fn write_suite(&mut self, report: &SuiteReport, dir: &Path) -> Result<()> {
        for (name, text) in report.rendered() {
            let entry = write_text(&text, &dir.join(name))?;
            self.files.push(entry);
        }
        let summary = write_text(&report.summary(), &dir.join(format!("{}_summary.txt", report.suite)))?;
        self.files.push(summary);
        self.suites.push((report.suite.clone(), report.passed()));
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "version = {}", self.version);
        for (suite, pass) in &self.suites {
            let _ = writeln!(s, "suite.{suite} = {}", if *pass { "pass" } else { "fail" });
        }
        for f in &self.files {
            let name = f.path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default();
            let _ = writeln!(s, "file.{name} = {}", f.sha256);
        }
        s.push_str("\n[config]\n");
        s.push_str(&self.config);
        s
    }

    pub fn write(&self, dir: &Path) -> Result<ManifestEntry> {
        write_text(&self.render(), &dir.join("manifest.txt"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_table_is_header_only() {
        let t = Table::new(&["a", "b"]);
        assert_eq!(t.to_csv(), "a,b\r\n");
    }

    #[test]
    fn quoting_follows_rfc4180() {
        let mut t = Table::new(&["name", "x"]);
        t.push(vec!["say \"hi\", world".into(), 1.5.into()]);
        let csv = t.to_csv();
        assert!(csv.contains("\"say \"\"hi\"\", world\""));
        let rec = parse_csv(&csv).unwrap();
        assert_eq!(rec[1][0], "say \"hi\", world");
    }

    #[test]
    fn digest_is_a_pure_function_of_content() {
        let mut r = SuiteReport::new("demo");
        r.checks.push(Check::at_most("c", 0.25, 1.0, ""));
        let mut t = Table::new(&["x"]);
        t.push(vec![0.1.into()]);
        r.tables.push(("t".into(), t));
        assert_eq!(r.digest(), r.clone().digest());
        // Known SHA-256 of the empty string, as a platform-independence anchor.
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn write_report_surfaces_io_errors_with_path() {
        let t = Table::new(&["x"]);
        let dir = std::env::temp_dir().join(format!("lb-report-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let blocker = dir.join("file");
        fs::write(&blocker, "x").unwrap();
        let err = write_report(&t, &blocker.join("sub.csv")).unwrap_err();
        assert!(err.to_string().contains("file"));
        let ok = write_report(&t, &dir.join("ok.csv")).unwrap();
        assert_eq!(ok.sha256, sha256_hex(b"x\r\n"));
        fs::remove_dir_all(&dir).unwrap();
    }

    proptest! {
        #[test]
        fn floats_round_trip_through_csv(xs in proptest::collection::vec(any::<f64>(), 0..20)) {
            let mut t = Table::new(&["x"]);
            for &x in &xs {
                t.push(vec![x.into()]);
            }
            let rec = parse_csv(&t.to_csv()).unwrap();
            prop_assert_eq!(rec.len(), xs.len() + 1);
            for (r, &x) in rec[1..].iter().zip(&xs) {
                let y = parse_f64(&r[0]).unwrap();
                prop_assert!(y.to_bits() == x.to_bits() || (x.is_nan() && y.is_nan()));
            }
        }
    }
}
