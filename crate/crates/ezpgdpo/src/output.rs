//! Run directories, CSV tables with schema files, and manifests.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{AppError, AppResult};

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> AppResult<()> {
    let tmp = path.with_extension(match path.extension() {
        Some(e) => format!("{}.tmp", e.to_string_lossy()),
        None => "tmp".into(),
    });
    {
        let mut f = fs::File::create(&tmp).map_err(AppError::io(&tmp))?;
        f.write_all(bytes).map_err(AppError::io(&tmp))?;
        f.sync_all().map_err(AppError::io(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(AppError::io(path))
}

/// Float formatting for tables: plain decimal in the usual range, exponent
/// form otherwise; both parse back to the same value.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e15).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// One column of a CSV artifact.
#[derive(Clone, Debug, Serialize)]
pub struct Column {
    pub name: String,
    pub description: String,
}

/// Column layout of an artifact type.
#[derive(Clone, Debug, Serialize)]
pub struct Schema {
    pub artifact: &'static str,
    pub description: &'static str,
    pub columns: Vec<Column>,
}

impl Schema {
    pub fn new(artifact: &'static str, description: &'static str, columns: &[(&'static str, &'static str)]) -> Self {
        Schema {
            artifact,
            description,
            columns: columns.iter().map(|&(name, description)| Column { name: name.into(), description: description.into() }).collect(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, description: impl Into<String>) {
        self.columns.push(Column { name: name.into(), description: description.into() });
    }
}

/// A table cell.
pub enum Cell {
    F(f64),
    U(u64),
    S(String),
    B(bool),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::F(x) => fmt_f64(*x),
            Cell::U(x) => x.to_string(),
            Cell::S(s) => s.clone(),
            Cell::B(b) => (*b as u8).to_string(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::F(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::U(x as u64)
    }
}

impl From<u64> for Cell {
    fn from(x: u64) -> Self {
        Cell::U(x)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::S(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::S(s)
    }
}

impl From<bool> for Cell {
    fn from(b: bool) -> Self {
        Cell::B(b)
    }
}

/// Builds a row of cells from heterogeneous values.
#[macro_export]
macro_rules! row {
    ($($x:expr),* $(,)?) => { vec![$($crate::output::Cell::from($x)),*] };
}

#[derive(Clone, Debug, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// A fresh output directory; remembers every file written for the manifest.
#[derive(Debug)]
pub struct RunDir {
    pub path: PathBuf,
    files: Vec<PathBuf>,
}

impl RunDir {
    /// Creates `<out>/<timestamp>-seed<seed>[-label]`, adding a numeric suffix
    /// rather than reusing an existing directory.
    pub fn create(out: &Path, seed: u64, label: &str) -> AppResult<RunDir> {
        fs::create_dir_all(out).map_err(AppError::io(out))?;
        let stamp = chrono::Local::now().format("%Y%m%dT%H%M%S");
        let base = if label.is_empty() { format!("{stamp}-seed{seed}") } else { format!("{stamp}-seed{seed}-{label}") };
        for k in 1.. {
            let name = if k == 1 { base.clone() } else { format!("{base}-{k}") };
            let path = out.join(name);
            match fs::create_dir(&path) {
                Ok(()) => return Ok(RunDir { path, files: Vec::new() }),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(AppError::Io { path, source: e }),
            }
        }
        unreachable!()
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    /// Adds a file written elsewhere to the inventory.
    pub fn track(&mut self, path: PathBuf) {
        self.files.push(path);
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> AppResult<PathBuf> {
        let p = self.file(name);
        write_atomic(&p, bytes)?;
        self.files.push(p.clone());
        Ok(p)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> AppResult<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| AppError::Other(e.to_string()))?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    /// Writes `<name>.csv` and its `<name>.schema.json`.
    pub fn write_table(&mut self, name: &str, schema: &Schema, rows: &[Vec<Cell>]) -> AppResult<PathBuf> {
        let file = format!("{name}.csv");
        let path = self.file(&file);
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |source| AppError::Csv { path: path.clone(), source };
        w.write_record(schema.columns.iter().map(|c| c.name.as_str())).map_err(csv_err)?;
        for r in rows {
            debug_assert_eq!(r.len(), schema.columns.len(), "row width of {name}");
            w.write_record(r.iter().map(Cell::render)).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| AppError::Other(e.to_string()))?;
        self.write_json(&format!("{name}.schema.json"), schema)?;
        self.write_bytes(&file, &bytes)
    }

    /// Every written file with its size and SHA-256.
    pub fn inventory(&self) -> AppResult<Vec<FileEntry>> {
        let mut out = Vec::new();
        for p in &self.files {
            let bytes = fs::read(p).map_err(AppError::io(p))?;
            out.push(FileEntry {
                path: p.strip_prefix(&self.path).unwrap_or(p).display().to_string(),
                bytes: bytes.len() as u64,
                sha256: hex::encode(Sha256::digest(&bytes)),
            });
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: u64,
    pub threads: usize,
    pub reference_mode: bool,
    pub started: String,
    pub finished: String,
    pub wall_clock_seconds: f64,
    pub target: String,
    pub config: String,
    pub summary: serde_json::Value,
    pub files: Vec<FileEntry>,
}

/// Start time of a command, for the manifest.
pub struct Clock {
    started: chrono::DateTime<chrono::Local>,
    instant: std::time::Instant,
}

impl Clock {
    pub fn start() -> Clock {
        Clock { started: chrono::Local::now(), instant: std::time::Instant::now() }
    }

    pub fn seconds(&self) -> f64 {
        self.instant.elapsed().as_secs_f64()
    }
}

/// Writes `manifest.json` last, listing every other file of the run.
pub fn write_manifest(
    dir: &mut RunDir,
    clock: &Clock,
    command: &str,
    seed: u64,
    cfg: &crate::config::RunConfig,
    summary: serde_json::Value,
) -> AppResult<PathBuf> {
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: command.to_string(),
        seed,
        threads: cfg.effective_threads(),
        reference_mode: cfg.run.reference_mode,
        started: clock.started.to_rfc3339(),
        finished: chrono::Local::now().to_rfc3339(),
        wall_clock_seconds: clock.seconds(),
        target: format!("{}-{}", std::env::consts::ARCH, std::env::consts::OS),
        config: cfg.to_toml(),
        summary,
        files: dir.inventory()?,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| AppError::Other(e.to_string()))? + "\n";
    let p = dir.file("manifest.json");
    write_atomic(&p, text.as_bytes())?;
    Ok(p)
}

/// Checks that every file listed in a manifest exists with its checksum.
pub fn verify_manifest(dir: &Path) -> AppResult<usize> {
    let p = dir.join("manifest.json");
    let text = fs::read_to_string(&p).map_err(|source| AppError::Input { path: p.clone(), source })?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| AppError::Other(e.to_string()))?;
    let files = v["files"].as_array().ok_or_else(|| AppError::Other("manifest without files".into()))?;
    for f in files {
        let rel = f["path"].as_str().unwrap_or_default();
        let bytes = fs::read(dir.join(rel)).map_err(AppError::io(dir.join(rel)))?;
        if hex::encode(Sha256::digest(&bytes)) != f["sha256"].as_str().unwrap_or_default() {
            return Err(AppError::Other(format!("checksum mismatch for {rel}")));
        }
    }
    Ok(files.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_directories_are_never_reused() {
        let tmp = tempfile::tempdir().unwrap();
        let a = RunDir::create(tmp.path(), 1, "x").unwrap();
        let b = RunDir::create(tmp.path(), 1, "x").unwrap();
        assert_ne!(a.path, b.path);
        assert!(a.path.is_dir() && b.path.is_dir());
    }

    #[test]
    fn tables_and_manifest_checksums() {
        let tmp = tempfile::tempdir().unwrap();
        let mut d = RunDir::create(tmp.path(), 0, "").unwrap();
        let schema = Schema::new("demo", "demo table", &[("a", "first"), ("b", "second")]);
        d.write_table("demo", &schema, &[row![1.5, 2usize], row![1e-9, 3usize]]).unwrap();
        let text = fs::read_to_string(d.file("demo.csv")).unwrap();
        assert_eq!(text, "a,b\n1.5,2\n1e-9,3\n");
        let cfg = crate::config::RunConfig::default();
        write_manifest(&mut d, &Clock::start(), "test", 0, &cfg, serde_json::json!({})).unwrap();
        assert_eq!(verify_manifest(&d.path).unwrap(), 2);
        fs::write(d.file("demo.csv"), "tampered").unwrap();
        assert!(verify_manifest(&d.path).is_err());
    }

    #[test]
    fn float_cells_parse_back() {
        for x in [0.0, 1.0, -2.5e-7, 123456.789, 1e300, 0.1 + 0.2] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }
}
