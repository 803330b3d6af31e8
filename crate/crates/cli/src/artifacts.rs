//! Output plumbing: CSV files, content hashes and run manifests.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Writes rows as RFC-4180 CSV with LF line endings.
pub fn write_csv<S: AsRef<str>>(path: &Path, header: &[&str], rows: &[Vec<S>]) -> Result<()> {
    std::fs::write(path, csv_string(header, rows)?).with_context(|| format!("writing {}", path.display()))
}

pub fn csv_string<S: AsRef<str>>(header: &[&str], rows: &[Vec<S>]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(|s| s.as_ref()))?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// Reads a CSV file into a header and string rows.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header = r.headers()?.iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.map(|r| r.iter().map(String::from).collect())).collect::<Result<_, _>>()?;
    Ok((header, rows))
}

/// Git-style object hash of a byte string: SHA-256 over `blob <len>\0` + bytes.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex(&h.finalize())
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct FileHash {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Hashes a file, or every file under a directory (sorted by path).
pub fn hash_input(path: &Path) -> Result<Vec<FileHash>> {
    let mut files = Vec::new();
    collect_files(path, &mut files)?;
    files
        .into_iter()
        .map(|p| {
            let bytes = std::fs::read(&p).with_context(|| format!("reading {}", p.display()))?;
            Ok(FileHash { path: p.display().to_string(), bytes: bytes.len() as u64, sha256: blob_hash(&bytes) })
        })
        .collect()
}

fn collect_files(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
            .with_context(|| format!("listing {}", path.display()))?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()?;
        entries.sort();
        for e in entries {
            collect_files(&e, out)?;
        }
    } else {
        out.push(path.to_path_buf());
    }
    Ok(())
}

/// Everything needed to repeat a run: the command, the resolved config and
/// hashes of what went in and came out. Output paths are relative to the
/// run directory so two runs of the same command compare byte for byte.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub args: Vec<String>,
    pub seed: u64,
    pub config_sha256: String,
    pub config: serde_json::Value,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
}

impl Manifest {
    pub fn new<C: Serialize>(command: &str, args: Vec<String>, seed: u64, config: &C) -> Result<Self> {
        let config = serde_json::to_value(config)?;
        let canonical = serde_json::to_vec(&config)?;
        Ok(Self {
            tool: "mosaic",
            version: env!("CARGO_PKG_VERSION"),
            command: command.into(),
            args,
            seed,
            config_sha256: blob_hash(&canonical),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.extend(hash_input(path)?);
        Ok(())
    }

    /// Records outputs that live inside `dir`, by relative path.
    pub fn outputs_in(&mut self, dir: &Path, names: &[&str]) -> Result<()> {
        for name in names {
            for mut f in hash_input(&dir.join(name))? {
                f.path = Path::new(&f.path).strip_prefix(dir).map(|p| p.display().to_string()).unwrap_or(f.path);
                self.outputs.push(f);
            }
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        std::fs::write(path, s).with_context(|| format!("writing {}", path.display()))
    }
}
