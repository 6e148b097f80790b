//! Per-command run manifests: inputs, outputs and their hashes.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use mulsmo_core::checkpoint::file_hash;
use mulsmo_core::{Error, Result};
use serde::Serialize;

#[derive(Serialize)]
struct FileRecord {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    argv: Vec<String>,
    seed: u64,
    config: &'a serde_json::Value,
    inputs: Vec<FileRecord>,
    outputs: Vec<FileRecord>,
    started_unix: u64,
    elapsed_seconds: f64,
}

pub struct RunLog {
    command: &'static str,
    seed: u64,
    config: serde_json::Value,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    started_unix: u64,
    clock: Instant,
}

impl RunLog {
    pub fn start(command: &'static str, seed: u64) -> Self {
        Self {
            command,
            seed,
            config: serde_json::Value::Null,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            clock: Instant::now(),
        }
    }

    pub fn config<T: Serialize>(&mut self, c: &T) -> Result<()> {
        self.config = serde_json::to_value(c)?;
        Ok(())
    }

    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.to_path_buf());
    }

    pub fn output(&mut self, p: &Path) {
        self.outputs.push(p.to_path_buf());
    }

    fn records(paths: &[PathBuf]) -> Result<Vec<FileRecord>> {
        let mut out = Vec::new();
        for p in paths {
            if p.is_dir() {
                let mut files: Vec<PathBuf> = walk(p)?;
                files.sort();
                for f in files {
                    out.push(FileRecord {
                        sha256: file_hash(&f)?,
                        path: f.display().to_string(),
                    });
                }
            } else {
                out.push(FileRecord {
                    sha256: file_hash(p)?,
                    path: p.display().to_string(),
                });
            }
        }
        Ok(out)
    }

    /// Writes `<dir>/<command>.run.json`.
    pub fn finish(self, dir: &Path) -> Result<PathBuf> {
        let m = Manifest {
            command: self.command,
            argv: std::env::args().collect(),
            seed: self.seed,
            config: &self.config,
            inputs: Self::records(&self.inputs)?,
            outputs: Self::records(&self.outputs)?,
            started_unix: self.started_unix,
            elapsed_seconds: self.clock.elapsed().as_secs_f64(),
        };
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(format!("{}.run.json", self.command));
        std::fs::write(&path, serde_json::to_vec_pretty(&m)?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

fn walk(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_dir() {
            out.extend(walk(&p)?);
        } else {
            out.push(p);
        }
    }
    Ok(out)
}
