//! Output directory bookkeeping: resolved config snapshot and manifest.

use std::path::{Path, PathBuf};

use semsplat_core::io::{read_bytes, save_json, write_bytes};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliResult;

#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    subcommand: &'a str,
    version: &'a str,
    seed: Option<u64>,
    config_hash: &'a str,
    inputs: &'a [FileEntry],
    artifacts: &'a [FileEntry],
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Files under `dir`, recursively, sorted by path.
pub fn list_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let rd = std::fs::read_dir(&d).map_err(|e| semsplat_core::Error::io(&d, e))?;
        for entry in rd {
            let p = entry.map_err(|e| semsplat_core::Error::io(&d, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// One subcommand invocation writing under `out`.
pub struct Run {
    pub out: PathBuf,
    subcommand: &'static str,
    inputs: Vec<FileEntry>,
    artifacts: Vec<FileEntry>,
}

impl Run {
    pub fn new(subcommand: &'static str, out: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(out).map_err(|e| semsplat_core::Error::io(out, e))?;
        Ok(Self {
            out: out.to_path_buf(),
            subcommand,
            inputs: Vec::new(),
            artifacts: Vec::new(),
        })
    }

    /// Records an input file, or every file of an input directory.
    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        let files = if path.is_dir() { list_files(path)? } else { vec![path.to_path_buf()] };
        for f in files {
            let bytes = read_bytes(&f)?;
            self.inputs.push(FileEntry {
                path: f.display().to_string(),
                sha256: sha256_hex(&bytes),
            });
        }
        Ok(())
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    /// Records a file already written under the output directory.
    pub fn artifact(&mut self, rel: &str) -> CliResult<()> {
        let bytes = read_bytes(&self.out.join(rel))?;
        self.artifacts.push(FileEntry {
            path: rel.to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> CliResult<()> {
        write_bytes(&self.out.join(rel), bytes)?;
        self.artifact(rel)
    }

    pub fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> CliResult<()> {
        save_json(&self.out.join(rel), value)?;
        self.artifact(rel)
    }

    /// Writes the config snapshot and the manifest.
    pub fn finish(mut self, config_text: &str, config_hash: &str, seed: Option<u64>) -> CliResult<()> {
        self.write("config.toml", config_text.as_bytes())?;
        self.artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        let m = Manifest {
            subcommand: self.subcommand,
            version: env!("CARGO_PKG_VERSION"),
            seed,
            config_hash,
            inputs: &self.inputs,
            artifacts: &self.artifacts,
        };
        save_json(&self.out.join("manifest.json"), &m)?;
        Ok(())
    }
}
