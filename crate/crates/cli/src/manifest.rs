use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Git-style object hash: SHA-256 of `blob <len>\0` followed by the bytes.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(blob_hash(&bytes))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashedFile {
    pub path: PathBuf,
    pub hash: String,
}

/// Record of one CLI invocation: what went in, what came out, how long
/// it took.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_paths: Vec<PathBuf>,
    pub presets: Vec<String>,
    pub seeds: Vec<u64>,
    pub input_dirs: Vec<PathBuf>,
    pub output_dir: PathBuf,
    pub inputs: Vec<HashedFile>,
    pub outputs: Vec<HashedFile>,
    pub elapsed_seconds: f64,
    #[serde(skip)]
    started: Option<Instant>,
}

impl RunManifest {
    pub fn new(command: &str, output_dir: &Path) -> Self {
        RunManifest {
            command: command.to_string(),
            config_paths: Vec::new(),
            presets: Vec::new(),
            seeds: Vec::new(),
            input_dirs: Vec::new(),
            output_dir: output_dir.to_path_buf(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            elapsed_seconds: 0.0,
            started: Some(Instant::now()),
        }
    }

    pub fn config(&mut self, path: &Path) -> Result<()> {
        self.config_paths.push(path.to_path_buf());
        self.input(path)
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(HashedFile {
            path: path.to_path_buf(),
            hash: file_hash(path)?,
        });
        Ok(())
    }

    /// Hashes every input file found directly inside `dir`.
    pub fn input_dir(&mut self, dir: &Path) -> Result<()> {
        self.input_dirs.push(dir.to_path_buf());
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .with_context(|| format!("listing {}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.file_name().is_some_and(|n| n != MANIFEST))
            .collect();
        files.sort();
        for f in files {
            self.input(&f)?;
        }
        Ok(())
    }

    /// Paths are recorded relative to the output directory.
    pub fn output(&mut self, path: &Path) -> Result<()> {
        let rel = path.strip_prefix(&self.output_dir).unwrap_or(path);
        self.outputs.push(HashedFile {
            path: rel.to_path_buf(),
            hash: file_hash(path)?,
        });
        Ok(())
    }

    /// Writes `manifest.json` into the output directory.
    pub fn finish(mut self) -> Result<PathBuf> {
        self.elapsed_seconds = self.started.map_or(0.0, |s| s.elapsed().as_secs_f64());
        self.outputs.sort_by(|a, b| a.path.cmp(&b.path));
        let path = self.output_dir.join(MANIFEST);
        fs::write(&path, serde_json::to_string_pretty(&self)?)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

pub const MANIFEST: &str = "manifest.json";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_matches_git() {
        // `printf 'hello\n' | git hash-object --stdin` with the SHA-256 object format.
        assert_eq!(
            blob_hash(b"hello\n"),
            "2cf8d83d9ee29543b34a87727421fdecb7e3f3a183d337639025de576db9ebb4"
        );
        assert_eq!(blob_hash(b"").len(), 64);
    }
}
