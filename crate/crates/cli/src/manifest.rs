use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> io::Result<Self> {
        Ok(Self {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        })
    }
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    let mut file = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Everything needed to rerun a command: what ran, on which inputs, with
/// which settings and seeds, and what it wrote.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: Option<serde_json::Value>,
    pub settings: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileDigest>,
    /// Paths relative to the manifest's directory.
    pub outputs: Vec<FileDigest>,
    pub timings: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub datasets: Option<serde_json::Value>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: None,
            settings: serde_json::Value::Null,
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: BTreeMap::new(),
            datasets: None,
        }
    }

    pub fn add_input(&mut self, path: &Path) -> CliResult<()> {
        let digest = FileDigest::of(path)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        self.inputs.push(digest);
        Ok(())
    }
}

/// Collects output files under one directory and writes the manifest last.
pub struct OutputSet {
    root: PathBuf,
    files: Vec<PathBuf>,
    started: Instant,
}

impl OutputSet {
    pub fn create(root: &Path, started: Instant) -> CliResult<Self> {
        std::fs::create_dir_all(root).map_err(|source| CliError::Output {
            path: root.display().to_string(),
            source,
        })?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
            started,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Writes `name` through a buffered writer and records it.
    pub fn write<F>(&mut self, name: &str, body: F) -> CliResult<()>
    where
        F: FnOnce(&mut dyn Write) -> io::Result<()>,
    {
        let path = self.path(name);
        let result = File::create(&path).and_then(|f| {
            let mut w = BufWriter::new(f);
            body(&mut w)?;
            w.flush()
        });
        result.map_err(|source| CliError::Output {
            path: path.display().to_string(),
            source,
        })?;
        self.files.push(path);
        Ok(())
    }

    /// Records a file written by other means.
    pub fn record(&mut self, name: &str) {
        self.files.push(self.path(name));
    }

    /// Digests every recorded file and writes the manifest as
    /// `manifest_name` in the same directory.
    pub fn finish(self, mut manifest: RunManifest, manifest_name: &str) -> CliResult<PathBuf> {
        let io_err = |path: &Path| {
            let path = path.display().to_string();
            move |source| CliError::Output { path, source }
        };
        for file in &self.files {
            let sha256 = sha256_file(file).map_err(io_err(file))?;
            let rel = file.strip_prefix(&self.root).unwrap_or(file);
            manifest.outputs.push(FileDigest {
                path: rel.display().to_string(),
                sha256,
            });
        }
        manifest
            .timings
            .insert("total_seconds".into(), self.started.elapsed().as_secs_f64());
        let path = self.path(manifest_name);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
        std::fs::write(&path, text + "\n").map_err(io_err(&path))?;
        Ok(path)
    }
}
