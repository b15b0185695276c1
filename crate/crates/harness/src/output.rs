use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{HarnessError, Result};

pub fn sha256_bytes(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| HarnessError::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(format!("{:x}", h.finalize()))
}

pub fn open_input(path: &Path, producer: &'static str) -> Result<BufReader<File>> {
    match File::open(path) {
        Ok(f) => Ok(BufReader::new(f)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(HarnessError::MissingInput { path: path.to_path_buf(), producer })
        }
        Err(e) => Err(HarnessError::io(path, e)),
    }
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| HarnessError::io(path, e))
}

pub fn finish(path: &Path, mut w: BufWriter<File>) -> Result<()> {
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| HarnessError::io(path, e))?;
    finish(path, w)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes()).map_err(|e| HarnessError::io(path, e))?;
    finish(path, w)
}

/// Writes rows of `f64`/integer cells, printing floats in shortest
/// round-trip form so files compare exactly across runs.
pub fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Provenance record written beside every command's outputs.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub git: Option<String>,
    pub seed: u64,
    pub threads: usize,
    pub wall_time_s: f64,
    pub config_sha256: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub summary: serde_json::Value,
}

pub struct Recorder {
    start: Instant,
    out: PathBuf,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Recorder {
    pub fn new(out: &Path) -> Self {
        Recorder { start: Instant::now(), out: out.to_path_buf(), inputs: Vec::new(), outputs: Vec::new() }
    }

    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.to_path_buf());
    }

    pub fn output(&mut self, p: &Path) {
        self.outputs.push(p.to_path_buf());
    }

    fn hashes(&self, paths: &[PathBuf]) -> Result<BTreeMap<String, String>> {
        paths
            .iter()
            .map(|p| {
                let key = p.strip_prefix(&self.out).unwrap_or(p).display().to_string();
                Ok((key, sha256_file(p)?))
            })
            .collect()
    }

    pub fn manifest(&self, command: &str, seed: u64, config_toml: &str, summary: serde_json::Value) -> Result<Manifest> {
        Ok(Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            git: git_describe(),
            seed,
            threads: rayon::current_num_threads(),
            wall_time_s: self.start.elapsed().as_secs_f64(),
            config_sha256: sha256_bytes(config_toml.as_bytes()),
            inputs: self.hashes(&self.inputs)?,
            outputs: self.hashes(&self.outputs)?,
            summary,
        })
    }
}

fn git_describe() -> Option<String> {
    let out = std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()?;
    out.status.success().then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
}
