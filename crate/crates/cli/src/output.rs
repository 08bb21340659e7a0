//! Input digests, run manifests and small text writers.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::settings::{CmdResult, Classify, Failure};

#[derive(Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Every input file read during a run, with the SHA-256 of its raw bytes.
#[derive(Default)]
pub struct Inputs {
    pub digests: Vec<InputDigest>,
}

impl Inputs {
    pub fn read(&mut self, path: &Path) -> CmdResult<Vec<u8>> {
        let bytes = fs::read(path).usage(&format!("reading {}", path.display()))?;
        self.digests.push(InputDigest {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(bytes)
    }

    /// Hashes a file that a core loader will read itself.
    pub fn record(&mut self, path: &Path) -> CmdResult<()> {
        self.read(path).map(|_| ())
    }
}

#[derive(Serialize)]
pub struct Manifest {
    pub command: String,
    pub args: Vec<String>,
    pub version: &'static str,
    pub config: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub seed_generated: bool,
    pub threads: usize,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    pub wall_time_seconds: f64,
}

pub struct Run {
    pub command: &'static str,
    pub out: PathBuf,
    pub started: Instant,
    pub outputs: Vec<String>,
}

impl Run {
    pub fn start(command: &'static str, out: &Path) -> CmdResult<Self> {
        fs::create_dir_all(out).usage(&format!("creating output directory {}", out.display()))?;
        Ok(Self {
            command,
            out: out.to_path_buf(),
            started: Instant::now(),
            outputs: Vec::new(),
        })
    }

    /// Path of an output file; the name is listed in the manifest.
    pub fn file(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out.join(name)
    }

    pub fn write(&mut self, name: &str, contents: &str) -> CmdResult<()> {
        let path = self.file(name);
        fs::write(&path, contents).map_err(|e| Failure::Runtime(anyhow::Error::new(e).context(format!("writing {}", path.display()))))
    }

    pub fn finish(
        mut self,
        config: BTreeMap<String, String>,
        seed: Option<u64>,
        seed_generated: bool,
        threads: usize,
        inputs: Inputs,
    ) -> CmdResult<()> {
        let path = self.file("manifest.json");
        let manifest = Manifest {
            command: self.command.to_string(),
            args: std::env::args().collect(),
            version: env!("CARGO_PKG_VERSION"),
            config,
            seed,
            seed_generated,
            threads,
            inputs: inputs.digests,
            outputs: self.outputs,
            wall_time_seconds: self.started.elapsed().as_secs_f64(),
        };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Failure::Runtime(e.into()))?;
        text.push('\n');
        fs::write(&path, text).classify()
    }
}

/// Comma-joined fields; values never contain commas.
pub fn csv_line(out: &mut String, fields: &[String]) {
    out.push_str(&fields.join(","));
    out.push('\n');
}

pub fn join<T: ToString>(v: impl IntoIterator<Item = T>, sep: &str) -> String {
    v.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(sep)
}

pub fn append(out: &mut String, line: impl AsRef<str>) {
    out.push_str(line.as_ref());
    out.push('\n');
}
