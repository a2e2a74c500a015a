use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

#[derive(Debug, Serialize)]
pub struct Artifact {
    pub path: String,
    pub seed: Option<u64>,
    pub bytes: u64,
    pub fnv1a: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: Option<u64>,
    artifacts: &'a [Artifact],
}

/// Collects every file written by a command and lists it in `manifest.json`.
pub struct OutDir {
    dir: PathBuf,
    command: &'static str,
    seed: Option<u64>,
    artifacts: Vec<Artifact>,
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(*b)).wrapping_mul(0x0100_0000_01b3))
}

impl OutDir {
    pub fn create(dir: &Path, command: &'static str, seed: Option<u64>) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), command, seed, artifacts: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8], seed: Option<u64>) -> Result<(), CliError> {
        let p = self.path(name);
        fs::write(&p, bytes).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", p.display())))?;
        self.record(name, seed)
    }

    /// Lists a file that was written by other means.
    pub fn record(&mut self, name: &str, seed: Option<u64>) -> Result<(), CliError> {
        let p = self.path(name);
        let bytes = fs::read(&p).map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", p.display())))?;
        self.artifacts.retain(|a| a.path != name);
        self.artifacts.push(Artifact { path: name.to_string(), seed, bytes: bytes.len() as u64, fnv1a: format!("{:016x}", fnv1a(&bytes)) });
        Ok(())
    }

    pub fn finish(self) -> Result<Vec<Artifact>, CliError> {
        let m = Manifest { command: self.command, version: env!("CARGO_PKG_VERSION"), seed: self.seed, artifacts: &self.artifacts };
        let text = serde_json::to_string_pretty(&m).expect("manifest serialises") + "\n";
        let p = self.path("manifest.json");
        fs::write(&p, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", p.display())))?;
        Ok(self.artifacts)
    }
}
