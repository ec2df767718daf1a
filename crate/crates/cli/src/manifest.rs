//! Run manifests: config hash, seed, versions and SHA-256 of every file read
//! or written. Nothing time-dependent is recorded, so identical runs give
//! identical manifests.

use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub tool_version: String,
    pub core_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn digest_file(path: &Path) -> Result<(u64, String), CliError> {
    let mut f = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut total = 0u64;
    loop {
        let n = f.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if n == 0 {
            break;
        }
        total += n as u64;
        h.update(&buf[..n]);
    }
    Ok((total, hex::encode(h.finalize())))
}

/// Collects the files a command touched, keyed by a stable display name.
#[derive(Debug, Default)]
pub struct Tracker {
    inputs: Vec<(String, PathBuf)>,
    outputs: Vec<PathBuf>,
}

impl Tracker {
    /// Records an input under `role:file_name`.
    pub fn input(&mut self, role: &str, path: &Path) {
        let name = path.file_name().unwrap_or_default().to_string_lossy();
        self.inputs
            .push((format!("{role}:{name}"), path.to_path_buf()));
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) -> PathBuf {
        let p = path.into();
        self.outputs.push(p.clone());
        p
    }

    /// Hashes everything and writes `manifest.json` into `out_dir`.
    pub fn finish(
        mut self,
        out_dir: &Path,
        command: &str,
        config_hash: &str,
        seed: u64,
    ) -> Result<Manifest, CliError> {
        let mut inputs = Vec::new();
        self.inputs.sort();
        self.inputs.dedup();
        for (name, p) in &self.inputs {
            let (bytes, sha256) = digest_file(p)?;
            inputs.push(FileDigest {
                name: name.clone(),
                bytes,
                sha256,
            });
        }
        let mut outputs = Vec::new();
        self.outputs.sort();
        self.outputs.dedup();
        for p in &self.outputs {
            let (bytes, sha256) = digest_file(p)?;
            let name = p
                .strip_prefix(out_dir)
                .unwrap_or(p)
                .to_string_lossy()
                .into_owned();
            outputs.push(FileDigest {
                name,
                bytes,
                sha256,
            });
        }
        let m = Manifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            core_version: dyadic::VERSION.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            inputs,
            outputs,
        };
        let path = out_dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(m)
    }
}

pub fn read_manifest(path: &Path) -> Result<Manifest, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}
