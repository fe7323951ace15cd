//! Run manifests: everything needed to replay a run and check its outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};
use crate::io;

pub const MANIFEST_NAME: &str = "manifest.json";
pub const TOOL: &str = "cap";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    /// Arguments after the program name, as given.
    pub argv: Vec<String>,
    pub config: Value,
    pub config_sha256: String,
    pub seed: u64,
    pub threads: usize,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
}

/// Records inputs and outputs of one run. Outputs are written atomically.
pub struct Run {
    subcommand: &'static str,
    argv: Vec<String>,
    seed: u64,
    threads: usize,
    inputs: Vec<FileRecord>,
    outputs: Vec<FileRecord>,
}

impl Run {
    pub fn new(subcommand: &'static str, argv: Vec<String>, seed: u64, threads: usize) -> Self {
        Run {
            subcommand,
            argv,
            seed,
            threads,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        let bytes = io::read_bytes(path)?;
        self.inputs.push(FileRecord {
            path: path.display().to_string(),
            sha256: io::sha256_hex(&bytes),
        });
        Ok(())
    }

    pub fn output(&mut self, path: &Path, bytes: &[u8]) -> CliResult<()> {
        io::write_atomic(path, bytes)?;
        self.outputs.push(FileRecord {
            path: path.display().to_string(),
            sha256: io::sha256_hex(bytes),
        });
        Ok(())
    }

    /// Write the manifest to `path`.
    pub fn finish(self, path: &Path, config: Value) -> CliResult<()> {
        let config_bytes = serde_json::to_vec(&config).expect("JSON value serialises");
        let m = Manifest {
            tool: TOOL.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: self.subcommand.to_string(),
            argv: self.argv,
            config,
            config_sha256: io::sha256_hex(&config_bytes),
            seed: self.seed,
            threads: self.threads,
            inputs: self.inputs,
            outputs: self.outputs,
        };
        io::write_atomic(path, &io::to_json_bytes(&m))
    }
}

/// `<dir>/manifest.json` for runs that fill a directory.
pub fn in_dir(dir: &Path) -> PathBuf {
    dir.join(MANIFEST_NAME)
}

/// `<out>.manifest.json` beside a single output file.
pub fn beside(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".");
    name.push(MANIFEST_NAME);
    out.with_file_name(name)
}

/// Files whose current contents differ from the recorded hash.
pub fn changed(records: &[FileRecord]) -> CliResult<Vec<String>> {
    let mut changed = Vec::new();
    for rec in records {
        let bytes = io::read_bytes(Path::new(&rec.path))?;
        if io::sha256_hex(&bytes) != rec.sha256 {
            changed.push(rec.path.clone());
        }
    }
    Ok(changed)
}

pub fn read_manifest(path: &Path) -> CliResult<Manifest> {
    let m: Manifest = io::read_json(path)?;
    if m.tool != TOOL {
        return Err(CliError::Schema(format!("manifest was written by `{}`", m.tool)));
    }
    Ok(m)
}
