use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{io_error, CliResult};

pub const RUN_MANIFEST: &str = "run_manifest.txt";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    out
}

fn files_under(path: &Path, out: &mut Vec<PathBuf>) -> CliResult<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| io_error(path, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| io_error(path, err)))
            .collect::<CliResult<_>>()?;
        entries.sort();
        for e in entries {
            files_under(&e, out)?;
        }
    } else {
        out.push(path.to_path_buf());
    }
    Ok(())
}

/// Digest over the contents of the given files and directory trees, in the
/// order given and sorted within directories.
pub fn hash_inputs(paths: &[&Path]) -> CliResult<String> {
    let mut hasher = Sha256::new();
    for root in paths {
        let mut files = Vec::new();
        files_under(root, &mut files)?;
        for f in files {
            let rel = f.strip_prefix(root).unwrap_or(&f);
            hasher.update(rel.to_string_lossy().as_bytes());
            hasher.update([0]);
            hasher.update(fs::read(&f).map_err(|e| io_error(&f, e))?);
        }
    }
    Ok(sha256_hex(&hasher.finalize()))
}

/// What a command ran with: the canonical configuration text, the seed and
/// the code version, plus a digest of the files it read.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunManifest {
    pub command: String,
    pub config_sha256: String,
    pub seed: Option<u64>,
    pub inputs_sha256: String,
}

impl RunManifest {
    pub fn new(command: &str, config_text: &str, seed: Option<u64>, inputs: &[&Path]) -> CliResult<Self> {
        Ok(RunManifest {
            command: command.to_string(),
            config_sha256: sha256_hex(config_text.as_bytes()),
            seed,
            inputs_sha256: hash_inputs(inputs)?,
        })
    }

    pub fn to_text(&self) -> String {
        format!(
            "crossnet-run v1\ncommand={}\nversion={VERSION}\nconfig_sha256={}\nseed={}\ninputs_sha256={}\n",
            self.command,
            self.config_sha256,
            self.seed.map_or("none".to_string(), |s| s.to_string()),
            self.inputs_sha256
        )
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        fs::write(path, self.to_text()).map_err(|e| io_error(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn input_digest_tracks_contents() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a"), b"1").unwrap();
        let first = hash_inputs(&[dir.path()]).unwrap();
        assert_eq!(first, hash_inputs(&[dir.path()]).unwrap());
        fs::write(dir.path().join("a"), b"2").unwrap();
        assert_ne!(first, hash_inputs(&[dir.path()]).unwrap());
    }
}
