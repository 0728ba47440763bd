//! `run_manifest.json`: what was run, with which settings, on which bytes.

use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::CliError;

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of a file, or of a directory's sorted `name digest` listing.
pub fn digest_path(path: &Path) -> Result<String, CliError> {
    let io = |e: std::io::Error| CliError::Data(format!("{}: {e}", path.display()));
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(io)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()
            .map_err(io)?;
        entries.sort();
        let mut listing = String::new();
        for e in entries {
            let name = e
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            listing.push_str(&format!("{name} {}\n", digest_path(&e)?));
        }
        Ok(sha256_hex(listing.as_bytes()))
    } else {
        Ok(sha256_hex(&std::fs::read(path).map_err(io)?))
    }
}

/// Builds the manifest. Inputs that do not exist are recorded without a digest;
/// the command itself reports them.
pub fn build(command: &str, config: &Value, inputs: &[PathBuf]) -> Value {
    let config_text = serde_json::to_string(config).expect("config serializes");
    let inputs: Vec<Value> = inputs
        .iter()
        .map(|p| {
            json!({
                "path": p.display().to_string(),
                "sha256": digest_path(p).ok(),
            })
        })
        .collect();
    json!({
        "tool": "harmony",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": config,
        "config_sha256": sha256_hex(config_text.as_bytes()),
        "inputs": inputs,
    })
}

pub fn write(dir: &Path, command: &str, config: &Value, inputs: &[PathBuf]) -> Result<(), CliError> {
    let manifest = build(command, config, inputs);
    let path = dir.join("run_manifest.json");
    std::fs::write(&path, format!("{manifest:#}\n")).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_is_content_addressed() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.txt");
        std::fs::write(&a, "abc").unwrap();
        assert_eq!(
            digest_path(&a).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        let d1 = digest_path(dir.path()).unwrap();
        std::fs::write(&a, "abd").unwrap();
        assert_ne!(digest_path(dir.path()).unwrap(), d1);
    }

    #[test]
    fn manifest_has_no_clock() {
        let m1 = build("x", &json!({"k": 1}), &[PathBuf::from("/nonexistent")]);
        let m2 = build("x", &json!({"k": 1}), &[PathBuf::from("/nonexistent")]);
        assert_eq!(m1, m2);
        assert_eq!(m1["inputs"][0]["sha256"], Value::Null);
    }
}
