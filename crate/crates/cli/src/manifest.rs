use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::UsageError;

#[derive(Debug, Serialize)]
pub struct InputFile {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to rerun a command and check its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub params: serde_json::Value,
    pub seeds: Vec<u64>,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub inputs: Vec<InputFile>,
    pub outputs: Vec<String>,
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Records inputs and outputs as a command runs; every written file gets a
/// `<file>.manifest.json` next to it.
pub struct Recorder {
    manifest: RunManifest,
    written: Vec<PathBuf>,
}

impl Recorder {
    pub fn new(command: &str, params: &impl Serialize) -> Self {
        Recorder {
            manifest: RunManifest {
                command: command.to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                params: serde_json::to_value(params).unwrap_or(serde_json::Value::Null),
                seeds: Vec::new(),
                started_unix: now(),
                finished_unix: 0.0,
                inputs: Vec::new(),
                outputs: Vec::new(),
            },
            written: Vec::new(),
        }
    }

    pub fn read_input(&mut self, path: &Path) -> Result<String> {
        let bytes = fs::read(path)
            .map_err(|e| UsageError(format!("cannot read {}: {e}", path.display())))?;
        self.manifest.inputs.push(InputFile {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        String::from_utf8(bytes)
            .map_err(|_| UsageError(format!("{} is not UTF-8 text", path.display())).into())
    }

    pub fn seed(&mut self, seed: u64) {
        self.manifest.seeds.push(seed);
    }

    pub fn write_output(&mut self, path: &Path, contents: &str) -> Result<()> {
        fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))?;
        self.manifest.outputs.push(path.display().to_string());
        self.written.push(path.to_path_buf());
        Ok(())
    }

    pub fn finish(mut self, extra: Option<&Path>) -> Result<()> {
        self.manifest.finished_unix = now();
        let json = serde_json::to_string_pretty(&self.manifest)? + "\n";
        for out in &self.written {
            let mut name = out.as_os_str().to_owned();
            name.push(".manifest.json");
            fs::write(&name, &json)
                .with_context(|| format!("cannot write {}", PathBuf::from(&name).display()))?;
        }
        if let Some(path) = extra {
            fs::write(path, &json).with_context(|| format!("cannot write {}", path.display()))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn outputs_get_sidecar_manifests() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.txt");
        fs::write(&input, "C$\n").unwrap();
        let mut rec = Recorder::new("test", &serde_json::json!({"k": 1}));
        assert_eq!(rec.read_input(&input).unwrap(), "C$\n");
        rec.seed(9);
        let out = dir.path().join("out.csv");
        rec.write_output(&out, "a,b\n").unwrap();
        rec.finish(None).unwrap();
        let m: serde_json::Value = serde_json::from_str(
            &fs::read_to_string(dir.path().join("out.csv.manifest.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(m["seeds"][0], 9);
        assert_eq!(m["params"]["k"], 1);
        assert_eq!(m["inputs"][0]["sha256"], sha256_hex(b"C$\n"));
        assert!(m["finished_unix"].as_f64().unwrap() >= m["started_unix"].as_f64().unwrap());
    }
}
