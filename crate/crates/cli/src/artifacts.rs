//! Output files and their provenance sidecars.

use std::fs;
use std::path::{Path, PathBuf};

use rdmix::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

#[derive(Debug, Serialize)]
struct InputDigest {
    path: String,
    sha256: String,
}

/// Written next to each artifact as `<artifact>.meta.json`. Holds no
/// timestamps so reruns are byte-identical.
#[derive(Debug, Serialize)]
struct Sidecar<'a> {
    command: &'a str,
    artifact: &'a str,
    config_sha256: &'a str,
    seed: Option<u64>,
    inputs: &'a [InputDigest],
    version: &'a str,
}

pub struct Writer {
    command: &'static str,
    dir: PathBuf,
    config_hash: String,
    seed: Option<u64>,
    inputs: Vec<InputDigest>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Writer {
    /// Prepares the output directory and records the effective configuration
    /// as `config.json`, which reproduces the run when passed to `--config`.
    pub fn new(command: &'static str, config: &RunConfig, seed: Option<u64>) -> Result<Self> {
        fs::create_dir_all(&config.out)?;
        let inputs = config
            .inputs
            .iter()
            .map(|p| {
                Ok(InputDigest {
                    path: p.display().to_string(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect::<Result<_>>()?;
        let w = Self {
            command,
            dir: config.out.clone(),
            config_hash: config.hash()?,
            seed,
            inputs,
        };
        w.write("config.json", |b| {
            b.extend(config.to_json()?.into_bytes());
            b.push(b'\n');
            Ok(())
        })?;
        Ok(w)
    }

    /// Writes `name` through `fill` and then its sidecar.
    pub fn write(&self, name: &str, fill: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        fill(&mut buf)?;
        fs::write(self.dir.join(name), buf)?;
        let meta = Sidecar {
            command: self.command,
            artifact: name,
            config_sha256: &self.config_hash,
            seed: self.seed,
            inputs: &self.inputs,
            version: env!("CARGO_PKG_VERSION"),
        };
        let text = serde_json::to_string_pretty(&meta)?;
        fs::write(self.dir.join(format!("{name}.meta.json")), text + "\n")?;
        Ok(())
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        self.write(name, |buf| {
            serde_json::to_writer_pretty(&mut *buf, value).map_err(Error::from)?;
            buf.push(b'\n');
            Ok(())
        })
    }
}
