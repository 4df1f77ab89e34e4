use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use amdft_core::Result;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputFile {
    pub file: String,
    pub sha256: String,
}

/// Provenance of one command run. Only the two timestamps vary between
/// identical runs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<String>,
    pub config_sha256: Option<String>,
    pub resolved_seed: u64,
    pub versions: Versions,
    pub input: String,
    pub input_sha256: String,
    pub outputs: Vec<OutputFile>,
    pub started_at: String,
    pub finished_at: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    pub amdft: String,
    pub report_format: u32,
}

impl Default for Versions {
    fn default() -> Self {
        Versions {
            amdft: env!("CARGO_PKG_VERSION").to_string(),
            report_format: 1,
        }
    }
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Writes files into the output directory and remembers their hashes.
pub struct OutputDir {
    root: PathBuf,
    written: Vec<OutputFile>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<OutputDir> {
        fs::create_dir_all(root)?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::File::create(self.root.join(name))?.write_all(bytes)?;
        self.written.push(OutputFile {
            file: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| amdft_core::Error::Numerical(e.to_string()))?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    /// Renders with a CSV writer closure into memory first.
    pub fn write_with<F>(&mut self, name: &str, f: F) -> Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<()>,
    {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write_bytes(name, &buf)
    }

    pub fn finish(mut self, mut manifest: RunManifest) -> Result<()> {
        manifest.outputs = std::mem::take(&mut self.written);
        manifest.finished_at = now();
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| amdft_core::Error::Numerical(e.to_string()))?;
        fs::write(self.root.join("manifest.json"), text + "\n")?;
        Ok(())
    }
}
