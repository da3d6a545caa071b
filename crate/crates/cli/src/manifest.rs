use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, Serialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct PhaseTiming {
    pub phase: String,
    pub seconds: f64,
}

/// Provenance record written next to every output artifact.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub argv: Vec<String>,
    pub threads: usize,
    /// The fully resolved configuration the run used.
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub timings: Vec<PhaseTiming>,
    #[serde(skip)]
    clock: Option<(String, Instant)>,
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn new(command: &str, threads: usize) -> Self {
        Self {
            tool: "dvta",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            argv: std::env::args().collect(),
            threads,
            config: serde_json::Value::Null,
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: Vec::new(),
            clock: None,
        }
    }

    pub fn set_config(&mut self, config: &impl Serialize) {
        self.config = serde_json::to_value(config).expect("config serialises");
    }

    pub fn input(&mut self, path: &Path) -> std::io::Result<()> {
        self.inputs.push(FileDigest { path: path.to_path_buf(), sha256: sha256_file(path)? });
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> std::io::Result<()> {
        self.outputs.push(FileDigest { path: path.to_path_buf(), sha256: sha256_file(path)? });
        Ok(())
    }

    /// Closes the running phase, if any, and starts `name`.
    pub fn phase(&mut self, name: &str) {
        self.stop();
        self.clock = Some((name.to_string(), Instant::now()));
    }

    pub fn stop(&mut self) {
        if let Some((phase, start)) = self.clock.take() {
            self.timings.push(PhaseTiming { phase, seconds: start.elapsed().as_secs_f64() });
        }
    }

    pub fn write(&mut self, path: &Path) -> dvta::Result<()> {
        self.stop();
        let json = serde_json::to_string_pretty(self).expect("manifest serialises");
        dvta::dataio::format::write_atomic(path, json.as_bytes())
    }
}
