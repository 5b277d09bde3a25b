//! The JSON report wrapper every command emits, and crash-safe file output.

use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEnvelope {
    pub tool_version: String,
    pub command: String,
    /// SHA-256 over every input, in argument order.
    pub inputs_digest: String,
    pub seed: Option<u64>,
    pub payload: serde_json::Value,
    pub warnings: Vec<String>,
}

impl ReportEnvelope {
    pub fn new<P: Serialize>(
        command: &str,
        inputs: &Inputs,
        seed: Option<u64>,
        payload: &P,
        warnings: Vec<String>,
    ) -> Result<Self> {
        Ok(ReportEnvelope {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            inputs_digest: inputs.digest(),
            seed,
            payload: serde_json::to_value(payload).context("serializing report payload")?,
            warnings,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("envelope serializes");
        out.push(b'\n');
        out
    }
}

/// Every byte a command consumed, for the envelope digest.
#[derive(Default)]
pub struct Inputs {
    hasher: Sha256,
}

impl Inputs {
    /// Content only, so the same bytes hash alike from a path or stdin.
    pub fn add(&mut self, bytes: &[u8]) {
        // Length-prefixed so that input boundaries are part of the digest.
        self.hasher.update((bytes.len() as u64).to_le_bytes());
        self.hasher.update(bytes);
    }

    pub fn digest(&self) -> String {
        let bytes = self.hasher.clone().finalize();
        bytes.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Reads a file, or standard input for `-`.
pub fn read_input(path: &str, inputs: &mut Inputs) -> Result<Vec<u8>> {
    let bytes = if path == "-" {
        let mut buf = Vec::new();
        std::io::Read::read_to_end(&mut std::io::stdin(), &mut buf).context("reading standard input")?;
        buf
    } else {
        std::fs::read(path).with_context(|| format!("reading {path}"))?
    };
    inputs.add(&bytes);
    Ok(bytes)
}

/// Writes to `path` via a sibling temporary file and rename, or to standard
/// output for `-`.
pub fn write_output(path: &str, bytes: &[u8]) -> Result<()> {
    if path == "-" {
        let mut out = std::io::stdout().lock();
        out.write_all(bytes).context("writing standard output")?;
        return out.flush().context("writing standard output");
    }
    let target = Path::new(path);
    let dir = match target.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating temporary file in {}", dir.display()))?;
    tmp.write_all(bytes).with_context(|| format!("writing {path}"))?;
    tmp.as_file().sync_all().with_context(|| format!("writing {path}"))?;
    tmp.persist(target).with_context(|| format!("renaming into {path}"))?;
    Ok(())
}
