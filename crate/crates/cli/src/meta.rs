//! Output metadata and CSV plumbing.
//!
//! Every output file embeds the tool version, a hash of the effective config,
//! and the seed(s). CSV files carry these as `#` comment lines; the creation
//! timestamp is also a comment line and is the only nondeterministic byte in
//! any output, so the data region (header + rows) is byte-stable across
//! re-runs. Floats print with `.` decimals via Rust's shortest round-trip
//! formatting; lines end with LF.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// SHA-256 over the canonical JSON serialization of the effective config.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let canonical = serde_json::to_string(config).context("serializing effective config")?;
    let digest = Sha256::digest(canonical.as_bytes());
    let mut hex = String::with_capacity(64);
    for byte in digest {
        write!(hex, "{byte:02x}").unwrap();
    }
    Ok(hex)
}

#[derive(Debug, Clone)]
pub struct OutputMeta {
    pub config_hash: String,
    pub seeds: String,
}

impl OutputMeta {
    pub fn new<T: Serialize>(config: &T, seeds: String) -> Result<Self> {
        Ok(Self {
            config_hash: config_hash(config)?,
            seeds,
        })
    }

    /// `#`-prefixed comment block; `created_utc` is excluded from the hashed
    /// region when outputs are compared.
    pub fn comment_block(&self) -> String {
        format!(
            "# tool_version={}\n# config_hash={}\n# seed={}\n# created_utc={}\n",
            TOOL_VERSION,
            self.config_hash,
            self.seeds,
            chrono::Utc::now().to_rfc3339(),
        )
    }
}

/// CSV writer with a fixed header and LF line endings.
pub struct CsvFile {
    buffer: String,
}

impl CsvFile {
    pub fn new(meta: &OutputMeta, header: &str) -> Self {
        let mut buffer = meta.comment_block();
        buffer.push_str(header);
        buffer.push('\n');
        Self { buffer }
    }

    pub fn row(&mut self, fields: &[String]) {
        self.buffer.push_str(&fields.join(","));
        self.buffer.push('\n');
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
        fs::write(path, &self.buffer).with_context(|| format!("writing {}", path.display()))
    }
}

/// Echoes the merged effective config (with schema version and command name)
/// into the output directory.
pub fn echo_config<T: Serialize>(config: &T, command: &str, out_dir: &Path) -> Result<()> {
    let mut doc = serde_json::to_value(config)?;
    let map = doc.as_object_mut().expect("configs serialize as objects");
    map.insert("version".into(), crate::config::CONFIG_SCHEMA_VERSION.into());
    map.insert("command".into(), command.into());
    fs::create_dir_all(out_dir)?;
    let path = out_dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&doc)?)
        .with_context(|| format!("writing {}", path.display()))
}

/// Shortest round-trip decimal for a float; empty string for `None`.
pub fn fmt_opt<T: std::fmt::Display>(value: Option<T>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}
