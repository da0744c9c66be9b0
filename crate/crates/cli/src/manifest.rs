use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use flowlab::config::KeyValues;
use flowlab::Result;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one invocation, written next to its outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub code_version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn start(subcommand: &str, seed: u64) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            config: BTreeMap::new(),
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix: now(),
            finished_unix: 0,
        }
    }

    pub fn with_config(mut self, kv: &KeyValues) -> Self {
        self.config = kv
            .keys()
            .map(|k| (k.to_string(), kv.get_str(k).unwrap_or_default().to_string()))
            .collect();
        self
    }

    pub fn input(&mut self, what: impl Into<String>) {
        self.inputs.push(what.into());
    }

    /// Register `name` under `dir` as an output and return its path.
    pub fn output(&mut self, dir: &Path, name: &str) -> PathBuf {
        let p = dir.join(name);
        self.outputs.push(p.display().to_string());
        p
    }

    pub fn finish(mut self, dir: &Path) -> Result<()> {
        self.finished_unix = now();
        flowlab::ood::write_json(dir.join(MANIFEST_FILE), &self)
    }
}
