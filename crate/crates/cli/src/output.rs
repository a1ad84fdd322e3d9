//! Output directories, manifests and the seed-list argument.

use std::fmt;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Seeds given as `3`, `0,4,9` or the half-open range `0..20`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Seeds(pub Vec<u64>);

impl FromStr for Seeds {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |p: &str| format!("`{p}` is not a seed; use a list like 0,1,2 or a range like 0..20");
        let seeds = if let Some((a, b)) = s.split_once("..") {
            let a: u64 = a.trim().parse().map_err(|_| bad(s))?;
            let b: u64 = b.trim().parse().map_err(|_| bad(s))?;
            (a..b).collect()
        } else {
            s.split(',')
                .map(|p| p.trim().parse().map_err(|_| bad(p)))
                .collect::<Result<Vec<u64>, _>>()?
        };
        if seeds.is_empty() {
            return Err(format!("`{s}` names no seeds"));
        }
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != seeds.len() {
            return Err(format!("`{s}` repeats a seed"));
        }
        Ok(Seeds(seeds))
    }
}

impl fmt::Display for Seeds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(u64::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

/// Collects the files a command writes under one output directory and
/// records them in `manifest.json`.
pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating output directory {}", root.display()))?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    /// Opens `rel` for writing, creating parent directories.
    pub fn file(&mut self, rel: &str) -> Result<BufWriter<File>> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        let f = File::create(&path).with_context(|| format!("writing {}", path.display()))?;
        self.written.push(rel.to_string());
        Ok(BufWriter::new(f))
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn record(&mut self, rel: &str) {
        self.written.push(rel.to_string());
    }

    pub fn csv(&mut self, rel: &str) -> Result<csv::Writer<BufWriter<File>>> {
        Ok(csv::Writer::from_writer(self.file(rel)?))
    }

    /// Writes `manifest.json` describing `config` and every file written so
    /// far. Contains nothing run-specific, so equal configurations produce
    /// byte-identical manifests.
    pub fn finish<C: Serialize>(mut self, command: &str, config: &C, seeds: &[u64]) -> Result<PathBuf> {
        let config = serde_json::to_value(config)?;
        let hash = Sha256::digest(serde_json::to_vec(&config)?);
        let hex: String = hash.iter().map(|b| format!("{b:02x}")).collect();
        self.written.sort();
        let manifest = serde_json::json!({
            "tool": "colosim",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "config_hash": hex,
            "seeds": seeds,
            "config": config,
            "outputs": self.written,
        });
        let path = self.root.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

pub fn check_fraction(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v < 1.0) {
        bail!("{name} must lie strictly between 0 and 1, got {v}");
    }
    Ok(())
}

/// Lower-case, filesystem-friendly version of a scenario name.
pub fn slug(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c.to_ascii_lowercase() } else { '_' })
        .collect();
    if s.is_empty() { "scenario".into() } else { s }
}
