//! Output directory bookkeeping and the content-hash manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.txt";

/// Artifacts written under one output directory, in creation order.
pub struct OutputDir {
    root: PathBuf,
    files: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)
            .with_context(|| format!("creating output directory {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    /// Absolute path for `rel`, registered as an artifact. The caller writes it.
    pub fn path(&mut self, rel: &str) -> Result<PathBuf> {
        let p = self.root.join(rel);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir)?;
        }
        if !self.files.iter().any(|f| f == rel) {
            self.files.push(rel.to_string());
        }
        Ok(p)
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let p = self.path(rel)?;
        fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))
    }

    /// Writes through a closure that renders into a buffer.
    pub fn write_with(
        &mut self,
        rel: &str,
        f: impl FnOnce(&mut Vec<u8>) -> rdm_core::Result<()>,
    ) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(rel, &buf)
    }

    /// Writes `manifest.txt`: the seed and command, then one
    /// `<sha256>  <relative path>` line per artifact.
    pub fn finish(self, seed: u64, command: &str) -> Result<()> {
        let mut out = Vec::new();
        writeln!(out, "# seed {seed}")?;
        writeln!(out, "# command {command}")?;
        for rel in &self.files {
            let bytes = fs::read(self.root.join(rel)).with_context(|| format!("hashing {rel}"))?;
            writeln!(out, "{}  {}", hex::encode(Sha256::digest(&bytes)), rel)?;
        }
        fs::write(self.root.join(MANIFEST), out)?;
        Ok(())
    }
}
