//! Output directory handling and report headers.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Refusal to replace an existing artifact.
#[derive(Debug)]
pub struct OutputExists(pub PathBuf);

impl std::fmt::Display for OutputExists {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} already exists; pass --force to overwrite", self.0.display())
    }
}

impl std::error::Error for OutputExists {}

/// A required input path is missing.
#[derive(Debug)]
pub struct MissingInput(pub PathBuf);

impl std::fmt::Display for MissingInput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "input not found: {}", self.0.display())
    }
}

impl std::error::Error for MissingInput {}

/// Provenance stamped on every report.
#[derive(Debug, Clone, Serialize)]
pub struct Stamp {
    pub tool: &'static str,
    pub version: &'static str,
    pub seed: u64,
    pub config_hash: String,
}

impl Stamp {
    pub fn new(seed: u64, config: &serde_json::Value) -> Self {
        let digest = Sha256::digest(config.to_string().as_bytes());
        Stamp {
            tool: "lifecycle",
            version: env!("CARGO_PKG_VERSION"),
            seed,
            config_hash: hex(&digest[..8]),
        }
    }

    pub fn line(&self) -> String {
        format!(
            "# {} {} seed={} config={}",
            self.tool, self.version, self.seed, self.config_hash
        )
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 of a file's contents, hex encoded.
pub fn file_digest(path: &Path) -> Result<String> {
    let mut file = File::open(path).with_context(|| format!("reading {}", path.display()))?;
    let mut hasher = Sha256::new();
    std::io::copy(&mut file, &mut hasher).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex(&hasher.finalize()))
}

pub struct OutDir {
    root: PathBuf,
    force: bool,
    pub stamp: Stamp,
}

impl OutDir {
    pub fn new(root: PathBuf, force: bool, stamp: Stamp) -> Self {
        OutDir { root, force, stamp }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Fail before any work when an artifact would be replaced.
    pub fn guard(&self, names: &[&str]) -> Result<()> {
        if self.force {
            return Ok(());
        }
        for n in names {
            let p = self.path(n);
            if p.exists() {
                return Err(OutputExists(p).into());
            }
        }
        Ok(())
    }

    /// Open an artifact for writing, creating parent directories.
    pub fn create(&self, name: &str) -> Result<BufWriter<File>> {
        let p = self.path(name);
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        let mut opts = OpenOptions::new();
        opts.write(true);
        if self.force {
            opts.create(true).truncate(true);
        } else {
            opts.create_new(true);
        }
        let file = opts.open(&p).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                anyhow::Error::new(OutputExists(p.clone()))
            } else {
                anyhow::Error::new(e).context(format!("creating {}", p.display()))
            }
        })?;
        log::info!("writing {}", p.display());
        Ok(BufWriter::new(file))
    }

    /// A CSV report: stamp line, then whatever `body` writes.
    pub fn csv<F>(&self, name: &str, body: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<()>,
    {
        let mut w = self.create(name)?;
        writeln!(w, "{}", self.stamp.line())?;
        body(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// A JSON report wrapped as `{"meta": stamp, "data": value}`.
    pub fn json<T: Serialize>(&self, name: &str, data: &T) -> Result<()> {
        #[derive(Serialize)]
        struct Wrapped<'a, T> {
            meta: &'a Stamp,
            data: &'a T,
        }
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(
            &mut w,
            &Wrapped {
                meta: &self.stamp,
                data,
            },
        )?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }
}
