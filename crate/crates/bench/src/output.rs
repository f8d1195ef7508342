//! The files a run leaves in its output directory.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::BenchConfig;

pub const METRICS: &str = "metrics.csv";
pub const TRACE: &str = "trace.txt";
pub const MANIFEST: &str = "manifest.toml";
pub const FOREST: &str = "forest.tcf";

pub struct OutDir(PathBuf);

impl OutDir {
    pub fn create(path: &Path) -> io::Result<OutDir> {
        fs::create_dir_all(path)?;
        Ok(OutDir(path.to_path_buf()))
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }

    /// Header row from the field names of `R`, then one row per item.
    pub fn write_csv<R: Serialize>(&self, name: &str, rows: &[R]) -> io::Result<()> {
        let mut w = csv::Writer::from_path(self.path(name))?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()
    }

    pub fn write_text(&self, name: &str, text: &str) -> io::Result<()> {
        fs::write(self.path(name), text)
    }

    pub fn write_bytes(&self, name: &str, bytes: &[u8]) -> io::Result<()> {
        fs::write(self.path(name), bytes)
    }

    pub fn write_manifest(&self, cfg: &BenchConfig) -> io::Result<()> {
        self.write_text(MANIFEST, &manifest(cfg))
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'static str,
    scenario: &'static str,
    seed: u64,
    dictionary: &'static str,
    config: &'a BenchConfig,
}

/// Library version, seed and the effective configuration with every
/// default filled in.
pub fn manifest(cfg: &BenchConfig) -> String {
    let m = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        scenario: cfg.scenario.name(),
        seed: cfg.seed,
        dictionary: "default: 0-9 weigh 0-9, A-Z 11-36, a-z 37-62",
        config: cfg,
    };
    toml::to_string(&m).expect("config types serialize to TOML")
}
