//! Run configuration: TOML with one section per concern.
//!
//! ```toml
//! scenario = "network"
//! seed = 7
//!
//! [sim]
//! nodes = 100
//! validators = 10
//!
//! [sim.protocol]
//! block_size = 10
//! ```
//!
//! Every field has a default. The top-level `seed` overrides `sim.seed`;
//! sweep point `n` runs with `seed + n`.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use treechain_sim::config::{ConfigError, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// One honest end-to-end run of the `[sim]` network.
    Network,
    /// Per-validator cost of forming the consensus table, swept over `j`.
    ConsensusFormation,
    /// Per-transaction cost of block generation, swept over the client rate.
    BlockGeneration,
    LoadBalancing,
    DoubleSpend,
    /// Blocks scanned per lookup, swept over `j` on a fixed transaction set.
    Retrieval,
    BruteForce,
    /// Every attack scenario, one summary row each.
    Adversary,
    Failover,
    /// Setup-round bytes against the overhead formula, swept over `j`.
    Overhead,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Network => "network",
            Scenario::ConsensusFormation => "consensus-formation",
            Scenario::BlockGeneration => "block-generation",
            Scenario::LoadBalancing => "load-balancing",
            Scenario::DoubleSpend => "double-spend",
            Scenario::Retrieval => "retrieval",
            Scenario::BruteForce => "brute-force",
            Scenario::Adversary => "adversary",
            Scenario::Failover => "failover",
            Scenario::Overhead => "overhead",
        }
    }

    fn default_sweep(self) -> Option<Sweep> {
        let s = |from, to, step| Some(Sweep { from, to, step });
        match self {
            Scenario::ConsensusFormation => s(10, 500, 10),
            Scenario::BlockGeneration => s(10, 250, 10),
            Scenario::Retrieval => s(10, 250, 10),
            Scenario::Overhead => s(5, 50, 5),
            _ => None,
        }
    }
}

/// Inclusive `from..=to` in steps of `step`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub from: u64,
    pub to: u64,
    pub step: u64,
}

impl Sweep {
    pub fn points(&self) -> Vec<u64> {
        (self.from..=self.to).step_by(self.step.max(1) as usize).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub transactions: usize,
    pub block_size: usize,
    pub queries: usize,
    /// Table size of the forest written by `export`.
    pub j: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig { transactions: 100_000, block_size: 10, queries: 2_000, j: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    /// Brute-force table sizes.
    pub j: Vec<usize>,
    pub trials: usize,
    /// Timestamp slack the attacker may use, in ms.
    pub window: u64,
    pub budget: u64,
    /// Fraction of in-range transactions a selective dropper discards.
    pub drop_fraction: f64,
    /// Fresh in-range samples routed after a split.
    pub samples: usize,
    /// Sybil run: certified identities and uncertified extra keys.
    pub sybil_certified: usize,
    pub sybil_keys: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            j: vec![5, 10, 20, 50],
            trials: 1_000,
            window: 10_000,
            budget: 1_000_000,
            drop_fraction: 1.0,
            samples: 10_000,
            sybil_certified: 1,
            sybil_keys: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlockGenConfig {
    /// Logical length of the generated stream, in ms.
    pub duration: u64,
}

impl Default for BlockGenConfig {
    fn default() -> Self {
        BlockGenConfig { duration: 20_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub scenario: Scenario,
    pub seed: u64,
    /// Sweep workers; 0 uses every available core.
    pub threads: usize,
    /// Write the full simulator trace, not only its hash.
    pub full_trace: bool,
    pub sweep: Option<Sweep>,
    pub sim: SimConfig,
    pub retrieval: RetrievalConfig,
    pub attack: AttackConfig,
    pub block_generation: BlockGenConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            scenario: Scenario::Network,
            seed: 42,
            threads: 0,
            full_trace: true,
            sweep: None,
            sim: SimConfig::default(),
            retrieval: RetrievalConfig::default(),
            attack: AttackConfig::default(),
            block_generation: BlockGenConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{path}:{line}: {message}")]
pub struct ConfigFileError {
    pub path: String,
    /// 1-based; 0 when the file could not be read at all.
    pub line: usize,
    pub message: String,
}

fn line_at(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].matches('\n').count() + 1
}

/// Line of the first `key = ...` assignment, else of the `[sim]` header.
fn line_of_key(src: &str, key: &str) -> usize {
    let at = |pred: &dyn Fn(&str) -> bool| src.lines().position(|l| pred(l.trim_start())).map(|i| i + 1);
    at(&|l| l.strip_prefix(key).is_some_and(|r| r.trim_start().starts_with('=')))
        .or_else(|| at(&|l| l.starts_with("[sim")))
        .unwrap_or(1)
}

impl BenchConfig {
    /// Parses and validates; `path` only labels error messages.
    pub fn parse(src: &str, path: &str) -> Result<BenchConfig, ConfigFileError> {
        let err = |line, message: String| ConfigFileError { path: path.to_string(), line, message };
        let mut cfg: BenchConfig = toml::from_str(src).map_err(|e| {
            let line = e.span().map_or(1, |Range { start, .. }| line_at(src, start));
            err(line, e.message().trim().replace('\n', "; "))
        })?;
        cfg.sim.seed = cfg.seed;
        if cfg.sweep.is_none() {
            cfg.sweep = cfg.scenario.default_sweep();
        }
        if let Some(s) = cfg.sweep {
            if s.step == 0 || s.from > s.to || s.from == 0 {
                return Err(err(line_of_key(src, "step"), "sweep needs 1 <= from <= to and step >= 1".into()));
            }
        }
        if cfg.retrieval.block_size == 0 || cfg.retrieval.j == 0 {
            return Err(err(line_of_key(src, "block_size"), "retrieval block_size and j must be positive".into()));
        }
        if cfg.attack.j.contains(&0) || !(0.0..=1.0).contains(&cfg.attack.drop_fraction) {
            return Err(err(line_of_key(src, "j"), "attack j must be positive and drop_fraction in 0..=1".into()));
        }
        // Sweeps override the swept size, so only the plain network needs a
        // runnable [sim] as written.
        let sim_used = matches!(cfg.scenario, Scenario::Network | Scenario::BlockGeneration);
        if sim_used {
            cfg.sim.validate().map_err(|e| {
                let key = match &e {
                    ConfigError::Unknown { field, .. } => field,
                    ConfigError::Invalid(_) => "validators",
                };
                err(line_of_key(src, key), e.to_string())
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<BenchConfig, ConfigFileError> {
        let label = path.display().to_string();
        let src = std::fs::read_to_string(path)
            .map_err(|e| ConfigFileError { path: label.clone(), line: 0, message: e.to_string() })?;
        BenchConfig::parse(&src, &label)
    }

    pub fn workers(&self) -> usize {
        match self.threads {
            0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
            n => n,
        }
    }

    pub fn points(&self) -> Vec<u64> {
        self.sweep.map(|s| s.points()).unwrap_or_default()
    }
}
