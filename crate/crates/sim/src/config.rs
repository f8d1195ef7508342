//! Scenario configuration, deserializable from TOML.

use serde::{Deserialize, Serialize};
use treechain_core::consensus::EpochSchedule;
use treechain_core::node::{Behaviour, BlockMode, NodeConfig};
use treechain_core::range::ConsensusCodeRange;
use treechain_core::sig::Scheme;

use crate::net::{DropRule, Latency, NetConfig, NodeId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    /// Network size `i`.
    pub nodes: usize,
    /// Interest submitters `j`; nodes `0..validators`.
    pub validators: usize,
    /// Mid-epoch recruits; the nodes right after the candidates.
    pub reserves: usize,
    /// Epochs to run; the run ends when epoch `epochs` activates.
    pub epochs: u64,
    pub protocol: ProtocolConfig,
    pub network: NetworkConfig,
    pub workload: WorkloadConfig,
    pub adversary: Vec<AdversaryConfig>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 42,
            nodes: 20,
            validators: 5,
            reserves: 0,
            epochs: 2,
            protocol: ProtocolConfig::default(),
            network: NetworkConfig::default(),
            workload: WorkloadConfig::default(),
            adversary: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    /// Epoch length in ms.
    pub delta: u64,
    /// Setup window before each epoch start, in ms.
    pub eth: u64,
    pub block_size: usize,
    pub block_interval: u64,
    /// `size`, `time` or `hybrid`.
    pub block_mode: String,
    pub validity: u64,
    pub tick: u64,
    pub dos_threshold: u64,
    pub silence_window: u64,
    pub reply_window: u64,
    pub expiry_margin: u64,
    pub failover: bool,
    pub dos_replacement: bool,
    pub load_balancing: bool,
    /// `ed25519` or `hash` (keyed-hash stand-in, for large sweeps).
    pub scheme: String,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        let d = NodeConfig::default();
        ProtocolConfig {
            delta: d.schedule.delta,
            eth: d.schedule.eth,
            block_size: d.block_size,
            block_interval: d.block_interval,
            block_mode: "hybrid".into(),
            validity: d.validity,
            tick: d.tick,
            dos_threshold: d.dos_threshold,
            silence_window: d.silence_window,
            reply_window: d.reply_window,
            expiry_margin: d.expiry_margin,
            failover: d.failover,
            dos_replacement: d.dos_replacement,
            load_balancing: d.load_balancing,
            scheme: "ed25519".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub latency_min: u64,
    pub latency_max: u64,
    /// `uniform` or `fixed` (uses `latency_min`).
    pub latency: String,
    pub drops: Vec<DropConfig>,
    pub crashes: Vec<CrashConfig>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            latency_min: 5,
            latency_max: 50,
            latency: "uniform".into(),
            drops: Vec::new(),
            crashes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DropConfig {
    pub from: Option<NodeId>,
    pub to: Option<NodeId>,
    pub prob: f64,
    pub start: Option<u64>,
    pub end: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrashConfig {
    pub node: NodeId,
    pub at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadConfig {
    /// Poisson submission rate per node, in transactions per second.
    pub rate: f64,
    /// Share of submissions that spend an earlier output.
    pub spend_share: f64,
    /// Submission window in ms; `stop` defaults to just before the last setup.
    pub start: Option<u64>,
    pub stop: Option<u64>,
    /// Only these nodes submit; empty means all.
    pub clients: Vec<NodeId>,
    pub hot: Option<HotConfig>,
    pub double_spends: Vec<CrashConfig>,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            rate: 0.2,
            spend_share: 0.1,
            start: None,
            stop: None,
            clients: Vec::new(),
            hot: None,
            double_spends: Vec::new(),
        }
    }
}

/// Extra load aimed at one code range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HotConfig {
    pub range: String,
    /// Network-wide rate in transactions per second.
    pub rate: f64,
    pub start: u64,
    pub stop: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdversaryConfig {
    pub node: NodeId,
    pub drop_fraction: f64,
    pub collude: bool,
    pub stall: Option<(u64, u64)>,
    pub sybil_keys: usize,
    pub extra_certified: usize,
    pub reuse_key: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown {field} value `{value}`")]
    Unknown { field: &'static str, value: String },
    #[error("{0}")]
    Invalid(String),
}

impl SimConfig {
    pub fn schedule(&self) -> Result<EpochSchedule, ConfigError> {
        EpochSchedule::new(self.protocol.delta, self.protocol.eth)
            .ok_or_else(|| ConfigError::Invalid("eth must lie in 16..delta".into()))
    }

    /// Time at which epoch `epochs` activates, the natural end of a run.
    pub fn end_time(&self) -> Result<u64, ConfigError> {
        Ok(self.schedule()?.epoch_start(self.epochs))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.validators == 0 || self.validators > self.nodes {
            return bad(format!("validators must be in 1..={}", self.nodes));
        }
        if self.validators + self.reserves > self.nodes {
            return bad("validators + reserves exceeds nodes".into());
        }
        if self.protocol.block_size == 0 {
            return bad("block_size must be positive".into());
        }
        if self.protocol.tick == 0 {
            return bad("tick must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.workload.spend_share) || self.workload.rate < 0.0 {
            return bad("workload rate and spend_share out of range".into());
        }
        if self.network.latency_max < self.network.latency_min {
            return bad("latency_max below latency_min".into());
        }
        let in_net = |n: &NodeId| *n < self.nodes;
        let nodes_ok = self.adversary.iter().all(|a| in_net(&a.node) && (0.0..=1.0).contains(&a.drop_fraction))
            && self.network.crashes.iter().all(|c| in_net(&c.node))
            && self.workload.clients.iter().all(in_net)
            && self.workload.double_spends.iter().all(|c| in_net(&c.node))
            && self.network.drops.iter().all(|d| d.from.is_none_or(|n| in_net(&n)) && d.to.is_none_or(|n| in_net(&n)));
        if !nodes_ok {
            return bad("node index out of range or bad fraction".into());
        }
        if let Some(h) = &self.workload.hot {
            ConsensusCodeRange::parse(&h.range).map_err(|e| ConfigError::Invalid(format!("hot range: {e}")))?;
        }
        self.node_config()?;
        self.net_config()?;
        Ok(())
    }

    pub fn node_config(&self) -> Result<NodeConfig, ConfigError> {
        let p = &self.protocol;
        let block_mode = match p.block_mode.as_str() {
            "size" => BlockMode::BySize,
            "time" => BlockMode::ByTime,
            "hybrid" => BlockMode::Hybrid,
            v => return Err(ConfigError::Unknown { field: "block_mode", value: v.into() }),
        };
        let scheme = match p.scheme.as_str() {
            "ed25519" => Scheme::Ed25519,
            "hash" => Scheme::HashStandIn,
            v => return Err(ConfigError::Unknown { field: "scheme", value: v.into() }),
        };
        Ok(NodeConfig {
            schedule: self.schedule()?,
            block_size: p.block_size,
            block_interval: p.block_interval,
            block_mode,
            validity: p.validity,
            expiry_margin: p.expiry_margin,
            tick: p.tick,
            dos_threshold: p.dos_threshold,
            silence_window: p.silence_window,
            reply_window: p.reply_window,
            failover: p.failover,
            dos_replacement: p.dos_replacement,
            load_balancing: p.load_balancing,
            scheme,
            ..NodeConfig::default()
        })
    }

    pub fn net_config(&self) -> Result<NetConfig, ConfigError> {
        let n = &self.network;
        let latency = match n.latency.as_str() {
            "uniform" => Latency::Uniform { min: n.latency_min, max: n.latency_max },
            "fixed" => Latency::Fixed(n.latency_min),
            v => return Err(ConfigError::Unknown { field: "latency", value: v.into() }),
        };
        let drops = n
            .drops
            .iter()
            .map(|d| DropRule {
                from: d.from,
                to: d.to,
                prob: d.prob,
                window: match (d.start, d.end) {
                    (None, None) => None,
                    (a, b) => Some((a.unwrap_or(0), b.unwrap_or(u64::MAX))),
                },
            })
            .collect();
        Ok(NetConfig { seed: self.seed, latency, drops })
    }

    pub fn behaviour_of(&self, node: NodeId) -> Behaviour {
        self.adversary
            .iter()
            .find(|a| a.node == node)
            .map(|a| Behaviour {
                drop_fraction: a.drop_fraction,
                collude: a.collude,
                stall: a.stall,
                sybil_keys: a.sybil_keys,
                extra_certified: a.extra_certified,
                reuse_key: a.reuse_key,
            })
            .unwrap_or_default()
    }
}
