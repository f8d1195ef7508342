//! A Tree-Chain network on the simulator: every process is a protocol node
//! and the shared environment is the certification registry.

use std::collections::BTreeMap;
use std::sync::Arc;

use treechain_core::codec::Digest;
use treechain_core::consensus::Registry;
use treechain_core::ledger::LedgerForest;
use treechain_core::node::{Effect, Input, Node, NodeConfig, NodeEvent, Role, Timer};
use treechain_core::protocol::Message;

use crate::config::{ConfigError, SimConfig};
use crate::net::{NodeId, Out, Payload, Process, Simulation};
use crate::workload;

impl Payload for Message {
    fn kind(&self) -> &'static str {
        Message::kind(self)
    }

    fn wire_size(&self) -> usize {
        Message::wire_size(self)
    }
}

pub struct Peer(pub Node);

type Outs = Vec<Out<Message, Timer, NodeEvent>>;

fn convert(fx: Vec<Effect>) -> Outs {
    fx.into_iter()
        .map(|e| match e {
            Effect::Send { to, msg } => Out::Send { to, msg },
            Effect::Broadcast(m) => Out::Broadcast(m),
            Effect::Timer { at, timer } => Out::Timer { at, timer },
            Effect::Event(n) => Out::Note(n),
        })
        .collect()
}

impl Process for Peer {
    type Msg = Message;
    type Timer = Timer;
    type Note = NodeEvent;
    type Env = Registry;

    fn start(&mut self, now: u64, env: &mut Registry) -> Outs {
        convert(self.0.handle(now, env, Input::Start))
    }

    fn timer(&mut self, now: u64, env: &mut Registry, t: Timer) -> Outs {
        convert(self.0.handle(now, env, Input::Timer(t)))
    }

    fn deliver(&mut self, now: u64, env: &mut Registry, from: NodeId, msg: &Message) -> Outs {
        convert(self.0.handle(now, env, Input::Deliver { from, msg }))
    }
}

pub struct World {
    pub cfg: SimConfig,
    pub node_cfg: Arc<NodeConfig>,
    pub sim: Simulation<Peer>,
    end: u64,
}

/// Per-node seed; distinct nodes get unrelated streams.
pub fn node_seed(seed: u64, node: NodeId) -> u64 {
    seed.wrapping_mul(0x2545_f491_4f6c_dd1d) ^ (node as u64).wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

impl World {
    pub fn new(cfg: &SimConfig) -> Result<World, ConfigError> {
        cfg.validate()?;
        let node_cfg = Arc::new(cfg.node_config()?);
        let j = cfg.validators;
        let nodes = (0..cfg.nodes)
            .map(|id| {
                let role = Role { candidate: id < j, reserve: id >= j && id < j + cfg.reserves };
                Peer(Node::new(id, Arc::clone(&node_cfg), role, cfg.behaviour_of(id), node_seed(cfg.seed, id)))
            })
            .collect();
        let mut sim = Simulation::new(nodes, Registry::new(), cfg.net_config()?);
        for c in &cfg.network.crashes {
            sim.crash(c.node, c.at);
        }
        for p in workload::plan(cfg)? {
            sim.schedule_timer(p.at, p.node, Timer::Submit(p.submission));
        }
        Ok(World { cfg: cfg.clone(), node_cfg, sim, end: cfg.end_time()? })
    }

    /// Runs to the activation of the last configured epoch, inclusive.
    pub fn run(&mut self) {
        self.sim.run_until(self.end);
    }

    pub fn end(&self) -> u64 {
        self.end
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.sim.node(id).0
    }

    pub fn forest(&self, id: NodeId) -> &LedgerForest {
        self.node(id).forest()
    }

    pub fn notes(&self) -> impl Iterator<Item = &(u64, NodeId, NodeEvent)> {
        self.sim.notes().iter()
    }

    /// Every `(time, node, event)` the filter maps to something.
    pub fn collect<T>(&self, f: impl Fn(u64, NodeId, &NodeEvent) -> Option<T>) -> Vec<T> {
        self.notes().filter_map(|(t, n, e)| f(*t, *n, e)).collect()
    }

    /// Transactions handed to the network, with their spent input.
    pub fn submitted(&self) -> Vec<(Digest, Option<Digest>)> {
        self.collect(|_, _, e| match e {
            NodeEvent::TxSubmitted { t_id, input } => Some((*t_id, *input)),
            _ => None,
        })
    }

    /// How often each transaction appears across all ledgers of `id`'s forest.
    pub fn commit_counts(&self, id: NodeId) -> BTreeMap<Digest, usize> {
        let mut counts = BTreeMap::new();
        for l in self.forest(id).ledgers() {
            for b in &l.blocks {
                for t in &b.transactions {
                    *counts.entry(t.t_id).or_insert(0) += 1;
                }
            }
        }
        counts
    }
}
