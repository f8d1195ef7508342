//! Seeded discrete-event network.
//!
//! Events fire in `(time, insertion sequence)` order. Each directed link is
//! FIFO: a message never overtakes an earlier one on the same link. All
//! randomness (latency, drops) comes from one ChaCha stream seeded by the
//! configuration, so a seed fully determines a run.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::fmt::{self, Write as _};
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest as _, Sha256};
use treechain_core::codec::Digest;

pub type NodeId = usize;

/// What a network payload reports about itself for accounting.
pub trait Payload {
    fn kind(&self) -> &'static str;
    fn wire_size(&self) -> usize;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Out<M, T, N> {
    Send { to: NodeId, msg: M },
    Broadcast(M),
    Timer { at: u64, timer: T },
    Note(N),
}

/// A simulated node. `Env` is state shared by all processes and owned by the
/// simulation (a stand-in for out-of-band infrastructure).
pub trait Process {
    type Msg: Payload;
    type Timer;
    type Note: fmt::Display + Clone;
    type Env;

    fn start(&mut self, now: u64, env: &mut Self::Env) -> Vec<Out<Self::Msg, Self::Timer, Self::Note>>;
    fn timer(&mut self, now: u64, env: &mut Self::Env, t: Self::Timer) -> Vec<Out<Self::Msg, Self::Timer, Self::Note>>;
    fn deliver(
        &mut self,
        now: u64,
        env: &mut Self::Env,
        from: NodeId,
        msg: &Self::Msg,
    ) -> Vec<Out<Self::Msg, Self::Timer, Self::Note>>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Latency {
    Fixed(u64),
    Uniform { min: u64, max: u64 },
}

impl Latency {
    fn sample(&self, rng: &mut ChaCha8Rng) -> u64 {
        match *self {
            Latency::Fixed(d) => d,
            Latency::Uniform { min, max } => rng.gen_range(min..=max.max(min)),
        }
    }
}

/// Drops messages matching the link filter with probability `prob` while the
/// send time lies in `window`. `None` fields match anything.
#[derive(Debug, Clone, PartialEq)]
pub struct DropRule {
    pub from: Option<NodeId>,
    pub to: Option<NodeId>,
    pub prob: f64,
    pub window: Option<(u64, u64)>,
}

impl DropRule {
    /// Cuts `node` off in both directions.
    pub fn isolate(node: NodeId) -> [DropRule; 2] {
        [
            DropRule { from: Some(node), to: None, prob: 1.0, window: None },
            DropRule { from: None, to: Some(node), prob: 1.0, window: None },
        ]
    }

    fn applies(&self, now: u64, from: NodeId, to: NodeId) -> bool {
        self.from.is_none_or(|f| f == from)
            && self.to.is_none_or(|t| t == to)
            && self.window.is_none_or(|(a, b)| now >= a && now < b)
    }
}

#[derive(Debug, Clone)]
pub struct NetConfig {
    pub seed: u64,
    pub latency: Latency,
    pub drops: Vec<DropRule>,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig { seed: 0, latency: Latency::Uniform { min: 5, max: 50 }, drops: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct KindStats {
    /// Send or broadcast operations.
    pub packets: u64,
    /// Bytes put on the wire; a broadcast counts once.
    pub bytes: u64,
    /// Per-recipient copies scheduled or dropped.
    pub copies: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Metrics {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub timers: u64,
    pub events: u64,
    pub by_kind: BTreeMap<&'static str, KindStats>,
}

impl Metrics {
    pub fn kind(&self, k: &str) -> KindStats {
        self.by_kind.get(k).copied().unwrap_or_default()
    }
}

enum Action<P: Process> {
    Start,
    Timer(P::Timer),
    Deliver { from: NodeId, msg: Rc<P::Msg> },
}

struct Scheduled<P: Process> {
    at: u64,
    seq: u64,
    node: NodeId,
    action: Action<P>,
}

impl<P: Process> PartialEq for Scheduled<P> {
    fn eq(&self, o: &Self) -> bool {
        (self.at, self.seq) == (o.at, o.seq)
    }
}
impl<P: Process> Eq for Scheduled<P> {}
impl<P: Process> PartialOrd for Scheduled<P> {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl<P: Process> Ord for Scheduled<P> {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        (self.at, self.seq).cmp(&(o.at, o.seq))
    }
}

pub struct Simulation<P: Process> {
    now: u64,
    seq: u64,
    queue: BinaryHeap<Reverse<Scheduled<P>>>,
    nodes: Vec<P>,
    pub env: P::Env,
    cfg: NetConfig,
    rng: ChaCha8Rng,
    crashed: Vec<Option<u64>>,
    link_clock: HashMap<(NodeId, NodeId), u64>,
    metrics: Metrics,
    trace: String,
    keep_trace: bool,
    trace_hasher: Sha256,
    notes: Vec<(u64, NodeId, P::Note)>,
}

impl<P: Process> Simulation<P> {
    pub fn new(nodes: Vec<P>, env: P::Env, cfg: NetConfig) -> Simulation<P> {
        let n = nodes.len();
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut sim = Simulation {
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            nodes,
            env,
            cfg,
            rng,
            crashed: vec![None; n],
            link_clock: HashMap::new(),
            metrics: Metrics::default(),
            trace: String::new(),
            keep_trace: false,
            trace_hasher: Sha256::new(),
            notes: Vec::new(),
        };
        for node in 0..n {
            sim.push(0, node, Action::Start);
        }
        sim
    }

    /// Keeps the text trace in memory (it is always hashed).
    pub fn keep_trace(&mut self, keep: bool) {
        self.keep_trace = keep;
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn nodes(&self) -> &[P] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &P {
        &self.nodes[id]
    }

    pub fn metrics(&self) -> &Metrics {
        &self.metrics
    }

    pub fn notes(&self) -> &[(u64, NodeId, P::Note)] {
        &self.notes
    }

    pub fn trace(&self) -> &str {
        &self.trace
    }

    /// SHA-256 of the full text trace so far, kept or not.
    pub fn trace_hash(&self) -> Digest {
        Digest(self.trace_hasher.clone().finalize().into())
    }

    /// Copies currently scheduled for delivery.
    pub fn in_flight(&self) -> u64 {
        self.queue.iter().filter(|Reverse(s)| matches!(s.action, Action::Deliver { .. })).count() as u64
    }

    /// From `at` on, `node` processes nothing and receives nothing.
    pub fn crash(&mut self, node: NodeId, at: u64) {
        self.crashed[node] = Some(at);
    }

    pub fn schedule_timer(&mut self, at: u64, node: NodeId, timer: P::Timer) {
        self.push(at, node, Action::Timer(timer));
    }

    fn push(&mut self, at: u64, node: NodeId, action: Action<P>) {
        self.seq += 1;
        self.queue.push(Reverse(Scheduled { at, seq: self.seq, node, action }));
    }

    fn is_down(&self, node: NodeId, t: u64) -> bool {
        self.crashed[node].is_some_and(|c| t >= c)
    }

    fn line(&mut self, args: fmt::Arguments<'_>) {
        let mut s = String::new();
        s.write_fmt(args).expect("string write");
        s.push('\n');
        self.trace_hasher.update(s.as_bytes());
        if self.keep_trace {
            self.trace.push_str(&s);
        }
    }

    fn account(&mut self, kind: &'static str, bytes: usize, copies: u64) {
        let k = self.metrics.by_kind.entry(kind).or_default();
        k.packets += 1;
        k.bytes += bytes as u64;
        k.copies += copies;
    }

    fn dispatch(&mut self, from: NodeId, to: NodeId, msg: Rc<P::Msg>) {
        self.metrics.sent += 1;
        let now = self.now;
        let mut drop = false;
        for i in 0..self.cfg.drops.len() {
            let rule = &self.cfg.drops[i];
            if rule.applies(now, from, to) {
                let p = rule.prob;
                if p >= 1.0 || self.rng.gen::<f64>() < p {
                    drop = true;
                    break;
                }
            }
        }
        if drop {
            self.metrics.dropped += 1;
            return;
        }
        let lat = self.cfg.latency.sample(&mut self.rng);
        let clock = self.link_clock.entry((from, to)).or_insert(0);
        let at = (now + lat).max(*clock);
        *clock = at;
        self.push(at, to, Action::Deliver { from, msg });
    }

    fn apply(&mut self, node: NodeId, outs: Vec<Out<P::Msg, P::Timer, P::Note>>) {
        let now = self.now;
        for o in outs {
            match o {
                Out::Send { to, msg } => {
                    let (kind, size) = (msg.kind(), msg.wire_size());
                    self.account(kind, size, 1);
                    self.line(format_args!("{now} {node} send {kind} {size} {to}"));
                    self.dispatch(node, to, Rc::new(msg));
                }
                Out::Broadcast(msg) => {
                    let (kind, size) = (msg.kind(), msg.wire_size());
                    let n = self.nodes.len();
                    self.account(kind, size, n as u64 - 1);
                    self.line(format_args!("{now} {node} bcast {kind} {size}"));
                    let msg = Rc::new(msg);
                    for to in (0..n).filter(|&t| t != node) {
                        self.dispatch(node, to, Rc::clone(&msg));
                    }
                }
                Out::Timer { at, timer } => {
                    self.metrics.timers += 1;
                    self.push(at.max(now), node, Action::Timer(timer));
                }
                Out::Note(n) => {
                    self.metrics.events += 1;
                    self.line(format_args!("{now} {node} event {n}"));
                    self.notes.push((now, node, n));
                }
            }
        }
    }

    /// Processes every event with time at most `t_end`.
    pub fn run_until(&mut self, t_end: u64) {
        while let Some(Reverse(top)) = self.queue.peek() {
            if top.at > t_end {
                break;
            }
            let Reverse(ev) = self.queue.pop().expect("peeked");
            assert!(ev.at >= self.now, "event at {} scheduled before clock {}", ev.at, self.now);
            self.now = ev.at;
            if self.is_down(ev.node, ev.at) {
                if matches!(ev.action, Action::Deliver { .. }) {
                    self.metrics.dropped += 1;
                }
                continue;
            }
            let node = ev.node;
            let outs = match ev.action {
                Action::Start => self.nodes[node].start(ev.at, &mut self.env),
                Action::Timer(t) => self.nodes[node].timer(ev.at, &mut self.env, t),
                Action::Deliver { from, msg } => {
                    self.metrics.delivered += 1;
                    self.nodes[node].deliver(ev.at, &mut self.env, from, &msg)
                }
            };
            self.apply(node, outs);
        }
        self.now = self.now.max(t_end);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Clone)]
    struct Ping(u32);

    impl Payload for Ping {
        fn kind(&self) -> &'static str {
            "ping"
        }
        fn wire_size(&self) -> usize {
            10
        }
    }

    /// Node 0 broadcasts once at start and sends `burst` numbered unicasts to
    /// node 1; everyone records what it receives.
    struct Echo {
        id: NodeId,
        burst: u32,
        got: Vec<(u64, NodeId, u32)>,
    }

    impl Process for Echo {
        type Msg = Ping;
        type Timer = ();
        type Note = String;
        type Env = u32;

        fn start(&mut self, _now: u64, _env: &mut u32) -> Vec<Out<Ping, (), String>> {
            if self.id != 0 {
                return Vec::new();
            }
            let mut v = vec![Out::Broadcast(Ping(0))];
            v.extend((1..=self.burst).map(|i| Out::Send { to: 1, msg: Ping(i) }));
            v
        }

        fn timer(&mut self, _now: u64, _env: &mut u32, _t: ()) -> Vec<Out<Ping, (), String>> {
            Vec::new()
        }

        fn deliver(&mut self, now: u64, env: &mut u32, from: NodeId, msg: &Ping) -> Vec<Out<Ping, (), String>> {
            *env += 1;
            self.got.push((now, from, msg.0));
            vec![Out::Note(format!("got {}", msg.0))]
        }
    }

    fn sim(n: usize, burst: u32, cfg: NetConfig) -> Simulation<Echo> {
        let nodes = (0..n).map(|id| Echo { id, burst, got: Vec::new() }).collect();
        Simulation::new(nodes, 0, cfg)
    }

    #[test]
    fn zero_latency_broadcast_reaches_every_other_node_now() {
        let mut s = sim(5, 0, NetConfig { seed: 1, latency: Latency::Fixed(0), drops: Vec::new() });
        s.run_until(0);
        assert_eq!(s.env, 4);
        assert!(s.node(0).got.is_empty());
        for id in 1..5 {
            assert_eq!(s.node(id).got, vec![(0, 0, 0)]);
        }
        assert_eq!(s.metrics().kind("ping"), KindStats { packets: 1, bytes: 10, copies: 4 });
    }

    #[test]
    fn isolation_rule_silences_a_node() {
        let drops = DropRule::isolate(3).to_vec();
        let mut s = sim(5, 0, NetConfig { seed: 1, latency: Latency::Uniform { min: 5, max: 50 }, drops });
        s.run_until(1_000);
        assert!(s.node(3).got.is_empty());
        assert_eq!(s.env, 3);
        let m = s.metrics();
        assert_eq!(m.sent, m.delivered + m.dropped + s.in_flight());
        assert_eq!(m.dropped, 1);
    }

    #[test]
    fn links_are_fifo_and_causal() {
        let mut s = sim(2, 200, NetConfig { seed: 9, latency: Latency::Uniform { min: 1, max: 100 }, drops: Vec::new() });
        s.run_until(10_000);
        let got = &s.node(1).got;
        assert_eq!(got.len(), 201);
        assert!(got.windows(2).all(|w| w[0].2 < w[1].2 && w[0].0 <= w[1].0));
    }

    #[test]
    fn same_seed_same_trace_other_seed_other_trace() {
        let run = |seed| {
            let mut s = sim(6, 20, NetConfig { seed, latency: Latency::Uniform { min: 5, max: 50 }, drops: Vec::new() });
            s.keep_trace(true);
            s.run_until(5_000);
            (s.trace_hash(), s.trace().to_string())
        };
        let (a, ta) = run(3);
        let (b, tb) = run(3);
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert_ne!(run(4).0, a);
    }

    #[test]
    fn empty_queue_returns_immediately() {
        let mut s = sim(0, 0, NetConfig::default());
        s.run_until(1_000_000);
        assert!(s.notes().is_empty());
        assert_eq!(s.metrics().sent, 0);
    }

    #[test]
    fn partial_drops_conserve_messages() {
        let drops = vec![DropRule { from: Some(0), to: Some(1), prob: 0.3, window: None }];
        let mut s = sim(2, 1_000, NetConfig { seed: 5, latency: Latency::Fixed(10), drops });
        s.run_until(5);
        let m = s.metrics().clone();
        assert_eq!(m.sent, m.delivered + m.dropped + s.in_flight());
        assert!(s.in_flight() > 0);
        s.run_until(100);
        let m = s.metrics();
        assert_eq!(m.sent, m.delivered + m.dropped);
        let rate = m.dropped as f64 / m.sent as f64;
        assert!((rate - 0.3).abs() < 0.05, "{rate}");
    }
}
