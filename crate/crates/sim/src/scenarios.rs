//! Scripted network runs and the measurements taken from them.
//!
//! Scenarios that target "the validator of some range" first run a probe
//! world to the first epoch start to learn the routing. Epoch 0 routing only
//! depends on the setup traffic, so the probe and the real run agree on it
//! as long as both share the seed and the node population.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use treechain_core::codec::Digest;
use treechain_core::consensus::EpochRouting;
use treechain_core::node::{Misbehavior, NodeEvent, ReplaceReason, Stage, Submission, Timer};
use treechain_core::range::ConsensusCodeRange;
use treechain_core::sig::{KeyPair, Scheme};
use treechain_core::types::Transaction;

use crate::config::{AdversaryConfig, ConfigError, CrashConfig, DropConfig, HotConfig, SimConfig};
use crate::net::{Metrics, NodeId};
use crate::world::World;

/// Setup-round bytes predicted from the interest/view frame size `psi` and
/// the genesis block size `genesis`: one interest and one view broadcast per
/// candidate, one genesis broadcast.
pub fn packet_overhead_setup(j: u64, psi: u64, genesis: u64) -> u64 {
    2 * psi * j + genesis
}

fn probe(cfg: &SimConfig, until: u64) -> Result<World, ConfigError> {
    let mut w = World::new(cfg)?;
    w.sim.run_until(until);
    Ok(w)
}

fn epoch0_routing(cfg: &SimConfig) -> Result<EpochRouting, ConfigError> {
    let probe_cfg = SimConfig { workload: crate::config::WorkloadConfig { rate: 0.0, ..cfg.workload.clone() }, ..cfg.clone() };
    let start = cfg.schedule()?.epoch_start(0);
    let w = probe(&probe_cfg, start)?;
    Ok(w.node(cfg.nodes - 1).routing().cloned().expect("epoch 0 activated"))
}

fn node_of(w: &World, pk: &treechain_core::sig::PublicKey) -> Option<NodeId> {
    w.sim.env.node_of(pk)
}

// ---------------------------------------------------------------- honest run

#[derive(Debug, Clone)]
pub struct HonestReport {
    pub submitted: usize,
    /// Submitted transactions present exactly once in the observer's forest.
    pub committed_once: usize,
    pub missing: usize,
    pub duplicated: usize,
    pub blocks: usize,
    /// Nodes whose forest passes the integrity check.
    pub verified_nodes: usize,
    pub nodes: usize,
    /// `(epoch, genesis blocks built, approvals, table size)`.
    pub geneses: Vec<(u64, usize, usize, usize)>,
    /// Every node started every epoch on the same genesis.
    pub genesis_agreement: bool,
    /// Blocks formed between block suppression and activation.
    pub blocks_during_setup: usize,
    pub metrics: Metrics,
    pub trace_hash: Digest,
    pub wall: Duration,
}

pub fn honest(cfg: &SimConfig) -> Result<HonestReport, ConfigError> {
    honest_run(cfg, false).map(|(r, _)| r)
}

/// As [`honest`], handing back the finished world; `keep_trace` retains the
/// full text trace in it.
pub fn honest_run(cfg: &SimConfig, keep_trace: bool) -> Result<(HonestReport, World), ConfigError> {
    let started = Instant::now();
    let mut w = World::new(cfg)?;
    w.sim.keep_trace(keep_trace);
    w.run();
    let schedule = cfg.schedule()?;
    let observer = cfg.nodes - 1;
    let submitted = w.submitted();
    let counts = w.commit_counts(observer);
    let committed_once = submitted.iter().filter(|(t, _)| counts.get(t) == Some(&1)).count();
    let missing = submitted.iter().filter(|(t, _)| !counts.contains_key(t)).count();
    let duplicated = counts.values().filter(|&&c| c > 1).count();
    let verified_nodes = (0..cfg.nodes).filter(|&n| w.forest(n).check_integrity().is_ok()).count();
    let mut geneses = Vec::new();
    let mut genesis_agreement = true;
    for e in 0..=cfg.epochs {
        let built: Vec<_> = w.collect(|_, _, ev| match ev {
            NodeEvent::GenesisBuilt { epoch, approvals, of, .. } if *epoch == e => Some((*approvals, *of)),
            _ => None,
        });
        let (a, of) = built.first().copied().unwrap_or((0, 0));
        geneses.push((e, built.len(), a, of));
        let started: BTreeMap<NodeId, Digest> = w
            .collect(|_, n, ev| match ev {
                NodeEvent::EpochStarted { epoch, genesis } if *epoch == e => Some((n, *genesis)),
                _ => None,
            })
            .into_iter()
            .collect();
        let hashes: BTreeSet<_> = started.values().collect();
        genesis_agreement &= started.len() == cfg.nodes && hashes.len() == 1;
    }
    let blocks_during_setup = w
        .collect(|t, _, ev| matches!(ev, NodeEvent::BlockFormed { .. }).then_some(t))
        .into_iter()
        .filter(|&t| (1..=cfg.epochs).any(|e| t >= Stage::Negotiate.at(&schedule, e) && t < schedule.epoch_start(e)))
        .count();
    let blocks = w.forest(observer).ledgers().map(|l| l.blocks.len()).sum();
    let report = HonestReport {
        submitted: submitted.len(),
        committed_once,
        missing,
        duplicated,
        blocks,
        verified_nodes,
        nodes: cfg.nodes,
        geneses,
        genesis_agreement,
        blocks_during_setup,
        metrics: w.sim.metrics().clone(),
        trace_hash: w.sim.trace_hash(),
        wall: started.elapsed(),
    };
    Ok((report, w))
}

impl HonestReport {
    /// Every check of the honest run holds.
    pub fn passed(&self) -> bool {
        self.missing == 0
            && self.duplicated == 0
            && self.committed_once == self.submitted
            && self.verified_nodes == self.nodes
            && self.genesis_agreement
            && self.blocks_during_setup == 0
            && self.geneses.iter().all(|&(_, built, approvals, of)| {
                built >= 1 && treechain_core::consensus::exceeds_two_thirds(approvals, of)
            })
    }
}

/// The honest end-to-end configuration: `i` nodes, `j` candidates, three epochs.
pub fn honest_config(seed: u64, i: usize, j: usize) -> SimConfig {
    SimConfig { seed, nodes: i, validators: j, epochs: 3, ..SimConfig::default() }
}

// ------------------------------------------------------------- double spend

#[derive(Debug, Clone)]
pub struct DoubleSpendReport {
    pub colluder: Option<NodeId>,
    /// Spends of the contested output found in the observer's forest.
    pub commits: usize,
    pub reports: usize,
    pub first_report_at: Option<u64>,
    /// The colluder holds a slot in the next epoch's table.
    pub colluder_in_next_table: bool,
    /// Certificates the registry refused after the ban.
    pub refused_certifications: u64,
    pub trace_hash: Digest,
}

fn double_spend_config(seed: u64, colluder: Option<NodeId>) -> SimConfig {
    let mut cfg = SimConfig { seed, nodes: 12, validators: 4, epochs: 2, ..SimConfig::default() };
    cfg.workload.rate = 0.0;
    if let Some(node) = colluder {
        cfg.adversary.push(AdversaryConfig { node, collude: true, ..AdversaryConfig::default() });
    }
    cfg
}

const SPENDER: NodeId = 8;

fn double_spend_world(cfg: &SimConfig) -> Result<(World, u64), ConfigError> {
    let mut w = World::new(cfg)?;
    let s0 = cfg.schedule()?.epoch_start(0);
    w.sim.schedule_timer(s0 + 100, SPENDER, Timer::Submit(Submission::Payment));
    let attack_at = s0 + 2_500;
    w.sim.schedule_timer(attack_at, SPENDER, Timer::Submit(Submission::DoubleSpend));
    Ok((w, attack_at))
}

/// Simultaneous double spend by `SPENDER`. With `collude`, the validator
/// that authorizes spends of the contested output approves both.
pub fn double_spend(seed: u64, collude: bool) -> Result<DoubleSpendReport, ConfigError> {
    let mut colluder = None;
    if collude {
        let (mut w, attack_at) = double_spend_world(&double_spend_config(seed, None))?;
        w.sim.run_until(attack_at);
        let payment = w
            .collect(|_, n, e| match e {
                NodeEvent::TxSubmitted { t_id, input: None } if n == SPENDER => Some(*t_id),
                _ => None,
            })
            .first()
            .copied()
            .expect("payment submitted");
        let routing = w.node(0).routing().expect("epoch 0 active");
        let code = treechain_core::codec::digest_to_base62(&payment);
        let owner = routing.slot_for_code(&code).expect("full coverage").owner;
        colluder = node_of(&w, &owner);
    }
    let cfg = double_spend_config(seed, colluder);
    let (mut w, _) = double_spend_world(&cfg)?;
    w.run();
    let observer = cfg.nodes - 1;
    let contested = w
        .collect(|_, n, e| match e {
            NodeEvent::TxSubmitted { input: Some(i), .. } if n == SPENDER => Some(*i),
            _ => None,
        })
        .first()
        .copied();
    let commits = contested.map_or(0, |input| {
        w.forest(observer)
            .ledgers()
            .flat_map(|l| l.blocks.iter())
            .flat_map(|b| b.transactions.iter())
            .filter(|t| t.input == Some(input))
            .count()
    });
    let reports: Vec<u64> = w.collect(|t, _, e| match e {
        NodeEvent::MisbehaviorReport { kind: Misbehavior::DoubleSpend, .. } => Some(t),
        _ => None,
    });
    let colluder_in_next_table = colluder.is_some_and(|c| {
        w.node(observer)
            .routing()
            .is_some_and(|r| r.epoch == 1 && r.slots().iter().any(|s| node_of(&w, &s.owner) == Some(c)))
    });
    Ok(DoubleSpendReport {
        colluder,
        commits,
        reports: reports.len(),
        first_report_at: reports.first().copied(),
        colluder_in_next_table,
        refused_certifications: w.sim.env.refused_issuances(),
        trace_hash: w.sim.trace_hash(),
    })
}

// ----------------------------------------------------------------- failover

#[derive(Debug, Clone)]
pub struct FailoverReport {
    pub range: ConsensusCodeRange,
    pub primary: NodeId,
    pub backup: NodeId,
    pub author: NodeId,
    pub kill_at: u64,
    /// First block on the range formed by the backup after the kill.
    pub backup_block_at: Option<u64>,
    /// Replacement started by the genesis author for the range.
    pub author_replace_at: Option<u64>,
    pub bound: u64,
}

fn failover_config(seed: u64) -> SimConfig {
    let mut cfg = SimConfig { seed, nodes: 20, validators: 5, reserves: 3, epochs: 1, ..SimConfig::default() };
    cfg.protocol.delta = 30_000;
    cfg.workload.rate = 1.0;
    cfg.workload.spend_share = 0.0;
    cfg
}

/// Crashes the primary of a range (and its backup too, with `both`) five
/// seconds into the first epoch.
pub fn failover(seed: u64, both: bool) -> Result<FailoverReport, ConfigError> {
    let mut cfg = failover_config(seed);
    let routing = epoch0_routing(&cfg)?;
    let probe = probe(&SimConfig { workload: Default::default(), ..cfg.clone() }, cfg.schedule()?.epoch_start(0))?;
    let author = node_of(&probe, &routing.author()).expect("author certified");
    let slot = routing
        .slots()
        .iter()
        .find(|s| {
            let p = node_of(&probe, &s.owner);
            let b = s.backup.and_then(|b| node_of(&probe, &b));
            p.is_some() && b.is_some() && p != Some(author) && b != Some(author) && p != b
        })
        .expect("a range whose primary and backup are not the author")
        .clone();
    let primary = node_of(&probe, &slot.owner).expect("checked");
    let backup = node_of(&probe, &slot.backup.expect("checked")).expect("checked");
    let kill_at = cfg.schedule()?.epoch_start(0) + 5_000;
    cfg.network.crashes.push(CrashConfig { node: primary, at: kill_at });
    if both {
        cfg.network.crashes.push(CrashConfig { node: backup, at: kill_at });
    }
    let mut w = World::new(&cfg)?;
    w.run();
    let range = slot.range.clone();
    let backup_block_at = w
        .collect(|t, n, e| match e {
            NodeEvent::BlockFormed { ledger, .. } if n == backup && t >= kill_at && ledger.range == range => Some(t),
            _ => None,
        })
        .first()
        .copied();
    let author_replace_at = w
        .collect(|t, n, e| match e {
            NodeEvent::ReplaceStarted { range: r, reason: ReplaceReason::Silent } if n == author && *r == range => Some(t),
            _ => None,
        })
        .first()
        .copied();
    Ok(FailoverReport {
        range,
        primary,
        backup,
        author,
        kill_at,
        backup_block_at,
        author_replace_at,
        bound: cfg.protocol.silence_window + cfg.protocol.block_interval,
    })
}

// ------------------------------------------------------------ selective drop

#[derive(Debug, Clone)]
pub struct DropReport {
    pub fraction: f64,
    pub adversary: NodeId,
    pub range: ConsensusCodeRange,
    pub first_report_at: Option<u64>,
    /// Uncommitted in-range transactions counted by the first reporter.
    pub report_gap: Option<u64>,
    /// In-range transactions submitted up to the one whose expiry raised the
    /// first report.
    pub observed_at_report: Option<usize>,
    pub replace_started: bool,
    pub replaced: bool,
}

/// A non-author validator withholds `fraction` of the transactions in its
/// range while a hot workload targets that range.
pub fn selective_drop(seed: u64, fraction: f64) -> Result<DropReport, ConfigError> {
    let mut cfg = SimConfig { seed, nodes: 20, validators: 5, reserves: 3, epochs: 1, ..SimConfig::default() };
    cfg.protocol.delta = 60_000;
    // A full dropper also looks silent; keep failover out so the counter gap is what is measured.
    cfg.protocol.failover = false;
    cfg.workload.rate = 0.0;
    let routing = epoch0_routing(&cfg)?;
    let start = cfg.schedule()?.epoch_start(0);
    let probe = probe(&SimConfig { workload: Default::default(), ..cfg.clone() }, start)?;
    let author = node_of(&probe, &routing.author());
    let slot = routing.slots().iter().find(|s| node_of(&probe, &s.owner) != author).expect("j > 1").clone();
    let adversary = node_of(&probe, &slot.owner).expect("certified");
    cfg.adversary.push(AdversaryConfig { node: adversary, drop_fraction: fraction, ..AdversaryConfig::default() });
    cfg.workload.hot = Some(HotConfig { range: slot.range.to_string(), rate: 20.0, start: start + 500, stop: start + 40_000 });
    let mut w = World::new(&cfg)?;
    w.run();
    let notes = w.sim.notes();
    let report_idx = notes.iter().position(|(_, _, e)| {
        matches!(e, NodeEvent::MisbehaviorReport { kind: Misbehavior::Dos { .. }, range: Some(r), .. } if *r == slot.range)
    });
    let first = report_idx.map(|i| match &notes[i] {
        (t, n, NodeEvent::MisbehaviorReport { kind: Misbehavior::Dos { gap }, .. }) => (*t, *n, *gap),
        _ => unreachable!("matched above"),
    });
    let submitted: BTreeMap<Digest, u64> = w
        .collect(|t, _, e| match e {
            NodeEvent::TxSubmitted { t_id, .. } if slot.range.contains(&treechain_core::codec::digest_to_base62(t_id)) => {
                Some((*t_id, t))
            }
            _ => None,
        })
        .into_iter()
        .collect();
    // The expiry that tripped the report is the reporter's last one before it.
    let trigger = report_idx.and_then(|i| {
        let reporter = notes[i].1;
        notes[..i].iter().rev().find_map(|(_, n, e)| match e {
            NodeEvent::TxExpired { t_id, .. } if *n == reporter => submitted.get(t_id).copied(),
            _ => None,
        })
    });
    let observed_at_report = trigger.map(|ts| submitted.values().filter(|&&s| s <= ts).count());
    let replace_started = w.notes().any(|(_, _, e)| matches!(e, NodeEvent::ReplaceStarted { range, reason: ReplaceReason::Dos } if *range == slot.range));
    let replaced = w.notes().any(|(_, _, e)| matches!(e, NodeEvent::Replaced { range, .. } if *range == slot.range));
    Ok(DropReport {
        fraction,
        adversary,
        range: slot.range,
        first_report_at: first.map(|f| f.0),
        report_gap: first.map(|f| f.2),
        observed_at_report,
        replace_started,
        replaced,
    })
}

// -------------------------------------------------------------------- sybil

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SybilReport {
    pub certified: usize,
    pub fake_keys: usize,
    pub slots: usize,
    pub table_size: usize,
}

/// One adversary advertising `certified` certified keys (0, 1 or more) and
/// `fake_keys` uncertified ones alongside four honest candidates.
pub fn sybil(seed: u64, certified: usize, fake_keys: usize) -> Result<SybilReport, ConfigError> {
    let honest = 4;
    let mut cfg = SimConfig { seed, nodes: 10, epochs: 1, ..SimConfig::default() };
    cfg.workload.rate = 0.0;
    let adversary = if certified == 0 {
        cfg.validators = honest;
        honest
    } else {
        cfg.validators = honest + 1;
        0
    };
    cfg.adversary.push(AdversaryConfig {
        node: adversary,
        sybil_keys: fake_keys,
        extra_certified: certified.saturating_sub(1),
        ..AdversaryConfig::default()
    });
    let w = probe(&cfg, cfg.schedule()?.epoch_start(0))?;
    let routing = w.node(cfg.nodes - 1).routing().expect("epoch 0 active");
    let slots = routing.slots().iter().filter(|s| node_of(&w, &s.owner) == Some(adversary)).count();
    Ok(SybilReport { certified, fake_keys, slots, table_size: routing.slots().len() })
}

// ---------------------------------------------------------------- isolation

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IsolationReport {
    pub isolated: Vec<NodeId>,
    pub table_size: usize,
    pub baseline_table_size: usize,
    /// Codes held by the watched node (node 0) with and without isolation.
    pub watched_codes: u64,
    pub baseline_watched_codes: u64,
}

/// Drops all traffic to and from `isolated` candidates during the first
/// setup, so their interest never reaches the others.
pub fn isolation(seed: u64, candidates: usize, isolated: &[NodeId]) -> Result<IsolationReport, ConfigError> {
    let mut cfg = SimConfig { seed, nodes: candidates + 4, validators: candidates, epochs: 0, ..SimConfig::default() };
    cfg.workload.rate = 0.0;
    let start = cfg.schedule()?.epoch_start(0);
    let measure = |cfg: &SimConfig| -> Result<(usize, u64), ConfigError> {
        let w = probe(cfg, start)?;
        let routing = w.node(cfg.nodes - 1).routing().expect("epoch 0 active");
        let codes = routing.slots().iter().filter(|s| node_of(&w, &s.owner) == Some(0)).map(|s| s.range.size()).sum();
        Ok((routing.slots().len(), codes))
    };
    let (baseline_table_size, baseline_watched_codes) = measure(&cfg)?;
    for &n in isolated {
        for (from, to) in [(Some(n), None), (None, Some(n))] {
            cfg.network.drops.push(DropConfig { from, to, prob: 1.0, start: None, end: Some(start) });
        }
    }
    let (table_size, watched_codes) = measure(&cfg)?;
    Ok(IsolationReport { isolated: isolated.to_vec(), table_size, baseline_table_size, watched_codes, baseline_watched_codes })
}

// -------------------------------------------------------------- false alarm

#[derive(Debug, Clone)]
pub struct FalseAlarmReport {
    pub stalled: NodeId,
    pub backup: NodeId,
    pub range: ConsensusCodeRange,
    pub promoted: bool,
    /// `Some(true)` when the returning primary reclaimed the range,
    /// `Some(false)` when it stood down.
    pub primary_reclaimed: Option<bool>,
    /// The tie rule's verdict: the lower encoded key hash keeps the range.
    pub primary_should_win: bool,
    pub final_owner: Option<NodeId>,
}

/// A non-author validator stops sending for four seconds while still
/// receiving; its backup promotes itself, then the primary returns.
pub fn false_alarm(seed: u64) -> Result<FalseAlarmReport, ConfigError> {
    let mut cfg = failover_config(seed);
    let routing = epoch0_routing(&cfg)?;
    let start = cfg.schedule()?.epoch_start(0);
    let probe = probe(&SimConfig { workload: Default::default(), ..cfg.clone() }, start)?;
    let author = node_of(&probe, &routing.author());
    let slot = routing
        .slots()
        .iter()
        .find(|s| node_of(&probe, &s.owner) != author && s.backup.is_some())
        .expect("j > 1")
        .clone();
    let stalled = node_of(&probe, &slot.owner).expect("certified");
    let backup_pk = slot.backup.expect("checked");
    let backup = node_of(&probe, &backup_pk).expect("certified");
    let window = (start + 5_000, start + 9_000);
    cfg.adversary.push(AdversaryConfig { node: stalled, stall: Some(window), ..AdversaryConfig::default() });
    let mut w = World::new(&cfg)?;
    // Stop before the next setup so the routing read below is still epoch 0.
    w.sim.run_until(cfg.schedule()?.setup_start(1));
    let range = slot.range.clone();
    let promoted = w.notes().any(|(_, _, e)| matches!(e, NodeEvent::Promoted { range: r, .. } if *r == range));
    let primary_reclaimed = w
        .collect(|_, n, e| match e {
            NodeEvent::Reclaimed { range: r } if n == stalled && *r == range => Some(true),
            NodeEvent::Halted { range: r } if n == stalled && *r == range => Some(false),
            _ => None,
        })
        .first()
        .copied();
    let final_owner = w
        .node(cfg.nodes - 1)
        .routing()
        .and_then(|r| r.slot(&range))
        .and_then(|s| node_of(&w, &s.owner));
    Ok(FalseAlarmReport {
        stalled,
        backup,
        range,
        promoted,
        primary_reclaimed,
        primary_should_win: treechain_core::consensus::pk_code(&slot.owner)
            < treechain_core::consensus::pk_code(&backup_pk),
        final_owner,
    })
}

// ------------------------------------------------------------ load balancing

#[derive(Debug, Clone)]
pub struct SplitReport {
    pub parent: ConsensusCodeRange,
    pub low: ConsensusCodeRange,
    pub high: ConsensusCodeRange,
    pub split_at: u64,
    /// Share of `samples` fresh in-parent transactions routed to `low`.
    pub low_share: f64,
    pub samples: usize,
    /// The halves are disjoint, adjacent and cover exactly the parent.
    pub union_is_parent: bool,
}

/// Overloads one validator until it splits its range, then routes `samples`
/// fresh transactions drawn inside the parent range.
pub fn load_balance(seed: u64, samples: usize) -> Result<Option<SplitReport>, ConfigError> {
    let mut cfg = SimConfig { seed, nodes: 16, validators: 4, reserves: 3, epochs: 1, ..SimConfig::default() };
    cfg.protocol.delta = 30_000;
    cfg.protocol.scheme = "hash".into();
    cfg.workload.rate = 0.0;
    let routing = epoch0_routing(&cfg)?;
    let start = cfg.schedule()?.epoch_start(0);
    let target = routing.slots()[routing.slots().len() - 1].range.clone();
    cfg.workload.hot = Some(HotConfig { range: target.to_string(), rate: 250.0, start: start + 500, stop: start + 6_000 });
    let mut w = World::new(&cfg)?;
    w.run();
    let split = w
        .collect(|t, _, e| match e {
            NodeEvent::Split { parent, low, high, .. } if *parent == target => Some((t, low.clone(), high.clone())),
            _ => None,
        })
        .first()
        .cloned();
    let Some((split_at, low, high)) = split else { return Ok(None) };
    let mut parent = target.clone();
    while parent.k() < low.k() {
        parent = parent.deepen().expect("split depth is reachable");
    }
    let union_is_parent = low.low_value() == parent.low_value()
        && low.high_value() + 1 == high.low_value()
        && high.high_value() == parent.high_value();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5151);
    let kp = KeyPair::generate(Scheme::HashStandIn, &mut rng);
    let mut in_low = 0;
    let mut drawn = 0;
    while drawn < samples {
        let mut out = vec![0u8; 16];
        rng.fill_bytes(&mut out);
        let t = Transaction::create(&kp, start, None, out);
        let code = t.code();
        if !target.contains(&code) {
            continue;
        }
        drawn += 1;
        if low.contains(&code) {
            in_low += 1;
        } else {
            debug_assert!(high.contains(&code));
        }
    }
    Ok(Some(SplitReport {
        parent: target,
        low,
        high,
        split_at,
        low_share: in_low as f64 / samples as f64,
        samples,
        union_is_parent,
    }))
}

// --------------------------------------------------------- packet overhead

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OverheadReport {
    pub j: u64,
    /// Bytes of one interest or view packet.
    pub psi: u64,
    /// Bytes of the genesis block packet.
    pub genesis: u64,
    /// Interest, view and genesis bytes put on the wire during the setup.
    pub measured: u64,
    /// Unicast approval bytes, reported apart.
    pub approvals: u64,
}

/// The first setup round of a `j`-validator network with no client traffic.
pub fn setup_overhead(seed: u64, j: usize) -> Result<OverheadReport, ConfigError> {
    let mut cfg = SimConfig { seed, nodes: j, validators: j, epochs: 0, ..SimConfig::default() };
    cfg.workload.rate = 0.0;
    let mut w = World::new(&cfg)?;
    w.run();
    let m = w.sim.metrics();
    let (interest, view, genesis) = (m.kind("interest"), m.kind("view"), m.kind("genesis"));
    let psi = if interest.packets > 0 { interest.bytes / interest.packets } else { 0 };
    Ok(OverheadReport {
        j: j as u64,
        psi,
        genesis: genesis.bytes,
        measured: interest.bytes + view.bytes + genesis.bytes,
        approvals: m.kind("approval").bytes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overhead_formula_matches_worked_examples() {
        assert_eq!(packet_overhead_setup(1, 100, 500), 700);
        assert_eq!(packet_overhead_setup(10, 100, 500), 2_500);
    }
}
