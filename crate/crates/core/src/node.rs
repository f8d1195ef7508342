//! Per-node protocol state machine.
//!
//! A [`Node`] owns no I/O. The host feeds it [`Input`]s with the current
//! logical time and carries out the returned [`Effect`]s: message sends,
//! broadcasts, timers and trace events. The certified-key registry is the only
//! state shared between nodes and is passed in on every call.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{digest_to_base62, Digest, KwmDictionary};
use crate::consensus::{
    approve_genesis, build_genesis_block, collect_interest, genesis_body, negotiate_table, pk_code,
    rank_candidates, reform_validators, select_recruit, validate_genesis_block, Amendment, AmendmentKind,
    Closing, ConsensusError, ConsensusTable, DoubleSpendEvidence, EpochRouting, EpochSchedule, Identity,
    LedgerId, Negotiated, NodeId, Registry, RoutingChange, SetupPhase, TableView,
};
use crate::ledger::{LedgerError, LedgerForest, Step};
use crate::protocol::{Message, Purpose, Refusal};
use crate::range::ConsensusCodeRange;
use crate::sig::{KeyPair, PublicKey, Scheme};
use crate::types::{Block, BlockDraft, GenesisBlock, SpendAuthorization, Transaction, ValidatorInterestTx, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockMode {
    /// Emit when the pool holds `block_size` transactions.
    BySize,
    /// Emit a non-empty pool every `block_interval`.
    ByTime,
    /// Whichever of the two comes first.
    Hybrid,
}

#[derive(Debug, Clone)]
pub struct NodeConfig {
    pub schedule: EpochSchedule,
    pub block_size: usize,
    pub block_interval: u64,
    pub block_mode: BlockMode,
    /// Transaction validity window.
    pub validity: u64,
    /// Slack kept against the validity window for messages still in flight.
    pub expiry_margin: u64,
    pub tick: u64,
    /// Expired-uncommitted count above which a range's owner is reported.
    pub dos_threshold: u64,
    pub silence_window: u64,
    pub reply_window: u64,
    pub auth_retry: u64,
    /// Pool size, in blocks, that counts as overload.
    pub overload_factor: usize,
    pub overload_sustain: u64,
    /// No split is started with less than this much committing time left.
    pub balance_guard: u64,
    pub failover: bool,
    pub dos_replacement: bool,
    pub load_balancing: bool,
    pub scheme: Scheme,
    pub dict: KwmDictionary,
}

impl Default for NodeConfig {
    fn default() -> Self {
        let interval = 1_000;
        NodeConfig {
            schedule: EpochSchedule::new(10_000, 2_000).expect("valid defaults"),
            block_size: 10,
            block_interval: interval,
            block_mode: BlockMode::Hybrid,
            validity: 2 * interval,
            expiry_margin: 100,
            tick: 100,
            dos_threshold: 50,
            silence_window: 3 * interval,
            reply_window: 300,
            auth_retry: 300,
            overload_factor: 4,
            overload_sustain: 2 * interval,
            balance_guard: 4 * interval,
            failover: true,
            dos_replacement: true,
            load_balancing: true,
            scheme: Scheme::Ed25519,
            dict: KwmDictionary::default(),
        }
    }
}

/// Deviations from honest behaviour, all off by default.
#[derive(Debug, Clone, Default)]
pub struct Behaviour {
    /// Share of in-range transactions silently withheld from blocks.
    pub drop_fraction: f64,
    /// Approve every spend request, ignoring earlier approvals.
    pub collude: bool,
    /// Half-open interval during which the node neither sends nor produces.
    pub stall: Option<(u64, u64)>,
    /// Extra uncertified keys advertised with each interest.
    pub sybil_keys: usize,
    /// Extra certified keys advertised by a candidate, one identity behind all.
    pub extra_certified: usize,
    /// Advertise the previous epoch's key instead of a fresh one.
    pub reuse_key: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Role {
    /// Submits interest in every reformation.
    pub candidate: bool,
    /// Answers mid-epoch validator requests.
    pub reserve: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Interest,
    Rank,
    View,
    Negotiate,
    Approve,
    Build,
    Activate,
}

impl Stage {
    pub fn at(self, schedule: &EpochSchedule, epoch: u64) -> u64 {
        let start = schedule.setup_start(epoch);
        let q = schedule.quarter();
        let s = schedule.epoch_start(epoch);
        match self {
            Stage::Interest => start,
            Stage::Rank => start + q,
            Stage::View => start + 2 * q,
            Stage::Negotiate => start + 3 * q,
            Stage::Approve => s - schedule.eth / 8,
            Stage::Build => s - schedule.eth / 16,
            Stage::Activate => s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Submission {
    Payment,
    /// A payment whose code is ground until it lands in the range.
    Targeted(ConsensusCodeRange),
    Spend,
    /// Two spends of one output broadcast together.
    DoubleSpend,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Timer {
    Tick,
    Setup { epoch: u64, stage: Stage },
    Submit(Submission),
    Recruit { epoch: u64, range: ConsensusCodeRange },
}

#[derive(Debug)]
pub enum Input<'a> {
    Start,
    Timer(Timer),
    Deliver { from: NodeId, msg: &'a Message },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Effect {
    Send { to: NodeId, msg: Message },
    Broadcast(Message),
    Timer { at: u64, timer: Timer },
    Event(NodeEvent),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableOutcome {
    Confirmed,
    Adopted,
    Retained,
    CarriedAfterAbort,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Misbehavior {
    Dos { gap: u64 },
    DoubleSpend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplaceReason {
    Silent,
    Dos,
}

/// Structured trace events.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeEvent {
    TxSubmitted { t_id: Digest, input: Option<Digest> },
    TxRejected { t_id: Digest },
    TxExpired { t_id: Digest, range: Option<ConsensusCodeRange> },
    BlockFormed { ledger: LedgerId, height: u64, hash: Digest, txs: usize, timestamp: u64 },
    BlockRejected { ledger: LedgerId, height: u64, step: Option<Step> },
    InterestSent { epoch: u64, pk: PublicKey },
    TableFormed { epoch: u64, size: usize, outcome: TableOutcome },
    EpochAbort { epoch: u64 },
    GenesisBuilt { epoch: u64, hash: Digest, approvals: usize, of: usize },
    GenesisRejected { epoch: u64 },
    EpochStarted { epoch: u64, genesis: Digest },
    NoGenesis { epoch: u64 },
    MisbehaviorReport { kind: Misbehavior, range: Option<ConsensusCodeRange>, accused: PublicKey },
    Promoted { range: ConsensusCodeRange, pk: PublicKey },
    ReplaceStarted { range: ConsensusCodeRange, reason: ReplaceReason },
    Replaced { range: ConsensusCodeRange, recruit: PublicKey },
    SplitStarted { range: ConsensusCodeRange },
    Split { parent: ConsensusCodeRange, low: ConsensusCodeRange, high: ConsensusCodeRange, recruit: PublicKey },
    Reclaimed { range: ConsensusCodeRange },
    Halted { range: ConsensusCodeRange },
    Warning(String),
}

impl fmt::Display for NodeEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = |r: &Option<ConsensusCodeRange>| r.as_ref().map_or("-".to_string(), |r| r.to_string());
        match self {
            NodeEvent::TxSubmitted { t_id, input } => {
                write!(f, "tx-submitted {} {}", t_id.short(), input.map_or("-".into(), |i| i.short()))
            }
            NodeEvent::TxRejected { t_id } => write!(f, "tx-rejected {}", t_id.short()),
            NodeEvent::TxExpired { t_id, range } => write!(f, "tx-expired {} {}", t_id.short(), r(range)),
            NodeEvent::BlockFormed { ledger, height, hash, txs, timestamp } => {
                write!(f, "block-formed {ledger} {height} {} {txs} {timestamp}", hash.short())
            }
            NodeEvent::BlockRejected { ledger, height, step } => {
                write!(f, "block-rejected {ledger} {height} {}", step.map_or("chain".into(), |s| (s as u8).to_string()))
            }
            NodeEvent::InterestSent { epoch, pk } => write!(f, "interest {epoch} {}", pk.short()),
            NodeEvent::TableFormed { epoch, size, outcome } => write!(f, "table {epoch} {size} {outcome:?}"),
            NodeEvent::EpochAbort { epoch } => write!(f, "epoch-abort {epoch}"),
            NodeEvent::GenesisBuilt { epoch, hash, approvals, of } => {
                write!(f, "genesis-built {epoch} {} {approvals}/{of}", hash.short())
            }
            NodeEvent::GenesisRejected { epoch } => write!(f, "genesis-rejected {epoch}"),
            NodeEvent::EpochStarted { epoch, genesis } => write!(f, "epoch-started {epoch} {}", genesis.short()),
            NodeEvent::NoGenesis { epoch } => write!(f, "no-genesis {epoch}"),
            NodeEvent::MisbehaviorReport { kind, range, accused } => {
                write!(f, "report {kind:?} {} {}", r(range), accused.short())
            }
            NodeEvent::Promoted { range, pk } => write!(f, "promoted {range} {}", pk.short()),
            NodeEvent::ReplaceStarted { range, reason } => write!(f, "replace-started {range} {reason:?}"),
            NodeEvent::Replaced { range, recruit } => write!(f, "replaced {range} {}", recruit.short()),
            NodeEvent::SplitStarted { range } => write!(f, "split-started {range}"),
            NodeEvent::Split { parent, low, high, recruit } => {
                write!(f, "split {parent} {low} {high} {}", recruit.short())
            }
            NodeEvent::Reclaimed { range } => write!(f, "reclaimed {range}"),
            NodeEvent::Halted { range } => write!(f, "halted {range}"),
            NodeEvent::Warning(w) => write!(f, "warning {w}"),
        }
    }
}

#[derive(Debug, Clone)]
struct Observed {
    tx: Transaction,
    seq: u64,
    at: u64,
}

#[derive(Debug, Clone)]
enum AuthState {
    Pending { asked_at: u64 },
    Approved(SpendAuthorization),
}

#[derive(Debug, Default)]
struct Setup {
    started_at: u64,
    interest: Vec<(u64, ValidatorInterestTx)>,
    candidate: Option<ConsensusTable>,
    retained: bool,
    views: Vec<TableView>,
    table: Option<ConsensusTable>,
    closing: Option<Closing>,
    approvals: BTreeMap<PublicKey, crate::sig::Signature>,
    genesis: Option<GenesisBlock>,
}

#[derive(Debug)]
struct Recruiting {
    purpose: Purpose,
    replies: Vec<ValidatorInterestTx>,
}

pub struct Node {
    id: NodeId,
    identity: Identity,
    cfg: Arc<NodeConfig>,
    behaviour: Behaviour,
    role: Role,
    rng: ChaCha8Rng,
    client: KeyPair,
    /// Validator keys held, by public key.
    keys: BTreeMap<PublicKey, KeyPair>,
    epoch_keys: BTreeMap<u64, PublicKey>,
    forest: LedgerForest,
    routing: Option<EpochRouting>,
    prev_table: Option<ConsensusTable>,
    setups: BTreeMap<u64, Setup>,
    suppressed: bool,

    observed: BTreeMap<Digest, Observed>,
    rejected: BTreeSet<Digest>,
    sig_ok: HashSet<Digest>,
    seq: u64,
    auths: BTreeMap<Digest, AuthState>,
    wallet: Vec<Digest>,

    last_block_at: BTreeMap<ConsensusCodeRange, u64>,
    last_seen: BTreeMap<LedgerId, BTreeMap<LedgerId, Digest>>,
    last_activity: BTreeMap<ConsensusCodeRange, u64>,
    gap: BTreeMap<ConsensusCodeRange, u64>,
    reported: BTreeSet<ConsensusCodeRange>,
    replacing: BTreeSet<ConsensusCodeRange>,
    overload_since: BTreeMap<ConsensusCodeRange, u64>,
    recruiting: BTreeMap<ConsensusCodeRange, Recruiting>,
    recruit_offers: BTreeSet<(u64, ConsensusCodeRange)>,
    known_evidence: BTreeSet<(PublicKey, Digest)>,
    deferred: Vec<Amendment>,
    orphans: Vec<Block>,
    was_stalled: bool,
}

/// Fraction in `[0, 1)` derived from a digest, for deterministic sampling.
fn unit_of(d: &Digest) -> f64 {
    let mut b = [0u8; 8];
    b.copy_from_slice(&d.as_bytes()[..8]);
    (u64::from_le_bytes(b) >> 11) as f64 / (1u64 << 53) as f64
}

impl Node {
    pub fn new(id: NodeId, cfg: Arc<NodeConfig>, role: Role, behaviour: Behaviour, seed: u64) -> Node {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let client = KeyPair::generate(cfg.scheme, &mut rng);
        Node {
            id,
            identity: id as Identity,
            cfg,
            behaviour,
            role,
            rng,
            client,
            keys: BTreeMap::new(),
            epoch_keys: BTreeMap::new(),
            forest: LedgerForest::new(),
            routing: None,
            prev_table: None,
            setups: BTreeMap::new(),
            suppressed: true,
            observed: BTreeMap::new(),
            rejected: BTreeSet::new(),
            sig_ok: HashSet::new(),
            seq: 0,
            auths: BTreeMap::new(),
            wallet: Vec::new(),
            last_block_at: BTreeMap::new(),
            last_seen: BTreeMap::new(),
            last_activity: BTreeMap::new(),
            gap: BTreeMap::new(),
            reported: BTreeSet::new(),
            replacing: BTreeSet::new(),
            overload_since: BTreeMap::new(),
            recruiting: BTreeMap::new(),
            recruit_offers: BTreeSet::new(),
            known_evidence: BTreeSet::new(),
            deferred: Vec::new(),
            orphans: Vec::new(),
            was_stalled: false,
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn forest(&self) -> &LedgerForest {
        &self.forest
    }

    pub fn routing(&self) -> Option<&EpochRouting> {
        self.routing.as_ref()
    }

    pub fn client_pk(&self) -> PublicKey {
        self.client.public()
    }

    pub fn holds_key(&self, pk: &PublicKey) -> bool {
        self.keys.contains_key(pk)
    }

    pub fn key_for_epoch(&self, epoch: u64) -> Option<PublicKey> {
        self.epoch_keys.get(&epoch).copied()
    }

    /// Verified transactions seen but not yet committed.
    pub fn observed_len(&self) -> usize {
        self.observed.len()
    }

    pub fn dos_gap(&self, range: &ConsensusCodeRange) -> u64 {
        self.gap.get(range).copied().unwrap_or(0)
    }

    pub fn wallet(&self) -> &[Digest] {
        &self.wallet
    }

    /// Pending transactions this node would put into blocks for `range`.
    pub fn pool_len(&self, range: &ConsensusCodeRange) -> usize {
        self.observed.values().filter(|o| range.contains(&o.tx.code())).count()
    }

    pub fn handle(&mut self, now: u64, registry: &mut Registry, input: Input<'_>) -> Vec<Effect> {
        let mut fx = Vec::new();
        match input {
            Input::Start => {
                fx.push(Effect::Timer { at: Stage::Interest.at(&self.cfg.schedule, 0), timer: Timer::Setup { epoch: 0, stage: Stage::Interest } });
                fx.push(Effect::Timer { at: now + self.cfg.tick, timer: Timer::Tick });
            }
            Input::Timer(Timer::Tick) => {
                fx.push(Effect::Timer { at: now + self.cfg.tick, timer: Timer::Tick });
                self.on_tick(now, registry, &mut fx);
            }
            Input::Timer(Timer::Setup { epoch, stage }) => {
                self.on_stage(now, registry, epoch, stage, &mut fx);
                if stage == Stage::Activate {
                    self.retry_orphans(now, registry, &mut fx);
                }
            }
            Input::Timer(Timer::Submit(s)) => {
                if !self.stalled(now) {
                    self.submit(now, registry, s, &mut fx);
                }
            }
            Input::Timer(Timer::Recruit { epoch, range }) => self.finish_recruit(now, registry, epoch, range, &mut fx),
            Input::Deliver { from, msg } => self.on_message(now, registry, from, msg, &mut fx),
        }
        if self.stalled(now) {
            fx.retain(|e| !matches!(e, Effect::Send { .. } | Effect::Broadcast(_)));
        }
        fx
    }

    fn stalled(&self, now: u64) -> bool {
        self.behaviour.stall.is_some_and(|(a, b)| now >= a && now < b)
    }

    fn event(fx: &mut Vec<Effect>, e: NodeEvent) {
        fx.push(Effect::Event(e));
    }

    fn send_to_key(&self, registry: &Registry, pk: &PublicKey, msg: Message, fx: &mut Vec<Effect>) -> bool {
        match registry.node_of(pk) {
            Some(to) => {
                fx.push(Effect::Send { to, msg });
                true
            }
            None => false,
        }
    }

    fn my_slot_ranges(&self) -> Vec<ConsensusCodeRange> {
        let Some(r) = &self.routing else { return Vec::new() };
        r.slots().iter().filter(|s| self.keys.contains_key(&s.owner)).map(|s| s.range.clone()).collect()
    }

    fn owner_key(&self, range: &ConsensusCodeRange) -> Option<&KeyPair> {
        let slot = self.routing.as_ref()?.slot(range)?;
        self.keys.get(&slot.owner)
    }

    // ---- transactions ----

    fn new_output(&mut self) -> Vec<u8> {
        let mut out = vec![0u8; 16];
        self.rng.fill_bytes(&mut out);
        out
    }

    fn submit(&mut self, now: u64, registry: &mut Registry, s: Submission, fx: &mut Vec<Effect>) {
        let txs = match s {
            Submission::Payment => {
                let out = self.new_output();
                vec![Transaction::create(&self.client, now, None, out)]
            }
            Submission::Targeted(range) => loop {
                let out = self.new_output();
                let t = Transaction::create(&self.client, now, None, out);
                if range.contains(&t.code()) {
                    break vec![t];
                }
            },
            Submission::Spend | Submission::DoubleSpend => {
                if self.wallet.is_empty() {
                    Self::event(fx, NodeEvent::Warning("no spendable output".into()));
                    return;
                }
                let input = self.wallet.remove(0);
                let n = if s == Submission::DoubleSpend { 2 } else { 1 };
                (0..n)
                    .map(|_| {
                        let out = self.new_output();
                        Transaction::create(&self.client, now, Some(input), out)
                    })
                    .collect()
            }
        };
        for t in txs {
            Self::event(fx, NodeEvent::TxSubmitted { t_id: t.t_id, input: t.input });
            self.sig_ok.insert(t.t_id);
            self.intake(now, registry, t.clone(), fx);
            fx.push(Effect::Broadcast(Message::Tx(t)));
        }
    }

    fn intake(&mut self, now: u64, registry: &mut Registry, t: Transaction, fx: &mut Vec<Effect>) {
        let id = t.t_id;
        if self.observed.contains_key(&id) || self.rejected.contains(&id) || self.forest.is_committed(&id) {
            return;
        }
        if t.timestamp > now || t.timestamp + self.cfg.validity < now {
            return;
        }
        if !self.sig_ok.contains(&id) {
            if !t.verify() {
                return;
            }
            self.sig_ok.insert(id);
        }
        let owned = self.routing.as_ref().and_then(|r| r.slot_for_code(&t.code())).is_some_and(|s| self.keys.contains_key(&s.owner));
        let input = t.input;
        self.seq += 1;
        self.observed.insert(id, Observed { tx: t, seq: self.seq, at: now });
        if owned {
            if let Some(input) = input {
                self.request_auth(now, registry, id, input, fx);
            }
        }
    }

    fn request_auth(&mut self, now: u64, registry: &mut Registry, spender: Digest, t_out: Digest, fx: &mut Vec<Effect>) {
        let Some(routing) = &self.routing else { return };
        let Some(owner) = routing.slot_for_code(&digest_to_base62(&t_out)).map(|s| s.owner) else { return };
        self.auths.insert(spender, AuthState::Pending { asked_at: now });
        if self.keys.contains_key(&owner) {
            let reply = self.answer_auth(t_out, spender);
            self.on_auth_answer(now, reply, fx);
        } else {
            self.send_to_key(registry, &owner, Message::AuthRequest { t_out, spender }, fx);
        }
    }

    fn answer_auth(&mut self, t_out: Digest, spender: Digest) -> Result<SpendAuthorization, (Digest, Digest, Refusal)> {
        let refuse = |r| Err((t_out, spender, r));
        let Some(routing) = &self.routing else { return refuse(Refusal::NotResponsible) };
        let Some(owner) = routing.slot_for_code(&digest_to_base62(&t_out)).map(|s| s.owner) else {
            return refuse(Refusal::NotResponsible);
        };
        let Some(kp) = self.keys.get(&owner) else { return refuse(Refusal::NotResponsible) };
        if self.behaviour.collude {
            if !self.forest.is_committed(&t_out) {
                return refuse(Refusal::Unknown);
            }
            return Ok(SpendAuthorization::issue(kp, t_out, spender, Verdict::Approved));
        }
        let kp = kp.clone();
        self.forest.authorize_spend(t_out, spender, &kp, routing).map_err(|e| {
            let r = match e {
                crate::ledger::AuthError::Unknown => Refusal::Unknown,
                crate::ledger::AuthError::NotResponsible => Refusal::NotResponsible,
            };
            (t_out, spender, r)
        })
    }

    fn on_auth_answer(
        &mut self,
        now: u64,
        reply: Result<SpendAuthorization, (Digest, Digest, Refusal)>,
        fx: &mut Vec<Effect>,
    ) {
        match reply {
            Ok(a) => {
                let matches = self.observed.get(&a.spender_id).is_some_and(|o| o.tx.input == Some(a.t_out_id));
                // A reply issued under the previous table can land after
                // activation; its authorizer no longer counts.
                let current = self
                    .routing
                    .as_ref()
                    .is_some_and(|r| r.was_owner(&digest_to_base62(&a.t_out_id), &a.authorizer_pk));
                if !matches || !current || !a.verify() {
                    return;
                }
                match a.verdict {
                    Verdict::Approved => {
                        self.auths.insert(a.spender_id, AuthState::Approved(a));
                    }
                    Verdict::AlreadySpent => {
                        self.auths.remove(&a.spender_id);
                        self.observed.remove(&a.spender_id);
                        self.rejected.insert(a.spender_id);
                        Self::event(fx, NodeEvent::TxRejected { t_id: a.spender_id });
                    }
                }
            }
            Err((_, spender, _)) => {
                self.auths.insert(spender, AuthState::Pending { asked_at: now });
            }
        }
    }

    // ---- messages ----

    fn on_message(&mut self, now: u64, registry: &mut Registry, from: NodeId, msg: &Message, fx: &mut Vec<Effect>) {
        match msg {
            Message::Tx(t) => self.intake(now, registry, t.clone(), fx),
            Message::Interest(vi) => {
                self.setups.entry(vi.epoch).or_default().interest.push((now, vi.clone()));
            }
            Message::View(v) => self.setups.entry(v.epoch).or_default().views.push(v.clone()),
            Message::Approval { epoch, signer, sign } => {
                self.setups.entry(*epoch).or_default().approvals.insert(*signer, sign.clone());
            }
            Message::Genesis(g) => self.on_genesis(g.clone(), fx),
            Message::Block(b) => {
                self.on_block(now, registry, b.clone(), fx);
                self.retry_orphans(now, registry, fx);
            }
            Message::AuthRequest { t_out, spender } => {
                let reply = match self.answer_auth(*t_out, *spender) {
                    Ok(a) => Message::AuthReply(a),
                    Err((t_out, spender, reason)) => Message::AuthRefusal { t_out, spender, reason },
                };
                fx.push(Effect::Send { to: from, msg: reply });
            }
            Message::AuthReply(a) => self.on_auth_answer(now, Ok(a.clone()), fx),
            Message::AuthRefusal { t_out, spender, reason } => {
                if self.auths.contains_key(spender) {
                    self.on_auth_answer(now, Err((*t_out, *spender, *reason)), fx);
                }
            }
            Message::ValidatorRequest { epoch, range, purpose: _ } => {
                self.offer_as_recruit(registry, from, *epoch, range, fx);
            }
            Message::ValidatorReply { range, interest } => {
                if let Some(r) = self.recruiting.get_mut(range) {
                    r.replies.push(interest.clone());
                }
            }
            Message::Amendment(a) => {
                self.on_amendment(now, registry, a.clone(), fx);
                self.retry_orphans(now, registry, fx);
            }
            Message::Evidence(e) => self.on_evidence(registry, e.clone(), false, fx),
        }
    }

    fn on_evidence(&mut self, registry: &mut Registry, e: DoubleSpendEvidence, found_here: bool, fx: &mut Vec<Effect>) {
        if !e.verify() || !self.known_evidence.insert((e.accused(), e.first.t_out_id)) {
            return;
        }
        let _ = registry.report_double_spend(&e);
        let range = self
            .routing
            .as_ref()
            .and_then(|r| r.slot_for_code(&digest_to_base62(&e.first.t_out_id)))
            .map(|s| s.range.clone());
        Self::event(fx, NodeEvent::MisbehaviorReport { kind: Misbehavior::DoubleSpend, range, accused: e.accused() });
        if found_here && !self.my_slot_ranges().is_empty() {
            fx.push(Effect::Broadcast(Message::Evidence(e)));
        }
    }

    fn on_block(&mut self, now: u64, registry: &mut Registry, b: Block, fx: &mut Vec<Effect>) {
        let id = LedgerId { epoch: b.epoch, range: b.code_range.clone() };
        let Some(routing) = &self.routing else {
            self.orphans.push(b);
            return;
        };
        if b.epoch > routing.epoch {
            self.orphans.push(b);
            return;
        }
        if b.epoch < routing.epoch {
            return;
        }
        match self.forest.ledger(&id) {
            None => {
                self.orphans.push(b);
                return;
            }
            Some(l) => {
                let len = l.blocks.len() as u64;
                if b.height <= len {
                    return;
                }
                if b.height > len + 1 {
                    self.orphans.push(b);
                    return;
                }
            }
        }
        let sig_ok = &self.sig_ok;
        if let Err(e) = self.forest.verify_block_with(&b, routing, now, self.cfg.validity, |t| sig_ok.contains(t)) {
            Self::event(fx, NodeEvent::BlockRejected { ledger: id, height: b.height, step: Some(e.step) });
            return;
        }
        for t in &b.transactions {
            self.sig_ok.insert(t.t_id);
        }
        self.commit(now, registry, b, fx);
    }

    /// Appends a verified block and updates everything keyed on commitment.
    fn commit(&mut self, _now: u64, registry: &mut Registry, b: Block, fx: &mut Vec<Effect>) {
        let range = b.code_range.clone();
        let ts = b.timestamp;
        let txs: Vec<(Digest, Option<Digest>, PublicKey)> =
            b.transactions.iter().map(|t| (t.t_id, t.input, t.pk)).collect();
        let height = b.height;
        let ledger = LedgerId { epoch: b.epoch, range: range.clone() };
        let appended = match self.forest.append_block(b) {
            Ok(a) => a,
            Err(e) => {
                let step = None;
                if !matches!(e, LedgerError::Closed(_)) {
                    Self::event(fx, NodeEvent::Warning(e.to_string()));
                }
                Self::event(fx, NodeEvent::BlockRejected { ledger, height, step });
                return;
            }
        };
        let me = self.client.public();
        for (t_id, input, pk) in txs {
            self.observed.remove(&t_id);
            self.auths.remove(&t_id);
            if pk == me {
                if let Some(i) = input {
                    self.wallet.retain(|w| w != &i);
                }
                self.wallet.push(t_id);
            }
        }
        let act = self.last_activity.entry(range).or_insert(ts);
        *act = (*act).max(ts);
        for e in appended.conflicts {
            self.on_evidence(registry, e, true, fx);
        }
    }

    fn retry_orphans(&mut self, now: u64, registry: &mut Registry, fx: &mut Vec<Effect>) {
        loop {
            let mut progressed = false;
            let pending = std::mem::take(&mut self.orphans);
            let current = self.routing.as_ref().map_or(0, |r| r.epoch);
            for b in pending {
                if b.epoch < current {
                    continue;
                }
                let id = LedgerId { epoch: b.epoch, range: b.code_range.clone() };
                let ready = self.routing.as_ref().is_some_and(|r| r.epoch == b.epoch)
                    && self.forest.ledger(&id).is_some_and(|l| l.blocks.len() as u64 + 1 >= b.height);
                if ready {
                    let before = self.forest.block_count();
                    self.on_block(now, registry, b, fx);
                    progressed |= self.forest.block_count() > before;
                } else {
                    self.orphans.push(b);
                }
            }
            let deferred = std::mem::take(&mut self.deferred);
            for a in deferred {
                let before = self.deferred.len();
                self.on_amendment(now, registry, a, fx);
                progressed |= self.deferred.len() == before;
            }
            if !progressed {
                break;
            }
        }
    }

    // ---- amendments ----

    fn on_amendment(&mut self, now: u64, registry: &mut Registry, a: Amendment, fx: &mut Vec<Effect>) {
        let Some(routing) = &mut self.routing else { return };
        if a.epoch != routing.epoch {
            return;
        }
        if let AmendmentKind::Split { parent, parent_head, .. } = &a.kind {
            let id = LedgerId { epoch: a.epoch, range: parent.clone() };
            if routing.slot(parent).is_some() && self.forest.head(&id) != Some(*parent_head) {
                self.deferred.push(a);
                return;
            }
        }
        let before: BTreeSet<ConsensusCodeRange> = self.my_slot_ranges().into_iter().collect();
        let routing = self.routing.as_mut().expect("checked above");
        let change = match routing.apply(&a, |pk| registry.is_certified(pk)) {
            Ok(c) => c,
            Err(_) => return,
        };
        match &change {
            RoutingChange::Forked { parent, low, high, root } => {
                self.forest.fork(parent, low.clone(), high.clone(), *root);
                for r in [&low.range, &high.range] {
                    self.last_activity.insert(r.clone(), now);
                    self.last_block_at.insert(r.clone(), now);
                }
                if let AmendmentKind::Split { recruit, .. } = &a.kind {
                    Self::event(
                        fx,
                        NodeEvent::Split {
                            parent: parent.range.clone(),
                            low: low.range.clone(),
                            high: high.range.clone(),
                            recruit: recruit.pk,
                        },
                    );
                }
            }
            RoutingChange::OwnerChanged { range, to, .. } => {
                self.last_activity.insert(range.clone(), now);
                self.last_block_at.insert(range.clone(), 0);
                self.gap.remove(range);
                self.reported.remove(range);
                self.replacing.remove(range);
                match &a.kind {
                    AmendmentKind::Promote { .. } => Self::event(fx, NodeEvent::Promoted { range: range.clone(), pk: *to }),
                    AmendmentKind::Replace { .. } => Self::event(fx, NodeEvent::Replaced { range: range.clone(), recruit: *to }),
                    AmendmentKind::Reclaim { .. } => Self::event(fx, NodeEvent::Reclaimed { range: range.clone() }),
                    AmendmentKind::Split { .. } => {}
                }
            }
        }
        // A promotion over a live primary is settled by the tie rule, at
        // once or when a stall ends; other losses are final.
        if matches!(a.kind, AmendmentKind::Promote { .. }) {
            if !self.stalled(now) {
                self.resolve_displacement(now, registry, fx);
            }
            return;
        }
        let after: BTreeSet<ConsensusCodeRange> = self.my_slot_ranges().into_iter().collect();
        for lost in before.difference(&after) {
            if !matches!(change, RoutingChange::Forked { .. }) {
                Self::event(fx, NodeEvent::Halted { range: lost.clone() });
            }
        }
    }

    fn amend(&mut self, now: u64, registry: &mut Registry, kind: AmendmentKind, signer: PublicKey, fx: &mut Vec<Effect>) {
        let Some(routing) = &self.routing else { return };
        let Some(kp) = self.keys.get(&signer) else { return };
        let a = Amendment::new(routing.epoch, kind, kp);
        self.on_amendment(now, registry, a.clone(), fx);
        fx.push(Effect::Broadcast(Message::Amendment(a)));
    }

    // ---- recruiting ----

    fn offer_as_recruit(&mut self, registry: &mut Registry, from: NodeId, epoch: u64, range: &ConsensusCodeRange, fx: &mut Vec<Effect>) {
        let current = self.routing.as_ref().is_some_and(|r| r.epoch == epoch);
        if !self.role.reserve || !current || !self.my_slot_ranges().is_empty() {
            return;
        }
        if !self.recruit_offers.insert((epoch, range.clone())) {
            return;
        }
        let kp = KeyPair::generate(self.cfg.scheme, &mut self.rng);
        if registry.certify(self.identity, kp.public(), self.id).is_err() {
            return;
        }
        let interest = ValidatorInterestTx::create(&kp, epoch);
        self.keys.insert(kp.public(), kp);
        fx.push(Effect::Send { to: from, msg: Message::ValidatorReply { range: range.clone(), interest } });
    }

    fn start_recruit(&mut self, now: u64, range: ConsensusCodeRange, purpose: Purpose, fx: &mut Vec<Effect>) {
        let Some(routing) = &self.routing else { return };
        let epoch = routing.epoch;
        self.recruiting.insert(range.clone(), Recruiting { purpose, replies: Vec::new() });
        fx.push(Effect::Broadcast(Message::ValidatorRequest { epoch, range: range.clone(), purpose }));
        fx.push(Effect::Timer { at: now + self.cfg.reply_window, timer: Timer::Recruit { epoch, range } });
    }

    fn finish_recruit(&mut self, now: u64, registry: &mut Registry, epoch: u64, range: ConsensusCodeRange, fx: &mut Vec<Effect>) {
        let Some(rec) = self.recruiting.remove(&range) else { return };
        let Some(routing) = &self.routing else { return };
        if routing.epoch != epoch || routing.slot(&range).is_none() {
            return;
        }
        let valid: Vec<ValidatorInterestTx> = rec
            .replies
            .into_iter()
            .filter(|vi| vi.epoch == epoch && vi.verify() && registry.is_certified(&vi.pk))
            .collect();
        let Some(recruit) = select_recruit(valid.iter(), &self.cfg.dict).cloned() else {
            Self::event(fx, NodeEvent::Warning(format!("no applicants for {range}")));
            self.overload_since.remove(&range);
            self.replacing.remove(&range);
            self.last_activity.insert(range, now);
            return;
        };
        match rec.purpose {
            Purpose::Split => {
                let Some(owner) = routing.slot(&range).map(|s| s.owner) else { return };
                let Some(head) = self.forest.head(&LedgerId { epoch, range: range.clone() }) else { return };
                self.overload_since.remove(&range);
                let kind = AmendmentKind::Split { parent: range, recruit, parent_head: head };
                self.amend(now, registry, kind, owner, fx);
            }
            Purpose::Replace => {
                let author = routing.author();
                self.amend(now, registry, AmendmentKind::Replace { range, recruit }, author, fx);
            }
        }
    }

    // ---- periodic work ----

    fn on_tick(&mut self, now: u64, registry: &mut Registry, fx: &mut Vec<Effect>) {
        if self.stalled(now) {
            self.was_stalled = true;
            return;
        }
        if self.was_stalled {
            self.was_stalled = false;
            self.resolve_displacement(now, registry, fx);
        }
        self.expire(now, fx);
        if self.routing.is_none() || self.suppressed {
            return;
        }
        self.retry_auths(now, registry, fx);
        for range in self.my_slot_ranges() {
            self.maybe_form_block(now, registry, &range, fx);
        }
        self.monitor(now, registry, fx);
        if self.cfg.load_balancing {
            self.check_overload(now, fx);
        }
    }

    fn resolve_displacement(&mut self, now: u64, registry: &mut Registry, fx: &mut Vec<Effect>) {
        let Some(routing) = &self.routing else { return };
        let displaced: Vec<(ConsensusCodeRange, PublicKey, PublicKey)> = routing
            .slots()
            .iter()
            .filter_map(|s| s.displaced.filter(|d| self.keys.contains_key(d)).map(|d| (s.range.clone(), d, s.owner)))
            .collect();
        for (range, me, owner) in displaced {
            if pk_code(&me) < pk_code(&owner) {
                self.amend(now, registry, AmendmentKind::Reclaim { range }, me, fx);
            } else {
                Self::event(fx, NodeEvent::Halted { range });
            }
        }
    }

    fn expire(&mut self, now: u64, fx: &mut Vec<Effect>) {
        let limit = self.cfg.validity + self.cfg.expiry_margin;
        let mut gone: Vec<(u64, Digest)> = self
            .observed
            .iter()
            .filter(|(_, o)| o.tx.timestamp + limit < now)
            .map(|(id, o)| (o.tx.timestamp, *id))
            .collect();
        gone.sort_unstable();
        for (_, id) in gone {
            let o = self.observed.remove(&id).expect("listed above");
            self.auths.remove(&id);
            let range = self.routing.as_ref().and_then(|r| r.slot_for_code(&o.tx.code())).map(|s| s.range.clone());
            if let Some(r) = &range {
                *self.gap.entry(r.clone()).or_insert(0) += 1;
            }
            Self::event(fx, NodeEvent::TxExpired { t_id: id, range: range.clone() });
            if let Some(r) = range {
                self.check_dos(now, &r, fx);
            }
        }
    }

    /// Reports the owner of `range` once its gap passes the threshold; the
    /// genesis author also starts replacing it.
    fn check_dos(&mut self, now: u64, range: &ConsensusCodeRange, fx: &mut Vec<Effect>) {
        let Some(routing) = &self.routing else { return };
        let Some(slot) = routing.slot(range) else { return };
        let gap = self.dos_gap(range);
        if gap <= self.cfg.dos_threshold || self.reported.contains(range) {
            return;
        }
        let author = self.keys.contains_key(&routing.author());
        let mine = self.keys.contains_key(&slot.owner);
        let accused = slot.owner;
        self.reported.insert(range.clone());
        Self::event(fx, NodeEvent::MisbehaviorReport { kind: Misbehavior::Dos { gap }, range: Some(range.clone()), accused });
        if author && !mine && self.cfg.dos_replacement && self.replacing.insert(range.clone()) {
            Self::event(fx, NodeEvent::ReplaceStarted { range: range.clone(), reason: ReplaceReason::Dos });
            self.start_recruit(now, range.clone(), Purpose::Replace, fx);
        }
    }

    fn retry_auths(&mut self, now: u64, registry: &mut Registry, fx: &mut Vec<Effect>) {
        let mine = self.my_slot_ranges();
        let due: Vec<(Digest, Digest)> = self
            .observed
            .iter()
            .filter_map(|(id, o)| {
                let input = o.tx.input?;
                if !mine.iter().any(|r| r.contains(&o.tx.code())) {
                    return None;
                }
                match self.auths.get(id) {
                    None => Some((*id, input)),
                    Some(AuthState::Pending { asked_at }) if now >= asked_at + self.cfg.auth_retry => Some((*id, input)),
                    _ => None,
                }
            })
            .collect();
        for (spender, t_out) in due {
            self.request_auth(now, registry, spender, t_out, fx);
        }
    }

    /// Transactions eligible for the next block of `range`, in arrival order.
    fn pool(&self, now: u64, range: &ConsensusCodeRange) -> Vec<(u64, Digest)> {
        let horizon = now + self.cfg.expiry_margin;
        let mut pool: Vec<(u64, Digest)> = self
            .observed
            .iter()
            .filter(|(_, o)| range.contains(&o.tx.code()) && o.tx.timestamp + self.cfg.validity >= horizon)
            .filter(|(id, o)| o.tx.input.is_none() || matches!(self.auths.get(id), Some(AuthState::Approved(_))))
            .filter(|(id, _)| self.behaviour.drop_fraction <= 0.0 || unit_of(id) >= self.behaviour.drop_fraction)
            .map(|(id, o)| (o.seq, *id))
            .collect();
        pool.sort_unstable();
        pool
    }

    fn maybe_form_block(&mut self, now: u64, registry: &mut Registry, range: &ConsensusCodeRange, fx: &mut Vec<Effect>) {
        let pool = self.pool(now, range);
        let last = self.last_block_at.get(range).copied().unwrap_or(0);
        let full = pool.len() >= self.cfg.block_size;
        let next = last + self.cfg.block_interval;
        // A transaction that would leave the pool before `next` makes the block due now.
        let urgent = pool.iter().any(|(_, id)| self.observed[id].tx.timestamp + self.cfg.validity < next + self.cfg.expiry_margin);
        let due = !pool.is_empty() && (now >= next || urgent);
        let go = match self.cfg.block_mode {
            BlockMode::BySize => full,
            BlockMode::ByTime => due,
            BlockMode::Hybrid => full || due,
        };
        if !go {
            return;
        }
        let Some(routing) = &self.routing else { return };
        let Some(kp) = self.owner_key(range) else { return };
        let epoch = routing.epoch;
        let id = LedgerId { epoch, range: range.clone() };
        let Some(ledger) = self.forest.ledger(&id) else { return };
        let chosen: Vec<Digest> = pool.iter().take(self.cfg.block_size).map(|(_, id)| *id).collect();
        let transactions: Vec<Transaction> = chosen.iter().map(|id| self.observed[id].tx.clone()).collect();
        let authorizations: Vec<SpendAuthorization> = chosen
            .iter()
            .filter_map(|id| match self.auths.get(id) {
                Some(AuthState::Approved(a)) => Some(a.clone()),
                _ => None,
            })
            .collect();
        let ids = routing.ledgers();
        let seen = self.last_seen.get(&id).cloned().unwrap_or_default();
        let block = BlockDraft {
            epoch,
            height: ledger.blocks.len() as u64 + 1,
            prev_hash: ledger.head(),
            code_range: range.clone(),
            ledger_hashes: self.forest.ledger_head_hashes(&ids, &id, &seen),
            transactions,
            timestamp: now,
            authorizations,
        }
        .seal(kp);
        let hash = block.hash();
        let event = NodeEvent::BlockFormed { ledger: id.clone(), height: block.height, hash, txs: chosen.len(), timestamp: now };
        fx.push(Effect::Broadcast(Message::Block(block.clone())));
        self.commit(now, registry, block, fx);
        let heads = ids.iter().filter_map(|l| self.forest.head(l).map(|h| (l.clone(), h))).collect();
        self.last_seen.insert(id, heads);
        self.last_block_at.insert(range.clone(), now);
        Self::event(fx, event);
    }

    fn has_stale_pending(&self, now: u64, range: &ConsensusCodeRange) -> bool {
        self.observed.values().any(|o| o.at + self.cfg.block_interval <= now && range.contains(&o.tx.code()))
    }

    fn monitor(&mut self, now: u64, registry: &mut Registry, fx: &mut Vec<Effect>) {
        let Some(routing) = &self.routing else { return };
        let author = self.keys.contains_key(&routing.author());
        let activation = self.cfg.schedule.epoch_start(routing.epoch);
        let slots: Vec<_> = routing.slots().to_vec();
        for slot in slots {
            let range = slot.range.clone();
            let mine = self.keys.contains_key(&slot.owner);
            if mine || !self.cfg.failover {
                continue;
            }
            let last = self.last_activity.get(&range).copied().unwrap_or(activation).max(activation);
            let silent = now.saturating_sub(last);
            if silent <= self.cfg.silence_window || !self.has_stale_pending(now, &range) {
                continue;
            }
            if slot.backup.is_some_and(|b| self.keys.contains_key(&b)) {
                let me = slot.backup.expect("checked");
                self.amend(now, registry, AmendmentKind::Promote { range }, me, fx);
            } else if author && silent > 2 * self.cfg.silence_window && self.replacing.insert(range.clone()) {
                Self::event(fx, NodeEvent::ReplaceStarted { range: range.clone(), reason: ReplaceReason::Silent });
                self.start_recruit(now, range, Purpose::Replace, fx);
            }
        }
    }

    fn check_overload(&mut self, now: u64, fx: &mut Vec<Effect>) {
        let Some(routing) = &self.routing else { return };
        let stop = Stage::Negotiate.at(&self.cfg.schedule, routing.epoch + 1);
        let limit = self.cfg.overload_factor * self.cfg.block_size;
        for range in self.my_slot_ranges() {
            if self.recruiting.contains_key(&range) {
                continue;
            }
            if self.pool_len(&range) <= limit {
                self.overload_since.remove(&range);
                continue;
            }
            let since = *self.overload_since.entry(range.clone()).or_insert(now);
            if now < since + self.cfg.overload_sustain {
                continue;
            }
            if stop.saturating_sub(now) < self.cfg.balance_guard {
                continue;
            }
            Self::event(fx, NodeEvent::SplitStarted { range: range.clone() });
            self.start_recruit(now, range, Purpose::Split, fx);
        }
    }

    // ---- reformation ----

    fn on_stage(&mut self, now: u64, registry: &mut Registry, epoch: u64, stage: Stage, fx: &mut Vec<Effect>) {
        let schedule = self.cfg.schedule;
        match stage {
            Stage::Interest => {
                for s in [Stage::Rank, Stage::View, Stage::Negotiate, Stage::Approve, Stage::Build, Stage::Activate] {
                    fx.push(Effect::Timer { at: s.at(&schedule, epoch), timer: Timer::Setup { epoch, stage: s } });
                }
                self.setups.entry(epoch).or_default().started_at = now;
                if self.role.candidate || self.behaviour.sybil_keys > 0 {
                    self.send_interest(now, registry, epoch, fx);
                }
            }
            Stage::Rank => self.rank(registry, epoch, fx),
            Stage::View => {
                let setup = self.setups.entry(epoch).or_default();
                let Some(table) = &setup.candidate else { return };
                let views: Vec<TableView> =
                    self.keys.values().filter_map(|kp| TableView::of(table, kp)).collect();
                for v in views {
                    self.setups.entry(epoch).or_default().views.push(v.clone());
                    fx.push(Effect::Broadcast(Message::View(v)));
                }
            }
            Stage::Negotiate => {
                self.suppressed = true;
                self.negotiate(epoch, fx);
            }
            Stage::Approve => self.approve(registry, epoch, fx),
            Stage::Build => self.build(epoch, fx),
            Stage::Activate => self.activate(now, epoch, fx),
        }
    }

    fn send_interest(&mut self, _now: u64, registry: &mut Registry, epoch: u64, fx: &mut Vec<Effect>) {
        if self.role.candidate {
            let reused = if self.behaviour.reuse_key {
                epoch.checked_sub(1).and_then(|e| self.epoch_keys.get(&e)).and_then(|pk| self.keys.get(pk)).cloned()
            } else {
                None
            };
            let kp = match reused {
                Some(kp) => kp,
                None => self.certified_key(registry, fx),
            };
            self.epoch_keys.insert(epoch, kp.public());
            self.advertise(kp, epoch, fx);
            for _ in 0..self.behaviour.extra_certified {
                let kp = self.certified_key(registry, fx);
                self.advertise(kp, epoch, fx);
            }
        }
        for _ in 0..self.behaviour.sybil_keys {
            let fake = KeyPair::generate(self.cfg.scheme, &mut self.rng);
            fx.push(Effect::Broadcast(Message::Interest(ValidatorInterestTx::create(&fake, epoch))));
        }
    }

    fn certified_key(&mut self, registry: &mut Registry, fx: &mut Vec<Effect>) -> KeyPair {
        let kp = KeyPair::generate(self.cfg.scheme, &mut self.rng);
        if let Err(e) = registry.certify(self.identity, kp.public(), self.id) {
            Self::event(fx, NodeEvent::Warning(format!("certification refused: {e}")));
        }
        kp
    }

    fn advertise(&mut self, kp: KeyPair, epoch: u64, fx: &mut Vec<Effect>) {
        let vi = ValidatorInterestTx::create(&kp, epoch);
        self.keys.insert(kp.public(), kp);
        Self::event(fx, NodeEvent::InterestSent { epoch, pk: vi.pk });
        self.setups.entry(epoch).or_default().interest.push((Stage::Interest.at(&self.cfg.schedule, epoch), vi.clone()));
        fx.push(Effect::Broadcast(Message::Interest(vi)));
    }

    fn current_table(&self) -> Option<&ConsensusTable> {
        self.routing.as_ref().map(|r| &r.table)
    }

    fn rank(&mut self, registry: &Registry, epoch: u64, fx: &mut Vec<Effect>) {
        let prev = self.current_table().cloned();
        let setup = self.setups.entry(epoch).or_default();
        let dict = &self.cfg.dict;
        let result = match &prev {
            Some(prev) => reform_validators(setup.started_at, &self.cfg.schedule, prev, &setup.interest, registry, dict)
                .map(|r| (r.table, r.retained)),
            None => {
                let window = self.cfg.schedule.phase_window(epoch, SetupPhase::Interest);
                let c = collect_interest(epoch, window, &setup.interest, registry, &BTreeSet::new());
                rank_candidates(epoch, &c.accepted, dict).map(|t| (t, false))
            }
        };
        match result {
            Ok((table, retained)) => {
                if retained {
                    Self::event(fx, NodeEvent::Warning(format!("no valid interest for epoch {epoch}; table retained")));
                }
                setup.candidate = Some(table);
                setup.retained = retained;
            }
            Err(e) => Self::event(fx, NodeEvent::Warning(format!("ranking for epoch {epoch} failed: {e}"))),
        }
    }

    fn negotiate(&mut self, epoch: u64, fx: &mut Vec<Effect>) {
        let fallback = self.current_table().map(|t| t.carried_to(epoch));
        let setup = self.setups.entry(epoch).or_default();
        let Some(mine) = &setup.candidate else {
            Self::event(fx, NodeEvent::EpochAbort { epoch });
            setup.table = fallback;
            return;
        };
        let outcome = negotiate_table(mine, &setup.views, &self.cfg.dict);
        let (table, how) = match outcome {
            Ok(Negotiated::Confirmed(t)) if setup.retained => (t, TableOutcome::Retained),
            Ok(Negotiated::Confirmed(t)) => (t, TableOutcome::Confirmed),
            Ok(Negotiated::Adopted(t)) => (t, TableOutcome::Adopted),
            Err(ConsensusError::EpochAbort { .. }) | Err(_) => {
                Self::event(fx, NodeEvent::EpochAbort { epoch });
                match fallback {
                    Some(t) => (t, TableOutcome::CarriedAfterAbort),
                    None => {
                        setup.table = None;
                        return;
                    }
                }
            }
        };
        Self::event(fx, NodeEvent::TableFormed { epoch, size: table.len(), outcome: how });
        setup.table = Some(table);
    }

    fn prev_genesis(&self) -> Digest {
        self.forest.genesis_chain().last().map_or(Digest::ZERO, GenesisBlock::hash)
    }

    fn approve(&mut self, registry: &Registry, epoch: u64, fx: &mut Vec<Effect>) {
        let closing = self.routing.as_ref().map(|r| self.forest.closing(r));
        let prev_genesis = self.prev_genesis();
        let setup = self.setups.entry(epoch).or_default();
        setup.closing = closing;
        let Some(table) = &setup.table else { return };
        let body = genesis_body(table, setup.closing.as_ref(), prev_genesis);
        let author = table.author().pk;
        for kp in self.keys.values() {
            if table.entry(&kp.public()).is_none() {
                continue;
            }
            let sign = approve_genesis(&body, kp);
            if kp.public() == author {
                setup.approvals.insert(author, sign);
            } else if let Some(to) = registry.node_of(&author) {
                fx.push(Effect::Send { to, msg: Message::Approval { epoch, signer: kp.public(), sign } });
            }
        }
    }

    fn build(&mut self, epoch: u64, fx: &mut Vec<Effect>) {
        let prev_genesis = self.prev_genesis();
        let setup = self.setups.entry(epoch).or_default();
        let Some(table) = &setup.table else { return };
        let Some(kp) = self.keys.get(&table.author().pk) else { return };
        match build_genesis_block(kp, table, setup.closing.as_ref(), prev_genesis, &setup.approvals) {
            Ok(g) => {
                Self::event(
                    fx,
                    NodeEvent::GenesisBuilt { epoch, hash: g.hash(), approvals: g.approvals.len(), of: table.len() },
                );
                fx.push(Effect::Broadcast(Message::Genesis(g.clone())));
                self.on_genesis(g, fx);
            }
            Err(e) => Self::event(fx, NodeEvent::Warning(format!("genesis for epoch {epoch} not built: {e}"))),
        }
    }

    fn on_genesis(&mut self, g: GenesisBlock, fx: &mut Vec<Effect>) {
        let prev = self.current_table().cloned();
        let prev_genesis = self.prev_genesis();
        let setup = self.setups.entry(g.epoch).or_default();
        let Some(table) = &setup.table else { return };
        let ok = g.prev_genesis == prev_genesis && validate_genesis_block(&g, table, prev.as_ref()).is_ok();
        if ok {
            setup.genesis = Some(g);
        } else {
            Self::event(fx, NodeEvent::GenesisRejected { epoch: g.epoch });
        }
    }

    fn activate(&mut self, now: u64, epoch: u64, fx: &mut Vec<Effect>) {
        let next = Stage::Interest.at(&self.cfg.schedule, epoch + 1);
        fx.push(Effect::Timer { at: next, timer: Timer::Setup { epoch: epoch + 1, stage: Stage::Interest } });
        let setup = self.setups.remove(&epoch).unwrap_or_default();
        let (Some(g), Some(table)) = (setup.genesis, setup.table) else {
            Self::event(fx, NodeEvent::NoGenesis { epoch });
            return;
        };
        let hash = g.hash();
        if self.forest.add_genesis(g).is_err() {
            Self::event(fx, NodeEvent::NoGenesis { epoch });
            return;
        }
        let routing = EpochRouting::new(table);
        self.forest.open_epoch(&routing, hash);
        if epoch > 0 {
            let _ = self.forest.epoch_compact(epoch - 1);
        }
        self.prev_table = self.routing.take().map(|r| r.table);
        self.routing = Some(routing);
        self.suppressed = false;
        self.auths.clear();
        self.last_block_at.clear();
        self.last_seen.clear();
        self.last_activity.clear();
        self.gap.clear();
        self.reported.clear();
        self.replacing.clear();
        self.overload_since.clear();
        self.recruiting.clear();
        self.deferred.clear();
        self.setups.retain(|e, _| *e > epoch);
        // Transactions held over the setup are due on the first tick.
        for r in self.my_slot_ranges() {
            self.last_block_at.insert(r, now.saturating_sub(self.cfg.block_interval));
        }
        Self::event(fx, NodeEvent::EpochStarted { epoch, genesis: hash });
    }
}

impl fmt::Debug for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Node")
            .field("id", &self.id)
            .field("epoch", &self.routing.as_ref().map(|r| r.epoch))
            .field("observed", &self.observed.len())
            .field("blocks", &self.forest.block_count())
            .finish()
    }
}
