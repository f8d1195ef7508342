//! Epoch setup: interest collection, KWM ranking, table negotiation, genesis
//! blocks, reformation, and the per-epoch range assignment.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::codec::{digest_to_base62, hash_content, Base62String, Digest, KwmDictionary};
use crate::range::{allocate_ranges, split_range, ConsensusCodeRange, RangeError};
use crate::sig::{KeyPair, PublicKey, Signature};
use crate::types::{encode_range, record, GenesisBlock, GenesisEntry, ValidatorInterestTx};
use crate::wire::Encoder;

pub type NodeId = usize;
pub type Identity = u64;

/// `count / n > 0.66`, evaluated in integers.
pub fn exceeds_two_thirds(count: usize, n: usize) -> bool {
    n > 0 && (count as u128) * 100 > 66 * (n as u128)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConsensusError {
    #[error("no validator candidates")]
    NoValidators,
    #[error("no view group reaches the 66% majority (best {best} of {union})")]
    EpochAbort { best: usize, union: usize },
    #[error("only the highest-KWM validator may author the genesis block")]
    NotAuthorized,
    #[error("reformation invoked at {now}, expected {expected}")]
    WrongTime { now: u64, expected: u64 },
    #[error(transparent)]
    Range(#[from] RangeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetupPhase {
    Interest,
    Ranking,
    Negotiation,
    Genesis,
}

impl SetupPhase {
    pub const ALL: [SetupPhase; 4] =
        [SetupPhase::Interest, SetupPhase::Ranking, SetupPhase::Negotiation, SetupPhase::Genesis];

    fn index(self) -> u64 {
        match self {
            SetupPhase::Interest => 0,
            SetupPhase::Ranking => 1,
            SetupPhase::Negotiation => 2,
            SetupPhase::Genesis => 3,
        }
    }
}

/// Epoch timing. Epoch `e` commits during `[start(e), start(e + 1))`; its setup
/// occupies the `eth` milliseconds before `start(e)`, overlapping the tail of
/// epoch `e - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpochSchedule {
    pub delta: u64,
    pub eth: u64,
}

impl EpochSchedule {
    pub fn new(delta: u64, eth: u64) -> Option<EpochSchedule> {
        (eth >= 16 && eth < delta).then_some(EpochSchedule { delta, eth })
    }

    pub fn quarter(&self) -> u64 {
        self.eth / 4
    }

    pub fn epoch_start(&self, epoch: u64) -> u64 {
        self.eth + epoch * self.delta
    }

    pub fn setup_start(&self, epoch: u64) -> u64 {
        self.epoch_start(epoch) - self.eth
    }

    /// Half-open window of one setup sub-phase for `epoch`.
    pub fn phase_window(&self, epoch: u64, phase: SetupPhase) -> (u64, u64) {
        let start = self.setup_start(epoch) + phase.index() * self.quarter();
        let end = if phase == SetupPhase::Genesis { self.epoch_start(epoch) } else { start + self.quarter() };
        (start, end)
    }

    /// The committing epoch at `t`, if any.
    pub fn epoch_at(&self, t: u64) -> Option<u64> {
        (t >= self.eth).then(|| (t - self.eth) / self.delta)
    }

    /// The epoch being set up at `t` and the active sub-phase.
    pub fn setup_at(&self, t: u64) -> Option<(u64, SetupPhase)> {
        let next = self.epoch_at(t).map_or(0, |e| e + 1);
        let start = self.setup_start(next);
        if t < start {
            return None;
        }
        let idx = ((t - start) / self.quarter()).min(3);
        Some((next, SetupPhase::ALL[idx as usize]))
    }
}

/// Base-62 rendering of the hash of a public key; the string KWM is taken over.
pub fn pk_code(pk: &PublicKey) -> Base62String {
    digest_to_base62(&hash_content(&pk.to_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("identity {0} is banned")]
    Banned(Identity),
    #[error("key already certified to another identity")]
    Taken,
    #[error("evidence does not prove misbehaviour")]
    BadEvidence,
}

/// Proof that one authorizer approved two different spends of one output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DoubleSpendEvidence {
    pub first: crate::types::SpendAuthorization,
    pub second: crate::types::SpendAuthorization,
}

impl DoubleSpendEvidence {
    pub fn accused(&self) -> PublicKey {
        self.first.authorizer_pk
    }

    pub fn verify(&self) -> bool {
        use crate::types::Verdict;
        let (a, b) = (&self.first, &self.second);
        a.t_out_id == b.t_out_id
            && a.authorizer_pk == b.authorizer_pk
            && a.spender_id != b.spender_id
            && a.verdict == Verdict::Approved
            && b.verdict == Verdict::Approved
            && a.verify()
            && b.verify()
    }
}

/// Certified-key registry standing in for a certificate authority.
///
/// An identity may hold several keys. Verified double-spend evidence bans the
/// accused key's identity; keys of banned identities stop counting as
/// certified and the identity cannot obtain new ones.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    keys: BTreeMap<PublicKey, Identity>,
    directory: BTreeMap<PublicKey, NodeId>,
    banned: BTreeSet<Identity>,
    refused: u64,
}

impl Registry {
    pub fn new() -> Self {
        Registry::default()
    }

    pub fn certify(&mut self, identity: Identity, pk: PublicKey, node: NodeId) -> Result<(), RegistryError> {
        if self.banned.contains(&identity) {
            self.refused += 1;
            return Err(RegistryError::Banned(identity));
        }
        match self.keys.get(&pk) {
            Some(&owner) if owner != identity => return Err(RegistryError::Taken),
            _ => {}
        }
        self.keys.insert(pk, identity);
        self.directory.insert(pk, node);
        Ok(())
    }

    pub fn is_certified(&self, pk: &PublicKey) -> bool {
        self.keys.get(pk).is_some_and(|id| !self.banned.contains(id))
    }

    pub fn identity_of(&self, pk: &PublicKey) -> Option<Identity> {
        self.keys.get(pk).copied()
    }

    pub fn node_of(&self, pk: &PublicKey) -> Option<NodeId> {
        self.directory.get(pk).copied()
    }

    pub fn is_banned(&self, identity: Identity) -> bool {
        self.banned.contains(&identity)
    }

    pub fn refused_issuances(&self) -> u64 {
        self.refused
    }

    pub fn report_double_spend(&mut self, evidence: &DoubleSpendEvidence) -> Result<Identity, RegistryError> {
        if !evidence.verify() {
            return Err(RegistryError::BadEvidence);
        }
        let id = self.identity_of(&evidence.accused()).ok_or(RegistryError::BadEvidence)?;
        self.banned.insert(id);
        Ok(id)
    }
}

/// Why an interest transaction was not retained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum InterestDrop {
    OutsideWindow,
    WrongEpoch,
    BadSignature,
    Uncertified,
    Duplicate,
    ReusedKey,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CollectOutcome {
    pub accepted: Vec<ValidatorInterestTx>,
    pub dropped: BTreeMap<InterestDrop, usize>,
}

impl CollectOutcome {
    pub fn count(&self, why: InterestDrop) -> usize {
        self.dropped.get(&why).copied().unwrap_or(0)
    }
}

/// Filters interest transactions received during `[start, end)` for `epoch`.
///
/// `incoming` pairs each transaction with its arrival time. Keys listed in
/// `excluded` (those used in the previous epoch) are discarded.
pub fn collect_interest(
    epoch: u64,
    window: (u64, u64),
    incoming: &[(u64, ValidatorInterestTx)],
    registry: &Registry,
    excluded: &BTreeSet<PublicKey>,
) -> CollectOutcome {
    let mut out = CollectOutcome::default();
    let mut seen = BTreeSet::new();
    let mut drop = |why| *out.dropped.entry(why).or_insert(0) += 1;
    for (at, vi) in incoming {
        let why = if *at < window.0 || *at >= window.1 {
            Some(InterestDrop::OutsideWindow)
        } else if vi.epoch != epoch {
            Some(InterestDrop::WrongEpoch)
        } else if !vi.verify() {
            Some(InterestDrop::BadSignature)
        } else if !registry.is_certified(&vi.pk) {
            Some(InterestDrop::Uncertified)
        } else if excluded.contains(&vi.pk) {
            Some(InterestDrop::ReusedKey)
        } else if !seen.insert(vi.pk) {
            Some(InterestDrop::Duplicate)
        } else {
            None
        };
        match why {
            Some(w) => drop(w),
            None => out.accepted.push(vi.clone()),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableEntry {
    pub pk: PublicKey,
    pub pk_code: Base62String,
    pub kwm: u64,
    pub range: ConsensusCodeRange,
    pub backup: Option<PublicKey>,
    /// Signature of the validator's interest transaction.
    pub sign: Signature,
}

/// The epoch's validators in descending KWM order with their ranges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsensusTable {
    pub epoch: u64,
    pub k: usize,
    pub entries: Vec<TableEntry>,
}

impl ConsensusTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The genesis author.
    pub fn author(&self) -> &TableEntry {
        &self.entries[0]
    }

    pub fn entry(&self, pk: &PublicKey) -> Option<&TableEntry> {
        self.entries.iter().find(|e| &e.pk == pk)
    }

    pub fn position(&self, pk: &PublicKey) -> Option<usize> {
        self.entries.iter().position(|e| &e.pk == pk)
    }

    pub fn owner_of(&self, code: &Base62String) -> Option<&TableEntry> {
        self.entries.iter().find(|e| e.range.contains(code))
    }

    pub fn members(&self) -> BTreeSet<PublicKey> {
        self.entries.iter().map(|e| e.pk).collect()
    }

    /// The same assignment relabelled for a later epoch.
    pub fn carried_to(&self, epoch: u64) -> ConsensusTable {
        ConsensusTable { epoch, ..self.clone() }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::with_tag(record::VIEW);
        enc.u64(self.epoch).u64(self.k as u64).u64(self.entries.len() as u64);
        for e in &self.entries {
            enc.pk(&e.pk).symbols(&e.pk_code).u64(e.kwm);
            encode_range(&mut enc, &e.range);
            enc.opt_pk(e.backup.as_ref()).sig(&e.sign);
        }
        enc.finish()
    }
}

trait OptPk {
    fn opt_pk(&mut self, pk: Option<&PublicKey>) -> &mut Self;
}

impl OptPk for Encoder {
    fn opt_pk(&mut self, pk: Option<&PublicKey>) -> &mut Self {
        match pk {
            Some(pk) => self.u8(1).pk(pk),
            None => self.u8(0),
        }
    }
}

/// Indices of `codes` by descending KWM, ties by ascending code.
pub fn kwm_order(codes: &[Base62String], dict: &KwmDictionary) -> Vec<usize> {
    let mut idx: Vec<(u64, usize)> = codes.iter().enumerate().map(|(i, c)| (dict.weigh(c), i)).collect();
    idx.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| codes[a.1].cmp(&codes[b.1])));
    idx.into_iter().map(|(_, i)| i).collect()
}

/// Orders candidates by KWM of their key hash and assigns ranges in order.
///
/// Equal weights fall back to ascending encoded key hash. The backup of entry
/// `i` is entry `i + 1`, wrapping around; a lone validator has none.
pub fn rank_candidates(
    epoch: u64,
    cands: &[ValidatorInterestTx],
    dict: &KwmDictionary,
) -> Result<ConsensusTable, ConsensusError> {
    let codes: Vec<Base62String> = cands.iter().map(|c| pk_code(&c.pk)).collect();
    let mut scored: Vec<(u64, Base62String, &ValidatorInterestTx)> = kwm_order(&codes, dict)
        .into_iter()
        .map(|i| (dict.weigh(&codes[i]), codes[i].clone(), &cands[i]))
        .collect();
    scored.dedup_by(|a, b| a.2.pk == b.2.pk);
    if scored.is_empty() {
        return Err(ConsensusError::NoValidators);
    }
    let ranges = allocate_ranges(scored.len())?;
    let k = ranges[0].k();
    let n = scored.len();
    let entries = scored
        .iter()
        .zip(ranges)
        .enumerate()
        .map(|(i, ((kwm, code, c), range))| TableEntry {
            pk: c.pk,
            pk_code: code.clone(),
            kwm: *kwm,
            range,
            backup: (n > 1).then(|| scored[(i + 1) % n].2.pk),
            sign: c.sign.clone(),
        })
        .collect();
    Ok(ConsensusTable { epoch, k, entries })
}

/// One member's claim during negotiation: its range and the table size it sees.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableView {
    pub epoch: u64,
    pub sender: PublicKey,
    pub range: ConsensusCodeRange,
    pub total: u64,
    pub interest_sign: Signature,
    pub sign: Signature,
}

impl TableView {
    pub fn signed_bytes(
        epoch: u64,
        sender: &PublicKey,
        range: &ConsensusCodeRange,
        total: u64,
        interest_sign: &Signature,
    ) -> Vec<u8> {
        let mut enc = Encoder::with_tag(record::VIEW_CONTENT);
        enc.u64(epoch).pk(sender);
        encode_range(&mut enc, range);
        enc.u64(total).sig(interest_sign);
        enc.finish()
    }

    /// The view `kp` holds of `table`, or `None` when it is not a member.
    pub fn of(table: &ConsensusTable, kp: &KeyPair) -> Option<TableView> {
        let entry = table.entry(&kp.public())?;
        let total = table.len() as u64;
        let bytes = TableView::signed_bytes(table.epoch, &entry.pk, &entry.range, total, &entry.sign);
        Some(TableView {
            epoch: table.epoch,
            sender: entry.pk,
            range: entry.range.clone(),
            total,
            interest_sign: entry.sign.clone(),
            sign: kp.sign(&bytes),
        })
    }

    pub fn verify(&self) -> bool {
        let bytes = TableView::signed_bytes(self.epoch, &self.sender, &self.range, self.total, &self.interest_sign);
        self.sender.verify(&bytes, &self.sign)
    }

    fn interest(&self) -> ValidatorInterestTx {
        ValidatorInterestTx {
            epoch: self.epoch,
            t_id: ValidatorInterestTx::id_for(self.epoch, &self.sender),
            pk: self.sender,
            sign: self.interest_sign.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Negotiated {
    /// The local table matches the majority.
    Confirmed(ConsensusTable),
    /// The local table was replaced by the majority's.
    Adopted(ConsensusTable),
}

impl Negotiated {
    pub fn table(&self) -> &ConsensusTable {
        match self {
            Negotiated::Confirmed(t) | Negotiated::Adopted(t) => t,
        }
    }

    pub fn into_table(self) -> ConsensusTable {
        match self {
            Negotiated::Confirmed(t) | Negotiated::Adopted(t) => t,
        }
    }
}

/// Reconciles the local table with members' views.
///
/// Views group by the total they report, counting only views whose range is
/// one of the even-partition ranges for that total. A group decides when it
/// holds more than 66% of all validators claimed by anyone (local members plus
/// view senders). The local table is confirmed when it has the group's size
/// and contains every sender in the group; otherwise, when the claimed set has
/// the group's size, the claimed set is re-ranked and adopted.
pub fn negotiate_table(
    mine: &ConsensusTable,
    views: &[TableView],
    dict: &KwmDictionary,
) -> Result<Negotiated, ConsensusError> {
    let mut by_sender: BTreeMap<PublicKey, &TableView> = BTreeMap::new();
    for v in views {
        if v.epoch == mine.epoch && v.verify() && v.interest().verify() {
            by_sender.entry(v.sender).or_insert(v);
        }
    }
    let mut union: BTreeMap<PublicKey, ValidatorInterestTx> = mine
        .entries
        .iter()
        .map(|e| {
            let vi = ValidatorInterestTx {
                epoch: mine.epoch,
                t_id: ValidatorInterestTx::id_for(mine.epoch, &e.pk),
                pk: e.pk,
                sign: e.sign.clone(),
            };
            (e.pk, vi)
        })
        .collect();
    for v in by_sender.values() {
        union.entry(v.sender).or_insert_with(|| v.interest());
    }

    let mut groups: BTreeMap<u64, Vec<PublicKey>> = BTreeMap::new();
    for v in by_sender.values() {
        let consistent = usize::try_from(v.total)
            .ok()
            .and_then(|t| allocate_ranges(t).ok())
            .is_some_and(|rs| rs.contains(&v.range));
        if consistent {
            groups.entry(v.total).or_default().push(v.sender);
        }
    }
    let mine_len = mine.len() as u64;
    let best = groups
        .iter()
        .max_by_key(|(total, senders)| (senders.len(), **total == mine_len, std::cmp::Reverse(**total)));
    let Some((&total, senders)) = best else {
        return Err(ConsensusError::EpochAbort { best: 0, union: union.len() });
    };
    if !exceeds_two_thirds(senders.len(), union.len()) {
        return Err(ConsensusError::EpochAbort { best: senders.len(), union: union.len() });
    }
    let members = mine.members();
    if total == mine_len && senders.iter().all(|s| members.contains(s)) {
        return Ok(Negotiated::Confirmed(mine.clone()));
    }
    if union.len() as u64 == total {
        let cands: Vec<ValidatorInterestTx> = union.into_values().collect();
        return Ok(Negotiated::Adopted(rank_candidates(mine.epoch, &cands, dict)?));
    }
    Err(ConsensusError::EpochAbort { best: senders.len(), union: union.len() })
}

/// What the outgoing validators of the previous epoch contribute to a genesis
/// block: each one's interest signature and closing ledger hash.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Closing {
    pub validators: BTreeMap<PublicKey, (Signature, Digest)>,
}

/// Genesis entries for the current table plus the validators leaving.
pub fn genesis_entries(table: &ConsensusTable, closing: Option<&Closing>) -> Vec<GenesisEntry> {
    let mut out: Vec<GenesisEntry> = table
        .entries
        .iter()
        .map(|e| GenesisEntry {
            pk: e.pk,
            code: Some(e.range.clone()),
            sign: e.sign.clone(),
            hash_ledger: closing.and_then(|c| c.validators.get(&e.pk)).map(|(_, h)| *h),
        })
        .collect();
    if let Some(c) = closing {
        let current = table.members();
        for (pk, (sign, h)) in &c.validators {
            if !current.contains(pk) {
                out.push(GenesisEntry { pk: *pk, code: None, sign: sign.clone(), hash_ledger: Some(*h) });
            }
        }
    }
    out
}

/// The unsigned genesis block every member computes and approves.
pub fn genesis_body(table: &ConsensusTable, closing: Option<&Closing>, prev_genesis: Digest) -> GenesisBlock {
    GenesisBlock {
        epoch: table.epoch,
        prev_genesis,
        total_val: table.len() as u64,
        entries: genesis_entries(table, closing),
        approvals: Vec::new(),
    }
}

pub fn approve_genesis(body: &GenesisBlock, kp: &KeyPair) -> Signature {
    kp.sign(body.hash().as_bytes())
}

/// Assembles the genesis block from collected approvals.
///
/// Only the table's first entry may author it. Approvals are kept in table
/// order; approvals from non-members or with bad signatures are left out.
pub fn build_genesis_block(
    author: &KeyPair,
    table: &ConsensusTable,
    closing: Option<&Closing>,
    prev_genesis: Digest,
    approvals: &BTreeMap<PublicKey, Signature>,
) -> Result<GenesisBlock, ConsensusError> {
    if table.is_empty() || table.author().pk != author.public() {
        return Err(ConsensusError::NotAuthorized);
    }
    let mut g = genesis_body(table, closing, prev_genesis);
    let h = g.hash();
    g.approvals = table
        .entries
        .iter()
        .filter_map(|e| approvals.get(&e.pk).map(|s| (e.pk, s.clone())))
        .filter(|(pk, s)| pk.verify(h.as_bytes(), s))
        .collect();
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenesisRejection {
    #[error("genesis structure: {0}")]
    Structure(String),
    #[error("null-rule violation for {0:?}")]
    NullRule(PublicKey),
    #[error("bad approval signature from {0:?}")]
    BadSignature(PublicKey),
    #[error("insufficient approvals: {have} of {of}")]
    InsufficientApprovals { have: usize, of: usize },
}

/// Checks a genesis block against the table it announces.
///
/// `prev` is the previous epoch's table when there was one. The null rules
/// are: a ledger hash is absent exactly for validators not in `prev`; a code
/// is absent exactly for validators of `prev` absent from `table`.
pub fn validate_genesis_block(
    g: &GenesisBlock,
    table: &ConsensusTable,
    prev: Option<&ConsensusTable>,
) -> Result<(), GenesisRejection> {
    let structure = |m: &str| Err(GenesisRejection::Structure(m.to_string()));
    if g.epoch != table.epoch {
        return structure("epoch mismatch");
    }
    if g.total_val != table.len() as u64 {
        return structure("total_val does not match the table");
    }
    let coded: Vec<&GenesisEntry> = g.entries.iter().filter(|e| e.code.is_some()).collect();
    if coded.len() != table.len() {
        return structure("coded entries do not match the table");
    }
    for (e, t) in coded.iter().zip(&table.entries) {
        if e.pk != t.pk || e.code.as_ref() != Some(&t.range) {
            return structure("entry assignment differs from the table");
        }
        let vi_id = ValidatorInterestTx::id_for(g.epoch, &e.pk);
        if !e.pk.verify(vi_id.as_bytes(), &e.sign) {
            return Err(GenesisRejection::BadSignature(e.pk));
        }
    }
    let prev_members = prev.map(ConsensusTable::members).unwrap_or_default();
    let members = table.members();
    let mut seen = BTreeSet::new();
    for e in &g.entries {
        if !seen.insert(e.pk) {
            return structure("duplicate entry");
        }
        let continuing = prev_members.contains(&e.pk);
        match (&e.code, &e.hash_ledger) {
            (Some(_), h) if h.is_some() != continuing => return Err(GenesisRejection::NullRule(e.pk)),
            (None, None) => return Err(GenesisRejection::NullRule(e.pk)),
            (None, Some(_)) if members.contains(&e.pk) => return Err(GenesisRejection::NullRule(e.pk)),
            _ => {}
        }
    }
    let h = g.hash();
    let mut approvers = BTreeSet::new();
    for (pk, sig) in &g.approvals {
        if !members.contains(pk) || !approvers.insert(*pk) {
            return structure("approval from a non-member or duplicate approval");
        }
        if !pk.verify(h.as_bytes(), sig) {
            return Err(GenesisRejection::BadSignature(*pk));
        }
    }
    if !exceeds_two_thirds(approvers.len(), table.len()) {
        return Err(GenesisRejection::InsufficientApprovals { have: approvers.len(), of: table.len() });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reformation {
    pub table: ConsensusTable,
    /// The previous assignment was kept because no valid candidate remained.
    pub retained: bool,
    pub collected: CollectOutcome,
}

/// Forms the next epoch's table from the interest gathered in its first setup
/// sub-phase, discarding keys that served in `prev`.
pub fn reform_validators(
    now: u64,
    schedule: &EpochSchedule,
    prev: &ConsensusTable,
    incoming: &[(u64, ValidatorInterestTx)],
    registry: &Registry,
    dict: &KwmDictionary,
) -> Result<Reformation, ConsensusError> {
    let epoch = prev.epoch + 1;
    let expected = schedule.setup_start(epoch);
    if now != expected {
        return Err(ConsensusError::WrongTime { now, expected });
    }
    let window = schedule.phase_window(epoch, SetupPhase::Interest);
    let collected = collect_interest(epoch, window, incoming, registry, &prev.members());
    match rank_candidates(epoch, &collected.accepted, dict) {
        Ok(table) => Ok(Reformation { table, retained: false, collected }),
        Err(ConsensusError::NoValidators) => {
            Ok(Reformation { table: prev.carried_to(epoch), retained: true, collected })
        }
        Err(e) => Err(e),
    }
}

/// Identifies one ledger: the range it covers within one epoch.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LedgerId {
    pub epoch: u64,
    pub range: ConsensusCodeRange,
}

impl std::fmt::Display for LedgerId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.epoch, self.range)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slot {
    pub range: ConsensusCodeRange,
    pub owner: PublicKey,
    pub owner_sign: Signature,
    pub backup: Option<PublicKey>,
    /// Owner replaced by a promotion, eligible to reclaim the slot.
    pub displaced: Option<PublicKey>,
}

impl Slot {
    pub fn ledger(&self, epoch: u64) -> LedgerId {
        LedgerId { epoch, range: self.range.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AmendmentKind {
    /// The owner of `parent` keeps its lower half and hands the upper half to
    /// `recruit`. Both child ledgers start from `parent_head`.
    Split { parent: ConsensusCodeRange, recruit: ValidatorInterestTx, parent_head: Digest },
    /// The backup takes over a silent range.
    Promote { range: ConsensusCodeRange },
    /// A displaced owner with the lower key hash takes its range back.
    Reclaim { range: ConsensusCodeRange },
    /// The genesis author installs `recruit` as the owner of `range`.
    Replace { range: ConsensusCodeRange, recruit: ValidatorInterestTx },
}

impl AmendmentKind {
    pub fn name(&self) -> &'static str {
        match self {
            AmendmentKind::Split { .. } => "split",
            AmendmentKind::Promote { .. } => "promote",
            AmendmentKind::Reclaim { .. } => "reclaim",
            AmendmentKind::Replace { .. } => "replace",
        }
    }

    pub fn range(&self) -> &ConsensusCodeRange {
        match self {
            AmendmentKind::Split { parent, .. } => parent,
            AmendmentKind::Promote { range } | AmendmentKind::Reclaim { range } | AmendmentKind::Replace { range, .. } => {
                range
            }
        }
    }
}

/// A signed mid-epoch change to the range assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Amendment {
    pub epoch: u64,
    pub kind: AmendmentKind,
    pub signer: PublicKey,
    pub sign: Signature,
}

impl Amendment {
    pub fn signed_bytes(epoch: u64, kind: &AmendmentKind, signer: &PublicKey) -> Vec<u8> {
        use crate::wire::Canonical;
        let mut enc = Encoder::with_tag(record::MESSAGE);
        enc.u64(epoch).pk(signer);
        match kind {
            AmendmentKind::Split { parent, recruit, parent_head } => {
                enc.u8(1);
                encode_range(&mut enc, parent);
                recruit.encode(&mut enc);
                enc.digest(parent_head);
            }
            AmendmentKind::Promote { range } => {
                enc.u8(2);
                encode_range(&mut enc, range);
            }
            AmendmentKind::Reclaim { range } => {
                enc.u8(3);
                encode_range(&mut enc, range);
            }
            AmendmentKind::Replace { range, recruit } => {
                enc.u8(4);
                encode_range(&mut enc, range);
                recruit.encode(&mut enc);
            }
        }
        enc.finish()
    }

    pub fn new(epoch: u64, kind: AmendmentKind, kp: &KeyPair) -> Amendment {
        let signer = kp.public();
        let sign = kp.sign(&Amendment::signed_bytes(epoch, &kind, &signer));
        Amendment { epoch, kind, signer, sign }
    }

    pub fn verify(&self) -> bool {
        self.signer.verify(&Amendment::signed_bytes(self.epoch, &self.kind, &self.signer), &self.sign)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AmendmentError {
    #[error("amendment for epoch {0} does not match routing epoch {1}")]
    Epoch(u64, u64),
    #[error("bad amendment signature")]
    Signature,
    #[error("no slot covers {0}")]
    UnknownRange(ConsensusCodeRange),
    #[error("signer may not {0} this range")]
    Unauthorized(&'static str),
    #[error("recruit interest is invalid or uncertified")]
    BadRecruit,
    #[error(transparent)]
    Range(#[from] RangeError),
}

/// Effect of an applied amendment on the ledger forest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RoutingChange {
    Forked { parent: LedgerId, low: LedgerId, high: LedgerId, root: Digest },
    OwnerChanged { range: ConsensusCodeRange, from: PublicKey, to: PublicKey },
}

/// The effective assignment of one epoch: the table plus applied amendments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpochRouting {
    pub epoch: u64,
    pub table: ConsensusTable,
    slots: Vec<Slot>,
    former: Vec<(ConsensusCodeRange, PublicKey)>,
}

impl EpochRouting {
    pub fn new(table: ConsensusTable) -> EpochRouting {
        let mut slots: Vec<Slot> = table
            .entries
            .iter()
            .map(|e| Slot {
                range: e.range.clone(),
                owner: e.pk,
                owner_sign: e.sign.clone(),
                backup: e.backup,
                displaced: None,
            })
            .collect();
        slots.sort_by(|a, b| a.range.low().cmp(b.range.low()));
        EpochRouting { epoch: table.epoch, table, slots, former: Vec::new() }
    }

    pub fn author(&self) -> PublicKey {
        self.table.author().pk
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn slot(&self, range: &ConsensusCodeRange) -> Option<&Slot> {
        self.slots.iter().find(|s| &s.range == range)
    }

    pub fn slot_for_code(&self, code: &Base62String) -> Option<&Slot> {
        self.slots.iter().find(|s| s.range.contains(code))
    }

    pub fn ledgers(&self) -> Vec<LedgerId> {
        self.slots.iter().map(|s| s.ledger(self.epoch)).collect()
    }

    pub fn owned_by<'a>(&'a self, pk: &'a PublicKey) -> impl Iterator<Item = &'a Slot> + 'a {
        self.slots.iter().filter(move |s| &s.owner == pk)
    }

    /// Whether `pk` owns, or owned earlier in the epoch, the range holding `code`.
    pub fn was_owner(&self, code: &Base62String, pk: &PublicKey) -> bool {
        self.slot_for_code(code).is_some_and(|s| &s.owner == pk)
            || self.former.iter().any(|(r, p)| p == pk && r.contains(code))
    }

    /// Keys owning at least one slot, with their interest signatures.
    pub fn owners(&self) -> BTreeMap<PublicKey, Signature> {
        self.slots.iter().map(|s| (s.owner, s.owner_sign.clone())).collect()
    }

    pub fn apply(
        &mut self,
        a: &Amendment,
        certified: impl Fn(&PublicKey) -> bool,
    ) -> Result<RoutingChange, AmendmentError> {
        if a.epoch != self.epoch {
            return Err(AmendmentError::Epoch(a.epoch, self.epoch));
        }
        if !a.verify() {
            return Err(AmendmentError::Signature);
        }
        let range = a.kind.range().clone();
        let idx = self
            .slots
            .iter()
            .position(|s| s.range == range)
            .ok_or(AmendmentError::UnknownRange(range.clone()))?;
        let recruit_ok =
            |vi: &ValidatorInterestTx| vi.epoch == self.epoch && vi.verify() && certified(&vi.pk);
        let slot = &self.slots[idx];
        let change = match &a.kind {
            AmendmentKind::Split { recruit, parent_head, .. } => {
                if slot.owner != a.signer {
                    return Err(AmendmentError::Unauthorized("split"));
                }
                if !recruit_ok(recruit) {
                    return Err(AmendmentError::BadRecruit);
                }
                let (lo, hi) = split_range(&slot.range)?;
                let low = Slot { range: lo, displaced: None, ..slot.clone() };
                let high = Slot {
                    range: hi,
                    owner: recruit.pk,
                    owner_sign: recruit.sign.clone(),
                    backup: Some(slot.owner),
                    displaced: None,
                };
                let change = RoutingChange::Forked {
                    parent: slot.ledger(self.epoch),
                    low: low.ledger(self.epoch),
                    high: high.ledger(self.epoch),
                    root: *parent_head,
                };
                self.former.push((slot.range.clone(), slot.owner));
                self.slots.splice(idx..=idx, [low, high]);
                return Ok(change);
            }
            AmendmentKind::Promote { .. } => {
                if slot.backup != Some(a.signer) {
                    return Err(AmendmentError::Unauthorized("promote"));
                }
                let from = slot.owner;
                let sign = self.owners().get(&a.signer).cloned().unwrap_or_default();
                let s = &mut self.slots[idx];
                s.displaced = Some(from);
                s.owner = a.signer;
                s.owner_sign = sign;
                s.backup = None;
                RoutingChange::OwnerChanged { range, from, to: a.signer }
            }
            AmendmentKind::Reclaim { .. } => {
                if slot.displaced != Some(a.signer) || pk_code(&a.signer) >= pk_code(&slot.owner) {
                    return Err(AmendmentError::Unauthorized("reclaim"));
                }
                let from = slot.owner;
                let sign = self
                    .table
                    .entry(&a.signer)
                    .map(|e| e.sign.clone())
                    .unwrap_or_default();
                let s = &mut self.slots[idx];
                s.owner = a.signer;
                s.owner_sign = sign;
                s.displaced = None;
                s.backup = Some(from);
                RoutingChange::OwnerChanged { range, from, to: a.signer }
            }
            AmendmentKind::Replace { recruit, .. } => {
                if a.signer != self.author() {
                    return Err(AmendmentError::Unauthorized("replace"));
                }
                if !recruit_ok(recruit) {
                    return Err(AmendmentError::BadRecruit);
                }
                let from = slot.owner;
                let s = &mut self.slots[idx];
                s.owner = recruit.pk;
                s.owner_sign = recruit.sign.clone();
                s.displaced = None;
                RoutingChange::OwnerChanged { range, from, to: recruit.pk }
            }
        };
        if let RoutingChange::OwnerChanged { range, from, .. } = &change {
            self.former.push((range.clone(), *from));
        }
        Ok(change)
    }
}

/// Picks the reply with the highest KWM, ties to the lower key hash.
pub fn select_recruit<'a>(
    replies: impl IntoIterator<Item = &'a ValidatorInterestTx>,
    dict: &KwmDictionary,
) -> Option<&'a ValidatorInterestTx> {
    replies
        .into_iter()
        .map(|vi| {
            let code = pk_code(&vi.pk);
            (dict.weigh(&code), code, vi)
        })
        .max_by(|a, b| a.0.cmp(&b.0).then_with(|| b.1.cmp(&a.1)))
        .map(|(_, _, vi)| vi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sig::Scheme;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn keys(n: usize, seed: u64) -> Vec<KeyPair> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| KeyPair::generate(Scheme::HashStandIn, &mut rng)).collect()
    }

    fn interest(kps: &[KeyPair], epoch: u64) -> Vec<ValidatorInterestTx> {
        kps.iter().map(|k| ValidatorInterestTx::create(k, epoch)).collect()
    }

    fn registry_for(kps: &[KeyPair]) -> Registry {
        let mut r = Registry::new();
        for (i, k) in kps.iter().enumerate() {
            r.certify(i as u64, k.public(), i).unwrap();
        }
        r
    }

    #[test]
    fn threshold_boundaries() {
        assert!(exceeds_two_thirds(2, 3));
        assert!(exceeds_two_thirds(3, 4));
        assert!(exceeds_two_thirds(4, 5));
        assert!(!exceeds_two_thirds(3, 5));
        assert!(!exceeds_two_thirds(6, 10));
        assert!(exceeds_two_thirds(7, 10));
        assert!(!exceeds_two_thirds(66, 100));
        assert!(exceeds_two_thirds(67, 100));
        assert!(!exceeds_two_thirds(0, 0));
    }

    #[test]
    fn schedule_phases() {
        let s = EpochSchedule::new(10_000, 2_000).unwrap();
        assert_eq!(s.epoch_start(0), 2_000);
        assert_eq!(s.phase_window(1, SetupPhase::Interest), (10_000, 10_500));
        assert_eq!(s.phase_window(1, SetupPhase::Genesis), (11_500, 12_000));
        assert_eq!(s.epoch_at(1_999), None);
        assert_eq!(s.epoch_at(2_000), Some(0));
        assert_eq!(s.setup_at(0), Some((0, SetupPhase::Interest)));
        assert_eq!(s.setup_at(5_000), None);
        assert_eq!(s.setup_at(11_600), Some((1, SetupPhase::Genesis)));
        assert!(EpochSchedule::new(1_000, 1_000).is_none());
    }

    #[test]
    fn collect_filters_window_signature_registry_and_duplicates() {
        let kps = keys(4, 1);
        let mut reg = registry_for(&kps[..3]);
        let vis = interest(&kps, 0);
        let mut forged = vis[1].clone();
        forged.sign = kps[0].sign(forged.t_id.as_bytes());
        let incoming = vec![
            (10, vis[0].clone()),
            (20, vis[0].clone()),
            (30, forged),
            (40, vis[2].clone()),
            (500, vis[1].clone()),
            (50, vis[3].clone()),
        ];
        let out = collect_interest(0, (0, 500), &incoming, &reg, &BTreeSet::new());
        assert_eq!(out.accepted, vec![vis[0].clone(), vis[2].clone()]);
        assert_eq!(out.count(InterestDrop::Duplicate), 1);
        assert_eq!(out.count(InterestDrop::BadSignature), 1);
        assert_eq!(out.count(InterestDrop::OutsideWindow), 1);
        assert_eq!(out.count(InterestDrop::Uncertified), 1);

        let ev_a = crate::types::SpendAuthorization::issue(
            &kps[2],
            Digest([1; 32]),
            Digest([2; 32]),
            crate::types::Verdict::Approved,
        );
        let ev_b = crate::types::SpendAuthorization::issue(
            &kps[2],
            Digest([1; 32]),
            Digest([3; 32]),
            crate::types::Verdict::Approved,
        );
        assert_eq!(reg.report_double_spend(&DoubleSpendEvidence { first: ev_a, second: ev_b }), Ok(2));
        let out = collect_interest(0, (0, 500), &incoming, &reg, &BTreeSet::new());
        assert_eq!(out.accepted, vec![vis[0].clone()]);
        let fresh = KeyPair::from_seed(Scheme::HashStandIn, [42; 32]);
        assert_eq!(reg.certify(2, fresh.public(), 2), Err(RegistryError::Banned(2)));
    }

    #[test]
    fn single_candidate_owns_everything() {
        let kps = keys(1, 2);
        let t = rank_candidates(0, &interest(&kps, 0), &KwmDictionary::default()).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.entries[0].range, ConsensusCodeRange::parse("0-z").unwrap());
        assert_eq!(t.entries[0].backup, None);
        assert_eq!(rank_candidates(0, &[], &KwmDictionary::default()), Err(ConsensusError::NoValidators));
    }

    #[test]
    fn equal_weights_fall_back_to_key_hash_order() {
        // A dictionary giving every symbol the same weight makes all KWMs tie.
        let dict = KwmDictionary::from_weights([1; 62]);
        let kps = keys(12, 3);
        let vis = interest(&kps, 0);
        let a = rank_candidates(0, &vis, &dict).unwrap();
        let mut reversed = vis.clone();
        reversed.reverse();
        let b = rank_candidates(0, &reversed, &dict).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let codes: Vec<_> = a.entries.iter().map(|e| e.pk_code.clone()).collect();
        let mut sorted = codes.clone();
        sorted.sort();
        assert_eq!(codes, sorted);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn ranking_is_descending_and_order_independent(seed in any::<u64>(), n in 1usize..40) {
            let kps = keys(n, seed);
            let mut vis = interest(&kps, 0);
            let dict = KwmDictionary::default();
            let t = rank_candidates(0, &vis, &dict).unwrap();
            for w in t.entries.windows(2) {
                prop_assert!(w[0].kwm > w[1].kwm || (w[0].kwm == w[1].kwm && w[0].pk_code < w[1].pk_code));
            }
            let ranges = allocate_ranges(n).unwrap();
            for (e, r) in t.entries.iter().zip(&ranges) {
                prop_assert_eq!(&e.range, r);
            }
            for (i, e) in t.entries.iter().enumerate() {
                let next = (n > 1).then(|| t.entries[(i + 1) % n].pk);
                prop_assert_eq!(e.backup, next);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            for i in (1..vis.len()).rev() {
                vis.swap(i, rng.gen_range(0..=i));
            }
            prop_assert_eq!(rank_candidates(0, &vis, &dict).unwrap().to_bytes(), t.to_bytes());
        }
    }

    fn views_for(table: &ConsensusTable, kps: &[KeyPair]) -> Vec<TableView> {
        kps.iter().filter_map(|k| TableView::of(table, k)).collect()
    }

    #[test]
    fn unanimous_views_confirm() {
        let kps = keys(5, 4);
        let dict = KwmDictionary::default();
        let t = rank_candidates(0, &interest(&kps, 0), &dict).unwrap();
        let out = negotiate_table(&t, &views_for(&t, &kps), &dict).unwrap();
        assert_eq!(out, Negotiated::Confirmed(t));
    }

    /// Ten candidates; `agree` of them (including the one the others missed)
    /// report the full table, the rest report a nine-member table.
    fn split_views(agree: usize, seed: u64) -> (ConsensusTable, ConsensusTable, Vec<TableView>) {
        let kps = keys(10, seed);
        let dict = KwmDictionary::default();
        let vis = interest(&kps, 0);
        let full = rank_candidates(0, &vis, &dict).unwrap();
        let missing = full.entries[9].pk;
        let partial_vis: Vec<_> = vis.iter().filter(|v| v.pk != missing).cloned().collect();
        let partial = rank_candidates(0, &partial_vis, &dict).unwrap();
        let mut views = Vec::new();
        for (i, e) in full.entries.iter().enumerate() {
            let kp = kps.iter().find(|k| k.public() == e.pk).unwrap();
            let table = if i < agree - 1 || e.pk == missing { &full } else { &partial };
            views.push(TableView::of(table, kp).unwrap());
        }
        (full, partial, views)
    }

    #[test]
    fn seventy_percent_majority_wins() {
        let dict = KwmDictionary::default();
        let (full, partial, views) = split_views(7, 5);
        assert_eq!(views.iter().filter(|v| v.total == 10).count(), 7);
        assert_eq!(negotiate_table(&full, &views, &dict).unwrap(), Negotiated::Confirmed(full.clone()));
        // A node in the minority adopts the majority table.
        assert_eq!(negotiate_table(&partial, &views, &dict).unwrap(), Negotiated::Adopted(full));
    }

    #[test]
    fn sixty_percent_aborts() {
        let dict = KwmDictionary::default();
        let (full, partial, views) = split_views(6, 6);
        assert_eq!(views.iter().filter(|v| v.total == 10).count(), 6);
        let abort = Err(ConsensusError::EpochAbort { best: 6, union: 10 });
        assert_eq!(negotiate_table(&full, &views, &dict), abort);
        assert_eq!(negotiate_table(&partial, &views, &dict), abort);
    }

    fn genesis_fixture(n: usize, approvers: usize) -> (GenesisBlock, ConsensusTable, Vec<KeyPair>) {
        let kps = keys(n, 7);
        let t = rank_candidates(0, &interest(&kps, 0), &KwmDictionary::default()).unwrap();
        let body = genesis_body(&t, None, Digest::ZERO);
        let mut approvals = BTreeMap::new();
        for e in t.entries.iter().take(approvers) {
            let kp = kps.iter().find(|k| k.public() == e.pk).unwrap();
            approvals.insert(e.pk, approve_genesis(&body, kp));
        }
        let author = kps.iter().find(|k| k.public() == t.author().pk).unwrap();
        let g = build_genesis_block(author, &t, None, Digest::ZERO, &approvals).unwrap();
        (g, t, kps)
    }

    #[test]
    fn genesis_approval_threshold() {
        let (g, t, _) = genesis_fixture(5, 4);
        assert_eq!(validate_genesis_block(&g, &t, None), Ok(()));
        let (g, t, _) = genesis_fixture(5, 3);
        assert_eq!(
            validate_genesis_block(&g, &t, None),
            Err(GenesisRejection::InsufficientApprovals { have: 3, of: 5 })
        );
    }

    #[test]
    fn only_the_top_validator_authors_genesis() {
        let (_, t, kps) = genesis_fixture(3, 3);
        let other = kps.iter().find(|k| k.public() != t.author().pk).unwrap();
        assert_eq!(
            build_genesis_block(other, &t, None, Digest::ZERO, &BTreeMap::new()),
            Err(ConsensusError::NotAuthorized)
        );
    }

    #[test]
    fn first_epoch_genesis_has_no_ledger_hashes_and_mutation_is_caught() {
        let (g, t, kps) = genesis_fixture(5, 5);
        assert!(g.entries.iter().all(|e| e.hash_ledger.is_none() && e.code.is_some()));
        let mut bad = g.clone();
        bad.entries[1].hash_ledger = Some(Digest([7; 32]));
        // Re-sign so only the null rule is violated.
        let h = bad.hash();
        bad.approvals = bad
            .approvals
            .iter()
            .map(|(pk, _)| (*pk, kps.iter().find(|k| &k.public() == pk).unwrap().sign(h.as_bytes())))
            .collect();
        assert_eq!(validate_genesis_block(&bad, &t, None), Err(GenesisRejection::NullRule(bad.entries[1].pk)));
        let mut forged = g.clone();
        forged.approvals[0].1 = Signature(vec![0; 32]);
        assert!(matches!(validate_genesis_block(&forged, &t, None), Err(GenesisRejection::BadSignature(_))));
    }

    #[test]
    fn departing_and_continuing_entries() {
        let dict = KwmDictionary::default();
        let old = keys(3, 8);
        let new = keys(3, 9);
        let prev = rank_candidates(0, &interest(&old, 0), &dict).unwrap();
        // One validator stays with the same key (the retained-table case).
        let mut next_kps = new.clone();
        next_kps.push(old[0].clone());
        let table = rank_candidates(1, &interest(&next_kps, 1), &dict).unwrap();
        let mut closing = Closing::default();
        for (i, e) in prev.entries.iter().enumerate() {
            closing.validators.insert(e.pk, (e.sign.clone(), Digest([i as u8 + 1; 32])));
        }
        let body = genesis_body(&table, Some(&closing), Digest([9; 32]));
        let mut approvals = BTreeMap::new();
        for e in &table.entries {
            let kp = next_kps.iter().find(|k| k.public() == e.pk).unwrap();
            approvals.insert(e.pk, approve_genesis(&body, kp));
        }
        let author = next_kps.iter().find(|k| k.public() == table.author().pk).unwrap();
        let g = build_genesis_block(author, &table, Some(&closing), Digest([9; 32]), &approvals).unwrap();
        assert_eq!(validate_genesis_block(&g, &table, Some(&prev)), Ok(()));
        let stay = g.entry(&old[0].public()).unwrap();
        assert!(stay.code.is_some() && stay.hash_ledger.is_some());
        for k in &old[1..] {
            let e = g.entry(&k.public()).unwrap();
            assert!(e.code.is_none() && e.hash_ledger.is_some());
        }
        for k in &new {
            let e = g.entry(&k.public()).unwrap();
            assert!(e.code.is_some() && e.hash_ledger.is_none());
        }
    }

    #[test]
    fn reformation_discards_reused_keys_and_retains_on_empty() {
        let dict = KwmDictionary::default();
        let s = EpochSchedule::new(10_000, 2_000).unwrap();
        let old = keys(3, 10);
        let fresh = keys(3, 11);
        let mut all = old.clone();
        all.extend(fresh.iter().cloned());
        let reg = registry_for(&all);
        let prev = rank_candidates(0, &interest(&old, 0), &dict).unwrap();
        let start = s.setup_start(1);
        let mut incoming: Vec<(u64, ValidatorInterestTx)> =
            interest(&fresh, 1).into_iter().map(|v| (start + 10, v)).collect();
        incoming.push((start + 20, ValidatorInterestTx::create(&old[0], 1)));
        let r = reform_validators(start, &s, &prev, &incoming, &reg, &dict).unwrap();
        assert!(!r.retained);
        assert_eq!(r.table.len(), 3);
        assert!(r.table.entry(&old[0].public()).is_none());
        assert_eq!(r.collected.count(InterestDrop::ReusedKey), 1);
        for e in &r.table.entries {
            assert!(prev.entry(&e.pk).is_none());
        }

        let r = reform_validators(start, &s, &prev, &[], &reg, &dict).unwrap();
        assert!(r.retained);
        assert_eq!(r.table.entries, prev.entries);
        assert_eq!(r.table.epoch, 1);
        assert!(matches!(
            reform_validators(start + 1, &s, &prev, &[], &reg, &dict),
            Err(ConsensusError::WrongTime { .. })
        ));
    }

    #[test]
    fn amendments_enforce_signers() {
        let dict = KwmDictionary::default();
        let kps = keys(4, 12);
        let reserve = keys(1, 13);
        let t = rank_candidates(0, &interest(&kps, 0), &dict).unwrap();
        let find = |pk: &PublicKey| kps.iter().find(|k| &k.public() == pk).unwrap().clone();
        let mut routing = EpochRouting::new(t.clone());
        let e1 = t.entries[1].clone();
        let recruit = ValidatorInterestTx::create(&reserve[0], 0);

        let bogus = Amendment::new(
            0,
            AmendmentKind::Split { parent: e1.range.clone(), recruit: recruit.clone(), parent_head: Digest::ZERO },
            &find(&t.entries[2].pk),
        );
        assert_eq!(routing.apply(&bogus, |_| true), Err(AmendmentError::Unauthorized("split")));
        let split = Amendment::new(
            0,
            AmendmentKind::Split { parent: e1.range.clone(), recruit: recruit.clone(), parent_head: Digest::ZERO },
            &find(&e1.pk),
        );
        assert_eq!(routing.apply(&split, |_| false), Err(AmendmentError::BadRecruit));
        let change = routing.apply(&split, |_| true).unwrap();
        assert!(matches!(change, RoutingChange::Forked { .. }));
        assert_eq!(routing.slots().len(), 5);
        let (lo, hi) = split_range(&e1.range).unwrap();
        assert_eq!(routing.slot(&lo).unwrap().owner, e1.pk);
        assert_eq!(routing.slot(&hi).unwrap().owner, reserve[0].public());

        // Promotion by the backup, then a reclaim decided by key hash.
        let e2 = t.entries[2].clone();
        let backup = e2.backup.unwrap();
        let promote = Amendment::new(0, AmendmentKind::Promote { range: e2.range.clone() }, &find(&backup));
        routing.apply(&promote, |_| true).unwrap();
        assert_eq!(routing.slot(&e2.range).unwrap().owner, backup);
        assert!(routing.was_owner(&e2.range.low().clone(), &e2.pk));
        let reclaim = Amendment::new(0, AmendmentKind::Reclaim { range: e2.range.clone() }, &find(&e2.pk));
        let res = routing.apply(&reclaim, |_| true);
        if pk_code(&e2.pk) < pk_code(&backup) {
            assert!(res.is_ok());
            assert_eq!(routing.slot(&e2.range).unwrap().owner, e2.pk);
        } else {
            assert_eq!(res, Err(AmendmentError::Unauthorized("reclaim")));
        }

        let replace = Amendment::new(
            0,
            AmendmentKind::Replace { range: t.entries[3].range.clone(), recruit: recruit.clone() },
            &find(&t.entries[3].pk),
        );
        assert_eq!(routing.apply(&replace, |_| true), Err(AmendmentError::Unauthorized("replace")));
        let replace = Amendment::new(
            0,
            AmendmentKind::Replace { range: t.entries[3].range.clone(), recruit },
            &find(&t.author().pk),
        );
        routing.apply(&replace, |_| true).unwrap();
        assert_eq!(routing.slot(&t.entries[3].range).unwrap().owner, reserve[0].public());
    }

    #[test]
    fn recruit_selection_prefers_weight() {
        let dict = KwmDictionary::default();
        let kps = keys(6, 14);
        let vis = interest(&kps, 0);
        let best = select_recruit(&vis, &dict).unwrap();
        let top = vis.iter().map(|v| dict.weigh(&pk_code(&v.pk))).max().unwrap();
        assert_eq!(dict.weigh(&pk_code(&best.pk)), top);
        assert!(select_recruit(&[], &dict).is_none());
    }
}
