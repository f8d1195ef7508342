//! The ledger forest: one hash-chained ledger per range and epoch, the
//! five-step block check, spend authorization, compaction and retrieval.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Read, Write};

use thiserror::Error;

use crate::codec::{digest_to_base62, Digest};
use crate::consensus::{Closing, DoubleSpendEvidence, EpochRouting, LedgerId};
use crate::merkle::merkle_root;
use crate::range::ConsensusCodeRange;
use crate::sig::{KeyPair, PublicKey};
use crate::types::{Block, GenesisBlock, SpendAuthorization, Transaction, Verdict};
use crate::wire::{Canonical, WireError};

/// The five verification steps, in the order they run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Step {
    Range = 1,
    Signature = 2,
    Roots = 3,
    Expiry = 4,
    Spend = 5,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RejectReason {
    UnknownRange,
    NotOwner,
    OutOfRange(Digest),
    HeaderSignature,
    TransactionSignature(Digest),
    TxRoot,
    LedgerRoot,
    Expired(Digest),
    FromFuture(Digest),
    MissingAuthorization(Digest),
    BadAuthorization(Digest),
    AlreadySpent(Digest),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("block rejected at step {} ({reason:?})", *.step as u8)]
pub struct BlockRejection {
    pub step: Step,
    pub reason: RejectReason,
}

fn reject<T>(step: Step, reason: RejectReason) -> Result<T, BlockRejection> {
    Err(BlockRejection { step, reason })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("no open ledger {0}")]
    UnknownLedger(LedgerId),
    #[error("ledger {0} is closed")]
    Closed(LedgerId),
    #[error("fork in {ledger} at height {height}: expected parent {expected:?}, found {found:?}")]
    ForkDetected { ledger: LedgerId, height: u64, expected: Digest, found: Digest },
    #[error("epoch {0} is still open")]
    EpochOpen(u64),
    #[error("genesis for epoch {0} is out of sequence")]
    GenesisOrder(u64),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuthError {
    #[error("output is not committed")]
    Unknown,
    #[error("authorizer does not own the output's range")]
    NotResponsible,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ledger {
    pub id: LedgerId,
    /// Genesis hash, or the parent's head for a ledger forked by a split.
    pub root: Digest,
    pub parent: Option<LedgerId>,
    pub blocks: Vec<Block>,
    pub closed: bool,
    /// Hash of the last block, or the root; kept in step by `push`.
    head: Digest,
}

impl Ledger {
    fn new(id: LedgerId, root: Digest, parent: Option<LedgerId>, closed: bool) -> Ledger {
        Ledger { id, root, parent, blocks: Vec::new(), closed, head: root }
    }

    pub fn head(&self) -> Digest {
        self.head
    }

    fn push(&mut self, b: Block) {
        self.head = b.hash();
        self.blocks.push(b);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TxLocation {
    pub height: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Appended {
    pub ledger: LedgerId,
    /// Evidence of double approvals surfaced by this block.
    pub conflicts: Vec<DoubleSpendEvidence>,
    /// Transactions already committed elsewhere.
    pub duplicates: Vec<Digest>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Retrieval {
    pub found: Option<(Transaction, LedgerId)>,
    pub blocks_scanned: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IntegrityReport {
    pub ledgers: usize,
    pub blocks: usize,
    pub transactions: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("ledger {ledger} height {height}: {what}")]
pub struct IntegrityError {
    pub ledger: LedgerId,
    pub height: u64,
    pub what: String,
}

/// All ledgers and genesis blocks known to one node, plus its sidecar of
/// spend approvals. Sidecar entries never enter a block hash.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LedgerForest {
    genesis_chain: Vec<GenesisBlock>,
    ledgers: BTreeMap<LedgerId, Ledger>,
    unspent: BTreeSet<Digest>,
    sidecar: BTreeMap<Digest, SpendAuthorization>,
    committed: BTreeMap<Digest, (LedgerId, TxLocation)>,
    spends: BTreeMap<Digest, Vec<(Digest, Option<SpendAuthorization>)>>,
}

impl LedgerForest {
    pub fn new() -> Self {
        LedgerForest::default()
    }

    pub fn genesis_chain(&self) -> &[GenesisBlock] {
        &self.genesis_chain
    }

    pub fn genesis(&self, epoch: u64) -> Option<&GenesisBlock> {
        self.genesis_chain.iter().find(|g| g.epoch == epoch)
    }

    pub fn add_genesis(&mut self, g: GenesisBlock) -> Result<(), LedgerError> {
        if self.genesis_chain.last().is_some_and(|last| last.epoch >= g.epoch) {
            return Err(LedgerError::GenesisOrder(g.epoch));
        }
        self.genesis_chain.push(g);
        Ok(())
    }

    pub fn ledgers(&self) -> impl Iterator<Item = &Ledger> {
        self.ledgers.values()
    }

    pub fn ledger(&self, id: &LedgerId) -> Option<&Ledger> {
        self.ledgers.get(id)
    }

    pub fn head(&self, id: &LedgerId) -> Option<Digest> {
        self.ledgers.get(id).map(Ledger::head)
    }

    pub fn block_count(&self) -> usize {
        self.ledgers.values().map(|l| l.blocks.len()).sum()
    }

    pub fn is_committed(&self, t_id: &Digest) -> bool {
        self.committed.contains_key(t_id)
    }

    pub fn committed_count(&self) -> usize {
        self.committed.len()
    }

    pub fn is_unspent(&self, t_id: &Digest) -> bool {
        self.unspent.contains(t_id)
    }

    pub fn sidecar(&self, t_out: &Digest) -> Option<&SpendAuthorization> {
        self.sidecar.get(t_out)
    }

    /// Committed spends of `t_out` as `(spender, authorization)` pairs.
    pub fn spends_of(&self, t_out: &Digest) -> &[(Digest, Option<SpendAuthorization>)] {
        self.spends.get(t_out).map_or(&[], Vec::as_slice)
    }

    /// Opens an empty ledger; reopening with the same root is a no-op.
    pub fn open_ledger(&mut self, id: LedgerId, root: Digest, parent: Option<LedgerId>) {
        self.ledgers
            .entry(id.clone())
            .or_insert_with(|| Ledger::new(id, root, parent, false));
    }

    /// Opens one ledger per slot of `routing`, rooted at `genesis_hash`.
    pub fn open_epoch(&mut self, routing: &EpochRouting, genesis_hash: Digest) {
        for id in routing.ledgers() {
            self.open_ledger(id, genesis_hash, None);
        }
    }

    pub fn close_ledger(&mut self, id: &LedgerId) {
        if let Some(l) = self.ledgers.get_mut(id) {
            l.closed = true;
        }
    }

    /// Closes `parent` and opens both halves rooted at `root`.
    pub fn fork(&mut self, parent: &LedgerId, low: LedgerId, high: LedgerId, root: Digest) {
        self.close_ledger(parent);
        self.open_ledger(low, root, Some(parent.clone()));
        self.open_ledger(high, root, Some(parent.clone()));
    }

    /// Runs the five checks on `b` as received at `now`.
    pub fn verify_block(
        &self,
        b: &Block,
        routing: &EpochRouting,
        now: u64,
        delta: u64,
    ) -> Result<(), BlockRejection> {
        self.verify_block_with(b, routing, now, delta, |_| false)
    }

    /// As [`verify_block`](Self::verify_block), skipping the signature check
    /// of transactions for which `known_good` holds.
    pub fn verify_block_with(
        &self,
        b: &Block,
        routing: &EpochRouting,
        now: u64,
        delta: u64,
        known_good: impl Fn(&Digest) -> bool,
    ) -> Result<(), BlockRejection> {
        let Some(slot) = routing.slot(&b.code_range) else {
            return reject(Step::Range, RejectReason::UnknownRange);
        };
        if slot.owner != b.validator_pk || b.epoch != routing.epoch {
            return reject(Step::Range, RejectReason::NotOwner);
        }
        for t in &b.transactions {
            if !b.code_range.contains(&t.code()) {
                return reject(Step::Range, RejectReason::OutOfRange(t.t_id));
            }
        }

        if !b.header_signature_ok() {
            return reject(Step::Signature, RejectReason::HeaderSignature);
        }
        for t in &b.transactions {
            if !known_good(&t.t_id) && !t.verify() {
                return reject(Step::Signature, RejectReason::TransactionSignature(t.t_id));
            }
        }

        if b.computed_tx_root() != b.tx_merkle_root {
            return reject(Step::Roots, RejectReason::TxRoot);
        }
        if b.computed_ledger_root().is_some_and(|r| r != b.ledger_merkle_root) {
            return reject(Step::Roots, RejectReason::LedgerRoot);
        }

        for t in &b.transactions {
            if t.timestamp > now {
                return reject(Step::Expiry, RejectReason::FromFuture(t.t_id));
            }
            if t.timestamp + delta < now {
                return reject(Step::Expiry, RejectReason::Expired(t.t_id));
            }
        }

        for t in &b.transactions {
            let Some(input) = t.input else { continue };
            let Some(auth) = b.authorization_for(&t.t_id) else {
                return reject(Step::Spend, RejectReason::MissingAuthorization(t.t_id));
            };
            if auth.t_out_id != input
                || !auth.verify()
                || !routing.was_owner(&digest_to_base62(&input), &auth.authorizer_pk)
            {
                return reject(Step::Spend, RejectReason::BadAuthorization(t.t_id));
            }
            if auth.verdict == Verdict::AlreadySpent {
                return reject(Step::Spend, RejectReason::AlreadySpent(t.t_id));
            }
            if self.sidecar.get(&input).is_some_and(|s| s.spender_id != t.t_id) {
                return reject(Step::Spend, RejectReason::AlreadySpent(t.t_id));
            }
            let other_authorizer = self.spends_of(&input).iter().any(|(spender, a)| {
                spender != &t.t_id && a.as_ref().is_none_or(|a| a.authorizer_pk != auth.authorizer_pk)
            });
            if other_authorizer {
                return reject(Step::Spend, RejectReason::AlreadySpent(t.t_id));
            }
        }
        Ok(())
    }

    /// Appends `b` to its range's ledger and updates the spend indexes.
    ///
    /// A second committed spend of one output approved by the same authorizer
    /// is returned as evidence against that authorizer.
    pub fn append_block(&mut self, b: Block) -> Result<Appended, LedgerError> {
        let id = LedgerId { epoch: b.epoch, range: b.code_range.clone() };
        let ledger = self.ledgers.get_mut(&id).ok_or_else(|| LedgerError::UnknownLedger(id.clone()))?;
        if ledger.closed {
            return Err(LedgerError::Closed(id));
        }
        let expected = ledger.head();
        if b.prev_hash != expected || b.height != ledger.blocks.len() as u64 + 1 {
            return Err(LedgerError::ForkDetected { ledger: id, height: b.height, expected, found: b.prev_hash });
        }
        let mut out = Appended { ledger: id.clone(), conflicts: Vec::new(), duplicates: Vec::new() };
        for t in &b.transactions {
            if self.committed.insert(t.t_id, (id.clone(), TxLocation { height: b.height })).is_some() {
                out.duplicates.push(t.t_id);
            }
            self.unspent.insert(t.t_id);
            let Some(input) = t.input else { continue };
            self.unspent.remove(&input);
            let auth = b.authorization_for(&t.t_id).cloned();
            let entry = self.spends.entry(input).or_default();
            if let Some(a) = &auth {
                for (spender, prior) in entry.iter() {
                    if let Some(p) = prior {
                        if spender != &t.t_id && p.authorizer_pk == a.authorizer_pk {
                            out.conflicts.push(DoubleSpendEvidence { first: p.clone(), second: a.clone() });
                        }
                    }
                }
            }
            entry.push((t.t_id, auth));
        }
        ledger.push(b);
        Ok(out)
    }

    /// Answers a spend request for `t_out` on behalf of `authorizer`.
    ///
    /// The first spender is approved and recorded in the sidecar; the same
    /// spender asking again gets the same approval, any other spender gets
    /// `AlreadySpent`.
    pub fn authorize_spend(
        &mut self,
        t_out: Digest,
        spender: Digest,
        authorizer: &KeyPair,
        routing: &EpochRouting,
    ) -> Result<SpendAuthorization, AuthError> {
        if !self.committed.contains_key(&t_out) {
            return Err(AuthError::Unknown);
        }
        let owner = routing.slot_for_code(&digest_to_base62(&t_out)).map(|s| s.owner);
        if owner != Some(authorizer.public()) {
            return Err(AuthError::NotResponsible);
        }
        if let Some(prior) = self.sidecar.get(&t_out) {
            if prior.spender_id == spender && prior.authorizer_pk == authorizer.public() {
                return Ok(prior.clone());
            }
            if prior.spender_id == spender {
                // Same spender under a new epoch's key: re-sign.
                let approval = SpendAuthorization::issue(authorizer, t_out, spender, Verdict::Approved);
                self.sidecar.insert(t_out, approval.clone());
                return Ok(approval);
            }
            return Ok(SpendAuthorization::issue(authorizer, t_out, spender, Verdict::AlreadySpent));
        }
        if self.spends_of(&t_out).iter().any(|(s, _)| s != &spender) {
            return Ok(SpendAuthorization::issue(authorizer, t_out, spender, Verdict::AlreadySpent));
        }
        let approval = SpendAuthorization::issue(authorizer, t_out, spender, Verdict::Approved);
        self.sidecar.insert(t_out, approval.clone());
        Ok(approval)
    }

    /// Records an approval issued outside [`authorize_spend`](Self::authorize_spend).
    pub fn record_sidecar(&mut self, auth: SpendAuthorization) {
        self.sidecar.insert(auth.t_out_id, auth);
    }

    /// Head hashes of `ledgers` for a new block in `own`.
    ///
    /// An entry is `None` when that ledger's head equals the one recorded in
    /// `last_seen` (or, absent a record, its root). The own ledger's entry is
    /// always present.
    pub fn ledger_head_hashes(
        &self,
        ledgers: &[LedgerId],
        own: &LedgerId,
        last_seen: &BTreeMap<LedgerId, Digest>,
    ) -> Vec<Option<Digest>> {
        ledgers
            .iter()
            .map(|id| {
                let l = self.ledgers.get(id)?;
                let head = l.head();
                let before = last_seen.get(id).copied().unwrap_or(l.root);
                (id == own || head != before).then_some(head)
            })
            .collect()
    }

    /// Drops the ledger-hash vectors of a closed epoch's blocks.
    pub fn epoch_compact(&mut self, epoch: u64) -> Result<usize, LedgerError> {
        if self.genesis(epoch + 1).is_none() {
            return Err(LedgerError::EpochOpen(epoch));
        }
        let mut n = 0;
        for l in self.ledgers.values_mut().filter(|l| l.id.epoch == epoch) {
            l.closed = true;
            for b in &mut l.blocks {
                if b.ledger_hashes.take().is_some() {
                    n += 1;
                }
            }
        }
        Ok(n)
    }

    /// Closing ledger hashes of an epoch's validators: for each owner (and
    /// each table member) the merkle root of the heads it holds.
    pub fn closing(&self, routing: &EpochRouting) -> Closing {
        let mut validators = BTreeMap::new();
        let mut signs: BTreeMap<PublicKey, _> =
            routing.table.entries.iter().map(|e| (e.pk, e.sign.clone())).collect();
        signs.extend(routing.owners());
        for (pk, sign) in signs {
            validators.insert(pk, (sign, self.validator_ledger_hash(routing, &pk)));
        }
        Closing { validators }
    }

    pub fn validator_ledger_hash(&self, routing: &EpochRouting, pk: &PublicKey) -> Digest {
        let heads: Vec<Digest> = routing
            .owned_by(pk)
            .filter_map(|s| self.head(&s.ledger(routing.epoch)))
            .collect();
        merkle_root(&heads)
    }

    fn lineage(&self, id: &LedgerId) -> Vec<&Ledger> {
        let mut chain = Vec::new();
        let mut cur = self.ledgers.get(id);
        while let Some(l) = cur {
            chain.push(l);
            cur = l.parent.as_ref().and_then(|p| self.ledgers.get(p));
        }
        chain.reverse();
        chain
    }

    /// Looks `t_id` up in the one ledger its code routes to under `routing`,
    /// scanning that ledger's lineage from its oldest block.
    pub fn retrieve_transaction(&self, t_id: &Digest, routing: &EpochRouting) -> Retrieval {
        match routing.slot_for_code(&digest_to_base62(t_id)) {
            Some(slot) => self.scan_lineage(t_id, &slot.ledger(routing.epoch)),
            None => Retrieval { found: None, blocks_scanned: 0 },
        }
    }

    /// Same lookup with the routing recovered from the ledgers themselves:
    /// the deepest ledger of `epoch` whose range holds the code.
    pub fn retrieve_in_epoch(&self, t_id: &Digest, epoch: u64) -> Retrieval {
        let code = digest_to_base62(t_id);
        let leaf = self
            .ledgers
            .keys()
            .filter(|id| id.epoch == epoch && id.range.contains(&code))
            .max_by_key(|id| id.range.k());
        match leaf {
            Some(id) => self.scan_lineage(t_id, id),
            None => Retrieval { found: None, blocks_scanned: 0 },
        }
    }

    fn scan_lineage(&self, t_id: &Digest, id: &LedgerId) -> Retrieval {
        let mut scanned = 0;
        for l in self.lineage(id) {
            for b in &l.blocks {
                scanned += 1;
                if let Some(t) = b.transactions.iter().find(|t| &t.t_id == t_id) {
                    return Retrieval { found: Some((t.clone(), l.id.clone())), blocks_scanned: scanned };
                }
            }
        }
        Retrieval { found: None, blocks_scanned: scanned }
    }

    /// Scans every ledger in order; the routing-free reference lookup.
    pub fn scan_all(&self, t_id: &Digest) -> Retrieval {
        let mut scanned = 0;
        for l in self.ledgers.values() {
            for b in &l.blocks {
                scanned += 1;
                if let Some(t) = b.transactions.iter().find(|t| &t.t_id == t_id) {
                    return Retrieval { found: Some((t.clone(), l.id.clone())), blocks_scanned: scanned };
                }
            }
        }
        Retrieval { found: None, blocks_scanned: scanned }
    }

    /// Recomputes every hash link, signature and root.
    pub fn check_integrity(&self) -> Result<IntegrityReport, IntegrityError> {
        let mut report = IntegrityReport::default();
        for l in self.ledgers.values() {
            let fail = |height: u64, what: String| IntegrityError { ledger: l.id.clone(), height, what };
            match &l.parent {
                None => match self.genesis(l.id.epoch) {
                    Some(g) if g.hash() == l.root => {}
                    Some(_) => return Err(fail(0, "root differs from the genesis hash".into())),
                    None => return Err(fail(0, "no genesis block for the epoch".into())),
                },
                Some(p) => {
                    let parent = self.ledgers.get(p).ok_or_else(|| fail(0, format!("missing parent {p}")))?;
                    let known = parent.root == l.root || parent.blocks.iter().any(|b| b.hash() == l.root);
                    if !known {
                        return Err(fail(0, format!("root is not a block of parent {p}")));
                    }
                }
            }
            let mut prev = l.root;
            for (i, b) in l.blocks.iter().enumerate() {
                let h = i as u64 + 1;
                if b.height != h {
                    return Err(fail(h, format!("height field {}", b.height)));
                }
                if b.prev_hash != prev {
                    return Err(fail(h, "broken hash link".into()));
                }
                if !b.header_signature_ok() {
                    return Err(fail(h, "header signature".into()));
                }
                if b.computed_tx_root() != b.tx_merkle_root {
                    return Err(fail(h, "transaction root".into()));
                }
                if b.computed_ledger_root().is_some_and(|r| r != b.ledger_merkle_root) {
                    return Err(fail(h, "ledger-hash root".into()));
                }
                if let Some(t) = b.transactions.iter().find(|t| !b.code_range.contains(&t.code())) {
                    return Err(fail(h, format!("transaction {} outside the range", t.t_id.short())));
                }
                report.transactions += b.transactions.len();
                prev = b.hash();
            }
            report.blocks += l.blocks.len();
            report.ledgers += 1;
        }
        Ok(report)
    }

    fn rebuild_indexes(&mut self) {
        self.unspent.clear();
        self.committed.clear();
        self.spends.clear();
        let mut spent = BTreeSet::new();
        for l in self.ledgers.values() {
            for b in &l.blocks {
                for t in &b.transactions {
                    self.committed.insert(t.t_id, (l.id.clone(), TxLocation { height: b.height }));
                    self.unspent.insert(t.t_id);
                    if let Some(input) = t.input {
                        spent.insert(input);
                        let auth = b.authorization_for(&t.t_id).cloned();
                        self.spends.entry(input).or_default().push((t.t_id, auth));
                    }
                }
            }
        }
        for s in spent {
            self.unspent.remove(&s);
        }
    }
}

/// First line of a forest file.
pub const FOREST_HEADER: &str = "treechain-forest v1";

#[derive(Debug, Error)]
pub enum ForestFileError {
    #[error("incompatible forest file: expected {FOREST_HEADER:?}, found {0:?}")]
    Version(String),
    #[error("malformed forest file at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("malformed record at byte {offset}: {source}")]
    Record { offset: usize, source: WireError },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl LedgerForest {
    /// Writes the forest as text: a header line, then one record per line.
    ///
    /// `G <hex>` genesis blocks in epoch order; `L <epoch> <range> <root>
    /// <parent|-> <open|closed>` ledger descriptors; `B <epoch> <range> <hex>`
    /// blocks in chain order after their ledger; `S <hex>` sidecar approvals.
    /// Hex payloads are canonical encodings.
    pub fn write_forest<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{FOREST_HEADER}")?;
        for g in &self.genesis_chain {
            writeln!(w, "G {}", hex::encode(g.to_canonical()))?;
        }
        for l in self.ledgers.values() {
            let parent = l.parent.as_ref().map_or("-".to_string(), |p| p.to_string());
            writeln!(
                w,
                "L {} {} {} {} {}",
                l.id.epoch,
                l.id.range,
                l.root.to_hex(),
                parent,
                if l.closed { "closed" } else { "open" }
            )?;
            for b in &l.blocks {
                writeln!(w, "B {} {} {}", l.id.epoch, l.id.range, hex::encode(b.to_canonical()))?;
            }
        }
        for a in self.sidecar.values() {
            writeln!(w, "S {}", hex::encode(a.to_canonical()))?;
        }
        Ok(())
    }

    pub fn to_forest_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_forest(&mut out).expect("writing to memory");
        out
    }

    pub fn read_forest<R: Read>(mut r: R) -> Result<LedgerForest, ForestFileError> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        LedgerForest::from_forest_bytes(&buf)
    }

    pub fn from_forest_bytes(buf: &[u8]) -> Result<LedgerForest, ForestFileError> {
        let text = std::str::from_utf8(buf).map_err(|e| ForestFileError::Parse {
            offset: e.valid_up_to(),
            message: "not UTF-8".into(),
        })?;
        let mut offset = 0;
        let mut lines = text.split_inclusive('\n');
        let header = lines.next().unwrap_or("");
        if header.trim_end() != FOREST_HEADER {
            return Err(ForestFileError::Version(header.trim_end().to_string()));
        }
        offset += header.len();
        let mut forest = LedgerForest::new();
        for raw in lines {
            let at = offset;
            offset += raw.len();
            if !raw.ends_with('\n') {
                return Err(ForestFileError::Parse { offset: at + raw.len(), message: "truncated record".into() });
            }
            let line = raw.trim_end_matches('\n');
            let parse = |message: &str| ForestFileError::Parse { offset: at, message: message.to_string() };
            let fields: Vec<&str> = line.split(' ').collect();
            let payload = |s: &str, skip: usize| -> Result<Vec<u8>, ForestFileError> {
                hex::decode(s).map_err(|e| ForestFileError::Parse {
                    offset: at + skip,
                    message: format!("bad hex: {e}"),
                })
            };
            let record = |e: WireError| ForestFileError::Record { offset: at, source: e };
            match fields.as_slice() {
                ["G", h] => {
                    let g = GenesisBlock::from_canonical(&payload(h, 2)?).map_err(record)?;
                    forest.add_genesis(g).map_err(|e| parse(&e.to_string()))?;
                }
                ["L", epoch, range, root, parent, state] => {
                    let id = parse_ledger_id(epoch, range).ok_or_else(|| parse("bad ledger id"))?;
                    let root = parse_digest(root).ok_or_else(|| parse("bad root digest"))?;
                    let parent = match *parent {
                        "-" => None,
                        p => {
                            let (e, r) = p.split_once('/').ok_or_else(|| parse("bad parent"))?;
                            Some(parse_ledger_id(e, r).ok_or_else(|| parse("bad parent"))?)
                        }
                    };
                    let closed = match *state {
                        "open" => false,
                        "closed" => true,
                        _ => return Err(parse("bad ledger state")),
                    };
                    forest.ledgers.insert(id.clone(), Ledger::new(id, root, parent, closed));
                }
                ["B", epoch, range, h] => {
                    let id = parse_ledger_id(epoch, range).ok_or_else(|| parse("bad ledger id"))?;
                    let skip = 4 + epoch.len() + range.len();
                    let b = Block::from_canonical(&payload(h, skip)?).map_err(record)?;
                    let l = forest.ledgers.get_mut(&id).ok_or_else(|| parse("block before its ledger"))?;
                    if b.epoch != id.epoch || b.code_range != id.range {
                        return Err(parse("block does not belong to the tagged ledger"));
                    }
                    l.push(b);
                }
                ["S", h] => {
                    let a = SpendAuthorization::from_canonical(&payload(h, 2)?).map_err(record)?;
                    forest.sidecar.insert(a.t_out_id, a);
                }
                _ => return Err(parse("unknown record")),
            }
        }
        forest.rebuild_indexes();
        Ok(forest)
    }
}

fn parse_ledger_id(epoch: &str, range: &str) -> Option<LedgerId> {
    Some(LedgerId { epoch: epoch.parse().ok()?, range: ConsensusCodeRange::parse(range).ok()? })
}

fn parse_digest(s: &str) -> Option<Digest> {
    let bytes = hex::decode(s).ok()?;
    Some(Digest(bytes.try_into().ok()?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::KwmDictionary;
    use crate::consensus::{genesis_body, rank_candidates, ConsensusTable};
    use crate::range::split_range;
    use crate::sig::Scheme;
    use crate::types::{BlockDraft, ValidatorInterestTx};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const DELTA: u64 = 2_000;

    struct Fixture {
        forest: LedgerForest,
        routing: EpochRouting,
        keys: Vec<KeyPair>,
        genesis: Digest,
        rng: ChaCha8Rng,
    }

    impl Fixture {
        fn new(j: usize) -> Fixture {
            let mut rng = ChaCha8Rng::seed_from_u64(j as u64);
            let keys: Vec<KeyPair> = (0..j).map(|_| KeyPair::generate(Scheme::HashStandIn, &mut rng)).collect();
            let vis: Vec<_> = keys.iter().map(|k| ValidatorInterestTx::create(k, 0)).collect();
            let table = rank_candidates(0, &vis, &KwmDictionary::default()).unwrap();
            let routing = EpochRouting::new(table.clone());
            let mut forest = LedgerForest::new();
            let g = genesis_body(&table, None, Digest::ZERO);
            let genesis = g.hash();
            forest.add_genesis(g).unwrap();
            forest.open_epoch(&routing, genesis);
            Fixture { forest, routing, keys, genesis, rng }
        }

        fn table(&self) -> &ConsensusTable {
            &self.routing.table
        }

        fn key_of(&self, pk: &PublicKey) -> &KeyPair {
            self.keys.iter().find(|k| &k.public() == pk).unwrap()
        }

        /// A fresh transaction routed into `range`, found by varying its output.
        fn tx_in(&mut self, range: &ConsensusCodeRange, ts: u64, input: Option<Digest>) -> Transaction {
            let client = KeyPair::from_seed(Scheme::HashStandIn, [200; 32]);
            loop {
                let out: [u8; 8] = self.rng.gen();
                let t = Transaction::create(&client, ts, input, out.to_vec());
                if range.contains(&t.code()) {
                    return t;
                }
            }
        }

        fn block(&self, slot_idx: usize, txs: Vec<Transaction>, auths: Vec<SpendAuthorization>, ts: u64) -> Block {
            let slot = &self.routing.slots()[slot_idx];
            let id = slot.ledger(0);
            let l = self.forest.ledger(&id).unwrap();
            BlockDraft {
                epoch: 0,
                height: l.blocks.len() as u64 + 1,
                prev_hash: l.head(),
                code_range: slot.range.clone(),
                ledger_hashes: self.forest.ledger_head_hashes(&self.routing.ledgers(), &id, &BTreeMap::new()),
                transactions: txs,
                timestamp: ts,
                authorizations: auths,
            }
            .seal(self.key_of(&slot.owner))
        }
    }

    #[test]
    fn out_of_range_transaction_fails_step_one() {
        let mut f = Fixture::new(5);
        let other = f.routing.slots()[3].range.clone();
        let t = f.tx_in(&other, 100, None);
        let b = f.block(0, vec![t.clone()], vec![], 100);
        let err = f.forest.verify_block(&b, &f.routing, 100, DELTA).unwrap_err();
        assert_eq!(err, BlockRejection { step: Step::Range, reason: RejectReason::OutOfRange(t.t_id) });
    }

    #[test]
    fn stale_transaction_fails_step_four() {
        let mut f = Fixture::new(5);
        let r = f.routing.slots()[0].range.clone();
        let t = f.tx_in(&r, 10_000 - 2 * DELTA, None);
        let b = f.block(0, vec![t.clone()], vec![], 10_000);
        let err = f.forest.verify_block(&b, &f.routing, 10_000, DELTA).unwrap_err();
        assert_eq!(err.step, Step::Expiry);
        let fresh = f.tx_in(&r, 9_500, None);
        let b = f.block(0, vec![fresh], vec![], 10_000);
        assert_eq!(f.forest.verify_block(&b, &f.routing, 10_000, DELTA), Ok(()));
    }

    #[test]
    fn tampered_blocks_fail_steps_two_and_three() {
        let mut f = Fixture::new(3);
        let r = f.routing.slots()[1].range.clone();
        let t = f.tx_in(&r, 50, None);
        let b = f.block(1, vec![t], vec![], 60);
        let mut bad_sig = b.clone();
        bad_sig.timestamp += 1;
        assert_eq!(f.forest.verify_block(&bad_sig, &f.routing, 60, DELTA).unwrap_err().step, Step::Signature);
        let mut bad_vec = b.clone();
        bad_vec.ledger_hashes = Some(vec![None, None, None]);
        assert_eq!(
            f.forest.verify_block(&bad_vec, &f.routing, 60, DELTA).unwrap_err(),
            BlockRejection { step: Step::Roots, reason: RejectReason::LedgerRoot }
        );
        let mut wrong_owner = b.clone();
        wrong_owner.validator_pk = f.keys[0].public();
        if f.routing.slots()[1].owner != wrong_owner.validator_pk {
            assert_eq!(f.forest.verify_block(&wrong_owner, &f.routing, 60, DELTA).unwrap_err().step, Step::Range);
        }
    }

    /// Commits a fresh output in slot `idx` and returns it.
    fn commit_output(f: &mut Fixture, idx: usize, ts: u64) -> Transaction {
        let r = f.routing.slots()[idx].range.clone();
        let t = f.tx_in(&r, ts, None);
        let b = f.block(idx, vec![t.clone()], vec![], ts);
        f.forest.verify_block(&b, &f.routing, ts, DELTA).unwrap();
        f.forest.append_block(b).unwrap();
        t
    }

    #[test]
    fn spend_authorization_protocol() {
        let mut f = Fixture::new(4);
        let out = commit_output(&mut f, 2, 100);
        let owner = f.key_of(&f.routing.slots()[2].owner).clone();
        let stranger = f.key_of(&f.routing.slots()[0].owner).clone();
        let (s1, s2) = (Digest([1; 32]), Digest([2; 32]));

        assert_eq!(
            f.forest.authorize_spend(Digest([9; 32]), s1, &owner, &f.routing),
            Err(AuthError::Unknown)
        );
        assert_eq!(f.forest.authorize_spend(out.t_id, s1, &stranger, &f.routing), Err(AuthError::NotResponsible));
        let first = f.forest.authorize_spend(out.t_id, s1, &owner, &f.routing).unwrap();
        assert_eq!(first.verdict, Verdict::Approved);
        assert_eq!(f.forest.sidecar(&out.t_id), Some(&first));
        let again = f.forest.authorize_spend(out.t_id, s1, &owner, &f.routing).unwrap();
        assert_eq!(again, first);
        let second = f.forest.authorize_spend(out.t_id, s2, &owner, &f.routing).unwrap();
        assert_eq!(second.verdict, Verdict::AlreadySpent);
    }

    #[test]
    fn approvals_held_over_from_an_older_key_are_re_signed() {
        let mut f = Fixture::new(4);
        let out = commit_output(&mut f, 2, 100);
        let owner = f.key_of(&f.routing.slots()[2].owner).clone();
        let old_key = KeyPair::from_seed(Scheme::HashStandIn, [77; 32]);
        let (s1, s2) = (Digest([1; 32]), Digest([2; 32]));
        f.forest.record_sidecar(SpendAuthorization::issue(&old_key, out.t_id, s1, Verdict::Approved));

        let fresh = f.forest.authorize_spend(out.t_id, s1, &owner, &f.routing).unwrap();
        assert_eq!((fresh.verdict, fresh.authorizer_pk), (Verdict::Approved, owner.public()));
        assert_eq!(f.forest.sidecar(&out.t_id), Some(&fresh));
        let rival = f.forest.authorize_spend(out.t_id, s2, &owner, &f.routing).unwrap();
        assert_eq!(rival.verdict, Verdict::AlreadySpent);
    }

    #[test]
    fn spending_blocks_need_an_approval() {
        let mut f = Fixture::new(4);
        let out = commit_output(&mut f, 2, 100);
        let spend_range = f.routing.slots()[1].range.clone();
        let spend = f.tx_in(&spend_range, 200, Some(out.t_id));
        let rival = f.tx_in(&spend_range, 200, Some(out.t_id));

        let b = f.block(1, vec![spend.clone()], vec![], 210);
        assert_eq!(
            f.forest.verify_block(&b, &f.routing, 210, DELTA).unwrap_err(),
            BlockRejection { step: Step::Spend, reason: RejectReason::MissingAuthorization(spend.t_id) }
        );

        let owner = f.key_of(&f.routing.slots()[2].owner).clone();
        let ok = f.forest.authorize_spend(out.t_id, spend.t_id, &owner, &f.routing).unwrap();
        let refused = f.forest.authorize_spend(out.t_id, rival.t_id, &owner, &f.routing).unwrap();
        let b = f.block(1, vec![rival.clone()], vec![refused], 210);
        assert_eq!(
            f.forest.verify_block(&b, &f.routing, 210, DELTA).unwrap_err(),
            BlockRejection { step: Step::Spend, reason: RejectReason::AlreadySpent(rival.t_id) }
        );
        // An approval forged for the rival is caught by the authorizer's sidecar.
        let forged = SpendAuthorization::issue(&owner, out.t_id, rival.t_id, Verdict::Approved);
        let b = f.block(1, vec![rival.clone()], vec![forged], 210);
        assert_eq!(f.forest.verify_block(&b, &f.routing, 210, DELTA).unwrap_err().step, Step::Spend);

        let b = f.block(1, vec![spend.clone()], vec![ok], 210);
        f.forest.verify_block(&b, &f.routing, 210, DELTA).unwrap();
        let hash = b.hash();
        let mut stripped = b.clone();
        stripped.authorizations.clear();
        f.forest.append_block(b).unwrap();
        assert!(!f.forest.is_unspent(&out.t_id));
        assert!(f.forest.is_unspent(&spend.t_id));
        // Approvals ride beside the header and never move the block hash.
        assert_eq!(stripped.hash(), hash);
    }

    #[test]
    fn double_approvals_become_evidence() {
        let mut f = Fixture::new(4);
        let out = commit_output(&mut f, 2, 100);
        let owner = f.key_of(&f.routing.slots()[2].owner).clone();
        let r0 = f.routing.slots()[0].range.clone();
        let r1 = f.routing.slots()[1].range.clone();
        let a = f.tx_in(&r0, 200, Some(out.t_id));
        let b = f.tx_in(&r1, 200, Some(out.t_id));
        let auth_a = SpendAuthorization::issue(&owner, out.t_id, a.t_id, Verdict::Approved);
        let auth_b = SpendAuthorization::issue(&owner, out.t_id, b.t_id, Verdict::Approved);
        let blk_a = f.block(0, vec![a], vec![auth_a], 210);
        let blk_b = f.block(1, vec![b], vec![auth_b], 210);
        // A third party holding neither approval accepts both blocks.
        f.forest.verify_block(&blk_a, &f.routing, 220, DELTA).unwrap();
        assert!(f.forest.append_block(blk_a).unwrap().conflicts.is_empty());
        f.forest.verify_block(&blk_b, &f.routing, 220, DELTA).unwrap();
        let appended = f.forest.append_block(blk_b).unwrap();
        assert_eq!(appended.conflicts.len(), 1);
        assert!(appended.conflicts[0].verify());
        assert_eq!(appended.conflicts[0].accused(), owner.public());
    }

    #[test]
    fn chaining_and_fork_detection() {
        let mut f = Fixture::new(2);
        let r = f.routing.slots()[0].range.clone();
        let id = f.routing.slots()[0].ledger(0);
        let t1 = f.tx_in(&r, 10, None);
        let b1 = f.block(0, vec![t1], vec![], 10);
        assert_eq!(b1.prev_hash, f.genesis);
        f.forest.append_block(b1.clone()).unwrap();
        let t2 = f.tx_in(&r, 20, None);
        let b2 = f.block(0, vec![t2], vec![], 20);
        assert_eq!(b2.prev_hash, b1.hash());
        let mut stale = b2.clone();
        stale.prev_hash = f.genesis;
        assert!(matches!(f.forest.append_block(stale), Err(LedgerError::ForkDetected { .. })));
        f.forest.append_block(b2).unwrap();
        assert_eq!(f.forest.ledger(&id).unwrap().blocks.len(), 2);
        assert_eq!(f.forest.check_integrity().unwrap().blocks, 2);
    }

    #[test]
    fn head_vector_nulls_track_new_heads() {
        let mut f = Fixture::new(3);
        let ids = f.routing.ledgers();
        let own = ids[0].clone();
        let seen = |forest: &LedgerForest| -> BTreeMap<LedgerId, Digest> {
            ids.iter().map(|i| (i.clone(), forest.head(i).unwrap())).collect()
        };
        let mark = seen(&f.forest);
        let v = f.forest.ledger_head_hashes(&ids, &own, &mark);
        assert_eq!(v, vec![Some(f.genesis), None, None]);

        commit_output(&mut f, 1, 10);
        let v = f.forest.ledger_head_hashes(&ids, &own, &mark);
        assert_eq!(v[1], f.forest.head(&ids[1]));
        assert_eq!(v[2], None);

        commit_output(&mut f, 2, 20);
        let v = f.forest.ledger_head_hashes(&ids, &own, &mark);
        assert!(v.iter().all(Option::is_some));
    }

    #[test]
    fn compaction_preserves_links_and_shrinks_storage() {
        let mut f = Fixture::new(3);
        for i in 0..3 {
            commit_output(&mut f, i, 10 * i as u64 + 10);
            commit_output(&mut f, i, 10 * i as u64 + 15);
        }
        assert_eq!(f.forest.epoch_compact(0), Err(LedgerError::EpochOpen(0)));
        let sizes_before: Vec<usize> =
            f.forest.ledgers().flat_map(|l| l.blocks.iter().map(|b| b.encoded_len())).collect();
        let hashes_before: Vec<Digest> = f.forest.ledgers().flat_map(|l| l.blocks.iter().map(Block::hash)).collect();
        let next = genesis_body(&f.table().carried_to(1), None, f.genesis);
        f.forest.add_genesis(next).unwrap();
        assert_eq!(f.forest.epoch_compact(0).unwrap(), 6);
        let sizes_after: Vec<usize> =
            f.forest.ledgers().flat_map(|l| l.blocks.iter().map(|b| b.encoded_len())).collect();
        let hashes_after: Vec<Digest> = f.forest.ledgers().flat_map(|l| l.blocks.iter().map(Block::hash)).collect();
        assert_eq!(hashes_before, hashes_after);
        assert!(sizes_after.iter().zip(&sizes_before).all(|(a, b)| a < b));
        f.forest.check_integrity().unwrap();
    }

    #[test]
    fn retrieval_scans_one_lineage() {
        let mut f = Fixture::new(4);
        let mut all = Vec::new();
        for i in 0..4 {
            for k in 0..3 {
                all.push(commit_output(&mut f, i, 100 + k));
            }
        }
        for t in &all {
            let r = f.forest.retrieve_transaction(&t.t_id, &f.routing);
            let (found, id) = r.found.unwrap();
            assert_eq!(&found, t);
            assert!(r.blocks_scanned <= f.forest.ledger(&id).unwrap().blocks.len() as u64);
            assert_eq!(f.forest.scan_all(&t.t_id).found.map(|x| x.0), Some(t.clone()));
        }
        let miss = f.forest.retrieve_transaction(&Digest([3; 32]), &f.routing);
        assert!(miss.found.is_none());
        assert_eq!(miss.blocks_scanned, 3);
    }

    #[test]
    fn split_ledgers_chain_from_the_parent_head() {
        let mut f = Fixture::new(2);
        let parent_slot = f.routing.slots()[0].clone();
        let old = commit_output(&mut f, 0, 10);
        let head = f.forest.head(&parent_slot.ledger(0)).unwrap();
        let (lo, hi) = split_range(&parent_slot.range).unwrap();
        let low = LedgerId { epoch: 0, range: lo.clone() };
        let high = LedgerId { epoch: 0, range: hi };
        f.forest.fork(&parent_slot.ledger(0), low.clone(), high.clone(), head);
        assert_eq!(f.forest.head(&low), Some(head));
        f.forest.check_integrity().unwrap();
        // Retrieval through a child still finds transactions of the parent.
        let recruit = KeyPair::from_seed(Scheme::HashStandIn, [77; 32]);
        let split = crate::consensus::Amendment::new(
            0,
            crate::consensus::AmendmentKind::Split {
                parent: parent_slot.range.clone(),
                recruit: ValidatorInterestTx::create(&recruit, 0),
                parent_head: head,
            },
            f.key_of(&parent_slot.owner),
        );
        f.routing.apply(&split, |_| true).unwrap();
        let r = f.forest.retrieve_transaction(&old.t_id, &f.routing);
        assert_eq!(r.found.map(|x| x.0.t_id), Some(old.t_id));
    }

    #[test]
    fn forest_file_round_trip_and_truncation() {
        let mut f = Fixture::new(3);
        let out = commit_output(&mut f, 1, 10);
        let owner = f.key_of(&f.routing.slots()[1].owner).clone();
        f.forest.authorize_spend(out.t_id, Digest([5; 32]), &owner, &f.routing).unwrap();
        commit_output(&mut f, 2, 20);
        let bytes = f.forest.to_forest_bytes();
        let back = LedgerForest::from_forest_bytes(&bytes).unwrap();
        assert_eq!(back, f.forest);
        assert_eq!(back.to_forest_bytes(), bytes);

        let cut = bytes.len() - 7;
        match LedgerForest::from_forest_bytes(&bytes[..cut]) {
            Err(ForestFileError::Parse { offset, .. }) => assert_eq!(offset, cut),
            other => panic!("expected a truncation error, got {other:?}"),
        }
        let mut wrong = bytes.clone();
        wrong[FOREST_HEADER.len() - 1] = b'9';
        assert!(matches!(LedgerForest::from_forest_bytes(&wrong), Err(ForestFileError::Version(_))));
    }
}
