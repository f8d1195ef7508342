//! Transactions, blocks, genesis blocks and spend authorizations.

use crate::codec::{digest_to_base62, hash_content, Base62String, Digest};
use crate::merkle::merkle_root;
use crate::range::ConsensusCodeRange;
use crate::sig::{KeyPair, PublicKey, Signature};
use crate::wire::{Canonical, Decoder, Encoder, WireError};

/// Record kind bytes following the format tag.
pub mod record {
    pub const TX: u8 = 0x10;
    pub const TX_CONTENT: u8 = 0x11;
    pub const INTEREST: u8 = 0x20;
    pub const INTEREST_CONTENT: u8 = 0x21;
    pub const AUTH: u8 = 0x30;
    pub const AUTH_CONTENT: u8 = 0x31;
    pub const BLOCK: u8 = 0x40;
    pub const BLOCK_HEADER: u8 = 0x41;
    pub const GENESIS: u8 = 0x50;
    pub const GENESIS_BODY: u8 = 0x51;
    pub const VIEW: u8 = 0x60;
    pub const VIEW_CONTENT: u8 = 0x61;
    pub const MESSAGE: u8 = 0x70;
}

fn expect_record(dec: &mut Decoder<'_>, kind: u8, what: &'static str) -> Result<(), WireError> {
    let at = dec.offset();
    if dec.expect_header()? != kind {
        return Err(WireError::Invalid { what, offset: at + 1 });
    }
    Ok(())
}

pub(crate) fn encode_range(enc: &mut Encoder, r: &ConsensusCodeRange) {
    enc.symbols(r.low()).symbols(r.high());
}

pub(crate) fn decode_range(dec: &mut Decoder<'_>) -> Result<ConsensusCodeRange, WireError> {
    let at = dec.offset();
    let low = dec.symbols()?;
    let high = dec.symbols()?;
    ConsensusCodeRange::new(low, high).map_err(|_| WireError::Invalid { what: "code range", offset: at })
}

fn encode_opt_range(enc: &mut Encoder, r: Option<&ConsensusCodeRange>) {
    match r {
        Some(r) => {
            enc.u8(1);
            encode_range(enc, r);
        }
        None => {
            enc.u8(0);
        }
    }
}

fn decode_opt_range(dec: &mut Decoder<'_>) -> Result<Option<ConsensusCodeRange>, WireError> {
    let at = dec.offset();
    match dec.u8()? {
        0 => Ok(None),
        1 => Ok(Some(decode_range(dec)?)),
        _ => Err(WireError::Invalid { what: "presence byte", offset: at }),
    }
}

fn decode_count(dec: &mut Decoder<'_>, max: u64) -> Result<usize, WireError> {
    let at = dec.offset();
    let n = dec.u64()?;
    if n > max {
        return Err(WireError::Invalid { what: "element count", offset: at });
    }
    Ok(n as usize)
}

const MAX_ELEMENTS: u64 = 1 << 24;

/// A signed transfer `<t_id, timestamp, input, output, pk, sign>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub t_id: Digest,
    pub timestamp: u64,
    pub input: Option<Digest>,
    pub output: Vec<u8>,
    pub pk: PublicKey,
    pub sign: Signature,
}

impl Transaction {
    /// The signed content; `t_id` is its hash.
    pub fn content_bytes(timestamp: u64, input: Option<&Digest>, output: &[u8], pk: &PublicKey) -> Vec<u8> {
        let mut enc = Encoder::with_tag(record::TX_CONTENT);
        enc.u64(timestamp).opt_digest(input).bytes(output).pk(pk);
        enc.finish()
    }

    pub fn id_for(timestamp: u64, input: Option<&Digest>, output: &[u8], pk: &PublicKey) -> Digest {
        hash_content(&Transaction::content_bytes(timestamp, input, output, pk))
    }

    pub fn create(kp: &KeyPair, timestamp: u64, input: Option<Digest>, output: Vec<u8>) -> Transaction {
        let pk = kp.public();
        let content = Transaction::content_bytes(timestamp, input.as_ref(), &output, &pk);
        Transaction {
            t_id: hash_content(&content),
            timestamp,
            input,
            output,
            pk,
            sign: kp.sign(&content),
        }
    }

    /// `t_id` matches the content and the signature verifies under `pk`.
    pub fn verify(&self) -> bool {
        let content = Transaction::content_bytes(self.timestamp, self.input.as_ref(), &self.output, &self.pk);
        hash_content(&content) == self.t_id && self.pk.verify(&content, &self.sign)
    }

    /// The full base-62 rendering of `t_id`.
    pub fn code(&self) -> Base62String {
        digest_to_base62(&self.t_id)
    }
}

/// The first `k` symbols of the transaction's encoded digest.
pub fn code_of_transaction(t: &Transaction, k: usize) -> Base62String {
    t.code().prefix(k)
}

impl Canonical for Transaction {
    fn encode(&self, enc: &mut Encoder) {
        enc.u8(crate::wire::FORMAT_TAG).u8(record::TX);
        enc.digest(&self.t_id)
            .u64(self.timestamp)
            .opt_digest(self.input.as_ref())
            .bytes(&self.output)
            .pk(&self.pk)
            .sig(&self.sign);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, WireError> {
        expect_record(dec, record::TX, "transaction record")?;
        Ok(Transaction {
            t_id: dec.digest()?,
            timestamp: dec.u64()?,
            input: dec.opt_digest()?,
            output: dec.bytes()?,
            pk: dec.pk()?,
            sign: dec.sig()?,
        })
    }
}

/// A candidate's bid for a validator slot in `epoch`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidatorInterestTx {
    pub epoch: u64,
    pub t_id: Digest,
    pub pk: PublicKey,
    pub sign: Signature,
}

impl ValidatorInterestTx {
    pub fn id_for(epoch: u64, pk: &PublicKey) -> Digest {
        let mut enc = Encoder::with_tag(record::INTEREST_CONTENT);
        enc.u64(epoch).pk(pk);
        hash_content(&enc.finish())
    }

    pub fn create(kp: &KeyPair, epoch: u64) -> ValidatorInterestTx {
        let pk = kp.public();
        let t_id = ValidatorInterestTx::id_for(epoch, &pk);
        ValidatorInterestTx { epoch, t_id, pk, sign: kp.sign(t_id.as_bytes()) }
    }

    pub fn verify(&self) -> bool {
        ValidatorInterestTx::id_for(self.epoch, &self.pk) == self.t_id
            && self.pk.verify(self.t_id.as_bytes(), &self.sign)
    }
}

impl Canonical for ValidatorInterestTx {
    fn encode(&self, enc: &mut Encoder) {
        enc.u8(crate::wire::FORMAT_TAG).u8(record::INTEREST);
        enc.u64(self.epoch).digest(&self.t_id).pk(&self.pk).sig(&self.sign);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, WireError> {
        expect_record(dec, record::INTEREST, "interest record")?;
        Ok(ValidatorInterestTx {
            epoch: dec.u64()?,
            t_id: dec.digest()?,
            pk: dec.pk()?,
            sign: dec.sig()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    Approved,
    AlreadySpent,
}

impl Verdict {
    fn tag(self) -> u8 {
        match self {
            Verdict::Approved => 1,
            Verdict::AlreadySpent => 2,
        }
    }
}

/// A validator's signed answer to "may `spender_id` spend `t_out_id`?".
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpendAuthorization {
    pub t_out_id: Digest,
    pub spender_id: Digest,
    pub authorizer_pk: PublicKey,
    pub verdict: Verdict,
    pub sign: Signature,
}

impl SpendAuthorization {
    pub fn signed_bytes(t_out: &Digest, spender: &Digest, authorizer: &PublicKey, verdict: Verdict) -> Vec<u8> {
        let mut enc = Encoder::with_tag(record::AUTH_CONTENT);
        enc.digest(t_out).digest(spender).pk(authorizer).u8(verdict.tag());
        enc.finish()
    }

    pub fn issue(kp: &KeyPair, t_out_id: Digest, spender_id: Digest, verdict: Verdict) -> Self {
        let authorizer_pk = kp.public();
        let sign = kp.sign(&SpendAuthorization::signed_bytes(&t_out_id, &spender_id, &authorizer_pk, verdict));
        SpendAuthorization { t_out_id, spender_id, authorizer_pk, verdict, sign }
    }

    pub fn verify(&self) -> bool {
        let bytes = SpendAuthorization::signed_bytes(&self.t_out_id, &self.spender_id, &self.authorizer_pk, self.verdict);
        self.authorizer_pk.verify(&bytes, &self.sign)
    }
}

impl Canonical for SpendAuthorization {
    fn encode(&self, enc: &mut Encoder) {
        enc.u8(crate::wire::FORMAT_TAG).u8(record::AUTH);
        enc.digest(&self.t_out_id)
            .digest(&self.spender_id)
            .pk(&self.authorizer_pk)
            .u8(self.verdict.tag())
            .sig(&self.sign);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, WireError> {
        expect_record(dec, record::AUTH, "authorization record")?;
        let t_out_id = dec.digest()?;
        let spender_id = dec.digest()?;
        let authorizer_pk = dec.pk()?;
        let at = dec.offset();
        let verdict = match dec.u8()? {
            1 => Verdict::Approved,
            2 => Verdict::AlreadySpent,
            _ => return Err(WireError::Invalid { what: "verdict", offset: at }),
        };
        Ok(SpendAuthorization { t_out_id, spender_id, authorizer_pk, verdict, sign: dec.sig()? })
    }
}

/// Merkle leaves for a ledger-hash vector; absent entries become the zero digest.
pub fn ledger_leaves(hashes: &[Option<Digest>]) -> Vec<Digest> {
    hashes.iter().map(|h| h.unwrap_or(Digest::ZERO)).collect()
}

/// A block in one range's ledger.
///
/// The block hash covers the header fields only. `ledger_hashes` (summarised
/// by `ledger_merkle_root`) and the attached `authorizations` sit outside it,
/// so dropping the vector at epoch end leaves every hash link intact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub epoch: u64,
    pub height: u64,
    pub prev_hash: Digest,
    pub validator_pk: PublicKey,
    pub code_range: ConsensusCodeRange,
    pub ledger_hashes: Option<Vec<Option<Digest>>>,
    pub ledger_merkle_root: Digest,
    pub tx_merkle_root: Digest,
    pub transactions: Vec<Transaction>,
    pub timestamp: u64,
    pub validator_sign: Signature,
    pub authorizations: Vec<SpendAuthorization>,
}

/// Everything needed to seal a block except the roots and the signature.
#[derive(Debug, Clone)]
pub struct BlockDraft {
    pub epoch: u64,
    pub height: u64,
    pub prev_hash: Digest,
    pub code_range: ConsensusCodeRange,
    pub ledger_hashes: Vec<Option<Digest>>,
    pub transactions: Vec<Transaction>,
    pub timestamp: u64,
    pub authorizations: Vec<SpendAuthorization>,
}

impl BlockDraft {
    pub fn seal(self, kp: &KeyPair) -> Block {
        let tx_ids: Vec<Digest> = self.transactions.iter().map(|t| t.t_id).collect();
        let mut block = Block {
            epoch: self.epoch,
            height: self.height,
            prev_hash: self.prev_hash,
            validator_pk: kp.public(),
            code_range: self.code_range,
            ledger_merkle_root: merkle_root(&ledger_leaves(&self.ledger_hashes)),
            ledger_hashes: Some(self.ledger_hashes),
            tx_merkle_root: merkle_root(&tx_ids),
            transactions: self.transactions,
            timestamp: self.timestamp,
            validator_sign: Signature::default(),
            authorizations: self.authorizations,
        };
        block.validator_sign = kp.sign(&block.header_bytes());
        block
    }
}

impl Block {
    pub fn header_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::with_tag(record::BLOCK_HEADER);
        enc.u64(self.epoch).u64(self.height).digest(&self.prev_hash).pk(&self.validator_pk);
        encode_range(&mut enc, &self.code_range);
        enc.digest(&self.ledger_merkle_root).digest(&self.tx_merkle_root).u64(self.timestamp);
        enc.finish()
    }

    pub fn hash(&self) -> Digest {
        hash_content(&self.header_bytes())
    }

    pub fn header_signature_ok(&self) -> bool {
        self.validator_pk.verify(&self.header_bytes(), &self.validator_sign)
    }

    pub fn computed_tx_root(&self) -> Digest {
        let ids: Vec<Digest> = self.transactions.iter().map(|t| t.t_id).collect();
        merkle_root(&ids)
    }

    pub fn computed_ledger_root(&self) -> Option<Digest> {
        self.ledger_hashes.as_ref().map(|v| merkle_root(&ledger_leaves(v)))
    }

    pub fn authorization_for(&self, spender: &Digest) -> Option<&SpendAuthorization> {
        self.authorizations.iter().find(|a| &a.spender_id == spender)
    }
}

impl Canonical for Block {
    fn encode(&self, enc: &mut Encoder) {
        enc.u8(crate::wire::FORMAT_TAG).u8(record::BLOCK);
        enc.u64(self.epoch).u64(self.height).digest(&self.prev_hash).pk(&self.validator_pk);
        encode_range(enc, &self.code_range);
        match &self.ledger_hashes {
            Some(v) => {
                enc.u8(1).u64(v.len() as u64);
                for h in v {
                    enc.opt_digest(h.as_ref());
                }
            }
            None => {
                enc.u8(0);
            }
        }
        enc.digest(&self.ledger_merkle_root).digest(&self.tx_merkle_root).u64(self.timestamp);
        enc.u64(self.transactions.len() as u64);
        for t in &self.transactions {
            t.encode(enc);
        }
        enc.sig(&self.validator_sign);
        enc.u64(self.authorizations.len() as u64);
        for a in &self.authorizations {
            a.encode(enc);
        }
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, WireError> {
        expect_record(dec, record::BLOCK, "block record")?;
        let epoch = dec.u64()?;
        let height = dec.u64()?;
        let prev_hash = dec.digest()?;
        let validator_pk = dec.pk()?;
        let code_range = decode_range(dec)?;
        let at = dec.offset();
        let ledger_hashes = match dec.u8()? {
            0 => None,
            1 => {
                let n = decode_count(dec, MAX_ELEMENTS)?;
                let mut v = Vec::with_capacity(n.min(1024));
                for _ in 0..n {
                    v.push(dec.opt_digest()?);
                }
                Some(v)
            }
            _ => return Err(WireError::Invalid { what: "presence byte", offset: at }),
        };
        let ledger_merkle_root = dec.digest()?;
        let tx_merkle_root = dec.digest()?;
        let timestamp = dec.u64()?;
        let n = decode_count(dec, MAX_ELEMENTS)?;
        let mut transactions = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            transactions.push(Transaction::decode(dec)?);
        }
        let validator_sign = dec.sig()?;
        let n = decode_count(dec, MAX_ELEMENTS)?;
        let mut authorizations = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            authorizations.push(SpendAuthorization::decode(dec)?);
        }
        Ok(Block {
            epoch,
            height,
            prev_hash,
            validator_pk,
            code_range,
            ledger_hashes,
            ledger_merkle_root,
            tx_merkle_root,
            transactions,
            timestamp,
            validator_sign,
            authorizations,
        })
    }
}

/// One validator's line in a genesis block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenesisEntry {
    pub pk: PublicKey,
    /// `None` for validators leaving after the previous epoch.
    pub code: Option<ConsensusCodeRange>,
    /// The validator's signature over its interest transaction.
    pub sign: Signature,
    /// Closing hash of the validator's previous-epoch ledger; `None` for newcomers.
    pub hash_ledger: Option<Digest>,
}

/// The per-epoch block recording the validator set and closing ledger hashes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenesisBlock {
    pub epoch: u64,
    pub prev_genesis: Digest,
    pub total_val: u64,
    pub entries: Vec<GenesisEntry>,
    pub approvals: Vec<(PublicKey, Signature)>,
}

impl GenesisBlock {
    pub fn body_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::with_tag(record::GENESIS_BODY);
        self.encode_body(&mut enc);
        enc.finish()
    }

    fn encode_body(&self, enc: &mut Encoder) {
        enc.u64(self.epoch).digest(&self.prev_genesis).u64(self.total_val);
        enc.u64(self.entries.len() as u64);
        for e in &self.entries {
            enc.pk(&e.pk);
            encode_opt_range(enc, e.code.as_ref());
            enc.sig(&e.sign).opt_digest(e.hash_ledger.as_ref());
        }
    }

    /// Hash of the body; approvals sign this value.
    pub fn hash(&self) -> Digest {
        hash_content(&self.body_bytes())
    }

    pub fn entry(&self, pk: &PublicKey) -> Option<&GenesisEntry> {
        self.entries.iter().find(|e| &e.pk == pk)
    }
}

impl Canonical for GenesisBlock {
    fn encode(&self, enc: &mut Encoder) {
        enc.u8(crate::wire::FORMAT_TAG).u8(record::GENESIS);
        self.encode_body(enc);
        enc.u64(self.approvals.len() as u64);
        for (pk, sig) in &self.approvals {
            enc.pk(pk).sig(sig);
        }
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, WireError> {
        expect_record(dec, record::GENESIS, "genesis record")?;
        let epoch = dec.u64()?;
        let prev_genesis = dec.digest()?;
        let total_val = dec.u64()?;
        let n = decode_count(dec, MAX_ELEMENTS)?;
        let mut entries = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            entries.push(GenesisEntry {
                pk: dec.pk()?,
                code: decode_opt_range(dec)?,
                sign: dec.sig()?,
                hash_ledger: dec.opt_digest()?,
            });
        }
        let n = decode_count(dec, MAX_ELEMENTS)?;
        let mut approvals = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            approvals.push((dec.pk()?, dec.sig()?));
        }
        Ok(GenesisBlock { epoch, prev_genesis, total_val, entries, approvals })
    }
}
