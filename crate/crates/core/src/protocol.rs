//! Messages exchanged between nodes and their wire sizes.

use thiserror::Error;

use crate::codec::Digest;
use crate::consensus::{Amendment, AmendmentKind, DoubleSpendEvidence, TableView};
use crate::range::ConsensusCodeRange;
use crate::sig::{PublicKey, Signature};
use crate::types::{
    decode_range, encode_range, record, Block, GenesisBlock, SpendAuthorization, Transaction,
    ValidatorInterestTx,
};
use crate::wire::{Canonical, Decoder, Encoder, WireError, FORMAT_TAG};

/// Fixed frame for interest and view packets, so every setup packet of the
/// same kind costs the same number of bytes.
pub const SETUP_FRAME: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Error)]
pub enum Refusal {
    #[error("not responsible for the output's range")]
    NotResponsible,
    #[error("output unknown")]
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Purpose {
    /// Recruiting the owner of the upper half of an overloaded range.
    Split,
    /// Recruiting a replacement for a failed or misbehaving owner.
    Replace,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Tx(Transaction),
    Interest(ValidatorInterestTx),
    View(TableView),
    /// A member's signature over the genesis body hash, sent to the author.
    Approval { epoch: u64, signer: PublicKey, sign: Signature },
    Genesis(GenesisBlock),
    Block(Block),
    AuthRequest { t_out: Digest, spender: Digest },
    AuthReply(SpendAuthorization),
    AuthRefusal { t_out: Digest, spender: Digest, reason: Refusal },
    ValidatorRequest { epoch: u64, range: ConsensusCodeRange, purpose: Purpose },
    ValidatorReply { range: ConsensusCodeRange, interest: ValidatorInterestTx },
    Amendment(Amendment),
    Evidence(DoubleSpendEvidence),
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Tx(_) => "tx",
            Message::Interest(_) => "interest",
            Message::View(_) => "view",
            Message::Approval { .. } => "approval",
            Message::Genesis(_) => "genesis",
            Message::Block(_) => "block",
            Message::AuthRequest { .. } => "auth-request",
            Message::AuthReply(_) => "auth-reply",
            Message::AuthRefusal { .. } => "auth-refusal",
            Message::ValidatorRequest { .. } => "validator-request",
            Message::ValidatorReply { .. } => "validator-reply",
            Message::Amendment(_) => "amendment",
            Message::Evidence(_) => "evidence",
        }
    }

    /// Bytes this message occupies on the wire. Setup packets are padded to
    /// [`SETUP_FRAME`].
    pub fn wire_size(&self) -> usize {
        let n = self.encoded_len();
        match self {
            Message::Interest(_) | Message::View(_) => n.max(SETUP_FRAME),
            _ => n,
        }
    }
}

fn refusal_tag(r: Refusal) -> u8 {
    match r {
        Refusal::NotResponsible => 1,
        Refusal::Unknown => 2,
    }
}

fn purpose_tag(p: Purpose) -> u8 {
    match p {
        Purpose::Split => 1,
        Purpose::Replace => 2,
    }
}

impl Canonical for TableView {
    fn encode(&self, enc: &mut Encoder) {
        enc.u8(FORMAT_TAG).u8(record::VIEW).u64(self.epoch).pk(&self.sender);
        encode_range(enc, &self.range);
        enc.u64(self.total).sig(&self.interest_sign).sig(&self.sign);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, WireError> {
        expect(dec, record::VIEW)?;
        Ok(TableView {
            epoch: dec.u64()?,
            sender: dec.pk()?,
            range: decode_range(dec)?,
            total: dec.u64()?,
            interest_sign: dec.sig()?,
            sign: dec.sig()?,
        })
    }
}

impl Canonical for Amendment {
    fn encode(&self, enc: &mut Encoder) {
        enc.raw(&Amendment::signed_bytes(self.epoch, &self.kind, &self.signer)).sig(&self.sign);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, WireError> {
        expect(dec, record::MESSAGE)?;
        let epoch = dec.u64()?;
        let signer = dec.pk()?;
        let at = dec.offset();
        let kind = match dec.u8()? {
            1 => AmendmentKind::Split {
                parent: decode_range(dec)?,
                recruit: ValidatorInterestTx::decode(dec)?,
                parent_head: dec.digest()?,
            },
            2 => AmendmentKind::Promote { range: decode_range(dec)? },
            3 => AmendmentKind::Reclaim { range: decode_range(dec)? },
            4 => AmendmentKind::Replace { range: decode_range(dec)?, recruit: ValidatorInterestTx::decode(dec)? },
            _ => return Err(WireError::Invalid { what: "amendment kind", offset: at }),
        };
        Ok(Amendment { epoch, kind, signer, sign: dec.sig()? })
    }
}

impl Canonical for DoubleSpendEvidence {
    fn encode(&self, enc: &mut Encoder) {
        self.first.encode(enc);
        self.second.encode(enc);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, WireError> {
        Ok(DoubleSpendEvidence { first: SpendAuthorization::decode(dec)?, second: SpendAuthorization::decode(dec)? })
    }
}

fn expect(dec: &mut Decoder<'_>, kind: u8) -> Result<(), WireError> {
    let at = dec.offset();
    if dec.expect_header()? != kind {
        return Err(WireError::Invalid { what: "record kind", offset: at + 1 });
    }
    Ok(())
}

impl Canonical for Message {
    fn encode(&self, enc: &mut Encoder) {
        enc.u8(FORMAT_TAG).u8(record::MESSAGE);
        match self {
            Message::Tx(t) => {
                enc.u8(1);
                t.encode(enc);
            }
            Message::Interest(vi) => {
                enc.u8(2);
                vi.encode(enc);
            }
            Message::View(v) => {
                enc.u8(3);
                v.encode(enc);
            }
            Message::Approval { epoch, signer, sign } => {
                enc.u8(4).u64(*epoch).pk(signer).sig(sign);
            }
            Message::Genesis(g) => {
                enc.u8(5);
                g.encode(enc);
            }
            Message::Block(b) => {
                enc.u8(6);
                b.encode(enc);
            }
            Message::AuthRequest { t_out, spender } => {
                enc.u8(7).digest(t_out).digest(spender);
            }
            Message::AuthReply(a) => {
                enc.u8(8);
                a.encode(enc);
            }
            Message::AuthRefusal { t_out, spender, reason } => {
                enc.u8(9).digest(t_out).digest(spender).u8(refusal_tag(*reason));
            }
            Message::ValidatorRequest { epoch, range, purpose } => {
                enc.u8(10).u64(*epoch);
                encode_range(enc, range);
                enc.u8(purpose_tag(*purpose));
            }
            Message::ValidatorReply { range, interest } => {
                enc.u8(11);
                encode_range(enc, range);
                interest.encode(enc);
            }
            Message::Amendment(a) => {
                enc.u8(12);
                a.encode(enc);
            }
            Message::Evidence(e) => {
                enc.u8(13);
                e.encode(enc);
            }
        }
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, WireError> {
        expect(dec, record::MESSAGE)?;
        let at = dec.offset();
        let bad = |what| WireError::Invalid { what, offset: at };
        Ok(match dec.u8()? {
            1 => Message::Tx(Transaction::decode(dec)?),
            2 => Message::Interest(ValidatorInterestTx::decode(dec)?),
            3 => Message::View(TableView::decode(dec)?),
            4 => Message::Approval { epoch: dec.u64()?, signer: dec.pk()?, sign: dec.sig()? },
            5 => Message::Genesis(GenesisBlock::decode(dec)?),
            6 => Message::Block(Block::decode(dec)?),
            7 => Message::AuthRequest { t_out: dec.digest()?, spender: dec.digest()? },
            8 => Message::AuthReply(SpendAuthorization::decode(dec)?),
            9 => Message::AuthRefusal {
                t_out: dec.digest()?,
                spender: dec.digest()?,
                reason: match dec.u8()? {
                    1 => Refusal::NotResponsible,
                    2 => Refusal::Unknown,
                    _ => return Err(bad("refusal reason")),
                },
            },
            10 => Message::ValidatorRequest {
                epoch: dec.u64()?,
                range: decode_range(dec)?,
                purpose: match dec.u8()? {
                    1 => Purpose::Split,
                    2 => Purpose::Replace,
                    _ => return Err(bad("request purpose")),
                },
            },
            11 => Message::ValidatorReply { range: decode_range(dec)?, interest: ValidatorInterestTx::decode(dec)? },
            12 => Message::Amendment(Amendment::decode(dec)?),
            13 => Message::Evidence(DoubleSpendEvidence::decode(dec)?),
            _ => return Err(bad("message kind")),
        })
    }
}
