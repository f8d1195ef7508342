//! Canonical byte layout used for hashing, signing and persistence.
//!
//! Fields are concatenated in declared order. Integers are little-endian
//! `u64`, digests are 32 raw bytes, public keys are a scheme byte plus 32
//! bytes, and every variable-length field carries a `u32` little-endian
//! length prefix. Optional values are a `0`/`1` presence byte followed by the
//! value. `docs/wire-format.md` lists the per-record layouts.

use thiserror::Error;

use crate::codec::{Base62String, Digest, DIGEST_LEN};
use crate::sig::{PublicKey, Scheme, Signature};

/// Version byte leading every persisted record.
pub const FORMAT_TAG: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("truncated input at offset {offset}: needed {needed} more bytes")]
    Truncated { offset: usize, needed: usize },
    #[error("invalid {what} at offset {offset}")]
    Invalid { what: &'static str, offset: usize },
    #[error("unsupported format tag {found} (expected {expected})")]
    Version { found: u8, expected: u8 },
    #[error("{0} trailing bytes after record")]
    Trailing(usize),
}

#[derive(Debug, Default, Clone)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Encoder::default()
    }

    pub fn with_tag(record: u8) -> Self {
        let mut enc = Encoder::new();
        enc.u8(FORMAT_TAG).u8(record);
        enc
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn bytes(&mut self, v: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(&(v.len() as u32).to_le_bytes());
        self.buf.extend_from_slice(v);
        self
    }

    pub fn raw(&mut self, v: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(v);
        self
    }

    pub fn digest(&mut self, d: &Digest) -> &mut Self {
        self.raw(d.as_bytes())
    }

    pub fn opt_digest(&mut self, d: Option<&Digest>) -> &mut Self {
        match d {
            Some(d) => self.u8(1).digest(d),
            None => self.u8(0),
        }
    }

    pub fn pk(&mut self, pk: &PublicKey) -> &mut Self {
        self.raw(&pk.to_bytes())
    }

    pub fn sig(&mut self, s: &Signature) -> &mut Self {
        self.bytes(&s.0)
    }

    pub fn symbols(&mut self, s: &Base62String) -> &mut Self {
        self.bytes(s.as_str().as_bytes())
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

#[derive(Debug)]
pub struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Decoder { buf, pos: 0 }
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let remaining = self.buf.len() - self.pos;
        if remaining < n {
            return Err(WireError::Truncated { offset: self.pos, needed: n - remaining });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    /// Checks the version byte and returns the record kind byte.
    pub fn expect_header(&mut self) -> Result<u8, WireError> {
        let tag = self.u8()?;
        if tag != FORMAT_TAG {
            return Err(WireError::Version { found: tag, expected: FORMAT_TAG });
        }
        self.u8()
    }

    pub fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    pub fn u64(&mut self) -> Result<u64, WireError> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    pub fn bytes(&mut self) -> Result<Vec<u8>, WireError> {
        let len = u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize;
        Ok(self.take(len)?.to_vec())
    }

    pub fn digest(&mut self) -> Result<Digest, WireError> {
        let b = self.take(DIGEST_LEN)?;
        Ok(Digest(b.try_into().expect("32 bytes")))
    }

    pub fn opt_digest(&mut self) -> Result<Option<Digest>, WireError> {
        let at = self.pos;
        match self.u8()? {
            0 => Ok(None),
            1 => Ok(Some(self.digest()?)),
            _ => Err(WireError::Invalid { what: "presence byte", offset: at }),
        }
    }

    pub fn pk(&mut self) -> Result<PublicKey, WireError> {
        let at = self.pos;
        let scheme = Scheme::from_tag(self.u8()?)
            .ok_or(WireError::Invalid { what: "signature scheme", offset: at })?;
        let bytes = self.take(32)?.try_into().expect("32 bytes");
        Ok(PublicKey { scheme, bytes })
    }

    pub fn sig(&mut self) -> Result<Signature, WireError> {
        Ok(Signature(self.bytes()?))
    }

    pub fn symbols(&mut self) -> Result<Base62String, WireError> {
        let at = self.pos;
        let raw = self.bytes()?;
        let s = String::from_utf8(raw).map_err(|_| WireError::Invalid { what: "symbols", offset: at })?;
        Base62String::new(s).map_err(|_| WireError::Invalid { what: "symbols", offset: at })
    }

    pub fn finish(self) -> Result<(), WireError> {
        let rest = self.buf.len() - self.pos;
        if rest == 0 {
            Ok(())
        } else {
            Err(WireError::Trailing(rest))
        }
    }
}

/// Records with a canonical encoding.
pub trait Canonical: Sized {
    fn encode(&self, enc: &mut Encoder);
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, WireError>;

    fn to_canonical(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode(&mut enc);
        enc.finish()
    }

    fn from_canonical(bytes: &[u8]) -> Result<Self, WireError> {
        let mut dec = Decoder::new(bytes);
        let v = Self::decode(&mut dec)?;
        dec.finish()?;
        Ok(v)
    }

    fn encoded_len(&self) -> usize {
        self.to_canonical().len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncation_reports_offset() {
        let mut enc = Encoder::new();
        enc.u64(7).bytes(b"hello");
        let bytes = enc.finish();
        let mut dec = Decoder::new(&bytes[..14]);
        assert_eq!(dec.u64().unwrap(), 7);
        assert_eq!(dec.bytes(), Err(WireError::Truncated { offset: 12, needed: 3 }));
    }

    #[test]
    fn header_checks_version() {
        let bytes = [9u8, 1];
        assert_eq!(
            Decoder::new(&bytes).expect_header(),
            Err(WireError::Version { found: 9, expected: FORMAT_TAG })
        );
    }

    #[test]
    fn presence_byte_is_strict() {
        let bytes = [2u8];
        assert!(matches!(
            Decoder::new(&bytes).opt_digest(),
            Err(WireError::Invalid { what: "presence byte", offset: 0 })
        ));
    }
}
