//! Content hashing, the base-62 symbol encoding of digests, and KWM weights.
//!
//! Digests are 256-bit SHA-256 outputs. A digest is rendered as exactly
//! [`BASE62_LEN`] symbols over the alphabet `0-9A-Za-z` by reading it as an
//! unsigned big-endian integer and emitting its base-62 digits starting from
//! the least significant one. The first symbols of the string are therefore
//! the low-order digits, which are uniformly distributed; routing by string
//! prefix then spreads transactions evenly over the code space.

use std::fmt;

use sha2::{Digest as _, Sha256};
use thiserror::Error;

/// Width of a digest in bytes.
pub const DIGEST_LEN: usize = 32;

/// Number of base-62 symbols needed to represent any 256-bit value.
pub const BASE62_LEN: usize = 43;

/// The symbol alphabet in canonical order: digits, uppercase, lowercase.
///
/// Canonical order coincides with ASCII order, so byte-wise comparison of
/// equal-length symbol strings is the canonical comparison.
pub const ALPHABET: &[u8; 62] = b"0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("symbol {symbol:?} at position {position} is outside the base-62 alphabet")]
    Malformed { symbol: char, position: usize },
    #[error("base-62 string has length {0}, expected {BASE62_LEN}")]
    BadLength(usize),
    #[error("base-62 value exceeds the digest width")]
    Overflow,
}

/// A 32-byte content digest.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; DIGEST_LEN]);

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn short(&self) -> String {
        hex::encode(&self.0[..6])
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.short())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// SHA-256 of `payload`.
pub fn hash_content(payload: &[u8]) -> Digest {
    Digest(Sha256::digest(payload).into())
}

/// SHA-256 over the concatenation of `parts`.
pub fn hash_parts(parts: &[&[u8]]) -> Digest {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part);
    }
    Digest(hasher.finalize().into())
}

/// Index of a symbol in canonical order, or `None` when it is not in the alphabet.
pub fn symbol_index(symbol: u8) -> Option<u8> {
    match symbol {
        b'0'..=b'9' => Some(symbol - b'0'),
        b'A'..=b'Z' => Some(symbol - b'A' + 10),
        b'a'..=b'z' => Some(symbol - b'a' + 36),
        _ => None,
    }
}

/// A string whose every character is a base-62 symbol.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Base62String(String);

impl Base62String {
    pub fn new(s: impl Into<String>) -> Result<Self, CodecError> {
        let s = s.into();
        validate_symbols(&s)?;
        Ok(Base62String(s))
    }

    /// Builds a string from canonical symbol indices (each `< 62`).
    pub fn from_indices(indices: &[u8]) -> Self {
        Base62String(indices.iter().map(|&i| ALPHABET[i as usize] as char).collect())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The first `k` symbols. Panics when `k` exceeds the length.
    pub fn prefix(&self, k: usize) -> Base62String {
        Base62String(self.0[..k].to_string())
    }

    pub fn indices(&self) -> impl Iterator<Item = u8> + '_ {
        // Validated on construction.
        self.0.bytes().map(|b| symbol_index(b).expect("validated symbol"))
    }

    pub fn reversed(&self) -> Base62String {
        Base62String(self.0.chars().rev().collect())
    }

    pub fn concat(&self, other: &Base62String) -> Base62String {
        Base62String(format!("{}{}", self.0, other.0))
    }
}

impl fmt::Debug for Base62String {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl fmt::Display for Base62String {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn validate_symbols(s: &str) -> Result<(), CodecError> {
    for (position, c) in s.chars().enumerate() {
        if !c.is_ascii() || symbol_index(c as u8).is_none() {
            return Err(CodecError::Malformed { symbol: c, position });
        }
    }
    Ok(())
}

/// Encodes a digest as [`BASE62_LEN`] symbols, least significant digit first.
pub fn digest_to_base62(d: &Digest) -> Base62String {
    let mut value = d.0;
    let mut digits = [0u8; BASE62_LEN];
    for digit in digits.iter_mut() {
        let mut rem: u32 = 0;
        for byte in value.iter_mut() {
            let acc = (rem << 8) | u32::from(*byte);
            *byte = (acc / 62) as u8;
            rem = acc % 62;
        }
        *digit = rem as u8;
    }
    Base62String::from_indices(&digits)
}

/// Inverse of [`digest_to_base62`].
pub fn base62_to_digest(s: &Base62String) -> Result<Digest, CodecError> {
    if s.len() != BASE62_LEN {
        return Err(CodecError::BadLength(s.len()));
    }
    let digits: Vec<u8> = s.indices().collect();
    let mut value = [0u8; DIGEST_LEN];
    for &digit in digits.iter().rev() {
        let mut carry = u32::from(digit);
        for byte in value.iter_mut().rev() {
            let acc = u32::from(*byte) * 62 + carry;
            *byte = (acc & 0xff) as u8;
            carry = acc >> 8;
        }
        if carry != 0 {
            return Err(CodecError::Overflow);
        }
    }
    Ok(Digest(value))
}

/// Per-symbol weights used to compute a key weight metric.
#[derive(Clone, PartialEq, Eq)]
pub struct KwmDictionary {
    weights: [u32; 62],
}

impl Default for KwmDictionary {
    /// Digits weigh 0-9, uppercase letters 11-36, lowercase letters 37-62.
    fn default() -> Self {
        let mut weights = [0u32; 62];
        for (i, w) in weights.iter_mut().enumerate() {
            // Weight 10 is unused: letters start at 11.
            *w = if i < 10 { i as u32 } else { i as u32 + 1 };
        }
        KwmDictionary { weights }
    }
}

impl KwmDictionary {
    pub fn from_weights(weights: [u32; 62]) -> Self {
        KwmDictionary { weights }
    }

    pub fn weight_of(&self, symbol: u8) -> Option<u32> {
        symbol_index(symbol).map(|i| self.weights[i as usize])
    }

    pub fn weights(&self) -> &[u32; 62] {
        &self.weights
    }

    /// Sum of symbol weights over `s`.
    pub fn kwm(&self, s: &str) -> Result<u64, CodecError> {
        let mut total = 0u64;
        for (position, c) in s.chars().enumerate() {
            let w = if c.is_ascii() { self.weight_of(c as u8) } else { None };
            total += u64::from(w.ok_or(CodecError::Malformed { symbol: c, position })?);
        }
        Ok(total)
    }

    /// Infallible form of [`kwm`](Self::kwm) for already validated strings.
    pub fn weigh(&self, s: &Base62String) -> u64 {
        s.indices().map(|i| u64::from(self.weights[i as usize])).sum()
    }

    /// `symbol=weight` pairs, for run manifests.
    pub fn describe(&self) -> String {
        ALPHABET
            .iter()
            .zip(self.weights.iter())
            .map(|(s, w)| format!("{}={}", *s as char, w))
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl fmt::Debug for KwmDictionary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KwmDictionary").finish_non_exhaustive()
    }
}

/// Key weight metric of `s` under `dict`.
pub fn kwm(s: &str, dict: &KwmDictionary) -> Result<u64, CodecError> {
    dict.kwm(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    #[test]
    fn hash_is_deterministic_and_sized() {
        assert_eq!(hash_content(b"abc"), hash_content(b"abc"));
        assert_eq!(hash_content(b"").as_bytes().len(), DIGEST_LEN);
        assert_eq!(hash_parts(&[b"ab", b"c"]), hash_content(b"abc"));
    }

    #[test]
    fn single_bit_flips_change_the_digest() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let len = rng.gen_range(1..64);
            let payload: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            let mut flipped = payload.clone();
            let bit = rng.gen_range(0..len * 8);
            flipped[bit / 8] ^= 1 << (bit % 8);
            assert_ne!(hash_content(&payload), hash_content(&flipped));
        }
    }

    #[test]
    fn zero_digest_encodes_to_zeros() {
        let s = digest_to_base62(&Digest::ZERO);
        assert_eq!(s.as_str(), "0".repeat(BASE62_LEN));
    }

    #[test]
    fn max_digest_round_trips() {
        let d = Digest([0xff; 32]);
        let s = digest_to_base62(&d);
        assert_eq!(s.len(), BASE62_LEN);
        assert_eq!(base62_to_digest(&s).unwrap(), d);
    }

    #[test]
    fn small_values_encode_low_digit_first() {
        let mut bytes = [0u8; 32];
        bytes[31] = 63; // 63 = 1*62 + 1
        let s = digest_to_base62(&Digest(bytes));
        assert!(s.as_str().starts_with("11000"));
        bytes[31] = 61;
        assert!(digest_to_base62(&Digest(bytes)).as_str().starts_with("z0"));
    }

    #[test]
    fn distinct_digests_encode_distinctly() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut seen = HashSet::new();
        for _ in 0..10_000 {
            let d = Digest(rng.gen());
            assert!(seen.insert(digest_to_base62(&d)));
        }
    }

    #[test]
    fn decode_rejects_values_above_the_digest_width() {
        let s = Base62String::new("z".repeat(BASE62_LEN)).unwrap();
        assert_eq!(base62_to_digest(&s), Err(CodecError::Overflow));
        let short = Base62String::new("abc").unwrap();
        assert_eq!(base62_to_digest(&short), Err(CodecError::BadLength(3)));
    }

    #[test]
    fn default_dictionary_matches_the_published_table() {
        let dict = KwmDictionary::default();
        assert_eq!(dict.weight_of(b'0'), Some(0));
        assert_eq!(dict.weight_of(b'9'), Some(9));
        assert_eq!(dict.weight_of(b'A'), Some(11));
        assert_eq!(dict.weight_of(b'Z'), Some(36));
        assert_eq!(dict.weight_of(b'a'), Some(37));
        assert_eq!(dict.weight_of(b'z'), Some(62));
        assert_eq!(dict.weight_of(b'-'), None);
    }

    #[test]
    fn consensus_table_key_weights() {
        let dict = KwmDictionary::default();
        assert_eq!(kwm("axqPe96aiwZjQ", &dict), Ok(482));
        assert_eq!(kwm("aQfx12ijAtcTM", &dict), Ok(419));
        assert_eq!(kwm("Mq83V2mq62kEl", &dict), Ok(341));
        assert_eq!(kwm("Rnah72Mec123a", &dict), Ok(314));
        // The printed table says 356 for this key; the dictionary gives 394.
        assert_eq!(kwm("J94Vswa72liac", &dict), Ok(394));
        assert_eq!(kwm("", &dict), Ok(0));
    }

    #[test]
    fn kwm_rejects_foreign_symbols() {
        let dict = KwmDictionary::default();
        assert_eq!(
            kwm("ab-c", &dict),
            Err(CodecError::Malformed { symbol: '-', position: 2 })
        );
        assert!(kwm("é", &dict).is_err());
        assert!(Base62String::new("a b").is_err());
    }

    fn base62_strategy(max: usize) -> impl Strategy<Value = String> {
        proptest::collection::vec(0u8..62, 0..max)
            .prop_map(|v| v.iter().map(|&i| ALPHABET[i as usize] as char).collect())
    }

    proptest! {
        #[test]
        fn kwm_is_order_free(s in base62_strategy(64)) {
            let dict = KwmDictionary::default();
            let rev: String = s.chars().rev().collect();
            prop_assert_eq!(dict.kwm(&s).unwrap(), dict.kwm(&rev).unwrap());
        }

        #[test]
        fn kwm_is_additive(a in base62_strategy(32), b in base62_strategy(32)) {
            let dict = KwmDictionary::default();
            let joined = format!("{a}{b}");
            prop_assert_eq!(dict.kwm(&joined).unwrap(), dict.kwm(&a).unwrap() + dict.kwm(&b).unwrap());
            prop_assert!(dict.kwm(&joined).unwrap() <= 62 * joined.len() as u64);
        }

        #[test]
        fn base62_round_trips(bytes in proptest::array::uniform32(any::<u8>())) {
            let d = Digest(bytes);
            let s = digest_to_base62(&d);
            prop_assert_eq!(s.len(), BASE62_LEN);
            prop_assert_eq!(base62_to_digest(&s).unwrap(), d);
        }
    }
}
