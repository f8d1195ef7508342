//! Consensus code ranges and the arithmetic that partitions the code space.
//!
//! A range of length `k` is an inclusive interval `[low, high]` of
//! `k`-symbol codes in canonical order. A code `c` of at least `k` symbols
//! belongs to the range when its first `k` symbols fall inside the interval.

use std::fmt;

use thiserror::Error;

use crate::codec::Base62String;

/// Deepest code length a range may reach through splitting.
pub const MAX_CODE_LEN: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RangeError {
    #[error("at least one validator is required")]
    NoValidators,
    #[error("range bounds must have equal non-zero length (got {0} and {1})")]
    BadBounds(usize, usize),
    #[error("range low bound {0} is above high bound {1}")]
    Inverted(String, String),
    #[error("code length {0} exceeds the maximum of {MAX_CODE_LEN}")]
    TooDeep(usize),
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConsensusCodeRange {
    low: Base62String,
    high: Base62String,
}

impl ConsensusCodeRange {
    pub fn new(low: Base62String, high: Base62String) -> Result<Self, RangeError> {
        if low.is_empty() || low.len() != high.len() {
            return Err(RangeError::BadBounds(low.len(), high.len()));
        }
        if low.len() > MAX_CODE_LEN {
            return Err(RangeError::TooDeep(low.len()));
        }
        if low > high {
            return Err(RangeError::Inverted(low.to_string(), high.to_string()));
        }
        Ok(ConsensusCodeRange { low, high })
    }

    /// Parses `"A-M"` style notation; a single code stands for itself.
    pub fn parse(s: &str) -> Result<Self, RangeError> {
        let (lo, hi) = s.split_once('-').unwrap_or((s, s));
        let sym = |v: &str| Base62String::new(v).map_err(|_| RangeError::BadBounds(lo.len(), hi.len()));
        ConsensusCodeRange::new(sym(lo)?, sym(hi)?)
    }

    /// The whole `k`-symbol code space.
    pub fn full(k: usize) -> Result<Self, RangeError> {
        ConsensusCodeRange::from_values(k, 0, code_space(k)? - 1)
    }

    pub fn from_values(k: usize, low: u64, high: u64) -> Result<Self, RangeError> {
        ConsensusCodeRange::new(code_from_value(k, low)?, code_from_value(k, high)?)
    }

    pub fn k(&self) -> usize {
        self.low.len()
    }

    pub fn low(&self) -> &Base62String {
        &self.low
    }

    pub fn high(&self) -> &Base62String {
        &self.high
    }

    pub fn low_value(&self) -> u64 {
        code_value(&self.low)
    }

    pub fn high_value(&self) -> u64 {
        code_value(&self.high)
    }

    /// Number of `k`-symbol codes in the range.
    pub fn size(&self) -> u64 {
        self.high_value() - self.low_value() + 1
    }

    pub fn contains(&self, code: &Base62String) -> bool {
        let k = self.k();
        if code.len() < k {
            return false;
        }
        let prefix = &code.as_str()[..k];
        self.low.as_str() <= prefix && prefix <= self.high.as_str()
    }

    /// The range as a half-open interval of `depth`-symbol code values.
    pub fn span_at(&self, depth: usize) -> (u128, u128) {
        assert!(depth >= self.k());
        let scale = 62u128.pow((depth - self.k()) as u32);
        (
            u128::from(self.low_value()) * scale,
            (u128::from(self.high_value()) + 1) * scale,
        )
    }

    /// Fraction of the whole code space covered by this range.
    pub fn share(&self) -> f64 {
        self.size() as f64 / 62f64.powi(self.k() as i32)
    }

    /// The same set of codes expressed with one more symbol.
    pub fn deepen(&self) -> Result<ConsensusCodeRange, RangeError> {
        let low = self.low.concat(&Base62String::new("0").expect("symbol"));
        let high = self.high.concat(&Base62String::new("z").expect("symbol"));
        ConsensusCodeRange::new(low, high)
    }
}

impl fmt::Display for ConsensusCodeRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.low, self.high)
    }
}

impl fmt::Debug for ConsensusCodeRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Range({self})")
    }
}

fn code_space(k: usize) -> Result<u64, RangeError> {
    if k == 0 || k > MAX_CODE_LEN {
        return Err(RangeError::TooDeep(k));
    }
    Ok(62u64.pow(k as u32))
}

/// Value of a code read most significant symbol first.
pub fn code_value(code: &Base62String) -> u64 {
    code.indices().fold(0u64, |acc, i| acc * 62 + u64::from(i))
}

pub fn code_from_value(k: usize, mut value: u64) -> Result<Base62String, RangeError> {
    if value >= code_space(k)? {
        return Err(RangeError::TooDeep(k));
    }
    let mut digits = vec![0u8; k];
    for d in digits.iter_mut().rev() {
        *d = (value % 62) as u8;
        value /= 62;
    }
    Ok(Base62String::from_indices(&digits))
}

/// Smallest code length giving every one of `j` validators its own code.
pub fn code_len_for(j: usize) -> Result<usize, RangeError> {
    if j == 0 {
        return Err(RangeError::NoValidators);
    }
    let mut k = 1;
    while (62u64.pow(k as u32) as u128) < j as u128 {
        k += 1;
        if k > MAX_CODE_LEN {
            return Err(RangeError::TooDeep(k));
        }
    }
    Ok(k)
}

/// Partitions the code space into `j` contiguous ranges in canonical order.
///
/// Range sizes differ by at most one; the larger ranges come first.
pub fn allocate_ranges(j: usize) -> Result<Vec<ConsensusCodeRange>, RangeError> {
    let k = code_len_for(j)?;
    let total = code_space(k)?;
    let n = j as u64;
    let (base, extra) = (total / n, total % n);
    let mut start = 0u64;
    let mut out = Vec::with_capacity(j);
    for i in 0..n {
        let size = base + u64::from(i < extra);
        out.push(ConsensusCodeRange::from_values(k, start, start + size - 1)?);
        start += size;
    }
    debug_assert_eq!(start, total);
    Ok(out)
}

/// Splits a range into a lower and an upper half, the lower half no smaller.
///
/// A single-code range is first deepened by one symbol.
pub fn split_range(
    r: &ConsensusCodeRange,
) -> Result<(ConsensusCodeRange, ConsensusCodeRange), RangeError> {
    let r = if r.size() < 2 { r.deepen()? } else { r.clone() };
    let k = r.k();
    let lo = r.low_value();
    let first = r.size().div_ceil(2);
    Ok((
        ConsensusCodeRange::from_values(k, lo, lo + first - 1)?,
        ConsensusCodeRange::from_values(k, lo + first, r.high_value())?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn r(s: &str) -> ConsensusCodeRange {
        ConsensusCodeRange::parse(s).unwrap()
    }

    #[test]
    fn one_validator_gets_everything() {
        let ranges = allocate_ranges(1).unwrap();
        assert_eq!(ranges, vec![r("0-z")]);
    }

    #[test]
    fn sixty_two_validators_get_one_symbol_each() {
        let ranges = allocate_ranges(62).unwrap();
        assert_eq!(ranges.len(), 62);
        assert!(ranges.iter().all(|x| x.k() == 1 && x.size() == 1));
        assert_eq!(ranges[0], r("0"));
        assert_eq!(ranges[61], r("z"));
    }

    #[test]
    fn five_validators_split_evenly() {
        let ranges = allocate_ranges(5).unwrap();
        let sizes: Vec<u64> = ranges.iter().map(|x| x.size()).collect();
        assert_eq!(sizes, vec![13, 13, 12, 12, 12]);
        assert_eq!(ranges[0], r("0-C"));
        assert_eq!(ranges[4], r("o-z"));
    }

    #[test]
    fn sixty_three_validators_use_two_symbols() {
        let ranges = allocate_ranges(63).unwrap();
        assert_eq!(ranges.len(), 63);
        assert!(ranges.iter().all(|x| x.k() == 2));
        assert_eq!(ranges.iter().map(|x| x.size()).sum::<u64>(), 3844);
    }

    #[test]
    fn zero_validators_is_an_error() {
        assert_eq!(allocate_ranges(0), Err(RangeError::NoValidators));
    }

    #[test]
    fn split_examples() {
        assert_eq!(split_range(&r("A-M")).unwrap(), (r("A-G"), r("H-M")));
        assert_eq!(split_range(&r("0-1")).unwrap(), (r("0"), r("1")));
        // 62 codes split 31/31; "QU" is the 31st code after "Q0".
        assert_eq!(split_range(&r("Q")).unwrap(), (r("Q0-QU"), r("QV-Qz")));
    }

    #[test]
    fn containment_uses_the_range_prefix() {
        let x = r("A-G");
        let code = |s: &str| Base62String::new(s).unwrap();
        assert!(x.contains(&code("Axyz")));
        assert!(x.contains(&code("G000")));
        assert!(!x.contains(&code("H000")));
        assert!(!x.contains(&code("m")));
        assert!(!x.contains(&code("")));
        let deep = r("Q0-QU");
        assert!(deep.contains(&code("QU1")));
        assert!(!deep.contains(&code("QV1")));
        assert!(!deep.contains(&code("Q")));
    }

    #[test]
    fn constructor_rejects_bad_bounds() {
        assert!(matches!(ConsensusCodeRange::parse("M-A"), Err(RangeError::Inverted(..))));
        assert!(matches!(ConsensusCodeRange::parse("A-MM"), Err(RangeError::BadBounds(1, 2))));
    }

    #[test]
    fn partition_properties_hold_up_to_two_hundred() {
        for j in 1..=200usize {
            let ranges = allocate_ranges(j).unwrap();
            assert_eq!(ranges.len(), j);
            let k = ranges[0].k();
            assert_eq!(k, if j <= 62 { 1 } else { 2 });
            let mut next = 0u64;
            for x in &ranges {
                assert_eq!(x.k(), k);
                assert_eq!(x.low_value(), next, "contiguous at j={j}");
                next = x.high_value() + 1;
            }
            assert_eq!(next, 62u64.pow(k as u32), "exhaustive at j={j}");
            let max = ranges.iter().map(|x| x.size()).max().unwrap();
            let min = ranges.iter().map(|x| x.size()).min().unwrap();
            assert!(max - min <= 1);
        }
    }

    fn range_strategy() -> impl Strategy<Value = ConsensusCodeRange> {
        (1usize..=3)
            .prop_flat_map(|k| {
                let space = 62u64.pow(k as u32);
                (Just(k), 0..space, 0..space)
            })
            .prop_map(|(k, a, b)| {
                ConsensusCodeRange::from_values(k, a.min(b), a.max(b)).unwrap()
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn split_halves_partition_the_parent(parent in range_strategy()) {
            let (a, b) = split_range(&parent).unwrap();
            let depth = a.k();
            let (plo, phi) = parent.span_at(depth);
            let (alo, ahi) = a.span_at(depth);
            let (blo, bhi) = b.span_at(depth);
            prop_assert_eq!(alo, plo);
            prop_assert_eq!(ahi, blo);
            prop_assert_eq!(bhi, phi);
            prop_assert!(a.size() >= b.size() && a.size() - b.size() <= 1);
        }
    }
}
