//! Attack primitives that need no network: timestamp grinding for the
//! brute-force double spend, and the result row shared by all attack
//! scenarios.

use std::time::{Duration, Instant};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use treechain_core::range::{allocate_ranges, ConsensusCodeRange};
use treechain_core::sig::{KeyPair, Scheme};
use treechain_core::types::Transaction;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BruteForce {
    /// The re-signed transaction whose code lands in the target range.
    pub found: Option<Transaction>,
    pub attempts: u64,
    pub elapsed: Duration,
}

impl BruteForce {
    pub fn success(&self) -> bool {
        self.found.is_some()
    }
}

/// Steps the timestamp of `base` by 1 ms, starting at its own timestamp,
/// until the transaction code falls in `target`. Gives up once the timestamp
/// would leave `[base.timestamp, base.timestamp + window]` or after `budget`
/// attempts. Only the winning candidate is signed.
pub fn brute_force_double_spend(
    target: &ConsensusCodeRange,
    base: &Transaction,
    kp: &KeyPair,
    window: u64,
    budget: u64,
) -> BruteForce {
    let started = Instant::now();
    let mut attempts = 0;
    for ts in base.timestamp..=base.timestamp.saturating_add(window) {
        if attempts == budget {
            break;
        }
        attempts += 1;
        let id = Transaction::id_for(ts, base.input.as_ref(), &base.output, &base.pk);
        if target.contains(&treechain_core::codec::digest_to_base62(&id)) {
            let found = Transaction::create(kp, ts, base.input, base.output.clone());
            return BruteForce { found: Some(found), attempts, elapsed: started.elapsed() };
        }
    }
    BruteForce { found: None, attempts, elapsed: started.elapsed() }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BruteForceStats {
    pub j: usize,
    pub trials: usize,
    pub successes: usize,
    pub mean_attempts: f64,
    /// Mean attempts expected from the range sizes alone.
    pub expected: f64,
    pub elapsed: Duration,
}

/// `trials` attacks against a random range of a `j`-validator table, each
/// with a fresh spend transaction.
pub fn brute_force_trials(j: usize, trials: usize, window: u64, budget: u64, seed: u64) -> BruteForceStats {
    let ranges = allocate_ranges(j).expect("j >= 1");
    let space: u64 = ranges.iter().map(|r| r.size()).sum();
    let expected = ranges.iter().map(|r| space as f64 / r.size() as f64).sum::<f64>() / j as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kp = KeyPair::generate(Scheme::HashStandIn, &mut rng);
    let mut total = 0u64;
    let mut successes = 0;
    let mut elapsed = Duration::ZERO;
    for _ in 0..trials {
        let target = &ranges[rng.gen_range(0..j)];
        let mut input = [0u8; 32];
        rng.fill_bytes(&mut input);
        let mut output = vec![0u8; 16];
        rng.fill_bytes(&mut output);
        let ts = rng.gen_range(1_000_000..2_000_000);
        let base = Transaction::create(&kp, ts, Some(treechain_core::codec::Digest(input)), output);
        let r = brute_force_double_spend(target, &base, &kp, window, budget);
        total += r.attempts;
        successes += usize::from(r.success());
        elapsed += r.elapsed;
    }
    BruteForceStats { j, trials, successes, mean_attempts: total as f64 / trials as f64, expected, elapsed }
}

/// One attack outcome, as written to CSV.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct AttackRow {
    pub scenario: String,
    pub j: usize,
    pub attempts: u64,
    pub detected: bool,
    /// Wall seconds for brute force, logical milliseconds otherwise.
    pub time: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(seed: u64) -> (KeyPair, Transaction) {
        let kp = KeyPair::from_seed(Scheme::HashStandIn, [seed as u8; 32]);
        let t = Transaction::create(&kp, 5_000, None, vec![1, 2, 3]);
        (kp, t)
    }

    #[test]
    fn full_code_space_succeeds_first_try() {
        let (kp, t) = base(1);
        let full = allocate_ranges(1).unwrap().remove(0);
        let r = brute_force_double_spend(&full, &t, &kp, 2_000, 10);
        assert_eq!(r.attempts, 1);
        let found = r.found.unwrap();
        assert_eq!(found, t);
        assert!(found.verify());
    }

    #[test]
    fn success_is_signed_and_inside_the_window() {
        let (kp, t) = base(2);
        let target = allocate_ranges(10).unwrap().remove(3);
        let r = brute_force_double_spend(&target, &t, &kp, 2_000, u64::MAX);
        let found = r.found.expect("a 1/10 target within 2001 tries");
        assert!(found.verify());
        assert!(target.contains(&found.code()));
        assert_eq!(found.timestamp, t.timestamp + r.attempts - 1);
    }

    #[test]
    fn window_and_budget_bound_the_search() {
        let (kp, t) = base(3);
        let narrow = allocate_ranges(3_000).unwrap().remove(0);
        let r = brute_force_double_spend(&narrow, &t, &kp, 4, u64::MAX);
        if !r.success() {
            assert_eq!(r.attempts, 5);
        }
        let r = brute_force_double_spend(&narrow, &t, &kp, 10_000, 7);
        assert!(r.attempts <= 7);
    }

    #[test]
    fn expected_attempts_follow_range_sizes() {
        // 62 codes over 50 ranges: 12 of size 2 and 38 of size 1.
        let s = brute_force_trials(50, 1, 2_000, u64::MAX, 0);
        assert!((s.expected - (12.0 * 31.0 + 38.0 * 62.0) / 50.0).abs() < 1e-9);
        assert!((brute_force_trials(1, 3, 10, 10, 0).mean_attempts - 1.0).abs() < 1e-9);
    }
}
