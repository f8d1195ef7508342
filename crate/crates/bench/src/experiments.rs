//! Wall-clock measurements around pure protocol computations. Inputs are
//! prepared outside the timers; only the work one validator performs is
//! timed.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use treechain_core::codec::{Digest, KwmDictionary};
use treechain_core::consensus::{
    collect_interest, genesis_body, negotiate_table, rank_candidates, EpochRouting, LedgerId, Registry, TableView,
};
use treechain_core::ledger::LedgerForest;
use treechain_core::node::BlockMode;
use treechain_core::sig::{KeyPair, Scheme};
use treechain_core::types::{BlockDraft, Transaction, ValidatorInterestTx};

fn median(mut xs: Vec<Duration>) -> Duration {
    xs.sort();
    xs[xs.len() / 2]
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct FormationRow {
    pub j: u64,
    pub table_size: usize,
    pub wall_ms: f64,
}

/// One validator's setup work for a `j`-candidate round: admit the
/// interests, rank them, reconcile with every member's view and assemble
/// the genesis body. Median of `reps` timings.
pub fn consensus_formation(j: usize, scheme: Scheme, seed: u64, reps: usize) -> FormationRow {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keys: Vec<KeyPair> = (0..j).map(|_| KeyPair::generate(scheme, &mut rng)).collect();
    let mut registry = Registry::new();
    for (i, k) in keys.iter().enumerate() {
        registry.certify(i as u64, k.public(), i).expect("fresh identities");
    }
    let incoming: Vec<(u64, ValidatorInterestTx)> = keys.iter().map(|k| (0, ValidatorInterestTx::create(k, 0))).collect();
    let dict = KwmDictionary::default();
    let shared = rank_candidates(0, &incoming.iter().map(|(_, v)| v.clone()).collect::<Vec<_>>(), &dict)
        .expect("distinct certified keys");
    let views: Vec<TableView> = keys.iter().filter_map(|k| TableView::of(&shared, k)).collect();
    let excluded = BTreeSet::new();
    let mut size = 0;
    let timings = (0..reps.max(1))
        .map(|_| {
            let started = Instant::now();
            let admitted = collect_interest(0, (0, 1), &incoming, &registry, &excluded);
            let mine = rank_candidates(0, &admitted.accepted, &dict).expect("non-empty");
            let table = negotiate_table(&mine, &views, &dict).expect("views agree").into_table();
            let g = genesis_body(&table, None, Digest::ZERO);
            let elapsed = started.elapsed();
            size = g.total_val as usize;
            elapsed
        })
        .collect();
    FormationRow { j: j as u64, table_size: size, wall_ms: median(timings).as_secs_f64() * 1e3 }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct BlockGenRow {
    /// Network-wide client rate, transactions per second.
    pub rate: u64,
    pub transactions: usize,
    pub blocks: usize,
    pub mean_fill: f64,
    pub wall_ms: f64,
    pub per_tx_us: f64,
}

pub struct BlockGenSetup {
    pub clients: usize,
    pub validators: usize,
    pub block_size: usize,
    pub block_interval: u64,
    pub block_mode: BlockMode,
    pub validity: u64,
    pub scheme: Scheme,
    pub duration: u64,
}

/// Poisson client traffic at `rate` tx/s split over `validators` ranges and
/// cut into blocks by the configured rule. Timed: each validator's
/// signature checks on pending transactions, block sealing, and the
/// forest append with block verification.
pub fn block_generation(s: &BlockGenSetup, rate: u64, seed: u64) -> BlockGenRow {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clients: Vec<KeyPair> = (0..s.clients).map(|_| KeyPair::generate(s.scheme, &mut rng)).collect();
    let keys: Vec<KeyPair> = (0..s.validators).map(|_| KeyPair::generate(s.scheme, &mut rng)).collect();
    let vis: Vec<_> = keys.iter().map(|k| ValidatorInterestTx::create(k, 0)).collect();
    let table = rank_candidates(0, &vis, &KwmDictionary::default()).expect("distinct keys");
    let routing = EpochRouting::new(table.clone());
    let by_pk: BTreeMap<_, _> = keys.iter().map(|k| (k.public(), k)).collect();

    let exp = Exp::new(rate as f64 / 1_000.0).expect("positive rate");
    let mut t = 0.0;
    let mut arrivals = Vec::new();
    loop {
        t += exp.sample(&mut rng);
        if t >= s.duration as f64 {
            break;
        }
        let c = &clients[rng.gen_range(0..clients.len())];
        let mut out = vec![0u8; 16];
        rng.fill(&mut out[..]);
        arrivals.push(Transaction::create(c, t as u64, None, out));
    }

    // A range's block is due one interval after its previous block, or at
    // the first pending arrival when that is later.
    let by_size = s.block_mode != BlockMode::ByTime;
    let by_time = s.block_mode != BlockMode::BySize;
    let n = routing.slots().len();
    let mut pending: Vec<Vec<Transaction>> = vec![Vec::new(); n];
    let mut last = vec![0u64; n];
    let mut due = vec![0u64; n];
    let mut cuts: Vec<(usize, u64, Vec<Transaction>)> = Vec::new();
    for tx in &arrivals {
        let code = tx.code();
        let idx = routing.slots().iter().position(|sl| sl.range.contains(&code)).expect("full coverage");
        if by_time {
            for i in 0..n {
                if !pending[i].is_empty() && tx.timestamp >= due[i] {
                    last[i] = due[i];
                    cuts.push((i, due[i], std::mem::take(&mut pending[i])));
                }
            }
        }
        if pending[idx].is_empty() {
            due[idx] = (last[idx] + s.block_interval).max(tx.timestamp);
        }
        pending[idx].push(tx.clone());
        if by_size && pending[idx].len() >= s.block_size {
            last[idx] = tx.timestamp;
            cuts.push((idx, tx.timestamp, std::mem::take(&mut pending[idx])));
        }
    }
    for (i, p) in pending.into_iter().enumerate() {
        if let Some(newest) = p.last().map(|t| t.timestamp) {
            cuts.push((i, if by_time { due[i] } else { newest }, p));
        }
    }
    cuts.sort_by_key(|c| (c.1, c.0));

    let mut forest = LedgerForest::new();
    let g = genesis_body(&table, None, Digest::ZERO);
    let genesis = g.hash();
    forest.add_genesis(g).expect("first genesis");
    forest.open_epoch(&routing, genesis);
    let ids = routing.ledgers();
    let blocks = cuts.len();
    let transactions: usize = cuts.iter().map(|c| c.2.len()).sum();
    let started = Instant::now();
    for (idx, at, batch) in cuts {
        for tx in &batch {
            assert!(tx.verify(), "generated transactions are signed");
        }
        let slot = &routing.slots()[idx];
        let id = LedgerId { epoch: 0, range: slot.range.clone() };
        let ledger = forest.ledger(&id).expect("opened");
        let block = BlockDraft {
            epoch: 0,
            height: ledger.blocks.len() as u64 + 1,
            prev_hash: ledger.head(),
            code_range: slot.range.clone(),
            ledger_hashes: forest.ledger_head_hashes(&ids, &id, &BTreeMap::new()),
            transactions: batch,
            timestamp: at,
            authorizations: Vec::new(),
        }
        .seal(by_pk[&slot.owner]);
        let known: BTreeSet<Digest> = block.transactions.iter().map(|t| t.t_id).collect();
        forest
            .verify_block_with(&block, &routing, at, s.validity.max(s.block_interval), |t| known.contains(t))
            .expect("own block verifies");
        forest.append_block(block).expect("extends the head");
    }
    let wall = started.elapsed();
    BlockGenRow {
        rate,
        transactions,
        blocks,
        mean_fill: transactions as f64 / blocks.max(1) as f64,
        wall_ms: wall.as_secs_f64() * 1e3,
        per_tx_us: wall.as_secs_f64() * 1e6 / transactions.max(1) as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(mode: BlockMode) -> BlockGenSetup {
        BlockGenSetup {
            clients: 20,
            validators: 4,
            block_size: 10,
            block_interval: 1_000,
            block_mode: mode,
            validity: 2_000,
            scheme: Scheme::HashStandIn,
            duration: 10_000,
        }
    }

    #[test]
    fn formation_sees_every_candidate() {
        let r = consensus_formation(12, Scheme::HashStandIn, 1, 1);
        assert_eq!((r.j, r.table_size), (12, 12));
    }

    #[test]
    fn blocks_fill_up_as_the_rate_grows() {
        let slow = block_generation(&setup(BlockMode::Hybrid), 4, 1);
        let fast = block_generation(&setup(BlockMode::Hybrid), 200, 1);
        assert!(slow.mean_fill < 2.0, "{slow:?}");
        assert!(fast.mean_fill > 9.0, "{fast:?}");
        assert!(fast.mean_fill <= 10.0);
    }

    #[test]
    fn size_mode_never_exceeds_and_time_mode_ignores_size() {
        let s = block_generation(&setup(BlockMode::BySize), 100, 2);
        assert!(s.mean_fill <= 10.0);
        let t = block_generation(&setup(BlockMode::ByTime), 100, 2);
        // 25 tx/s per range, one block per second.
        assert!(t.mean_fill > 15.0, "{t:?}");
        assert_eq!(s.transactions, t.transactions);
    }
}
