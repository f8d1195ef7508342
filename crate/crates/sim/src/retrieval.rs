//! Synthetic single-epoch forests for retrieval measurements.
//!
//! Transactions are routed by code into `j` ledgers and packed into blocks
//! in arrival order. Keys use the hash stand-in so that 10^5 transactions
//! build in well under a second.

use std::collections::BTreeMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use treechain_core::codec::{Digest, KwmDictionary};
use treechain_core::consensus::{genesis_body, rank_candidates, EpochRouting, LedgerId};
use treechain_core::ledger::LedgerForest;
use treechain_core::sig::{KeyPair, PublicKey, Scheme};
use treechain_core::types::{BlockDraft, Transaction, ValidatorInterestTx};

pub struct SyntheticForest {
    pub forest: LedgerForest,
    pub routing: EpochRouting,
    pub blocks: u64,
}

/// `n` payments from one client with random outputs.
pub fn transactions(n: usize, seed: u64) -> Vec<Transaction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let client = KeyPair::generate(Scheme::HashStandIn, &mut rng);
    (0..n)
        .map(|i| {
            let mut out = vec![0u8; 16];
            rng.fill_bytes(&mut out);
            Transaction::create(&client, i as u64, None, out)
        })
        .collect()
}

/// A forest for a `j`-validator table holding every transaction of `txs`.
pub fn build_forest(txs: &[Transaction], j: usize, block_size: usize, seed: u64) -> SyntheticForest {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ j as u64);
    let keys: Vec<KeyPair> = (0..j).map(|_| KeyPair::generate(Scheme::HashStandIn, &mut rng)).collect();
    let vis: Vec<_> = keys.iter().map(|k| ValidatorInterestTx::create(k, 0)).collect();
    let table = rank_candidates(0, &vis, &KwmDictionary::default()).expect("j >= 1 distinct keys");
    let routing = EpochRouting::new(table.clone());
    let by_pk: BTreeMap<PublicKey, &KeyPair> = keys.iter().map(|k| (k.public(), k)).collect();
    let mut forest = LedgerForest::new();
    let g = genesis_body(&table, None, Digest::ZERO);
    let genesis = g.hash();
    forest.add_genesis(g).expect("first genesis");
    forest.open_epoch(&routing, genesis);

    let mut pending: BTreeMap<usize, Vec<Transaction>> = BTreeMap::new();
    let slot_index = |t: &Transaction| {
        let code = t.code();
        routing.slots().iter().position(|s| s.range.contains(&code)).expect("ranges cover the code space")
    };
    let ids = routing.ledgers();
    let mut blocks = 0;
    let mut seal = |forest: &mut LedgerForest, idx: usize, batch: Vec<Transaction>| {
        let slot = &routing.slots()[idx];
        let id = LedgerId { epoch: 0, range: slot.range.clone() };
        let ledger = forest.ledger(&id).expect("opened above");
        let block = BlockDraft {
            epoch: 0,
            height: ledger.blocks.len() as u64 + 1,
            prev_hash: ledger.head(),
            code_range: slot.range.clone(),
            ledger_hashes: forest.ledger_head_hashes(&ids, &id, &BTreeMap::new()),
            transactions: batch,
            timestamp: 0,
            authorizations: Vec::new(),
        }
        .seal(by_pk[&slot.owner]);
        forest.append_block(block).expect("extends the head");
        blocks += 1;
    };
    for t in txs {
        let idx = slot_index(t);
        let batch = pending.entry(idx).or_default();
        batch.push(t.clone());
        if batch.len() == block_size {
            let full = std::mem::take(batch);
            seal(&mut forest, idx, full);
        }
    }
    for (idx, batch) in pending {
        if !batch.is_empty() {
            seal(&mut forest, idx, batch);
        }
    }
    SyntheticForest { forest, routing, blocks }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct RetrievalStats {
    pub j: usize,
    pub blocks: u64,
    pub queries: usize,
    /// Blocks scanned over all queries.
    pub scanned: u64,
    pub mean_scanned: f64,
    /// `blocks / (2 j)`.
    pub predicted: f64,
    pub all_found: bool,
}

/// Mean blocks scanned over `queries` committed transactions, taken at an
/// even stride through the sorted ids so that an imported forest yields the
/// same sample. Leaf ledgers are found from the forest alone.
pub fn measure(forest: &LedgerForest, epoch: u64, queries: usize) -> RetrievalStats {
    let mut ids: Vec<Digest> = Vec::new();
    let mut blocks = 0u64;
    let mut j = 0;
    for l in forest.ledgers().filter(|l| l.id.epoch == epoch) {
        j += 1;
        blocks += l.blocks.len() as u64;
        ids.extend(l.blocks.iter().flat_map(|b| b.transactions.iter().map(|t| t.t_id)));
    }
    ids.sort();
    let stride = (ids.len() / queries.max(1)).max(1);
    let sample: Vec<Digest> = ids.into_iter().step_by(stride).take(queries).collect();
    let mut scanned = 0u64;
    let mut all_found = true;
    for t in &sample {
        let r = forest.retrieve_in_epoch(t, epoch);
        all_found &= r.found.as_ref().is_some_and(|(f, _)| f.t_id == *t);
        scanned += r.blocks_scanned;
    }
    RetrievalStats {
        j,
        blocks,
        queries: sample.len(),
        scanned,
        mean_scanned: scanned as f64 / sample.len().max(1) as f64,
        predicted: blocks as f64 / (2.0 * j.max(1) as f64),
        all_found,
    }
}

/// Mean blocks a lookup visits when the same `blocks` form one linear chain
/// and every block is queried equally often.
pub fn single_ledger_oracle(blocks: u64) -> f64 {
    (blocks + 1) as f64 / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forest_holds_every_transaction_once_and_verifies() {
        let txs = transactions(2_000, 1);
        let sf = build_forest(&txs, 7, 10, 1);
        let report = sf.forest.check_integrity().unwrap();
        assert_eq!(report.transactions, 2_000);
        assert_eq!(report.ledgers, 7);
        assert_eq!(report.blocks as u64, sf.blocks);
        assert_eq!(sf.forest.committed_count(), 2_000);
    }

    #[test]
    fn routed_lookup_agrees_with_full_scan() {
        let txs = transactions(1_000, 2);
        let sf = build_forest(&txs, 13, 10, 2);
        for t in txs.iter().step_by(7) {
            let routed = sf.forest.retrieve_transaction(&t.t_id, &sf.routing);
            let full = sf.forest.scan_all(&t.t_id);
            assert_eq!(routed.found, full.found);
            assert_eq!(routed, sf.forest.retrieve_in_epoch(&t.t_id, 0));
            assert!(routed.blocks_scanned <= full.blocks_scanned);
        }
    }

    #[test]
    fn a_single_ledger_scans_half_the_chain_on_average() {
        let txs = transactions(5_000, 3);
        let sf = build_forest(&txs, 1, 10, 3);
        let s = measure(&sf.forest, 0, 5_000);
        assert!(s.all_found);
        // Every block is queried ten times: mean position (500 + 1) / 2.
        assert!((s.mean_scanned - 250.5).abs() < 1e-9, "{}", s.mean_scanned);
        assert_eq!(single_ledger_oracle(s.blocks), s.mean_scanned);
    }
}
