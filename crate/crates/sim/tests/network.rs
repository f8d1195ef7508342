//! Whole-network properties of honest runs.

use std::collections::{BTreeMap, BTreeSet};

use treechain_core::node::Stage;
use treechain_sim::config::SimConfig;
use treechain_sim::scenarios::{honest, honest_run};
use treechain_sim::world::World;

fn config(seed: u64) -> SimConfig {
    let mut cfg = SimConfig { seed, nodes: 24, validators: 6, epochs: 3, ..SimConfig::default() };
    cfg.workload.rate = 0.5;
    cfg.workload.spend_share = 0.3;
    cfg
}

fn run(seed: u64) -> World {
    let (report, w) = honest_run(&config(seed), false).unwrap();
    assert!(report.passed(), "{report:?}");
    w
}

#[test]
fn every_submission_commits_once_and_every_forest_verifies() {
    for seed in [1, 2] {
        let r = honest(&config(seed)).unwrap();
        assert!(r.submitted > 100, "{r:?}");
        assert_eq!(r.committed_once, r.submitted);
        assert_eq!((r.missing, r.duplicated), (0, 0));
        assert_eq!(r.verified_nodes, r.nodes);
        assert!(r.genesis_agreement);
        assert_eq!(r.geneses.len(), 4);
    }
}

#[test]
fn forests_obey_the_structural_invariants() {
    let cfg = config(3);
    let w = run(3);
    let schedule = cfg.schedule().unwrap();
    let forest = w.forest(cfg.nodes - 1);

    let mut writers: BTreeMap<_, BTreeSet<_>> = BTreeMap::new();
    let mut spends: BTreeMap<_, usize> = BTreeMap::new();
    for l in forest.ledgers() {
        for b in &l.blocks {
            // Stored roots and signatures recompute from the fields.
            assert_eq!(b.computed_tx_root(), b.tx_merkle_root);
            assert!(b.header_signature_ok());
            // Nothing is cut between block suppression and activation.
            for e in 1..=cfg.epochs {
                assert!(!(b.timestamp >= Stage::Negotiate.at(&schedule, e) && b.timestamp < schedule.epoch_start(e)));
            }
            for t in &b.transactions {
                writers.entry((b.epoch, t.t_id)).or_default().insert(b.validator_pk);
                if let Some(i) = t.input {
                    *spends.entry(i).or_default() += 1;
                }
            }
        }
    }
    assert!(writers.values().all(|v| v.len() == 1), "a transaction in two validators' blocks");
    assert!(!spends.is_empty());
    assert!(spends.values().all(|&c| c == 1), "an output spent twice");
}

#[test]
fn consecutive_tables_share_no_key() {
    let cfg = config(4);
    let w = run(4);
    let chain = w.forest(0).genesis_chain();
    assert_eq!(chain.len() as u64, cfg.epochs + 1);
    let members = |e: usize| -> BTreeSet<_> { chain[e].entries.iter().filter(|x| x.code.is_some()).map(|x| x.pk).collect() };
    for e in 0..chain.len() - 1 {
        assert_eq!(members(e).len(), cfg.validators);
        assert!(members(e).is_disjoint(&members(e + 1)), "epoch {e}");
    }
}

#[test]
fn runs_are_reproducible_from_the_seed() {
    let a = honest(&config(5)).unwrap();
    let b = honest(&config(5)).unwrap();
    let c = honest(&config(6)).unwrap();
    assert_eq!(a.trace_hash, b.trace_hash);
    assert_eq!(a.metrics, b.metrics);
    assert_ne!(a.trace_hash, c.trace_hash);
}
