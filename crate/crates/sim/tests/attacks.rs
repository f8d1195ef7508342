//! Attack scenarios run on the full network.

use treechain_sim::scenarios::{
    double_spend, failover, false_alarm, isolation, load_balance, selective_drop, setup_overhead, sybil,
};

#[test]
fn a_double_spend_commits_twice_only_with_a_colluder_and_is_then_reported() {
    for seed in [42, 7, 1001] {
        let honest = double_spend(seed, false).unwrap();
        assert_eq!(honest.commits, 1, "seed {seed}: {honest:?}");
        assert_eq!(honest.reports, 0);

        let bad = double_spend(seed, true).unwrap();
        assert!(bad.commits <= 1 || bad.reports >= 1, "seed {seed}: undetected {bad:?}");
        assert_eq!(bad.commits, 2, "seed {seed}");
        assert!(!bad.colluder_in_next_table, "seed {seed}");
    }
}

#[test]
fn a_dead_primary_is_covered_by_its_backup_in_time() {
    let r = failover(42, false).unwrap();
    let at = r.backup_block_at.expect("backup produced a block");
    assert!(at > r.kill_at && at - r.kill_at <= r.bound, "{r:?}");
    assert_eq!(r.author_replace_at, None);
}

#[test]
fn losing_primary_and_backup_makes_the_author_replace_the_range() {
    let r = failover(42, true).unwrap();
    assert_eq!(r.backup_block_at, None, "{r:?}");
    let at = r.author_replace_at.expect("author started a replacement");
    assert!(at > r.kill_at);
}

#[test]
fn a_selective_dropper_is_reported_after_the_gap_threshold() {
    let full = selective_drop(42, 1.0).unwrap();
    assert!(full.first_report_at.is_some(), "{full:?}");
    assert_eq!(full.report_gap, Some(51));
    assert!(full.replace_started);

    let none = selective_drop(42, 0.0).unwrap();
    assert_eq!(none.first_report_at, None, "{none:?}");
}

#[test]
fn uncertified_keys_win_no_slots() {
    for (certified, fakes) in [(0, 3), (1, 3), (2, 0)] {
        let r = sybil(42, certified, fakes).unwrap();
        assert_eq!(r.slots, certified, "{r:?}");
        assert_eq!(r.table_size, 4 + certified);
    }
}

#[test]
fn isolating_candidates_shrinks_the_table_and_grows_the_rest() {
    let r = isolation(42, 8, &[5, 6, 7]).unwrap();
    assert_eq!(r.baseline_table_size, 8);
    assert_eq!(r.table_size, 5);
    assert!(r.watched_codes > r.baseline_watched_codes, "{r:?}");
}

#[test]
fn a_stalled_primary_and_its_backup_settle_by_the_tie_rule() {
    let r = false_alarm(42).unwrap();
    assert!(r.promoted, "{r:?}");
    assert_eq!(r.primary_reclaimed, Some(r.primary_should_win));
    let winner = if r.primary_should_win { r.stalled } else { r.backup };
    assert_eq!(r.final_owner, Some(winner));
}

#[test]
fn an_overloaded_range_splits_into_even_halves() {
    let r = load_balance(42, 10_000).unwrap().expect("a split happened");
    assert!(r.union_is_parent, "{r:?}");
    assert!((0.45..=0.55).contains(&r.low_share), "{r:?}");
    assert_eq!(r.samples, 10_000);
}

#[test]
fn setup_bytes_follow_the_overhead_formula() {
    for j in [5, 10, 50] {
        let r = setup_overhead(42, j).unwrap();
        assert_eq!(r.measured, 2 * r.psi * r.j + r.genesis, "{r:?}");
    }
}
