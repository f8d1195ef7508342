//! Scenario runner behind the `treechain` command.
//!
//! Each verb writes into one output directory and reports how the process
//! should exit: 0 on success, 1 when a scenario's own checks fail, 2 when an
//! input file is malformed.

pub mod config;
pub mod experiments;
pub mod output;

use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;
use treechain_core::ledger::{ForestFileError, LedgerForest};
use treechain_core::sig::Scheme;
use treechain_sim::adversary::{brute_force_trials, AttackRow};
use treechain_sim::config::{ConfigError, SimConfig};
use treechain_sim::retrieval::{build_forest, measure, single_ledger_oracle, transactions, RetrievalStats};
use treechain_sim::scenarios;

use crate::config::{BenchConfig, ConfigFileError, Scenario};
use crate::experiments::{block_generation, consensus_formation, BlockGenSetup};
use crate::output::{OutDir, FOREST, METRICS, TRACE};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigFileError),
    #[error("{0}")]
    Forest(#[from] ForestFileError),
    #[error("{what}: {source}")]
    Io { what: String, source: std::io::Error },
    #[error("scenario failed: {0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Forest(_) => 2,
            CliError::Io { .. } | CliError::Failed(_) => 1,
        }
    }
}

fn io<T>(what: impl Into<String>, r: std::io::Result<T>) -> Result<T, CliError> {
    r.map_err(|source| CliError::Io { what: what.into(), source })
}

/// Maps `f` over `0..n` on `workers` threads; results stay in index order.
pub fn par_map<T: Send>(n: usize, workers: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, n.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let v = f(i);
                slots.lock().expect("no worker panics while holding the lock")[i] = Some(v);
            });
        }
    });
    slots.into_inner().expect("workers joined").into_iter().map(|v| v.expect("every index ran")).collect()
}

/// What a finished scenario hands back for writing.
pub struct RunOutput {
    pub csv: Vec<u8>,
    pub trace: String,
    /// Checks that did not hold; empty on success.
    pub failures: Vec<String>,
    pub forest: Option<LedgerForest>,
}

fn csv_bytes<R: Serialize>(rows: &[R]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("rows serialize to CSV");
    }
    w.into_inner().expect("in-memory writer")
}

fn sim_error(cfg_label: &str, e: ConfigError) -> CliError {
    CliError::Config(ConfigFileError { path: cfg_label.into(), line: 1, message: e.to_string() })
}

fn scheme_of(cfg: &SimConfig) -> Result<Scheme, ConfigError> {
    cfg.node_config().map(|n| n.scheme)
}

#[derive(Serialize)]
struct NetworkRow {
    submitted: usize,
    committed_once: usize,
    missing: usize,
    duplicated: usize,
    blocks: usize,
    verified_nodes: usize,
    nodes: usize,
    epochs: usize,
    min_approvals: usize,
    genesis_agreement: bool,
    blocks_during_setup: usize,
    packets_sent: u64,
    packets_delivered: u64,
    packets_dropped: u64,
    bytes: u64,
    trace_hash: String,
}

#[derive(Serialize)]
struct RetrievalRow {
    epoch: u64,
    j: usize,
    blocks: u64,
    queries: usize,
    scanned: u64,
    mean_scanned: f64,
    predicted: f64,
    ratio: f64,
    oracle_mean: f64,
    oracle_speedup: f64,
    all_found: bool,
}

impl RetrievalRow {
    fn new(epoch: u64, s: RetrievalStats) -> RetrievalRow {
        let oracle_mean = single_ledger_oracle(s.blocks);
        RetrievalRow {
            epoch,
            j: s.j,
            blocks: s.blocks,
            queries: s.queries,
            scanned: s.scanned,
            mean_scanned: s.mean_scanned,
            predicted: s.predicted,
            ratio: s.mean_scanned / s.predicted,
            oracle_mean,
            oracle_speedup: oracle_mean / s.mean_scanned,
            all_found: s.all_found,
        }
    }
}

#[derive(Serialize)]
struct BruteRow {
    j: usize,
    trials: usize,
    successes: usize,
    mean_attempts: f64,
    expected: f64,
    mean_over_j: f64,
    wall_ms: f64,
}

#[derive(Serialize)]
struct OverheadRow {
    j: u64,
    psi: u64,
    genesis: u64,
    measured: u64,
    predicted: u64,
    approvals: u64,
    exact: bool,
}

#[derive(Serialize)]
struct SplitRow {
    parent: String,
    low: String,
    high: String,
    split_at: u64,
    samples: usize,
    low_share: f64,
    union_is_parent: bool,
}

#[derive(Serialize)]
struct DoubleSpendRow {
    colluding: bool,
    colluder: Option<usize>,
    commits: usize,
    reports: usize,
    first_report_at: Option<u64>,
    colluder_in_next_table: bool,
    refused_certifications: u64,
    trace_hash: String,
}

#[derive(Serialize)]
struct FailoverRow {
    both_killed: bool,
    range: String,
    primary: usize,
    backup: usize,
    author: usize,
    kill_at: u64,
    backup_block_at: Option<u64>,
    author_replace_at: Option<u64>,
    bound: u64,
}

fn retrieval_rows(forest: &LedgerForest, queries: usize) -> Vec<RetrievalRow> {
    let epochs: std::collections::BTreeSet<u64> = forest.ledgers().map(|l| l.id.epoch).collect();
    epochs
        .into_iter()
        .map(|e| (e, measure(forest, e, queries)))
        .filter(|(_, s)| s.queries > 0)
        .map(|(e, s)| RetrievalRow::new(e, s))
        .collect()
}

/// The synthetic retrieval forest for table size `j`. Every `j` shares the
/// same transactions; keys depend on the seed and `j` only, so `export`
/// writes exactly the forest the sweep measured.
fn retrieval_forest(cfg: &BenchConfig, j: usize) -> LedgerForest {
    let txs = transactions(cfg.retrieval.transactions, cfg.seed);
    build_forest(&txs, j, cfg.retrieval.block_size, cfg.seed).forest
}

/// Runs the configured scenario without touching the file system.
pub fn execute(cfg: &BenchConfig, label: &str) -> Result<RunOutput, CliError> {
    let sim_err = |e| sim_error(label, e);
    let points = cfg.points();
    let workers = cfg.workers();
    let mut trace = String::new();
    let mut failures = Vec::new();
    let mut forest = None;
    let csv = match cfg.scenario {
        Scenario::Network => {
            let (r, w) = scenarios::honest_run(&cfg.sim, cfg.full_trace).map_err(sim_err)?;
            if cfg.full_trace {
                trace.push_str(w.sim.trace());
            }
            writeln!(trace, "trace_hash {}", r.trace_hash.to_hex()).expect("string write");
            if !r.passed() {
                failures.push(format!(
                    "{} missing, {} duplicated, {}/{} forests verify, agreement {}, {} blocks during setup",
                    r.missing, r.duplicated, r.verified_nodes, r.nodes, r.genesis_agreement, r.blocks_during_setup
                ));
            }
            let row = NetworkRow {
                submitted: r.submitted,
                committed_once: r.committed_once,
                missing: r.missing,
                duplicated: r.duplicated,
                blocks: r.blocks,
                verified_nodes: r.verified_nodes,
                nodes: r.nodes,
                epochs: r.geneses.len(),
                min_approvals: r.geneses.iter().map(|g| g.2).min().unwrap_or(0),
                genesis_agreement: r.genesis_agreement,
                blocks_during_setup: r.blocks_during_setup,
                packets_sent: r.metrics.sent,
                packets_delivered: r.metrics.delivered,
                packets_dropped: r.metrics.dropped,
                bytes: r.metrics.by_kind.values().map(|k| k.bytes).sum(),
                trace_hash: r.trace_hash.to_hex(),
            };
            forest = Some(w.forest(cfg.sim.nodes - 1).clone());
            csv_bytes(&[row])
        }
        Scenario::ConsensusFormation => {
            let scheme = scheme_of(&cfg.sim).map_err(sim_err)?;
            let rows = par_map(points.len(), workers, |i| {
                consensus_formation(points[i] as usize, scheme, cfg.seed + i as u64, 3)
            });
            for (i, r) in rows.iter().enumerate() {
                writeln!(trace, "point {i} seed {} j {} table {}", cfg.seed + i as u64, r.j, r.table_size).unwrap();
            }
            csv_bytes(&rows)
        }
        Scenario::BlockGeneration => {
            let n = cfg.sim.node_config().map_err(sim_err)?;
            let setup = BlockGenSetup {
                clients: cfg.sim.nodes,
                validators: cfg.sim.validators,
                block_size: n.block_size,
                block_interval: n.block_interval,
                block_mode: n.block_mode,
                validity: n.validity,
                scheme: n.scheme,
                duration: cfg.block_generation.duration,
            };
            let rows = par_map(points.len(), workers, |i| block_generation(&setup, points[i], cfg.seed + i as u64));
            for (i, r) in rows.iter().enumerate() {
                writeln!(trace, "point {i} seed {} rate {} txs {} blocks {}", cfg.seed + i as u64, r.rate, r.transactions, r.blocks)
                    .unwrap();
            }
            csv_bytes(&rows)
        }
        Scenario::Retrieval => {
            let txs = transactions(cfg.retrieval.transactions, cfg.seed);
            let rows = par_map(points.len(), workers, |i| {
                let sf = build_forest(&txs, points[i] as usize, cfg.retrieval.block_size, cfg.seed);
                RetrievalRow::new(0, measure(&sf.forest, 0, cfg.retrieval.queries))
            });
            for r in &rows {
                writeln!(trace, "j {} blocks {} scanned {}", r.j, r.blocks, r.scanned).unwrap();
                if !r.all_found {
                    failures.push(format!("j {}: a committed transaction was not found", r.j));
                }
            }
            csv_bytes(&rows)
        }
        Scenario::BruteForce => {
            let js = &cfg.attack.j;
            let a = &cfg.attack;
            let rows = par_map(js.len(), workers, |i| {
                let s = brute_force_trials(js[i], a.trials, a.window, a.budget, cfg.seed + i as u64);
                BruteRow {
                    j: s.j,
                    trials: s.trials,
                    successes: s.successes,
                    mean_attempts: s.mean_attempts,
                    expected: s.expected,
                    mean_over_j: s.mean_attempts / s.j as f64,
                    wall_ms: s.elapsed.as_secs_f64() * 1e3,
                }
            });
            for (i, r) in rows.iter().enumerate() {
                writeln!(trace, "point {i} seed {} j {} successes {}", cfg.seed + i as u64, r.j, r.successes).unwrap();
            }
            csv_bytes(&rows)
        }
        Scenario::Overhead => {
            let rows = par_map(points.len(), workers, |i| {
                scenarios::setup_overhead(cfg.seed + i as u64, points[i] as usize).map(|o| {
                    let predicted = scenarios::packet_overhead_setup(o.j, o.psi, o.genesis);
                    OverheadRow {
                        j: o.j,
                        psi: o.psi,
                        genesis: o.genesis,
                        measured: o.measured,
                        predicted,
                        approvals: o.approvals,
                        exact: predicted == o.measured,
                    }
                })
            })
            .into_iter()
            .collect::<Result<Vec<_>, _>>()
            .map_err(sim_err)?;
            for r in &rows {
                writeln!(trace, "j {} measured {} predicted {}", r.j, r.measured, r.predicted).unwrap();
                if !r.exact {
                    failures.push(format!("j {}: measured {} bytes, formula {}", r.j, r.measured, r.predicted));
                }
            }
            csv_bytes(&rows)
        }
        Scenario::LoadBalancing => {
            let r = scenarios::load_balance(cfg.seed, cfg.attack.samples).map_err(sim_err)?;
            let Some(r) = r else {
                return Ok(RunOutput {
                    csv: csv_bytes::<SplitRow>(&[]),
                    trace,
                    failures: vec!["no split happened".into()],
                    forest,
                });
            };
            if !r.union_is_parent {
                failures.push(format!("{} and {} do not tile {}", r.low, r.high, r.parent));
            }
            writeln!(trace, "split {} -> {} {} at {}", r.parent, r.low, r.high, r.split_at).unwrap();
            csv_bytes(&[SplitRow {
                parent: r.parent.to_string(),
                low: r.low.to_string(),
                high: r.high.to_string(),
                split_at: r.split_at,
                samples: r.samples,
                low_share: r.low_share,
                union_is_parent: r.union_is_parent,
            }])
        }
        Scenario::DoubleSpend => {
            let rows = par_map(2, workers, |i| scenarios::double_spend(cfg.seed, i == 1))
                .into_iter()
                .collect::<Result<Vec<_>, _>>()
                .map_err(sim_err)?;
            let rows: Vec<DoubleSpendRow> = rows
                .into_iter()
                .zip([false, true])
                .map(|(r, colluding)| DoubleSpendRow {
                    colluding,
                    colluder: r.colluder,
                    commits: r.commits,
                    reports: r.reports,
                    first_report_at: r.first_report_at,
                    colluder_in_next_table: r.colluder_in_next_table,
                    refused_certifications: r.refused_certifications,
                    trace_hash: r.trace_hash.to_hex(),
                })
                .collect();
            for r in &rows {
                writeln!(trace, "colluding {} trace_hash {}", r.colluding, r.trace_hash).unwrap();
            }
            if rows[0].commits != 1 {
                failures.push(format!("honest validators committed {} spends", rows[0].commits));
            }
            if rows[1].reports == 0 || rows[1].colluder_in_next_table {
                failures.push("collusion went unpunished".into());
            }
            csv_bytes(&rows)
        }
        Scenario::Failover => {
            let rows = par_map(2, workers, |i| scenarios::failover(cfg.seed, i == 1))
                .into_iter()
                .collect::<Result<Vec<_>, _>>()
                .map_err(sim_err)?;
            let rows: Vec<FailoverRow> = rows
                .into_iter()
                .zip([false, true])
                .map(|(r, both)| FailoverRow {
                    both_killed: both,
                    range: r.range.to_string(),
                    primary: r.primary,
                    backup: r.backup,
                    author: r.author,
                    kill_at: r.kill_at,
                    backup_block_at: r.backup_block_at,
                    author_replace_at: r.author_replace_at,
                    bound: r.bound,
                })
                .collect();
            let single = &rows[0];
            if !single.backup_block_at.is_some_and(|t| t <= single.kill_at + single.bound) {
                failures.push("backup did not take over in time".into());
            }
            if rows[1].author_replace_at.is_none() {
                failures.push("author did not start a replacement".into());
            }
            for r in &rows {
                writeln!(trace, "both {} kill {} backup {:?} replace {:?}", r.both_killed, r.kill_at, r.backup_block_at, r.author_replace_at)
                    .unwrap();
            }
            csv_bytes(&rows)
        }
        Scenario::Adversary => {
            let rows = adversary_rows(cfg, workers).map_err(sim_err)?;
            for r in &rows {
                writeln!(trace, "{} j {} detected {}", r.scenario, r.j, r.detected).unwrap();
            }
            csv_bytes(&rows)
        }
    };
    Ok(RunOutput { csv, trace, failures, forest })
}

/// One row per attack. `attempts` is the rounded mean per trial for brute
/// force, the attacker's spends for collusion, in-range submissions seen
/// before the report for dropping, and advertised keys for Sybil. `time` is
/// wall seconds for brute force and the logical report time otherwise.
fn adversary_rows(cfg: &BenchConfig, workers: usize) -> Result<Vec<AttackRow>, ConfigError> {
    let a = &cfg.attack;
    let mut rows: Vec<AttackRow> = par_map(a.j.len(), workers, |i| {
        let s = brute_force_trials(a.j[i], a.trials, a.window, a.budget, cfg.seed + i as u64);
        AttackRow {
            scenario: "brute-force".into(),
            j: s.j,
            attempts: s.mean_attempts.round() as u64,
            detected: false,
            time: s.elapsed.as_secs_f64(),
        }
    });
    let ds = scenarios::double_spend(cfg.seed, true)?;
    rows.push(AttackRow {
        scenario: "double-spend-collusion".into(),
        j: 4,
        attempts: 2,
        detected: ds.reports > 0,
        time: ds.first_report_at.unwrap_or(0) as f64,
    });
    let dr = scenarios::selective_drop(cfg.seed, a.drop_fraction)?;
    rows.push(AttackRow {
        scenario: "selective-drop".into(),
        j: 5,
        attempts: dr.observed_at_report.unwrap_or(0) as u64,
        detected: dr.first_report_at.is_some(),
        time: dr.first_report_at.unwrap_or(0) as f64,
    });
    let sy = scenarios::sybil(cfg.seed, a.sybil_certified, a.sybil_keys)?;
    rows.push(AttackRow {
        scenario: "sybil".into(),
        j: sy.table_size,
        attempts: (sy.certified + sy.fake_keys) as u64,
        detected: sy.slots <= sy.certified,
        time: 0.0,
    });
    Ok(rows)
}

fn write_run(out: &OutDir, cfg: &BenchConfig, run: &RunOutput) -> Result<(), CliError> {
    io("writing metrics", out.write_bytes(METRICS, &run.csv))?;
    io("writing trace", out.write_text(TRACE, &run.trace))?;
    io("writing manifest", out.write_manifest(cfg))
}

fn outcome(run: RunOutput) -> Result<(), CliError> {
    match run.failures.is_empty() {
        true => Ok(()),
        false => Err(CliError::Failed(run.failures.join("; "))),
    }
}

/// `run <config>`: metrics, trace and manifest.
pub fn run(config: &Path, out: &Path) -> Result<(), CliError> {
    let cfg = BenchConfig::load(config)?;
    let label = config.display().to_string();
    let result = execute(&cfg, &label)?;
    let dir = io("creating output directory", OutDir::create(out))?;
    write_run(&dir, &cfg, &result)?;
    outcome(result)
}

/// `export <config>`: runs a forest-producing scenario and writes the
/// resulting forest next to the run's own files.
pub fn export(config: &Path, out: &Path) -> Result<(), CliError> {
    let cfg = BenchConfig::load(config)?;
    let label = config.display().to_string();
    let dir = io("creating output directory", OutDir::create(out))?;
    let (forest, result) = match cfg.scenario {
        Scenario::Network => {
            let mut r = execute(&cfg, &label)?;
            (r.forest.take().expect("network runs keep the observer forest"), r)
        }
        Scenario::Retrieval => {
            let forest = retrieval_forest(&cfg, cfg.retrieval.j);
            let rows = retrieval_rows(&forest, cfg.retrieval.queries);
            let failures = rows
                .iter()
                .filter(|r| !r.all_found)
                .map(|r| format!("epoch {}: lookup failed", r.epoch))
                .collect();
            let trace = format!("j {} forest {} bytes\n", cfg.retrieval.j, forest.to_forest_bytes().len());
            (forest, RunOutput { csv: csv_bytes(&rows), trace, failures, forest: None })
        }
        other => {
            return Err(CliError::Config(ConfigFileError {
                path: label,
                line: 1,
                message: format!("scenario `{}` produces no forest; use network or retrieval", other.name()),
            }))
        }
    };
    io("writing forest", out_forest(&dir, &forest))?;
    write_run(&dir, &cfg, &result)?;
    outcome(result)
}

fn out_forest(dir: &OutDir, forest: &LedgerForest) -> std::io::Result<()> {
    let file = std::fs::File::create(dir.path(FOREST))?;
    forest.write_forest(std::io::BufWriter::new(file))
}

fn read_forest(path: &Path) -> Result<LedgerForest, CliError> {
    let bytes = io(format!("reading {}", path.display()), std::fs::read(path))?;
    Ok(LedgerForest::from_forest_bytes(&bytes)?)
}

/// `import <forest>`: reads a forest, writes it back out in canonical form
/// and runs the retrieval benchmark over each of its epochs.
pub fn import(path: &Path, out: &Path, queries: usize) -> Result<(), CliError> {
    let forest = read_forest(path)?;
    let dir = io("creating output directory", OutDir::create(out))?;
    io("writing forest", out_forest(&dir, &forest))?;
    let rows = retrieval_rows(&forest, queries);
    io("writing metrics", dir.write_bytes(METRICS, &csv_bytes(&rows)))?;
    match rows.iter().all(|r| r.all_found) {
        true => Ok(()),
        false => Err(CliError::Failed("an indexed transaction could not be retrieved".into())),
    }
}

#[derive(Serialize)]
struct VerifyRow {
    ok: bool,
    geneses: usize,
    ledgers: usize,
    blocks: usize,
    transactions: usize,
    error: String,
}

/// `verify <forest>`: re-runs every chain integrity check.
pub fn verify(path: &Path, out: &Path) -> Result<(), CliError> {
    let forest = read_forest(path)?;
    let dir = io("creating output directory", OutDir::create(out))?;
    let checked = forest.check_integrity();
    let report = checked.clone().unwrap_or_default();
    let row = VerifyRow {
        ok: checked.is_ok(),
        geneses: forest.genesis_chain().len(),
        ledgers: report.ledgers,
        blocks: report.blocks,
        transactions: report.transactions,
        error: checked.as_ref().err().map(|e| e.to_string()).unwrap_or_default(),
    };
    io("writing metrics", dir.write_bytes(METRICS, &csv_bytes(&[row])))?;
    checked.map(|_| ()).map_err(|e| CliError::Failed(e.to_string()))
}
