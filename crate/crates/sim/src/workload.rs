//! Seeded client submission plans.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use treechain_core::node::Submission;
use treechain_core::range::ConsensusCodeRange;

use crate::config::{ConfigError, SimConfig};
use crate::net::NodeId;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Planned {
    pub at: u64,
    pub node: NodeId,
    pub submission: Submission,
}

/// Default submission window: from the first epoch start until early enough
/// that the last submissions commit before block suppression of the final
/// setup (two block intervals of slack).
pub fn default_window(cfg: &SimConfig) -> Result<(u64, u64), ConfigError> {
    let s = cfg.schedule()?;
    let stop = s.epoch_start(cfg.epochs).saturating_sub(s.quarter() + 2 * cfg.protocol.block_interval);
    Ok((s.epoch_start(0), stop))
}

/// Arrival times of a Poisson process with `rate_per_s` over `[start, stop)`.
fn arrivals(rng: &mut ChaCha8Rng, rate_per_s: f64, start: u64, stop: u64) -> Vec<u64> {
    if rate_per_s <= 0.0 || stop <= start {
        return Vec::new();
    }
    let exp = Exp::new(rate_per_s / 1_000.0).expect("positive rate");
    let mut t = start as f64;
    let mut out = Vec::new();
    loop {
        t += exp.sample(rng);
        if t >= stop as f64 {
            return out;
        }
        out.push(t as u64);
    }
}

fn stream(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// The full plan, ordered by `(at, node)`.
pub fn plan(cfg: &SimConfig) -> Result<Vec<Planned>, ConfigError> {
    let (d_start, d_stop) = default_window(cfg)?;
    let w = &cfg.workload;
    let (start, stop) = (w.start.unwrap_or(d_start), w.stop.unwrap_or(d_stop));
    let clients: Vec<NodeId> = if w.clients.is_empty() { (0..cfg.nodes).collect() } else { w.clients.clone() };
    let mut out = Vec::new();
    for &node in &clients {
        let mut rng = stream(cfg.seed, node as u64 + 1);
        for at in arrivals(&mut rng, w.rate, start, stop) {
            let submission = if rng.gen::<f64>() < w.spend_share { Submission::Spend } else { Submission::Payment };
            out.push(Planned { at, node, submission });
        }
    }
    if let Some(h) = &w.hot {
        let range = ConsensusCodeRange::parse(&h.range).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let mut rng = stream(cfg.seed, 0);
        for at in arrivals(&mut rng, h.rate, h.start, h.stop) {
            let node = clients[rng.gen_range(0..clients.len())];
            out.push(Planned { at, node, submission: Submission::Targeted(range.clone()) });
        }
    }
    for d in &w.double_spends {
        out.push(Planned { at: d.at, node: d.node, submission: Submission::DoubleSpend });
    }
    out.sort_by_key(|p| (p.at, p.node));
    Ok(out)
}
