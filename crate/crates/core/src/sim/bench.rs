//! Wall-clock cost of chains of coordination nodes.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::payload::Payload;
use crate::policy::{step, CnState, CnType, FlowRole, FlowSlot, Inbound, PolicyConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverheadPoint {
    pub n_cns: usize,
    /// Mean added latency per message in seconds, relative to n = 0.
    pub added_latency: f64,
    /// Mean absolute latency per message in seconds.
    pub latency: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares of `y` on `x`.
pub fn linear_fit(points: &[(f64, f64)]) -> LinearFit {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let r_squared = if syy > 0.0 { (sxy * sxy) / (sxx * syy) } else { 1.0 };
    LinearFit {
        slope,
        intercept,
        r_squared,
    }
}

fn chain(n: usize) -> Vec<CnState> {
    (0..n)
        .map(|i| {
            let topic = format!("/bench/t{}", i + 1);
            let slot =
                FlowSlot::new("flow_1", FlowRole::Generic, Some(&topic)).with_aliases([format!("/bench/t{i}/flow_1")]);
            CnState::new(&format!("grcn_{}", i + 1), CnType::Grcn, vec![slot])
        })
        .collect()
}

/// Pushes one message through the chain. Every hop serializes the
/// message as a transport would, then runs the CN step.
fn traverse(cns: &mut [CnState], cfg: &PolicyConfig, payload: &Payload, now: f64) -> usize {
    let mut wire = serde_json::to_vec(payload).expect("payload serializes");
    for cn in cns.iter_mut() {
        let p: Payload = serde_json::from_slice(&wire).expect("payload round-trips");
        let d = step::step(cn, cfg, &[Inbound::new("flow_1", p)], now);
        let out = d.emitted.into_iter().next().expect("block all-allow forwards");
        wire = serde_json::to_vec(&out.payload).expect("payload serializes");
    }
    std::hint::black_box(wire).len()
}

/// Per-message latency through chains of Block GRCNs, minus the n = 0
/// baseline, averaged over `trials`. Lengths are interleaved within each
/// trial so drift affects all of them alike.
pub fn measure_cn_overhead(chain_lengths: &[usize], trials: usize, messages: usize) -> Vec<OverheadPoint> {
    let cfg = PolicyConfig::block_all_allow();
    let payload = Payload::twist(0.2, -0.1);
    let mut lengths: Vec<usize> = chain_lengths.to_vec();
    if !lengths.contains(&0) {
        lengths.push(0);
    }
    let mut totals = vec![0.0f64; lengths.len()];
    let trials = trials.max(1);
    let messages = messages.max(1);
    for trial in 0..trials {
        for (i, &n) in lengths.iter().enumerate() {
            let mut cns = chain(n);
            // Warm the allocator and caches before timing.
            traverse(&mut cns, &cfg, &payload, 0.0);
            let start = Instant::now();
            for m in 0..messages {
                traverse(&mut cns, &cfg, &payload, (trial * messages + m) as f64 * 1e-3);
            }
            totals[i] += start.elapsed().as_secs_f64() / messages as f64;
        }
    }
    let mean: Vec<f64> = totals.iter().map(|t| t / trials as f64).collect();
    let base = mean[lengths.iter().position(|&n| n == 0).expect("baseline present")];
    chain_lengths
        .iter()
        .map(|&n| {
            let i = lengths.iter().position(|&l| l == n).expect("requested length measured");
            OverheadPoint {
                n_cns: n,
                added_latency: if n == 0 { 0.0 } else { (mean[i] - base).max(0.0) },
                latency: mean[i],
            }
        })
        .collect()
}
