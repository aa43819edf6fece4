//! Ground-truth latency parameters from the simulator's per-packet log.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::flowsense::Handshake;
use crate::stats::mean;
use crate::trace::{GroundTruthRecord, Micros};
use crate::wlansim::{flow_net, sta_net};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UscopeTruth {
    pub l_uplink: f64,
    pub phi_access: f64,
    pub phi_queuing: f64,
    pub r_bar: f64,
    pub psi_defer: f64,
    pub per_flow_queuing: BTreeMap<String, f64>,
    pub packets: usize,
}

/// Time span covered by a handshake set.
pub fn handshake_window(hs: &[Handshake]) -> Option<(Micros, Micros)> {
    let lo = hs.iter().map(|h| h.t_tx_end_seg).min()?;
    let hi = hs.iter().map(|h| h.t_rx_end_ack).max()?;
    Some((lo, hi))
}

/// `gt` holds the target's records only; `ack_flow` is the snooped flow.
pub fn uscope_truth(
    gt: &[GroundTruthRecord],
    target: usize,
    ack_flow: u32,
    window: (Micros, Micros),
) -> Option<UscopeTruth> {
    let mut recs: Vec<&GroundTruthRecord> =
        gt.iter().filter(|g| g.t_enq >= window.0 && g.ts_end <= window.1).collect();
    recs.sort_by_key(|g| (g.ts_end, g.t_enq));
    let acks: Vec<&GroundTruthRecord> = recs.iter().copied().filter(|g| g.flow == ack_flow).collect();
    if acks.is_empty() {
        return None;
    }
    let f = |v: &[&GroundTruthRecord], m: fn(&GroundTruthRecord) -> f64| {
        mean(&v.iter().map(|g| m(g)).collect::<Vec<_>>()).unwrap_or(0.0)
    };

    // the transmissions whose whole access a handshake brackets: each ACK
    // and every frame that reached the head while an ACK waited behind it.
    // A frame already contending when the ACK arrived is that ACK's queuing.
    let waits = merged_waits(&acks);
    let bracketed = |t: &GroundTruthRecord| {
        let i = waits.partition_point(|w| w.0 < t.ts_end);
        i > 0 && t.ts_end <= waits[i - 1].1 && t.t_head >= waits[i - 1].0
    };
    let mut sent: Vec<&GroundTruthRecord> = recs.clone();
    sent.dedup_by_key(|g| g.ts_start);
    let txs: Vec<&GroundTruthRecord> = sent.iter().copied().filter(|t| t.flow == ack_flow || bracketed(t)).collect();

    let label = |flow: u32| format!("{}>{}", sta_net(target), flow_net(flow as usize));
    let mut per_flow: BTreeMap<String, f64> = BTreeMap::new();
    for a in &acks {
        let mut prev = a.t_enq;
        for t in sent.iter().filter(|t| t.ts_end > a.t_enq && t.ts_end <= a.t_head) {
            *per_flow.entry(label(t.flow)).or_default() += t.ts_end.saturating_sub(prev) as f64;
            prev = t.ts_end;
        }
    }
    per_flow.values_mut().for_each(|v| *v /= acks.len() as f64);

    Some(UscopeTruth {
        l_uplink: f(&acks, |g| (g.ts_end - g.t_enq) as f64),
        phi_access: f(&txs, |g| (g.ts_start - g.t_head) as f64),
        phi_queuing: f(&acks, |g| (g.t_head - g.t_enq) as f64),
        r_bar: f(&txs, |g| g.n_retx as f64),
        psi_defer: f(&txs, |g| g.defer_us as f64),
        per_flow_queuing: per_flow,
        packets: recs.len(),
    })
}

/// Queue waits `(t_enq, t_head]` of the ACKs, merged and sorted.
fn merged_waits(acks: &[&GroundTruthRecord]) -> Vec<(Micros, Micros)> {
    let mut w: Vec<(Micros, Micros)> = acks.iter().filter(|a| a.t_head > a.t_enq).map(|a| (a.t_enq, a.t_head)).collect();
    w.sort_unstable();
    let mut out: Vec<(Micros, Micros)> = Vec::with_capacity(w.len());
    for (lo, hi) in w {
        match out.last_mut() {
            Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
            _ => out.push((lo, hi)),
        }
    }
    out
}
