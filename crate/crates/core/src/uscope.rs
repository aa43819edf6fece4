//! Uplink latency decomposition from virtual probes (segment/ACK
//! handshakes).
//!
//! The ACK of a downlink segment enters the station queue roughly when the
//! segment transmission ends, so each handshake brackets the ACK's sojourn
//! in the station: queuing behind earlier uplink frames, channel access,
//! then transmission.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flowsense::{Handshake, HsClass, StaHandshakes};
use crate::phy::PhyProfile;
use crate::stats;
use crate::trace::PacketRecord;

/// Retry limit; the contention table stops here.
pub const MAX_ATTEMPTS: usize = 7;

#[derive(Debug, Error, PartialEq)]
pub enum UscopeError {
    #[error("no handshakes")]
    NoHandshakes,
    #[error("every ACK in the window was retried")]
    NoCleanHandshakes,
    #[error("negative budget")]
    InvalidBudget,
    #[error("no uplink receptions from the station")]
    NoUplink,
}

/// Mean contention of the k-th attempt (1-based): half the window, with the
/// window doubling from 16 slots.
pub fn theta_contn(k: usize, sigma: f64) -> f64 {
    ((1u64 << (3 + k)) - 1) as f64 * sigma / 2.0
}

/// Mean duration of each transmission attempt.
///
/// `ifs` is the fixed inter-frame space waited before every attempt. It is
/// kept as its own term so that the deferral terms only hold the time spent
/// deferring to other transmissions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptModel {
    pub sigma: f64,
    pub ifs: f64,
    pub phi_tx: f64,
    pub theta_defer_1: f64,
    pub theta_contn_k: Vec<f64>,
    pub theta_defer_k: Vec<f64>,
    pub z_k: Vec<f64>,
}

impl AttemptModel {
    /// Every attempt defers `theta_defer_1`.
    pub fn new(sigma: f64, ifs: f64, phi_tx: f64, theta_defer_1: f64) -> Self {
        Self::build(sigma, ifs, phi_tx, theta_defer_1, |_| 1.0)
    }

    /// Deferral grows with the time an attempt waits for the medium (IFS
    /// plus countdown), since other senders start busy periods at a steady
    /// rate while it waits.
    pub fn scaled(sigma: f64, ifs: f64, phi_tx: f64, theta_defer_1: f64) -> Self {
        let first = ifs + theta_contn(1, sigma);
        Self::build(sigma, ifs, phi_tx, theta_defer_1, |c| (ifs + c) / first)
    }

    fn build(sigma: f64, ifs: f64, phi_tx: f64, theta_defer_1: f64, scale: impl Fn(f64) -> f64) -> Self {
        let theta_contn_k: Vec<f64> = (1..=MAX_ATTEMPTS).map(|k| theta_contn(k, sigma)).collect();
        let theta_defer_k: Vec<f64> = theta_contn_k.iter().map(|&c| theta_defer_1 * scale(c)).collect();
        let z_k = theta_contn_k.iter().zip(&theta_defer_k).map(|(c, d)| ifs + c + d + phi_tx).collect();
        Self { sigma, ifs, phi_tx, theta_defer_1, theta_contn_k, theta_defer_k, z_k }
    }
}

fn require(hs: &[Handshake]) -> Result<(), UscopeError> {
    if hs.is_empty() {
        Err(UscopeError::NoHandshakes)
    } else {
        Ok(())
    }
}

pub fn latency_samples(hs: &[Handshake]) -> Vec<f64> {
    hs.iter().map(|h| (h.t_rx_end_ack - h.t_tx_end_seg) as f64).collect()
}

pub fn estimate_total_latency(hs: &[Handshake]) -> Result<f64, UscopeError> {
    require(hs)?;
    Ok(stats::mean(&latency_samples(hs)).unwrap())
}

/// One sample per uplink transmission whose start the AP can anchor to the
/// end of the previous one (or to the segment end when nothing was queued).
pub fn access_samples(hs: &[Handshake]) -> Vec<f64> {
    let mut out = Vec::new();
    for h in hs {
        match h.hs_class {
            HsClass::Immediate => out.push((h.t_rx_start_ack - h.t_tx_end_seg) as f64),
            HsClass::Queued => {
                for w in h.intermediates.windows(2) {
                    out.push(w[1].t_rx_start.saturating_sub(w[0].t_rx_end) as f64);
                }
                let last = h.intermediates.last().unwrap();
                out.push(h.t_rx_start_ack.saturating_sub(last.t_rx_end) as f64);
            }
        }
    }
    out
}

/// Airtime of the frame each access sample ends in, in the same order as
/// [`access_samples`].
pub fn sampled_airtime(hs: &[Handshake]) -> Vec<f64> {
    let mut out = Vec::new();
    for h in hs {
        if h.hs_class == HsClass::Queued {
            out.extend(h.intermediates.iter().skip(1).map(|i| i.t_rx_end.saturating_sub(i.t_rx_start) as f64));
        }
        out.push(h.t_rx_end_ack.saturating_sub(h.t_rx_start_ack) as f64);
    }
    out
}

/// Retry flag of the frame each access sample ends in.
pub fn sampled_retry_flags(hs: &[Handshake]) -> Vec<bool> {
    let mut out = Vec::new();
    for h in hs {
        if h.hs_class == HsClass::Queued {
            out.extend(h.intermediates.iter().skip(1).map(|i| i.retry_flag));
        }
        out.push(h.ack_retry_flag);
    }
    out
}

pub fn estimate_access_delay(hs: &[Handshake]) -> Result<f64, UscopeError> {
    require(hs)?;
    Ok(stats::mean(&access_samples(hs)).unwrap())
}

fn flow_label(h: &crate::flowsense::Intermediate) -> String {
    match &h.flow {
        Some(k) => format!("{}>{}", k.sta_net, k.remote_net),
        None => "unknown".into(),
    }
}

/// Queuing samples, plus the per-flow share averaged over all handshakes
/// (so that the shares add up to the total).
pub fn estimate_queuing_delay(hs: &[Handshake]) -> Result<(f64, BTreeMap<String, f64>), UscopeError> {
    require(hs)?;
    let (samples, per_flow) = queuing_parts(hs);
    Ok((stats::mean(&samples).unwrap(), per_flow))
}

fn queuing_parts(hs: &[Handshake]) -> (Vec<f64>, BTreeMap<String, f64>) {
    let mut samples = Vec::with_capacity(hs.len());
    let mut per_flow: BTreeMap<String, f64> = BTreeMap::new();
    for h in hs {
        let mut prev = h.t_tx_end_seg;
        for i in &h.intermediates {
            *per_flow.entry(flow_label(i)).or_default() += i.t_rx_end.saturating_sub(prev) as f64;
            prev = i.t_rx_end;
        }
        samples.push((h.t_head() - h.t_tx_end_seg) as f64);
    }
    let n = hs.len().max(1) as f64;
    per_flow.values_mut().for_each(|v| *v /= n);
    (samples, per_flow)
}

/// First-attempt deferral from handshakes whose ACK was not retried. Each
/// ACK's own airtime is taken off, since ACKs are far shorter than the
/// station's mean burst. A frame requeued after the retry limit goes out
/// again without the flag; samples that long are dropped.
pub fn estimate_first_attempt_defer(hs: &[Handshake], sigma: f64, ifs: f64) -> Result<f64, UscopeError> {
    let chain: f64 = (1..=MAX_ATTEMPTS).map(|k| ifs + theta_contn(k, sigma)).sum();
    let xs: Vec<f64> = hs
        .iter()
        .filter(|h| !h.ack_retry_flag)
        .filter_map(|h| {
            let access = h.t_rx_start_ack.saturating_sub(h.t_head()) as f64;
            let tx = h.t_rx_end_ack.saturating_sub(h.t_rx_start_ack) as f64;
            (access <= chain + MAX_ATTEMPTS as f64 * tx).then_some(access)
        })
        .collect();
    let m = stats::mean(&xs).ok_or(UscopeError::NoCleanHandshakes)?;
    Ok((m - ifs - theta_contn(1, sigma)).max(0.0))
}

/// Fit attempt durations into the measured access + transmission budget.
/// Returns `(r_bar, psi_defer)`.
pub fn estimate_retx_and_defer(
    phi_access: f64,
    phi_tx: f64,
    attempt: &AttemptModel,
) -> Result<(f64, f64), UscopeError> {
    if phi_access < 0.0 || phi_tx < 0.0 {
        return Err(UscopeError::InvalidBudget);
    }
    let mut budget = phi_access + phi_tx;
    let mut fitted = 0.0;
    let mut defer = 0.0;
    for (&z, &d) in attempt.z_k.iter().zip(&attempt.theta_defer_k) {
        if budget >= z {
            budget -= z;
            fitted += 1.0;
            defer += d;
        } else {
            if z > 0.0 {
                fitted += budget / z;
                defer += d * budget / z;
            }
            budget = 0.0;
            break;
        }
    }
    // whatever is left past the retry limit is deferral
    let r_bar = (fitted - 1.0).max(0.0);
    Ok((r_bar, defer + budget))
}

/// Fit with the share `q` of frames that needed at least one retry known:
/// after the first failure each further attempt fails with the same
/// probability, chosen so the expected attempt durations fill the budget.
/// Returns `(r_bar, psi_defer)`.
pub fn estimate_retx_and_defer_flagged(
    phi_access: f64,
    phi_tx: f64,
    q: f64,
    attempt: &AttemptModel,
) -> Result<(f64, f64), UscopeError> {
    if phi_access < 0.0 || phi_tx < 0.0 || !(0.0..=1.0).contains(&q) {
        return Err(UscopeError::InvalidBudget);
    }
    let z = &attempt.z_k;
    // reach probability of attempt k for continuation probability p
    let reach = |p: f64| -> Vec<f64> {
        let mut r = vec![1.0];
        let mut x = q;
        for _ in 1..z.len() {
            r.push(x);
            x *= p;
        }
        r
    };
    let cost = |p: f64| reach(p).iter().zip(z).map(|(r, z)| r * z).sum::<f64>();
    let budget = phi_access + phi_tx;
    let p = if cost(0.0) >= budget {
        0.0
    } else if cost(1.0) <= budget {
        1.0
    } else {
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..60 {
            let mid = (lo + hi) / 2.0;
            if cost(mid) < budget { lo = mid } else { hi = mid }
        }
        (lo + hi) / 2.0
    };
    let r = reach(p);
    let r_bar: f64 = r[1..].iter().sum();
    let defer: f64 = r.iter().zip(&attempt.theta_defer_k).map(|(r, d)| r * d).sum();
    // budget the model cannot place, either way, is deferral
    Ok((r_bar, (defer + budget - cost(p)).max(0.0)))
}

#[derive(Debug, Clone, Copy)]
pub struct UscopeConfig {
    pub sigma: f64,
    pub ifs: f64,
    pub trim_quantile: f64,
}

impl UscopeConfig {
    pub fn from_profile(p: &PhyProfile) -> Self {
        Self { sigma: p.slot_us, ifs: p.difs_us, trim_quantile: 0.999 }
    }
}

impl Default for UscopeConfig {
    fn default() -> Self {
        Self::from_profile(&PhyProfile::reference())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SampleCounts {
    pub handshakes: usize,
    pub access: usize,
    pub clean: usize,
    pub uplink: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyBreakdown {
    pub l_uplink: f64,
    pub phi_queuing: f64,
    pub phi_access: f64,
    pub phi_tx: f64,
    pub psi_defer: f64,
    pub r_bar: f64,
    pub theta_defer_1: f64,
    pub per_flow_queuing: BTreeMap<String, f64>,
    pub sample_counts: SampleCounts,
}

/// Mean airtime of the station's uplink bursts (records sharing an
/// interval are one burst).
pub fn estimate_phi_tx(uplink: &[PacketRecord]) -> Result<f64, UscopeError> {
    let mut bursts: Vec<(u64, u64)> = uplink.iter().filter(|r| r.success).map(|r| (r.ts_start, r.ts_end)).collect();
    bursts.dedup();
    let xs: Vec<f64> = bursts.iter().map(|(s, e)| (e - s) as f64).collect();
    stats::mean(&xs).ok_or(UscopeError::NoUplink)
}

/// Run every uScope estimator over the handshakes of one station.
pub fn estimate_uscope(
    hs: &[Handshake],
    uplink: &[PacketRecord],
    cfg: &UscopeConfig,
) -> Result<LatencyBreakdown, UscopeError> {
    require(hs)?;
    let q = cfg.trim_quantile;
    let l_uplink = stats::trimmed_mean(&latency_samples(hs), q).unwrap();
    let acc = access_samples(hs);
    let phi_access = stats::trimmed_mean(&acc, q).unwrap();
    let (qs, per_flow_queuing) = queuing_parts(hs);
    let phi_queuing = stats::trimmed_mean(&qs, q).unwrap();
    let phi_tx = estimate_phi_tx(uplink)?;
    let theta_defer_1 = estimate_first_attempt_defer(hs, cfg.sigma, cfg.ifs)?;
    // attempts are priced with the airtime of the frames the access samples
    // end in, not the station's mean burst
    let tx = stats::mean(&sampled_airtime(hs)).unwrap_or(phi_tx);
    let model = AttemptModel::scaled(cfg.sigma, cfg.ifs, tx, theta_defer_1);
    let flags = sampled_retry_flags(hs);
    let retried = flags.iter().filter(|f| **f).count() as f64 / flags.len().max(1) as f64;
    let (r_bar, psi_defer) = estimate_retx_and_defer_flagged(phi_access, tx, retried, &model)?;
    Ok(LatencyBreakdown {
        l_uplink,
        phi_queuing,
        phi_access,
        phi_tx,
        psi_defer,
        r_bar,
        theta_defer_1,
        per_flow_queuing,
        sample_counts: SampleCounts {
            handshakes: hs.len(),
            access: acc.len(),
            clean: hs.iter().filter(|h| !h.ack_retry_flag).count(),
            uplink: uplink.len(),
        },
    })
}

pub fn estimate_for_sta(sh: &StaHandshakes, cfg: &UscopeConfig) -> Result<LatencyBreakdown, UscopeError> {
    estimate_uscope(&sh.handshakes, &sh.uplink, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowsense::{FlowKey, Intermediate};

    fn key(remote: &str) -> FlowKey {
        FlowKey { sta_net: "s".into(), remote_net: remote.into(), sta_id: "sta".into() }
    }

    fn hs(seg: u64, ack: (u64, u64), ints: &[(u64, u64)]) -> Handshake {
        Handshake {
            flow: key("r"),
            t_tx_end_seg: seg,
            t_rx_start_ack: ack.0,
            t_rx_end_ack: ack.1,
            intermediates: ints
                .iter()
                .map(|&(a, b)| Intermediate { t_rx_start: a, t_rx_end: b, flow: Some(key("u")), retry_flag: false })
                .collect(),
            ack_retry_flag: false,
            hs_class: if ints.is_empty() { HsClass::Immediate } else { HsClass::Queued },
        }
    }

    #[test]
    fn total_latency() {
        assert_eq!(estimate_total_latency(&[hs(100, (550, 600), &[])]).unwrap(), 500.0);
        let two = [hs(0, (300, 400), &[]), hs(1000, (1500, 1600), &[])];
        assert_eq!(estimate_total_latency(&two).unwrap(), 500.0);
        assert_eq!(estimate_total_latency(&[]), Err(UscopeError::NoHandshakes));
    }

    #[test]
    fn access_immediate_and_queued() {
        assert_eq!(estimate_access_delay(&[hs(100, (350, 400), &[])]).unwrap(), 250.0);
        let q = hs(100, (700, 720), &[(200, 300), (450, 550)]);
        assert_eq!(access_samples(std::slice::from_ref(&q)), vec![150.0, 150.0]);
        assert_eq!(sampled_airtime(&[q]), vec![100.0, 20.0]);
    }

    #[test]
    fn queuing() {
        let (m, pf) = estimate_queuing_delay(&[hs(100, (350, 400), &[])]).unwrap();
        assert_eq!(m, 0.0);
        assert!(pf.is_empty());
        let (m, pf) = estimate_queuing_delay(&[hs(100, (500, 520), &[(250, 350)])]).unwrap();
        assert_eq!(m, 250.0);
        assert_eq!(pf["s>u"], 250.0);
    }

    #[test]
    fn contention_table() {
        assert_eq!(theta_contn(1, 9.0), 67.5);
        let m = AttemptModel::new(9.0, 34.0, 100.0, 5.0);
        for k in 0..MAX_ATTEMPTS {
            assert_eq!(m.theta_contn_k[k], ((1u64 << (4 + k)) - 1) as f64 * 9.0 / 2.0);
        }
        assert!(m.z_k.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn first_attempt_defer_clamps() {
        let h = hs(0, (80, 100), &[]);
        assert_eq!(estimate_first_attempt_defer(std::slice::from_ref(&h), 9.0, 34.0).unwrap(), 0.0);
        let mut r = h;
        r.ack_retry_flag = true;
        assert_eq!(
            estimate_first_attempt_defer(&[r], 9.0, 34.0),
            Err(UscopeError::NoCleanHandshakes)
        );
    }

    #[test]
    fn first_attempt_defer_isolated_station() {
        let (sigma, difs, tx) = (9.0, 34.0, 60.0);
        let total = (difs + 7.5 * sigma + tx) as u64;
        let h = hs(1000, (1000 + total - tx as u64, 1000 + total), &[]);
        let d = estimate_first_attempt_defer(&[h], sigma, difs).unwrap();
        assert!(d < 1.0, "{d}");
    }

    #[test]
    fn greedy_fit() {
        let m = AttemptModel::new(9.0, 34.0, 100.0, 12.0);
        let (r, psi) = estimate_retx_and_defer(m.z_k[0] - 100.0, 100.0, &m).unwrap();
        assert!(r.abs() < 1e-12);
        assert!((psi - 12.0).abs() < 1e-9);
        let (r, psi) = estimate_retx_and_defer(m.z_k[0] + m.z_k[1] - 100.0, 100.0, &m).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        assert!((psi - 24.0).abs() < 1e-9);
        assert_eq!(estimate_retx_and_defer(-1.0, 0.0, &m), Err(UscopeError::InvalidBudget));
    }

    #[test]
    fn budget_past_retry_limit_goes_to_defer() {
        let m = AttemptModel::new(9.0, 34.0, 100.0, 12.0);
        let all: f64 = m.z_k.iter().sum();
        let (r, psi) = estimate_retx_and_defer(all + 500.0 - 100.0, 100.0, &m).unwrap();
        assert!((r - 6.0).abs() < 1e-9);
        assert!((psi - (7.0 * 12.0 + 500.0)).abs() < 1e-6);
    }

    #[test]
    fn scaled_defer_follows_waiting_time() {
        let m = AttemptModel::scaled(9.0, 34.0, 100.0, 10.0);
        assert_eq!(m.theta_defer_k[0], 10.0);
        assert!((m.theta_defer_k[1] - 10.0 * (34.0 + 139.5) / (34.0 + 67.5)).abs() < 1e-9);
    }

    #[test]
    fn flagged_fit_oracle() {
        let m = AttemptModel::scaled(9.0, 34.0, 100.0, 12.0);
        // no retried frames: one attempt, the remainder is deferral
        let (r, psi) = estimate_retx_and_defer_flagged(m.z_k[0] - 100.0 + 30.0, 100.0, 0.0, &m).unwrap();
        assert_eq!(r, 0.0);
        assert!((psi - 42.0).abs() < 1e-9);
        // build the budget from a known continuation probability and recover it
        let (q, p) = (0.3, 0.4);
        let mut reach = vec![1.0, q];
        for _ in 2..MAX_ATTEMPTS {
            reach.push(reach.last().unwrap() * p);
        }
        let budget: f64 = reach.iter().zip(&m.z_k).map(|(r, z)| r * z).sum();
        let defer: f64 = reach.iter().zip(&m.theta_defer_k).map(|(r, d)| r * d).sum();
        let (r, psi) = estimate_retx_and_defer_flagged(budget - 100.0, 100.0, q, &m).unwrap();
        assert!((r - reach[1..].iter().sum::<f64>()).abs() < 1e-6);
        assert!((psi - defer).abs() < 1e-6);
        assert_eq!(estimate_retx_and_defer_flagged(10.0, 10.0, 1.5, &m), Err(UscopeError::InvalidBudget));
    }
}
