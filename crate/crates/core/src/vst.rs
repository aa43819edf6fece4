//! Speed-test throughput estimation through the two-queue edge model of a
//! TCP connection (AP queue forward, station queue reverse, or the other
//! way round for uploads).
//!
//! All durations are microseconds; throughputs are Mb/s (bits per µs).

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flowsense::{sta_handshakes, FlowConfig, FlowError, Handshake, HsClass};
use crate::phy::PhyProfile;
use crate::stats;
use crate::trace::{ApAccessRecord, Direction, Micros, PacketRecord};

#[derive(Debug, Error, PartialEq)]
pub enum VstError {
    #[error("no handshakes")]
    NoHandshakes,
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("all service times are zero")]
    AllZero,
    #[error("service time is zero")]
    ZeroServiceTime,
    #[error("station {0} has no downlink segment transmissions")]
    NoSegments(String),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestKind {
    Download,
    Upload,
}

/// Raw model components before the thinning adjustment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServiceParams {
    pub kind: TestKind,
    pub d_access: f64,
    /// AP transmission time of one service (F_AP segments for a download,
    /// the ACK burst for an upload).
    pub d_tx: f64,
    pub u_access: f64,
    /// Station transmission time of one service (ACK burst for a download,
    /// F_STA segments for an upload).
    pub u_tx: f64,
    pub v_inflation: f64,
    pub f_ap: f64,
    pub f_sta: f64,
    pub mean_segment_bits: f64,
    pub thinning_n: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServiceTimes {
    pub kind: TestKind,
    pub d_access: f64,
    pub d_tx: f64,
    pub u_access: f64,
    pub u_tx: f64,
    pub v_inflation: f64,
    pub s_vf: f64,
    pub s_vr: f64,
    pub f_ap: f64,
    pub f_sta: f64,
    pub mean_segment_bits: f64,
    pub thinning_n: u32,
    /// Sender services per ACK cycle (1 when no inflation applies).
    pub services_per_cycle: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedEstimate {
    pub theta_dl_mbps: f64,
    pub theta_ul_mbps: f64,
    pub wm_star: f64,
    pub sample_count: usize,
}

pub fn compute_service_times(p: &ServiceParams) -> Result<ServiceTimes, VstError> {
    let comps = [
        ("d_access", p.d_access),
        ("d_tx", p.d_tx),
        ("u_access", p.u_access),
        ("u_tx", p.u_tx),
        ("v_inflation", p.v_inflation),
        ("mean_segment_bits", p.mean_segment_bits),
    ];
    for (name, v) in comps {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(VstError::InvalidParam(format!("{name} = {v}")));
        }
    }
    if p.thinning_n == 0 {
        return Err(VstError::InvalidParam("thinning_n must be >= 1".into()));
    }
    if !(p.f_ap >= 1.0 && p.f_sta >= 1.0) {
        return Err(VstError::InvalidParam("frames per transmission must be >= 1".into()));
    }
    let n = p.thinning_n as f64;
    let ap = p.d_access + p.d_tx + p.v_inflation;
    let sta = p.u_access + p.u_tx;
    let (fwd, rev, sender, f) = match p.kind {
        TestKind::Download => (ap, sta, ap, p.f_ap),
        TestKind::Upload => (sta, ap, sta, p.f_sta),
    };
    // a sender that moves fewer than n segments per access must be served
    // n/f times before the receiver answers
    let k = (n / f).max(1.0);
    let extra = (k - 1.0) * sender;
    Ok(ServiceTimes {
        kind: p.kind,
        d_access: p.d_access,
        d_tx: p.d_tx,
        u_access: p.u_access,
        u_tx: p.u_tx,
        v_inflation: p.v_inflation,
        s_vf: fwd + extra,
        s_vr: rev + extra,
        f_ap: p.f_ap,
        f_sta: p.f_sta,
        mean_segment_bits: p.mean_segment_bits,
        thinning_n: p.thinning_n,
        services_per_cycle: k,
    })
}

/// Window size at which the closed-network throughput asymptotes cross.
pub fn compute_wm_star(s_bf: f64, s_br: f64, s_vf: f64, s_vr: f64) -> Result<f64, VstError> {
    let s = [s_bf, s_br, s_vf, s_vr];
    if s.iter().any(|&x| !(x >= 0.0)) {
        return Err(VstError::InvalidParam("negative service time".into()));
    }
    let max = s.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Err(VstError::AllZero);
    }
    Ok(s.iter().sum::<f64>() / max)
}

/// Saturated throughput (Mb/s) of one direction.
pub fn throughput_mbps(st: &ServiceTimes) -> Result<f64, VstError> {
    let bottleneck = st.s_vf.max(st.s_vr);
    if !(st.s_vf > 0.0 && st.s_vr > 0.0) {
        return Err(VstError::ZeroServiceTime);
    }
    let f = match st.kind {
        TestKind::Download => st.f_ap,
        TestKind::Upload => st.f_sta,
    };
    Ok(st.mean_segment_bits * f * st.services_per_cycle / bottleneck)
}

pub fn estimate_throughput(
    download: &ServiceTimes,
    upload: &ServiceTimes,
    sample_count: usize,
) -> Result<SpeedEstimate, VstError> {
    Ok(SpeedEstimate {
        theta_dl_mbps: throughput_mbps(download)?,
        theta_ul_mbps: throughput_mbps(upload)?,
        wm_star: compute_wm_star(0.0, 0.0, download.s_vf, download.s_vr)?,
        sample_count,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleMean {
    pub mean: f64,
    pub samples: Vec<f64>,
}

/// Station channel-access delay samples from handshakes. A queued
/// handshake contributes one sample per intermediate (the first anchored
/// at the segment end) plus the ACK itself.
pub fn estimate_u_access(handshakes: &[Handshake]) -> Result<SampleMean, VstError> {
    if handshakes.is_empty() {
        return Err(VstError::NoHandshakes);
    }
    let mut samples = Vec::new();
    for h in handshakes {
        match h.hs_class {
            HsClass::Immediate => samples.push((h.t_rx_start_ack - h.t_tx_end_seg) as f64),
            HsClass::Queued => {
                let mut prev = h.t_tx_end_seg;
                for i in &h.intermediates {
                    samples.push(i.t_rx_start.saturating_sub(prev) as f64);
                    prev = i.t_rx_end;
                }
                samples.push(h.t_rx_start_ack.saturating_sub(prev) as f64);
            }
        }
    }
    let mean = stats::mean(&samples).unwrap_or(0.0);
    Ok(SampleMean { mean, samples })
}

/// Distinct AP downlink transmissions (MU transmissions log one record per
/// destination with identical timestamps).
fn ap_transmissions(records: &[PacketRecord]) -> Vec<(Micros, Micros, BTreeSet<&str>)> {
    let mut out: Vec<(Micros, Micros, BTreeSet<&str>)> = Vec::new();
    for r in records.iter().filter(|r| r.direction == Direction::Downlink) {
        match out.last_mut() {
            Some(last) if last.0 == r.ts_start && last.1 == r.ts_end => {
                last.2.insert(r.dst_addr.as_str());
            }
            _ => out.push((r.ts_start, r.ts_end, BTreeSet::from([r.dst_addr.as_str()]))),
        }
    }
    out
}

/// Mean time the AP spends serving other stations between consecutive
/// services of `target`. With AP access events available the time charged
/// to another station runs from contention start to transmission end;
/// otherwise only its airtime is counted.
pub fn estimate_v_inflation(
    records: &[PacketRecord],
    target: &str,
    access: Option<&[ApAccessRecord]>,
) -> f64 {
    let txs = ap_transmissions(records);
    let contend_at = |start: Micros| -> Option<Micros> {
        let acc = access?;
        let i = acc.partition_point(|a| a.ts_start < start);
        acc.get(i).filter(|a| a.ts_start == start).map(|a| a.ts_contend)
    };
    let mut gaps = Vec::new();
    let mut current: Option<f64> = None;
    for (s, e, dsts) in &txs {
        if dsts.contains(target) {
            if let Some(v) = current.take() {
                gaps.push(v);
            }
            current = Some(0.0);
        } else if let Some(v) = current.as_mut() {
            let from = contend_at(*s).unwrap_or(*s);
            *v += (*e - from) as f64;
        }
    }
    stats::mean(&gaps).unwrap_or(0.0)
}

/// Mean AP channel-access delay for transmissions to `target`.
///
/// Uses the AP's own contention-start events when present; otherwise the
/// gap between the transmission start and the end of the last activity the
/// AP observed before it.
pub fn estimate_d_access(
    records: &[PacketRecord],
    target: &str,
    access: Option<&[ApAccessRecord]>,
) -> f64 {
    if let Some(acc) = access {
        let xs: Vec<f64> = acc
            .iter()
            .filter(|a| a.dst_addr == target)
            .map(|a| (a.ts_start - a.ts_contend) as f64)
            .collect();
        if let Some(m) = stats::mean(&xs) {
            return m;
        }
    }
    let mut last_end: Option<Micros> = None;
    let mut xs = Vec::new();
    for r in records {
        if r.direction == Direction::Downlink && r.dst_addr == target && r.success {
            if let Some(le) = last_end.filter(|&le| le <= r.ts_start) {
                xs.push((r.ts_start - le) as f64);
            }
        }
        last_end = Some(last_end.map_or(r.ts_end, |le| le.max(r.ts_end)));
    }
    stats::mean(&xs).unwrap_or(0.0)
}

/// Mean AP access to `target` counted from the end of the target's last
/// uplink frame, over accesses that were already pending when that frame
/// ended (failed AP attempts in between count as part of the access). This
/// is the AP's access in the receiver role, the counterpart of the
/// station's handshake access.
pub fn estimate_ap_resume_access(
    records: &[PacketRecord],
    target: &str,
    access: Option<&[ApAccessRecord]>,
) -> Option<f64> {
    let contend_at = |start: Micros| -> Option<Micros> {
        let acc = access?;
        let i = acc.partition_point(|a| a.ts_start < start);
        acc.get(i).filter(|a| a.ts_start == start).map(|a| a.ts_contend)
    };
    let mut xs = Vec::new();
    let mut anchor: Option<Micros> = None;
    let mut last: Option<(Micros, Micros)> = None;
    for r in records {
        if last == Some((r.ts_start, r.ts_end)) {
            continue;
        }
        last = Some((r.ts_start, r.ts_end));
        let ap_fail = r.direction == Direction::Downlink && !r.success;
        if r.direction == Direction::Downlink && r.success && r.dst_addr == target {
            if let Some(end) = anchor.filter(|&e| e <= r.ts_start) {
                if contend_at(r.ts_start).is_none_or(|c| c < end) {
                    xs.push((r.ts_start - end) as f64);
                }
            }
        }
        if r.direction == Direction::Uplink && r.src_addr == target && r.success {
            anchor = Some(r.ts_end);
        } else if !ap_fail {
            anchor = None;
        }
    }
    stats::mean(&xs)
}

/// Largest contention window assumed when expanding retries.
pub const CW_MAX: u32 = 1024;

/// Failure share above the same-slot estimate before hidden senders count.
pub const HIDDEN_MARGIN: f64 = 0.02;

/// Expected contention plus failed-attempt time of one frame of airtime
/// `tx` whose attempts fail independently with probability `p`.
pub fn expected_retry_cost(p: f64, tx: f64, profile: &PhyProfile) -> f64 {
    retry_cost_split(p, p, tx, profile)
}

/// As [`expected_retry_cost`], with the first attempt failing with
/// probability `p_first` and every retry with `p_retry`.
pub fn retry_cost_split(p_first: f64, p_retry: f64, tx: f64, profile: &PhyProfile) -> f64 {
    let mut cost = 0.0;
    let mut reach = 1.0;
    let mut w = profile.w0.max(1);
    for j in 0..64 {
        let backoff = profile.difs_us + (w as f64 - 1.0) / 2.0 * profile.slot_us;
        cost += reach * backoff;
        if j > 0 {
            cost += reach * tx;
        }
        reach *= if j == 0 { p_first } else { p_retry };
        if reach < 1e-12 {
            break;
        }
        w = (w * 2).min(CW_MAX);
    }
    cost
}

/// Extra access the station pays for a frame of airtime `tx_long` beyond
/// what same-slot collisions cost. Of the per-attempt failure probability
/// `p_short` seen on frames of airtime `tx_short`, the part beyond `p_slot`
/// is put down to hidden senders with frames of airtime `tx_other`; its
/// exposure grows with the frame, and a retry meets the hidden sender's own
/// retry as well as fresh traffic.
pub fn hidden_retry_excess(
    p_short: f64,
    p_slot: f64,
    tx_short: f64,
    tx_long: f64,
    tx_other: f64,
    profile: &PhyProfile,
) -> f64 {
    if !(p_short > 0.0) {
        return 0.0;
    }
    let p_short = p_short.min(0.99);
    let p_slot = p_slot.clamp(0.0, p_short);
    let hidden = 1.0 - (1.0 - p_short) / (1.0 - p_slot);
    let first = 1.0 - (1.0 - hidden).powf((tx_long + tx_other) / (tx_short + tx_other));
    let retry = 1.0 - (1.0 - first).powi(2);
    let p_first = 1.0 - (1.0 - p_slot) * (1.0 - first);
    let p_retry = (1.0 - (1.0 - p_slot) * (1.0 - retry)).min(0.99);
    (retry_cost_split(p_first, p_retry, tx_long, profile) - expected_retry_cost(p_slot, tx_long, profile)).max(0.0)
}

/// Same-slot collision probability a station's attempt is expected to
/// meet: the AP counts as always contending, other stations in proportion
/// to the share of time they spend on the medium or in backoff.
pub fn slot_collision_estimate(records: &[PacketRecord], target: &str, profile: &PhyProfile) -> f64 {
    let (Some(first), Some(last)) = (records.first(), records.last()) else {
        return 0.0;
    };
    let span = (last.ts_end.saturating_sub(first.ts_start)).max(1) as f64;
    let per_access = profile.difs_us + profile.mean_backoff_us();
    let mut busy: std::collections::BTreeMap<&str, f64> = std::collections::BTreeMap::new();
    let mut seen: Option<(Micros, Micros)> = None;
    for r in records.iter().filter(|r| r.direction == Direction::Uplink && r.src_addr != target) {
        if seen != Some((r.ts_start, r.ts_end)) {
            *busy.entry(r.src_addr.as_str()).or_default() += r.duration() as f64 + per_access;
            seen = Some((r.ts_start, r.ts_end));
        }
    }
    let tau = 2.0 / (profile.w0 as f64 + 1.0);
    let quiet: f64 = busy.values().map(|b| 1.0 - tau * (b / span).min(1.0)).product();
    1.0 - (1.0 - tau) * quiet
}

/// Mean airtime of successful uplink transmissions from stations other
/// than `target`.
fn other_uplink_airtime(records: &[PacketRecord], target: &str) -> Option<f64> {
    let mut seen: Option<(Micros, Micros)> = None;
    let mut xs = Vec::new();
    for r in records.iter().filter(|r| r.direction == Direction::Uplink && r.success && r.src_addr != target) {
        if seen != Some((r.ts_start, r.ts_end)) {
            xs.push(r.duration() as f64);
            seen = Some((r.ts_start, r.ts_end));
        }
    }
    stats::mean(&xs)
}

#[derive(Debug, Clone)]
pub struct VstConfig {
    pub thinning_n: u32,
    pub flow: FlowConfig,
    pub profile: PhyProfile,
    /// Frames per station transmission assumed for the upload test; the
    /// observed AP aggregation is used when unset.
    pub upload_aggregation: Option<f64>,
    pub trim_quantile: f64,
}

impl Default for VstConfig {
    fn default() -> Self {
        Self {
            thinning_n: 2,
            flow: FlowConfig::default(),
            profile: PhyProfile::reference(),
            upload_aggregation: None,
            trim_quantile: 0.999,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VstReport {
    pub sta: String,
    pub download: ServiceTimes,
    pub upload: ServiceTimes,
    pub estimate: SpeedEstimate,
    pub handshakes: usize,
    pub u_access_samples: usize,
    pub segment_transmissions: usize,
    /// Segments delivered per ACK frame returned; a diagnostic for the
    /// thinning ratio, which the AP cannot observe directly.
    pub observed_segments_per_ack: f64,
}

/// Full estimation pipeline for one station.
pub fn estimate_vst(
    records: &[PacketRecord],
    access: Option<&[ApAccessRecord]>,
    sta: &str,
    cfg: &VstConfig,
) -> Result<VstReport, VstError> {
    let hs = sta_handshakes(records, sta, &cfg.flow)?;
    let thr = cfg.flow.ack_threshold as f64;
    let ua = estimate_u_access(&hs.handshakes)?;
    let u_access = stats::trimmed_mean(&ua.samples, cfg.trim_quantile).unwrap_or(0.0);

    let segs: Vec<&PacketRecord> = records
        .iter()
        .filter(|r| {
            r.direction == Direction::Downlink
                && r.dst_addr == sta
                && r.success
                && r.payload_per_frame() > thr
        })
        .collect();
    if segs.is_empty() {
        return Err(VstError::NoSegments(sta.to_string()));
    }
    let acks: Vec<&PacketRecord> = hs.uplink.iter().filter(|r| r.payload_per_frame() <= thr).collect();

    let mean_of = |v: &[&PacketRecord], f: fn(&PacketRecord) -> f64| {
        stats::mean(&v.iter().map(|r| f(r)).collect::<Vec<_>>()).unwrap_or(0.0)
    };
    let d_tx = mean_of(&segs, |r| r.duration() as f64);
    let f_ap = mean_of(&segs, |r| r.frames_in_txop as f64).max(1.0);
    let seg_bits = mean_of(&segs, |r| r.payload_per_frame() * 8.0);
    let ap_rate = mean_of(&segs, |r| r.phy_rate);
    let u_tx = mean_of(&acks, |r| r.duration() as f64);
    let f_sta = mean_of(&acks, |r| r.frames_in_txop as f64).max(1.0);
    let sta_rate = if acks.is_empty() { ap_rate } else { mean_of(&acks, |r| r.phy_rate) };

    let d_access = estimate_d_access(records, sta, access);
    let v = estimate_v_inflation(records, sta, access);

    let download = compute_service_times(&ServiceParams {
        kind: TestKind::Download,
        d_access,
        d_tx,
        u_access,
        u_tx,
        v_inflation: v,
        f_ap,
        f_sta,
        mean_segment_bits: seg_bits,
        thinning_n: cfg.thinning_n,
    })?;

    // upload: the station sends the segments, the AP returns the ACKs, so
    // the two sides swap access roles; the AP's deferral to the station's
    // reverse traffic moves to the station
    let (up_sender, up_receiver) = match estimate_ap_resume_access(records, sta, access) {
        Some(a) => (d_access + v + (u_access - a).max(0.0), a),
        None => (d_access.max(u_access) + v, u_access.min(d_access)),
    };
    let p = &cfg.profile;
    // share of the station's frames that needed a retry = per-attempt
    // failure probability of a frame of ACK size
    let p_fail = if acks.is_empty() {
        0.0
    } else {
        acks.iter().filter(|r| r.retry_flag).count() as f64 / acks.len() as f64
    };
    let f_up = cfg.upload_aggregation.unwrap_or(f_ap).max(1.0);
    let seg_payload = (seg_bits / 8.0).round() as u32;
    let up_frames = f_up.round().max(1.0) as u32;
    let u_tx_up = p.uplink_us(up_frames, seg_payload, sta_rate);
    let tx_other = other_uplink_airtime(records, sta).unwrap_or(u_tx_up);
    // only when the station fails clearly more often than same-slot
    // collisions explain do hidden senders count, and then the sender pays
    // at least the access it lost to them on its short frames
    let p_slot = slot_collision_estimate(records, sta, p).min(p_fail);
    let hidden = if p_fail > p_slot + HIDDEN_MARGIN {
        let hx = hidden_retry_excess(p_fail, p_slot, u_tx, u_tx_up, tx_other, p);
        (up_sender - d_access - v).max(0.0).max(hx)
    } else {
        0.0
    };
    let up_sender = d_access + v + hidden;
    let ack_frames = (f_up / cfg.thinning_n as f64).ceil().max(1.0) as u32;
    let d_tx_up = p.uplink_us(ack_frames, 0, ap_rate);
    let upload = compute_service_times(&ServiceParams {
        kind: TestKind::Upload,
        d_access: up_receiver,
        d_tx: d_tx_up,
        u_access: up_sender,
        u_tx: u_tx_up,
        v_inflation: v,
        f_ap: ack_frames as f64,
        f_sta: up_frames as f64,
        mean_segment_bits: seg_bits,
        thinning_n: cfg.thinning_n,
    })?;

    let estimate = estimate_throughput(&download, &upload, hs.handshakes.len())?;
    let seg_frames: f64 = segs.iter().map(|r| r.frames_in_txop as f64).sum();
    let ack_frames_seen: f64 = acks.iter().map(|r| r.frames_in_txop as f64).sum();
    Ok(VstReport {
        sta: sta.to_string(),
        download,
        upload,
        estimate,
        handshakes: hs.handshakes.len(),
        u_access_samples: ua.samples.len(),
        segment_transmissions: segs.len(),
        observed_segments_per_ack: if ack_frames_seen > 0.0 { seg_frames / ack_frames_seen } else { 0.0 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowsense::{FlowKey, Intermediate};

    fn params(n: u32, f_ap: f64) -> ServiceParams {
        ServiceParams {
            kind: TestKind::Download,
            d_access: 0.0,
            d_tx: 1000.0,
            u_access: 500.0,
            u_tx: 100.0,
            v_inflation: 0.0,
            f_ap,
            f_sta: 1.0,
            mean_segment_bits: 8192.0,
            thinning_n: n,
        }
    }

    #[test]
    fn service_times_without_thinning() {
        let s = compute_service_times(&params(1, 1.0)).unwrap();
        assert_eq!((s.s_vf, s.s_vr), (1000.0, 600.0));
    }

    #[test]
    fn thinning_stretches_both_queues() {
        let s = compute_service_times(&params(2, 1.0)).unwrap();
        assert_eq!((s.s_vf, s.s_vr), (2000.0, 1600.0));
    }

    #[test]
    fn aggregation_removes_the_stretch() {
        let s = compute_service_times(&params(2, 16.0)).unwrap();
        assert_eq!((s.s_vf, s.s_vr), (1000.0, 600.0));
    }

    #[test]
    fn negative_component_rejected() {
        let mut p = params(1, 1.0);
        p.u_tx = -1.0;
        assert!(matches!(compute_service_times(&p), Err(VstError::InvalidParam(_))));
    }

    #[test]
    fn wm_star_limits() {
        assert_eq!(compute_wm_star(5.0, 5.0, 5.0, 5.0).unwrap(), 4.0);
        let w = compute_wm_star(1e-9, 1e-9, 1000.0, 1e-9).unwrap();
        assert!((w - 1.0).abs() < 1e-9);
        assert_eq!(compute_wm_star(0.0, 0.0, 0.0, 0.0), Err(VstError::AllZero));
    }

    #[test]
    fn throughput_arithmetic() {
        let mut p = params(1, 1.0);
        p.u_access = 0.0;
        let s = compute_service_times(&p).unwrap();
        assert!((throughput_mbps(&s).unwrap() - 8.192).abs() < 1e-12);
    }

    #[test]
    fn more_frames_per_access_is_faster() {
        let mut last = 0.0;
        for f in [1.0, 2.0, 4.0, 8.0] {
            let mut p = params(1, f);
            p.d_access = 200.0;
            p.d_tx = 100.0 + 150.0 * f;
            let t = throughput_mbps(&compute_service_times(&p).unwrap()).unwrap();
            assert!(t > last);
            last = t;
        }
    }

    fn key() -> FlowKey {
        FlowKey { sta_net: "a".into(), remote_net: "b".into(), sta_id: "s".into() }
    }

    #[test]
    fn u_access_samples() {
        let imm = Handshake {
            flow: key(),
            t_tx_end_seg: 100,
            t_rx_start_ack: 400,
            t_rx_end_ack: 420,
            intermediates: vec![],
            ack_retry_flag: false,
            hs_class: HsClass::Immediate,
        };
        assert_eq!(estimate_u_access(&[imm]).unwrap().samples, vec![300.0]);
        let q = Handshake {
            flow: key(),
            t_tx_end_seg: 100,
            t_rx_start_ack: 500,
            t_rx_end_ack: 520,
            intermediates: vec![Intermediate { t_rx_start: 250, t_rx_end: 350, flow: None, retry_flag: false }],
            ack_retry_flag: false,
            hs_class: HsClass::Queued,
        };
        assert_eq!(estimate_u_access(&[q]).unwrap().samples, vec![150.0, 150.0]);
        assert_eq!(estimate_u_access(&[]), Err(VstError::NoHandshakes));
    }

    fn dl(s: u64, e: u64, dst: &str) -> PacketRecord {
        PacketRecord {
            ts_start: s,
            ts_end: e,
            direction: Direction::Downlink,
            src_addr: "ap".into(),
            dst_addr: dst.into(),
            src_net: None,
            dst_net: None,
            l4_payload_bytes: 1000,
            frame_bytes: 1066,
            phy_rate: 54.0,
            retry_flag: false,
            success: true,
            frames_in_txop: 1,
        }
    }

    #[test]
    fn v_single_station_is_zero() {
        let recs: Vec<_> = (0..10).map(|i| dl(i * 2000, i * 2000 + 1000, "s1")).collect();
        assert_eq!(estimate_v_inflation(&recs, "s1", None), 0.0);
    }

    #[test]
    fn v_alternating_bursts() {
        let recs: Vec<_> = (0..20)
            .map(|i| dl(i * 1000, i * 1000 + 1000, if i % 2 == 0 { "s1" } else { "s2" }))
            .collect();
        assert_eq!(estimate_v_inflation(&recs, "s1", None), 1000.0);
    }

    #[test]
    fn retry_cost_oracle() {
        let p = PhyProfile::reference();
        // one attempt, no failures: DIFS plus mean initial backoff
        let zero = expected_retry_cost(0.0, 100.0, &p);
        assert!((zero - (p.difs_us + (p.w0 as f64 - 1.0) / 2.0 * p.slot_us)).abs() < 1e-9);
        // with p = 1/2 the second stage is reached half the time
        let w1 = p.difs_us + (2.0 * p.w0 as f64 - 1.0) / 2.0 * p.slot_us;
        let two = retry_cost_split(0.5, 0.0, 100.0, &p);
        assert!((two - zero - 0.5 * (w1 + 100.0)).abs() < 1e-9);
    }

    #[test]
    fn hidden_excess_grows_with_frame() {
        let p = PhyProfile::reference();
        assert_eq!(hidden_retry_excess(0.1, 0.1, 50.0, 300.0, 200.0, &p), 0.0);
        let short = hidden_retry_excess(0.3, 0.1, 50.0, 100.0, 200.0, &p);
        let long = hidden_retry_excess(0.3, 0.1, 50.0, 400.0, 200.0, &p);
        assert!(0.0 < short && short < long);
    }
}
