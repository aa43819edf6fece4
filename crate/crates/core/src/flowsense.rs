//! TCP flow and handshake reconstruction from AP-side records.
//!
//! Only layer-2/3 information is used: flows are keyed by the
//! (station, remote) network address pair and TCP ACKs are recognised by
//! their size signature.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::trace::{Direction, Micros, PacketRecord};

pub const DEFAULT_ACK_THRESHOLD: u64 = 100;
/// Fraction of a direction's records that must be small for it to be the
/// ACK path.
pub const ACK_MAJORITY: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct FlowKey {
    pub sta_net: String,
    pub remote_net: String,
    pub sta_id: String,
}

impl FlowKey {
    /// Direction-normalized key of a record; `None` for OBSS records or
    /// records without network addresses.
    pub fn of(r: &PacketRecord) -> Option<FlowKey> {
        let (sta_id, sta_net, remote_net) = match r.direction {
            Direction::Downlink => (&r.dst_addr, r.dst_net.as_ref()?, r.src_net.as_ref()?),
            Direction::Uplink => (&r.src_addr, r.src_net.as_ref()?, r.dst_net.as_ref()?),
            Direction::ObssOverheard => return None,
        };
        Some(FlowKey {
            sta_net: sta_net.clone(),
            remote_net: remote_net.clone(),
            sta_id: sta_id.clone(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct Flow {
    pub key: FlowKey,
    pub records: Vec<PacketRecord>,
    /// Traffic seen in both directions.
    pub snoopable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PathRoles {
    pub segment: Direction,
    pub ack: Direction,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FlowError {
    #[error("flow {0} is ambiguous: cannot tell segment path from ACK path")]
    AmbiguousFlow(String),
    #[error("flow {0} carries traffic in one direction only")]
    Unidirectional(String),
    #[error("flow {0} carries its segments uplink; handshakes need downlink segments")]
    UplinkSegments(String),
    #[error("no snoopable downlink TCP flow for station {0}")]
    NoFlow(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum HsClass {
    Immediate,
    Queued,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Intermediate {
    pub t_rx_start: Micros,
    pub t_rx_end: Micros,
    pub flow: Option<FlowKey>,
    pub retry_flag: bool,
}

/// A downlink segment transmission paired with the TCP ACK that answered
/// it, plus every uplink reception from the station in between.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Handshake {
    pub flow: FlowKey,
    pub t_tx_end_seg: Micros,
    pub t_rx_start_ack: Micros,
    pub t_rx_end_ack: Micros,
    pub intermediates: Vec<Intermediate>,
    pub ack_retry_flag: bool,
    pub hs_class: HsClass,
}

impl Handshake {
    /// When the ACK reached the head of the station queue, as far as the
    /// AP can tell.
    pub fn t_head(&self) -> Micros {
        self.intermediates.last().map_or(self.t_tx_end_seg, |i| i.t_rx_end)
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct HandshakeSet {
    pub handshakes: Vec<Handshake>,
    pub orphans: usize,
    pub dropped_overlaps: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct FlowConfig {
    pub ack_threshold: u64,
    pub majority: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self { ack_threshold: DEFAULT_ACK_THRESHOLD, majority: ACK_MAJORITY }
    }
}

/// Partition records into direction-normalized flows, in key order.
pub fn infer_flows(records: &[PacketRecord]) -> Vec<Flow> {
    let mut map: BTreeMap<FlowKey, (Vec<PacketRecord>, bool, bool)> = BTreeMap::new();
    for r in records {
        let Some(key) = FlowKey::of(r) else { continue };
        let e = map.entry(key).or_default();
        match r.direction {
            Direction::Downlink => e.1 = true,
            Direction::Uplink => e.2 = true,
            Direction::ObssOverheard => {}
        }
        e.0.push(r.clone());
    }
    map.into_iter()
        .map(|(key, (records, dl, ul))| Flow { key, records, snoopable: dl && ul })
        .collect()
}

fn small_fraction(flow: &Flow, dir: Direction, thr: u64) -> Option<f64> {
    let recs: Vec<_> = flow.records.iter().filter(|r| r.direction == dir).collect();
    if recs.is_empty() {
        return None;
    }
    let small = recs.iter().filter(|r| r.payload_per_frame() <= thr as f64).count();
    Some(small as f64 / recs.len() as f64)
}

pub fn classify_reverse_path(flow: &Flow, cfg: &FlowConfig) -> Result<PathRoles, FlowError> {
    let name = || format!("{}<->{}", flow.key.sta_net, flow.key.remote_net);
    let dl = small_fraction(flow, Direction::Downlink, cfg.ack_threshold);
    let ul = small_fraction(flow, Direction::Uplink, cfg.ack_threshold);
    let (Some(dl), Some(ul)) = (dl, ul) else {
        return Err(FlowError::Unidirectional(name()));
    };
    match (dl >= cfg.majority, ul >= cfg.majority) {
        (false, true) => Ok(PathRoles { segment: Direction::Downlink, ack: Direction::Uplink }),
        (true, false) => Ok(PathRoles { segment: Direction::Uplink, ack: Direction::Downlink }),
        _ => Err(FlowError::AmbiguousFlow(name())),
    }
}

/// Pair each uplink ACK of `flow` with the latest preceding downlink segment
/// burst. `sta_uplink` are all uplink records of the station, sorted by
/// `ts_start`; they supply the intermediates.
pub fn pair_handshakes(
    flow: &Flow,
    roles: PathRoles,
    sta_uplink: &[PacketRecord],
    cfg: &FlowConfig,
) -> Result<HandshakeSet, FlowError> {
    if roles.segment != Direction::Downlink {
        return Err(FlowError::UplinkSegments(flow.key.sta_net.clone()));
    }
    let thr = cfg.ack_threshold as f64;
    let mut out = HandshakeSet::default();
    let mut last_seg_end: Option<Micros> = None;
    let mut prev_ack_end: Option<Micros> = None;

    for r in &flow.records {
        if !r.success {
            continue;
        }
        match r.direction {
            Direction::Downlink if r.payload_per_frame() > thr => {
                last_seg_end = Some(last_seg_end.map_or(r.ts_end, |e| e.max(r.ts_end)));
            }
            Direction::Uplink if r.payload_per_frame() <= thr => {
                let Some(seg) = last_seg_end.filter(|&s| s < r.ts_start) else {
                    out.orphans += 1;
                    continue;
                };
                if prev_ack_end.is_some_and(|pe| seg < pe) {
                    out.dropped_overlaps += 1;
                    continue;
                }
                let intermediates = intermediates_between(sta_uplink, seg, r.ts_start);
                out.handshakes.push(Handshake {
                    flow: flow.key.clone(),
                    t_tx_end_seg: seg,
                    t_rx_start_ack: r.ts_start,
                    t_rx_end_ack: r.ts_end,
                    hs_class: if intermediates.is_empty() { HsClass::Immediate } else { HsClass::Queued },
                    intermediates,
                    ack_retry_flag: r.retry_flag,
                });
                prev_ack_end = Some(r.ts_end);
            }
            _ => {}
        }
    }
    Ok(out)
}

/// Uplink receptions strictly between `after` and `before`. A burst that
/// carries several flows is logged once per flow with the same interval;
/// it counts once.
fn intermediates_between(ul: &[PacketRecord], after: Micros, before: Micros) -> Vec<Intermediate> {
    let start = ul.partition_point(|r| r.ts_start <= after);
    let mut v: Vec<Intermediate> = ul[start..]
        .iter()
        .take_while(|r| r.ts_start < before)
        .filter(|r| r.success && r.ts_end < before)
        .map(|r| Intermediate {
            t_rx_start: r.ts_start,
            t_rx_end: r.ts_end,
            flow: FlowKey::of(r),
            retry_flag: r.retry_flag,
        })
        .collect();
    v.dedup_by(|b, a| a.t_rx_start == b.t_rx_start && a.t_rx_end == b.t_rx_end);
    v
}

/// All handshakes of one station across its snoopable download flows.
#[derive(Debug, Clone, Default, Serialize)]
pub struct StaHandshakes {
    pub sta_id: String,
    pub handshakes: Vec<Handshake>,
    /// Successful uplink receptions from the station.
    #[serde(skip)]
    pub uplink: Vec<PacketRecord>,
    pub flows_used: usize,
    pub ambiguous_flows: usize,
    pub orphans: usize,
    pub dropped_overlaps: usize,
}

pub fn sta_handshakes(
    records: &[PacketRecord],
    sta_id: &str,
    cfg: &FlowConfig,
) -> Result<StaHandshakes, FlowError> {
    let uplink: Vec<PacketRecord> = records
        .iter()
        .filter(|r| r.direction == Direction::Uplink && r.src_addr == sta_id && r.success)
        .cloned()
        .collect();
    let mine: Vec<PacketRecord> = records
        .iter()
        .filter(|r| match r.direction {
            Direction::Downlink => r.dst_addr == sta_id,
            Direction::Uplink => r.src_addr == sta_id,
            Direction::ObssOverheard => false,
        })
        .cloned()
        .collect();

    let mut out = StaHandshakes { sta_id: sta_id.to_string(), uplink, ..Default::default() };
    for flow in infer_flows(&mine).into_iter().filter(|f| f.snoopable) {
        match classify_reverse_path(&flow, cfg) {
            Ok(roles) if roles.segment == Direction::Downlink => {
                let set = pair_handshakes(&flow, roles, &out.uplink, cfg)?;
                out.flows_used += 1;
                out.orphans += set.orphans;
                out.dropped_overlaps += set.dropped_overlaps;
                out.handshakes.extend(set.handshakes);
            }
            Ok(_) => {}
            Err(FlowError::AmbiguousFlow(_)) => out.ambiguous_flows += 1,
            Err(e) => return Err(e),
        }
    }
    if out.flows_used == 0 {
        return Err(FlowError::NoFlow(sta_id.to_string()));
    }
    out.handshakes.sort_by_key(|h| (h.t_rx_start_ack, h.t_tx_end_seg));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(s: u64, e: u64, dir: Direction, payload: u64, net_remote: &str) -> PacketRecord {
        let (src, dst, sn, dn) = match dir {
            Direction::Downlink => ("ap", "sta1", net_remote, "10.0.0.2"),
            _ => ("sta1", "ap", "10.0.0.2", net_remote),
        };
        PacketRecord {
            ts_start: s,
            ts_end: e,
            direction: dir,
            src_addr: src.into(),
            dst_addr: dst.into(),
            src_net: Some(sn.into()),
            dst_net: Some(dn.into()),
            l4_payload_bytes: payload,
            frame_bytes: payload + 66,
            phy_rate: 54.0,
            retry_flag: false,
            success: true,
            frames_in_txop: 1,
        }
    }

    #[test]
    fn swap_symmetry() {
        let recs = vec![
            rec(0, 10, Direction::Downlink, 1024, "1.1.1.1"),
            rec(20, 30, Direction::Uplink, 0, "1.1.1.1"),
        ];
        let flows = infer_flows(&recs);
        assert_eq!(flows.len(), 1);
        assert!(flows[0].snoopable);
        assert_eq!(flows[0].records.len(), 2);
    }

    #[test]
    fn downlink_only_is_not_snoopable() {
        let recs = vec![
            rec(0, 10, Direction::Downlink, 1400, "1.1.1.1"),
            rec(20, 30, Direction::Downlink, 1400, "1.1.1.1"),
        ];
        let flows = infer_flows(&recs);
        assert_eq!(flows.len(), 1);
        assert!(!flows[0].snoopable);
    }

    #[test]
    fn ack_path_by_size() {
        let recs = vec![
            rec(0, 10, Direction::Downlink, 1024, "r"),
            rec(20, 30, Direction::Uplink, 0, "r"),
        ];
        let flow = &infer_flows(&recs)[0];
        let roles = classify_reverse_path(flow, &FlowConfig::default()).unwrap();
        assert_eq!(roles.ack, Direction::Uplink);
        assert_eq!(roles.segment, Direction::Downlink);
    }

    #[test]
    fn bulk_both_ways_is_ambiguous() {
        let recs = vec![
            rec(0, 10, Direction::Downlink, 1024, "r"),
            rec(20, 30, Direction::Uplink, 1024, "r"),
        ];
        let flow = &infer_flows(&recs)[0];
        assert!(matches!(
            classify_reverse_path(flow, &FlowConfig::default()),
            Err(FlowError::AmbiguousFlow(_))
        ));
    }

    #[test]
    fn stray_small_downlink_frames_do_not_flip_roles() {
        let mut recs = Vec::new();
        for i in 0..20u64 {
            let p = if i % 10 == 3 { 0 } else { 1448 };
            recs.push(rec(i * 100, i * 100 + 10, Direction::Downlink, p, "r"));
            recs.push(rec(i * 100 + 50, i * 100 + 60, Direction::Uplink, 0, "r"));
        }
        let flow = &infer_flows(&recs)[0];
        let roles = classify_reverse_path(flow, &FlowConfig::default()).unwrap();
        assert_eq!(roles.segment, Direction::Downlink);
    }

    fn pair(recs: &[PacketRecord]) -> HandshakeSet {
        let flows = infer_flows(recs);
        let flow = flows.iter().find(|f| f.key.remote_net == "r").unwrap();
        let roles = classify_reverse_path(flow, &FlowConfig::default()).unwrap();
        let ul: Vec<_> = recs.iter().filter(|r| r.direction == Direction::Uplink).cloned().collect();
        pair_handshakes(flow, roles, &ul, &FlowConfig::default()).unwrap()
    }

    #[test]
    fn immediate_handshake() {
        let recs = vec![
            rec(50, 100, Direction::Downlink, 1024, "r"),
            rec(400, 450, Direction::Uplink, 0, "r"),
        ];
        let set = pair(&recs);
        assert_eq!(set.handshakes.len(), 1);
        let h = &set.handshakes[0];
        assert_eq!(h.hs_class, HsClass::Immediate);
        assert_eq!((h.t_tx_end_seg, h.t_rx_start_ack, h.t_rx_end_ack), (100, 400, 450));
    }

    #[test]
    fn queued_handshake_tags_intermediate_flow() {
        let recs = vec![
            rec(50, 100, Direction::Downlink, 1024, "r"),
            rec(200, 300, Direction::Uplink, 1200, "other"),
            rec(500, 520, Direction::Uplink, 0, "r"),
        ];
        let set = pair(&recs);
        let h = &set.handshakes[0];
        assert_eq!(h.hs_class, HsClass::Queued);
        assert_eq!(h.intermediates.len(), 1);
        assert_eq!(h.intermediates[0].flow.as_ref().unwrap().remote_net, "other");
        assert_eq!(h.t_head(), 300);
    }

    #[test]
    fn second_ack_for_same_burst_is_dropped() {
        let recs = vec![
            rec(50, 100, Direction::Downlink, 1024, "r"),
            rec(400, 450, Direction::Uplink, 0, "r"),
            rec(600, 650, Direction::Uplink, 0, "r"),
            rec(700, 800, Direction::Downlink, 1024, "r"),
            rec(900, 950, Direction::Uplink, 0, "r"),
        ];
        let set = pair(&recs);
        assert_eq!(set.handshakes.len(), 2);
        assert_eq!(set.dropped_overlaps, 1);
    }

    #[test]
    fn ack_before_any_segment_is_orphan() {
        let recs = vec![
            rec(0, 10, Direction::Uplink, 0, "r"),
            rec(50, 100, Direction::Downlink, 1024, "r"),
            rec(400, 450, Direction::Uplink, 0, "r"),
        ];
        let set = pair(&recs);
        assert_eq!(set.orphans, 1);
        assert_eq!(set.handshakes.len(), 1);
    }
}
