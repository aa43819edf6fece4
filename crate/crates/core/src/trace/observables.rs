use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use super::{Direction, Micros, PacketRecord};

/// Legacy OFDM rate table used to map a PHY rate onto an MCS-like index.
const RATE_TABLE: [f64; 8] = [6.0, 9.0, 12.0, 18.0, 24.0, 36.0, 48.0, 54.0];

/// Default length of the post-busy gap counted as deferral (one DIFS).
pub const DEFAULT_DEFER_GAP_US: Micros = 34;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ObservableError {
    #[error("window length must be positive")]
    ZeroWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StaObservables {
    pub mean_mcs: f64,
    pub mean_phy_rate: f64,
    pub dl_retx_rate: f64,
    /// Mean uplink PHY rate chosen by the station; stands in for RSSI,
    /// which the log format does not carry.
    pub rssi_proxy: Option<f64>,
}

/// Airtime accounting for one window.
///
/// Every microsecond of the window is attributed to exactly one bucket, in
/// priority order: AP transmitting, AP receiving, OBSS overheard, deferring
/// (within `defer_gap` of the end of a busy period), idle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApObservables {
    pub window_start_us: Micros,
    pub window_us: Micros,
    pub airtime_tx_us: Micros,
    pub airtime_rx_us: Micros,
    pub defer_us: Micros,
    pub idle_us: Micros,
    pub obss_airtime_us: Micros,
    pub per_sta: BTreeMap<String, StaObservables>,
}

pub fn accumulate_observables(
    records: &[PacketRecord],
    window_us: Micros,
) -> Result<Vec<ApObservables>, ObservableError> {
    accumulate_observables_with(records, window_us, DEFAULT_DEFER_GAP_US)
}

const TX: usize = 0;
const RX: usize = 1;
const OBSS: usize = 2;
const GAP: usize = 3;

pub fn accumulate_observables_with(
    records: &[PacketRecord],
    window_us: Micros,
    defer_gap_us: Micros,
) -> Result<Vec<ApObservables>, ObservableError> {
    if window_us == 0 {
        return Err(ObservableError::ZeroWindow);
    }
    if records.is_empty() {
        return Ok(Vec::new());
    }
    let first_w = records.iter().map(|r| r.ts_start).min().unwrap() / window_us;
    let last_end = records.iter().map(|r| r.ts_end).max().unwrap();
    let last_w = (last_end - 1) / window_us;
    let n_w = (last_w - first_w + 1) as usize;

    let mut out: Vec<ApObservables> = (0..n_w)
        .map(|i| ApObservables {
            window_start_us: (first_w + i as u64) * window_us,
            window_us,
            airtime_tx_us: 0,
            airtime_rx_us: 0,
            defer_us: 0,
            idle_us: 0,
            obss_airtime_us: 0,
            per_sta: BTreeMap::new(),
        })
        .collect();

    // (time, category, delta)
    let mut events: Vec<(Micros, usize, i32)> = Vec::with_capacity(records.len() * 2);
    let mut busy: Vec<(Micros, Micros)> = Vec::with_capacity(records.len());
    for r in records {
        let cat = match r.direction {
            Direction::Downlink => TX,
            Direction::Uplink => RX,
            Direction::ObssOverheard => OBSS,
        };
        events.push((r.ts_start, cat, 1));
        events.push((r.ts_end, cat, -1));
        busy.push((r.ts_start, r.ts_end));
    }
    busy.sort_unstable();
    let mut merged: Vec<(Micros, Micros)> = Vec::new();
    for (s, e) in busy {
        match merged.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => merged.push((s, e)),
        }
    }
    if defer_gap_us > 0 {
        for &(_, e) in &merged {
            events.push((e, GAP, 1));
            events.push((e + defer_gap_us, GAP, -1));
        }
    }
    events.sort_unstable_by_key(|&(t, _, _)| t);

    let t0 = first_w * window_us;
    let t1 = (last_w + 1) * window_us;
    let mut counts = [0i32; 4];
    let mut cursor = t0;
    let mut i = 0;
    while cursor < t1 {
        while i < events.len() && events[i].0 <= cursor {
            counts[events[i].1] += events[i].2;
            i += 1;
        }
        let next = if i < events.len() { events[i].0.min(t1) } else { t1 };
        if next > cursor {
            attribute(&mut out, t0, window_us, cursor, next, &counts);
        }
        cursor = next;
    }

    for o in &mut out {
        let busy = o.airtime_tx_us + o.airtime_rx_us + o.obss_airtime_us + o.defer_us;
        o.idle_us = o.window_us - busy;
    }

    per_sta_stats(records, &mut out, first_w, window_us);
    Ok(out)
}

fn attribute(
    out: &mut [ApObservables],
    t0: Micros,
    w: Micros,
    mut a: Micros,
    b: Micros,
    counts: &[i32; 4],
) {
    while a < b {
        let wi = ((a - t0) / w) as usize;
        let w_end = t0 + (wi as u64 + 1) * w;
        let seg_end = b.min(w_end);
        let len = seg_end - a;
        let o = &mut out[wi];
        if counts[TX] > 0 {
            o.airtime_tx_us += len;
        } else if counts[RX] > 0 {
            o.airtime_rx_us += len;
        } else if counts[OBSS] > 0 {
            o.obss_airtime_us += len;
        } else if counts[GAP] > 0 {
            o.defer_us += len;
        }
        a = seg_end;
    }
}

fn mcs_index(rate: f64) -> f64 {
    let mut best = 0;
    for (i, r) in RATE_TABLE.iter().enumerate() {
        if (r - rate).abs() < (RATE_TABLE[best] - rate).abs() {
            best = i;
        }
    }
    best as f64
}

#[derive(Default)]
struct Acc {
    dl: u64,
    dl_retry: u64,
    rate_sum: f64,
    mcs_sum: f64,
    ul: u64,
    ul_rate_sum: f64,
}

fn per_sta_stats(records: &[PacketRecord], out: &mut [ApObservables], first_w: u64, w: Micros) {
    let mut accs: Vec<BTreeMap<&str, Acc>> = (0..out.len()).map(|_| BTreeMap::new()).collect();
    for r in records {
        let wi = (r.ts_start / w - first_w) as usize;
        match r.direction {
            Direction::Downlink => {
                let a = accs[wi].entry(r.dst_addr.as_str()).or_default();
                a.dl += 1;
                a.dl_retry += r.retry_flag as u64;
                a.rate_sum += r.phy_rate;
                a.mcs_sum += mcs_index(r.phy_rate);
            }
            Direction::Uplink => {
                let a = accs[wi].entry(r.src_addr.as_str()).or_default();
                a.ul += 1;
                a.ul_rate_sum += r.phy_rate;
            }
            Direction::ObssOverheard => {}
        }
    }
    for (o, acc) in out.iter_mut().zip(accs) {
        for (sta, a) in acc {
            let dl = a.dl.max(1) as f64;
            o.per_sta.insert(
                sta.to_string(),
                StaObservables {
                    mean_mcs: a.mcs_sum / dl,
                    mean_phy_rate: a.rate_sum / dl,
                    dl_retx_rate: a.dl_retry as f64 / dl,
                    rssi_proxy: (a.ul > 0).then(|| a.ul_rate_sum / a.ul as f64),
                },
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(s: u64, e: u64, d: Direction) -> PacketRecord {
        PacketRecord {
            ts_start: s,
            ts_end: e,
            direction: d,
            src_addr: "ap".into(),
            dst_addr: "sta".into(),
            src_net: None,
            dst_net: None,
            l4_payload_bytes: 0,
            frame_bytes: 66,
            phy_rate: 54.0,
            retry_flag: false,
            success: true,
            frames_in_txop: 1,
        }
    }

    #[test]
    fn single_record_fills_window() {
        let o = accumulate_observables(&[rec(0, 1000, Direction::Downlink)], 1000).unwrap();
        assert_eq!(o.len(), 1);
        assert_eq!(o[0].airtime_tx_us, 1000);
    }

    #[test]
    fn boundary_clipping() {
        let o = accumulate_observables(&[rec(900, 1100, Direction::Downlink)], 1000).unwrap();
        assert_eq!(o.len(), 2);
        assert_eq!(o[0].airtime_tx_us, 100);
        assert_eq!(o[1].airtime_tx_us, 100);
    }

    #[test]
    fn zero_window() {
        assert_eq!(
            accumulate_observables(&[], 0).unwrap_err(),
            ObservableError::ZeroWindow
        );
    }

    #[test]
    fn gap_after_busy_is_deferral() {
        let o = accumulate_observables_with(&[rec(0, 100, Direction::Uplink)], 1000, 34).unwrap();
        assert_eq!(o[0].airtime_rx_us, 100);
        assert_eq!(o[0].defer_us, 34);
        assert_eq!(o[0].idle_us, 1000 - 134);
    }
}
