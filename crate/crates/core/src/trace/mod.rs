//! Packet-event data model and the CSV log format.

mod io;
mod observables;

pub use io::{
    parse_log, read_ap_access, read_ap_log, read_ground_truth, write_ap_access, write_ap_log,
    write_ground_truth, LogKind, MalformedRow, Parsed, ParsedLog, TraceError, AP_ACCESS_HEADER,
    AP_LOG_HEADER, GROUND_TRUTH_HEADER,
};
pub use observables::{
    accumulate_observables, accumulate_observables_with, ApObservables, ObservableError,
    StaObservables,
};

use serde::{Deserialize, Serialize};

/// Integer microseconds.
pub type Micros = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    Downlink,
    Uplink,
    ObssOverheard,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Downlink => "DL",
            Direction::Uplink => "UL",
            Direction::ObssOverheard => "OBSS",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "DL" => Some(Direction::Downlink),
            "UL" => Some(Direction::Uplink),
            "OBSS" => Some(Direction::ObssOverheard),
            _ => None,
        }
    }
}

/// One on-air transmission event as seen by the AP.
///
/// Aggregates are a single record; `frames_in_txop` holds the number of
/// MPDUs and `l4_payload_bytes` / `frame_bytes` are totals over the burst.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketRecord {
    pub ts_start: Micros,
    pub ts_end: Micros,
    pub direction: Direction,
    pub src_addr: String,
    pub dst_addr: String,
    pub src_net: Option<String>,
    pub dst_net: Option<String>,
    pub l4_payload_bytes: u64,
    pub frame_bytes: u64,
    pub phy_rate: f64,
    pub retry_flag: bool,
    pub success: bool,
    pub frames_in_txop: u32,
}

impl PacketRecord {
    pub fn duration(&self) -> Micros {
        self.ts_end - self.ts_start
    }

    /// Mean layer-4 payload per MPDU.
    pub fn payload_per_frame(&self) -> f64 {
        self.l4_payload_bytes as f64 / self.frames_in_txop.max(1) as f64
    }

    pub(crate) fn check(&self) -> Result<(), String> {
        if self.ts_end <= self.ts_start {
            return Err(format!("ts_end {} <= ts_start {}", self.ts_end, self.ts_start));
        }
        if self.l4_payload_bytes > self.frame_bytes {
            return Err("l4_payload_bytes exceeds frame_bytes".into());
        }
        if self.frame_bytes == 0 {
            return Err("frame_bytes must be positive".into());
        }
        if !(self.phy_rate.is_finite() && self.phy_rate > 0.0) {
            return Err("phy_rate must be positive".into());
        }
        if self.frames_in_txop == 0 {
            return Err("frames_in_txop must be positive".into());
        }
        Ok(())
    }
}

/// Per-packet truth emitted by the simulator for station uplink traffic.
/// Never visible to the estimators.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub sta: String,
    pub flow: u32,
    pub t_enq: Micros,
    pub t_head: Micros,
    pub ts_start: Micros,
    pub ts_end: Micros,
    pub n_retx: u32,
    pub defer_us: Micros,
}

impl GroundTruthRecord {
    pub(crate) fn check(&self) -> Result<(), String> {
        if !(self.t_enq <= self.t_head && self.t_head <= self.ts_start && self.ts_start <= self.ts_end)
        {
            return Err("expected t_enq <= t_head <= ts_start <= ts_end".into());
        }
        Ok(())
    }
}

/// AP-internal channel access event: when the AP started contending for the
/// transmission that eventually went to `dst_addr` at `ts_start`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApAccessRecord {
    pub ts_contend: Micros,
    pub ts_start: Micros,
    pub dst_addr: String,
}

impl ApAccessRecord {
    pub(crate) fn check(&self) -> Result<(), String> {
        if self.ts_contend > self.ts_start {
            return Err("ts_contend after ts_start".into());
        }
        Ok(())
    }
}

/// Round sub-microsecond nanoseconds half-up.
pub fn ns_to_us(ns: u64) -> Micros {
    (ns + 500) / 1000
}
