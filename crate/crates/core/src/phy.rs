//! PHY/MAC timing constants and frame-exchange durations.
//!
//! All durations are in microseconds (as `f64`). The simulator, the
//! estimators and the analytical model share one [`PhyProfile`] so that the
//! three agree on what a frame exchange costs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Environment variable selecting the timing profile used by the CLI.
pub const PROFILE_ENV: &str = "WLAN_LENS_PROFILE";

#[derive(Debug, Error)]
#[error("unknown timing profile `{0}` (known: reference, short-difs)")]
pub struct UnknownProfile(pub String);

/// Timing constants of one PHY/MAC configuration.
///
/// The `reference` profile models a 20 MHz 802.11ac channel at 54 Mb/s per
/// spatial stream. Control-frame durations and the per-MPDU overhead were
/// calibrated so that the closed-form throughput bounds of the 4x4
/// reference system land on 216 / 192.5 / 172.5 / 187.0 Mb/s:
///
/// 1. The per-MPDU overhead (MAC header, LLC, FCS, A-MPDU delimiter and
///    TCP/IP headers) is fixed by the *difference* between the two
///    uplink-inclusive bounds, which only depends on the time to send 300
///    extra 0-payload ACK MPDUs: 66 bytes.
/// 2. The sounding and block-ack exchange durations then absorb the
///    remainder of the 4-station, 200-frame channel holding time.
///
/// See `mumodel::bounds` tests for the resulting numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhyProfile {
    pub name: String,
    pub slot_us: f64,
    pub sifs_us: f64,
    pub difs_us: f64,
    /// Preamble + PHY header of a data PPDU.
    pub data_preamble_us: f64,
    /// Legacy ACK response.
    pub ack_us: f64,
    /// Block ACK response.
    pub ba_us: f64,
    /// Block ACK request (MU acknowledgement polling).
    pub bar_us: f64,
    pub ndpa_us: f64,
    pub ndp_us: f64,
    /// Compressed beamforming report.
    pub cbr_us: f64,
    /// Beamforming report poll.
    pub brp_us: f64,
    /// Bytes added on air to every layer-4 payload (headers, FCS, delimiter).
    pub mpdu_overhead_bytes: u32,
    /// Data rate per spatial stream, Mb/s.
    pub phy_rate_mbps: f64,
    /// Minimum contention window.
    pub w0: u32,
}

impl PhyProfile {
    pub fn reference() -> Self {
        Self {
            name: "reference".into(),
            slot_us: 9.0,
            sifs_us: 16.0,
            difs_us: 34.0,
            data_preamble_us: 40.0,
            ack_us: 28.0,
            ba_us: 32.0,
            bar_us: 32.0,
            ndpa_us: 44.0,
            ndp_us: 44.0,
            cbr_us: 230.0,
            brp_us: 44.0,
            mpdu_overhead_bytes: 66,
            phy_rate_mbps: 54.0,
            w0: 16,
        }
    }

    /// Reference profile with DIFS shortened to one slot.
    pub fn short_difs() -> Self {
        Self {
            name: "short-difs".into(),
            difs_us: 9.0,
            ..Self::reference()
        }
    }

    pub fn by_name(name: &str) -> Result<Self, UnknownProfile> {
        match name {
            "reference" => Ok(Self::reference()),
            "short-difs" => Ok(Self::short_difs()),
            other => Err(UnknownProfile(other.to_string())),
        }
    }

    /// Profile named by `WLAN_LENS_PROFILE`, or the reference profile.
    pub fn from_env() -> Result<Self, UnknownProfile> {
        match std::env::var(PROFILE_ENV) {
            Ok(name) if !name.is_empty() => Self::by_name(&name),
            _ => Ok(Self::reference()),
        }
    }

    /// On-air MPDU size for a layer-4 payload.
    pub fn mpdu_bytes(&self, l4_payload: u32) -> u32 {
        l4_payload + self.mpdu_overhead_bytes
    }

    /// Serialization time of `bytes` at `rate_mbps`.
    pub fn payload_us(&self, bytes: u64, rate_mbps: f64) -> f64 {
        bytes as f64 * 8.0 / rate_mbps
    }

    /// Single-user exchange: data PPDU, SIFS, then ACK (one MPDU) or block
    /// ACK (aggregate).
    pub fn su_exchange_us(&self, total_mpdu_bytes: u64, n_frames: u32, rate_mbps: f64) -> f64 {
        let resp = if n_frames > 1 { self.ba_us } else { self.ack_us };
        self.data_preamble_us + self.payload_us(total_mpdu_bytes, rate_mbps) + self.sifs_us + resp
    }

    /// NDPA, NDP and one polled beamforming report per served station.
    pub fn sounding_us(&self, h: u32) -> f64 {
        let first = self.ndpa_us + self.sifs_us + self.ndp_us + self.sifs_us + self.cbr_us;
        let polled = self.sifs_us + self.brp_us + self.sifs_us + self.cbr_us;
        first + h.saturating_sub(1) as f64 * polled
    }

    /// First BA after SIFS, then one BAR/BA pair for every other station.
    pub fn mu_ack_phase_us(&self, h: u32) -> f64 {
        let pair = self.sifs_us + self.bar_us + self.sifs_us + self.ba_us;
        self.sifs_us + self.ba_us + h.saturating_sub(1) as f64 * pair
    }

    /// Full MU-MIMO exchange; the data phase lasts as long as the longest
    /// stream.
    pub fn mu_exchange_us(&self, h: u32, max_stream_bytes: u64, rate_mbps: f64) -> f64 {
        self.sounding_us(h)
            + self.sifs_us
            + self.data_preamble_us
            + self.payload_us(max_stream_bytes, rate_mbps)
            + self.mu_ack_phase_us(h)
    }

    /// Duration of a successful uplink exchange of `n_frames` MPDUs each
    /// carrying `l4_payload` bytes.
    pub fn uplink_us(&self, n_frames: u32, l4_payload: u32, rate_mbps: f64) -> f64 {
        let bytes = n_frames as u64 * self.mpdu_bytes(l4_payload) as u64;
        self.su_exchange_us(bytes, n_frames, rate_mbps)
    }

    /// Mean of the uniform backoff in `[0, w0-1]` slots.
    pub fn mean_backoff_us(&self) -> f64 {
        (self.w0 as f64 - 1.0) / 2.0 * self.slot_us
    }
}

impl Default for PhyProfile {
    fn default() -> Self {
        Self::reference()
    }
}
