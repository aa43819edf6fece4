//! Deterministic duration of an AP channel access.

use thiserror::Error;

use crate::phy::PhyProfile;

#[derive(Debug, Error, PartialEq)]
#[error("invalid timeline arguments: h={h}, b={b}, n_ap={n_ap}")]
pub struct TimelineError {
    pub h: u32,
    pub b: u32,
    pub n_ap: u32,
}

/// A(h, b): time from the first frame of an AP transmission to the last
/// acknowledgement, serving `h` stations with at most `b` segments of
/// `seg_bytes` each.
///
/// A multi-antenna AP sounds the channel first (NDPA, NDP and one
/// beamforming report per station), sends the data streams in parallel and
/// collects one block ACK per station (BAR-polled after the first). A
/// single-antenna AP does a plain single-user exchange.
pub fn mumimo_timeline(
    h: u32,
    b: u32,
    profile: &PhyProfile,
    n_ap: u32,
    seg_bytes: u32,
) -> Result<f64, TimelineError> {
    if h == 0 || b == 0 || h > n_ap {
        return Err(TimelineError { h, b, n_ap });
    }
    let stream_bytes = b as u64 * profile.mpdu_bytes(seg_bytes) as u64;
    if n_ap == 1 {
        return Ok(profile.su_exchange_us(stream_bytes, b, profile.phy_rate_mbps));
    }
    Ok(profile.mu_exchange_us(h, stream_bytes, profile.phy_rate_mbps))
}
