//! Analytical throughput model of a MU-MIMO WLAN carrying closed-loop TCP
//! downloads: saturation rates, regime classification, renewal formulas for
//! each regime, the joint backlog distribution, a Markov chain for nonzero
//! backbone delay, and throughput bounds.
//!
//! Internally everything is counted in packets and microseconds; results
//! are converted to Mb/s with the segment size.

mod bounds;
mod joint;
mod markov;
mod throughput;

pub use bounds::{throughput_bounds, Bounds};
pub use joint::{joint_distribution_phb, p_hat_exact, transmissions_pmf, JointTable};
pub use markov::{solve_chain, ChainSolution};
pub use throughput::{
    downlink_formula, throughput_downlink, throughput_full_aggregation, throughput_uplink,
    small_delay_diversity, uplink_formula, uplink_with_table, DelayMode,
};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::phy::PhyProfile;
use crate::wlansim::timeline::mumimo_timeline;

/// Aggregation limit meaning "no limit".
pub const UNLIMITED: u32 = u32::MAX;

/// Default ratio standing in for "much greater than".
pub const DEFAULT_MARGIN: f64 = 5.0;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("parameters are in the {actual:?} regime, formula needs {wanted}")]
    WrongRegime { actual: Regime, wanted: &'static str },
    #[error("formula only holds for zero backbone delay")]
    NonzeroDelay,
    #[error("Markov chain is singular")]
    SingularChain,
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
}

fn de_limit<'de, D: Deserializer<'de>>(d: D) -> Result<u32, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Lim {
        N(u64),
        S(String),
    }
    match Lim::deserialize(d)? {
        Lim::N(n) => Ok(n.min(UNLIMITED as u64) as u32),
        Lim::S(s) if s == "inf" || s == "unlimited" => Ok(UNLIMITED),
        Lim::S(s) => Err(serde::de::Error::custom(format!("bad aggregation limit `{s}`"))),
    }
}

fn ser_limit<S: Serializer>(v: &u32, s: S) -> Result<S::Ok, S::Error> {
    if *v == UNLIMITED {
        s.serialize_str("inf")
    } else {
        s.serialize_u32(*v)
    }
}

/// System parameters; aggregation limits accept `"inf"` in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub k: u32,
    pub f_s: u32,
    pub w_max: u32,
    pub t_f: u32,
    /// Two-way backbone delay, µs.
    pub d_us: f64,
    pub n_ap: u32,
    pub n_sta: u32,
    #[serde(deserialize_with = "de_limit", serialize_with = "ser_limit")]
    pub b_ap: u32,
    #[serde(deserialize_with = "de_limit", serialize_with = "ser_limit")]
    pub b_sta: u32,
}

impl SystemParams {
    /// Four single-antenna stations, one flow each, W_max 200, delayed ACKs
    /// and a four-antenna AP.
    pub fn reference() -> Self {
        Self { k: 4, f_s: 1, w_max: 200, t_f: 2, d_us: 0.0, n_ap: 4, n_sta: 1, b_ap: 64, b_sta: 64 }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let ints = [self.k, self.f_s, self.w_max, self.t_f, self.n_ap, self.n_sta, self.b_ap, self.b_sta];
        if ints.contains(&0) {
            return Err(ModelError::InvalidParam("integer parameters must be positive".into()));
        }
        if !(self.d_us >= 0.0) {
            return Err(ModelError::InvalidParam("d_us must be >= 0".into()));
        }
        Ok(())
    }

    /// Packets in flight per station when every window is full.
    pub fn fw(&self) -> f64 {
        self.f_s as f64 * self.w_max as f64
    }
}

/// Timing inputs to the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineParams {
    pub profile: PhyProfile,
    pub sigma_us: f64,
    pub w0: u32,
    /// Backoff rate, 1/µs.
    pub mu: f64,
    pub seg_bytes: u32,
    pub n_ap: u32,
    pub n_sta: u32,
}

impl TimelineParams {
    pub fn new(profile: PhyProfile, p: &SystemParams, seg_bytes: u32) -> Self {
        let sigma_us = profile.slot_us;
        let w0 = profile.w0;
        Self {
            mu: 2.0 / (w0 as f64 * sigma_us),
            profile,
            sigma_us,
            w0,
            seg_bytes,
            n_ap: p.n_ap,
            n_sta: p.n_sta,
        }
    }

    pub fn reference(p: &SystemParams) -> Self {
        Self::new(PhyProfile::reference(), p, 1024)
    }

    pub fn seg_bits(&self) -> f64 {
        self.seg_bytes as f64 * 8.0
    }

    /// Channel holding time of an AP access serving `h` stations with at
    /// most `b` frames each, including the DIFS that precedes it.
    pub fn a(&self, h: u32, b: f64) -> f64 {
        let b = b.max(1.0).round() as u32;
        self.profile.difs_us
            + mumimo_timeline(h.min(self.n_ap).max(1), b, &self.profile, self.n_ap, self.seg_bytes)
                .expect("valid timeline arguments")
    }

    /// Station transmission carrying `n_acks` ACK frames (fractional
    /// counts are allowed so that the formulas stay smooth).
    pub fn t_up(&self, n_acks: f64) -> f64 {
        let p = &self.profile;
        let streams = self.n_ap.min(self.n_sta).max(1) as f64;
        let bytes = n_acks.max(1.0) * p.mpdu_bytes(0) as f64;
        let resp = if n_acks > 1.0 { p.ba_us } else { p.ack_us };
        p.difs_us + p.data_preamble_us + bytes * 8.0 / (p.phy_rate_mbps * streams) + p.sifs_us + resp
    }

    /// Channel holding time of a saturated AP access.
    pub fn t_down(&self, p: &SystemParams) -> f64 {
        let h = p.k.min(self.n_ap);
        self.a(h, (p.b_ap as f64).min(p.fw()))
    }

    pub fn to_mbps(&self, packets_per_us: f64) -> f64 {
        packets_per_us * self.seg_bits()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    DownlinkBottleneck,
    UplinkBottleneck,
    FullAggregation,
    Indeterminate,
}

/// Packets the AP pushes per access, packets all stations push per round,
/// and packets one station pushes per access (in segment units, so ACK
/// frames count `t_f` each).
pub fn saturation_rates(p: &SystemParams) -> (f64, f64, f64) {
    let s_down = p.b_ap as f64 * p.n_ap.min(p.k * p.n_sta) as f64;
    let s_sta = p.b_sta as f64 * p.n_ap.min(p.n_sta) as f64 * p.t_f as f64;
    (s_down, p.k as f64 * s_sta, s_sta)
}

pub fn classify_regime(p: &SystemParams, margin: f64) -> Regime {
    let (s_down, s_up, s_sta) = saturation_rates(p);
    let kfw = p.k as f64 * p.fw();
    if s_down <= s_up && kfw >= margin * s_down {
        Regime::DownlinkBottleneck
    } else if s_down > s_up && p.fw() >= margin * s_sta {
        Regime::UplinkBottleneck
    } else if s_down >= kfw && s_sta >= p.fw() {
        Regime::FullAggregation
    } else {
        Regime::Indeterminate
    }
}

/// Uniform user diversity of the uplink-bottleneck regime.
pub fn marginal_user_diversity(k: u32) -> Vec<f64> {
    vec![1.0 / k as f64; k as usize]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeReport {
    pub s_down: f64,
    pub s_up: f64,
    pub s_sta: f64,
    /// k·F_s·W_max / s_down
    pub downlink_ratio: f64,
    /// F_s·W_max / s_sta
    pub uplink_ratio: f64,
    pub regime: Regime,
    pub lambda_mbps: Option<f64>,
    pub bounds: Bounds,
}

/// Classify and evaluate the formula matching the regime.
pub fn regime_report(p: &SystemParams, t: &TimelineParams, margin: f64) -> Result<RegimeReport, ModelError> {
    p.validate()?;
    let (s_down, s_up, s_sta) = saturation_rates(p);
    let regime = classify_regime(p, margin);
    let lambda_mbps = match regime {
        Regime::DownlinkBottleneck => Some(downlink_formula(p, t)),
        Regime::UplinkBottleneck if p.d_us == 0.0 => Some(uplink_formula(p, t, &joint_distribution_phb(p.k), margin)),
        Regime::FullAggregation => {
            let mode = if p.d_us == 0.0 { DelayMode::Zero } else { DelayMode::General };
            throughput_full_aggregation(p, t, mode, margin).ok()
        }
        _ => None,
    };
    Ok(RegimeReport {
        s_down,
        s_up,
        s_sta,
        downlink_ratio: p.k as f64 * p.fw() / s_down,
        uplink_ratio: p.fw() / s_sta,
        regime,
        lambda_mbps,
        bounds: throughput_bounds(p, t),
    })
}
