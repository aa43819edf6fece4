use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::SimError;
use crate::mumodel::UNLIMITED;
use crate::phy::PhyProfile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackoffKind {
    /// Integer number of slots, uniform in `[0, CW-1]`.
    Uniform,
    /// Exponential with mean `CW·σ/2`.
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DelayDist {
    Deterministic,
    Exponential,
}

/// One traffic source. Station indices are zero-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrafficSpec {
    TcpDownload {
        sta: usize,
        #[serde(default)]
        w_max: Option<u32>,
        #[serde(default)]
        thinning: Option<u32>,
        #[serde(default)]
        init_window: Option<u32>,
        /// Two-way backbone delay override, µs.
        #[serde(default)]
        rtt_us: Option<f64>,
    },
    TcpUpload {
        sta: usize,
        #[serde(default)]
        w_max: Option<u32>,
        #[serde(default)]
        thinning: Option<u32>,
        #[serde(default)]
        init_window: Option<u32>,
        #[serde(default)]
        rtt_us: Option<f64>,
    },
    UdpUplink {
        sta: usize,
        rate_mbps: f64,
        pkt_bytes: u32,
        #[serde(default = "yes")]
        poisson: bool,
    },
    UdpDownlink {
        sta: usize,
        rate_mbps: f64,
        pkt_bytes: u32,
        #[serde(default = "yes")]
        poisson: bool,
    },
}

fn yes() -> bool {
    true
}

impl TrafficSpec {
    pub fn sta(&self) -> usize {
        match self {
            TrafficSpec::TcpDownload { sta, .. }
            | TrafficSpec::TcpUpload { sta, .. }
            | TrafficSpec::UdpUplink { sta, .. }
            | TrafficSpec::UdpDownlink { sta, .. } => *sta,
        }
    }

    pub fn is_tcp(&self) -> bool {
        matches!(self, TrafficSpec::TcpDownload { .. } | TrafficSpec::TcpUpload { .. })
    }
}

/// Change of the AP<->station link at a point in time; used to emulate
/// mobility without a spatial model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkChange {
    pub at_us: f64,
    pub sta: usize,
    pub loss: f64,
    #[serde(default)]
    pub rate_mbps: Option<f64>,
}

/// Offered load of an OBSS node (Poisson frame arrivals).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObssSpec {
    /// Node index in the topology.
    pub node: usize,
    pub frame_us: f64,
    /// Offered airtime fraction.
    pub load: f64,
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Named timing profile supplying preamble, control-frame and sounding
    /// durations; the fields below override its slot/IFS/rate/W0.
    pub profile: String,
    pub backoff_kind: BackoffKind,
    pub collision_free: bool,
    pub w0: u32,
    pub cw_max: u32,
    pub retry_limit: u32,
    pub sigma_us: f64,
    pub difs_us: f64,
    pub sifs_us: f64,
    pub phy_rate_per_stream: f64,
    /// Per-station PHY rate overrides (Mb/s per stream), indexed by station.
    pub sta_rates: Vec<f64>,
    pub n_ap: u32,
    pub n_sta: u32,
    #[serde(deserialize_with = "de_limit", serialize_with = "ser_limit")]
    pub b_ap: u32,
    #[serde(deserialize_with = "de_limit", serialize_with = "ser_limit")]
    pub b_sta: u32,
    pub t_f: u32,
    /// Explicit traffic; when empty, `f_s` TCP downloads per station.
    pub flows: Vec<TrafficSpec>,
    pub f_s: u32,
    /// Two-way backbone delay, µs.
    pub d_backbone_us: f64,
    pub delay_dist: DelayDist,
    pub w_max: u32,
    pub seg_bytes: u32,
    pub delack_us: f64,
    pub duration_us: f64,
    pub warmup_us: f64,
    pub seed: u64,
    pub dl_loss_p: f64,
    /// Enables window halving on loss.
    pub loss_recovery: bool,
    pub udp_queue_limit: usize,
    pub link_schedule: Vec<LinkChange>,
    pub obss: Vec<ObssSpec>,
    /// Skip building logs (faster sweeps).
    pub record_logs: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        let p = PhyProfile::reference();
        Self {
            profile: p.name.clone(),
            backoff_kind: BackoffKind::Uniform,
            collision_free: false,
            w0: p.w0,
            cw_max: 1024,
            retry_limit: 7,
            sigma_us: p.slot_us,
            difs_us: p.difs_us,
            sifs_us: p.sifs_us,
            phy_rate_per_stream: p.phy_rate_mbps,
            sta_rates: Vec::new(),
            n_ap: 1,
            n_sta: 1,
            b_ap: 1,
            b_sta: 1,
            t_f: 2,
            flows: Vec::new(),
            f_s: 1,
            d_backbone_us: 0.0,
            delay_dist: DelayDist::Deterministic,
            w_max: 200,
            seg_bytes: 1024,
            delack_us: 40_000.0,
            duration_us: 10e6,
            warmup_us: 1e6,
            seed: 1,
            dl_loss_p: 0.0,
            loss_recovery: true,
            udp_queue_limit: 2000,
            link_schedule: Vec::new(),
            obss: Vec::new(),
            record_logs: true,
        }
    }
}

impl SimConfig {
    /// Take slot, IFS, rate and W0 from `p`.
    pub fn with_profile(mut self, p: &PhyProfile) -> Self {
        self.profile = p.name.clone();
        self.w0 = p.w0;
        self.sigma_us = p.slot_us;
        self.difs_us = p.difs_us;
        self.sifs_us = p.sifs_us;
        self.phy_rate_per_stream = p.phy_rate_mbps;
        self
    }

    /// Effective timing profile.
    pub fn phy(&self) -> Result<PhyProfile, SimError> {
        let mut p = PhyProfile::by_name(&self.profile).map_err(|e| SimError::Config(e.to_string()))?;
        p.slot_us = self.sigma_us;
        p.difs_us = self.difs_us;
        p.sifs_us = self.sifs_us;
        p.phy_rate_mbps = self.phy_rate_per_stream;
        p.w0 = self.w0;
        Ok(p)
    }

    pub fn validate(&self, n_stations: usize) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        if !self.w0.is_power_of_two() {
            return bad("w0 must be a power of two");
        }
        if self.cw_max < self.w0 {
            return bad("cw_max below w0");
        }
        for (name, v) in [
            ("sigma_us", self.sigma_us),
            ("difs_us", self.difs_us),
            ("sifs_us", self.sifs_us),
            ("phy_rate_per_stream", self.phy_rate_per_stream),
            ("duration_us", self.duration_us),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be positive"));
            }
        }
        if !(self.d_backbone_us >= 0.0) || !(self.warmup_us >= 0.0) || self.warmup_us >= self.duration_us {
            return bad("bad delay or warmup");
        }
        if [self.n_ap, self.n_sta, self.b_ap, self.b_sta, self.t_f, self.w_max, self.seg_bytes].contains(&0) {
            return bad("counts must be positive");
        }
        if !(0.0..1.0).contains(&self.dl_loss_p) {
            return bad("dl_loss_p must be in [0, 1)");
        }
        for f in &self.flows {
            if f.sta() >= n_stations {
                return Err(SimError::Config(format!("flow refers to station {} of {n_stations}", f.sta())));
            }
            if let TrafficSpec::UdpUplink { rate_mbps, pkt_bytes, .. }
            | TrafficSpec::UdpDownlink { rate_mbps, pkt_bytes, .. } = f
            {
                if !(*rate_mbps > 0.0) || *pkt_bytes == 0 {
                    return bad("UDP flows need a positive rate and size");
                }
            }
        }
        for c in &self.link_schedule {
            if c.sta >= n_stations || !(0.0..=1.0).contains(&c.loss) {
                return bad("bad link schedule entry");
            }
        }
        self.phy()?;
        Ok(())
    }

    /// Traffic actually simulated.
    pub fn effective_flows(&self, n_stations: usize) -> Vec<TrafficSpec> {
        if !self.flows.is_empty() {
            return self.flows.clone();
        }
        let mut v = Vec::new();
        for sta in 0..n_stations {
            for _ in 0..self.f_s {
                v.push(TrafficSpec::TcpDownload { sta, w_max: None, thinning: None, init_window: None, rtt_us: None });
            }
        }
        v
    }
}
