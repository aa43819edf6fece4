//! Seeded discrete-event simulator of one BSS with optional hidden
//! stations and OBSS interferers. Produces the AP log, the per-packet
//! ground truth, and the AP access log.

pub mod config;
mod engine;
pub mod speedtest;
pub mod timeline;
pub mod topology;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{BackoffKind, DelayDist, LinkChange, ObssSpec, SimConfig, TrafficSpec};
pub use speedtest::{run_speed_test, SpeedTestResult, SPEED_TEST_FLOWS};
pub use timeline::{mumimo_timeline, TimelineError};
pub use topology::{Role, Topology};

use crate::trace::{ApAccessRecord, GroundTruthRecord, PacketRecord};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeStats {
    pub attempts: u64,
    pub successes: u64,
    pub failures: u64,
}

/// One AP channel access.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggSample {
    pub t_us: u64,
    pub stations: u32,
    pub frames: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    #[serde(skip)]
    pub ap_log: Vec<PacketRecord>,
    #[serde(skip)]
    pub ground_truth: Vec<GroundTruthRecord>,
    #[serde(skip)]
    pub ap_access: Vec<ApAccessRecord>,
    /// Bytes delivered to the receiver after warm-up, per flow.
    pub flow_bytes: Vec<u64>,
    pub throughput_mbps: f64,
    #[serde(skip)]
    pub aggregation: Vec<AggSample>,
    pub node_stats: Vec<NodeStats>,
    pub max_outstanding: Vec<u32>,
    pub flows: Vec<TrafficSpec>,
}

impl SimResult {
    /// Goodput of one flow over the measurement span, Mb/s.
    pub fn flow_mbps(&self, flow: usize, cfg: &SimConfig) -> f64 {
        self.flow_bytes[flow] as f64 * 8.0 / (cfg.duration_us - cfg.warmup_us)
    }
}

pub fn run(config: &SimConfig, topology: &Topology) -> Result<SimResult, SimError> {
    Ok(engine::Sim::new(config, topology)?.run())
}

pub fn ap_addr() -> String {
    "02:00:00:00:00:00".into()
}

/// Hardware address of station `s` (zero-based).
pub fn sta_addr(s: usize) -> String {
    format!("02:00:00:00:{:02x}:{:02x}", 1 + (s + 1) / 256, (s + 1) % 256)
}

pub(crate) fn node_addr(node: usize, n_sta: usize) -> String {
    if node == 0 {
        ap_addr()
    } else if node <= n_sta {
        sta_addr(node - 1)
    } else {
        format!("02:00:00:00:ff:{:02x}", (node - n_sta) % 256)
    }
}

pub fn sta_net(s: usize) -> String {
    format!("10.0.{}.{}", (s + 2) / 256, (s + 2) % 256)
}

/// Remote endpoint address of flow `f`.
pub fn flow_net(f: usize) -> String {
    format!("198.18.{}.{}", (f + 1) / 256, (f + 1) % 256)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::mean;

    fn saturated_udp(n: usize) -> SimConfig {
        SimConfig {
            flows: (0..n)
                .map(|sta| TrafficSpec::UdpUplink { sta, rate_mbps: 200.0, pkt_bytes: 1000, poisson: false })
                .collect(),
            duration_us: 3e6,
            warmup_us: 0.0,
            ..SimConfig::default()
        }
    }

    fn access(r: &SimResult) -> f64 {
        let v: Vec<f64> = r.ground_truth.iter().skip(100).map(|g| (g.ts_start - g.t_head) as f64).collect();
        mean(&v).unwrap()
    }

    #[test]
    fn lone_station_access_delay() {
        let r = run(&saturated_udp(1), &Topology::bss(1)).unwrap();
        let want = 34.0 + 9.0 * 7.5;
        let got = access(&r);
        assert!((got - want).abs() / want < 0.02, "{got} vs {want}");
        assert!(r.ground_truth.iter().all(|g| g.n_retx == 0 && g.defer_us == 0));
    }

    #[test]
    fn exponential_backoff_mean() {
        let cfg = SimConfig { backoff_kind: BackoffKind::Exponential, ..saturated_udp(1) };
        let r = run(&cfg, &Topology::bss(1)).unwrap();
        let want = 34.0 + 16.0 * 9.0 / 2.0;
        let got = access(&r);
        assert!((got - want).abs() / want < 0.01, "{got} vs {want}");
    }

    #[test]
    fn deterministic_for_a_seed() {
        let mut cfg = saturated_udp(3);
        cfg.duration_us = 5e5;
        let t = Topology::bss(3).hide(0, 1);
        assert_eq!(run(&cfg, &t).unwrap(), run(&cfg, &t).unwrap());
        let a = run(&cfg, &t).unwrap().ap_log;
        cfg.seed = 2;
        assert_ne!(a, run(&cfg, &t).unwrap().ap_log);
    }

    fn failure_rate(r: &SimResult) -> f64 {
        let s = &r.node_stats[1..3];
        s.iter().map(|n| n.failures).sum::<u64>() as f64 / s.iter().map(|n| n.attempts).sum::<u64>() as f64
    }

    #[test]
    fn hidden_stations_collide_more() {
        let cfg = saturated_udp(2);
        let sensing = failure_rate(&run(&cfg, &Topology::bss(2)).unwrap());
        let hidden = failure_rate(&run(&cfg, &Topology::bss(2).hide(0, 1)).unwrap());
        assert!(hidden > 2.5 * sensing, "{hidden} vs {sensing}");
    }

    #[test]
    fn contention_is_fair() {
        let mut cfg = saturated_udp(4);
        cfg.duration_us = 20e6;
        let r = run(&cfg, &Topology::bss(4)).unwrap();
        let a: Vec<f64> = r.node_stats[1..].iter().map(|n| n.attempts as f64).collect();
        let m = mean(&a).unwrap();
        assert!(a.iter().all(|x| (x - m).abs() / m < 0.02), "{a:?}");
    }

    #[test]
    fn windows_never_exceed_limit() {
        let cfg = SimConfig { n_ap: 4, b_ap: 8, b_sta: 8, duration_us: 2e6, ..SimConfig::default() };
        let r = run(&cfg, &Topology::bss(4)).unwrap();
        assert!(r.max_outstanding.iter().all(|&w| w == 200));
        assert!(r.throughput_mbps > 10.0);
    }

    #[test]
    fn sensing_stations_never_overlap_successfully() {
        let mut cfg = saturated_udp(3);
        cfg.duration_us = 1e6;
        let r = run(&cfg, &Topology::bss(3)).unwrap();
        let ok: Vec<_> = r.ap_log.iter().filter(|p| p.success).collect();
        for w in ok.windows(2) {
            assert!(w[1].ts_start >= w[0].ts_end, "{:?} {:?}", w[0], w[1]);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = SimConfig { w0: 12, ..SimConfig::default() };
        assert!(matches!(run(&cfg, &Topology::bss(1)), Err(SimError::Config(_))));
        let cfg = SimConfig { flows: vec![TrafficSpec::UdpUplink { sta: 3, rate_mbps: 1.0, pkt_bytes: 100, poisson: true }], ..SimConfig::default() };
        assert!(run(&cfg, &Topology::bss(1)).is_err());
    }
}
