//! Active speed test: several parallel, jump-started TCP flows to a nearby
//! server. Its goodput is the reference the passive estimates are judged
//! against.

use serde::{Deserialize, Serialize};

use super::{run, SimConfig, SimError, Topology, TrafficSpec};

pub const SPEED_TEST_FLOWS: usize = 10;
/// Server 1 ms away in each direction.
pub const SPEED_TEST_RTT_US: f64 = 2000.0;
pub const SPEED_TEST_WINDOW: u32 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedTestResult {
    pub download_mbps: f64,
    pub upload_mbps: f64,
}

/// Replace the target's TCP traffic by the test flows and measure their
/// goodput in each direction; other stations' traffic is left running.
pub fn run_speed_test(config: &SimConfig, topology: &Topology, target: usize) -> Result<SpeedTestResult, SimError> {
    let n = topology.n_stations();
    if target >= n {
        return Err(SimError::Config(format!("target station {target} of {n}")));
    }
    let measure = |download: bool| -> Result<f64, SimError> {
        let mut cfg = config.clone();
        cfg.flows = cfg.effective_flows(n);
        cfg.flows.retain(|f| !(f.is_tcp() && f.sta() == target));
        let first = cfg.flows.len();
        for _ in 0..SPEED_TEST_FLOWS {
            let (w_max, init_window, rtt_us) = (Some(SPEED_TEST_WINDOW), Some(SPEED_TEST_WINDOW), Some(SPEED_TEST_RTT_US));
            cfg.flows.push(if download {
                TrafficSpec::TcpDownload { sta: target, w_max, thinning: None, init_window, rtt_us }
            } else {
                TrafficSpec::TcpUpload { sta: target, w_max, thinning: None, init_window, rtt_us }
            });
        }
        cfg.record_logs = false;
        let r = run(&cfg, topology)?;
        Ok((first..cfg.flows.len()).map(|f| r.flow_mbps(f, &cfg)).sum())
    };
    Ok(SpeedTestResult { download_mbps: measure(true)?, upload_mbps: measure(false)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wlansim::ObssSpec;

    fn cfg() -> SimConfig {
        SimConfig {
            flows: vec![],
            f_s: 0,
            b_ap: 32,
            b_sta: 32,
            phy_rate_per_stream: 300.0,
            duration_us: 2e6,
            warmup_us: 3e5,
            ..SimConfig::default()
        }
    }

    #[test]
    fn idle_network_reaches_airtime_bound() {
        let c = cfg();
        let p = c.phy().unwrap();
        let r = run_speed_test(&c, &Topology::bss(1), 0).unwrap();
        // 32-frame bursts, ACKs back in one aggregate of 16 per burst
        let burst = p.su_exchange_us(32 * p.mpdu_bytes(1024) as u64, 32, 300.0);
        let acks = p.su_exchange_us(16 * p.mpdu_bytes(0) as u64, 16, 300.0);
        let backoff = 2.0 * (p.difs_us + p.mean_backoff_us());
        let bound = 32.0 * 1024.0 * 8.0 / (burst + acks + backoff);
        let got = r.download_mbps;
        assert!((got - bound).abs() / bound < 0.15, "{got} vs {bound}");
    }

    #[test]
    fn upload_matches_download_without_contenders() {
        let r = run_speed_test(&cfg(), &Topology::bss(1), 0).unwrap();
        assert!((r.upload_mbps - r.download_mbps).abs() / r.download_mbps < 0.10, "{r:?}");
    }

    #[test]
    fn hidden_interferers_slow_the_download() {
        // interferers heard by the target but not by the AP
        let mut last = f64::INFINITY;
        for hidden in 0..=3usize {
            let mut c = cfg();
            let mut t = Topology::bss(1);
            for _ in 0..hidden {
                let node = t.add_obss(&[1]);
                c.obss.push(ObssSpec { node, frame_us: 500.0, load: 0.3 });
            }
            let d = run_speed_test(&c, &t, 0).unwrap().download_mbps;
            assert!(d < last, "{hidden} hidden: {d} >= {last}");
            last = d;
        }
    }

    #[test]
    fn unknown_target() {
        assert!(run_speed_test(&cfg(), &Topology::bss(2), 2).is_err());
    }
}
