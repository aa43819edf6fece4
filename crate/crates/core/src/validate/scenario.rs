//! Randomized simulator scenarios for the estimator suites.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::wlansim::{LinkChange, SimConfig, Topology, TrafficSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub config: SimConfig,
    pub topology: Topology,
    /// Zero-based index of the station under test.
    pub target: usize,
    /// Thinning ratio of the snooped flow.
    pub thinning: u32,
}

pub(crate) fn scenario_rng(seed: u64, index: usize, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (index as u64) << 16 ^ salt)
}

/// Hide each station pair with probability `h`.
fn hide_pairs(mut t: Topology, k: usize, h: f64, rng: &mut impl Rng) -> Topology {
    for a in 0..k {
        for b in a + 1..k {
            if rng.random::<f64>() < h {
                t = t.hide(a, b);
            }
        }
    }
    t
}

fn background(sta: usize, rng: &mut impl Rng) -> TrafficSpec {
    let rate_mbps = rng.random_range(0.5..4.0);
    if rng.random_bool(0.5) {
        TrafficSpec::UdpUplink { sta, rate_mbps, pkt_bytes: 1000, poisson: true }
    } else {
        TrafficSpec::UdpDownlink { sta, rate_mbps, pkt_bytes: 1000, poisson: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VstKnobs {
    /// Fixed hidden-pair probability; drawn when unset.
    pub hidden: Option<f64>,
    pub thinning: Option<u32>,
    pub mobility: bool,
}

/// One VST scenario: a station with a TCP download is snooped while the
/// others carry light UDP in both directions. No frame aggregation.
pub fn vst_scenario(seed: u64, index: usize, knobs: VstKnobs) -> Scenario {
    let mut rng = scenario_rng(seed, index, 0x5157);
    let k = rng.random_range(1..=8usize);
    let h = knobs.hidden.unwrap_or_else(|| rng.random::<f64>());
    let thinning = knobs.thinning.unwrap_or_else(|| rng.random_range(1..=2));
    let topology = hide_pairs(Topology::bss(k), k, h, &mut rng);
    let sta_rates: Vec<f64> = (0..k).map(|_| *[54.0, 108.0, 150.0, 300.0].choose(&mut rng).unwrap()).collect();

    let mut flows = vec![TrafficSpec::TcpDownload {
        sta: 0,
        w_max: Some(128),
        thinning: Some(thinning),
        init_window: None,
        rtt_us: Some(10_000.0),
    }];
    flows.extend((1..k).map(|s| background(s, &mut rng)));

    let duration_us = 3e6;
    let mut link_schedule = Vec::new();
    if knobs.mobility {
        // walk away and back: rate and loss change every half second
        let steps = [(300.0, 0.0), (150.0, 0.02), (54.0, 0.08), (108.0, 0.04), (300.0, 0.0), (150.0, 0.02)];
        for (i, (rate, loss)) in steps.iter().enumerate() {
            link_schedule.push(LinkChange { at_us: i as f64 * 5e5, sta: 0, loss: *loss, rate_mbps: Some(*rate) });
        }
    }
    let config = SimConfig {
        t_f: thinning,
        sta_rates,
        flows,
        duration_us,
        warmup_us: 5e5,
        seed: seed ^ (index as u64) << 8,
        link_schedule,
        ..SimConfig::default()
    };
    Scenario { id: format!("vst-{seed}-{index}"), config, topology, target: 0, thinning }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UscopeKnobs {
    /// Uplink UDP load of the target, Mb/s; drawn when unset.
    pub udp_mbps: Option<f64>,
    /// Number of contending stations; drawn when unset.
    pub contenders: Option<usize>,
    /// Frame loss on the target's uplink; drawn when unset.
    pub uplink_loss: Option<f64>,
    pub duration_us: f64,
}

impl Default for UscopeKnobs {
    fn default() -> Self {
        Self { udp_mbps: None, contenders: None, uplink_loss: None, duration_us: 6e6 }
    }
}

/// One uScope scenario: the target station snoops a TCP download while
/// sending its own UDP; other stations contend for the channel.
pub fn uscope_scenario(seed: u64, index: usize, knobs: UscopeKnobs) -> Scenario {
    let mut rng = scenario_rng(seed, index, 0x05c0);
    let contenders = knobs.contenders.unwrap_or_else(|| rng.random_range(0..=5usize));
    let k = contenders + 1;
    let h = rng.random::<f64>();
    let mut topology = hide_pairs(Topology::bss(k), k, h, &mut rng);
    let loss = knobs.uplink_loss.unwrap_or_else(|| *[0.0, 0.0, 0.05, 0.15].choose(&mut rng).unwrap());
    topology.set_loss(Topology::sta_node(0), 0, loss);
    let thinning = rng.random_range(1..=2);
    let udp = knobs.udp_mbps.unwrap_or_else(|| rng.random_range(0.0..3.0));

    let mut flows = vec![TrafficSpec::TcpDownload {
        sta: 0,
        w_max: Some(thinning),
        thinning: Some(thinning),
        init_window: Some(thinning),
        rtt_us: Some(rng.random_range(1_500.0..3_000.0)),
    }];
    if udp > 0.0 {
        flows.push(TrafficSpec::UdpUplink { sta: 0, rate_mbps: udp, pkt_bytes: 1200, poisson: true });
        // a second, lighter uplink flow so the per-flow split has two parts
        flows.push(TrafficSpec::UdpUplink { sta: 0, rate_mbps: udp / 2.0, pkt_bytes: 600, poisson: true });
    }
    for s in 1..k {
        let rate_mbps = rng.random_range(0.5..3.0);
        flows.push(if rng.random_bool(0.5) {
            TrafficSpec::UdpUplink { sta: s, rate_mbps, pkt_bytes: 1000, poisson: true }
        } else {
            TrafficSpec::UdpDownlink { sta: s, rate_mbps, pkt_bytes: 1000, poisson: true }
        });
    }
    let config = SimConfig {
        t_f: thinning,
        flows,
        duration_us: knobs.duration_us,
        warmup_us: 2e5,
        seed: seed ^ (index as u64) << 8,
        ..SimConfig::default()
    };
    Scenario { id: format!("uscope-{seed}-{index}"), config, topology, target: 0, thinning }
}
