//! Model against simulation for the closed-loop download system.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::mumodel::{
    classify_regime, joint_distribution_phb, throughput_bounds, throughput_downlink,
    throughput_full_aggregation, throughput_uplink, DelayMode, Regime, SystemParams, TimelineParams,
    DEFAULT_MARGIN,
};
use crate::wlansim::{run, BackoffKind, DelayDist, SimConfig, SimError, Topology};

/// Simulator set-up that follows the model's assumptions: exponential
/// backoff, no collisions, one TCP download per flow slot.
pub fn sim_config_for(p: &SystemParams, seconds: f64, seed: u64) -> (SimConfig, Topology) {
    let cfg = SimConfig {
        backoff_kind: BackoffKind::Exponential,
        collision_free: true,
        n_ap: p.n_ap,
        n_sta: p.n_sta,
        b_ap: p.b_ap,
        b_sta: p.b_sta,
        t_f: p.t_f,
        f_s: p.f_s,
        w_max: p.w_max,
        d_backbone_us: p.d_us,
        delay_dist: DelayDist::Deterministic,
        duration_us: seconds * 1e6,
        warmup_us: (seconds * 1e6 * 0.1).min(2e6),
        seed,
        record_logs: false,
        ..SimConfig::default()
    };
    (cfg, Topology::bss(p.k as usize))
}

pub fn simulate_lambda(p: &SystemParams, seconds: f64, seed: u64) -> Result<f64, SimError> {
    let (cfg, topo) = sim_config_for(p, seconds, seed);
    Ok(run(&cfg, &topo)?.throughput_mbps)
}

/// Same, with a tweak applied to the simulator configuration.
pub fn simulate_lambda_with(
    p: &SystemParams,
    seconds: f64,
    seed: u64,
    tweak: impl Fn(&mut SimConfig),
) -> Result<f64, SimError> {
    let (mut cfg, topo) = sim_config_for(p, seconds, seed);
    tweak(&mut cfg);
    Ok(run(&cfg, &topo)?.throughput_mbps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub x: f64,
    pub regime: Regime,
    pub model: Option<f64>,
    pub sim: f64,
}

/// Whatever formula applies to `p` at zero delay (full aggregation uses
/// the chain when the delay is positive).
pub fn model_lambda(p: &SystemParams) -> Option<f64> {
    let t = TimelineParams::reference(p);
    match classify_regime(p, DEFAULT_MARGIN) {
        Regime::DownlinkBottleneck => throughput_downlink(p, &t, DEFAULT_MARGIN).ok(),
        Regime::UplinkBottleneck => throughput_uplink(p, &t, &joint_distribution_phb(p.k), DEFAULT_MARGIN).ok(),
        Regime::FullAggregation => {
            let mode = if p.d_us > 0.0 { DelayMode::General } else { DelayMode::Zero };
            throughput_full_aggregation(p, &t, mode, DEFAULT_MARGIN).ok()
        }
        Regime::Indeterminate => None,
    }
}

/// Run `points` in parallel, each on its own seed.
pub fn sweep(
    points: &[(f64, SystemParams)],
    seconds: f64,
    seed: u64,
) -> Result<Vec<SweepPoint>, SimError> {
    points
        .par_iter()
        .map(|(x, p)| {
            Ok(SweepPoint {
                x: *x,
                regime: classify_regime(p, DEFAULT_MARGIN),
                model: model_lambda(p),
                sim: simulate_lambda(p, seconds, seed)?,
            })
        })
        .collect()
}

/// `B_AP = B_STA = b` on the reference system at zero delay.
pub fn aggregation_points(bs: &[u32]) -> Vec<(f64, SystemParams)> {
    bs.iter()
        .map(|&b| (b as f64, SystemParams { b_ap: b, b_sta: b, ..SystemParams::reference() }))
        .collect()
}

pub fn lambda3(p: &SystemParams) -> f64 {
    throughput_bounds(p, &TimelineParams::reference(p)).l3
}

/// Index of the largest value when it is neither the first nor the last.
pub fn interior_max(ys: &[f64]) -> Option<usize> {
    let (i, _) = ys.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
    (i > 0 && i + 1 < ys.len()).then_some(i)
}
