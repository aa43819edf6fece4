use serde::{Deserialize, Serialize};

use super::markov::solve_chain;
use super::{
    classify_regime, joint_distribution_phb, saturation_rates, JointTable, ModelError, Regime,
    SystemParams, TimelineParams, UNLIMITED,
};

/// Renewal formula for the downlink-bottleneck regime, without the regime
/// check.
///
/// Every cycle the AP sends `s_down` packets after one backoff; the
/// stations answer in `k*` transmissions. When the windows cannot cover
/// the backbone delay the AP is only backlogged part of the time.
pub fn downlink_formula(p: &SystemParams, t: &TimelineParams) -> f64 {
    let (s_down, _, s_sta) = saturation_rates(p);
    let b_ap = p.b_ap as f64;
    let tf = p.t_f as f64;
    // a station that got fewer than t_f segments waits for the next AP
    // service before it has a full ACK to send
    let per_tx = s_sta.min(b_ap.max(tf));
    let k_star = s_down / per_tx;
    let c = 1.0 / t.mu + t.t_down(p) + k_star * t.t_up(per_tx / tf);
    let kfw = p.k as f64 * p.fw();
    let frac = (kfw / ((1.0 + p.d_us / c) * s_down)).min(1.0);
    t.to_mbps(s_down / c * frac)
}

pub fn throughput_downlink(p: &SystemParams, t: &TimelineParams, margin: f64) -> Result<f64, ModelError> {
    p.validate()?;
    let r = classify_regime(p, margin);
    if r != Regime::DownlinkBottleneck {
        return Err(ModelError::WrongRegime { actual: r, wanted: "DownlinkBottleneck" });
    }
    Ok(downlink_formula(p, t))
}

/// Mean transmissions of a station capped at `m` (real-valued) when the
/// uncapped count is geometric with P(j) = 2^-(j+1).
fn capped_mean(m: f64) -> f64 {
    if m.is_infinite() {
        1.0
    } else {
        1.0 - 2f64.powf(-m.max(0.0))
    }
}

/// Renewal formula for the uplink-bottleneck regime at zero delay, without
/// the regime check.
///
/// Per cycle: the first ACK (deterministic), then K stations race the AP,
/// each transmitting a geometric number of times before the AP wins. A
/// station can only hold `m̄ = F_s·W_max/s_sta` transmissions' worth of
/// ACKs, which caps that count; the station that sent the first ACK has
/// one fewer left. The AP then serves `h` stations with up to `b·s_sta`
/// segments each, `(h, b)` drawn from the joint table.
pub fn uplink_formula(p: &SystemParams, t: &TimelineParams, phb: &JointTable, margin: f64) -> f64 {
    let fw = p.fw();
    // a station never holds more than its windows' worth of ACKs
    let s_sta = saturation_rates(p).2.min(fw);
    let k = p.k as f64;
    let inv_mu = 1.0 / t.mu;
    let m_bar = if fw >= margin * s_sta { f64::INFINITY } else { fw / s_sta };
    let extra = capped_mean(m_bar - 1.0) + (k - 1.0) * capped_mean(m_bar);
    let ack_frames = (s_sta / p.t_f as f64).min(fw / p.t_f as f64);
    let t_up = t.t_up(ack_frames);
    let h_ap = p.k.min(t.n_ap);
    let a_bar: f64 = phb
        .iter()
        .map(|(h, b, pr)| pr * t.a(h.min(h_ap), (b as f64 * s_sta).min(fw)))
        .sum();
    let num = (1.0 + extra) * s_sta;
    let den = inv_mu / k + t_up + extra * (inv_mu / (k + 1.0) + t_up) + inv_mu / (k + 1.0) + a_bar;
    t.to_mbps(num / den)
}

/// Uplink-bottleneck throughput. Accepts any parameters whose station side
/// limits the loop (`s_down > s_up`, or an unlimited AP), which includes
/// full aggregation.
pub fn throughput_uplink(
    p: &SystemParams,
    t: &TimelineParams,
    phb: &JointTable,
    margin: f64,
) -> Result<f64, ModelError> {
    p.validate()?;
    let (s_down, s_up, _) = saturation_rates(p);
    if s_down <= s_up && p.b_ap != UNLIMITED {
        return Err(ModelError::WrongRegime { actual: classify_regime(p, margin), wanted: "UplinkBottleneck" });
    }
    if p.d_us != 0.0 {
        return Err(ModelError::NonzeroDelay);
    }
    Ok(uplink_formula(p, t, phb, margin))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DelayMode {
    Zero,
    Small,
    General,
}

/// Diversity distribution seen when the delay is small but nonzero: the
/// AP never finds all K batches back, and a lone batch is served as soon
/// as it arrives.
pub fn small_delay_diversity(k: u32) -> Vec<f64> {
    let kf = k as f64;
    if k == 1 {
        return vec![1.0];
    }
    (1..k).map(|h| if h == 1 { 2.0 / kf } else { 1.0 / kf }).collect()
}

pub fn throughput_full_aggregation(
    p: &SystemParams,
    t: &TimelineParams,
    mode: DelayMode,
    margin: f64,
) -> Result<f64, ModelError> {
    p.validate()?;
    let r = classify_regime(p, margin);
    if r != Regime::FullAggregation {
        return Err(ModelError::WrongRegime { actual: r, wanted: "FullAggregation" });
    }
    let k = p.k;
    let kf = k as f64;
    let fw = p.fw();
    let inv_mu = 1.0 / t.mu;
    let t_up = t.t_up(fw / p.t_f as f64);
    let contention = |from: u32, to: u32| -> f64 { (from..=to).map(|j| inv_mu / (kf - j as f64)).sum() };
    match mode {
        DelayMode::Zero => {
            let mut num = 0.0;
            let mut den = inv_mu / kf;
            for h in 1..=k {
                num += h as f64 * fw / kf;
                den += (t.a(h, fw) + h as f64 * t_up + contention(0, h - 1)) / kf;
            }
            Ok(t.to_mbps(num / den))
        }
        DelayMode::Small => {
            let mut num = 0.0;
            let mut den = 0.0;
            for h in 0..k {
                let served = h.max(1);
                num += served as f64 * fw / kf;
                den += (t.a(served, fw) + h as f64 * t_up + contention(0, h.min(k - 1))) / kf;
            }
            Ok(t.to_mbps(num / den))
        }
        DelayMode::General => {
            if p.d_us == 0.0 {
                return throughput_full_aggregation(p, t, DelayMode::Zero, margin);
            }
            Ok(solve_chain(p, t)?.lambda_mbps)
        }
    }
}

/// Shortcut used by sweeps: the joint table for `p.k`.
pub fn uplink_with_table(p: &SystemParams, t: &TimelineParams, margin: f64) -> f64 {
    uplink_formula(p, t, &joint_distribution_phb(p.k), margin)
}
