use serde::Serialize;

use super::{SystemParams, TimelineParams};

/// Throughput bounds in Mb/s, loosest first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bounds {
    /// Every AP antenna busy all the time.
    pub l1: f64,
    /// Full windows delivered in one MU access, uplink free.
    pub l2: f64,
    /// As `l2`, with every station sending its ACKs in its own access.
    pub l3: f64,
    /// As `l2`, with all ACKs collected in one access (ideal MU uplink).
    pub l4: f64,
}

pub fn throughput_bounds(p: &SystemParams, t: &TimelineParams) -> Bounds {
    let fw = p.fw();
    let k = p.k as f64;
    let pkts = k * fw;
    // more stations than antennas need several MU groups
    let groups = p.k.div_ceil(t.n_ap.max(1)) as f64;
    let a = groups * t.a(p.k.min(t.n_ap), fw);
    let per_sta_acks = fw / p.t_f as f64;
    Bounds {
        l1: p.n_ap as f64 * t.profile.phy_rate_mbps,
        l2: t.to_mbps(pkts / a),
        l3: t.to_mbps(pkts / (a + k * t.t_up(per_sta_acks))),
        l4: t.to_mbps(pkts / (a + t.t_up(per_sta_acks))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mumodel::UNLIMITED;

    #[test]
    fn reference_numbers() {
        let p = SystemParams { b_ap: UNLIMITED, b_sta: UNLIMITED, ..SystemParams::reference() };
        let b = throughput_bounds(&p, &TimelineParams::reference(&p));
        assert!((b.l1 - 216.0).abs() < 1e-9);
        for (got, want) in [(b.l2, 192.5), (b.l3, 172.5), (b.l4, 187.0)] {
            assert!((got - want).abs() / want < 0.02, "{got} vs {want}");
        }
    }

    #[test]
    fn ordering() {
        for k in 1..=9 {
            for w in [1, 10, 50, 200, 1000] {
                for tf in [1, 2, 4] {
                    let p = SystemParams { k, w_max: w, t_f: tf, ..SystemParams::reference() };
                    let b = throughput_bounds(&p, &TimelineParams::reference(&p));
                    assert!(b.l3 <= b.l4 && b.l4 <= b.l2 && b.l2 <= b.l1, "{b:?}");
                }
            }
        }
    }
}
