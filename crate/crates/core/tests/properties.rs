use proptest::prelude::*;

use wlan_lens::mumodel::{joint_distribution_phb, marginal_user_diversity};
use wlan_lens::stats::{pct_error, trimmed_mean};
use wlan_lens::trace::{
    accumulate_observables_with, read_ap_access, read_ap_log, read_ground_truth, write_ap_access, write_ap_log,
    write_ground_truth, ApAccessRecord, Direction, GroundTruthRecord, PacketRecord,
};
use wlan_lens::vst::{compute_wm_star, expected_retry_cost};
use wlan_lens::PhyProfile;

fn direction() -> impl Strategy<Value = Direction> {
    prop_oneof![Just(Direction::Downlink), Just(Direction::Uplink), Just(Direction::ObssOverheard)]
}

fn net() -> impl Strategy<Value = Option<String>> {
    prop::option::of("10\\.0\\.[0-9]{1,2}\\.[0-9]{1,2}:[0-9]{2,5}")
}

/// Records with ascending start times built from gaps and durations.
fn packet_log() -> impl Strategy<Value = Vec<PacketRecord>> {
    prop::collection::vec(
        (0u64..500, 1u64..2000, direction(), net(), net(), 0u64..1500, 1u64..200, 1u32..64, any::<bool>(), any::<bool>()),
        0..40,
    )
    .prop_map(|rows| {
        let mut t = 0;
        rows.into_iter()
            .map(|(gap, dur, dir, sn, dn, payload, extra, f, retry, ok)| {
                t += gap;
                PacketRecord {
                    ts_start: t,
                    ts_end: t + dur,
                    direction: dir,
                    src_addr: "02:00:00:00:01:01".into(),
                    dst_addr: "02:00:00:00:00:00".into(),
                    src_net: sn,
                    dst_net: dn,
                    l4_payload_bytes: payload,
                    frame_bytes: payload + extra,
                    phy_rate: [6.5, 54.0, 150.0, 866.7][f as usize % 4],
                    retry_flag: retry,
                    success: ok,
                    frames_in_txop: f,
                }
            })
            .collect()
    })
}

fn merged_len(recs: &[PacketRecord]) -> u64 {
    let mut iv: Vec<(u64, u64)> = recs.iter().map(|r| (r.ts_start, r.ts_end)).collect();
    iv.sort_unstable();
    let mut total = 0;
    let mut cur: Option<(u64, u64)> = None;
    for (s, e) in iv {
        cur = match cur {
            Some((a, b)) if s <= b => Some((a, b.max(e))),
            Some((a, b)) => {
                total += b - a;
                Some((s, e))
            }
            None => Some((s, e)),
        };
    }
    total + cur.map(|(a, b)| b - a).unwrap_or(0)
}

proptest! {
    #[test]
    fn ap_log_round_trip(recs in packet_log()) {
        let mut buf = Vec::new();
        write_ap_log(&mut buf, &recs).unwrap();
        let parsed = read_ap_log(buf.as_slice()).unwrap();
        prop_assert!(parsed.malformed.is_empty());
        prop_assert_eq!(parsed.records, recs);
    }

    #[test]
    fn ground_truth_round_trip(rows in prop::collection::vec((0u64..100, 0u64..100, 0u64..100, 1u64..100, 0u32..8, 0u32..7), 0..30)) {
        let mut t = 0;
        let recs: Vec<GroundTruthRecord> = rows
            .into_iter()
            .enumerate()
            .map(|(i, (a, b, c, d, flow, n))| {
                t += a;
                GroundTruthRecord {
                    sta: format!("sta{}", i % 3),
                    flow,
                    t_enq: t,
                    t_head: t + b,
                    ts_start: t + b + c,
                    ts_end: t + b + c + d,
                    n_retx: n,
                    defer_us: c,
                }
            })
            .collect();
        let mut sorted = recs;
        sorted.sort_by_key(|g| g.ts_start);
        let mut buf = Vec::new();
        write_ground_truth(&mut buf, &sorted).unwrap();
        prop_assert_eq!(read_ground_truth(buf.as_slice()).unwrap().records, sorted);
    }

    #[test]
    fn access_round_trip(rows in prop::collection::vec((0u64..100, 0u64..100), 0..30)) {
        let mut t = 0;
        let recs: Vec<ApAccessRecord> = rows
            .into_iter()
            .map(|(gap, wait)| {
                t += gap + wait;
                ApAccessRecord { ts_contend: t - wait, ts_start: t, dst_addr: "02:00:00:00:01:02".into() }
            })
            .collect();
        let mut buf = Vec::new();
        write_ap_access(&mut buf, &recs).unwrap();
        prop_assert_eq!(read_ap_access(buf.as_slice()).unwrap().records, recs);
    }

    #[test]
    fn observables_partition_each_window(recs in packet_log(), window in 50u64..5000, gap in 0u64..100) {
        prop_assume!(!recs.is_empty());
        let obs = accumulate_observables_with(&recs, window, gap).unwrap();
        let mut busy = 0;
        for o in &obs {
            prop_assert_eq!(o.airtime_tx_us + o.airtime_rx_us + o.obss_airtime_us + o.defer_us + o.idle_us, o.window_us);
            busy += o.airtime_tx_us + o.airtime_rx_us + o.obss_airtime_us;
        }
        prop_assert_eq!(busy, merged_len(&recs));
        let windows: Vec<u64> = obs.iter().map(|o| o.window_start_us).collect();
        prop_assert!(windows.windows(2).all(|w| w[1] == w[0] + window));
    }

    #[test]
    fn wm_star_between_one_and_four(s in prop::array::uniform4(1e-6f64..1e4)) {
        let w = compute_wm_star(s[0], s[1], s[2], s[3]).unwrap();
        prop_assert!((1.0 - 1e-9..=4.0 + 1e-9).contains(&w));
    }

    #[test]
    fn wm_star_is_four_for_equal_service(x in 1e-3f64..1e4) {
        prop_assert!((compute_wm_star(x, x, x, x).unwrap() - 4.0).abs() < 1e-9);
    }

    #[test]
    fn retry_cost_grows_with_failure(p in 0.0f64..0.9, dp in 0.001f64..0.09, tx in 10.0f64..2000.0) {
        let prof = PhyProfile::reference();
        prop_assert!(expected_retry_cost(p + dp, tx, &prof) >= expected_retry_cost(p, tx, &prof));
        prop_assert!(expected_retry_cost(0.0, tx, &prof) >= prof.difs_us);
    }

    #[test]
    fn trimmed_mean_bounded(xs in prop::collection::vec(0.0f64..1e6, 1..200), q in 0.5f64..1.0) {
        let m = trimmed_mean(&xs, q).unwrap();
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(0.0, f64::max);
        prop_assert!(m >= lo - 1e-9 && m <= hi + 1e-9);
    }

    #[test]
    fn pct_error_is_symmetric_about_truth(gt in 1.0f64..1e6, d in 0.0f64..1e5) {
        let a = pct_error(gt + d, gt);
        let b = pct_error(gt - d, gt);
        prop_assert!((a - b).abs() < 1e-9 * (1.0 + a));
        prop_assert!((a - d * 100.0 / gt).abs() < 1e-9 * (1.0 + a));
    }
}

#[test]
fn joint_tables_are_normalised_with_uniform_user_count() {
    for k in 1..=8 {
        let t = joint_distribution_phb(k);
        assert!((t.total() - 1.0).abs() <= 1e-9 + t.error_bound, "k={k} total {}", t.total());
        for (m, u) in t.marginal_h().iter().zip(marginal_user_diversity(k)) {
            assert!((m - 1.0 / k as f64).abs() < 1e-9);
            assert!((u - 1.0 / k as f64).abs() < 1e-9);
        }
        assert!(t.iter().all(|(_, _, p)| p >= 0.0));
    }
}
