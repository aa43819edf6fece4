//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::time::{Duration, Instant};

use num_bigint::BigInt;
use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use sha2::{Digest, Sha256};

use wlan_lens::mumodel::{
    joint_distribution_phb, marginal_user_diversity, p_hat_exact, throughput_bounds, Regime, SystemParams,
    TimelineParams, UNLIMITED,
};
use wlan_lens::validate::model::{aggregation_points, interior_max, lambda3, simulate_lambda, simulate_lambda_with, sweep};
use wlan_lens::validate::{cmd_validate, mean_errors, Suite, ValidationReport, SAMPLE_SIZES};
use wlan_lens::vst::compute_wm_star;
use wlan_lens::wlansim::{run, BackoffKind, SimConfig, Topology, TrafficSpec};

const SIM_SECONDS: f64 = 20.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(x: f64, want: f64, rel: f64) -> bool {
    (x - want).abs() <= rel * want.abs()
}

fn c1() -> Outcome {
    let exact = p_hat_exact(4, 2, 1, 3);
    let want = BigRational::new(BigInt::from(3024), BigInt::from(390625));
    check(exact == want, format!("P(2,1,3) = {exact}, want {want}"))
}

/// Draw `(h, b)` from the process the joint table describes: an Exp(1) AP
/// countdown, Poisson arrivals per station, then one deterministic ACK on a
/// uniformly chosen station.
fn sample_hb(k: usize, rng: &mut ChaCha8Rng, counts: &mut [u64]) -> (usize, u64) {
    let y: f64 = Exp1.sample(rng);
    counts.iter_mut().for_each(|c| *c = 0);
    if y > 0.0 {
        let pois = Poisson::new(y).unwrap();
        for c in counts.iter_mut() {
            *c = pois.sample(rng) as u64;
        }
    }
    counts[rng.random_range(0..k)] += 1;
    let h = counts.iter().filter(|&&c| c > 0).count();
    (h, counts.iter().copied().max().unwrap())
}

fn c2() -> Outcome {
    const SAMPLES: usize = 10_000_000;
    let mut worst_marginal: f64 = 0.0;
    let mut worst_sigma: f64 = 0.0;
    for k in 1..=8u32 {
        let table = joint_distribution_phb(k);
        let uniform = marginal_user_diversity(k);
        for (h, m) in table.marginal_h().iter().enumerate() {
            worst_marginal = worst_marginal.max((m - 1.0 / k as f64).abs()).max((uniform[h] - 1.0 / k as f64).abs());
        }
        // Monte Carlo: h marginal and the joint cells with mass above 1e-3
        let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
        let n = SAMPLES / 8;
        let mut counts = vec![0u64; k as usize];
        let mut hist = std::collections::HashMap::<(usize, u64), u64>::new();
        for _ in 0..n {
            *hist.entry(sample_hb(k as usize, &mut rng, &mut counts)).or_default() += 1;
        }
        for (h, b, p) in table.iter().filter(|c| c.2 > 1e-3) {
            let got = *hist.get(&(h as usize, b as u64)).unwrap_or(&0) as f64 / n as f64;
            let sd = (p * (1.0 - p) / n as f64).sqrt();
            worst_sigma = worst_sigma.max((got - p).abs() / sd);
        }
    }
    check(
        worst_marginal <= 1e-9 && worst_sigma <= 3.0,
        format!("max |P(h) - 1/K| = {worst_marginal:.2e} (tol 1e-9), worst Monte Carlo cell {worst_sigma:.2} sigma (tol 3)"),
    )
}

fn c3() -> Outcome {
    let p = SystemParams::reference();
    let b = throughput_bounds(&p, &TimelineParams::reference(&p));
    let got = [b.l1, b.l2, b.l3, b.l4];
    let want = [216.0, 192.5, 172.5, 187.0];
    let ok = got.iter().zip(&want).all(|(g, w)| within(*g, *w, 0.02));
    check(ok, format!("bounds {got:.1?} vs {want:?} (tol 2%)"))
}

fn c4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut bad = 0;
    let mut at_four = 0;
    for i in 0..100_000 {
        // every hundredth quadruple is all-equal, where the maximum is reached
        let s: [f64; 4] = if i % 100 == 0 {
            [rng.random_range(0.1..10.0); 4]
        } else {
            std::array::from_fn(|_| rng.random_range(0.0..10.0))
        };
        let w = compute_wm_star(s[0], s[1], s[2], s[3]).unwrap();
        let max = s.iter().copied().fold(0.0, f64::max);
        let equal = s.iter().all(|x| (x - max).abs() <= 1e-9 * max);
        if !(1.0 - 1e-9..=4.0 + 1e-9).contains(&w) || ((w - 4.0).abs() <= 1e-9) != equal {
            bad += 1;
        }
        at_four += usize::from(equal);
    }
    check(bad == 0 && at_four > 0, format!("{bad} violations in 1e5 draws, {at_four} all-equal draws at 4"))
}

fn c5() -> Outcome {
    let pts = aggregation_points(&[1, 2, 4, 8, 16, 32, 64, 128]);
    let s = sweep(&pts, SIM_SECONDS, 1).unwrap();
    let mut worst: f64 = 0.0;
    let mut scored = 0;
    for p in s.iter().filter(|p| p.regime == Regime::DownlinkBottleneck) {
        let m = p.model.unwrap();
        worst = worst.max((m - p.sim).abs() / p.sim);
        scored += 1;
    }
    let sims: Vec<f64> = s.iter().map(|p| p.sim).collect();
    let peak = interior_max(&sims);
    check(
        scored > 0 && worst < 0.10 && peak.is_some(),
        format!(
            "{scored} downlink-bottleneck points, worst error {:.1}% (tol 10%), sim curve {:.1?}, interior max at B = {:?}",
            worst * 100.0,
            sims,
            peak.map(|i| s[i].x)
        ),
    )
}

fn c6() -> Outcome {
    let p = SystemParams { b_ap: UNLIMITED, b_sta: UNLIMITED, ..SystemParams::reference() };
    let sim = simulate_lambda(&p, SIM_SECONDS, 1).unwrap();
    let ratio = sim / lambda3(&p);
    check((0.55..=0.70).contains(&ratio), format!("sim {sim:.1} Mb/s, ratio to bound 3 = {ratio:.3} (want 0.55..0.70)"))
}

fn c7() -> Outcome {
    let ds = [10.0, 40.0, 60.0, 80.0, 100.0, 130.0, 160.0, 240.0];
    let pts: Vec<(f64, SystemParams)> = ds
        .iter()
        .map(|&d| (d, SystemParams { b_ap: 256, b_sta: 1, w_max: 200, k: 4, d_us: d * 1000.0, ..SystemParams::reference() }))
        .collect();
    let s = sweep(&pts, SIM_SECONDS, 1).unwrap();
    let sims: Vec<f64> = s.iter().map(|p| p.sim).collect();
    let d_star = interior_max(&sims).map(|i| ds[i]);
    let ok = d_star.is_some_and(|d| (40.0..=160.0).contains(&d));
    check(ok, format!("sim {sims:.1?} over D = {ds:?} ms, interior max at D* = {d_star:?} ms (want 40..160)"))
}

fn c8() -> Outcome {
    let mut worst: f64 = 0.0;
    for w in [50u32, 200] {
        let pts: Vec<(f64, SystemParams)> = [1.0, 5.0, 20.0, 50.0, 100.0, 200.0]
            .iter()
            .map(|&d| (d, SystemParams { b_ap: UNLIMITED, b_sta: UNLIMITED, w_max: w, d_us: d * 1000.0, ..SystemParams::reference() }))
            .collect();
        for p in sweep(&pts, SIM_SECONDS, 1).unwrap() {
            worst = worst.max(p.model.map_or(f64::INFINITY, |m| (m - p.sim).abs() / p.sim));
        }
    }
    check(worst < 0.15, format!("worst chain-vs-sim error {:.1}% over 12 points (tol 15%)", worst * 100.0))
}

fn ok_reports(r: Vec<ValidationReport>) -> (usize, Vec<ValidationReport>) {
    let n = r.len();
    (n, r.into_iter().filter(|r| r.status == wlan_lens::validate::Status::Ok).collect())
}

fn c9() -> Outcome {
    let (n, ok) = ok_reports(cmd_validate(Suite::VstTopology, &[1, 2, 3, 4], 0).unwrap());
    let m = mean_errors(&ok);
    let dl = m.get("theta_dl").copied().unwrap_or((f64::NAN, 0));
    let ul = m.get("theta_ul").copied().unwrap_or((f64::NAN, 0));
    check(
        dl.1 >= 30 && ul.1 >= 30 && dl.0 < 10.0 && ul.0 < 10.0,
        format!("{n} scenarios; download {:.2}% over {}, upload {:.2}% over {} (tol 10%)", dl.0, dl.1, ul.0, ul.1),
    )
}

fn c10() -> Outcome {
    let seeds = [1, 2, 3, 4];
    let mut reports = Vec::new();
    for suite in [Suite::UscopeQueuing, Suite::UscopeDefer, Suite::UscopeRetx] {
        reports.extend(ok_reports(cmd_validate(suite, &seeds, 0).unwrap()).1);
    }
    reports.retain(|r| r.handshake_count >= 1000);
    let m = mean_errors(&reports);
    let limits = [
        ("l_uplink", 10.0),
        ("phi_access", 10.0),
        ("phi_queuing", 10.0),
        ("phi_q", 10.0),
        ("r_bar", 15.0),
        ("psi_defer", 15.0),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, tol) in limits {
        let (e, n) = m.get(name).copied().unwrap_or((f64::NAN, 0));
        ok &= n > 0 && e < tol;
        parts.push(format!("{name} {e:.2}%/{n} (tol {tol}%)"));
    }

    // error against handshake count, pooled over every scored parameter
    let (_, sized) = ok_reports(cmd_validate(Suite::SampleSize, &[1, 2, 3, 4, 5, 6, 7, 8], 0).unwrap());
    let curve: Vec<f64> = SAMPLE_SIZES
        .iter()
        .map(|&n| {
            let errs: Vec<f64> = sized
                .iter()
                .filter(|r| r.handshake_count == n)
                .flat_map(|r| r.params.iter().filter(|p| p.scored).filter_map(|p| p.pct_error))
                .collect();
            errs.iter().sum::<f64>() / errs.len() as f64
        })
        .collect();
    let falling = curve.windows(2).all(|w| w[1] <= w[0]);
    ok &= falling && curve.iter().all(|e| e.is_finite());
    check(
        ok,
        format!(
            "{} scenarios with >= 1000 handshakes: {}; error vs sample size {:?}: {:.1?}",
            reports.len(),
            parts.join(", "),
            SAMPLE_SIZES,
            curve
        ),
    )
}

fn saturated(n: usize) -> SimConfig {
    SimConfig {
        flows: (0..n).map(|sta| TrafficSpec::UdpUplink { sta, rate_mbps: 200.0, pkt_bytes: 1000, poisson: false }).collect(),
        duration_us: 3e6,
        warmup_us: 0.0,
        ..SimConfig::default()
    }
}

fn mean_access(cfg: &SimConfig) -> f64 {
    let r = run(cfg, &Topology::bss(1)).unwrap();
    let v: Vec<f64> = r.ground_truth.iter().skip(100).map(|g| (g.ts_start - g.t_head) as f64).collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn c11() -> Outcome {
    let cfg = saturated(1);
    let p = cfg.phy().unwrap();
    let uniform_want = p.difs_us + p.slot_us * (p.w0 as f64 - 1.0) / 2.0;
    let uniform = mean_access(&cfg);
    // exponential backoff with rate mu = 2/(W0 sigma) has mean W0 sigma / 2
    let exp_want = p.difs_us + p.w0 as f64 * p.slot_us / 2.0;
    let exp = mean_access(&SimConfig { backoff_kind: BackoffKind::Exponential, ..saturated(1) });

    let mut det = saturated(3);
    det.duration_us = 1e6;
    let topo = Topology::bss(3).hide(0, 1);
    let hash = || {
        let r = run(&det, &topo).unwrap();
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&r.ap_log).unwrap());
        h.update(serde_json::to_vec(&r.ground_truth).unwrap());
        h.finalize()
    };
    let same = hash() == hash();
    check(
        within(uniform, uniform_want, 0.02) && within(exp, exp_want, 0.01) && same,
        format!(
            "uniform access {uniform:.1} vs {uniform_want:.1} us (tol 2%), exponential {exp:.1} vs {exp_want:.1} us (tol 1%), identical log hashes: {same}"
        ),
    )
}

fn c12() -> Outcome {
    let mut rows = Vec::new();
    for b in [1u32, 2, 4, 8, 16, 32, 64, 128] {
        let p = SystemParams { b_ap: UNLIMITED, b_sta: b, ..SystemParams::reference() };
        let clean = simulate_lambda(&p, SIM_SECONDS, 1).unwrap();
        let lossy = simulate_lambda_with(&p, SIM_SECONDS, 1, |c| c.dl_loss_p = 0.001).unwrap();
        rows.push((b, lossy, clean));
    }
    let tail: Vec<f64> = rows.iter().filter(|r| r.0 >= 16).map(|r| r.1).collect();
    let spread = tail.iter().copied().fold(0.0, f64::max) / tail.iter().copied().fold(f64::INFINITY, f64::min);
    let bounded = rows.iter().all(|r| r.1 <= r.2 * 1.05);
    let table: Vec<String> = rows.iter().map(|r| format!("{}: {:.1}/{:.1}", r.0, r.1, r.2)).collect();
    check(
        spread <= 1.10 && bounded,
        format!(
            "lossy/lossless by B_STA [{}]; max/min for B_STA >= 16 = {spread:.3} (tol 1.10), lossy never above lossless x 1.05: {bounded}",
            table.join(", ")
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Duration); 12] = [
        ("1 exact joint value", c1, Duration::from_secs(1)),
        ("2 uniform user diversity", c2, Duration::from_secs(60)),
        ("3 throughput bounds", c3, Duration::from_secs(1)),
        ("4 critical window range", c4, Duration::from_secs(60)),
        ("5 downlink bottleneck model vs sim", c5, Duration::from_secs(600)),
        ("6 uplink bottleneck factor", c6, Duration::from_secs(300)),
        ("7 pump and drain", c7, Duration::from_secs(900)),
        ("8 chain vs sim", c8, Duration::from_secs(900)),
        ("9 VST end to end", c9, Duration::from_secs(1800)),
        ("10 uScope end to end", c10, Duration::from_secs(1800)),
        ("11 simulator micro-oracles", c11, Duration::from_secs(60)),
        ("12 loss reproduction", c12, Duration::from_secs(600)),
    ];
    let mut failed = 0;
    for (name, f, limit) in criteria {
        let t0 = Instant::now();
        let o = f();
        let took = t0.elapsed();
        let pass = o.pass && took <= limit;
        failed += usize::from(!pass);
        println!(
            "{} criterion {name}: {} [{:.2?}, limit {:?}]",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            took,
            limit
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
