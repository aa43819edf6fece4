//! Simulator-backed validation harness: simulate, estimate, compare.

pub mod model;
pub mod scenario;
pub mod truth;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flowsense::{sta_handshakes, FlowConfig, Handshake};
use crate::mumodel::Regime;
use crate::stats::pct_error;
use crate::trace::PacketRecord;
use crate::uscope::{estimate_uscope, UscopeConfig};
use crate::vst::{estimate_vst, VstConfig};
use crate::wlansim::{run, run_speed_test, sta_addr, SimError};

pub use scenario::{uscope_scenario, vst_scenario, Scenario, UscopeKnobs, VstKnobs};
pub use truth::{handshake_window, uscope_truth, UscopeTruth};

/// Scenarios generated per seed by the estimator suites.
pub const SCENARIOS_PER_SEED: usize = 8;

/// Handshake counts the sample-size suite truncates to.
pub const SAMPLE_SIZES: [usize; 5] = [100, 300, 1000, 3000, 10000];

/// Simulated seconds per point of the model sweep.
pub const MODEL_SWEEP_SECONDS: f64 = 20.0;

/// Latency components below this share of the mean uplink latency are
/// reported but not scored.
pub const MIN_SCORED_SHARE: f64 = 0.05;

/// Mean retransmission counts below this are reported but not scored.
pub const MIN_SCORED_RETX: f64 = 0.1;

#[derive(Debug, Error)]
pub enum ValidateError {
    #[error("unknown suite `{0}`")]
    UnknownSuite(String),
    #[error("cannot parse report {path}: {reason}")]
    Parse { path: String, reason: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("worker pool: {0}")]
    Pool(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Suite {
    VstTopology,
    VstThinning,
    VstMobilityProxy,
    UscopeQueuing,
    UscopeDefer,
    UscopeRetx,
    ModelVsSim,
    SampleSize,
}

impl Suite {
    pub const ALL: [Suite; 8] = [
        Suite::VstTopology,
        Suite::VstThinning,
        Suite::VstMobilityProxy,
        Suite::UscopeQueuing,
        Suite::UscopeDefer,
        Suite::UscopeRetx,
        Suite::ModelVsSim,
        Suite::SampleSize,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::VstTopology => "vst-topology",
            Suite::VstThinning => "vst-thinning",
            Suite::VstMobilityProxy => "vst-mobility-proxy",
            Suite::UscopeQueuing => "uscope-queuing",
            Suite::UscopeDefer => "uscope-defer",
            Suite::UscopeRetx => "uscope-retx",
            Suite::ModelVsSim => "model-vs-sim",
            Suite::SampleSize => "sample-size",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = ValidateError;

    /// Accepts the kebab-case name or the variant name, any case.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = |x: &str| x.to_ascii_lowercase().replace(['-', '_'], "");
        Suite::ALL
            .into_iter()
            .find(|v| norm(v.name()) == norm(s))
            .ok_or_else(|| ValidateError::UnknownSuite(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamResult {
    pub name: String,
    pub estimate: f64,
    pub ground_truth: f64,
    /// `None` when the ground truth is not positive.
    pub pct_error: Option<f64>,
    pub scored: bool,
}

impl ParamResult {
    pub fn new(name: impl Into<String>, estimate: f64, ground_truth: f64, scored: bool) -> Self {
        let pct = (ground_truth > 0.0).then(|| pct_error(estimate, ground_truth));
        Self { name: name.into(), estimate, ground_truth, pct_error: pct, scored: scored && pct.is_some() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", content = "detail", rename_all = "snake_case")]
pub enum Status {
    Ok,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub suite: Suite,
    pub scenario_id: String,
    pub seed: u64,
    pub handshake_count: usize,
    pub params: Vec<ParamResult>,
    pub status: Status,
}

impl ValidationReport {
    fn failed(suite: Suite, scenario_id: String, seed: u64, why: impl fmt::Display) -> Self {
        log::warn!("{suite} {scenario_id} (seed {seed}) failed: {why}");
        Self { suite, scenario_id, seed, handshake_count: 0, params: vec![], status: Status::Failed(why.to_string()) }
    }

    pub fn param(&self, name: &str) -> Option<&ParamResult> {
        self.params.iter().find(|p| p.name == name)
    }
}

fn sim_err(e: SimError) -> String {
    e.to_string()
}

/// Snoop the target's download, then run the active speed test on the same
/// network as ground truth.
pub fn validate_vst(suite: Suite, seed: u64, sc: &Scenario) -> ValidationReport {
    let go = || -> Result<ValidationReport, String> {
        let r = run(&sc.config, &sc.topology).map_err(sim_err)?;
        let cfg = VstConfig { thinning_n: sc.thinning, profile: sc.config.phy().map_err(sim_err)?, ..VstConfig::default() };
        let est = estimate_vst(&r.ap_log, Some(&r.ap_access), &sta_addr(sc.target), &cfg).map_err(|e| e.to_string())?;
        let gt = run_speed_test(&sc.config, &sc.topology, sc.target).map_err(sim_err)?;
        Ok(ValidationReport {
            suite,
            scenario_id: sc.id.clone(),
            seed,
            handshake_count: est.handshakes,
            params: vec![
                ParamResult::new("theta_dl", est.estimate.theta_dl_mbps, gt.download_mbps, true),
                ParamResult::new("theta_ul", est.estimate.theta_ul_mbps, gt.upload_mbps, true),
            ],
            status: Status::Ok,
        })
    };
    go().unwrap_or_else(|e| ValidationReport::failed(suite, sc.id.clone(), seed, e))
}

/// Uplink records belonging to the handshake span.
fn uplink_in(uplink: &[PacketRecord], hs: &[Handshake]) -> Vec<PacketRecord> {
    match handshake_window(hs) {
        Some((lo, hi)) => uplink.iter().filter(|r| r.ts_start >= lo && r.ts_end <= hi).cloned().collect(),
        None => Vec::new(),
    }
}

fn uscope_params(est: &crate::uscope::LatencyBreakdown, t: &UscopeTruth) -> Vec<ParamResult> {
    let floor = MIN_SCORED_SHARE * t.l_uplink;
    let mut v = vec![
        ParamResult::new("l_uplink", est.l_uplink, t.l_uplink, true),
        ParamResult::new("phi_access", est.phi_access, t.phi_access, true),
        ParamResult::new("phi_queuing", est.phi_queuing, t.phi_queuing, t.phi_queuing >= floor),
        ParamResult::new("r_bar", est.r_bar, t.r_bar, t.r_bar >= MIN_SCORED_RETX),
        ParamResult::new("psi_defer", est.psi_defer, t.psi_defer, t.psi_defer >= floor),
    ];
    for (label, &g) in &t.per_flow_queuing {
        let e = est.per_flow_queuing.get(label).copied().unwrap_or(0.0);
        v.push(ParamResult::new(format!("phi_q[{label}]"), e, g, g >= floor));
    }
    v
}

/// Estimate the latency breakdown from the AP log and compare with the
/// per-packet ground truth. With `truncate`, only the first handshakes are
/// used while the ground truth covers the whole run.
fn validate_uscope_sizes(suite: Suite, seed: u64, sc: &Scenario, sizes: &[Option<usize>]) -> Vec<ValidationReport> {
    let go = || -> Result<Vec<ValidationReport>, String> {
        let r = run(&sc.config, &sc.topology).map_err(sim_err)?;
        let addr = sta_addr(sc.target);
        let sh = sta_handshakes(&r.ap_log, &addr, &FlowConfig::default()).map_err(|e| e.to_string())?;
        let cfg = UscopeConfig::from_profile(&sc.config.phy().map_err(sim_err)?);
        let window = handshake_window(&sh.handshakes).ok_or("no handshakes")?;
        let gt: Vec<_> = r.ground_truth.iter().filter(|g| g.sta == addr).cloned().collect();
        let truth = uscope_truth(&gt, sc.target, 0, window).ok_or("no ground truth in window")?;
        let mut out = Vec::new();
        for &n in sizes {
            let n = n.unwrap_or(sh.handshakes.len());
            if n > sh.handshakes.len() {
                continue;
            }
            let hs = &sh.handshakes[..n];
            let est = estimate_uscope(hs, &uplink_in(&sh.uplink, hs), &cfg).map_err(|e| e.to_string())?;
            out.push(ValidationReport {
                suite,
                scenario_id: sc.id.clone(),
                seed,
                handshake_count: n,
                params: uscope_params(&est, &truth),
                status: Status::Ok,
            });
        }
        Ok(out)
    };
    go().unwrap_or_else(|e| vec![ValidationReport::failed(suite, sc.id.clone(), seed, e)])
}

pub fn validate_uscope(suite: Suite, seed: u64, sc: &Scenario) -> ValidationReport {
    validate_uscope_sizes(suite, seed, sc, &[None]).remove(0)
}

/// Scenarios of an estimator suite for one seed.
pub fn suite_scenarios(suite: Suite, seed: u64) -> Vec<Scenario> {
    let n = SCENARIOS_PER_SEED;
    let vst = |knobs: &dyn Fn(usize) -> VstKnobs| (0..n).map(|i| vst_scenario(seed, i, knobs(i))).collect();
    let us = |knobs: &dyn Fn(usize) -> UscopeKnobs| (0..n).map(|i| uscope_scenario(seed, i, knobs(i))).collect();
    match suite {
        Suite::VstTopology => vst(&|_| VstKnobs { hidden: None, thinning: None, mobility: false }),
        Suite::VstThinning => vst(&|i| VstKnobs { hidden: Some(0.0), thinning: Some(1 + i as u32 % 2), mobility: false }),
        Suite::VstMobilityProxy => vst(&|_| VstKnobs { hidden: None, thinning: None, mobility: true }),
        Suite::UscopeQueuing => us(&|i| UscopeKnobs {
            udp_mbps: Some([0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0][i % 8]),
            uplink_loss: Some(0.0),
            ..UscopeKnobs::default()
        }),
        Suite::UscopeDefer => us(&|i| UscopeKnobs {
            contenders: Some(2 + i % 4),
            uplink_loss: Some(0.0),
            ..UscopeKnobs::default()
        }),
        Suite::UscopeRetx => us(&|i| UscopeKnobs {
            uplink_loss: Some([0.05, 0.1, 0.15, 0.2][i % 4]),
            ..UscopeKnobs::default()
        }),
        Suite::SampleSize => (0..n.min(4))
            .map(|i| uscope_scenario(seed, i, UscopeKnobs { contenders: Some(1 + i % 3), duration_us: 30e6, ..UscopeKnobs::default() }))
            .collect(),
        Suite::ModelVsSim => Vec::new(),
    }
}

/// The downlink-bottleneck sweep of B_AP = B_STA against the model.
fn validate_model(seed: u64) -> Vec<ValidationReport> {
    let pts = model::aggregation_points(&[1, 2, 4, 8, 16, 32, 64, 128]);
    match model::sweep(&pts, MODEL_SWEEP_SECONDS, seed) {
        Ok(points) => points
            .into_iter()
            .map(|p| ValidationReport {
                suite: Suite::ModelVsSim,
                scenario_id: format!("model-b{}", p.x),
                seed,
                handshake_count: 0,
                params: vec![ParamResult::new(
                    "lambda",
                    p.model.unwrap_or(f64::NAN),
                    p.sim,
                    p.regime == Regime::DownlinkBottleneck && p.model.is_some(),
                )],
                status: Status::Ok,
            })
            .collect(),
        Err(e) => vec![ValidationReport::failed(Suite::ModelVsSim, "model".into(), seed, e)],
    }
}

fn run_seed(suite: Suite, seed: u64) -> Vec<ValidationReport> {
    match suite {
        Suite::ModelVsSim => validate_model(seed),
        Suite::SampleSize => {
            let sizes: Vec<Option<usize>> = SAMPLE_SIZES.iter().map(|&n| Some(n)).collect();
            suite_scenarios(suite, seed).par_iter().flat_map(|sc| validate_uscope_sizes(suite, seed, sc, &sizes)).collect()
        }
        Suite::VstTopology | Suite::VstThinning | Suite::VstMobilityProxy => {
            suite_scenarios(suite, seed).par_iter().map(|sc| validate_vst(suite, seed, sc)).collect()
        }
        Suite::UscopeQueuing | Suite::UscopeDefer | Suite::UscopeRetx => {
            suite_scenarios(suite, seed).par_iter().map(|sc| validate_uscope(suite, seed, sc)).collect()
        }
    }
}

/// Run a suite for every seed on a pool of `jobs` workers (0 picks the
/// number of cores).
pub fn cmd_validate(suite: Suite, seeds: &[u64], jobs: usize) -> Result<Vec<ValidationReport>, ValidateError> {
    log::info!("running {suite} on {} seed(s)", seeds.len());
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| ValidateError::Pool(e.to_string()))?;
    Ok(pool.install(|| seeds.par_iter().flat_map(|&s| run_seed(suite, s)).collect()))
}

pub const CSV_HEADER: [&str; 10] =
    ["suite", "scenario", "seed", "handshakes", "param", "estimate", "ground_truth", "pct_error", "scored", "status"];

/// One row per scenario and parameter; failed scenarios get one row with
/// empty values.
pub fn summary_csv(reports: &[ValidationReport]) -> Result<String, ValidateError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in reports {
        let status = match &r.status {
            Status::Ok => "ok".to_string(),
            Status::Failed(m) => format!("failed: {m}"),
        };
        let head = [r.suite.name().to_string(), r.scenario_id.clone(), r.seed.to_string(), r.handshake_count.to_string()];
        if r.params.is_empty() {
            w.write_record(head.iter().cloned().chain(["", "", "", "", "false"].map(String::from)).chain([status.clone()]))?;
        }
        for p in &r.params {
            let pct = p.pct_error.map(|x| x.to_string()).unwrap_or_default();
            w.write_record(head.iter().cloned().chain([
                p.name.clone(),
                p.estimate.to_string(),
                p.ground_truth.to_string(),
                pct,
                p.scored.to_string(),
                status.clone(),
            ]))?;
        }
    }
    let bytes = w.into_inner().map_err(|e| ValidateError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Read report files, each holding one report or a list of them.
pub fn load_reports(paths: &[std::path::PathBuf]) -> Result<Vec<ValidationReport>, ValidateError> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        Many(Vec<ValidationReport>),
        One(Box<ValidationReport>),
    }
    let mut out = Vec::new();
    for p in paths {
        let text = std::fs::read_to_string(p)?;
        let parsed: OneOrMany = serde_json::from_str(&text)
            .map_err(|e| ValidateError::Parse { path: p.display().to_string(), reason: e.to_string() })?;
        match parsed {
            OneOrMany::Many(v) => out.extend(v),
            OneOrMany::One(r) => out.push(*r),
        }
    }
    Ok(out)
}

/// Aggregate table plus one data file per suite present, keyed by file name.
pub fn cmd_report(paths: &[std::path::PathBuf]) -> Result<BTreeMap<String, String>, ValidateError> {
    let reports = load_reports(paths)?;
    let mut files = BTreeMap::new();
    files.insert("summary.csv".to_string(), summary_csv(&reports)?);
    let mut by_suite: BTreeMap<Suite, Vec<ValidationReport>> = BTreeMap::new();
    for r in reports {
        by_suite.entry(r.suite).or_default().push(r);
    }
    for (suite, rs) in by_suite {
        files.insert(format!("{}.csv", suite.name()), summary_csv(&rs)?);
    }
    Ok(files)
}

/// Mean percent error and count of scored values per parameter; per-flow
/// queuing entries are pooled under `phi_q`.
pub fn mean_errors(reports: &[ValidationReport]) -> BTreeMap<String, (f64, usize)> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in reports.iter().filter(|r| r.status == Status::Ok) {
        for p in r.params.iter().filter(|p| p.scored) {
            let key = if p.name.starts_with("phi_q[") { "phi_q".to_string() } else { p.name.clone() };
            let e = acc.entry(key).or_default();
            e.0 += p.pct_error.unwrap_or(0.0);
            e.1 += 1;
        }
    }
    acc.values_mut().for_each(|(s, n)| *s /= *n as f64);
    acc
}
