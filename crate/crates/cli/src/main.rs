//! `wlan-lens`: simulate, estimate, model and validate from the command line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use wlan_lens::flowsense::{sta_handshakes, FlowConfig};
use wlan_lens::mumodel::{
    joint_distribution_phb, regime_report, throughput_bounds, throughput_downlink, throughput_full_aggregation,
    throughput_uplink, DelayMode, SystemParams, TimelineParams, DEFAULT_MARGIN, UNLIMITED,
};
use wlan_lens::phy::PROFILE_ENV;
use wlan_lens::trace::{
    read_ap_access, read_ap_log, write_ap_access, write_ap_log, write_ground_truth, Direction, PacketRecord,
};
use wlan_lens::uscope::{estimate_for_sta, UscopeConfig};
use wlan_lens::validate::{self, model, Status, Suite, UscopeKnobs, VstKnobs};
use wlan_lens::vst::{estimate_vst, VstConfig};
use wlan_lens::wlansim::{run, SimConfig, Topology};
use wlan_lens::PhyProfile;

/// Exit status when some scenarios or stations failed and the rest ran.
const PARTIAL_FAILURE: u8 = 2;

#[derive(Parser)]
#[command(name = "wlan-lens", version, about = "Passive WLAN speed and latency analytics")]
struct Cli {
    /// Seed for every stochastic step.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Directory for output files.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Worker threads for scenario sweeps (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// JSON configuration for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Timing profile (reference, short-difs); a --config file for
    /// `simulate` carries its own.
    #[arg(long, global = true, env = PROFILE_ENV)]
    profile: Option<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the simulator and write the AP log, ground truth and access log.
    Simulate(SimulateArgs),
    /// Estimate from an AP log.
    #[command(subcommand)]
    Estimate(EstimateCmd),
    /// Evaluate the analytical throughput model.
    Model(ModelArgs),
    /// Run a validation suite against the simulator.
    Validate(ValidateArgs),
    /// Aggregate validation reports into CSV tables.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioKind {
    Vst,
    Uscope,
}

#[derive(Args)]
struct SimulateArgs {
    /// Built-in scenario family, used when no --config is given.
    #[arg(long, value_enum, default_value = "vst")]
    scenario: ScenarioKind,
    /// Scenario index within the family.
    #[arg(long, default_value_t = 0)]
    index: usize,
}

#[derive(Args)]
struct LogArgs {
    /// AP log CSV.
    #[arg(long, visible_alias = "ap-log")]
    log: PathBuf,
    /// Station hardware address; every station with uplink traffic when unset.
    #[arg(long)]
    sta: Option<String>,
    /// Estimate over consecutive windows of this many seconds.
    #[arg(long)]
    window_s: Option<f64>,
    /// Report path; `<out-dir>/vst.json` or `uscope.json` otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the reconstructed handshakes as JSON.
    #[arg(long)]
    dump_handshakes: Option<PathBuf>,
}

#[derive(Subcommand)]
enum EstimateCmd {
    /// TCP download and upload speed of a station.
    Vst {
        #[command(flatten)]
        log: LogArgs,
        /// AP access log CSV, when the AP exports one.
        #[arg(long)]
        access: Option<PathBuf>,
        /// ACK thinning ratio of the station.
        #[arg(long, default_value_t = 2)]
        thinning: u32,
    },
    /// Uplink latency breakdown of a station.
    Uscope {
        #[command(flatten)]
        log: LogArgs,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Regime,
    Downlink,
    Uplink,
    Fullagg,
    Bounds,
    Sweep,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepVar {
    /// B_AP = B_STA
    B,
    BAp,
    BSta,
    DMs,
    WMax,
}

#[derive(Clone, Copy, ValueEnum)]
enum DelayArg {
    Zero,
    Small,
    General,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_enum)]
    mode: Mode,
    /// System parameters as JSON; the reference system otherwise. Takes
    /// precedence over --config.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Output path: the CSV for `sweep`, the JSON result otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    k: Option<u32>,
    #[arg(long)]
    f_s: Option<u32>,
    #[arg(long)]
    w_max: Option<u32>,
    #[arg(long)]
    t_f: Option<u32>,
    /// Two-way backbone delay, ms.
    #[arg(long)]
    d_ms: Option<f64>,
    #[arg(long)]
    n_ap: Option<u32>,
    #[arg(long)]
    n_sta: Option<u32>,
    /// AP aggregation limit, or "inf".
    #[arg(long, value_parser = parse_limit)]
    b_ap: Option<u32>,
    /// Station aggregation limit, or "inf".
    #[arg(long, value_parser = parse_limit)]
    b_sta: Option<u32>,
    /// Delay treatment for full aggregation; picked from D when unset.
    #[arg(long, value_enum)]
    delay_mode: Option<DelayArg>,
    #[arg(long, default_value_t = DEFAULT_MARGIN)]
    margin: f64,
    /// Swept parameter.
    #[arg(long, value_enum, default_value = "b")]
    sweep: SweepVar,
    /// Values of the swept parameter.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32,64,128")]
    values: Vec<f64>,
    /// Simulated seconds per sweep point.
    #[arg(long, default_value_t = validate::MODEL_SWEEP_SECONDS)]
    seconds: f64,
}

#[derive(Args)]
struct ValidateArgs {
    /// Suite name, e.g. vst-topology or UscopeQueuing.
    #[arg(long)]
    suite: String,
    /// Seeds to run; defaults to --seed.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
}

#[derive(Args)]
struct ReportArgs {
    /// Validation report JSON files.
    inputs: Vec<PathBuf>,
}

fn parse_limit(s: &str) -> Result<u32, String> {
    match s {
        "inf" | "unlimited" => Ok(UNLIMITED),
        _ => s.parse::<u32>().map_err(|e| e.to_string()),
    }
}

/// Simulator input file: configuration plus an optional topology. Without
/// one, `stations` (or the highest station named by a flow) sizes a plain
/// BSS.
#[derive(Serialize, Deserialize)]
struct SimFile {
    #[serde(default)]
    config: SimConfig,
    #[serde(default)]
    topology: Option<Topology>,
    #[serde(default)]
    stations: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(PARTIAL_FAILURE),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// `Ok(false)` flags a partial failure.
fn dispatch(cli: &Cli) -> Result<bool> {
    let profile = match cli.profile.as_deref() {
        None | Some("") => PhyProfile::reference(),
        Some(name) => PhyProfile::by_name(name)?,
    };
    fs::create_dir_all(&cli.out_dir).with_context(|| format!("creating {}", cli.out_dir.display()))?;
    match &cli.cmd {
        Cmd::Simulate(a) => simulate(cli, a, &profile),
        Cmd::Estimate(e) => estimate(cli, e, &profile),
        Cmd::Model(m) => model_cmd(cli, m, &profile),
        Cmd::Validate(v) => validate_cmd(cli, v),
        Cmd::Report(r) => report(cli, r),
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_out(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

/// Print to stdout; a closed pipe (`| head`) is not an error.
fn print(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn emit(dir: &Path, name: &str, v: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(v)?;
    write_out(dir, name, text.as_bytes())?;
    print(&text)
}

fn simulate(cli: &Cli, a: &SimulateArgs, profile: &PhyProfile) -> Result<bool> {
    let (mut config, topology, id) = match &cli.config {
        Some(path) => {
            let f: SimFile = read_json(path)?;
            let n = f.stations.unwrap_or_else(|| f.config.flows.iter().map(|t| t.sta() + 1).max().unwrap_or(1));
            (f.config, f.topology.unwrap_or_else(|| Topology::bss(n)), path.display().to_string())
        }
        None => {
            let sc = match a.scenario {
                ScenarioKind::Vst => {
                    validate::vst_scenario(cli.seed, a.index, VstKnobs { hidden: None, thinning: None, mobility: false })
                }
                ScenarioKind::Uscope => validate::uscope_scenario(cli.seed, a.index, UscopeKnobs::default()),
            };
            let config = sc.config.with_profile(profile);
            (config, sc.topology, sc.id)
        }
    };
    config.seed = cli.seed;
    let r = run(&config, &topology)?;
    let mut buf = Vec::new();
    write_ap_log(&mut buf, &r.ap_log)?;
    write_out(&cli.out_dir, "ap_log.csv", &buf)?;
    buf.clear();
    write_ground_truth(&mut buf, &r.ground_truth)?;
    write_out(&cli.out_dir, "ground_truth.csv", &buf)?;
    buf.clear();
    write_ap_access(&mut buf, &r.ap_access)?;
    write_out(&cli.out_dir, "ap_access.csv", &buf)?;
    emit(
        &cli.out_dir,
        "simulation.json",
        &json!({ "scenario": id, "seed": cli.seed, "config": config, "topology": topology, "result": r }),
    )?;
    Ok(true)
}

/// Stations that sent anything up, in address order.
fn uplink_stations(records: &[PacketRecord]) -> Vec<String> {
    let mut s: Vec<String> =
        records.iter().filter(|r| r.direction == Direction::Uplink).map(|r| r.src_addr.clone()).collect();
    s.sort();
    s.dedup();
    s
}

/// Consecutive `[start, end)` windows of `len_us` covering the records;
/// one window over everything when no length is given.
fn windows(records: &[PacketRecord], len_us: Option<f64>) -> Vec<(u64, u64)> {
    let (Some(first), Some(last)) = (records.first(), records.iter().map(|r| r.ts_end).max()) else {
        return Vec::new();
    };
    match len_us {
        None => vec![(first.ts_start, last + 1)],
        Some(w) => {
            let w = (w as u64).max(1);
            (first.ts_start..=last).step_by(w as usize).map(|a| (a, a + w)).collect()
        }
    }
}

fn in_window<T>(xs: &[T], w: (u64, u64), ts: fn(&T) -> u64) -> &[T] {
    let lo = xs.partition_point(|x| ts(x) < w.0);
    let hi = xs.partition_point(|x| ts(x) < w.1);
    &xs[lo..hi]
}

fn estimate(cli: &Cli, e: &EstimateCmd, profile: &PhyProfile) -> Result<bool> {
    let (log, name) = match e {
        EstimateCmd::Vst { log, .. } => (log, "vst.json"),
        EstimateCmd::Uscope { log } => (log, "uscope.json"),
    };
    let parsed = read_ap_log(fs::File::open(&log.log).with_context(|| format!("opening {}", log.log.display()))?)?;
    if !parsed.malformed.is_empty() {
        log::warn!("{} malformed rows skipped", parsed.malformed.len());
    }
    let records = parsed.records;
    let stations = match &log.sta {
        Some(s) => vec![s.clone()],
        None => uplink_stations(&records),
    };
    if stations.is_empty() {
        bail!("no station with uplink traffic in {}", log.log.display());
    }
    let access = match e {
        EstimateCmd::Vst { access: Some(p), .. } => {
            Some(read_ap_access(fs::File::open(p).with_context(|| format!("opening {}", p.display()))?)?.records)
        }
        _ => None,
    };
    if let Some(path) = &log.dump_handshakes {
        let dump: Vec<_> = stations
            .iter()
            .filter_map(|sta| sta_handshakes(&records, sta, &FlowConfig::default()).ok())
            .collect();
        fs::write(path, serde_json::to_string_pretty(&dump)?).with_context(|| format!("writing {}", path.display()))?;
    }

    let one = |recs: &[PacketRecord], acc: Option<&[wlan_lens::trace::ApAccessRecord]>, sta: &str| -> Result<Value, String> {
        match e {
            EstimateCmd::Vst { thinning, .. } => {
                let cfg = VstConfig { thinning_n: *thinning, profile: profile.clone(), ..VstConfig::default() };
                let r = estimate_vst(recs, acc, sta, &cfg).map_err(|e| e.to_string())?;
                Ok(json!({ "status": "ok", "report": r }))
            }
            EstimateCmd::Uscope { .. } => {
                let sh = sta_handshakes(recs, sta, &FlowConfig::default()).map_err(|e| e.to_string())?;
                let b = estimate_for_sta(&sh, &UscopeConfig::from_profile(profile)).map_err(|e| e.to_string())?;
                Ok(json!({ "status": "ok", "breakdown": b }))
            }
        }
    };
    let failed = |err: String| json!({ "status": "failed", "detail": err });

    let spans = windows(&records, log.window_s.map(|s| s * 1e6));
    let (mut ok, mut total) = (0, 0);
    let mut results = serde_json::Map::new();
    for sta in &stations {
        let mut per_window = Vec::new();
        for &w in &spans {
            let recs = in_window(&records, w, |r| r.ts_start);
            let acc = access.as_deref().map(|a| in_window(a, w, |a| a.ts_start));
            let mut v = one(recs, acc, sta).unwrap_or_else(failed);
            ok += (v["status"] == "ok") as usize;
            total += 1;
            if log.window_s.is_some() {
                v["window_start_us"] = json!(w.0);
                v["window_end_us"] = json!(w.1);
            }
            per_window.push(v);
        }
        let v = if log.window_s.is_some() { Value::Array(per_window) } else { per_window.remove(0) };
        results.insert(sta.clone(), v);
    }
    let report = Value::Object(results);
    match &log.out {
        Some(path) => {
            let text = serde_json::to_string_pretty(&report)?;
            fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?;
            print(&text)?;
        }
        None => emit(&cli.out_dir, name, &report)?,
    }
    if ok == 0 {
        bail!("estimation failed for every station");
    }
    Ok(ok == total)
}

fn system_params(cli: &Cli, m: &ModelArgs) -> Result<SystemParams> {
    let mut p = match m.params.as_ref().or(cli.config.as_ref()) {
        Some(path) => read_json(path)?,
        None => SystemParams::reference(),
    };
    let set = |dst: &mut u32, v: Option<u32>| {
        if let Some(v) = v {
            *dst = v;
        }
    };
    set(&mut p.k, m.k);
    set(&mut p.f_s, m.f_s);
    set(&mut p.w_max, m.w_max);
    set(&mut p.t_f, m.t_f);
    set(&mut p.n_ap, m.n_ap);
    set(&mut p.n_sta, m.n_sta);
    set(&mut p.b_ap, m.b_ap);
    set(&mut p.b_sta, m.b_sta);
    if let Some(d) = m.d_ms {
        p.d_us = d * 1000.0;
    }
    p.validate()?;
    Ok(p)
}

fn model_cmd(cli: &Cli, m: &ModelArgs, profile: &PhyProfile) -> Result<bool> {
    let p = system_params(cli, m)?;
    let t = TimelineParams::new(profile.clone(), &p, 1024);
    let out = match m.mode {
        Mode::Regime => serde_json::to_value(regime_report(&p, &t, m.margin)?)?,
        Mode::Downlink => json!({ "lambda_mbps": throughput_downlink(&p, &t, m.margin)? }),
        Mode::Uplink => json!({ "lambda_mbps": throughput_uplink(&p, &t, &joint_distribution_phb(p.k), m.margin)? }),
        Mode::Fullagg => {
            let mode = match m.delay_mode {
                Some(DelayArg::Zero) => DelayMode::Zero,
                Some(DelayArg::Small) => DelayMode::Small,
                Some(DelayArg::General) => DelayMode::General,
                None if p.d_us > 0.0 => DelayMode::General,
                None => DelayMode::Zero,
            };
            json!({ "mode": mode, "lambda_mbps": throughput_full_aggregation(&p, &t, mode, m.margin)? })
        }
        Mode::Bounds => serde_json::to_value(throughput_bounds(&p, &t))?,
        Mode::Sweep => return sweep(cli, m, &p),
    };
    let report = json!({ "params": p, "result": out });
    match &m.out {
        Some(path) => {
            let text = serde_json::to_string_pretty(&report)?;
            fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?;
            print(&text)?;
        }
        None => emit(&cli.out_dir, "model.json", &report)?,
    }
    Ok(true)
}

fn sweep(cli: &Cli, m: &ModelArgs, base: &SystemParams) -> Result<bool> {
    let points: Vec<(f64, SystemParams)> = m
        .values
        .iter()
        .map(|&x| {
            let mut p = base.clone();
            match m.sweep {
                SweepVar::B => (p.b_ap, p.b_sta) = (x as u32, x as u32),
                SweepVar::BAp => p.b_ap = x as u32,
                SweepVar::BSta => p.b_sta = x as u32,
                SweepVar::DMs => p.d_us = x * 1000.0,
                SweepVar::WMax => p.w_max = x as u32,
            }
            (x, p)
        })
        .collect();
    for (_, p) in &points {
        p.validate()?;
    }
    let pool = rayon_pool(cli.jobs)?;
    let res = pool.install(|| model::sweep(&points, m.seconds, cli.seed))?;
    let mut csv = String::from("x,regime,model_mbps,sim_mbps\n");
    for r in &res {
        let model = r.model.map(|v| v.to_string()).unwrap_or_default();
        csv.push_str(&format!("{},{:?},{},{}\n", r.x, r.regime, model, r.sim));
    }
    match &m.out {
        Some(path) => fs::write(path, &csv).with_context(|| format!("writing {}", path.display()))?,
        None => {
            write_out(&cli.out_dir, "sweep.csv", csv.as_bytes())?;
        }
    }
    emit(&cli.out_dir, "sweep.json", &serde_json::to_value(&res)?)?;
    Ok(true)
}

fn rayon_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?)
}

fn validate_cmd(cli: &Cli, v: &ValidateArgs) -> Result<bool> {
    let suite: Suite = v.suite.parse()?;
    let seeds = if v.seeds.is_empty() { vec![cli.seed] } else { v.seeds.clone() };
    let reports = validate::cmd_validate(suite, &seeds, cli.jobs)?;
    write_out(&cli.out_dir, "reports.json", serde_json::to_string_pretty(&reports)?.as_bytes())?;
    write_out(&cli.out_dir, "summary.csv", validate::summary_csv(&reports)?.as_bytes())?;
    let failed = reports.iter().filter(|r| r.status != Status::Ok).count();
    let errors: serde_json::Map<String, Value> = validate::mean_errors(&reports)
        .into_iter()
        .map(|(k, (e, n))| (k, json!({ "mean_pct_error": e, "scored": n })))
        .collect();
    print(&serde_json::to_string_pretty(&json!({
        "suite": suite.name(),
        "seeds": seeds,
        "scenarios": reports.len(),
        "failed": failed,
        "mean_errors": errors,
    }))?)?;
    if !reports.is_empty() && failed == reports.len() {
        bail!("every scenario failed");
    }
    Ok(failed == 0)
}

fn report(cli: &Cli, r: &ReportArgs) -> Result<bool> {
    for (name, body) in validate::cmd_report(&r.inputs)? {
        let path = write_out(&cli.out_dir, &name, body.as_bytes())?;
        print(&path.display().to_string())?;
    }
    Ok(true)
}
