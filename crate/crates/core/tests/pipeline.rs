use wlan_lens::flowsense::{sta_handshakes, FlowConfig};
use wlan_lens::trace::{parse_log, read_ap_access, read_ap_log, write_ap_access, write_ap_log, LogKind, Parsed};
use wlan_lens::uscope::{estimate_for_sta, UscopeConfig};
use wlan_lens::validate::{uscope_scenario, validate_uscope, validate_vst, vst_scenario, Status, Suite, UscopeKnobs, VstKnobs};
use wlan_lens::vst::{estimate_vst, VstConfig};
use wlan_lens::wlansim::{run, sta_addr};

#[test]
fn estimates_survive_the_log_format() {
    let sc = vst_scenario(11, 0, VstKnobs { hidden: Some(0.0), thinning: Some(2), mobility: false });
    let sim = run(&sc.config, &sc.topology).unwrap();

    let mut log = Vec::new();
    write_ap_log(&mut log, &sim.ap_log).unwrap();
    let mut acc = Vec::new();
    write_ap_access(&mut acc, &sim.ap_access).unwrap();
    let records = read_ap_log(log.as_slice()).unwrap().records;
    let access = read_ap_access(acc.as_slice()).unwrap().records;

    let sta = sta_addr(sc.target);
    let cfg = VstConfig::default();
    let direct = estimate_vst(&sim.ap_log, Some(&sim.ap_access), &sta, &cfg).unwrap();
    let reread = estimate_vst(&records, Some(&access), &sta, &cfg).unwrap();
    assert_eq!(direct.estimate.theta_dl_mbps, reread.estimate.theta_dl_mbps);
    assert!(direct.estimate.theta_dl_mbps > 0.0 && direct.estimate.theta_ul_mbps > 0.0);
    assert!(direct.handshakes > 100);
}

#[test]
fn uscope_components_fit_inside_latency() {
    let sc = uscope_scenario(5, 1, UscopeKnobs { contenders: Some(2), udp_mbps: Some(1.0), ..UscopeKnobs::default() });
    let sim = run(&sc.config, &sc.topology).unwrap();
    let hs = sta_handshakes(&sim.ap_log, &sta_addr(sc.target), &FlowConfig::default()).unwrap();
    let b = estimate_for_sta(&hs, &UscopeConfig::default()).unwrap();
    assert!(b.l_uplink > 0.0);
    assert!(b.phi_access <= b.l_uplink * 1.05);
    assert!(b.phi_queuing >= 0.0 && b.psi_defer >= 0.0 && b.r_bar >= 0.0);
    assert!(b.theta_defer_1 >= 0.0);
}

#[test]
fn validation_reports_are_deterministic() {
    let sc = vst_scenario(3, 2, VstKnobs { hidden: None, thinning: None, mobility: false });
    let a = validate_vst(Suite::VstTopology, 3, &sc);
    assert_eq!(a.status, Status::Ok);
    assert_eq!(a, validate_vst(Suite::VstTopology, 3, &sc));

    let sc = uscope_scenario(3, 0, UscopeKnobs { udp_mbps: Some(0.0), ..UscopeKnobs::default() });
    let r = validate_uscope(Suite::UscopeQueuing, 3, &sc);
    assert_eq!(r.status, Status::Ok);
    // no competing uplink traffic leaves nothing to queue behind
    let q = r.param("phi_queuing").unwrap();
    assert!(q.estimate < 50.0, "queuing {}", q.estimate);
}

#[test]
fn parse_log_reads_a_file_and_keeps_bad_rows_aside() {
    let sc = uscope_scenario(2, 0, UscopeKnobs { duration_us: 5e5, ..UscopeKnobs::default() });
    let sim = run(&sc.config, &sc.topology).unwrap();
    let mut text = Vec::new();
    write_ap_log(&mut text, &sim.ap_log).unwrap();
    text.extend_from_slice(b"1,2,UL,a,b\n");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ap_log.csv");
    std::fs::write(&path, text).unwrap();
    let Parsed::Ap(log) = parse_log(&path, LogKind::ApLog).unwrap() else { panic!("wrong kind") };
    assert_eq!(log.records, sim.ap_log);
    assert_eq!(log.malformed.len(), 1);
}
