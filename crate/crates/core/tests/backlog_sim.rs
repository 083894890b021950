use inferscan::backlog::{BacklogConfig, BacklogScanner, InvalidReason, ScanKind, Verdict};
use inferscan::simnet::{BacklogPreset, Downtime, PAIR_MM, PAIR_SERVER, PAIR_VPS};
use inferscan::transport::SimNetwork;

fn net(preset: &BacklogPreset) -> SimNetwork {
    SimNetwork::new(preset.scenario().build())
}

#[test]
fn grid_is_inferred_without_loss() {
    for syn_dropped in [false, true] {
        for rst_dropped in [false, true] {
            let p = BacklogPreset::new(syn_dropped, rst_dropped, 1);
            let n = net(&p);
            let (mm, vps) = (n.transport(PAIR_MM), n.transport(PAIR_VPS));
            let mut s = BacklogScanner::new(&mm, &vps, BacklogConfig::default(), 7);
            let syn = s.syn_scan(&p.relay()).unwrap();
            let peak = n.with_sim(|sim| sim.server(PAIR_SERVER).unwrap().peak_occupancy());
            let rst = s.rst_scan(&p.relay()).unwrap();
            let want = |d: bool| if d { Verdict::Dropped } else { Verdict::Passes };
            assert_eq!(syn.verdict, want(syn_dropped), "{syn:?}");
            assert_eq!(rst.verdict, want(rst_dropped), "{rst:?}");
            if !syn_dropped {
                assert_eq!(peak, 150);
            }
        }
    }
}

#[test]
fn baseline_of_default_server() {
    let p = BacklogPreset::new(false, false, 2);
    let n = net(&p);
    let (mm, vps) = (n.transport(PAIR_MM), n.transport(PAIR_VPS));
    let mut s = BacklogScanner::new(&mm, &vps, BacklogConfig::default(), 1);
    let b = s.baseline_probe(&p.relay()).unwrap();
    assert_eq!(b.retransmissions, 5);
    for (g, want) in b.gaps.iter().zip([1.0, 2.0, 4.0, 8.0, 16.0]) {
        assert!((g - want).abs() < 1e-9, "{:?}", b.gaps);
    }
}

#[test]
fn four_retransmission_stack_is_invalid() {
    let p = BacklogPreset {
        max_retransmissions: 4,
        ..BacklogPreset::new(false, false, 3)
    };
    let n = net(&p);
    let (mm, vps) = (n.transport(PAIR_MM), n.transport(PAIR_VPS));
    let mut s = BacklogScanner::new(&mm, &vps, BacklogConfig::default(), 1);
    let r = s.syn_scan(&p.relay()).unwrap();
    assert_eq!(r.verdict, Verdict::Invalid(InvalidReason::NonDefaultStack));
    assert_eq!(r.observed_retransmissions.len(), 5);
}

#[test]
fn closed_port_is_offline() {
    let p = BacklogPreset::new(false, false, 4);
    let n = net(&p);
    let (mm, vps) = (n.transport(PAIR_MM), n.transport(PAIR_VPS));
    let mut s = BacklogScanner::new(&mm, &vps, BacklogConfig::default(), 1);
    let mut relay = p.relay();
    relay.port = 9999;
    let r = s.syn_scan(&relay).unwrap();
    assert_eq!(r.verdict, Verdict::Invalid(InvalidReason::Offline));
}

#[test]
fn restart_mid_scan_is_invalid() {
    let p = BacklogPreset::new(false, false, 5);
    let mut sc = p.scenario();
    sc.servers[0].downtime = Some(vec![Downtime {
        from_s: 72.0,
        to_s: 80.0,
    }]);
    let n = SimNetwork::new(sc.build());
    let (mm, vps) = (n.transport(PAIR_MM), n.transport(PAIR_VPS));
    let mut s = BacklogScanner::new(&mm, &vps, BacklogConfig::default(), 1);
    let r = s.syn_scan(&p.relay()).unwrap();
    assert!(!r.verdict.is_valid(), "{r:?}");
}

#[test]
fn zero_fill_is_under_filled() {
    let p = BacklogPreset::new(false, false, 6);
    let n = net(&p);
    let (mm, vps) = (n.transport(PAIR_MM), n.transport(PAIR_VPS));
    let cfg = BacklogConfig {
        rst_fill: 0,
        ..BacklogConfig::default()
    };
    let mut s = BacklogScanner::new(&mm, &vps, cfg, 1);
    let r = s.scan(ScanKind::Rst, &p.relay()).unwrap();
    assert_eq!(r.verdict, Verdict::Invalid(InvalidReason::UnderFill));
}

#[test]
fn more_fill_never_means_more_retransmissions() {
    let p = BacklogPreset::new(false, false, 7);
    let mut last = u32::MAX;
    for fill in [0, 60, 120, 123, 124, 130, 145] {
        let n = net(&p);
        let (mm, vps) = (n.transport(PAIR_MM), n.transport(PAIR_VPS));
        let cfg = BacklogConfig {
            syn_fill: fill,
            ..BacklogConfig::default()
        };
        let mut s = BacklogScanner::new(&mm, &vps, cfg, 1);
        let r = s.syn_scan(&p.relay()).unwrap();
        let max = *r.observed_retransmissions.iter().max().unwrap();
        assert!(max <= last, "fill {fill}: {max} > {last}");
        last = max;
    }
}
