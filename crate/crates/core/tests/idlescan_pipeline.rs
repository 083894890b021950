use inferscan::classify::{classify_series, Case, ClassifyConfig};
use inferscan::idlescan::{IdleScanner, RoundOutcome, ScanRoundConfig};
use inferscan::simnet::{PairPolicy, PairPreset, PAIR_MM};
use inferscan::transport::SimNetwork;

fn round(preset: &PairPreset, cfg: ScanRoundConfig) -> RoundOutcome {
    let net = SimNetwork::new(preset.scenario().build());
    let mm = net.transport(PAIR_MM);
    let mut scanner = IdleScanner::new(&mm, cfg, preset.seed);
    scanner
        .run_scan_round(&preset.client(), &preset.server())
        .unwrap()
}

fn truth(p: PairPolicy) -> Case {
    match p {
        PairPolicy::Open => Case::NoPacketsDropped,
        PairPolicy::DropServerToClient => Case::ServerToClientDrop,
        PairPolicy::DropClientToServer => Case::ClientToServerDrop,
    }
}

#[test]
fn noiseless_rounds_are_admitted_and_labelled() {
    for policy in PairPolicy::ALL {
        let out = round(&PairPreset::new(policy, 1), ScanRoundConfig::default());
        assert!(out.admitted(), "{policy:?}: {:?}", out.voided);
        let (label, iv) = classify_series(out.series.as_ref().unwrap(), &ClassifyConfig::default());
        assert_eq!(label.case, truth(policy), "{policy:?} {iv:?}");
    }
}

#[test]
fn open_path_amplitude_is_one() {
    let out = round(&PairPreset::new(PairPolicy::Open, 2), ScanRoundConfig::default());
    let (label, _) = classify_series(out.series.as_ref().unwrap(), &ClassifyConfig::default());
    assert!((label.amplitude.unwrap() - 1.0).abs() < 1e-9, "{label:?}");
}

#[test]
fn blocked_reverse_path_amplitude_counts_retransmissions() {
    // Oracle: without backlog pressure each spoofed SYN yields the original
    // SYN/ACK plus every retransmission, each answered by one RST.
    let cfg = ScanRoundConfig {
        spoof_rate: 1.0,
        ..ScanRoundConfig::default()
    };
    for max in [3, 4, 5] {
        let preset = PairPreset {
            max_retransmissions: max,
            ..PairPreset::new(PairPolicy::DropClientToServer, 3)
        };
        let out = round(&preset, cfg.clone());
        let (label, _) = classify_series(out.series.as_ref().unwrap(), &ClassifyConfig::default());
        let a = label.amplitude.unwrap();
        assert!((a - f64::from(max + 1)).abs() < 1e-9, "max {max}: {a}");
    }
}

#[test]
fn ipid_offset_does_not_change_label() {
    let out = round(&PairPreset::new(PairPolicy::Open, 4), ScanRoundConfig::default());
    let series = out.series.unwrap();
    let mut shifted = series.clone();
    for s in &mut shifted.samples {
        s.ipid = s.ipid.wrapping_add(40_000);
    }
    let cfg = ClassifyConfig::default();
    let (a, _) = classify_series(&series, &cfg);
    let (b, _) = classify_series(&shifted, &cfg);
    assert_eq!(a, b);
}

#[test]
fn doubled_phases_keep_label() {
    let long = ScanRoundConfig {
        scan_duration: 240.0,
        base_duration: 120.0,
        ..ScanRoundConfig::default()
    };
    for policy in PairPolicy::ALL {
        let preset = PairPreset::new(policy, 5);
        let a = round(&preset, ScanRoundConfig::default());
        let b = round(&preset, long.clone());
        let cfg = ClassifyConfig::default();
        let (la, _) = classify_series(a.series.as_ref().unwrap(), &cfg);
        let (lb, _) = classify_series(b.series.as_ref().unwrap(), &cfg);
        assert_eq!(la.case, lb.case, "{policy:?}");
    }
}
