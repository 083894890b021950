//! One hybrid idle-scan round per filtering policy, against a simulated
//! client/server pair, with the fitted amplitude for each.
//!
//! ```text
//! cargo run --example idle_scan_cases
//! ```

use inferscan::classify::{classify_series, ClassifyConfig};
use inferscan::idlescan::{IdleScanner, ScanRoundConfig};
use inferscan::simnet::{PairPolicy, PairPreset, PAIR_MM};
use inferscan::transport::SimNetwork;

fn main() {
    let cfg = ScanRoundConfig::default();
    println!("{:<22} {:<22} {:>9} {:>7}", "policy", "label", "amplitude", "p,q");
    for policy in PairPolicy::ALL {
        let preset = PairPreset {
            background_rate: 0.5,
            ..PairPreset::new(policy, 42)
        };
        let net = SimNetwork::new(preset.scenario().build());
        let mm = net.transport(PAIR_MM);
        let out = IdleScanner::new(&mm, cfg.clone(), 42)
            .run_scan_round(&preset.client(), &preset.server())
            .expect("simulated round");
        let Some(series) = out.series.as_ref().filter(|_| out.admitted()) else {
            println!("{policy:<22?} voided: {:?}", out.voided);
            continue;
        };
        let (label, iv) = classify_series(series, &ClassifyConfig::default());
        let order = iv.map(|i| format!("{},{}", i.diagnostics.p, i.diagnostics.q)).unwrap_or_default();
        println!(
            "{:<22} {:<22} {:>9.3} {:>7}",
            format!("{policy:?}"),
            label.case.label(),
            label.amplitude.unwrap_or(f64::NAN),
            order
        );
    }
}
