//! Temporal and spatial association of "no packets dropped" outcomes. The
//! synthetic clients form a western cluster that gets through in bursts
//! and an eastern cluster that almost never does.

use std::net::Ipv4Addr;

use inferscan::analytics::{
    grid_sample, heatmap, source_series, spatial_association, temporal_association, AnalyticsConfig, GridSpec,
};
use inferscan::classify::{Case, CaseLabel};
use inferscan::endpoint::{EndpointSpec, Role};
use inferscan::idlescan::IdleScanRecord;
use inferscan::transport::Timestamp;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let server = EndpointSpec::new(Ipv4Addr::new(172, 16, 0, 1), 9001, Role::TorRelay);
    let mut records = Vec::new();
    for i in 0..40u8 {
        let west = i < 20;
        let (lat, lon) = if west { (36.0, 101.0) } else { (31.0, 121.0) };
        let client = EndpointSpec::new(Ipv4Addr::new(10, 2, 0, i), 80, Role::Client)
            .with_coords(lat + rng.random_range(-2.0..2.0), lon + rng.random_range(-2.0..2.0))
            .with_region("CN");
        let mut open = false;
        for hour in 0..72u64 {
            // A two-state chain: open hours tend to follow open hours.
            let stay = if west { 0.8 } else { 0.3 };
            let start = if west { 0.3 } else { 0.02 };
            open = rng.random_bool(if open { stay } else { start });
            let case = if open { Case::NoPacketsDropped } else { Case::ServerToClientDrop };
            records.push(IdleScanRecord {
                client: client.clone(),
                server: server.clone(),
                round: 0,
                slot: hour as usize,
                hour: (hour % 24) as u8,
                timestamp: Timestamp::from_secs(hour * 3600),
                label: CaseLabel {
                    case,
                    amplitude: Some(if open { 1.0 } else { 0.0 }),
                    confidence: 1.0,
                },
                diagnostics: None,
                voided: None,
            });
        }
    }

    let cfg = AnalyticsConfig::default();
    let series = source_series(&records, Case::NoPacketsDropped, &cfg);
    let p = temporal_association(&series, 6, cfg.lag_mode, cfg.averaging);
    println!("P(open at t+L | open at t):");
    for (lag, v) in p.iter().enumerate() {
        println!("  L={:<2} {v:.3}", lag + 1);
    }
    println!("spatial association:");
    for k in [1, 3, 5, 10] {
        println!("  k={k:<2} r={:.3}", spatial_association(&series, k).expect("enough sources"));
    }
    let hot = heatmap(&series).into_iter().filter(|(_, _, n)| *n > 20).count();
    println!("{hot} of {} clients were open for more than 20 hours", series.len());

    let candidates: Vec<EndpointSpec> = series.iter().map(|s| s.source.clone()).collect();
    let picked = grid_sample(&candidates, &GridSpec::default(), 6, 1);
    let addrs: Vec<String> = picked.iter().map(|e| e.addr.to_string()).collect();
    println!("grid sample of 6: {}", addrs.join(" "));
}
