//! Dual-port traceroutes into two entry networks. The COM backbone drops
//! the filtered port two hops past its entry outside 14:00-19:00; EDU
//! filters nothing.

use inferscan::analytics::{diurnal_series, hop_histogram, traceroute_table};
use inferscan::simnet::{TraceGroup, TracePreset, PAIR_MM};
use inferscan::tracer::{trace_campaign, PrefixTable, TraceSchedule, TracerConfig};
use inferscan::transport::{IsnGenerator, SimNetwork};

fn main() {
    let preset = TracePreset::new(
        11,
        vec![
            TraceGroup {
                label: "COM".into(),
                dests: 4,
                filter_depth: Some(2),
                active_hours: Some((0..24).filter(|h| !(14..=19).contains(h)).collect()),
            },
            TraceGroup {
                label: "EDU".into(),
                dests: 4,
                filter_depth: None,
                active_hours: None,
            },
        ],
    );
    let table = PrefixTable::read_csv(TracePreset::prefix_csv().as_bytes()).expect("prefix table");
    let net = SimNetwork::new(preset.scenario().build());
    let mm = net.transport(PAIR_MM);
    let schedule = TraceSchedule {
        hours: 24,
        days: 1,
        start_hour: 0,
    };
    let cfg = TracerConfig::default();
    let mut isn = IsnGenerator::new(11);
    let runs = trace_campaign(&mm, &preset.all_dests(), &table, &schedule, &cfg, &mut isn).expect("campaign");

    traceroute_table(&runs, cfg.filtered_port)
        .write_csv(std::io::stdout())
        .expect("stdout");
    println!("\nhops into CN before the filtered port stalls: {:?}", hop_histogram(&runs, &table, "CN", cfg.filtered_port));
    println!("\nunfiltered pairs by hour:");
    for (hour, n) in diurnal_series(&runs, cfg.filtered_port) {
        println!("{hour:02} {}", "#".repeat(n as usize));
    }
}
