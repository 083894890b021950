//! Screens clients for a global, quiet IPID counter. Three simulated
//! clients: a good one, a noisy one and one with per-destination counters.

use std::net::Ipv4Addr;

use inferscan::endpoint::{EndpointSpec, Role};
use inferscan::idlescan::{qualify_client, QualifyConfig};
use inferscan::simnet::{ClientSpec, IpidMode, PairPolicy, PairPreset, PAIR_MM, PAIR_VPS};
use inferscan::prefix::Ipv4Prefix;
use inferscan::transport::{IsnGenerator, SimNetwork};

fn main() {
    let mut scenario = PairPreset::new(PairPolicy::Open, 7).scenario();
    let clients = [
        (Ipv4Addr::new(10, 9, 0, 1), IpidMode::Global, 0.2),
        (Ipv4Addr::new(10, 9, 0, 2), IpidMode::Global, 12.0),
        (Ipv4Addr::new(10, 9, 0, 3), IpidMode::PerDestination, 0.2),
    ];
    for (addr, mode, rate) in clients {
        scenario.clients.push(ClientSpec {
            addr: Ipv4Prefix::host(addr),
            ipid: Some(mode),
            background_rate: Some(rate),
            rst_policy: None,
            initial_ipid: None,
            downtime: None,
        });
    }
    let net = SimNetwork::new(scenario.build());
    let (a, b) = (net.transport(PAIR_MM), net.transport(PAIR_VPS));
    let cfg = QualifyConfig {
        window: 120.0,
        ..QualifyConfig::default()
    };
    let mut isn = IsnGenerator::new(7);
    for (addr, mode, rate) in clients {
        let spec = EndpointSpec::new(addr, 80, Role::Client);
        let q = qualify_client([&a, &b], &spec, &cfg, &mut isn).expect("qualification");
        println!("{addr:<12} {mode:?} counter, {rate:>4} pkt/s background -> {q:?}");
    }
}
