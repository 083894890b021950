use std::path::PathBuf;

use inferscan::campaign::{run_sim_campaign, write_campaign_outputs, CampaignConfig};
use inferscan::classify::Case;
use inferscan::endpoint::load_endpoints;
use inferscan::simnet::Scenario;
use inferscan::store::{idle_records, prune_campaign};

fn fixture() -> (Scenario, PathBuf) {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    (Scenario::load(&dir.join("campaign.toml")).unwrap(), dir)
}

#[test]
fn small_campaign_matches_route_policies() {
    let (s, _) = fixture();
    let c = s.campaign.clone().unwrap();
    let clients = load_endpoints(&c.clients).unwrap();
    let servers = load_endpoints(&c.servers).unwrap();
    let cfg = CampaignConfig {
        seed: 3,
        rounds: 1,
        workers: 4,
        ..CampaignConfig::default()
    };
    let t = std::time::Instant::now();
    let rep = run_sim_campaign(&s, &clients[..5], &servers[13..], &cfg).unwrap();
    eprintln!("{:?}", t.elapsed());
    assert!(rep.disqualified.is_empty(), "{:?}", rep.disqualified);
    assert_eq!(rep.records.len(), 5 * 7);
    let kept = prune_campaign(&rep.records);
    assert_eq!(kept.admitted.len(), 5 * 6);
    for r in idle_records(&kept.admitted) {
        let host = r.server.addr.octets()[3];
        let want = match host {
            1..=15 => Case::ServerToClientDrop,
            16 | 17 => Case::ClientToServerDrop,
            _ => Case::NoPacketsDropped,
        };
        assert_eq!(r.label.case, want, "{} -> {}: {:?}", r.client.addr, r.server.addr, r.label);
    }

    let out = tempfile::tempdir().unwrap();
    let (d, p) = (out.path().join("data.jsonl"), out.path().join("report.csv"));
    write_campaign_outputs(&rep.records, &d, &p, 0).unwrap();
    let report = std::fs::read_to_string(&p).unwrap();
    assert!(report.starts_with("client_region,server_type"));
    assert!(report.contains("CN,Tor-Relay"));
}
