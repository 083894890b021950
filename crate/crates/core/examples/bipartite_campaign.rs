//! A small bipartite campaign over the bundled scenario: every client
//! against every relay once per round, with liveliness checks, then the
//! case table of the admitted rounds.
//!
//! ```text
//! cargo run --release --example bipartite_campaign -- [out_dir]
//! ```

use std::path::{Path, PathBuf};

use inferscan::analytics::case_table;
use inferscan::campaign::{run_sim_campaign, write_campaign_outputs, CampaignConfig};
use inferscan::endpoint::load_endpoints;
use inferscan::simnet::Scenario;
use inferscan::store;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    let out = std::env::args().nth(1).map_or_else(std::env::temp_dir, PathBuf::from);
    let scenario = Scenario::load(&dir.join("campaign.toml"))?;
    let clients = load_endpoints(&dir.join("campaign_clients.csv"))?;
    let servers = load_endpoints(&dir.join("campaign_servers.csv"))?;

    let cfg = CampaignConfig {
        seed: 1,
        rounds: 1,
        workers: 4,
        ..CampaignConfig::default()
    };
    let report = run_sim_campaign(&scenario, &clients[..6], &servers[12..], &cfg)?;
    println!(
        "{} rounds, {} clients disqualified, {} relays ineligible",
        report.records.len(),
        report.disqualified.len(),
        report.ineligible_servers.len()
    );

    let data = out.join("data.jsonl");
    write_campaign_outputs(&report.records, &data, &out.join("report.csv"), 16)?;
    let kept = store::prune_campaign(&report.records);
    println!("retention {:.3}; records written to {}", kept.retention().unwrap_or(0.0), data.display());
    case_table(&store::idle_records(&kept.admitted)).write_csv(std::io::stdout())?;
    Ok(())
}
