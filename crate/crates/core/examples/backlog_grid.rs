//! SYN and RST backlog scans against the four filtering combinations, then
//! the 2x2 contingency table built from the paired records.

use inferscan::analytics::contingency_table;
use inferscan::backlog::{BacklogConfig, BacklogScanner};
use inferscan::simnet::{BacklogPreset, PAIR_MM, PAIR_VPS};
use inferscan::transport::SimNetwork;

fn main() {
    let mut records = Vec::new();
    for (epoch, (syn_dropped, rst_dropped)) in [(false, false), (false, true), (true, false), (true, true)]
        .into_iter()
        .enumerate()
    {
        let preset = BacklogPreset::new(syn_dropped, rst_dropped, epoch as u64);
        let net = SimNetwork::new(preset.scenario().build());
        let (mm, vps) = (net.transport(PAIR_MM), net.transport(PAIR_VPS));
        let mut scanner = BacklogScanner::new(&mm, &vps, BacklogConfig::default(), 3).with_epoch(epoch as u32);
        // Each epoch uses a fresh network, so the relay address repeats but
        // the epoch keeps the pairs apart.
        let syn = scanner.syn_scan(&preset.relay()).expect("syn scan");
        let rst = scanner.rst_scan(&preset.relay()).expect("rst scan");
        println!(
            "truth syn_dropped={syn_dropped:<5} rst_dropped={rst_dropped:<5} | SYN {:?} {:?} | RST {:?} {:?}",
            syn.verdict, syn.observed_retransmissions, rst.verdict, rst.observed_retransmissions
        );
        records.push(syn);
        records.push(rst);
    }
    let table = contingency_table(&records);
    println!();
    table.write_csv(std::io::stdout()).expect("stdout");
}
