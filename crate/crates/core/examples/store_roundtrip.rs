//! Writes backlog records as JSON lines, appends more, exports to CSV and
//! loads both back. Client redaction is shown on an idle-scan record.

use std::net::Ipv4Addr;

use inferscan::backlog::{BacklogConfig, BacklogScanner};
use inferscan::classify::{Case, CaseLabel};
use inferscan::endpoint::{EndpointSpec, Role};
use inferscan::idlescan::IdleScanRecord;
use inferscan::simnet::{BacklogPreset, PAIR_MM, PAIR_VPS};
use inferscan::store::{self, check, ExportFormat, Payload, RecordWriter, ScanRecord};
use inferscan::transport::{SimNetwork, Timestamp};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile_dir();
    let path = dir.join("data.jsonl");

    let preset = BacklogPreset::new(false, true, 1);
    let net = SimNetwork::new(preset.scenario().build());
    let (mm, vps) = (net.transport(PAIR_MM), net.transport(PAIR_VPS));
    let mut scanner = BacklogScanner::new(&mm, &vps, BacklogConfig::default(), 1);
    let syn = scanner.syn_scan(&preset.relay())?;
    let rst = scanner.rst_scan(&preset.relay())?;

    let mut w = RecordWriter::create(&path)?;
    w.append(&ScanRecord::new(Payload::BacklogScan(syn), [(check::BASELINE, true)]))?;
    w.flush()?;
    drop(w);
    let mut w = RecordWriter::append_to(&path)?;
    let offset = w.append(&ScanRecord::new(Payload::BacklogScan(rst), [(check::BASELINE, false)]))?;
    w.flush()?;
    println!("appended second record at line {offset}");

    let records = store::load(&path)?;
    let csv = dir.join("data.csv");
    store::export(&records, &csv, ExportFormat::Csv)?;
    assert_eq!(store::load(&csv)?, records);
    for r in &records {
        println!("{:<13} {:<15} {:<10} admitted={}", r.kind().as_str(), r.payload.subject(), r.payload.outcome(), r.admitted);
    }
    let kept = store::prune_campaign(&records);
    println!("retention {:?}", kept.retention());

    let mut idle = ScanRecord::new(
        Payload::IdleScan(IdleScanRecord {
            client: EndpointSpec::new(Ipv4Addr::new(10, 77, 200, 9), 80, Role::Client),
            server: preset.relay(),
            round: 0,
            slot: 0,
            hour: 0,
            timestamp: Timestamp::ZERO,
            label: CaseLabel {
                case: Case::NoPacketsDropped,
                amplitude: Some(1.0),
                confidence: 1.0,
            },
            diagnostics: None,
            voided: None,
        }),
        [(check::CLIENT_LIVELINESS, true)],
    );
    idle.redact_client(16);
    println!("redacted client: {}", idle.payload.subject());
    Ok(())
}

fn tempfile_dir() -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("inferscan-store-{}", std::process::id()));
    std::fs::create_dir_all(&d).expect("temp dir");
    d
}
