use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_inferscan"));
    c.env_remove("INFERSCAN_SEED");
    c
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

fn head(src: &Path, dst: &Path, rows: usize) {
    let text = std::fs::read_to_string(src).unwrap();
    let lines: Vec<&str> = text.lines().take(rows + 1).collect();
    std::fs::write(dst, lines.join("\n") + "\n").unwrap();
}

#[test]
fn unknown_flag_exits_2() {
    let out = bin().args(["simulate", "--no-such-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().args(["idle-scan", "--transport", "live", "--clients", "a", "--servers", "b"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "live without authorization");
}

#[test]
fn simulate_twice_is_identical() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let status = bin()
            .args(["--workers", "2", "simulate", "--rounds", "1", "--scenario"])
            .arg(scenarios().join("campaign.toml"))
            .arg("--out-dir")
            .arg(d.path())
            .env("INFERSCAN_SEED", "1")
            .status()
            .unwrap();
        assert!(status.success());
    }
    for f in ["data.jsonl", "report.csv"] {
        let a = std::fs::read(dirs[0].path().join(f)).unwrap();
        let b = std::fs::read(dirs[1].path().join(f)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn idle_scan_five_by_five() {
    let d = tempfile::tempdir().unwrap();
    let (clients, servers) = (d.path().join("c.csv"), d.path().join("s.csv"));
    head(&scenarios().join("campaign_clients.csv"), &clients, 5);
    head(&scenarios().join("campaign_servers.csv"), &servers, 5);
    let (data, report) = (d.path().join("data.jsonl"), d.path().join("report.csv"));
    let out = bin()
        .args(["--seed", "3", "idle-scan", "--rounds", "1", "--scenario"])
        .arg(scenarios().join("campaign.toml"))
        .arg("--clients")
        .arg(&clients)
        .arg("--servers")
        .arg(&servers)
        .arg("--out")
        .arg(&data)
        .arg("--report")
        .arg(&report)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());
    assert_eq!(std::fs::read_to_string(&data).unwrap().lines().count(), 25);
    let rep = std::fs::read_to_string(&report).unwrap();
    assert!(rep.starts_with("client_region,server_type,s2c"), "{rep}");
    assert!(rep.lines().nth(1).unwrap().starts_with("CN,Tor-Relay,"), "{rep}");
}
