use std::collections::BTreeMap;
use std::io::Write;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::{AnalyticsError, SourceSeries};
use crate::backlog::{BacklogScanRecord, ScanKind, Verdict};
use crate::classify::Case;
use crate::idlescan::IdleScanRecord;
use crate::tracer::{hops_into_region, EntryLabel, PrefixTable, RunStatus, TracerouteRun};

fn pct(n: u64, total: u64) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * n as f64 / total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRow {
    pub client_region: String,
    pub server_type: String,
    pub s2c: u64,
    pub none: u64,
    pub c2s: u64,
    pub error: u64,
}

impl CaseRow {
    pub fn total(&self) -> u64 {
        self.s2c + self.none + self.c2s + self.error
    }

    /// Row percentages in column order S→C, None, C→S, Error.
    pub fn percentages(&self) -> [f64; 4] {
        let t = self.total();
        [pct(self.s2c, t), pct(self.none, t), pct(self.c2s, t), pct(self.error, t)]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CaseTable {
    pub rows: Vec<CaseRow>,
}

impl CaseTable {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), AnalyticsError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "client_region",
            "server_type",
            "s2c",
            "s2c_pct",
            "none",
            "none_pct",
            "c2s",
            "c2s_pct",
            "error",
            "error_pct",
            "total",
        ])?;
        for r in &self.rows {
            let p = r.percentages();
            out.write_record([
                r.client_region.clone(),
                r.server_type.clone(),
                r.s2c.to_string(),
                format!("{:.2}", p[0]),
                r.none.to_string(),
                format!("{:.2}", p[1]),
                r.c2s.to_string(),
                format!("{:.2}", p[2]),
                r.error.to_string(),
                format!("{:.2}", p[3]),
                r.total().to_string(),
            ])?;
        }
        out.flush().map_err(|e| AnalyticsError::Csv(e.to_string()))?;
        Ok(())
    }
}

/// Case counts per (client region, server type). Voided rounds are skipped.
pub fn case_table(records: &[IdleScanRecord]) -> CaseTable {
    let mut rows: BTreeMap<(String, String), CaseRow> = BTreeMap::new();
    for r in records.iter().filter(|r| r.voided.is_none()) {
        let region = if r.client.region.is_empty() { "?".to_string() } else { r.client.region.clone() };
        let ty = r.server.role.label().to_string();
        let row = rows.entry((region.clone(), ty.clone())).or_insert_with(|| CaseRow {
            client_region: region,
            server_type: ty,
            s2c: 0,
            none: 0,
            c2s: 0,
            error: 0,
        });
        match r.label.case {
            Case::ServerToClientDrop => row.s2c += 1,
            Case::NoPacketsDropped => row.none += 1,
            Case::ClientToServerDrop => row.c2s += 1,
            Case::Error(_) => row.error += 1,
        }
    }
    CaseTable {
        rows: rows.into_values().collect(),
    }
}

/// SYN-scan verdict by RST-scan verdict, `cells[syn][rst]` with index 0 for
/// passes and 1 for dropped.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub cells: [[u64; 2]; 2],
    /// Records that could not be paired or carried an invalid verdict.
    pub warnings: Vec<String>,
}

impl ContingencyTable {
    pub fn total(&self) -> u64 {
        self.cells.iter().flatten().sum()
    }

    pub fn percent(&self, syn_passes: bool, rst_passes: bool) -> f64 {
        pct(self.cells[usize::from(!syn_passes)][usize::from(!rst_passes)], self.total())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), AnalyticsError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["syn", "rst", "count", "pct"])?;
        for (si, s) in ["passes", "dropped"].iter().enumerate() {
            for (ri, r) in ["passes", "dropped"].iter().enumerate() {
                out.write_record([
                    s.to_string(),
                    r.to_string(),
                    self.cells[si][ri].to_string(),
                    format!("{:.2}", self.percent(si == 0, ri == 0)),
                ])?;
            }
        }
        out.flush().map_err(|e| AnalyticsError::Csv(e.to_string()))?;
        Ok(())
    }
}

/// Pairs the SYN and RST scans of each relay and epoch.
pub fn contingency_table(records: &[BacklogScanRecord]) -> ContingencyTable {
    let mut by_key: BTreeMap<(Ipv4Addr, u32), [Vec<&BacklogScanRecord>; 2]> = BTreeMap::new();
    for r in records {
        let slot = match r.kind {
            ScanKind::Syn => 0,
            ScanKind::Rst => 1,
        };
        by_key.entry((r.relay.addr, r.epoch)).or_default()[slot].push(r);
    }
    let mut t = ContingencyTable::default();
    let bit = |v: Verdict| match v {
        Verdict::Passes => Some(0),
        Verdict::Dropped => Some(1),
        Verdict::Invalid(_) => None,
    };
    for ((addr, epoch), [syn, rst]) in by_key {
        if syn.len() != 1 || rst.len() != 1 {
            t.warnings.push(format!(
                "{addr} epoch {epoch}: {} SYN and {} RST records, excluded",
                syn.len(),
                rst.len()
            ));
            continue;
        }
        match (bit(syn[0].verdict), bit(rst[0].verdict)) {
            (Some(s), Some(r)) => t.cells[s][r] += 1,
            _ => t.warnings.push(format!("{addr} epoch {epoch}: invalid verdict, excluded")),
        }
    }
    t
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PortKind {
    Randport,
    Torport,
}

/// Counts indexed by entry label (EDU, COM), port kind and status.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TracerouteTable {
    pub counts: BTreeMap<(EntryLabel, PortKind, RunStatus), u64>,
}

impl TracerouteTable {
    pub fn get(&self, label: EntryLabel, port: PortKind, status: RunStatus) -> u64 {
        self.counts.get(&(label, port, status)).copied().unwrap_or(0)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), AnalyticsError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["entry", "port", "stalled", "finished"])?;
        for label in [EntryLabel::Edu, EntryLabel::Com] {
            for port in [PortKind::Randport, PortKind::Torport] {
                out.write_record([
                    label.as_str().to_string(),
                    format!("{port:?}"),
                    self.get(label, port, RunStatus::Stalled).to_string(),
                    self.get(label, port, RunStatus::Finished).to_string(),
                ])?;
            }
        }
        out.flush().map_err(|e| AnalyticsError::Csv(e.to_string()))?;
        Ok(())
    }
}

fn port_kind(run: &TracerouteRun, filtered_port: u16) -> PortKind {
    if run.src_port == filtered_port {
        PortKind::Torport
    } else {
        PortKind::Randport
    }
}

/// Runs without an EDU or COM entry label are left out.
pub fn traceroute_table(runs: &[TracerouteRun], filtered_port: u16) -> TracerouteTable {
    let mut t = TracerouteTable::default();
    for r in runs {
        let label = r.entry_label.unwrap_or(EntryLabel::Other);
        if label == EntryLabel::Other {
            continue;
        }
        *t.counts.entry((label, port_kind(r, filtered_port), r.status)).or_default() += 1;
    }
    t
}

/// The filtered and control runs to one destination in one hour slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunPair<'a> {
    pub tor: &'a TracerouteRun,
    pub rand: &'a TracerouteRun,
}

impl RunPair<'_> {
    /// The control run got through and the filtered one did not.
    pub fn filtered(&self) -> bool {
        self.rand.finished() && !self.tor.finished()
    }

    /// Both got through: the filter did not act.
    pub fn unfiltered(&self) -> bool {
        self.rand.finished() && self.tor.finished()
    }

    pub fn hour(&self) -> u8 {
        self.tor.hour
    }
}

/// Matches runs by destination and hour slot (virtual hour since campaign
/// start). Runs without a partner are dropped.
pub fn pair_runs(runs: &[TracerouteRun], filtered_port: u16) -> Vec<RunPair<'_>> {
    let mut by_key: BTreeMap<(Ipv4Addr, u64), (Option<&TracerouteRun>, Option<&TracerouteRun>)> = BTreeMap::new();
    for r in runs {
        let e = by_key.entry((r.dest, r.timestamp.as_nanos() / 3_600_000_000_000)).or_default();
        match port_kind(r, filtered_port) {
            PortKind::Torport => e.0 = e.0.or(Some(r)),
            PortKind::Randport => e.1 = e.1.or(Some(r)),
        }
    }
    by_key
        .into_values()
        .filter_map(|p| match p {
            (Some(tor), Some(rand)) => Some(RunPair { tor, rand }),
            _ => None,
        })
        .collect()
}

/// How far filtered runs got into `region`, over pairs where the control
/// run finished and the filtered one stalled.
pub fn hop_histogram(runs: &[TracerouteRun], table: &PrefixTable, region: &str, filtered_port: u16) -> BTreeMap<u32, u64> {
    let mut h = BTreeMap::new();
    for p in pair_runs(runs, filtered_port).into_iter().filter(RunPair::filtered) {
        if let Ok(n) = hops_into_region(p.tor, table, region) {
            *h.entry(n).or_default() += 1;
        }
    }
    h
}

/// Pairs where both runs finished, per hour of day. Empty input gives an
/// empty series; otherwise all 24 hours are present.
pub fn diurnal_series(runs: &[TracerouteRun], filtered_port: u16) -> Vec<(u8, u64)> {
    let pairs = pair_runs(runs, filtered_port);
    if pairs.is_empty() {
        return Vec::new();
    }
    let mut s: Vec<(u8, u64)> = (0..24).map(|h| (h, 0)).collect();
    for p in pairs.iter().filter(|p| p.unfiltered()) {
        s[usize::from(p.hour() % 24)].1 += 1;
    }
    s
}

/// `(lat, lon, count)` rows for plotting.
pub fn heatmap(series: &[SourceSeries]) -> Vec<(f64, f64, u64)> {
    series.iter().map(|s| (s.source.lat, s.source.lon, s.total())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backlog::{BaselineProfile, InvalidReason};
    use crate::classify::{CaseLabel, ErrorReason};
    use crate::endpoint::{EndpointSpec, Role};
    use crate::tracer::HopRecord;
    use crate::transport::{TcpFlags, Timestamp};

    fn idle(case: Case) -> IdleScanRecord {
        IdleScanRecord {
            client: EndpointSpec::new(Ipv4Addr::new(10, 0, 0, 1), 80, Role::Client).with_region("CN"),
            server: EndpointSpec::new(Ipv4Addr::new(11, 0, 0, 1), 9001, Role::TorRelay),
            round: 0,
            slot: 0,
            hour: 0,
            timestamp: Timestamp::ZERO,
            label: CaseLabel {
                case,
                amplitude: None,
                confidence: 1.0,
            },
            diagnostics: None,
            voided: None,
        }
    }

    #[test]
    fn one_of_each_case() {
        let recs: Vec<_> = [
            Case::ServerToClientDrop,
            Case::NoPacketsDropped,
            Case::ClientToServerDrop,
            Case::Error(ErrorReason::TooNoisy),
        ]
        .into_iter()
        .map(idle)
        .collect();
        let t = case_table(&recs);
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0].percentages(), [25.0; 4]);
        assert_eq!(t.rows[0].server_type, "Tor-Relay");
        assert!(case_table(&[]).rows.is_empty());
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().contains("CN,Tor-Relay,1,25.00"));
    }

    fn backlog(kind: ScanKind, addr: u32, verdict: Verdict) -> BacklogScanRecord {
        BacklogScanRecord {
            kind,
            relay: EndpointSpec::new(Ipv4Addr::from(addr), 9001, Role::TorRelay),
            epoch: 0,
            probe_count: 5,
            fill_count: 145,
            observed_retransmissions: vec![3; 5],
            baseline: BaselineProfile {
                answered: 3,
                retransmissions: 5,
                gaps: vec![1.0, 2.0, 4.0, 8.0, 16.0],
                offsets: vec![],
            },
            verdict,
            timestamp: Timestamp::ZERO,
            target_occupancy: 150.0 / 256.0,
        }
    }

    #[test]
    fn contingency_pairs_and_warns() {
        let mut recs = Vec::new();
        for i in 0..10 {
            let (s, r) = if i < 8 { (Verdict::Passes, Verdict::Passes) } else { (Verdict::Dropped, Verdict::Dropped) };
            recs.push(backlog(ScanKind::Syn, i, s));
            recs.push(backlog(ScanKind::Rst, i, r));
        }
        recs.push(backlog(ScanKind::Syn, 99, Verdict::Passes));
        recs.push(backlog(ScanKind::Syn, 50, Verdict::Passes));
        recs.push(backlog(ScanKind::Rst, 50, Verdict::Invalid(InvalidReason::Offline)));
        let t = contingency_table(&recs);
        assert_eq!(t.total(), 10);
        assert_eq!(t.percent(true, true), 80.0);
        assert_eq!(t.cells[1][1], 2);
        assert_eq!(t.warnings.len(), 2);
    }

    fn trace(dest: u8, port: u16, status: RunStatus, hour: u8, label: EntryLabel) -> TracerouteRun {
        TracerouteRun {
            dest: Ipv4Addr::new(58, 16, 0, dest),
            dst_port: 80,
            src_port: port,
            flags: TcpFlags::SYN_ACK,
            hops: vec![
                HopRecord {
                    ttl: 1,
                    responder: Some(Ipv4Addr::new(202, 97, 0, 1)),
                    rtt_ms: Some(10.0),
                },
                HopRecord {
                    ttl: 2,
                    responder: Some(Ipv4Addr::new(202, 97, 0, 2)),
                    rtt_ms: Some(10.0),
                },
            ],
            status,
            hour,
            entry_label: Some(label),
            timestamp: Timestamp::from_secs(u64::from(hour) * 3600),
        }
    }

    #[test]
    fn traceroute_aggregates() {
        use RunStatus::*;
        let runs = vec![
            trace(1, 9001, Stalled, 0, EntryLabel::Com),
            trace(1, 9002, Finished, 0, EntryLabel::Com),
            trace(1, 9001, Finished, 1, EntryLabel::Com),
            trace(1, 9002, Finished, 1, EntryLabel::Com),
            trace(2, 9001, Stalled, 0, EntryLabel::Other),
            trace(2, 9002, Stalled, 0, EntryLabel::Other),
        ];
        let t = traceroute_table(&runs, 9001);
        assert_eq!(t.get(EntryLabel::Com, PortKind::Torport, Stalled), 1);
        assert_eq!(t.get(EntryLabel::Com, PortKind::Randport, Finished), 2);
        assert_eq!(t.counts.values().sum::<u64>(), 4);

        let table = PrefixTable::new().with("202.97.0.0/16", "COM", "CN").unwrap();
        assert_eq!(hop_histogram(&runs, &table, "CN", 9001), BTreeMap::from([(2, 1)]));
        let d = diurnal_series(&runs, 9001);
        assert_eq!(d.len(), 24);
        assert_eq!((d[0].1, d[1].1), (0, 1));
        assert!(diurnal_series(&[], 9001).is_empty());
        assert_eq!(traceroute_table(&[], 9001), TracerouteTable::default());
    }
}
