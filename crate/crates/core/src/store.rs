//! Record persistence and validity pruning.
//!
//! Line-delimited JSON is the canonical format; each line is one
//! [`ScanRecord`]. The CSV export adds a few flat columns for quick
//! inspection and carries the full payload as JSON in its last column.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::net::Ipv4Addr;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backlog::BacklogScanRecord;
use crate::idlescan::IdleScanRecord;
use crate::tracer::TracerouteRun;
use crate::transport::Timestamp;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("record {index}: {msg}")]
    Schema { index: usize, msg: String },
    #[error("unknown format {0:?} (expected jsonl or csv)")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordKind {
    IdleScan,
    BacklogScan,
    Traceroute,
}

impl RecordKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RecordKind::IdleScan => "idle-scan",
            RecordKind::BacklogScan => "backlog-scan",
            RecordKind::Traceroute => "traceroute",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Payload {
    IdleScan(IdleScanRecord),
    BacklogScan(BacklogScanRecord),
    Traceroute(TracerouteRun),
}

impl Payload {
    pub fn kind(&self) -> RecordKind {
        match self {
            Payload::IdleScan(_) => RecordKind::IdleScan,
            Payload::BacklogScan(_) => RecordKind::BacklogScan,
            Payload::Traceroute(_) => RecordKind::Traceroute,
        }
    }

    pub fn timestamp(&self) -> Timestamp {
        match self {
            Payload::IdleScan(r) => r.timestamp,
            Payload::BacklogScan(r) => r.timestamp,
            Payload::Traceroute(r) => r.timestamp,
        }
    }

    /// The host the record is about: the client of an idle scan, the
    /// relay of a backlog scan, the destination of a traceroute.
    pub fn subject(&self) -> Ipv4Addr {
        match self {
            Payload::IdleScan(r) => r.client.addr,
            Payload::BacklogScan(r) => r.relay.addr,
            Payload::Traceroute(r) => r.dest,
        }
    }

    pub fn outcome(&self) -> String {
        match self {
            Payload::IdleScan(r) => r.label.case.label().to_string(),
            Payload::BacklogScan(r) => match r.verdict {
                crate::backlog::Verdict::Passes => "passes".into(),
                crate::backlog::Verdict::Dropped => "dropped".into(),
                crate::backlog::Verdict::Invalid(why) => format!("invalid:{why:?}"),
            },
            Payload::Traceroute(r) => format!("{:?}", r.status).to_lowercase(),
        }
    }
}

/// Names used in [`ScanRecord::checks`].
pub mod check {
    pub const CLIENT_LIVELINESS: &str = "client_liveliness";
    pub const SERVER_LIVELINESS: &str = "server_liveliness";
    pub const STABLE_FLAG: &str = "stable_flag";
    pub const QUALIFICATION: &str = "qualification";
    pub const BASELINE: &str = "baseline";
    pub const ENTRY_LABEL: &str = "entry_label";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub schema: u32,
    pub payload: Payload,
    /// Applicable checks and whether each passed.
    pub checks: BTreeMap<String, bool>,
    /// True exactly when every check passed.
    pub admitted: bool,
}

impl ScanRecord {
    pub fn new(payload: Payload, checks: impl IntoIterator<Item = (&'static str, bool)>) -> Self {
        let checks: BTreeMap<String, bool> = checks.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        Self {
            schema: SCHEMA_VERSION,
            admitted: checks.values().all(|v| *v),
            payload,
            checks,
        }
    }

    pub fn kind(&self) -> RecordKind {
        self.payload.kind()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.schema != SCHEMA_VERSION {
            return Err(format!("schema version {} not supported", self.schema));
        }
        if self.admitted != self.checks.values().all(|v| *v) {
            return Err("admitted flag disagrees with checks".into());
        }
        Ok(())
    }

    /// Zeroes the low `bits` of the client address of an idle-scan record.
    /// Other record kinds carry no client address and are unchanged.
    pub fn redact_client(&mut self, bits: u8) {
        if let Payload::IdleScan(r) = &mut self.payload {
            r.client.addr = redact(r.client.addr, bits);
        }
    }
}

pub fn redact(addr: Ipv4Addr, bits: u8) -> Ipv4Addr {
    let mask = u32::MAX.checked_shl(u32::from(bits.min(32))).unwrap_or(0);
    Ipv4Addr::from(u32::from(addr) & mask)
}

/// Append-only JSONL writer. Offsets are record indices in the file.
pub struct RecordWriter<W: Write> {
    out: W,
    next: u64,
    redact_bits: u8,
}

impl RecordWriter<BufWriter<File>> {
    pub fn create(path: &Path) -> Result<Self, StoreError> {
        Ok(Self::new(BufWriter::new(File::create(path)?)))
    }

    /// Opens `path` for appending; offsets continue after the existing
    /// records.
    pub fn append_to(path: &Path) -> Result<Self, StoreError> {
        let existing = match File::open(path) {
            Ok(f) => BufReader::new(f).lines().filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty())).count(),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => 0,
            Err(e) => return Err(e.into()),
        };
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        let mut w = Self::new(BufWriter::new(f));
        w.next = existing as u64;
        Ok(w)
    }
}

impl<W: Write> RecordWriter<W> {
    pub fn new(out: W) -> Self {
        Self {
            out,
            next: 0,
            redact_bits: 0,
        }
    }

    /// Redacts the low `bits` of every client address written.
    pub fn redact_client_bits(mut self, bits: u8) -> Self {
        self.redact_bits = bits;
        self
    }

    pub fn append(&mut self, record: &ScanRecord) -> Result<u64, StoreError> {
        record.validate().map_err(|msg| StoreError::Schema {
            index: self.next as usize,
            msg,
        })?;
        let line = if self.redact_bits > 0 {
            let mut r = record.clone();
            r.redact_client(self.redact_bits);
            serde_json::to_string(&r)
        } else {
            serde_json::to_string(record)
        }
        .map_err(|e| StoreError::Schema {
            index: self.next as usize,
            msg: e.to_string(),
        })?;
        self.out.write_all(line.as_bytes())?;
        self.out.write_all(b"\n")?;
        let off = self.next;
        self.next += 1;
        Ok(off)
    }

    pub fn flush(&mut self) -> Result<(), StoreError> {
        self.out.flush()?;
        Ok(())
    }

    pub fn into_inner(mut self) -> Result<W, StoreError> {
        self.out.flush()?;
        Ok(self.out)
    }
}

pub fn read_jsonl<R: Read>(reader: R) -> Result<Vec<ScanRecord>, StoreError> {
    let mut out = Vec::new();
    for (index, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: ScanRecord = serde_json::from_str(&line).map_err(|e| StoreError::Schema {
            index,
            msg: e.to_string(),
        })?;
        r.validate().map_err(|msg| StoreError::Schema { index, msg })?;
        out.push(r);
    }
    Ok(out)
}

pub fn write_jsonl<W: Write>(out: W, records: &[ScanRecord]) -> Result<(), StoreError> {
    let mut w = RecordWriter::new(BufWriter::new(out));
    for r in records {
        w.append(r)?;
    }
    w.flush()
}

const CSV_HEADER: [&str; 8] = ["schema", "kind", "admitted", "timestamp_ns", "subject", "outcome", "checks", "payload"];

pub fn write_csv<W: Write>(out: W, records: &[ScanRecord]) -> Result<(), StoreError> {
    let csv_err = |e: csv::Error| StoreError::Io(std::io::Error::other(e));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for (index, r) in records.iter().enumerate() {
        r.validate().map_err(|msg| StoreError::Schema { index, msg })?;
        w.write_record([
            r.schema.to_string(),
            r.kind().as_str().to_string(),
            r.admitted.to_string(),
            r.payload.timestamp().as_nanos().to_string(),
            r.payload.subject().to_string(),
            r.payload.outcome(),
            to_json(&r.checks, index)?,
            to_json(&r.payload, index)?,
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn to_json<T: Serialize>(v: &T, index: usize) -> Result<String, StoreError> {
    serde_json::to_string(v).map_err(|e| StoreError::Schema {
        index,
        msg: e.to_string(),
    })
}

pub fn read_csv<R: Read>(reader: R) -> Result<Vec<ScanRecord>, StoreError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers().map_err(|e| StoreError::Schema {
        index: 0,
        msg: e.to_string(),
    })?;
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(StoreError::Schema {
            index: 0,
            msg: "unexpected CSV header".into(),
        });
    }
    let mut out = Vec::new();
    for (index, row) in rdr.records().enumerate() {
        let schema_err = |msg: String| StoreError::Schema { index, msg };
        let row = row.map_err(|e| schema_err(e.to_string()))?;
        let schema: u32 = row[0].parse().map_err(|_| schema_err(format!("bad schema {:?}", &row[0])))?;
        let admitted: bool = row[2].parse().map_err(|_| schema_err(format!("bad admitted {:?}", &row[2])))?;
        let checks = serde_json::from_str(&row[6]).map_err(|e| schema_err(e.to_string()))?;
        let payload: Payload = serde_json::from_str(&row[7]).map_err(|e| schema_err(e.to_string()))?;
        if payload.kind().as_str() != &row[1] {
            return Err(schema_err(format!("kind {:?} does not match payload", &row[1])));
        }
        let r = ScanRecord {
            schema,
            payload,
            checks,
            admitted,
        };
        r.validate().map_err(schema_err)?;
        out.push(r);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Jsonl,
    Csv,
}

impl FromStr for ExportFormat {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, StoreError> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(ExportFormat::Jsonl),
            "csv" => Ok(ExportFormat::Csv),
            _ => Err(StoreError::Format(s.into())),
        }
    }
}

impl ExportFormat {
    /// Guessed from the file extension.
    pub fn from_path(path: &Path) -> Result<Self, StoreError> {
        path.extension()
            .and_then(|e| e.to_str())
            .unwrap_or("")
            .parse()
    }
}

pub fn export(records: &[ScanRecord], path: &Path, format: ExportFormat) -> Result<(), StoreError> {
    let f = BufWriter::new(File::create(path)?);
    match format {
        ExportFormat::Jsonl => write_jsonl(f, records),
        ExportFormat::Csv => write_csv(f, records),
    }
}

/// Reads a file written by [`export`], choosing the format by extension.
pub fn load(path: &Path) -> Result<Vec<ScanRecord>, StoreError> {
    let f = File::open(path)?;
    match ExportFormat::from_path(path)? {
        ExportFormat::Jsonl => read_jsonl(f),
        ExportFormat::Csv => read_csv(f),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrunedCampaign {
    pub admitted: Vec<ScanRecord>,
    pub total: usize,
}

impl PrunedCampaign {
    /// Admitted over total; `None` for an empty campaign.
    pub fn retention(&self) -> Option<f64> {
        (self.total > 0).then(|| self.admitted.len() as f64 / self.total as f64)
    }
}

/// Keeps the records whose checks all passed.
pub fn prune_campaign(records: &[ScanRecord]) -> PrunedCampaign {
    PrunedCampaign {
        admitted: records
            .iter()
            .filter(|r| r.checks.values().all(|v| *v))
            .cloned()
            .collect(),
        total: records.len(),
    }
}

pub fn idle_records(records: &[ScanRecord]) -> Vec<IdleScanRecord> {
    records
        .iter()
        .filter_map(|r| match &r.payload {
            Payload::IdleScan(x) => Some(x.clone()),
            _ => None,
        })
        .collect()
}

pub fn backlog_records(records: &[ScanRecord]) -> Vec<BacklogScanRecord> {
    records
        .iter()
        .filter_map(|r| match &r.payload {
            Payload::BacklogScan(x) => Some(x.clone()),
            _ => None,
        })
        .collect()
}

pub fn traceroute_records(records: &[ScanRecord]) -> Vec<TracerouteRun> {
    records
        .iter()
        .filter_map(|r| match &r.payload {
            Payload::Traceroute(x) => Some(x.clone()),
            _ => None,
        })
        .collect()
}
