//! TCP traceroutes from two source ports.
//!
//! One run uses the filtered port, the other an unused control port.
//! Comparing the two on the same path shows whether, and how deep into a
//! region, segments from the filtered port are dropped.

mod table;

use std::collections::BTreeMap;
use std::net::Ipv4Addr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::transport::{
    FlowFilter, FlowKey, Inbound, IsnGenerator, SegmentSpec, TcpFlags, Timestamp, Transport,
    TransportError,
};

pub use table::{EntryLabel, PrefixEntry, PrefixTable};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TracerError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("prefix table: {0}")]
    Table(String),
    #[error("{0}")]
    Precondition(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Finished,
    Stalled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HopRecord {
    pub ttl: u8,
    /// `None` when nothing answered this TTL.
    pub responder: Option<Ipv4Addr>,
    pub rtt_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracerouteRun {
    pub dest: Ipv4Addr,
    pub dst_port: u16,
    pub src_port: u16,
    pub flags: TcpFlags,
    pub hops: Vec<HopRecord>,
    pub status: RunStatus,
    pub hour: u8,
    /// Filled in by [`classify_entry`] once a prefix table is applied.
    #[serde(default)]
    pub entry_label: Option<EntryLabel>,
    pub timestamp: Timestamp,
}

impl TracerouteRun {
    pub fn finished(&self) -> bool {
        self.status == RunStatus::Finished
    }

    pub fn responders(&self) -> impl Iterator<Item = &HopRecord> {
        self.hops.iter().filter(|h| h.responder.is_some())
    }

    pub fn last_responder(&self) -> Option<&HopRecord> {
        self.responders().last()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TracerConfig {
    pub max_ttl: u8,
    /// How long to wait for answers after the last probe, in seconds.
    pub window_s: f64,
    /// Spacing between probes of consecutive TTLs, in milliseconds.
    pub spacing_ms: f64,
    pub filtered_port: u16,
    pub control_port: u16,
    pub dst_port: u16,
    /// Region whose entry network and depth are measured.
    pub target_region: String,
}

impl Default for TracerConfig {
    fn default() -> Self {
        Self {
            max_ttl: 30,
            window_s: 3.0,
            spacing_ms: 1.0,
            filtered_port: 9001,
            control_port: 9002,
            dst_port: 80,
            target_region: "CN".into(),
        }
    }
}

/// Sends one SYN/ACK per TTL without waiting between hops. The TTL is
/// encoded in the acknowledgement number so answers can be matched.
pub fn run_traceroute(
    tr: &dyn Transport,
    dest: Ipv4Addr,
    src_port: u16,
    hour: u8,
    cfg: &TracerConfig,
    isn: &mut IsnGenerator,
) -> Result<TracerouteRun, TracerError> {
    if cfg.max_ttl == 0 {
        return Err(TracerError::Precondition("max_ttl must be positive".into()));
    }
    let (_, base) = isn.next();
    let t0 = tr.now();
    let mut sent_at = BTreeMap::new();
    for ttl in 1..=cfg.max_ttl {
        tr.wait_until(t0 + Duration::from_secs_f64(f64::from(ttl - 1) * cfg.spacing_ms / 1000.0))?;
        let spec = SegmentSpec::new(dest, src_port, cfg.dst_port, TcpFlags::SYN_ACK)
            .ack(base.wrapping_add(u32::from(ttl)))
            .ttl(ttl);
        let r = tr.send_spec(&spec, isn)?;
        sent_at.insert(ttl, r.at);
    }
    let key = FlowKey::new(dest, cfg.dst_port, tr.local_addr(), src_port);
    let got = tr.capture_inbound(&FlowFilter::new().with(key), Duration::from_secs_f64(cfg.window_s))?;

    let ttl_of = |v: u32| {
        let d = v.wrapping_sub(base);
        (1..=u32::from(cfg.max_ttl)).contains(&d).then_some(d as u8)
    };
    let mut answers: BTreeMap<u8, (Ipv4Addr, Timestamp)> = BTreeMap::new();
    let mut dest_ttl: Option<u8> = None;
    for inbound in got {
        let (ttl, who, at) = match inbound {
            Inbound::TimeExceeded {
                responder,
                quoted,
                timestamp,
            } => match ttl_of(quoted.ack) {
                Some(t) => (t, responder, timestamp),
                None => continue,
            },
            Inbound::Tcp(seg) if seg.flags.is_rst() => match ttl_of(seg.seq) {
                Some(t) => {
                    dest_ttl = Some(dest_ttl.map_or(t, |d| d.min(t)));
                    (t, seg.src_addr, seg.timestamp)
                }
                None => continue,
            },
            Inbound::Tcp(_) => continue,
        };
        answers.entry(ttl).or_insert((who, at));
    }

    let last = match dest_ttl {
        Some(t) => t,
        None => answers.keys().copied().filter(|t| answers[t].0 != dest).max().unwrap_or(0),
    };
    let hops = (1..=last)
        .map(|ttl| match answers.get(&ttl) {
            Some((who, at)) => HopRecord {
                ttl,
                responder: Some(*who),
                rtt_ms: Some((*at - sent_at[&ttl]).as_secs_f64() * 1000.0),
            },
            None => HopRecord {
                ttl,
                responder: None,
                rtt_ms: None,
            },
        })
        .collect();
    Ok(TracerouteRun {
        dest,
        dst_port: cfg.dst_port,
        src_port,
        flags: TcpFlags::SYN_ACK,
        hops,
        status: if dest_ttl.is_some() {
            RunStatus::Finished
        } else {
            RunStatus::Stalled
        },
        hour,
        entry_label: None,
        timestamp: t0,
    })
}

/// A run from the filtered port followed by one from the control port.
pub fn paired_run(
    tr: &dyn Transport,
    dest: Ipv4Addr,
    hour: u8,
    cfg: &TracerConfig,
    isn: &mut IsnGenerator,
) -> Result<(TracerouteRun, TracerouteRun), TracerError> {
    let tor = run_traceroute(tr, dest, cfg.filtered_port, hour, cfg, isn)?;
    let rand = run_traceroute(tr, dest, cfg.control_port, hour, cfg, isn)?;
    Ok((tor, rand))
}

/// Network label of the first hop inside the target region.
pub fn classify_entry(run: &TracerouteRun, table: &PrefixTable, region: &str) -> EntryLabel {
    run.responders()
        .find_map(|h| table.in_region(h.responder?, h.rtt_ms, region))
        .map_or(EntryLabel::Other, |e| EntryLabel::parse(&e.label))
}

/// Responding hops from the first in-region hop up to the stall.
pub fn hops_into_region(run: &TracerouteRun, table: &PrefixTable, region: &str) -> Result<u32, TracerError> {
    if run.finished() {
        return Err(TracerError::Precondition("run reached its destination".into()));
    }
    let mut inside = false;
    let mut n = 0;
    for h in run.responders() {
        inside = inside || table.in_region(h.responder.unwrap(), h.rtt_ms, region).is_some();
        if inside {
            n += 1;
        }
    }
    if n == 0 {
        return Err(TracerError::Precondition("no hop inside the region".into()));
    }
    Ok(n)
}

/// When and how often to trace each destination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceSchedule {
    pub hours: u32,
    pub days: u32,
    /// Hour of day at virtual time zero.
    pub start_hour: u8,
}

impl Default for TraceSchedule {
    fn default() -> Self {
        Self {
            hours: 24,
            days: 2,
            start_hour: 0,
        }
    }
}

/// Paired runs to every destination once per hour slot. Slot `k` starts
/// `k` hours after virtual time zero; runs are labelled with its hour of day
/// and an entry label from `table`, taken from the control run when it has
/// one.
pub fn trace_campaign(
    tr: &dyn Transport,
    dests: &[Ipv4Addr],
    table: &PrefixTable,
    schedule: &TraceSchedule,
    cfg: &TracerConfig,
    isn: &mut IsnGenerator,
) -> Result<Vec<TracerouteRun>, TracerError> {
    let mut runs = Vec::with_capacity(dests.len() * 2 * (schedule.hours * schedule.days) as usize);
    for slot in 0..schedule.days * schedule.hours {
        let start = Timestamp::from_secs(u64::from(slot) * 3600);
        if tr.now() < start {
            tr.wait_until(start)?;
        }
        let hour = ((u32::from(schedule.start_hour) + slot % schedule.hours.max(1)) % 24) as u8;
        for &d in dests {
            let (mut a, mut b) = paired_run(tr, d, hour, cfg, isn)?;
            // A filtered run may stall before the region; the path is the
            // same, so the pair shares the control run's label.
            let label = match classify_entry(&b, table, &cfg.target_region) {
                EntryLabel::Other => classify_entry(&a, table, &cfg.target_region),
                l => l,
            };
            a.entry_label = Some(label);
            b.entry_label = Some(label);
            runs.push(a);
            runs.push(b);
        }
    }
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(hops: &[(u8, Option<[u8; 4]>)], status: RunStatus) -> TracerouteRun {
        TracerouteRun {
            dest: Ipv4Addr::new(1, 2, 3, 4),
            dst_port: 80,
            src_port: 9001,
            flags: TcpFlags::SYN_ACK,
            hops: hops
                .iter()
                .map(|(ttl, a)| HopRecord {
                    ttl: *ttl,
                    responder: a.map(Ipv4Addr::from),
                    rtt_ms: a.map(|_| 150.0),
                })
                .collect(),
            status,
            hour: 0,
            entry_label: None,
            timestamp: Timestamp::ZERO,
        }
    }

    fn table() -> PrefixTable {
        PrefixTable::new()
            .with("202.97.0.0/16", "COM", "CN")
            .unwrap()
            .with("159.226.0.0/16", "EDU", "CN")
            .unwrap()
    }

    #[test]
    fn entry_labels() {
        let t = table();
        let com = run(&[(1, Some([9, 9, 9, 9])), (2, Some([202, 97, 1, 1]))], RunStatus::Stalled);
        let edu = run(&[(1, Some([159, 226, 3, 1])), (2, Some([202, 97, 1, 1]))], RunStatus::Stalled);
        let none = run(&[(1, Some([9, 9, 9, 9])), (2, None)], RunStatus::Stalled);
        assert_eq!(classify_entry(&com, &t, "CN"), EntryLabel::Com);
        assert_eq!(classify_entry(&edu, &t, "CN"), EntryLabel::Edu);
        assert_eq!(classify_entry(&none, &t, "CN"), EntryLabel::Other);
    }

    #[test]
    fn depth_counts_from_entry() {
        let t = table();
        let one = run(&[(1, Some([9, 9, 9, 9])), (2, Some([202, 97, 1, 1])), (3, None)], RunStatus::Stalled);
        assert_eq!(hops_into_region(&one, &t, "CN").unwrap(), 1);
        let two = run(
            &[(1, Some([9, 9, 9, 9])), (2, Some([202, 97, 1, 1])), (3, Some([10, 0, 0, 1]))],
            RunStatus::Stalled,
        );
        assert_eq!(hops_into_region(&two, &t, "CN").unwrap(), 2);
        let done = run(&[(1, Some([202, 97, 1, 1]))], RunStatus::Finished);
        assert!(hops_into_region(&done, &t, "CN").is_err());
    }
}
