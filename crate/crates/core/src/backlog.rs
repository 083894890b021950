//! SYN-backlog side channel.
//!
//! A Linux server retransmits an unanswered SYN/ACK five times, but only
//! three times once its SYN backlog is more than half full. The MM leaves
//! probe SYNs unanswered and counts their retransmissions, while a second
//! vantage point (VPS) tries to change the backlog occupancy:
//!
//! * SYN scan: the VPS sends SYNs. If they arrive, the backlog fills up and
//!   the probes see three retransmissions instead of five.
//! * RST scan: the MM fills the backlog with SYNs spoofed from the VPS and
//!   the VPS answers each with a RST. If the RSTs arrive, the backlog empties
//!   again and the probes see all five.

use std::collections::BTreeMap;
use std::net::Ipv4Addr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::endpoint::EndpointSpec;
use crate::transport::{
    FlowFilter, FlowKey, IsnGenerator, SegmentSpec, TcpFlags, Timestamp, Transport, TransportError,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BacklogError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("bad configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanKind {
    Syn,
    Rst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InvalidReason {
    /// Baseline retransmission count differs from the default stack's.
    NonDefaultStack,
    /// Baseline gaps do not double.
    NoBackoff,
    Offline,
    /// Probe counts match neither the full nor the pruned count.
    Inconsistent,
    /// Probes plus fill cannot push the backlog past half.
    UnderFill,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "reason", rename_all = "kebab-case")]
pub enum Verdict {
    /// The VPS's SYNs (SYN scan) or RSTs (RST scan) reach the relay.
    Passes,
    Dropped,
    Invalid(InvalidReason),
}

impl Verdict {
    pub fn is_valid(self) -> bool {
        !matches!(self, Verdict::Invalid(_))
    }
}

/// How the relay retransmits when nobody interferes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BaselineProfile {
    /// Baseline SYNs that got any SYN/ACK.
    pub answered: u32,
    /// Retransmission slots seen across all baseline SYNs, minus the
    /// original.
    pub retransmissions: u32,
    /// Gaps between consecutive slots, in seconds.
    pub gaps: Vec<f64>,
    /// Start of each slot relative to the send time.
    pub offsets: Vec<f64>,
}

impl BaselineProfile {
    /// The three pruning rules, in order: offline, non-default count,
    /// missing exponential backoff.
    pub fn check(&self, cfg: &BacklogConfig) -> Result<(), InvalidReason> {
        if self.answered == 0 {
            return Err(InvalidReason::Offline);
        }
        if self.retransmissions != cfg.expected_retransmissions {
            return Err(InvalidReason::NonDefaultStack);
        }
        let (lo, hi) = cfg.gap_ratio;
        let doubling = self.gaps.len() >= 2
            && self.gaps.windows(2).all(|w| {
                let r = w[1] / w[0];
                w[0] > 0.0 && r >= lo && r <= hi
            });
        if !doubling {
            return Err(InvalidReason::NoBackoff);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacklogScanRecord {
    pub kind: ScanKind,
    pub relay: EndpointSpec,
    /// Measurement round, used to pair SYN and RST scans of one relay.
    #[serde(default)]
    pub epoch: u32,
    pub probe_count: u32,
    pub fill_count: u32,
    /// One entry per probe; 0 for a probe that got no SYN/ACK at all.
    pub observed_retransmissions: Vec<u32>,
    pub baseline: BaselineProfile,
    pub verdict: Verdict,
    pub timestamp: Timestamp,
    /// Largest backlog occupancy the scan aimed for, as a fraction.
    pub target_occupancy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacklogConfig {
    pub syn_probes: u32,
    pub rst_probes: u32,
    pub syn_fill: u32,
    pub rst_fill: u32,
    /// Delay between the probes and the fill, in milliseconds.
    pub stagger_ms: f64,
    /// Delay between the spoofed SYNs and the VPS's RSTs, in milliseconds.
    pub rst_delay_ms: f64,
    /// Spacing between consecutive fill segments, in milliseconds.
    pub fill_spacing_ms: f64,
    pub baseline_probes: u32,
    /// Seconds to listen after a burst; long enough for every half-open
    /// entry it created to expire.
    pub listen_s: f64,
    pub expected_retransmissions: u32,
    /// Retransmissions of a server whose backlog is more than half full.
    pub pruned_retransmissions: u32,
    /// Backlog size assumed when checking the fill bound.
    pub assumed_backlog: u32,
    /// Most half-open entries one scan may create.
    pub max_injected: u32,
    /// Accepted range for the ratio of consecutive baseline gaps.
    pub gap_ratio: (f64, f64),
    /// Read a full retransmission count in the RST scan as "dropped".
    pub paper_literal_verdicts: bool,
    pub probe_port: u16,
    pub fill_port: u16,
}

impl Default for BacklogConfig {
    fn default() -> Self {
        Self {
            syn_probes: 5,
            rst_probes: 10,
            syn_fill: 145,
            rst_fill: 140,
            stagger_ms: 500.0,
            rst_delay_ms: 1000.0,
            fill_spacing_ms: 1.0,
            baseline_probes: 3,
            listen_s: 70.0,
            expected_retransmissions: 5,
            pruned_retransmissions: 3,
            assumed_backlog: 256,
            max_injected: 150,
            gap_ratio: (1.6, 2.4),
            paper_literal_verdicts: false,
            probe_port: 41_000,
            fill_port: 42_000,
        }
    }
}

impl BacklogConfig {
    pub fn probes(&self, kind: ScanKind) -> u32 {
        match kind {
            ScanKind::Syn => self.syn_probes,
            ScanKind::Rst => self.rst_probes,
        }
    }

    pub fn fill(&self, kind: ScanKind) -> u32 {
        match kind {
            ScanKind::Syn => self.syn_fill,
            ScanKind::Rst => self.rst_fill,
        }
    }

    pub fn validate(&self) -> Result<(), BacklogError> {
        for kind in [ScanKind::Syn, ScanKind::Rst] {
            let total = self.probes(kind) + self.fill(kind);
            if total > self.max_injected {
                return Err(BacklogError::Config(format!(
                    "{kind:?} scan injects {total} half-open entries, more than {}",
                    self.max_injected
                )));
            }
            if self.probes(kind) == 0 {
                return Err(BacklogError::Config("need at least one probe".into()));
            }
        }
        if self.baseline_probes == 0 || !(self.listen_s > 0.0) {
            return Err(BacklogError::Config("baseline needs probes and a listen window".into()));
        }
        let (p, f) = (self.probe_port, self.fill_port);
        let probes = p..p.saturating_add(self.rst_probes.max(self.syn_probes).max(self.baseline_probes) as u16);
        let fill = f..f.saturating_add(self.rst_fill.max(self.syn_fill) as u16);
        if probes.start < fill.end && fill.start < probes.end {
            return Err(BacklogError::Config("probe and fill port ranges overlap".into()));
        }
        Ok(())
    }
}

/// SYN/ACKs of different probes closer than this belong to the same
/// retransmission.
const SLOT_TOLERANCE_S: f64 = 0.25;

fn ms(v: f64) -> Duration {
    Duration::from_secs_f64(v / 1000.0)
}

/// The MM and VPS halves of the scans against one relay at a time.
pub struct BacklogScanner<'a> {
    mm: &'a dyn Transport,
    vps: &'a dyn Transport,
    cfg: BacklogConfig,
    isn: IsnGenerator,
    /// Sequence numbers of the spoofed SYNs; the VPS derives its RSTs from
    /// the same seed.
    shared_seed: u64,
    epoch: u32,
}

impl<'a> BacklogScanner<'a> {
    pub fn new(mm: &'a dyn Transport, vps: &'a dyn Transport, cfg: BacklogConfig, seed: u64) -> Self {
        Self {
            mm,
            vps,
            cfg,
            isn: IsnGenerator::new(seed),
            shared_seed: seed ^ 0x5eed,
            epoch: 0,
        }
    }

    pub fn with_epoch(mut self, epoch: u32) -> Self {
        self.epoch = epoch;
        self
    }

    pub fn config(&self) -> &BacklogConfig {
        &self.cfg
    }

    /// Sends probe SYNs from consecutive source ports and returns, per
    /// probe, the arrival offsets of its SYN/ACKs relative to its send time.
    fn probe_burst(
        &mut self,
        relay: &EndpointSpec,
        n: u32,
        t0: Timestamp,
    ) -> Result<Vec<(u16, Timestamp)>, BacklogError> {
        let mut sent = Vec::with_capacity(n as usize);
        for i in 0..n {
            let at = t0 + ms(i as f64 * self.cfg.fill_spacing_ms);
            self.mm.wait_until(at)?;
            let port = self.cfg.probe_port + i as u16;
            let r = self
                .mm
                .send_spec(&SegmentSpec::new(relay.addr, port, relay.port, TcpFlags::SYN), &mut self.isn)?;
            sent.push((port, r.at));
        }
        Ok(sent)
    }

    fn collect(
        &self,
        relay: &EndpointSpec,
        sent: &[(u16, Timestamp)],
        until: Timestamp,
    ) -> Result<Vec<Vec<f64>>, BacklogError> {
        let me = self.mm.local_addr();
        let filter: FlowFilter = sent
            .iter()
            .map(|(p, _)| FlowKey::new(relay.addr, relay.port, me, *p))
            .collect();
        let window = until.saturating_sub(self.mm.now());
        let mut per_port: BTreeMap<u16, Vec<Timestamp>> = BTreeMap::new();
        for s in self.mm.capture(&filter, window)? {
            if s.flags.is_syn_ack() {
                per_port.entry(s.dst_port).or_default().push(s.timestamp);
            }
        }
        Ok(sent
            .iter()
            .map(|(p, at)| {
                let mut v: Vec<f64> = per_port
                    .get(p)
                    .map(|ts| ts.iter().map(|t| (*t - *at).as_secs_f64()).collect())
                    .unwrap_or_default();
                v.sort_by(f64::total_cmp);
                v
            })
            .collect())
    }

    /// Three unanswered SYNs, then a full listen window.
    pub fn baseline_probe(&mut self, relay: &EndpointSpec) -> Result<BaselineProfile, BacklogError> {
        self.cfg.validate()?;
        let t0 = self.mm.now();
        let sent = self.probe_burst(relay, self.cfg.baseline_probes, t0)?;
        let arrivals = self.collect(relay, &sent, t0 + Duration::from_secs_f64(self.cfg.listen_s))?;
        let answered = arrivals.iter().filter(|a| !a.is_empty()).count() as u32;
        // The probes leave within milliseconds of each other, so their
        // SYN/ACKs fall into common slots; pooling them tolerates losses.
        let mut pooled: Vec<f64> = arrivals.into_iter().flatten().collect();
        pooled.sort_by(f64::total_cmp);
        let mut slots: Vec<f64> = Vec::new();
        for o in pooled {
            if slots.last().is_none_or(|l| o - l > SLOT_TOLERANCE_S) {
                slots.push(o);
            }
        }
        Ok(BaselineProfile {
            answered,
            retransmissions: slots.len().saturating_sub(1) as u32,
            gaps: slots.windows(2).map(|w| w[1] - w[0]).collect(),
            offsets: slots,
        })
    }

    /// Maps SYN/ACK arrival offsets to the retransmission index they are
    /// closest to in the baseline, so lost segments do not lower the count.
    fn count(baseline: &BaselineProfile, offsets: &[f64]) -> u32 {
        offsets
            .iter()
            .filter_map(|o| {
                baseline
                    .offsets
                    .iter()
                    .enumerate()
                    .min_by(|a, b| (a.1 - o).abs().total_cmp(&(b.1 - o).abs()))
                    .map(|(k, _)| k as u32)
            })
            .max()
            .unwrap_or(0)
    }

    pub fn syn_scan(&mut self, relay: &EndpointSpec) -> Result<BacklogScanRecord, BacklogError> {
        self.scan(ScanKind::Syn, relay)
    }

    pub fn rst_scan(&mut self, relay: &EndpointSpec) -> Result<BacklogScanRecord, BacklogError> {
        self.scan(ScanKind::Rst, relay)
    }

    /// Baseline, then the scan itself. An invalid baseline ends the scan
    /// early with zero counts.
    pub fn scan(&mut self, kind: ScanKind, relay: &EndpointSpec) -> Result<BacklogScanRecord, BacklogError> {
        let baseline = self.baseline_probe(relay)?;
        let probes = self.cfg.probes(kind);
        let fill = self.cfg.fill(kind);
        let target = f64::from(probes + fill) / f64::from(self.cfg.assumed_backlog);
        let mut record = BacklogScanRecord {
            kind,
            relay: relay.clone(),
            epoch: self.epoch,
            probe_count: probes,
            fill_count: fill,
            observed_retransmissions: vec![0; probes as usize],
            baseline,
            verdict: Verdict::Passes,
            timestamp: self.mm.now(),
            target_occupancy: target,
        };
        if let Err(reason) = record.baseline.check(&self.cfg) {
            record.verdict = Verdict::Invalid(reason);
            return Ok(record);
        }

        let t0 = self.mm.now();
        let sent = self.probe_burst(relay, probes, t0)?;
        let fill_at = t0 + ms(self.cfg.stagger_ms);
        match kind {
            ScanKind::Syn => self.vps_syn_fill(relay, fill, fill_at)?,
            ScanKind::Rst => {
                self.spoofed_fill(relay, fill, fill_at)?;
                let rst_at = fill_at + ms(self.cfg.rst_delay_ms);
                vps_rst_burst(self.vps, relay, &self.cfg, self.shared_seed, fill, rst_at)?;
            }
        }
        let until = t0 + Duration::from_secs_f64(self.cfg.listen_s);
        let arrivals = self.collect(relay, &sent, until)?;
        record.observed_retransmissions = arrivals
            .iter()
            .map(|a| Self::count(&record.baseline, a))
            .collect();
        record.verdict = self.verdict(kind, &record);
        Ok(record)
    }

    fn vps_syn_fill(&mut self, relay: &EndpointSpec, n: u32, at: Timestamp) -> Result<(), BacklogError> {
        for k in 0..n {
            self.vps.wait_until(at + ms(k as f64 * self.cfg.fill_spacing_ms))?;
            let spec = SegmentSpec::new(relay.addr, self.cfg.fill_port + k as u16, relay.port, TcpFlags::SYN);
            self.vps.send_spec(&spec, &mut self.isn)?;
        }
        Ok(())
    }

    fn spoofed_fill(&mut self, relay: &EndpointSpec, n: u32, at: Timestamp) -> Result<(), BacklogError> {
        let shared = IsnGenerator::new(self.shared_seed);
        let vps = self.vps.local_addr();
        for k in 0..n {
            self.mm.wait_until(at + ms(k as f64 * self.cfg.fill_spacing_ms))?;
            let spec = SegmentSpec::new(relay.addr, self.cfg.fill_port + k as u16, relay.port, TcpFlags::SYN)
                .spoofed_from(vps)
                .seq(shared.isn_at(u64::from(k)));
            self.mm.send_spec(&spec, &mut self.isn)?;
        }
        Ok(())
    }

    fn verdict(&self, kind: ScanKind, r: &BacklogScanRecord) -> Verdict {
        let under = f64::from(r.probe_count + r.fill_count) <= 0.5 * f64::from(self.cfg.assumed_backlog);
        if under {
            return Verdict::Invalid(InvalidReason::UnderFill);
        }
        let max = r.observed_retransmissions.iter().copied().max().unwrap_or(0);
        if r.observed_retransmissions.iter().all(|c| *c == 0) {
            return Verdict::Invalid(InvalidReason::Offline);
        }
        let full = max >= self.cfg.expected_retransmissions;
        let pruned = max == self.cfg.pruned_retransmissions;
        if !full && !pruned {
            return Verdict::Invalid(InvalidReason::Inconsistent);
        }
        let passes = match kind {
            ScanKind::Syn => pruned,
            ScanKind::Rst => full != self.cfg.paper_literal_verdicts,
        };
        if passes {
            Verdict::Passes
        } else {
            Verdict::Dropped
        }
    }
}

/// The VPS half of the RST scan: one RST per spoofed SYN, with sequence
/// numbers rebuilt from the seed shared with the MM.
pub fn vps_rst_burst(
    vps: &dyn Transport,
    relay: &EndpointSpec,
    cfg: &BacklogConfig,
    shared_seed: u64,
    n: u32,
    at: Timestamp,
) -> Result<(), TransportError> {
    let shared = IsnGenerator::new(shared_seed);
    let mut unused = IsnGenerator::new(0);
    for k in 0..n {
        vps.wait_until(at + ms(k as f64 * cfg.fill_spacing_ms))?;
        let spec = SegmentSpec::new(relay.addr, cfg.fill_port + k as u16, relay.port, TcpFlags::RST)
            .seq(shared.isn_at(u64::from(k)).wrapping_add(1));
        vps.send_spec(&spec, &mut unused)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Discard {
    pub index: usize,
    pub relay: Ipv4Addr,
    pub rule: InvalidReason,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PrunedBacklog {
    pub retained: Vec<BacklogScanRecord>,
    pub discarded: Vec<Discard>,
}

/// Drops records whose relay was offline, did not run the default stack or
/// did not back off exponentially. Each discard names the first rule that
/// fired.
pub fn prune_backlog_dataset(records: &[BacklogScanRecord], cfg: &BacklogConfig) -> PrunedBacklog {
    let mut out = PrunedBacklog::default();
    for (index, r) in records.iter().enumerate() {
        let unreachable = r.verdict == Verdict::Invalid(InvalidReason::Offline);
        let rule = if unreachable {
            Err(InvalidReason::Offline)
        } else {
            r.baseline.check(cfg)
        };
        match rule {
            Ok(()) => out.retained.push(r.clone()),
            Err(rule) => out.discarded.push(Discard {
                index,
                relay: r.relay.addr,
                rule,
            }),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_baseline() -> BaselineProfile {
        BaselineProfile {
            answered: 3,
            retransmissions: 5,
            gaps: vec![1.0, 2.0, 4.0, 8.0, 16.0],
            offsets: vec![0.06, 1.06, 3.06, 7.06, 15.06, 31.06],
        }
    }

    #[test]
    fn baseline_rules() {
        let cfg = BacklogConfig::default();
        assert_eq!(default_baseline().check(&cfg), Ok(()));
        let four = BaselineProfile {
            retransmissions: 4,
            ..default_baseline()
        };
        assert_eq!(four.check(&cfg), Err(InvalidReason::NonDefaultStack));
        let flat = BaselineProfile {
            gaps: vec![3.0; 5],
            ..default_baseline()
        };
        assert_eq!(flat.check(&cfg), Err(InvalidReason::NoBackoff));
        assert_eq!(BaselineProfile::default().check(&cfg), Err(InvalidReason::Offline));
    }

    #[test]
    fn counts_by_timing_survive_losses() {
        let b = default_baseline();
        assert_eq!(BacklogScanner::count(&b, &[0.06, 1.06, 3.06, 31.06]), 5);
        assert_eq!(BacklogScanner::count(&b, &[0.06, 1.06, 3.06, 7.06]), 3);
        assert_eq!(BacklogScanner::count(&b, &[]), 0);
    }

    #[test]
    fn fill_bound_enforced() {
        let cfg = BacklogConfig {
            rst_fill: 145,
            ..BacklogConfig::default()
        };
        assert!(cfg.validate().is_err());
        BacklogConfig::default().validate().unwrap();
    }
}
