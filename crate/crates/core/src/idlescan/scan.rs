use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{
    CheckOutcome, IdleScanError, IpidSample, IpidTimeSeries, Phase, ScanRoundConfig,
};
use crate::endpoint::EndpointSpec;
use crate::transport::{
    FlowFilter, FlowKey, IsnGenerator, SegmentSpec, TcpFlags, Timestamp, Transport,
};

/// Source ports one scan worker owns on the MM. Workers sharing a
/// transport need disjoint plans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortPlan {
    pub probe: u16,
    pub client_check: u16,
    /// First of the server check's source ports.
    pub server_check: u16,
    /// First of the spoofed SYNs' source ports.
    pub spoof: u16,
}

pub const MAX_SPOOFED: u64 = 4096;

impl PortPlan {
    pub fn from_base(base: u16) -> Self {
        assert!(base <= 60_000, "port base leaves no room for spoofed ports");
        Self {
            probe: base,
            client_check: base + 1,
            server_check: base + 100,
            spoof: base + 1000,
        }
    }
}

impl Default for PortPlan {
    fn default() -> Self {
        Self::from_base(30_000)
    }
}

pub(super) fn client_port(c: &EndpointSpec) -> u16 {
    if c.port == 0 {
        80
    } else {
        c.port
    }
}

pub(super) fn secs(s: f64) -> Duration {
    Duration::from_secs_f64(s)
}

/// Everything one scan round produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub pre_client: CheckOutcome,
    pub pre_server: CheckOutcome,
    pub post_client: Option<CheckOutcome>,
    pub post_server: Option<CheckOutcome>,
    pub series: Option<IpidTimeSeries>,
    pub voided: Option<String>,
}

impl RoundOutcome {
    pub fn client_ok(&self) -> bool {
        self.pre_client.passed && self.post_client.is_some_and(|c| c.passed)
    }

    pub fn server_ok(&self) -> bool {
        self.pre_server.passed && self.post_server.is_some_and(|c| c.passed)
    }

    /// Only rounds whose checks all passed may enter the data set.
    pub fn admitted(&self) -> bool {
        self.client_ok() && self.server_ok() && self.series.is_some()
    }
}

/// Drives idle scans from one measurement machine.
pub struct IdleScanner<'a> {
    pub(super) mm: &'a dyn Transport,
    pub(super) cfg: ScanRoundConfig,
    pub(super) ports: PortPlan,
    pub(super) isn: IsnGenerator,
}

enum Step {
    Probe(u64),
    Spoof(u64),
}

impl<'a> IdleScanner<'a> {
    pub fn new(mm: &'a dyn Transport, cfg: ScanRoundConfig, isn_seed: u64) -> Self {
        Self {
            mm,
            cfg,
            ports: PortPlan::default(),
            isn: IsnGenerator::new(isn_seed),
        }
    }

    pub fn with_ports(mut self, ports: PortPlan) -> Self {
        self.ports = ports;
        self
    }

    pub fn config(&self) -> &ScanRoundConfig {
        &self.cfg
    }

    /// Base phase, then perturbation with spoofed SYNs, then the RST flush.
    /// The flush runs even when the round is voided.
    pub fn run_idle_scan(
        &mut self,
        client: &EndpointSpec,
        server: &EndpointSpec,
    ) -> Result<IpidTimeSeries, IdleScanError> {
        self.cfg.validate()?;
        let cfg = self.cfg.clone();
        let n_probes = (cfg.scan_duration * cfg.probe_rate).round() as u64;
        let n_spoof = (cfg.perturb_duration() * cfg.spoof_rate).round() as u64;
        if n_spoof > MAX_SPOOFED {
            return Err(IdleScanError::Config(format!(
                "{n_spoof} spoofed SYNs exceed the {MAX_SPOOFED} source ports reserved"
            )));
        }
        let t0 = self.mm.now();
        let p0 = t0 + secs(cfg.base_duration);
        let probe_at = |j: u64| t0 + secs(j as f64 / cfg.probe_rate);

        let mut plan: Vec<(Timestamp, Step)> = (0..n_probes)
            .map(|j| (probe_at(j), Step::Probe(j)))
            .chain((0..n_spoof).map(|k| {
                (p0 + secs((k as f64 + 0.5) / cfg.spoof_rate), Step::Spoof(k))
            }))
            .collect();
        plan.sort_by_key(|(t, _)| *t);

        let (_, ack_base) = self.isn.next();
        let cport = client_port(client);
        let mut spoofed = Vec::with_capacity(n_spoof as usize);
        for (at, step) in plan {
            self.mm.wait_until(at)?;
            match step {
                Step::Probe(j) => {
                    let spec = SegmentSpec::new(client.addr, self.ports.probe, cport, TcpFlags::SYN_ACK)
                        .ack(ack_base.wrapping_add(j as u32));
                    self.mm.send_spec(&spec, &mut self.isn)?;
                }
                Step::Spoof(k) => {
                    let sport = self.ports.spoof + k as u16;
                    let spec = SegmentSpec::new(server.addr, sport, server.port, TcpFlags::SYN)
                        .spoofed_from(client.addr);
                    let r = self.mm.send_spec(&spec, &mut self.isn)?;
                    spoofed.push((sport, r.segment.seq));
                }
            }
        }

        let key = FlowKey::new(client.addr, cport, self.mm.local_addr(), self.ports.probe);
        let got = self
            .mm
            .capture(&FlowFilter::new().with(key), Duration::from_secs(2))?;
        let mut by_probe: BTreeMap<u64, (Timestamp, u16)> = BTreeMap::new();
        for seg in got.iter().filter(|s| s.flags.is_rst()) {
            let j = u64::from(seg.seq.wrapping_sub(ack_base));
            if j < n_probes {
                by_probe.entry(j).or_insert((seg.timestamp, seg.ipid));
            }
        }
        let mut samples: Vec<IpidSample> = Vec::with_capacity(by_probe.len());
        for (j, (ts, ipid)) in by_probe {
            if samples.last().is_some_and(|s| s.timestamp >= ts) {
                continue;
            }
            let phase = if probe_at(j) < p0 {
                Phase::Base
            } else {
                Phase::Perturb
            };
            samples.push(IpidSample {
                timestamp: ts,
                ipid,
                phase,
            });
        }

        self.flush(client, server, &spoofed)?;

        if (samples.len() as u64) * 2 < n_probes {
            return Err(IdleScanError::Voided(format!(
                "client answered {} of {n_probes} probes",
                samples.len()
            )));
        }
        let series = IpidTimeSeries {
            samples,
            spoof_rate: cfg.spoof_rate,
            probe_rate: cfg.probe_rate,
            perturb_start: p0 + secs(0.5 / cfg.spoof_rate),
            client: client.clone(),
            server: server.clone(),
        };
        if series.phase_len(Phase::Base) < 2 || series.phase_len(Phase::Perturb) < 2 {
            return Err(IdleScanError::Voided("a phase has fewer than two samples".into()));
        }
        Ok(series)
    }

    /// Sends a RST for every spoofed SYN, twice, spread over the flush
    /// window, so the server's backlog is left as we found it.
    fn flush(
        &mut self,
        client: &EndpointSpec,
        server: &EndpointSpec,
        spoofed: &[(u16, u32)],
    ) -> Result<(), IdleScanError> {
        let start = self.mm.now();
        let end = start + secs(self.cfg.rst_flush_duration);
        if !spoofed.is_empty() {
            let total = 2 * spoofed.len();
            let gap = self.cfg.rst_flush_duration / total as f64;
            for i in 0..total {
                let (sport, seq) = spoofed[i % spoofed.len()];
                self.mm.wait_until(start + secs(i as f64 * gap))?;
                let spec = SegmentSpec::new(server.addr, sport, server.port, TcpFlags::RST)
                    .spoofed_from(client.addr)
                    .seq(seq.wrapping_add(1));
                self.mm.send_spec(&spec, &mut self.isn)?;
            }
        }
        self.mm.wait_until(end)?;
        Ok(())
    }

    /// Liveliness checks, the scan, and the checks again. A round whose
    /// checks fail is returned with `admitted() == false`.
    pub fn run_scan_round(
        &mut self,
        client: &EndpointSpec,
        server: &EndpointSpec,
    ) -> Result<RoundOutcome, IdleScanError> {
        let pre_client = self.client_liveliness(client)?;
        let pre_server = self.server_liveliness(server)?;
        if !(pre_client.passed && pre_server.passed) {
            return Ok(RoundOutcome {
                pre_client,
                pre_server,
                post_client: None,
                post_server: None,
                series: None,
                voided: Some("liveliness check failed before the scan".into()),
            });
        }
        let (series, mut voided) = match self.run_idle_scan(client, server) {
            Ok(s) => (Some(s), None),
            Err(IdleScanError::Voided(r)) => (None, Some(r)),
            Err(e) => return Err(e),
        };
        let post_client = self.client_liveliness(client)?;
        let post_server = self.server_liveliness(server)?;
        if voided.is_none() && !(post_client.passed && post_server.passed) {
            voided = Some("liveliness check failed after the scan".into());
        }
        Ok(RoundOutcome {
            pre_client,
            pre_server,
            post_client: Some(post_client),
            post_server: Some(post_server),
            series,
            voided,
        })
    }
}
