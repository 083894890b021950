use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::endpoint::EndpointSpec;
use crate::transport::{
    FlowFilter, FlowKey, IsnGenerator, SegmentSpec, TcpFlags, Timestamp, Transport, TransportError,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QualifyConfig {
    /// Total observation time in seconds.
    pub window: f64,
    /// Each chunk of this many seconds must pass on its own.
    pub chunk: f64,
    pub probe_rate: f64,
    /// Largest tolerated median of third-party packets per second.
    pub noise_threshold: f64,
    /// Largest tolerated share of backward IPID steps.
    pub artifact_fraction: f64,
    pub src_port: u16,
}

impl Default for QualifyConfig {
    fn default() -> Self {
        Self {
            window: 300.0,
            chunk: 60.0,
            probe_rate: 1.0,
            noise_threshold: 2.0,
            artifact_fraction: 0.2,
            src_port: 29_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Disqualification {
    RandomIpid,
    PerFlowIpid,
    Offline,
    TooNoisy,
}

impl Disqualification {
    pub fn label(self) -> &'static str {
        match self {
            Disqualification::RandomIpid => "random-ipid",
            Disqualification::PerFlowIpid => "per-flow-ipid",
            Disqualification::Offline => "offline",
            Disqualification::TooNoisy => "too-noisy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "reason", rename_all = "kebab-case")]
pub enum Qualification {
    Qualified,
    Disqualified(Disqualification),
}

impl Qualification {
    pub fn is_qualified(self) -> bool {
        self == Qualification::Qualified
    }
}

#[derive(Debug, Clone, Copy)]
struct Reply {
    at: Timestamp,
    ipid: u16,
    source: usize,
}

/// Probes `client` alternately from two vantage points. A host-wide
/// counter shows one increasing sequence across both sources; a
/// per-destination counter shows two unrelated ones.
pub fn qualify_client(
    probers: [&dyn Transport; 2],
    client: &EndpointSpec,
    cfg: &QualifyConfig,
    isn: &mut IsnGenerator,
) -> Result<Qualification, TransportError> {
    let chunks = (cfg.window / cfg.chunk).ceil().max(1.0) as u32;
    let per_chunk = (cfg.chunk * cfg.probe_rate).round().max(2.0) as u32;
    let cport = if client.port == 0 { 80 } else { client.port };
    for _ in 0..chunks {
        let (_, base) = isn.next();
        let t0 = probers[0].now();
        for i in 0..per_chunk {
            let at = t0 + Duration::from_secs_f64(f64::from(i) / cfg.probe_rate);
            let p = probers[(i % 2) as usize];
            p.wait_until(at)?;
            let spec = SegmentSpec::new(client.addr, cfg.src_port, cport, TcpFlags::SYN_ACK)
                .ack(base.wrapping_add(i));
            p.send_spec(&spec, isn)?;
        }
        let mut replies = Vec::new();
        for (source, p) in probers.iter().enumerate() {
            let key = FlowKey::new(client.addr, cport, p.local_addr(), cfg.src_port);
            let window = if source == 0 {
                Duration::from_secs(1)
            } else {
                Duration::ZERO
            };
            for s in p.capture(&FlowFilter::new().with(key), window)? {
                let i = s.seq.wrapping_sub(base);
                if s.flags.is_rst() && i < per_chunk && i % 2 == source as u32 {
                    replies.push(Reply {
                        at: s.timestamp,
                        ipid: s.ipid,
                        source,
                    });
                }
            }
        }
        if let Some(reason) = judge(&mut replies, per_chunk, cfg) {
            return Ok(Qualification::Disqualified(reason));
        }
    }
    Ok(Qualification::Qualified)
}

fn artifact_share(seq: &[Reply]) -> f64 {
    if seq.len() < 2 {
        return 0.0;
    }
    let bad = seq
        .windows(2)
        .filter(|w| w[1].ipid.wrapping_sub(w[0].ipid) >= 32768)
        .count();
    bad as f64 / (seq.len() - 1) as f64
}

fn judge(replies: &mut [Reply], sent: u32, cfg: &QualifyConfig) -> Option<Disqualification> {
    if (replies.len() as u32) * 2 < sent {
        return Some(Disqualification::Offline);
    }
    replies.sort_by_key(|r| r.at);
    let per_source: Vec<Vec<Reply>> = (0..2)
        .map(|s| replies.iter().copied().filter(|r| r.source == s).collect())
        .collect();
    let own = per_source.iter().map(|s| artifact_share(s)).fold(0.0, f64::max);
    if own > cfg.artifact_fraction {
        return Some(Disqualification::RandomIpid);
    }
    if artifact_share(replies) > cfg.artifact_fraction {
        return Some(Disqualification::PerFlowIpid);
    }
    let mut rates: Vec<f64> = replies
        .windows(2)
        .filter_map(|w| {
            let d = w[1].ipid.wrapping_sub(w[0].ipid);
            let dt = (w[1].at - w[0].at).as_secs_f64();
            (d < 32768 && dt > 0.0).then(|| (f64::from(d) - 1.0).max(0.0) / dt)
        })
        .collect();
    rates.sort_by(f64::total_cmp);
    let median = match rates.len() {
        0 => 0.0,
        n if n % 2 == 1 => rates[n / 2],
        n => 0.5 * (rates[n / 2 - 1] + rates[n / 2]),
    };
    (median > cfg.noise_threshold).then_some(Disqualification::TooNoisy)
}
