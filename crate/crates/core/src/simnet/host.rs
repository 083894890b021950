use std::collections::{BTreeMap, HashMap};
use std::net::Ipv4Addr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::transport::{FlowKey, TcpFlags, TcpSegment, Timestamp};

/// How a host fills the IP identification field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IpidMode {
    /// One counter for every packet, whatever the destination.
    #[default]
    Global,
    /// One counter per destination address.
    PerDestination,
    Random,
}

/// Closed interval of virtual seconds during which a host is unreachable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Downtime {
    pub from_s: f64,
    pub to_s: f64,
}

impl Downtime {
    pub fn contains(&self, t: Timestamp) -> bool {
        let s = t.as_secs_f64();
        s >= self.from_s && s <= self.to_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientConfig {
    pub ipid: IpidMode,
    /// Poisson rate of packets the client sends to third parties.
    pub background_rate: f64,
    /// Answer unsolicited SYN/ACKs with a RST.
    pub rst_policy: bool,
    pub initial_ipid: Option<u16>,
    pub downtime: Vec<Downtime>,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            ipid: IpidMode::Global,
            background_rate: 0.0,
            rst_policy: true,
            initial_ipid: None,
            downtime: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimClient {
    pub addr: Ipv4Addr,
    pub config: ClientConfig,
    ipid_counter: u16,
    per_destination: HashMap<Ipv4Addr, u16>,
    sent: u64,
}

impl SimClient {
    pub fn new(addr: Ipv4Addr, config: ClientConfig, initial_ipid: u16) -> Self {
        Self {
            addr,
            ipid_counter: config.initial_ipid.unwrap_or(initial_ipid),
            config,
            per_destination: HashMap::new(),
            sent: 0,
        }
    }

    pub fn ipid_counter(&self) -> u16 {
        self.ipid_counter
    }

    /// Packets sent so far, responses and background noise alike.
    pub fn sent(&self) -> u64 {
        self.sent
    }

    pub fn online(&self, t: Timestamp) -> bool {
        !self.config.downtime.iter().any(|d| d.contains(t))
    }

    /// Stamps the next IPID for a packet to `dst`. `fresh` supplies
    /// randomness for the random and per-destination modes.
    pub(crate) fn next_ipid(&mut self, dst: Ipv4Addr, fresh: &mut dyn FnMut() -> u16) -> u16 {
        self.sent += 1;
        match self.config.ipid {
            IpidMode::Global => {
                let v = self.ipid_counter;
                self.ipid_counter = v.wrapping_add(1);
                v
            }
            IpidMode::PerDestination => {
                let c = self.per_destination.entry(dst).or_insert_with(|| fresh());
                let v = *c;
                *c = v.wrapping_add(1);
                v
            }
            IpidMode::Random => fresh(),
        }
    }

    /// Response to a delivered segment, before IPID stamping.
    pub(crate) fn respond(&self, seg: &TcpSegment) -> Option<TcpSegment> {
        if !self.config.rst_policy {
            return None;
        }
        if seg.flags.is_syn_ack() {
            Some(seg.reply(TcpFlags::RST, seg.ack, 0))
        } else if seg.flags.is_bare_syn() {
            Some(seg.reply(TcpFlags::RST_ACK, 0, seg.seq.wrapping_add(1)))
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub open_ports: Vec<u16>,
    pub backlog_capacity: usize,
    pub max_retransmissions: u32,
    /// Gaps before each SYN/ACK retransmission, in seconds. Beyond the
    /// list the last gap doubles.
    pub backoff_s: Vec<f64>,
    /// Whether the server retransmits less when its backlog is over half full.
    pub prunes: bool,
    /// Half-open entries held by unrelated clients for the whole run.
    pub static_halfopen: usize,
    pub closed_port_rst: bool,
    pub downtime: Vec<Downtime>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            open_ports: vec![9001],
            backlog_capacity: 256,
            max_retransmissions: 5,
            backoff_s: vec![1.0, 2.0, 4.0, 8.0, 16.0],
            prunes: true,
            static_halfopen: 0,
            closed_port_rst: true,
            downtime: Vec::new(),
        }
    }
}

impl ServerConfig {
    /// Gap before retransmission number `n` (0-based), and for `n ==
    /// max_retransmissions` the final timeout after which the entry expires.
    pub fn gap(&self, n: u32) -> Duration {
        let n = n as usize;
        let secs = match self.backoff_s.get(n) {
            Some(g) => *g,
            None => {
                let last = self.backoff_s.last().copied().unwrap_or(1.0);
                last * 2f64.powi((n + 1 - self.backoff_s.len()) as i32)
            }
        };
        Duration::from_secs_f64(secs)
    }
}

/// Retransmission budget for a backlog that is `occupancy` full: 5 up to
/// half full, 3 up to three quarters, 2 beyond.
pub fn backlog_effective_retransmissions(occupancy: f64) -> u32 {
    if occupancy <= 0.5 {
        5
    } else if occupancy <= 0.75 {
        3
    } else {
        2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfOpen {
    pub id: u64,
    /// As travelling from the peer to the server.
    pub flow: FlowKey,
    pub peer_isn: u32,
    pub isn: u32,
    pub retransmissions_done: u32,
    pub created_at: Timestamp,
}

#[derive(Debug, Clone)]
pub struct SimServer {
    pub addr: Ipv4Addr,
    pub config: ServerConfig,
    backlog: BTreeMap<u64, HalfOpen>,
    by_flow: HashMap<FlowKey, u64>,
    next_id: u64,
    ipid_counter: u16,
    peak: usize,
}

pub(crate) enum ServerAction {
    Reply(TcpSegment),
    /// Reply and arm the retransmission timer of entry `id` after `gap`.
    Accept(TcpSegment, u64, Duration),
    Cleared(FlowKey),
    Nothing,
    BacklogFull,
}

pub(crate) enum TimerOutcome {
    Retransmit(TcpSegment, Duration, u32),
    Expire(FlowKey),
    Stale,
}

impl SimServer {
    pub fn new(addr: Ipv4Addr, config: ServerConfig) -> Self {
        Self {
            addr,
            peak: config.static_halfopen,
            config,
            backlog: BTreeMap::new(),
            by_flow: HashMap::new(),
            next_id: 0,
            ipid_counter: 0,
        }
    }

    /// Entries currently held, including the static ones.
    pub fn occupancy(&self) -> usize {
        self.backlog.len() + self.config.static_halfopen
    }

    pub fn occupancy_fraction(&self) -> f64 {
        self.occupancy() as f64 / self.config.backlog_capacity as f64
    }

    pub fn peak_occupancy(&self) -> usize {
        self.peak
    }

    pub fn reset_peak(&mut self) {
        self.peak = self.occupancy();
    }

    pub fn half_open(&self) -> impl Iterator<Item = &HalfOpen> {
        self.backlog.values()
    }

    pub fn online(&self, t: Timestamp) -> bool {
        !self.config.downtime.iter().any(|d| d.contains(t))
    }

    pub(crate) fn next_ipid(&mut self) -> u16 {
        let v = self.ipid_counter;
        self.ipid_counter = v.wrapping_add(1);
        v
    }

    pub(crate) fn restart(&mut self) {
        self.backlog.clear();
        self.by_flow.clear();
    }

    pub(crate) fn receive(&mut self, seg: &TcpSegment, now: Timestamp, isn: u32) -> ServerAction {
        let key = seg.flow_key();
        let open = self.config.open_ports.contains(&seg.dst_port);
        if seg.flags.is_rst() {
            if let Some(&id) = self.by_flow.get(&key) {
                if self.backlog[&id].peer_isn.wrapping_add(1) == seg.seq {
                    self.remove(id);
                    return ServerAction::Cleared(key);
                }
            }
            return ServerAction::Nothing;
        }
        if seg.flags.is_bare_syn() {
            if !open {
                return if self.config.closed_port_rst {
                    ServerAction::Reply(seg.reply(TcpFlags::RST_ACK, 0, seg.seq.wrapping_add(1)))
                } else {
                    ServerAction::Nothing
                };
            }
            if self.by_flow.contains_key(&key) {
                return ServerAction::Nothing;
            }
            if self.occupancy() >= self.config.backlog_capacity {
                return ServerAction::BacklogFull;
            }
            let id = self.next_id;
            self.next_id += 1;
            self.backlog.insert(
                id,
                HalfOpen {
                    id,
                    flow: key,
                    peer_isn: seg.seq,
                    isn,
                    retransmissions_done: 0,
                    created_at: now,
                },
            );
            self.by_flow.insert(key, id);
            self.peak = self.peak.max(self.occupancy());
            let reply = seg.reply(TcpFlags::SYN_ACK, isn, seg.seq.wrapping_add(1));
            return ServerAction::Accept(reply, id, self.config.gap(0));
        }
        if seg.flags.is_syn_ack() {
            return ServerAction::Reply(seg.reply(TcpFlags::RST, seg.ack, 0));
        }
        if seg.flags.contains(TcpFlags::ACK) {
            if let Some(&id) = self.by_flow.get(&key) {
                if self.backlog[&id].isn.wrapping_add(1) == seg.ack {
                    self.remove(id);
                    return ServerAction::Cleared(key);
                }
            }
        }
        ServerAction::Nothing
    }

    /// The retransmission timer of entry `id` fired.
    pub(crate) fn timer(&mut self, id: u64) -> TimerOutcome {
        let frac = self.occupancy_fraction();
        let max = self.config.max_retransmissions;
        let allowed = if self.config.prunes {
            max.min(backlog_effective_retransmissions(frac))
        } else {
            max
        };
        let Some(entry) = self.backlog.get_mut(&id) else {
            return TimerOutcome::Stale;
        };
        if entry.retransmissions_done >= allowed {
            let flow = entry.flow;
            self.remove(id);
            return TimerOutcome::Expire(flow);
        }
        entry.retransmissions_done += 1;
        let n = entry.retransmissions_done;
        let f = entry.flow;
        let seg = TcpSegment {
            src_addr: f.dst_addr,
            dst_addr: f.src_addr,
            src_port: f.dst_port,
            dst_port: f.src_port,
            seq: entry.isn,
            ack: entry.peer_isn.wrapping_add(1),
            flags: TcpFlags::SYN_ACK,
            ttl: crate::transport::DEFAULT_TTL,
            ipid: 0,
            timestamp: Timestamp::ZERO,
        };
        TimerOutcome::Retransmit(seg, self.config.gap(n), n)
    }

    fn remove(&mut self, id: u64) {
        if let Some(e) = self.backlog.remove(&id) {
            self.by_flow.remove(&e.flow);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn effective_retransmissions_piecewise() {
        assert_eq!(backlog_effective_retransmissions(0.30), 5);
        assert_eq!(backlog_effective_retransmissions(0.5), 5);
        assert_eq!(backlog_effective_retransmissions(150.0 / 256.0), 3);
        assert_eq!(backlog_effective_retransmissions(0.75), 3);
        assert_eq!(backlog_effective_retransmissions(0.90), 2);
    }

    #[test]
    fn gaps_double_past_the_list() {
        let c = ServerConfig::default();
        let gaps: Vec<f64> = (0..6).map(|n| c.gap(n).as_secs_f64()).collect();
        assert_eq!(gaps, vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0]);
    }

    #[test]
    fn global_ipid_counts_every_packet() {
        let mut c = SimClient::new(Ipv4Addr::new(1, 1, 1, 1), ClientConfig::default(), 65534);
        let mut zero = || 0u16;
        let a = c.next_ipid(Ipv4Addr::new(2, 2, 2, 2), &mut zero);
        let b = c.next_ipid(Ipv4Addr::new(3, 3, 3, 3), &mut zero);
        let d = c.next_ipid(Ipv4Addr::new(2, 2, 2, 2), &mut zero);
        assert_eq!((a, b, d), (65534, 65535, 0));
        assert_eq!(c.sent(), 3);
    }

    fn syn(port: u16, seq: u32) -> TcpSegment {
        TcpSegment {
            src_addr: Ipv4Addr::new(10, 0, 0, 1),
            dst_addr: Ipv4Addr::new(10, 0, 0, 2),
            src_port: port,
            dst_port: 9001,
            seq,
            ack: 0,
            flags: TcpFlags::SYN,
            ttl: 64,
            ipid: 0,
            timestamp: Timestamp::ZERO,
        }
    }

    #[test]
    fn rst_with_matching_seq_clears_only_its_entry() {
        let mut s = SimServer::new(Ipv4Addr::new(10, 0, 0, 2), ServerConfig::default());
        for p in 0..3 {
            s.receive(&syn(1000 + p, 500), Timestamp::ZERO, 7);
        }
        let mut rst = syn(1001, 999);
        rst.flags = TcpFlags::RST;
        assert!(matches!(s.receive(&rst, Timestamp::ZERO, 0), ServerAction::Nothing));
        rst.seq = 501;
        assert!(matches!(s.receive(&rst, Timestamp::ZERO, 0), ServerAction::Cleared(_)));
        assert_eq!(s.occupancy(), 2);
    }

    #[test]
    fn full_backlog_drops_syn() {
        let cfg = ServerConfig {
            backlog_capacity: 2,
            ..ServerConfig::default()
        };
        let mut s = SimServer::new(Ipv4Addr::new(10, 0, 0, 2), cfg);
        s.receive(&syn(1, 0), Timestamp::ZERO, 0);
        s.receive(&syn(2, 0), Timestamp::ZERO, 0);
        assert!(matches!(
            s.receive(&syn(3, 0), Timestamp::ZERO, 0),
            ServerAction::BacklogFull
        ));
        assert_eq!(s.occupancy(), 2);
    }
}
