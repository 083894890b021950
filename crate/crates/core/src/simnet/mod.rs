//! Deterministic discrete-event simulator of clients, servers, vantage
//! points and filtered paths.
//!
//! All randomness comes from one ChaCha stream seeded by the scenario.
//! Events are ordered by virtual time and then by insertion order, so two
//! runs of the same scenario produce identical traces.

mod firewall;
mod host;
mod path;
mod presets;
mod scenario;
mod trace;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::net::Ipv4Addr;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::transport::{FlowFilter, FlowKey, Inbound, TcpSegment, Timestamp};

pub use firewall::{
    firewall_decide, Action, Decision, Direction, FirewallPolicy, FirewallRule, HourMask,
};
pub use host::{
    backlog_effective_retransmissions, ClientConfig, Downtime, HalfOpen, IpidMode, ServerConfig,
    SimClient, SimServer,
};
pub use path::{Hop, PathHop, Route, SimPath};
pub use presets::{
    BacklogPreset, PairPolicy, PairPreset, TraceGroup, TracePreset, TRACE_INSIDE_HOPS,
    TRACE_OUTSIDE_HOPS, PAIR_CLIENT, PAIR_MM, PAIR_PORT, PAIR_SERVER, PAIR_VPS,
};
pub use scenario::{ClientSpec, Defaults, Scenario, ScenarioError, ServerSpec, VantageSpec};
pub use trace::{read_trace, write_trace, TraceWriter};

use host::{ServerAction, TimerOutcome};

const NS_PER_HOUR: u64 = 3_600_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropReason {
    Loss,
    Firewall,
    Offline,
    BacklogFull,
    NoHost,
}

/// One line of the event trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SimEvent {
    Deliver {
        at: Timestamp,
        seg: TcpSegment,
    },
    Drop {
        at: Timestamp,
        hop: u32,
        reason: DropReason,
        seg: TcpSegment,
    },
    TimeExceeded {
        at: Timestamp,
        responder: Ipv4Addr,
        quoted: TcpSegment,
    },
    Retransmit {
        at: Timestamp,
        server: Ipv4Addr,
        flow: FlowKey,
        count: u32,
    },
    Expire {
        at: Timestamp,
        server: Ipv4Addr,
        flow: FlowKey,
    },
    Cleared {
        at: Timestamp,
        server: Ipv4Addr,
        flow: FlowKey,
    },
    Noise {
        at: Timestamp,
        client: Ipv4Addr,
    },
    Restart {
        at: Timestamp,
        server: Ipv4Addr,
    },
}

impl SimEvent {
    pub fn at(&self) -> Timestamp {
        match self {
            SimEvent::Deliver { at, .. }
            | SimEvent::Drop { at, .. }
            | SimEvent::TimeExceeded { at, .. }
            | SimEvent::Retransmit { at, .. }
            | SimEvent::Expire { at, .. }
            | SimEvent::Cleared { at, .. }
            | SimEvent::Noise { at, .. }
            | SimEvent::Restart { at, .. } => *at,
        }
    }
}

#[derive(Debug, Clone)]
enum Event {
    Inject { origin: Ipv4Addr, seg: TcpSegment },
    Arrive { seg: TcpSegment },
    Icmp { responder: Ipv4Addr, quoted: TcpSegment },
    Retransmit { server: Ipv4Addr, id: u64 },
    Noise { client: Ipv4Addr },
    Restart { server: Ipv4Addr },
}

struct Pending {
    at: Timestamp,
    seq: u64,
    event: Event,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    // BinaryHeap is a max-heap; earliest (time, seq) must pop first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

pub struct Simulator {
    clock: Timestamp,
    start_hour: u8,
    seq: u64,
    queue: BinaryHeap<Pending>,
    rng: ChaCha8Rng,
    clients: BTreeMap<Ipv4Addr, SimClient>,
    servers: BTreeMap<Ipv4Addr, SimServer>,
    vantages: BTreeMap<Ipv4Addr, Vec<Inbound>>,
    routes: Vec<Route>,
    default_delay: Duration,
    default_loss: f64,
}

impl Simulator {
    pub fn new(seed: u64) -> Self {
        Self {
            clock: Timestamp::ZERO,
            start_hour: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            clients: BTreeMap::new(),
            servers: BTreeMap::new(),
            vantages: BTreeMap::new(),
            routes: Vec::new(),
            default_delay: Duration::from_millis(30),
            default_loss: 0.0,
        }
    }

    pub fn now(&self) -> Timestamp {
        self.clock
    }

    pub fn set_start_hour(&mut self, hour: u8) {
        self.start_hour = hour % 24;
    }

    pub fn hour_at(&self, t: Timestamp) -> u8 {
        ((u64::from(self.start_hour) + t.0 / NS_PER_HOUR) % 24) as u8
    }

    pub fn hour(&self) -> u8 {
        self.hour_at(self.clock)
    }

    /// Path used when no declared route covers a pair of addresses.
    pub fn set_default_path(&mut self, delay: Duration, loss_rate: f64) {
        self.default_delay = delay;
        self.default_loss = loss_rate;
    }

    pub fn add_vantage(&mut self, addr: Ipv4Addr) {
        self.vantages.entry(addr).or_default();
    }

    pub fn is_vantage(&self, addr: Ipv4Addr) -> bool {
        self.vantages.contains_key(&addr)
    }

    pub fn add_client(&mut self, addr: Ipv4Addr, config: ClientConfig) {
        let initial = self.rng.random();
        let rate = config.background_rate;
        self.clients
            .insert(addr, SimClient::new(addr, config, initial));
        if rate > 0.0 {
            let at = self.clock + self.noise_gap(rate);
            self.schedule(at, Event::Noise { client: addr });
        }
    }

    pub fn add_server(&mut self, addr: Ipv4Addr, config: ServerConfig) {
        for d in &config.downtime {
            let at = Timestamp::from_secs_f64(d.from_s.max(0.0));
            self.schedule(at, Event::Restart { server: addr });
        }
        self.servers.insert(addr, SimServer::new(addr, config));
    }

    pub fn add_route(&mut self, route: Route) -> Result<(), String> {
        route.validate()?;
        self.routes.push(route);
        Ok(())
    }

    pub fn client(&self, addr: Ipv4Addr) -> Option<&SimClient> {
        self.clients.get(&addr)
    }

    pub fn server(&self, addr: Ipv4Addr) -> Option<&SimServer> {
        self.servers.get(&addr)
    }

    pub fn server_mut(&mut self, addr: Ipv4Addr) -> Option<&mut SimServer> {
        self.servers.get_mut(&addr)
    }

    /// The path a segment from `from` to `to` takes. The first declared
    /// route covering the pair wins.
    pub fn path(&self, from: Ipv4Addr, to: Ipv4Addr) -> SimPath {
        self.routes
            .iter()
            .find_map(|r| r.orientation(from, to).map(|fwd| SimPath::from_route(r, fwd)))
            .unwrap_or_else(|| SimPath::direct(self.default_delay, self.default_loss))
    }

    /// Hands `seg` to the network at `at`, leaving from `origin`. The
    /// origin decides the path; the source address may be spoofed.
    pub fn inject(&mut self, origin: Ipv4Addr, seg: TcpSegment, at: Timestamp) {
        let at = at.max(self.clock);
        self.schedule(at, Event::Inject { origin, seg });
    }

    /// Processes every event due at or before `until`.
    pub fn step(&mut self, until: Timestamp) -> Vec<SimEvent> {
        let mut out = Vec::new();
        while self.queue.peek().is_some_and(|p| p.at <= until) {
            let p = self.queue.pop().expect("peeked");
            self.clock = p.at;
            self.process(p.at, p.event, &mut out);
        }
        self.clock = self.clock.max(until);
        out
    }

    /// Removes and returns arrivals at `vantage` that match `filter`.
    pub fn drain_inbound(&mut self, vantage: Ipv4Addr, filter: &FlowFilter) -> Vec<Inbound> {
        let Some(buf) = self.vantages.get_mut(&vantage) else {
            return Vec::new();
        };
        let (hit, keep): (Vec<Inbound>, Vec<Inbound>) =
            buf.drain(..).partition(|i| filter.matches(i));
        *buf = keep;
        hit
    }

    /// Forgets buffered arrivals at `vantage` older than `before`.
    pub fn discard_inbound_before(&mut self, vantage: Ipv4Addr, before: Timestamp) {
        if let Some(buf) = self.vantages.get_mut(&vantage) {
            buf.retain(|i| i.timestamp() >= before);
        }
    }

    fn schedule(&mut self, at: Timestamp, event: Event) {
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(Pending { at, seq, event });
    }

    fn noise_gap(&mut self, rate: f64) -> Duration {
        let exp = Exp::new(rate).expect("positive rate");
        let secs: f64 = exp.sample(&mut self.rng);
        Duration::from_nanos(((secs * 1e9) as u64).max(1))
    }

    fn process(&mut self, now: Timestamp, event: Event, out: &mut Vec<SimEvent>) {
        match event {
            Event::Inject { origin, seg } => self.transmit(origin, seg, now, out),
            Event::Arrive { seg } => self.arrive(seg, now, out),
            Event::Icmp { responder, quoted } => {
                if let Some(buf) = self.vantages.get_mut(&quoted.src_addr) {
                    buf.push(Inbound::TimeExceeded {
                        responder,
                        quoted,
                        timestamp: now,
                    });
                    out.push(SimEvent::TimeExceeded {
                        at: now,
                        responder,
                        quoted,
                    });
                }
            }
            Event::Retransmit { server, id } => self.retransmit(server, id, now, out),
            Event::Noise { client } => {
                let rng = &mut self.rng;
                let Some(c) = self.clients.get_mut(&client) else {
                    return;
                };
                let rate = c.config.background_rate;
                if c.online(now) {
                    let dst = Ipv4Addr::from(0xc633_6400 | (rng.random::<u32>() & 0x0f));
                    c.next_ipid(dst, &mut || rng.random());
                    out.push(SimEvent::Noise { at: now, client });
                }
                let at = now + self.noise_gap(rate);
                self.schedule(at, Event::Noise { client });
            }
            Event::Restart { server } => {
                if let Some(s) = self.servers.get_mut(&server) {
                    s.restart();
                    out.push(SimEvent::Restart { at: now, server });
                }
            }
        }
    }

    /// Walks `seg` along its path: loss is drawn once, then each hop applies
    /// the firewall before decrementing the TTL.
    fn transmit(&mut self, origin: Ipv4Addr, mut seg: TcpSegment, now: Timestamp, out: &mut Vec<SimEvent>) {
        let path = self.path(origin, seg.dst_addr);
        if path.loss_rate > 0.0 && self.rng.random_bool(path.loss_rate) {
            out.push(SimEvent::Drop {
                at: now,
                hop: 0,
                reason: DropReason::Loss,
                seg,
            });
            return;
        }
        let mut at = now;
        for (i, hop) in path.hops.iter().enumerate() {
            at = at + hop.delay;
            let idx = i as u32 + 1;
            if firewall_decide(&seg, idx, &path.policy, self.hour_at(at)) == Decision::Drop {
                out.push(SimEvent::Drop {
                    at,
                    hop: idx,
                    reason: DropReason::Firewall,
                    seg,
                });
                return;
            }
            seg.ttl = seg.ttl.saturating_sub(1);
            if seg.ttl == 0 {
                let back = at + (at - now);
                self.schedule(
                    back,
                    Event::Icmp {
                        responder: hop.addr,
                        quoted: seg,
                    },
                );
                return;
            }
        }
        at = at + path.tail_delay;
        let idx = path.hops.len() as u32 + 1;
        if firewall_decide(&seg, idx, &path.policy, self.hour_at(at)) == Decision::Drop {
            out.push(SimEvent::Drop {
                at,
                hop: idx,
                reason: DropReason::Firewall,
                seg,
            });
            return;
        }
        self.schedule(at, Event::Arrive { seg });
    }

    fn arrive(&mut self, mut seg: TcpSegment, now: Timestamp, out: &mut Vec<SimEvent>) {
        seg.timestamp = now;
        let dst = seg.dst_addr;
        if let Some(buf) = self.vantages.get_mut(&dst) {
            buf.push(Inbound::Tcp(seg));
            out.push(SimEvent::Deliver { at: now, seg });
            return;
        }
        if let Some(c) = self.clients.get_mut(&dst) {
            if !c.online(now) {
                out.push(drop_at(now, DropReason::Offline, seg));
                return;
            }
            out.push(SimEvent::Deliver { at: now, seg });
            if let Some(mut reply) = c.respond(&seg) {
                let rng = &mut self.rng;
                reply.ipid = c.next_ipid(reply.dst_addr, &mut || rng.random());
                reply.timestamp = now;
                self.transmit(dst, reply, now, out);
            }
            return;
        }
        if let Some(s) = self.servers.get_mut(&dst) {
            if !s.online(now) {
                out.push(drop_at(now, DropReason::Offline, seg));
                return;
            }
            out.push(SimEvent::Deliver { at: now, seg });
            let isn = if seg.flags.is_bare_syn() {
                self.rng.random()
            } else {
                0
            };
            match s.receive(&seg, now, isn) {
                ServerAction::Reply(mut reply) => {
                    reply.ipid = s.next_ipid();
                    reply.timestamp = now;
                    self.transmit(dst, reply, now, out);
                }
                ServerAction::Accept(mut reply, id, gap) => {
                    reply.ipid = s.next_ipid();
                    reply.timestamp = now;
                    self.schedule(now + gap, Event::Retransmit { server: dst, id });
                    self.transmit(dst, reply, now, out);
                }
                ServerAction::Cleared(flow) => out.push(SimEvent::Cleared {
                    at: now,
                    server: dst,
                    flow,
                }),
                ServerAction::BacklogFull => {
                    out.push(drop_at(now, DropReason::BacklogFull, seg));
                }
                ServerAction::Nothing => {}
            }
            return;
        }
        out.push(drop_at(now, DropReason::NoHost, seg));
    }

    fn retransmit(&mut self, server: Ipv4Addr, id: u64, now: Timestamp, out: &mut Vec<SimEvent>) {
        let Some(s) = self.servers.get_mut(&server) else {
            return;
        };
        match s.timer(id) {
            TimerOutcome::Retransmit(mut seg, gap, count) => {
                seg.ipid = s.next_ipid();
                seg.timestamp = now;
                let online = s.online(now);
                out.push(SimEvent::Retransmit {
                    at: now,
                    server,
                    flow: seg.flow_key().reversed(),
                    count,
                });
                self.schedule(now + gap, Event::Retransmit { server, id });
                if online {
                    self.transmit(server, seg, now, out);
                }
            }
            TimerOutcome::Expire(flow) => out.push(SimEvent::Expire {
                at: now,
                server,
                flow,
            }),
            TimerOutcome::Stale => {}
        }
    }
}

fn drop_at(at: Timestamp, reason: DropReason, seg: TcpSegment) -> SimEvent {
    SimEvent::Drop {
        at,
        hop: 0,
        reason,
        seg,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prefix::Ipv4Prefix;
    use crate::transport::TcpFlags;

    const MM: Ipv4Addr = Ipv4Addr::new(192, 0, 2, 10);
    const CLIENT: Ipv4Addr = Ipv4Addr::new(58, 193, 4, 4);
    const SERVER: Ipv4Addr = Ipv4Addr::new(198, 96, 155, 3);

    fn seg(src: Ipv4Addr, dst: Ipv4Addr, flags: TcpFlags) -> TcpSegment {
        TcpSegment {
            src_addr: src,
            dst_addr: dst,
            src_port: 40000,
            dst_port: 9001,
            seq: 100,
            ack: 777,
            flags,
            ttl: 64,
            ipid: 0,
            timestamp: Timestamp::ZERO,
        }
    }

    #[test]
    fn empty_queue_advances_clock() {
        let mut sim = Simulator::new(1);
        assert!(sim.step(Timestamp::from_secs(5)).is_empty());
        assert_eq!(sim.now(), Timestamp::from_secs(5));
    }

    #[test]
    fn delivery_after_configured_delay() {
        let mut sim = Simulator::new(1);
        sim.set_default_path(Duration::from_millis(10), 0.0);
        sim.add_vantage(MM);
        sim.add_vantage(CLIENT);
        let t = Timestamp::from_secs(1);
        sim.inject(MM, seg(MM, CLIENT, TcpFlags::SYN), t);
        let ev = sim.step(Timestamp::from_secs(2));
        assert_eq!(
            ev,
            vec![SimEvent::Deliver {
                at: t + Duration::from_millis(10),
                seg: TcpSegment {
                    timestamp: t + Duration::from_millis(10),
                    ..seg(MM, CLIENT, TcpFlags::SYN)
                }
            }]
        );
    }

    #[test]
    fn client_rst_bumps_global_ipid() {
        let mut sim = Simulator::new(3);
        sim.add_vantage(MM);
        sim.add_client(CLIENT, ClientConfig::default());
        let before = sim.client(CLIENT).unwrap().ipid_counter();
        for k in 0..3 {
            sim.inject(MM, seg(MM, CLIENT, TcpFlags::SYN_ACK), Timestamp::from_secs(k));
        }
        sim.step(Timestamp::from_secs(10));
        let key = seg(MM, CLIENT, TcpFlags::SYN_ACK).flow_key().reversed();
        let got = sim.drain_inbound(MM, &FlowFilter::new().with(key));
        let ipids: Vec<u16> = got
            .iter()
            .map(|i| match i {
                Inbound::Tcp(s) => s.ipid,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(
            ipids,
            vec![before, before.wrapping_add(1), before.wrapping_add(2)]
        );
        let Inbound::Tcp(first) = got[0] else { unreachable!() };
        assert_eq!(first.seq, 777);
        assert!(first.flags.is_rst());
    }

    #[test]
    fn unanswered_syn_ack_retransmitted_on_schedule() {
        let mut sim = Simulator::new(1);
        sim.add_vantage(MM);
        sim.add_server(SERVER, ServerConfig::default());
        sim.inject(MM, seg(MM, SERVER, TcpFlags::SYN), Timestamp::ZERO);
        let ev = sim.step(Timestamp::from_secs(100));
        let times: Vec<f64> = ev
            .iter()
            .filter_map(|e| match e {
                SimEvent::Retransmit { at, .. } => Some(at.as_secs_f64()),
                _ => None,
            })
            .collect();
        let arrive = 0.03;
        let expect: Vec<f64> = [1.0, 3.0, 7.0, 15.0, 31.0].iter().map(|t| t + arrive).collect();
        for (a, b) in times.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-9, "{times:?}");
        }
        assert_eq!(times.len(), 5);
        assert!(ev.iter().any(|e| matches!(e, SimEvent::Expire { .. })));
        assert_eq!(sim.server(SERVER).unwrap().occupancy(), 0);
    }

    #[test]
    fn ttl_expiry_reports_hop() {
        let mut sim = Simulator::new(1);
        sim.add_vantage(MM);
        sim.add_route(
            Route::new(Ipv4Prefix::host(MM), Ipv4Prefix::host(CLIENT))
                .hop(Ipv4Addr::new(1, 1, 1, 1), "US", 5.0)
                .hop(Ipv4Addr::new(2, 2, 2, 2), "CN", 5.0),
        )
        .unwrap();
        let mut s = seg(MM, CLIENT, TcpFlags::SYN_ACK);
        s.ttl = 2;
        sim.inject(MM, s, Timestamp::ZERO);
        sim.step(Timestamp::from_secs(1));
        let got = sim.drain_inbound(MM, &FlowFilter::new().with(s.flow_key().reversed()));
        assert_eq!(got.len(), 1);
        match got[0] {
            Inbound::TimeExceeded {
                responder,
                timestamp,
                ..
            } => {
                assert_eq!(responder, Ipv4Addr::new(2, 2, 2, 2));
                assert_eq!(timestamp, Timestamp(20_000_000));
            }
            _ => panic!(),
        }
    }
}
