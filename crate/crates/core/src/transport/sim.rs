use std::io::Write;
use std::net::Ipv4Addr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use super::{
    FlowFilter, Inbound, PacketDirection, PacketLog, RateLimiter, SendReceipt, TcpSegment,
    Timestamp, Transport, TransportError,
};
use crate::simnet::{SimEvent, Simulator, TraceWriter};

struct NetState {
    sim: Simulator,
    limiter: RateLimiter,
    log: Option<Arc<PacketLog>>,
    trace: Option<TraceWriter<Box<dyn Write + Send>>>,
}

impl NetState {
    fn advance(&mut self, until: Timestamp) -> Result<(), TransportError> {
        let events = self.sim.step(until);
        if let Some(t) = self.trace.as_mut() {
            t.write(&events).map_err(|e| TransportError::Io(e.to_string()))?;
        }
        Ok(())
    }
}

/// A simulator shared by any number of vantage-point handles.
#[derive(Clone)]
pub struct SimNetwork {
    inner: Arc<Mutex<NetState>>,
}

impl SimNetwork {
    pub fn new(sim: Simulator) -> Self {
        Self {
            inner: Arc::new(Mutex::new(NetState {
                sim,
                limiter: RateLimiter::default(),
                log: None,
                trace: None,
            })),
        }
    }

    fn lock(&self) -> MutexGuard<'_, NetState> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn with_rate_limiter(self, limiter: RateLimiter) -> Self {
        self.lock().limiter = limiter;
        self
    }

    pub fn with_packet_log(self, log: PacketLog) -> Self {
        self.lock().log = Some(Arc::new(log));
        self
    }

    /// Every simulator event processed from now on is written to `out`.
    pub fn with_trace<W: Write + Send + 'static>(self, out: W) -> Self {
        self.lock().trace = Some(TraceWriter::new(Box::new(out)));
        self
    }

    /// A handle whose segments originate at `addr`. The address becomes a
    /// silent vantage point that buffers everything sent to it.
    pub fn transport(&self, addr: Ipv4Addr) -> SimTransport {
        self.lock().sim.add_vantage(addr);
        SimTransport {
            net: self.clone(),
            addr,
            closed: AtomicBool::new(false),
        }
    }

    pub fn now(&self) -> Timestamp {
        self.lock().sim.now()
    }

    pub fn advance(&self, until: Timestamp) -> Result<(), TransportError> {
        self.lock().advance(until)
    }

    /// Runs `f` with exclusive access to the simulator, e.g. to inspect
    /// ground truth.
    pub fn with_sim<R>(&self, f: impl FnOnce(&mut Simulator) -> R) -> R {
        f(&mut self.lock().sim)
    }

    /// Steps the simulator and returns the events instead of tracing them.
    pub fn step(&self, until: Timestamp) -> Vec<SimEvent> {
        self.lock().sim.step(until)
    }

    pub fn flush_trace(&self) -> std::io::Result<()> {
        match self.lock().trace.as_mut() {
            Some(t) => t.flush(),
            None => Ok(()),
        }
    }
}

/// Vantage-point handle onto a [`SimNetwork`].
pub struct SimTransport {
    net: SimNetwork,
    addr: Ipv4Addr,
    closed: AtomicBool,
}

impl SimTransport {
    pub fn network(&self) -> &SimNetwork {
        &self.net
    }

    fn check_open(&self) -> Result<(), TransportError> {
        if self.closed.load(Ordering::Acquire) {
            Err(TransportError::Closed)
        } else {
            Ok(())
        }
    }
}

impl Transport for SimTransport {
    fn local_addr(&self) -> Ipv4Addr {
        self.addr
    }

    fn supports_spoofing(&self) -> bool {
        true
    }

    fn now(&self) -> Timestamp {
        self.net.now()
    }

    fn wait_until(&self, t: Timestamp) -> Result<(), TransportError> {
        self.check_open()?;
        self.net.lock().advance(t)
    }

    fn send(&self, mut seg: TcpSegment) -> Result<SendReceipt, TransportError> {
        self.check_open()?;
        if seg.ttl == 0 || seg.flags.is_empty() {
            return Err(TransportError::InvalidField("ttl and flags must be set".into()));
        }
        let mut st = self.net.lock();
        let now = st.sim.now();
        let at = st.limiter.admit(seg.flow_key(), now)?;
        seg.timestamp = at;
        st.sim.inject(self.addr, seg, at);
        if let Some(log) = &st.log {
            log.record(PacketDirection::Tx, &seg);
        }
        Ok(SendReceipt { at, segment: seg })
    }

    fn capture_inbound(
        &self,
        filter: &FlowFilter,
        window: Duration,
    ) -> Result<Vec<Inbound>, TransportError> {
        self.check_open()?;
        if filter.is_empty() {
            return Err(TransportError::EmptyFilter);
        }
        let mut st = self.net.lock();
        let until = st.sim.now() + window;
        st.advance(until)?;
        let got = st.sim.drain_inbound(self.addr, filter);
        if let Some(log) = &st.log {
            for i in &got {
                if let Inbound::Tcp(s) = i {
                    log.record(PacketDirection::Rx, s);
                }
            }
        }
        Ok(got)
    }

    fn close(&self) {
        self.closed.store(true, Ordering::Release);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simnet::{ClientConfig, ServerConfig};
    use crate::transport::{FlowKey, IsnGenerator, SegmentSpec, TcpFlags};

    const MM: Ipv4Addr = Ipv4Addr::new(192, 0, 2, 10);
    const SERVER: Ipv4Addr = Ipv4Addr::new(198, 96, 155, 3);
    const CLIENT: Ipv4Addr = Ipv4Addr::new(58, 193, 4, 4);

    fn net() -> SimNetwork {
        let mut sim = Simulator::new(5);
        sim.add_server(SERVER, ServerConfig::default());
        sim.add_client(CLIENT, ClientConfig::default());
        SimNetwork::new(sim)
    }

    #[test]
    fn receipts_are_monotone_and_paced() {
        let n = net().with_rate_limiter(RateLimiter::new(5.0, Duration::from_secs(10)));
        let t = n.transport(MM);
        let mut isn = IsnGenerator::new(1);
        let spec = SegmentSpec::new(CLIENT, 5000, 80, TcpFlags::SYN_ACK);
        let r: Vec<_> = (0..5).map(|_| t.send_spec(&spec, &mut isn).unwrap().at).collect();
        for w in r.windows(2) {
            assert_eq!(w[1] - w[0], Duration::from_millis(200));
        }
    }

    #[test]
    fn send_after_close_fails() {
        let t = net().transport(MM);
        t.close();
        let mut isn = IsnGenerator::new(1);
        let spec = SegmentSpec::new(CLIENT, 5000, 80, TcpFlags::SYN_ACK);
        assert_eq!(t.send_spec(&spec, &mut isn), Err(TransportError::Closed));
    }

    #[test]
    fn capture_returns_syn_acks_in_order() {
        let n = net();
        let t = n.transport(MM);
        let mut isn = IsnGenerator::new(1);
        let spec = SegmentSpec::new(SERVER, 7000, 9001, TcpFlags::SYN);
        t.send_spec(&spec, &mut isn).unwrap();
        let f = FlowFilter::new().with(FlowKey::new(SERVER, 9001, MM, 7000));
        let got = t.capture(&f, Duration::from_millis(3500)).unwrap();
        assert_eq!(got.len(), 3, "original plus retransmissions at 1 s and 3 s");
        assert!(got.iter().all(|s| s.flags.is_syn_ack()));
        assert!(got.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
    }

    #[test]
    fn capture_demultiplexes_flows() {
        let n = net();
        let t = n.transport(MM);
        let mut isn = IsnGenerator::new(1);
        for port in [7000, 7001] {
            t.send_spec(&SegmentSpec::new(SERVER, port, 9001, TcpFlags::SYN), &mut isn)
                .unwrap();
        }
        let f = FlowFilter::new().with(FlowKey::new(SERVER, 9001, MM, 7001));
        let got = t.capture(&f, Duration::from_millis(500)).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].dst_port, 7001);
        let empty = FlowFilter::new().with(FlowKey::new(SERVER, 1, MM, 1));
        assert!(t.capture(&empty, Duration::from_secs(1)).unwrap().is_empty());
        assert_eq!(
            t.capture(&FlowFilter::new(), Duration::ZERO),
            Err(TransportError::EmptyFilter)
        );
    }
}
