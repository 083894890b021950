//! Raw-socket backend. Needs `CAP_NET_RAW` and an upstream that does not
//! filter spoofed source addresses.

use std::io;
use std::net::Ipv4Addr;
use std::os::fd::{AsRawFd, FromRawFd, OwnedFd};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use super::{FlowFilter, Inbound, RateLimiter, SendReceipt, TcpSegment, Timestamp, Transport, TransportError};

#[derive(Debug, Clone)]
pub struct LiveConfig {
    pub local_addr: Ipv4Addr,
    /// Segments per second per flow.
    pub per_flow_rate: f64,
    pub max_queue: Duration,
}

impl LiveConfig {
    pub fn new(local_addr: Ipv4Addr) -> Self {
        Self {
            local_addr,
            per_flow_rate: 20.0,
            max_queue: Duration::from_secs(30),
        }
    }
}

struct Shared {
    start: Instant,
    local: Ipv4Addr,
    buffer: Mutex<Vec<Inbound>>,
    stop: AtomicBool,
}

impl Shared {
    fn now(&self) -> Timestamp {
        Timestamp(self.start.elapsed().as_nanos() as u64)
    }
}

pub struct LiveTransport {
    shared: Arc<Shared>,
    tx: OwnedFd,
    limiter: Mutex<RateLimiter>,
    reader: Mutex<Option<JoinHandle<()>>>,
}

fn raw_socket(proto: libc::c_int) -> io::Result<OwnedFd> {
    // SAFETY: plain socket(2) call; the descriptor is owned right away.
    let fd = unsafe { libc::socket(libc::AF_INET, libc::SOCK_RAW, proto) };
    if fd < 0 {
        return Err(io::Error::last_os_error());
    }
    // SAFETY: fd is a fresh, valid descriptor nobody else owns.
    Ok(unsafe { OwnedFd::from_raw_fd(fd) })
}

fn io_err(e: io::Error) -> TransportError {
    TransportError::Io(e.to_string())
}

/// Parses an ICMP time-exceeded message quoting one of our TCP probes.
fn parse_icmp(bytes: &[u8], at: Timestamp) -> Option<Inbound> {
    let ihl = usize::from(bytes.first()? & 0x0f) * 4;
    let icmp = bytes.get(ihl..)?;
    if *icmp.first()? != 11 {
        return None;
    }
    let q = icmp.get(8..)?;
    let qihl = usize::from(q.first()? & 0x0f) * 4;
    if *q.get(9)? != 6 {
        return None;
    }
    let t = q.get(qihl..qihl + 8)?;
    let ack = q
        .get(qihl + 8..qihl + 12)
        .map_or(0, |a| u32::from_be_bytes([a[0], a[1], a[2], a[3]]));
    let quoted = TcpSegment {
        src_addr: Ipv4Addr::new(q[12], q[13], q[14], q[15]),
        dst_addr: Ipv4Addr::new(q[16], q[17], q[18], q[19]),
        src_port: u16::from_be_bytes([t[0], t[1]]),
        dst_port: u16::from_be_bytes([t[2], t[3]]),
        seq: u32::from_be_bytes([t[4], t[5], t[6], t[7]]),
        ack,
        flags: super::TcpFlags::from_bits_truncate(q.get(qihl + 13).copied().unwrap_or(0)),
        ttl: q[8],
        ipid: u16::from_be_bytes([q[4], q[5]]),
        timestamp: at,
    };
    Some(Inbound::TimeExceeded {
        responder: Ipv4Addr::new(bytes[12], bytes[13], bytes[14], bytes[15]),
        quoted,
        timestamp: at,
    })
}

fn read_loop(shared: Arc<Shared>, tcp: OwnedFd, icmp: OwnedFd) {
    let mut buf = [0u8; 2048];
    let mut fds = [
        libc::pollfd {
            fd: tcp.as_raw_fd(),
            events: libc::POLLIN,
            revents: 0,
        },
        libc::pollfd {
            fd: icmp.as_raw_fd(),
            events: libc::POLLIN,
            revents: 0,
        },
    ];
    while !shared.stop.load(Ordering::Acquire) {
        // SAFETY: fds points to two initialised pollfd structs.
        let n = unsafe { libc::poll(fds.as_mut_ptr(), 2, 100) };
        if n <= 0 {
            continue;
        }
        for (i, p) in fds.iter().enumerate() {
            if p.revents & libc::POLLIN == 0 {
                continue;
            }
            // SAFETY: buf is valid for buf.len() bytes.
            let len = unsafe { libc::recv(p.fd, buf.as_mut_ptr().cast(), buf.len(), 0) };
            if len <= 0 {
                continue;
            }
            let bytes = &buf[..len as usize];
            let at = shared.now();
            let got = if i == 0 {
                TcpSegment::parse(bytes, at).ok().map(Inbound::Tcp)
            } else {
                parse_icmp(bytes, at)
            };
            let ours = |a: Ipv4Addr| a == shared.local;
            match got {
                Some(Inbound::Tcp(s)) if ours(s.dst_addr) => shared.buffer.lock().unwrap().push(Inbound::Tcp(s)),
                Some(e @ Inbound::TimeExceeded { .. }) => shared.buffer.lock().unwrap().push(e),
                _ => {}
            }
        }
    }
}

impl LiveTransport {
    pub fn open(cfg: LiveConfig) -> Result<Self, TransportError> {
        let tx = raw_socket(libc::IPPROTO_RAW).map_err(io_err)?;
        let tcp = raw_socket(libc::IPPROTO_TCP).map_err(io_err)?;
        let icmp = raw_socket(libc::IPPROTO_ICMP).map_err(io_err)?;
        let shared = Arc::new(Shared {
            start: Instant::now(),
            local: cfg.local_addr,
            buffer: Mutex::new(Vec::new()),
            stop: AtomicBool::new(false),
        });
        let s = shared.clone();
        let reader = std::thread::spawn(move || read_loop(s, tcp, icmp));
        Ok(Self {
            shared,
            tx,
            limiter: Mutex::new(RateLimiter::new(cfg.per_flow_rate, cfg.max_queue)),
            reader: Mutex::new(Some(reader)),
        })
    }

    fn check_open(&self) -> Result<(), TransportError> {
        if self.shared.stop.load(Ordering::Acquire) {
            Err(TransportError::Closed)
        } else {
            Ok(())
        }
    }
}

impl Transport for LiveTransport {
    fn local_addr(&self) -> Ipv4Addr {
        self.shared.local
    }

    fn supports_spoofing(&self) -> bool {
        true
    }

    fn now(&self) -> Timestamp {
        self.shared.now()
    }

    fn wait_until(&self, t: Timestamp) -> Result<(), TransportError> {
        self.check_open()?;
        let now = self.now();
        if t > now {
            std::thread::sleep(t - now);
        }
        Ok(())
    }

    fn send(&self, mut seg: TcpSegment) -> Result<SendReceipt, TransportError> {
        self.check_open()?;
        let at = self.limiter.lock().unwrap().admit(seg.flow_key(), self.now())?;
        self.wait_until(at)?;
        seg.timestamp = self.now();
        let bytes = seg.to_bytes();
        let addr = libc::sockaddr_in {
            sin_family: libc::AF_INET as libc::sa_family_t,
            sin_port: 0,
            sin_addr: libc::in_addr {
                s_addr: u32::from(seg.dst_addr).to_be(),
            },
            sin_zero: [0; 8],
        };
        // SAFETY: bytes and addr outlive the call; sizes match the buffers.
        let n = unsafe {
            libc::sendto(
                self.tx.as_raw_fd(),
                bytes.as_ptr().cast(),
                bytes.len(),
                0,
                (&addr as *const libc::sockaddr_in).cast(),
                std::mem::size_of::<libc::sockaddr_in>() as libc::socklen_t,
            )
        };
        if n < 0 {
            return Err(io_err(io::Error::last_os_error()));
        }
        Ok(SendReceipt {
            at: seg.timestamp,
            segment: seg,
        })
    }

    fn capture_inbound(&self, filter: &FlowFilter, window: Duration) -> Result<Vec<Inbound>, TransportError> {
        self.check_open()?;
        if filter.is_empty() {
            return Err(TransportError::EmptyFilter);
        }
        std::thread::sleep(window);
        let mut buf = self.shared.buffer.lock().unwrap();
        let (hit, keep): (Vec<Inbound>, Vec<Inbound>) = buf.drain(..).partition(|i| filter.matches(i));
        *buf = keep;
        Ok(hit)
    }

    fn close(&self) {
        self.shared.stop.store(true, Ordering::Release);
        if let Some(h) = self.reader.lock().unwrap().take() {
            let _ = h.join();
        }
    }
}

impl Drop for LiveTransport {
    fn drop(&mut self) {
        self.close();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::TcpFlags;

    #[test]
    fn icmp_quote_is_decoded() {
        let probe = TcpSegment {
            src_addr: Ipv4Addr::new(192, 0, 2, 10),
            dst_addr: Ipv4Addr::new(58, 16, 0, 1),
            src_port: 9001,
            dst_port: 80,
            seq: 7,
            ack: 1234,
            flags: TcpFlags::SYN_ACK,
            ttl: 1,
            ipid: 0,
            timestamp: Timestamp::ZERO,
        };
        let mut pkt = vec![0x45, 0, 0, 0, 0, 0, 0, 0, 64, 1, 0, 0, 198, 51, 100, 1, 192, 0, 2, 10];
        pkt.extend_from_slice(&[11, 0, 0, 0, 0, 0, 0, 0]);
        pkt.extend_from_slice(&probe.to_bytes());
        match parse_icmp(&pkt, Timestamp::ZERO).unwrap() {
            Inbound::TimeExceeded { responder, quoted, .. } => {
                assert_eq!(responder, Ipv4Addr::new(198, 51, 100, 1));
                assert_eq!((quoted.src_port, quoted.ack), (9001, 1234));
            }
            other => panic!("{other:?}"),
        }
    }
}
