//! Crafting, sending and capturing TCP segments.
//!
//! Scans are written against the [`Transport`] trait. Two backends exist:
//! [`SimTransport`], a handle onto a shared deterministic simulator, and the
//! raw-socket `LiveTransport` behind the `live` feature.

mod log;
mod rate;
mod segment;
mod sim;

#[cfg(feature = "live")]
mod live;

use std::collections::HashSet;
use std::net::Ipv4Addr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use log::{PacketDirection, PacketLog};
pub use rate::RateLimiter;
pub use segment::{
    craft_segment, FlowKey, IsnGenerator, SegmentSpec, TcpFlags, TcpSegment, Timestamp,
    DEFAULT_TTL, WIRE_LEN,
};
pub(crate) use segment::splitmix64;
pub use sim::{SimNetwork, SimTransport};

#[cfg(feature = "live")]
pub use live::{LiveConfig, LiveTransport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("transport is closed")]
    Closed,
    #[error("rate limiter refused segment for flow {0:?}")]
    RateLimited(FlowKey),
    #[error("backend cannot send spoofed segments")]
    UnsupportedSpoofing,
    #[error("invalid field: {0}")]
    InvalidField(String),
    #[error("capture filter is empty")]
    EmptyFilter,
    #[error("malformed packet: {0}")]
    Malformed(String),
    #[error("i/o: {0}")]
    Io(String),
}

/// Proof that a segment was handed to the wire (or simulator) at `at`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SendReceipt {
    pub at: Timestamp,
    pub segment: TcpSegment,
}

/// Something that arrived at one of our addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Inbound {
    Tcp(TcpSegment),
    /// ICMP time-exceeded; `quoted` is the probe that expired.
    TimeExceeded {
        responder: Ipv4Addr,
        quoted: TcpSegment,
        timestamp: Timestamp,
    },
}

impl Inbound {
    pub fn timestamp(&self) -> Timestamp {
        match self {
            Inbound::Tcp(s) => s.timestamp,
            Inbound::TimeExceeded { timestamp, .. } => *timestamp,
        }
    }

    /// The flow key as seen by the receiver. ICMP errors are keyed by the
    /// reverse of the quoted probe so that a worker's filter covers both its
    /// TCP replies and the errors its probes trigger.
    pub fn inbound_key(&self) -> FlowKey {
        match self {
            Inbound::Tcp(s) => s.flow_key(),
            Inbound::TimeExceeded { quoted, .. } => quoted.flow_key().reversed(),
        }
    }
}

/// Set of inbound flow keys owned by one scan worker.
#[derive(Debug, Clone, Default)]
pub struct FlowFilter {
    keys: HashSet<FlowKey>,
}

impl FlowFilter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: FlowKey) -> Self {
        self.keys.insert(key);
        self
    }

    pub fn insert(&mut self, key: FlowKey) {
        self.keys.insert(key);
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn matches(&self, inbound: &Inbound) -> bool {
        self.keys.contains(&inbound.inbound_key())
    }
}

impl FromIterator<FlowKey> for FlowFilter {
    fn from_iter<I: IntoIterator<Item = FlowKey>>(iter: I) -> Self {
        Self {
            keys: iter.into_iter().collect(),
        }
    }
}

/// Backend-neutral packet I/O.
///
/// `send` and `capture_inbound` may be called from several workers at once;
/// ordering guarantees hold per flow.
pub trait Transport: Send + Sync {
    /// Address segments originate from unless spoofed.
    fn local_addr(&self) -> Ipv4Addr;

    fn supports_spoofing(&self) -> bool;

    fn now(&self) -> Timestamp;

    /// Blocks (live) or advances virtual time (sim) until `t`.
    fn wait_until(&self, t: Timestamp) -> Result<(), TransportError>;

    /// Enqueues a segment. The receipt time may lie in the future when the
    /// flow is being paced by the rate limiter.
    fn send(&self, seg: TcpSegment) -> Result<SendReceipt, TransportError>;

    /// Waits `window`, then removes and returns every buffered arrival
    /// matching `filter`, in arrival order.
    fn capture_inbound(
        &self,
        filter: &FlowFilter,
        window: Duration,
    ) -> Result<Vec<Inbound>, TransportError>;

    fn close(&self);

    fn craft(
        &self,
        spec: &SegmentSpec,
        isn: &mut IsnGenerator,
    ) -> Result<TcpSegment, TransportError> {
        craft_segment(spec, self.local_addr(), self.supports_spoofing(), isn)
    }

    fn send_spec(
        &self,
        spec: &SegmentSpec,
        isn: &mut IsnGenerator,
    ) -> Result<SendReceipt, TransportError> {
        let seg = self.craft(spec, isn)?;
        self.send(seg)
    }

    /// TCP-only view of [`Transport::capture_inbound`]. Matching ICMP errors
    /// are consumed and dropped.
    fn capture(
        &self,
        filter: &FlowFilter,
        window: Duration,
    ) -> Result<Vec<TcpSegment>, TransportError> {
        Ok(self
            .capture_inbound(filter, window)?
            .into_iter()
            .filter_map(|i| match i {
                Inbound::Tcp(s) => Some(s),
                Inbound::TimeExceeded { .. } => None,
            })
            .collect())
    }

    fn sleep(&self, d: Duration) -> Result<(), TransportError> {
        self.wait_until(self.now() + d)
    }
}
