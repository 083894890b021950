use std::collections::HashMap;
use std::time::Duration;

use super::{FlowKey, Timestamp, TransportError};

/// Per-flow pacing with a global FIFO wire.
///
/// A flow may emit at most `per_flow_rate` segments per second; excess
/// segments are delayed to the next free slot. A segment whose slot would
/// lie more than `max_queue` in the future is refused. Receipt times are
/// non-decreasing across all flows.
#[derive(Debug, Clone)]
pub struct RateLimiter {
    interval: Duration,
    max_queue: Duration,
    next_slot: HashMap<FlowKey, Timestamp>,
    last_receipt: Timestamp,
}

pub const DEFAULT_PER_FLOW_RATE: f64 = 10.0;

impl Default for RateLimiter {
    fn default() -> Self {
        Self::new(DEFAULT_PER_FLOW_RATE, Duration::from_secs(10))
    }
}

impl RateLimiter {
    pub fn new(per_flow_rate: f64, max_queue: Duration) -> Self {
        assert!(per_flow_rate > 0.0, "rate must be positive");
        Self {
            interval: Duration::from_secs_f64(1.0 / per_flow_rate),
            max_queue,
            next_slot: HashMap::new(),
            last_receipt: Timestamp::ZERO,
        }
    }

    pub fn interval(&self) -> Duration {
        self.interval
    }

    /// Returns the time the segment may hit the wire.
    pub fn admit(&mut self, key: FlowKey, now: Timestamp) -> Result<Timestamp, TransportError> {
        let flow_slot = self.next_slot.get(&key).copied().unwrap_or(now);
        let at = flow_slot.max(now).max(self.last_receipt);
        if at > now + self.max_queue {
            return Err(TransportError::RateLimited(key));
        }
        if self.next_slot.len() > 8192 {
            self.next_slot.retain(|_, slot| *slot > now);
        }
        self.next_slot.insert(key, at + self.interval);
        self.last_receipt = at;
        Ok(at)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::Ipv4Addr;

    fn key(p: u16) -> FlowKey {
        FlowKey::new(Ipv4Addr::LOCALHOST, p, Ipv4Addr::LOCALHOST, 80)
    }

    #[test]
    fn paces_one_flow() {
        let mut rl = RateLimiter::new(5.0, Duration::from_secs(10));
        let t: Vec<_> = (0..5)
            .map(|_| rl.admit(key(1), Timestamp::ZERO).unwrap())
            .collect();
        for w in t.windows(2) {
            assert_eq!(w[1] - w[0], Duration::from_millis(200));
        }
    }

    #[test]
    fn distinct_flows_share_an_instant() {
        let mut rl = RateLimiter::default();
        for p in 0..145 {
            assert_eq!(rl.admit(key(p), Timestamp(7)).unwrap(), Timestamp(7));
        }
    }

    #[test]
    fn refuses_beyond_queue_bound() {
        let mut rl = RateLimiter::new(1.0, Duration::from_secs(2));
        for _ in 0..3 {
            rl.admit(key(1), Timestamp::ZERO).unwrap();
        }
        assert!(matches!(
            rl.admit(key(1), Timestamp::ZERO),
            Err(TransportError::RateLimited(_))
        ));
    }
}
