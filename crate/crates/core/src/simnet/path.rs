use std::collections::HashSet;
use std::net::Ipv4Addr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::firewall::FirewallPolicy;
use crate::prefix::Ipv4Prefix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hop {
    pub addr: Ipv4Addr,
    #[serde(default)]
    pub region: String,
    /// Delay of the link leading into this hop.
    #[serde(default = "default_hop_delay")]
    pub delay_ms: f64,
}

fn default_hop_delay() -> f64 {
    5.0
}

/// A bidirectional path between two address blocks. Hops are listed in
/// the direction from `between[0]` to `between[1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Route {
    pub between: [Ipv4Prefix; 2],
    #[serde(default, rename = "hop")]
    pub hops: Vec<Hop>,
    /// Delay from the last hop to the far end.
    #[serde(default = "default_hop_delay")]
    pub tail_delay_ms: f64,
    #[serde(default)]
    pub loss_rate: f64,
    #[serde(default, rename = "rule")]
    pub rules: FirewallPolicy,
}

impl Route {
    pub fn new(a: Ipv4Prefix, b: Ipv4Prefix) -> Self {
        Self {
            between: [a, b],
            hops: Vec::new(),
            tail_delay_ms: default_hop_delay(),
            loss_rate: 0.0,
            rules: FirewallPolicy::default(),
        }
    }

    pub fn hop(mut self, addr: Ipv4Addr, region: &str, delay_ms: f64) -> Self {
        self.hops.push(Hop {
            addr,
            region: region.to_string(),
            delay_ms,
        });
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        let mut seen = HashSet::new();
        for h in &self.hops {
            if !seen.insert(h.addr) {
                return Err(format!("hop {} appears twice on route", h.addr));
            }
        }
        if !(0.0..=1.0).contains(&self.loss_rate) {
            return Err(format!("loss_rate {} outside [0, 1]", self.loss_rate));
        }
        if self.hops.iter().any(|h| h.delay_ms < 0.0) || self.tail_delay_ms < 0.0 {
            return Err("negative delay".into());
        }
        Ok(())
    }

    /// `Some(true)` if `from → to` runs along the declared orientation.
    pub(crate) fn orientation(&self, from: Ipv4Addr, to: Ipv4Addr) -> Option<bool> {
        let [a, b] = self.between;
        if a.contains(from) && b.contains(to) {
            Some(true)
        } else if b.contains(from) && a.contains(to) {
            Some(false)
        } else {
            None
        }
    }
}

/// A route as seen by one segment: hops in travel order.
#[derive(Debug, Clone, PartialEq)]
pub struct SimPath {
    pub hops: Vec<PathHop>,
    pub tail_delay: Duration,
    pub loss_rate: f64,
    pub policy: FirewallPolicy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathHop {
    pub addr: Ipv4Addr,
    pub region: String,
    pub delay: Duration,
}

pub(crate) fn ms(v: f64) -> Duration {
    Duration::from_nanos((v * 1e6).round() as u64)
}

impl SimPath {
    pub fn direct(delay: Duration, loss_rate: f64) -> Self {
        Self {
            hops: Vec::new(),
            tail_delay: delay,
            loss_rate,
            policy: FirewallPolicy::default(),
        }
    }

    pub(crate) fn from_route(r: &Route, forward: bool) -> Self {
        let mut delays: Vec<f64> = r.hops.iter().map(|h| h.delay_ms).collect();
        delays.push(r.tail_delay_ms);
        let (order, delays): (Vec<&Hop>, Vec<f64>) = if forward {
            (r.hops.iter().collect(), delays)
        } else {
            (r.hops.iter().rev().collect(), delays.into_iter().rev().collect())
        };
        let hops = order
            .iter()
            .zip(&delays)
            .map(|(h, d)| PathHop {
                addr: h.addr,
                region: h.region.clone(),
                delay: ms(*d),
            })
            .collect();
        Self {
            hops,
            tail_delay: ms(*delays.last().expect("tail delay present")),
            loss_rate: r.loss_rate,
            policy: r.rules.clone(),
        }
    }

    pub fn total_delay(&self) -> Duration {
        self.hops.iter().map(|h| h.delay).sum::<Duration>() + self.tail_delay
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reverse_orientation_mirrors_delays() {
        let r = Route::new("10.0.0.0/8".parse().unwrap(), "20.0.0.0/8".parse().unwrap())
            .hop(Ipv4Addr::new(1, 0, 0, 1), "US", 1.0)
            .hop(Ipv4Addr::new(1, 0, 0, 2), "US", 2.0);
        let f = SimPath::from_route(&r, true);
        let b = SimPath::from_route(&r, false);
        assert_eq!(f.hops[0].addr, Ipv4Addr::new(1, 0, 0, 1));
        assert_eq!(b.hops[0].addr, Ipv4Addr::new(1, 0, 0, 2));
        assert_eq!(b.hops[0].delay, ms(5.0));
        assert_eq!(b.tail_delay, ms(1.0));
        assert_eq!(f.total_delay(), b.total_delay());
    }

    #[test]
    fn duplicate_hop_rejected() {
        let r = Route::new(Ipv4Prefix::ANY, Ipv4Prefix::ANY)
            .hop(Ipv4Addr::new(1, 0, 0, 1), "", 1.0)
            .hop(Ipv4Addr::new(1, 0, 0, 1), "", 1.0);
        assert!(r.validate().is_err());
    }
}
