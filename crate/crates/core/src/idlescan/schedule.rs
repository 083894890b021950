use std::collections::HashSet;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::IdleScanError;
use crate::endpoint::EndpointSpec;
use crate::transport::splitmix64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub seed: u64,
    /// Full covers of the client × server graph.
    pub rounds: u32,
    /// Seconds reserved per slot; at least one scan round.
    pub slot_duration: f64,
    pub start_hour: u8,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            rounds: 1,
            slot_duration: 180.0,
            start_hour: 0,
        }
    }
}

/// One (client, server) pair, as indices into the input lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Assignment {
    pub client: usize,
    pub server: usize,
}

/// Assignments that run at the same time. No address occurs twice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub index: usize,
    pub round: u32,
    /// Offset from the campaign start.
    pub start: Duration,
    pub hour: u8,
    pub assignments: Vec<Assignment>,
}

/// Covers every (client, server) pair once per round. Slot `s` of a round
/// pairs client `i` with server `(i + s) mod L`, `L = max(#clients,
/// #servers)`, after seeded shuffles of both lists and of the slot order,
/// so each address is busy with at most one scan per slot.
///
/// Errors when a list is empty or an address appears twice, since either
/// would break the exclusivity guarantee.
pub fn schedule_bipartite(
    clients: &[EndpointSpec],
    servers: &[EndpointSpec],
    cfg: &ScheduleConfig,
) -> Result<Vec<Slot>, IdleScanError> {
    if clients.is_empty() || servers.is_empty() {
        return Err(IdleScanError::Config("need at least one client and one server".into()));
    }
    let mut seen = HashSet::new();
    for e in clients.iter().chain(servers) {
        if !seen.insert(e.addr) {
            return Err(IdleScanError::Config(format!("address {} listed twice", e.addr)));
        }
    }
    let (nc, ns) = (clients.len(), servers.len());
    let l = nc.max(ns);
    let mut slots = Vec::with_capacity(l * cfg.rounds as usize);
    for round in 0..cfg.rounds {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(cfg.seed ^ u64::from(round)));
        let mut pc: Vec<usize> = (0..nc).collect();
        let mut ps: Vec<usize> = (0..ns).collect();
        let mut order: Vec<usize> = (0..l).collect();
        pc.shuffle(&mut rng);
        ps.shuffle(&mut rng);
        order.shuffle(&mut rng);
        for s in order {
            let assignments = (0..nc)
                .filter_map(|i| {
                    let j = (i + s) % l;
                    (j < ns).then(|| Assignment {
                        client: pc[i],
                        server: ps[j],
                    })
                })
                .collect();
            let index = slots.len();
            let start = Duration::from_secs_f64(index as f64 * cfg.slot_duration);
            let hour = ((u64::from(cfg.start_hour) + start.as_secs() / 3600) % 24) as u8;
            slots.push(Slot {
                index,
                round,
                start,
                hour,
                assignments,
            });
        }
    }
    Ok(slots)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::endpoint::Role;
    use std::collections::HashMap;
    use std::net::Ipv4Addr;

    fn eps(n: usize, base: u32, role: Role) -> Vec<EndpointSpec> {
        (0..n)
            .map(|i| EndpointSpec::new(Ipv4Addr::from(base + i as u32), 9001, role))
            .collect()
    }

    fn check_cover(nc: usize, ns: usize) {
        let c = eps(nc, 0x0a00_0000, Role::Client);
        let s = eps(ns, 0x0b00_0000, Role::TorRelay);
        let slots = schedule_bipartite(&c, &s, &ScheduleConfig::default()).unwrap();
        let mut count: HashMap<Assignment, usize> = HashMap::new();
        for slot in &slots {
            let mut busy = HashSet::new();
            for a in &slot.assignments {
                assert!(busy.insert(c[a.client].addr));
                assert!(busy.insert(s[a.server].addr));
                *count.entry(*a).or_default() += 1;
            }
        }
        assert_eq!(count.len(), nc * ns);
        assert!(count.values().all(|&v| v == 1));
    }

    #[test]
    fn two_by_two() {
        check_cover(2, 2);
    }

    #[test]
    fn twenty_by_twenty_in_twenty_slots() {
        check_cover(20, 20);
        let c = eps(20, 0x0a00_0000, Role::Client);
        let s = eps(20, 0x0b00_0000, Role::TorRelay);
        assert_eq!(schedule_bipartite(&c, &s, &ScheduleConfig::default()).unwrap().len(), 20);
    }

    #[test]
    fn uneven_sides() {
        check_cover(3, 7);
        check_cover(7, 3);
    }

    #[test]
    fn seeded_order_is_reproducible() {
        let c = eps(5, 0x0a00_0000, Role::Client);
        let s = eps(5, 0x0b00_0000, Role::TorRelay);
        let cfg = ScheduleConfig {
            seed: 11,
            rounds: 2,
            ..ScheduleConfig::default()
        };
        let a = schedule_bipartite(&c, &s, &cfg).unwrap();
        assert_eq!(a, schedule_bipartite(&c, &s, &cfg).unwrap());
        let other = ScheduleConfig { seed: 12, ..cfg };
        assert_ne!(a, schedule_bipartite(&c, &s, &other).unwrap());
    }

    #[test]
    fn duplicate_address_rejected() {
        let c = eps(2, 0x0a00_0000, Role::Client);
        assert!(schedule_bipartite(&c, &c, &ScheduleConfig::default()).is_err());
    }
}
