use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::firewall::{Action, Direction, FirewallRule, HourMask};
use super::path::Route;
use super::scenario::{ClientSpec, Defaults, Scenario, ServerSpec, VantageSpec};
use crate::endpoint::{EndpointSpec, Role};
use crate::prefix::Ipv4Prefix;
use crate::transport::TcpFlags;

pub const PAIR_MM: Ipv4Addr = Ipv4Addr::new(192, 0, 2, 10);
pub const PAIR_VPS: Ipv4Addr = Ipv4Addr::new(192, 0, 2, 20);
pub const PAIR_CLIENT: Ipv4Addr = Ipv4Addr::new(10, 1, 0, 5);
pub const PAIR_SERVER: Ipv4Addr = Ipv4Addr::new(172, 16, 0, 9);
pub const PAIR_PORT: u16 = 9001;

/// What the path between the client and the server filters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairPolicy {
    Open,
    /// Server's SYN/ACKs are dropped on the way to the client.
    DropServerToClient,
    /// Client's RSTs are dropped on the way to the server.
    DropClientToServer,
}

impl PairPolicy {
    pub const ALL: [PairPolicy; 3] = [
        PairPolicy::Open,
        PairPolicy::DropServerToClient,
        PairPolicy::DropClientToServer,
    ];
}

/// One client, one server, an MM and a second vantage point, with the
/// client-server path filtered by `policy`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairPreset {
    pub seed: u64,
    pub policy: PairPolicy,
    pub background_rate: f64,
    pub loss_rate: f64,
    pub max_retransmissions: u32,
    pub prunes: bool,
}

impl PairPreset {
    pub fn new(policy: PairPolicy, seed: u64) -> Self {
        Self {
            seed,
            policy,
            background_rate: 0.0,
            loss_rate: 0.0,
            max_retransmissions: 5,
            prunes: true,
        }
    }

    pub fn client(&self) -> EndpointSpec {
        EndpointSpec::new(PAIR_CLIENT, 80, Role::Client)
    }

    pub fn server(&self) -> EndpointSpec {
        EndpointSpec::new(PAIR_SERVER, PAIR_PORT, Role::TorRelay)
    }

    pub fn scenario(&self) -> Scenario {
        let rule = match self.policy {
            PairPolicy::Open => None,
            PairPolicy::DropServerToClient => Some(
                FirewallRule::new(Direction::ServerToClient, Action::Drop).flags(TcpFlags::SYN_ACK),
            ),
            PairPolicy::DropClientToServer => Some(
                FirewallRule::new(Direction::ClientToServer, Action::Drop).flags(TcpFlags::RST),
            ),
        };
        let mut route = Route::new(Ipv4Prefix::host(PAIR_CLIENT), Ipv4Prefix::host(PAIR_SERVER))
            .hop(Ipv4Addr::new(10, 1, 0, 1), "CN", 5.0)
            .hop(Ipv4Addr::new(203, 0, 113, 1), "", 10.0);
        route.loss_rate = self.loss_rate;
        route.rules.rules.extend(rule.map(|r| r.at_hop(2)));
        let mut defaults = Defaults {
            loss_rate: self.loss_rate,
            ..Defaults::default()
        };
        defaults.server.max_retransmissions = self.max_retransmissions;
        defaults.server.prunes = self.prunes;
        Scenario {
            seed: self.seed,
            start_hour: 0,
            duration_s: None,
            defaults,
            vantages: vec![
                VantageSpec {
                    addr: PAIR_MM,
                    name: "mm".into(),
                },
                VantageSpec {
                    addr: PAIR_VPS,
                    name: "vps".into(),
                },
            ],
            clients: vec![ClientSpec {
                addr: Ipv4Prefix::host(PAIR_CLIENT),
                ipid: None,
                background_rate: Some(self.background_rate),
                rst_policy: None,
                initial_ipid: None,
                downtime: None,
            }],
            servers: vec![ServerSpec {
                addr: Ipv4Prefix::host(PAIR_SERVER),
                open_ports: Some(vec![PAIR_PORT]),
                backlog_capacity: None,
                max_retransmissions: None,
                backoff_s: None,
                prunes: None,
                static_halfopen: None,
                closed_port_rst: None,
                downtime: None,
            }],
            routes: vec![route],
            campaign: None,
        }
    }
}

/// A relay reached by the MM directly and by the VPS through a path that
/// may drop the VPS's SYNs or RSTs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacklogPreset {
    pub seed: u64,
    pub syn_dropped: bool,
    pub rst_dropped: bool,
    pub loss_rate: f64,
    pub max_retransmissions: u32,
}

impl BacklogPreset {
    pub fn new(syn_dropped: bool, rst_dropped: bool, seed: u64) -> Self {
        Self {
            seed,
            syn_dropped,
            rst_dropped,
            loss_rate: 0.0,
            max_retransmissions: 5,
        }
    }

    pub fn relay(&self) -> EndpointSpec {
        EndpointSpec::new(PAIR_SERVER, PAIR_PORT, Role::TorRelay)
    }

    pub fn scenario(&self) -> Scenario {
        let mut s = PairPreset {
            loss_rate: self.loss_rate,
            max_retransmissions: self.max_retransmissions,
            ..PairPreset::new(PairPolicy::Open, self.seed)
        }
        .scenario();
        let mut route = Route::new(Ipv4Prefix::host(PAIR_VPS), Ipv4Prefix::host(PAIR_SERVER))
            .hop(Ipv4Addr::new(198, 18, 0, 1), "", 5.0)
            .hop(Ipv4Addr::new(10, 9, 0, 1), "CN", 5.0);
        route.loss_rate = self.loss_rate;
        for (on, flags) in [(self.syn_dropped, TcpFlags::SYN), (self.rst_dropped, TcpFlags::RST)] {
            if on {
                route.rules.rules.push(
                    FirewallRule::new(Direction::ClientToServer, Action::Drop)
                        .client(Ipv4Prefix::host(PAIR_VPS))
                        .flags(flags)
                        .at_hop(2),
                );
            }
        }
        s.routes.push(route);
        s
    }
}

/// Destinations behind one entry network, optionally filtered for the
/// filtered traceroute port.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceGroup {
    /// `"COM"` or `"EDU"`; selects the backbone prefix of the hops.
    pub label: String,
    pub dests: u32,
    /// Filtered-port segments are dropped this many hops past the entry
    /// hop, so that many in-region hops still answer.
    pub filter_depth: Option<u32>,
    /// Hours of day during which the filter is active; `None` for always.
    pub active_hours: Option<Vec<u8>>,
}

/// Traceroute targets inside region `CN`, each reached over three outside
/// hops followed by four hops of its group's backbone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePreset {
    pub seed: u64,
    pub groups: Vec<TraceGroup>,
    pub filtered_port: u16,
    pub loss_rate: f64,
}

pub const TRACE_OUTSIDE_HOPS: u32 = 3;
pub const TRACE_INSIDE_HOPS: u32 = 4;

impl TracePreset {
    pub fn new(seed: u64, groups: Vec<TraceGroup>) -> Self {
        Self {
            seed,
            groups,
            filtered_port: 9001,
            loss_rate: 0.0,
        }
    }

    /// `cidr,label,region` rows matching the hop addresses.
    pub fn prefix_csv() -> &'static str {
        "cidr,label,region\n202.97.0.0/16,COM,CN\n159.226.0.0/16,EDU,CN\n198.51.100.0/24,TRANSIT,US\n"
    }

    fn backbone(label: &str) -> [u8; 2] {
        if label.eq_ignore_ascii_case("EDU") {
            [159, 226]
        } else {
            [202, 97]
        }
    }

    /// Destinations of group `g`, in order.
    pub fn dests(&self, g: usize) -> Vec<Ipv4Addr> {
        (0..self.groups[g].dests)
            .map(|i| Ipv4Addr::new(58, 16 + g as u8, (i / 250) as u8, (i % 250) as u8 + 1))
            .collect()
    }

    pub fn all_dests(&self) -> Vec<Ipv4Addr> {
        (0..self.groups.len()).flat_map(|g| self.dests(g)).collect()
    }

    pub fn scenario(&self) -> Scenario {
        let mut s = PairPreset {
            loss_rate: self.loss_rate,
            ..PairPreset::new(PairPolicy::Open, self.seed)
        }
        .scenario();
        s.clients.clear();
        s.servers.clear();
        s.routes.clear();
        for (g, group) in self.groups.iter().enumerate() {
            let [a, b] = Self::backbone(&group.label);
            let mut route = Route::new(
                Ipv4Prefix::host(PAIR_MM),
                Ipv4Prefix::new(Ipv4Addr::new(58, 16 + g as u8, 0, 0), 16).expect("valid prefix"),
            );
            for h in 0..TRACE_OUTSIDE_HOPS {
                route = route.hop(Ipv4Addr::new(198, 51, 100, (g * 10) as u8 + h as u8 + 1), "US", 10.0);
            }
            for h in 0..TRACE_INSIDE_HOPS {
                route = route.hop(Ipv4Addr::new(a, b, g as u8, h as u8 + 1), "CN", 40.0);
            }
            route.loss_rate = self.loss_rate;
            if let Some(depth) = group.filter_depth {
                let mut rule = FirewallRule::new(Direction::ServerToClient, Action::Drop)
                    .server(Ipv4Prefix::host(PAIR_MM), Some(self.filtered_port))
                    .at_hop(TRACE_OUTSIDE_HOPS + 1 + depth);
                if let Some(hours) = &group.active_hours {
                    rule = rule.schedule(HourMask::on_during(hours));
                }
                route.rules.rules.push(rule);
            }
            s.routes.push(route);
            for d in self.dests(g) {
                s.clients.push(ClientSpec {
                    addr: Ipv4Prefix::host(d),
                    ipid: None,
                    background_rate: None,
                    rst_policy: None,
                    initial_ipid: None,
                    downtime: None,
                });
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for p in PairPolicy::ALL {
            let s = PairPreset::new(p, 3).scenario();
            s.validate().unwrap();
            assert_eq!(Scenario::parse(&s.to_toml()).unwrap(), s);
        }
    }
}
