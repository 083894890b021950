use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::host::{ClientConfig, Downtime, IpidMode, ServerConfig};
use super::path::{ms, Route};
use super::Simulator;
use crate::endpoint::EndpointSpec;
use crate::prefix::Ipv4Prefix;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("reading scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Defaults {
    /// Delay of paths no route covers.
    pub delay_ms: f64,
    pub loss_rate: f64,
    pub client: ClientConfig,
    pub server: ServerConfig,
}

impl Default for Defaults {
    fn default() -> Self {
        Self {
            delay_ms: 30.0,
            loss_rate: 0.0,
            client: ClientConfig::default(),
            server: ServerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VantageSpec {
    pub addr: Ipv4Addr,
    #[serde(default)]
    pub name: String,
}

/// Client behaviour for one address or a whole block. Unset fields fall
/// back to `[defaults.client]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientSpec {
    pub addr: Ipv4Prefix,
    pub ipid: Option<IpidMode>,
    pub background_rate: Option<f64>,
    pub rst_policy: Option<bool>,
    pub initial_ipid: Option<u16>,
    pub downtime: Option<Vec<Downtime>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerSpec {
    pub addr: Ipv4Prefix,
    pub open_ports: Option<Vec<u16>>,
    pub backlog_capacity: Option<usize>,
    pub max_retransmissions: Option<u32>,
    pub backoff_s: Option<Vec<f64>>,
    pub prunes: Option<bool>,
    pub static_halfopen: Option<usize>,
    pub closed_port_rst: Option<bool>,
    pub downtime: Option<Vec<Downtime>>,
}

/// Endpoint lists for a simulated idle-scan campaign, relative to the
/// scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignSection {
    pub clients: PathBuf,
    pub servers: PathBuf,
    #[serde(default = "default_rounds")]
    pub rounds: u32,
    #[serde(default)]
    pub start_hour: u8,
}

fn default_rounds() -> u32 {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub start_hour: u8,
    /// How long `simulate` runs the bare network when no campaign is given.
    #[serde(default)]
    pub duration_s: Option<f64>,
    #[serde(default)]
    pub defaults: Defaults,
    #[serde(default, rename = "vantage")]
    pub vantages: Vec<VantageSpec>,
    #[serde(default, rename = "client")]
    pub clients: Vec<ClientSpec>,
    #[serde(default, rename = "server")]
    pub servers: Vec<ServerSpec>,
    #[serde(default, rename = "route")]
    pub routes: Vec<Route>,
    #[serde(default)]
    pub campaign: Option<CampaignSection>,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    /// Loads a scenario file; campaign paths are resolved against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let mut s = Self::parse(&std::fs::read_to_string(path)?)?;
        if let (Some(c), Some(dir)) = (s.campaign.as_mut(), path.parent()) {
            c.clients = dir.join(&c.clients);
            c.servers = dir.join(&c.servers);
        }
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if self.start_hour > 23 {
            return bad(format!("start_hour {} outside 0..24", self.start_hour));
        }
        if !(0.0..=1.0).contains(&self.defaults.loss_rate) {
            return bad("defaults.loss_rate outside [0, 1]".into());
        }
        for (i, r) in self.routes.iter().enumerate() {
            r.validate()
                .map_err(|e| ScenarioError::Invalid(format!("route {i}: {e}")))?;
        }
        let hosts: Vec<Ipv4Prefix> = self
            .clients
            .iter()
            .map(|c| c.addr)
            .chain(self.servers.iter().map(|s| s.addr))
            .filter(|p| p.len() == 32)
            .collect();
        for (i, a) in hosts.iter().enumerate() {
            if hosts[..i].contains(a) {
                return bad(format!("host {a} declared twice"));
            }
            if self.vantages.iter().any(|v| a.contains(v.addr)) {
                return bad(format!("host {a} is also a vantage point"));
            }
        }
        let bg = self
            .clients
            .iter()
            .filter_map(|c| c.background_rate)
            .chain([self.defaults.client.background_rate]);
        for r in bg {
            if !(r >= 0.0 && r.is_finite()) {
                return bad(format!("background_rate {r} must be a finite non-negative rate"));
            }
        }
        Ok(())
    }

    /// Most specific client block containing `addr`, merged over the defaults.
    pub fn client_config(&self, addr: Ipv4Addr) -> ClientConfig {
        let mut c = self.defaults.client.clone();
        if let Some(s) = most_specific(&self.clients, |s| s.addr, addr) {
            if let Some(v) = s.ipid {
                c.ipid = v;
            }
            if let Some(v) = s.background_rate {
                c.background_rate = v;
            }
            if let Some(v) = s.rst_policy {
                c.rst_policy = v;
            }
            if let Some(v) = s.initial_ipid {
                c.initial_ipid = Some(v);
            }
            if let Some(v) = &s.downtime {
                c.downtime = v.clone();
            }
        }
        c
    }

    /// Server configuration for `addr`. When no block pins the open ports,
    /// `port` is opened.
    pub fn server_config(&self, addr: Ipv4Addr, port: Option<u16>) -> ServerConfig {
        let mut c = self.defaults.server.clone();
        let spec = most_specific(&self.servers, |s| s.addr, addr);
        let pinned = spec.is_some_and(|s| s.open_ports.is_some());
        if let Some(s) = spec {
            if let Some(v) = &s.open_ports {
                c.open_ports = v.clone();
            }
            if let Some(v) = s.backlog_capacity {
                c.backlog_capacity = v;
            }
            if let Some(v) = s.max_retransmissions {
                c.max_retransmissions = v;
            }
            if let Some(v) = &s.backoff_s {
                c.backoff_s = v.clone();
            }
            if let Some(v) = s.prunes {
                c.prunes = v;
            }
            if let Some(v) = s.static_halfopen {
                c.static_halfopen = v;
            }
            if let Some(v) = s.closed_port_rst {
                c.closed_port_rst = v;
            }
            if let Some(v) = &s.downtime {
                c.downtime = v.clone();
            }
        }
        if let (false, Some(p)) = (pinned, port) {
            if !c.open_ports.contains(&p) {
                c.open_ports.push(p);
            }
        }
        c
    }

    /// Vantage points and routes only; hosts are added on demand with
    /// [`Scenario::ensure_client`] and [`Scenario::ensure_server`].
    pub fn build_bare(&self) -> Simulator {
        let mut sim = Simulator::new(self.seed);
        sim.set_start_hour(self.start_hour);
        sim.set_default_path(ms(self.defaults.delay_ms), self.defaults.loss_rate);
        for v in &self.vantages {
            sim.add_vantage(v.addr);
        }
        for r in &self.routes {
            sim.add_route(r.clone()).expect("validated route");
        }
        sim
    }

    /// Full network: every host declared with a /32 address.
    pub fn build(&self) -> Simulator {
        let mut sim = self.build_bare();
        for c in self.clients.iter().filter(|c| c.addr.len() == 32) {
            let a = c.addr.network();
            sim.add_client(a, self.client_config(a));
        }
        for s in self.servers.iter().filter(|s| s.addr.len() == 32) {
            let a = s.addr.network();
            sim.add_server(a, self.server_config(a, None));
        }
        sim
    }

    pub fn ensure_client(&self, sim: &mut Simulator, e: &EndpointSpec) {
        if sim.client(e.addr).is_none() {
            sim.add_client(e.addr, self.client_config(e.addr));
        }
    }

    pub fn ensure_server(&self, sim: &mut Simulator, e: &EndpointSpec) {
        if sim.server(e.addr).is_none() {
            sim.add_server(e.addr, self.server_config(e.addr, Some(e.port)));
        }
    }

    pub fn vantage(&self, name: &str) -> Option<Ipv4Addr> {
        self.vantages.iter().find(|v| v.name == name).map(|v| v.addr)
    }
}

fn most_specific<T>(items: &[T], key: impl Fn(&T) -> Ipv4Prefix, addr: Ipv4Addr) -> Option<&T> {
    items
        .iter()
        .filter(|i| key(i).contains(addr))
        .max_by_key(|i| key(i).len())
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = r#"
seed = 9
start_hour = 3

[defaults]
delay_ms = 20

[defaults.client]
background_rate = 0.5

[[vantage]]
addr = "192.0.2.10"
name = "mm"

[[client]]
addr = "58.192.0.0/11"
background_rate = 2.0

[[client]]
addr = "58.193.4.4"
ipid = "per-destination"

[[server]]
addr = "198.96.155.3"
max_retransmissions = 4

[[route]]
between = ["198.96.155.0/24", "58.192.0.0/11"]
tail_delay_ms = 4

[[route.hop]]
addr = "10.0.0.1"
region = "US"
delay_ms = 10

[[route.rule]]
direction = "server-to-client"
server_port = 9001
action = "drop"
placement_hop = 2
"#;

    #[test]
    fn parses_and_merges_templates() {
        let s = Scenario::parse(TEXT).unwrap();
        assert_eq!(s.seed, 9);
        assert_eq!(s.vantage("mm"), Some(Ipv4Addr::new(192, 0, 2, 10)));
        let c = s.client_config(Ipv4Addr::new(58, 193, 4, 4));
        assert_eq!(c.ipid, IpidMode::PerDestination);
        assert_eq!(c.background_rate, 0.5);
        assert_eq!(s.client_config(Ipv4Addr::new(58, 200, 0, 1)).background_rate, 2.0);
        let srv = s.server_config(Ipv4Addr::new(198, 96, 155, 3), Some(443));
        assert_eq!(srv.max_retransmissions, 4);
        assert_eq!(srv.open_ports, vec![9001, 443]);
        assert_eq!(s.routes[0].rules.rules.len(), 1);
        let sim = s.build();
        assert!(sim.client(Ipv4Addr::new(58, 193, 4, 4)).is_some());
        assert!(sim.client(Ipv4Addr::new(58, 200, 0, 1)).is_none());
        assert_eq!(sim.hour(), 3);
    }

    #[test]
    fn toml_round_trip() {
        let s = Scenario::parse(TEXT).unwrap();
        assert_eq!(Scenario::parse(&s.to_toml()).unwrap(), s);
    }

    #[test]
    fn rejects_duplicate_hop_and_unknown_keys() {
        let dup = r#"
[[route]]
between = ["0.0.0.0/0", "0.0.0.0/0"]
[[route.hop]]
addr = "10.0.0.1"
[[route.hop]]
addr = "10.0.0.1"
"#;
        assert!(matches!(Scenario::parse(dup), Err(ScenarioError::Invalid(_))));
        assert!(matches!(
            Scenario::parse("sede = 1"),
            Err(ScenarioError::Parse(_))
        ));
    }
}
