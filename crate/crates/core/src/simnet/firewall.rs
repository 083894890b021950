use serde::{Deserialize, Serialize};

use crate::prefix::Ipv4Prefix;
use crate::transport::{TcpFlags, TcpSegment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    ClientToServer,
    ServerToClient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Drop,
    Pass,
}

/// Which hours of the day (0..24) a rule is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HourMask(pub [bool; 24]);

impl HourMask {
    pub const ALWAYS: HourMask = HourMask([true; 24]);

    pub fn off_during(hours: &[u8]) -> Self {
        let mut m = [true; 24];
        for &h in hours {
            m[usize::from(h % 24)] = false;
        }
        HourMask(m)
    }

    pub fn on_during(hours: &[u8]) -> Self {
        let mut m = [false; 24];
        for &h in hours {
            m[usize::from(h % 24)] = true;
        }
        HourMask(m)
    }

    pub fn active(&self, hour: u8) -> bool {
        self.0[usize::from(hour % 24)]
    }
}

/// One filtering rule. `client` and `server` describe the two ends of the
/// connection; `direction` says which way the matched segments travel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RuleSpec", into = "RuleSpec")]
pub struct FirewallRule {
    pub direction: Direction,
    pub client: Ipv4Prefix,
    pub server: Ipv4Prefix,
    pub server_port: Option<u16>,
    /// Segment must carry all of these flags.
    pub flags: Option<TcpFlags>,
    pub action: Action,
    /// 1-based index along the segment's direction of travel. Hop `n + 1`
    /// is the destination's ingress on an `n`-router path.
    pub placement_hop: u32,
    pub schedule: Option<HourMask>,
}

impl FirewallRule {
    pub fn new(direction: Direction, action: Action) -> Self {
        Self {
            direction,
            client: Ipv4Prefix::ANY,
            server: Ipv4Prefix::ANY,
            server_port: None,
            flags: None,
            action,
            placement_hop: 1,
            schedule: None,
        }
    }

    pub fn client(mut self, p: Ipv4Prefix) -> Self {
        self.client = p;
        self
    }

    pub fn server(mut self, p: Ipv4Prefix, port: Option<u16>) -> Self {
        self.server = p;
        self.server_port = port;
        self
    }

    pub fn flags(mut self, f: TcpFlags) -> Self {
        self.flags = Some(f);
        self
    }

    pub fn at_hop(mut self, hop: u32) -> Self {
        self.placement_hop = hop;
        self
    }

    pub fn schedule(mut self, mask: HourMask) -> Self {
        self.schedule = Some(mask);
        self
    }

    fn matches(&self, seg: &TcpSegment) -> bool {
        let (client_addr, server_addr, server_port) = match self.direction {
            Direction::ClientToServer => (seg.src_addr, seg.dst_addr, seg.dst_port),
            Direction::ServerToClient => (seg.dst_addr, seg.src_addr, seg.src_port),
        };
        self.client.contains(client_addr)
            && self.server.contains(server_addr)
            && self.server_port.is_none_or(|p| p == server_port)
            && self.flags.is_none_or(|f| seg.flags.contains(f))
    }

    fn active(&self, hour: u8) -> bool {
        self.schedule.is_none_or(|m| m.active(hour))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Pass,
    Drop,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FirewallPolicy {
    pub rules: Vec<FirewallRule>,
}

impl FirewallPolicy {
    pub fn new(rules: Vec<FirewallRule>) -> Self {
        Self { rules }
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

/// Decides the fate of `seg` as it reaches `hop`. The first rule that
/// matches the segment, is scheduled for `hour` and has been reached
/// (`hop >= placement_hop`) wins; otherwise the segment passes.
pub fn firewall_decide(seg: &TcpSegment, hop: u32, policy: &FirewallPolicy, hour: u8) -> Decision {
    policy
        .rules
        .iter()
        .find(|r| hop >= r.placement_hop && r.active(hour) && r.matches(seg))
        .map_or(Decision::Pass, |r| match r.action {
            Action::Drop => Decision::Drop,
            Action::Pass => Decision::Pass,
        })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RuleSpec {
    direction: Direction,
    #[serde(default = "any_prefix")]
    client: Ipv4Prefix,
    #[serde(default = "any_prefix")]
    server: Ipv4Prefix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    server_port: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    flags: Option<TcpFlags>,
    action: Action,
    #[serde(default = "one")]
    placement_hop: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    schedule: Option<HourMask>,
    /// Convenience: hours during which the rule is inactive.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    off_hours: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    on_hours: Option<Vec<u8>>,
}

fn any_prefix() -> Ipv4Prefix {
    Ipv4Prefix::ANY
}

fn one() -> u32 {
    1
}

impl TryFrom<RuleSpec> for FirewallRule {
    type Error = String;
    fn try_from(s: RuleSpec) -> Result<Self, String> {
        let given = [
            s.schedule.is_some(),
            s.off_hours.is_some(),
            s.on_hours.is_some(),
        ];
        if given.iter().filter(|g| **g).count() > 1 {
            return Err("use only one of schedule, off_hours, on_hours".into());
        }
        if s.placement_hop == 0 {
            return Err("placement_hop is 1-based".into());
        }
        let schedule = s
            .schedule
            .or_else(|| s.off_hours.as_deref().map(HourMask::off_during))
            .or_else(|| s.on_hours.as_deref().map(HourMask::on_during));
        Ok(FirewallRule {
            direction: s.direction,
            client: s.client,
            server: s.server,
            server_port: s.server_port,
            flags: s.flags,
            action: s.action,
            placement_hop: s.placement_hop,
            schedule,
        })
    }
}

impl From<FirewallRule> for RuleSpec {
    fn from(r: FirewallRule) -> Self {
        RuleSpec {
            direction: r.direction,
            client: r.client,
            server: r.server,
            server_port: r.server_port,
            flags: r.flags,
            action: r.action,
            placement_hop: r.placement_hop,
            schedule: r.schedule,
            off_hours: None,
            on_hours: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::Timestamp;
    use std::net::Ipv4Addr;

    const RELAY: Ipv4Addr = Ipv4Addr::new(198, 96, 155, 3);
    const CLIENT: Ipv4Addr = Ipv4Addr::new(58, 193, 4, 4);

    fn seg(src: Ipv4Addr, sp: u16, dst: Ipv4Addr, dp: u16, flags: TcpFlags) -> TcpSegment {
        TcpSegment {
            src_addr: src,
            dst_addr: dst,
            src_port: sp,
            dst_port: dp,
            seq: 0,
            ack: 0,
            flags,
            ttl: 64,
            ipid: 0,
            timestamp: Timestamp::ZERO,
        }
    }

    fn gfw() -> FirewallPolicy {
        FirewallPolicy::new(vec![FirewallRule::new(
            Direction::ServerToClient,
            Action::Drop,
        )
        .client("58.192.0.0/11".parse().unwrap())
        .server(Ipv4Prefix::host(RELAY), Some(9001))
        .at_hop(2)])
    }

    #[test]
    fn syn_ack_from_relay_dropped_at_placement() {
        let s = seg(RELAY, 9001, CLIENT, 40000, TcpFlags::SYN_ACK);
        assert_eq!(firewall_decide(&s, 2, &gfw(), 0), Decision::Drop);
        assert_eq!(firewall_decide(&s, 1, &gfw(), 0), Decision::Pass);
    }

    #[test]
    fn client_syn_passes() {
        let s = seg(CLIENT, 40000, RELAY, 9001, TcpFlags::SYN);
        assert_eq!(firewall_decide(&s, 2, &gfw(), 0), Decision::Pass);
    }

    #[test]
    fn other_port_passes() {
        let s = seg(RELAY, 9002, CLIENT, 40000, TcpFlags::SYN_ACK);
        assert_eq!(firewall_decide(&s, 5, &gfw(), 0), Decision::Pass);
    }

    #[test]
    fn first_match_wins_and_schedule_gates() {
        let leak = FirewallRule::new(Direction::ServerToClient, Action::Pass)
            .server(Ipv4Prefix::host(RELAY), Some(9001))
            .schedule(HourMask::on_during(&[3]));
        let mut p = gfw();
        p.rules.insert(0, leak);
        let s = seg(RELAY, 9001, CLIENT, 40000, TcpFlags::SYN_ACK);
        assert_eq!(firewall_decide(&s, 2, &p, 3), Decision::Pass);
        assert_eq!(firewall_decide(&s, 2, &p, 4), Decision::Drop);
    }

    #[test]
    fn flag_predicate() {
        let p = FirewallPolicy::new(vec![FirewallRule::new(
            Direction::ClientToServer,
            Action::Drop,
        )
        .flags(TcpFlags::RST)]);
        let rst = seg(CLIENT, 1, RELAY, 9001, TcpFlags::RST);
        let syn = seg(CLIENT, 1, RELAY, 9001, TcpFlags::SYN);
        assert_eq!(firewall_decide(&rst, 1, &p, 0), Decision::Drop);
        assert_eq!(firewall_decide(&syn, 1, &p, 0), Decision::Pass);
    }

    #[test]
    fn toml_rule_with_off_hours() {
        let r: FirewallRule = toml::from_str(
            r#"
            direction = "server-to-client"
            server = "198.96.155.3/32"
            server_port = 9001
            action = "drop"
            placement_hop = 3
            off_hours = [2, 3]
            "#,
        )
        .unwrap();
        assert_eq!(r.placement_hop, 3);
        assert!(!r.schedule.unwrap().active(2));
        assert!(r.schedule.unwrap().active(4));
    }
}
