use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::scan::{client_port, secs, IdleScanner};
use super::IdleScanError;
use crate::endpoint::EndpointSpec;
use crate::transport::{FlowFilter, FlowKey, SegmentSpec, TcpFlags};

/// Result of a liveliness check. For the client check `observed` counts
/// RSTs; for the server check it is the largest retransmission count seen
/// on any probe flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub passed: bool,
    pub sent: u32,
    pub observed: u32,
}

/// Retransmissions a healthy server must show within the listen window.
pub const MIN_SERVER_RETRANSMISSIONS: u32 = 3;

impl IdleScanner<'_> {
    /// SYN/ACKs to the client; passes when more than half come back as RSTs.
    pub fn client_liveliness(&mut self, client: &EndpointSpec) -> Result<CheckOutcome, IdleScanError> {
        let n = (self.cfg.check_duration * self.cfg.check_rate).round() as u32;
        let cport = client_port(client);
        let (_, base) = self.isn.next();
        let t0 = self.mm.now();
        for i in 0..n {
            self.mm.wait_until(t0 + secs(f64::from(i) / self.cfg.check_rate))?;
            let spec = SegmentSpec::new(client.addr, self.ports.client_check, cport, TcpFlags::SYN_ACK)
                .ack(base.wrapping_add(i));
            self.mm.send_spec(&spec, &mut self.isn)?;
        }
        let key = FlowKey::new(client.addr, cport, self.mm.local_addr(), self.ports.client_check);
        let got = self.mm.capture(&FlowFilter::new().with(key), secs(1.0))?;
        let answered: BTreeSet<u32> = got
            .iter()
            .filter(|s| s.flags.is_rst())
            .map(|s| s.seq.wrapping_sub(base))
            .filter(|i| *i < n)
            .collect();
        let observed = answered.len() as u32;
        Ok(CheckOutcome {
            passed: observed * 2 > n,
            sent: n,
            observed,
        })
    }

    /// SYNs to the server from source ports that never answer; passes when
    /// some probe sees at least three SYN/ACK retransmissions. The half-open
    /// entries are removed with RSTs afterwards.
    pub fn server_liveliness(&mut self, server: &EndpointSpec) -> Result<CheckOutcome, IdleScanError> {
        let n = (self.cfg.check_duration * self.cfg.check_rate).round() as u32;
        let me = self.mm.local_addr();
        let t0 = self.mm.now();
        let mut sent = Vec::with_capacity(n as usize);
        for i in 0..n {
            self.mm.wait_until(t0 + secs(f64::from(i) / self.cfg.check_rate))?;
            let sport = self.ports.server_check + i as u16;
            let spec = SegmentSpec::new(server.addr, sport, server.port, TcpFlags::SYN);
            let r = self.mm.send_spec(&spec, &mut self.isn)?;
            sent.push((sport, r.segment.seq));
        }
        let filter: FlowFilter = sent
            .iter()
            .map(|(p, _)| FlowKey::new(server.addr, server.port, me, *p))
            .collect();
        let until = t0 + secs(self.cfg.check_duration + self.cfg.server_check_listen);
        let got = self.mm.capture(&filter, until - self.mm.now())?;
        let mut per_flow: BTreeMap<u16, u32> = BTreeMap::new();
        for s in got.iter().filter(|s| s.flags.is_syn_ack()) {
            *per_flow.entry(s.dst_port).or_default() += 1;
        }
        let observed = per_flow.values().map(|c| c.saturating_sub(1)).max().unwrap_or(0);
        for (sport, seq) in sent {
            let spec = SegmentSpec::new(server.addr, sport, server.port, TcpFlags::RST)
                .seq(seq.wrapping_add(1));
            self.mm.send_spec(&spec, &mut self.isn)?;
        }
        self.mm.sleep(secs(1.0))?;
        Ok(CheckOutcome {
            passed: observed >= MIN_SERVER_RETRANSMISSIONS,
            sent: n,
            observed,
        })
    }
}
