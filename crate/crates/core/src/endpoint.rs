//! Client and server identities shared by every scan type.

use std::io::Read;
use std::net::Ipv4Addr;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Client,
    TorRelay,
    TorDir,
    Web,
}

impl Role {
    pub fn label(self) -> &'static str {
        match self {
            Role::Client => "Client",
            Role::TorRelay => "Tor-Relay",
            Role::TorDir => "Tor-Dir",
            Role::Web => "Web",
        }
    }
}

/// A measured host: address, the port we talk to, and enough metadata to
/// place it on a map and in a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointSpec {
    pub addr: Ipv4Addr,
    #[serde(default)]
    pub port: u16,
    #[serde(default = "default_role")]
    pub role: Role,
    #[serde(default)]
    pub lat: f64,
    #[serde(default)]
    pub lon: f64,
    #[serde(default)]
    pub uptime_days: f64,
    #[serde(default)]
    pub stable_flag: bool,
    /// Coarse region tag such as `CN`, `EU` or `NA`.
    #[serde(default)]
    pub region: String,
}

fn default_role() -> Role {
    Role::Client
}

impl EndpointSpec {
    pub fn new(addr: Ipv4Addr, port: u16, role: Role) -> Self {
        Self {
            addr,
            port,
            role,
            lat: 0.0,
            lon: 0.0,
            uptime_days: 0.0,
            stable_flag: false,
            region: String::new(),
        }
    }

    pub fn with_coords(mut self, lat: f64, lon: f64) -> Self {
        self.lat = lat;
        self.lon = lon;
        self
    }

    pub fn with_region(mut self, region: impl Into<String>) -> Self {
        self.region = region.into();
        self
    }

    pub fn stable(mut self, uptime_days: f64) -> Self {
        self.uptime_days = uptime_days;
        self.stable_flag = true;
        self
    }
}

#[derive(Debug, Error)]
pub enum EndpointError {
    #[error("endpoint file: {0}")]
    Io(#[from] std::io::Error),
    #[error("endpoint file: {0}")]
    Csv(#[from] csv::Error),
}

/// Reads endpoints from CSV with a header row. Recognised columns are
/// `addr,port,role,lat,lon,uptime_days,stable_flag,region`; only `addr` is
/// mandatory.
pub fn read_endpoints<R: Read>(reader: R) -> Result<Vec<EndpointSpec>, EndpointError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

pub fn load_endpoints(path: &Path) -> Result<Vec<EndpointSpec>, EndpointError> {
    read_endpoints(std::fs::File::open(path)?)
}

pub fn write_endpoints<W: std::io::Write>(
    writer: W,
    endpoints: &[EndpointSpec],
) -> Result<(), EndpointError> {
    let mut wtr = csv::Writer::from_writer(writer);
    for e in endpoints {
        wtr.serialize(e)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Relays must have been up for at least five days and carry the Stable
/// flag before they are worth scanning. Other roles pass through.
pub fn admit_server(e: &EndpointSpec, min_uptime_days: f64) -> bool {
    match e.role {
        Role::TorRelay => e.stable_flag && e.uptime_days >= min_uptime_days,
        _ => true,
    }
}

pub const MIN_RELAY_UPTIME_DAYS: f64 = 5.0;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_partial_columns() {
        let data = "addr,port,role,lat,lon,uptime_days,stable_flag\n\
                    10.0.0.1,9001,tor-relay,52.1,4.3,12,true\n\
                    10.0.0.2,80,web,0,0,1,false\n";
        let eps = read_endpoints(data.as_bytes()).unwrap();
        assert_eq!(eps.len(), 2);
        assert_eq!(eps[0].role, Role::TorRelay);
        assert!(eps[0].stable_flag);
        assert_eq!(eps[1].port, 80);
        assert_eq!(eps[1].region, "");
    }

    #[test]
    fn only_addr_required() {
        let eps = read_endpoints("addr\n1.2.3.4\n".as_bytes()).unwrap();
        assert_eq!(eps[0].addr, Ipv4Addr::new(1, 2, 3, 4));
        assert_eq!(eps[0].role, Role::Client);
    }

    #[test]
    fn relay_admission() {
        let relay = EndpointSpec::new(Ipv4Addr::LOCALHOST, 9001, Role::TorRelay);
        assert!(!admit_server(&relay, MIN_RELAY_UPTIME_DAYS));
        assert!(!admit_server(&relay.clone().stable(4.9), MIN_RELAY_UPTIME_DAYS));
        assert!(admit_server(&relay.stable(5.0), MIN_RELAY_UPTIME_DAYS));
        let web = EndpointSpec::new(Ipv4Addr::LOCALHOST, 80, Role::Web);
        assert!(admit_server(&web, MIN_RELAY_UPTIME_DAYS));
    }
}
