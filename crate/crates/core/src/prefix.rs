//! IPv4 CIDR prefixes and a longest-prefix-match table.

use std::collections::HashMap;
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PrefixError {
    #[error("bad prefix {0:?}")]
    Parse(String),
    #[error("prefix {0} has host bits set")]
    HostBits(String),
    #[error("prefix {0} listed twice")]
    Duplicate(Ipv4Prefix),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Ipv4Prefix {
    network: u32,
    len: u8,
}

impl Ipv4Prefix {
    pub const ANY: Ipv4Prefix = Ipv4Prefix { network: 0, len: 0 };

    pub fn new(addr: Ipv4Addr, len: u8) -> Result<Self, PrefixError> {
        if len > 32 {
            return Err(PrefixError::Parse(format!("{addr}/{len}")));
        }
        let network = u32::from(addr);
        if network & !mask(len) != 0 {
            return Err(PrefixError::HostBits(format!("{addr}/{len}")));
        }
        Ok(Self { network, len })
    }

    pub fn host(addr: Ipv4Addr) -> Self {
        Self {
            network: u32::from(addr),
            len: 32,
        }
    }

    pub fn len(&self) -> u8 {
        self.len
    }

    pub fn network(&self) -> Ipv4Addr {
        Ipv4Addr::from(self.network)
    }

    pub fn contains(&self, addr: Ipv4Addr) -> bool {
        u32::from(addr) & mask(self.len) == self.network
    }
}

fn mask(len: u8) -> u32 {
    if len == 0 {
        0
    } else {
        u32::MAX << (32 - u32::from(len))
    }
}

impl fmt::Display for Ipv4Prefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.network(), self.len)
    }
}

impl FromStr for Ipv4Prefix {
    type Err = PrefixError;
    fn from_str(s: &str) -> Result<Self, PrefixError> {
        let s = s.trim();
        let (a, l) = match s.split_once('/') {
            Some((a, l)) => (a, l),
            None => (s, "32"),
        };
        let addr: Ipv4Addr = a.parse().map_err(|_| PrefixError::Parse(s.into()))?;
        let len: u8 = l.parse().map_err(|_| PrefixError::Parse(s.into()))?;
        Ipv4Prefix::new(addr, len)
    }
}

impl Serialize for Ipv4Prefix {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Ipv4Prefix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// Longest-prefix match over one hash map per prefix length.
#[derive(Debug, Clone)]
pub struct LpmTable<T> {
    by_len: Vec<HashMap<u32, T>>,
    lens: Vec<u8>,
}

impl<T> Default for LpmTable<T> {
    fn default() -> Self {
        Self {
            by_len: (0..=32).map(|_| HashMap::new()).collect(),
            lens: Vec::new(),
        }
    }
}

impl<T> LpmTable<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserting the same prefix twice is an error: lookups must be
    /// unambiguous.
    pub fn insert(&mut self, prefix: Ipv4Prefix, value: T) -> Result<(), PrefixError> {
        let slot = &mut self.by_len[usize::from(prefix.len)];
        if slot.contains_key(&prefix.network) {
            return Err(PrefixError::Duplicate(prefix));
        }
        slot.insert(prefix.network, value);
        if !self.lens.contains(&prefix.len) {
            self.lens.push(prefix.len);
            self.lens.sort_unstable_by(|a, b| b.cmp(a));
        }
        Ok(())
    }

    pub fn lookup(&self, addr: Ipv4Addr) -> Option<(Ipv4Prefix, &T)> {
        let a = u32::from(addr);
        self.lens.iter().find_map(|&len| {
            let net = a & mask(len);
            self.by_len[usize::from(len)]
                .get(&net)
                .map(|v| (Ipv4Prefix { network: net, len }, v))
        })
    }

    pub fn len(&self) -> usize {
        self.by_len.iter().map(HashMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_contain() {
        let p: Ipv4Prefix = "202.97.0.0/16".parse().unwrap();
        assert!(p.contains("202.97.33.1".parse().unwrap()));
        assert!(!p.contains("202.98.0.1".parse().unwrap()));
        assert_eq!(p.to_string(), "202.97.0.0/16");
        assert!("10.0.0.1/8".parse::<Ipv4Prefix>().is_err());
        assert!("10.0.0.0/33".parse::<Ipv4Prefix>().is_err());
        assert!(Ipv4Prefix::ANY.contains(Ipv4Addr::BROADCAST));
        assert_eq!("1.2.3.4".parse::<Ipv4Prefix>().unwrap().len(), 32);
    }

    #[test]
    fn longest_match_wins() {
        let mut t = LpmTable::new();
        t.insert("10.0.0.0/8".parse().unwrap(), "wide").unwrap();
        t.insert("10.1.0.0/16".parse().unwrap(), "narrow").unwrap();
        t.insert("0.0.0.0/0".parse().unwrap(), "default").unwrap();
        assert_eq!(t.lookup("10.1.2.3".parse().unwrap()).unwrap().1, &"narrow");
        assert_eq!(t.lookup("10.2.2.3".parse().unwrap()).unwrap().1, &"wide");
        assert_eq!(t.lookup("11.0.0.1".parse().unwrap()).unwrap().1, &"default");
        assert_eq!(t.len(), 3);
    }

    #[test]
    fn duplicate_rejected() {
        let mut t = LpmTable::new();
        t.insert("10.0.0.0/8".parse().unwrap(), 1).unwrap();
        assert!(t.insert("10.0.0.0/8".parse().unwrap(), 2).is_err());
    }
}
