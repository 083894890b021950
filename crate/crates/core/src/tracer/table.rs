use std::collections::BTreeMap;
use std::io::Read;
use std::net::Ipv4Addr;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TracerError;
use crate::prefix::{Ipv4Prefix, LpmTable};

/// Entry network category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntryLabel {
    #[serde(rename = "EDU")]
    Edu,
    #[serde(rename = "COM")]
    Com,
    Other,
}

impl EntryLabel {
    pub fn parse(s: &str) -> Self {
        match s.trim().to_ascii_uppercase().as_str() {
            "EDU" => EntryLabel::Edu,
            "COM" => EntryLabel::Com,
            _ => EntryLabel::Other,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EntryLabel::Edu => "EDU",
            EntryLabel::Com => "COM",
            EntryLabel::Other => "Other",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixEntry {
    pub cidr: Ipv4Prefix,
    pub label: String,
    #[serde(default)]
    pub region: String,
}

/// Network and region attribution by longest-prefix match.
#[derive(Debug, Clone, Default)]
pub struct PrefixTable {
    entries: Vec<PrefixEntry>,
    lpm: LpmTable<usize>,
    /// Plausible RTT range per region, in milliseconds. A hop outside it is
    /// not attributed to the region.
    rtt_bounds: BTreeMap<String, (f64, f64)>,
}

impl PrefixTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, entry: PrefixEntry) -> Result<(), TracerError> {
        self.lpm
            .insert(entry.cidr, self.entries.len())
            .map_err(|e| TracerError::Table(e.to_string()))?;
        self.entries.push(entry);
        Ok(())
    }

    pub fn with(mut self, cidr: &str, label: &str, region: &str) -> Result<Self, TracerError> {
        let cidr = cidr
            .parse()
            .map_err(|e: crate::prefix::PrefixError| TracerError::Table(e.to_string()))?;
        self.insert(PrefixEntry {
            cidr,
            label: label.into(),
            region: region.into(),
        })?;
        Ok(self)
    }

    pub fn set_rtt_bound(&mut self, region: &str, min_ms: f64, max_ms: f64) {
        self.rtt_bounds.insert(region.into(), (min_ms, max_ms));
    }

    /// Reads `cidr,label,region` rows (header required).
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, TracerError> {
        let mut t = Self::new();
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        for row in rdr.deserialize() {
            let e: PrefixEntry = row.map_err(|e| TracerError::Table(e.to_string()))?;
            t.insert(e)?;
        }
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self, TracerError> {
        let f = std::fs::File::open(path).map_err(|e| TracerError::Table(format!("{}: {e}", path.display())))?;
        Self::read_csv(f)
    }

    pub fn entries(&self) -> &[PrefixEntry] {
        &self.entries
    }

    pub fn lookup(&self, addr: Ipv4Addr) -> Option<&PrefixEntry> {
        self.lpm.lookup(addr).map(|(_, i)| &self.entries[*i])
    }

    /// Entry covering `addr` if it is tagged with `region` and `rtt_ms`
    /// fits that region's bound.
    pub fn in_region(&self, addr: Ipv4Addr, rtt_ms: Option<f64>, region: &str) -> Option<&PrefixEntry> {
        let e = self.lookup(addr).filter(|e| e.region == region)?;
        if let (Some((lo, hi)), Some(rtt)) = (self.rtt_bounds.get(region), rtt_ms) {
            if rtt < *lo || rtt > *hi {
                return None;
            }
        }
        Some(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_and_longest_match() {
        let csv = "cidr,label,region\n202.97.0.0/16,COM,CN\n202.97.5.0/24,EDU,CN\n8.8.0.0/16,COM,US\n";
        let t = PrefixTable::read_csv(csv.as_bytes()).unwrap();
        assert_eq!(t.lookup(Ipv4Addr::new(202, 97, 1, 1)).unwrap().label, "COM");
        assert_eq!(t.lookup(Ipv4Addr::new(202, 97, 5, 1)).unwrap().label, "EDU");
        assert!(t.lookup(Ipv4Addr::new(1, 1, 1, 1)).is_none());
        assert!(t.in_region(Ipv4Addr::new(8, 8, 1, 1), None, "CN").is_none());
    }

    #[test]
    fn duplicate_prefix_rejected() {
        let csv = "cidr,label,region\n10.0.0.0/8,COM,CN\n10.0.0.0/8,EDU,CN\n";
        assert!(PrefixTable::read_csv(csv.as_bytes()).is_err());
    }

    #[test]
    fn rtt_bound_excludes_hop() {
        let mut t = PrefixTable::new().with("159.226.0.0/16", "EDU", "CN").unwrap();
        t.set_rtt_bound("CN", 100.0, 1000.0);
        let a = Ipv4Addr::new(159, 226, 0, 1);
        assert!(t.in_region(a, Some(20.0), "CN").is_none());
        assert!(t.in_region(a, Some(180.0), "CN").is_some());
    }
}
