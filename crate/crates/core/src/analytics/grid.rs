use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::endpoint::EndpointSpec;

/// A lat/lon box cut into equal cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            rows: 33,
            cols: 65,
            lat_min: 18.0,
            lat_max: 54.0,
            lon_min: 70.0,
            lon_max: 135.0,
        }
    }
}

impl GridSpec {
    /// Cell of a coordinate. Points outside the box land in the nearest
    /// edge cell.
    pub fn cell(&self, lat: f64, lon: f64) -> (usize, usize) {
        let idx = |v: f64, lo: f64, hi: f64, n: usize| {
            let f = ((v - lo) / (hi - lo) * n as f64).floor();
            if f.is_nan() || f < 0.0 {
                0
            } else {
                (f as usize).min(n - 1)
            }
        };
        (
            idx(lat, self.lat_min, self.lat_max, self.rows),
            idx(lon, self.lon_min, self.lon_max, self.cols),
        )
    }
}

/// Picks a uniformly random non-empty cell, then a uniformly random
/// candidate in it, without replacement, until `n` are chosen or none are
/// left. The same seed always gives the same selection.
pub fn grid_sample(candidates: &[EndpointSpec], grid: &GridSpec, n: usize, seed: u64) -> Vec<EndpointSpec> {
    let mut cells: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, c) in candidates.iter().enumerate() {
        cells.entry(grid.cell(c.lat, c.lon)).or_default().push(i);
    }
    let mut cells: Vec<Vec<usize>> = cells.into_values().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n.min(candidates.len()));
    while out.len() < n && !cells.is_empty() {
        let ci = rng.random_range(0..cells.len());
        let members = &mut cells[ci];
        let mi = rng.random_range(0..members.len());
        out.push(candidates[members.swap_remove(mi)].clone());
        if members.is_empty() {
            cells.remove(ci);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::endpoint::Role;
    use std::net::Ipv4Addr;

    fn at(i: u32, lat: f64, lon: f64) -> EndpointSpec {
        EndpointSpec::new(Ipv4Addr::from(i), 80, Role::Client).with_coords(lat, lon)
    }

    #[test]
    fn cells_cover_the_box() {
        let g = GridSpec::default();
        assert_eq!(g.cell(18.0, 70.0), (0, 0));
        assert_eq!(g.cell(54.0, 135.0), (32, 64));
        assert_eq!(g.cell(-5.0, 200.0), (0, 64));
    }

    #[test]
    fn small_cell_is_reached_early() {
        let mut c: Vec<EndpointSpec> = (0..99).map(|i| at(i, 30.0, 100.0)).collect();
        c.push(at(999, 50.0, 130.0));
        let mut early = 0;
        for seed in 0..200 {
            let s = grid_sample(&c, &GridSpec::default(), 3, seed);
            if s.iter().any(|e| e.addr == Ipv4Addr::from(999)) {
                early += 1;
            }
        }
        // P(lone candidate within 3 draws) = 1 - (1/2)^3 = 7/8.
        assert!(early > 150, "{early}");
    }

    #[test]
    fn exhausts_and_reproduces() {
        let c: Vec<EndpointSpec> = (0..20).map(|i| at(i, 20.0 + f64::from(i), 75.0 + f64::from(i))).collect();
        let all = grid_sample(&c, &GridSpec::default(), 100, 7);
        assert_eq!(all.len(), 20);
        assert_eq!(grid_sample(&c, &GridSpec::default(), 8, 3), grid_sample(&c, &GridSpec::default(), 8, 3));
        assert!(grid_sample(&[], &GridSpec::default(), 4, 1).is_empty());
    }
}
