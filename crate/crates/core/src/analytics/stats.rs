use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::{AnalyticsConfig, AnalyticsError, Averaging, LagMode};
use crate::classify::Case;
use crate::endpoint::EndpointSpec;
use crate::idlescan::IdleScanRecord;

/// Product-moment correlation. Zero variance in either input is an error,
/// never 0.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, AnalyticsError> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(AnalyticsError::Input(format!(
            "pearson needs two equal-length vectors of at least 2 values (got {} and {})",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AnalyticsError::Undefined);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Hourly counts of one case for one source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSeries {
    pub source: EndpointSpec,
    pub hourly_counts: Vec<u32>,
}

impl SourceSeries {
    pub fn total(&self) -> u64 {
        self.hourly_counts.iter().map(|c| u64::from(*c)).sum()
    }

    fn occurrences(&self) -> impl Iterator<Item = usize> + '_ {
        self.hourly_counts
            .iter()
            .enumerate()
            .filter(|(_, c)| **c > 0)
            .map(|(t, _)| t)
    }
}

/// Builds per-client hourly counts of `case` from idle-scan records. Hour
/// indices count from the earliest record; clients whose region is in
/// `cfg.exclude_regions` are left out.
pub fn source_series(records: &[IdleScanRecord], case: Case, cfg: &AnalyticsConfig) -> Vec<SourceSeries> {
    let Some(t0) = records.iter().map(|r| r.timestamp).min() else {
        return Vec::new();
    };
    let hours = records
        .iter()
        .map(|r| (r.timestamp.as_nanos() - t0.as_nanos()) / 3_600_000_000_000)
        .max()
        .unwrap_or(0) as usize
        + 1;
    let mut by_client: BTreeMap<Ipv4Addr, SourceSeries> = BTreeMap::new();
    for r in records {
        if cfg.exclude_regions.iter().any(|x| *x == r.client.region) {
            continue;
        }
        let s = by_client.entry(r.client.addr).or_insert_with(|| SourceSeries {
            source: r.client.clone(),
            hourly_counts: vec![0; hours],
        });
        if r.label.case == case {
            let h = ((r.timestamp.as_nanos() - t0.as_nanos()) / 3_600_000_000_000) as usize;
            s.hourly_counts[h] += 1;
        }
    }
    by_client.into_values().collect()
}

/// For each lag `L` in `1..=max_lag`, the probability that an occurrence at
/// hour `t` is followed by one at `t + L` (or anywhere in `t+1..=t+L` with
/// [`LagMode::Within`]). Empty when no source has an occurrence.
pub fn temporal_association(
    series: &[SourceSeries],
    max_lag: usize,
    mode: LagMode,
    averaging: Averaging,
) -> Vec<f64> {
    let active: Vec<&SourceSeries> = series.iter().filter(|s| s.occurrences().next().is_some()).collect();
    if active.is_empty() {
        return Vec::new();
    }
    (1..=max_lag)
        .map(|lag| {
            let per: Vec<(usize, usize)> = active
                .iter()
                .map(|s| {
                    let c = &s.hourly_counts;
                    let hit = |t: usize| c.get(t).is_some_and(|v| *v > 0);
                    let occ: Vec<usize> = s.occurrences().collect();
                    let hits = occ
                        .iter()
                        .filter(|&&t| match mode {
                            LagMode::Exact => hit(t + lag),
                            LagMode::Within => (1..=lag).any(|l| hit(t + l)),
                        })
                        .count();
                    (hits, occ.len())
                })
                .collect();
            match averaging {
                Averaging::PerSource => {
                    per.iter().map(|(h, n)| *h as f64 / *n as f64).sum::<f64>() / per.len() as f64
                }
                Averaging::Pooled => {
                    let (h, n) = per.iter().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
                    h as f64 / n as f64
                }
            }
        })
        .collect()
}

/// Correlation between each source's total and the mean total of its `k`
/// nearest neighbours by Euclidean distance on (lat, lon). Ties go to the
/// lower address.
pub fn spatial_association(series: &[SourceSeries], k: usize) -> Result<f64, AnalyticsError> {
    if k == 0 || series.len() < k + 1 {
        return Err(AnalyticsError::Input(format!(
            "need more than k = {k} sources, got {}",
            series.len()
        )));
    }
    let totals: Vec<f64> = series.iter().map(|s| s.total() as f64).collect();
    let means: Vec<f64> = series
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut others: Vec<(f64, Ipv4Addr, usize)> = series
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(j, o)| {
                    let d = (o.source.lat - s.source.lat).hypot(o.source.lon - s.source.lon);
                    (d, o.source.addr, j)
                })
                .collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            others[..k].iter().map(|(_, _, j)| totals[*j]).sum::<f64>() / k as f64
        })
        .collect();
    pearson(&totals, &means)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::endpoint::Role;
    use proptest::prelude::*;

    fn src(i: u32, lat: f64, lon: f64, counts: Vec<u32>) -> SourceSeries {
        SourceSeries {
            source: EndpointSpec::new(Ipv4Addr::from(0x0a00_0000 + i), 80, Role::Client).with_coords(lat, lon),
            hourly_counts: counts,
        }
    }

    #[test]
    fn pearson_fixtures() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[-1.0, -2.0, -3.0]).unwrap() + 1.0).abs() < 1e-15);
        // Hand computation: dx = (-1, 0, 1), dy = (-7/3, -1/3, 8/3),
        // sxy = 5, sxx = 2, syy = 114/9, r = 15 / sqrt(228).
        let r = pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 7.0]).unwrap();
        assert!((r - 15.0 / 228f64.sqrt()).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 1.0], &[1.0, 2.0]), Err(AnalyticsError::Undefined));
    }

    #[test]
    fn temporal_fixture() {
        let s = vec![src(1, 0.0, 0.0, vec![0, 1, 1, 1, 0, 0])];
        let p = temporal_association(&s, 3, LagMode::Exact, Averaging::PerSource);
        assert_eq!(p, vec![2.0 / 3.0, 1.0 / 3.0, 0.0]);
        let only0 = vec![src(1, 0.0, 0.0, vec![1, 0, 0, 0])];
        assert_eq!(temporal_association(&only0, 3, LagMode::Exact, Averaging::PerSource), vec![0.0; 3]);
        assert!(temporal_association(&[src(1, 0.0, 0.0, vec![0; 4])], 2, LagMode::Exact, Averaging::PerSource).is_empty());
    }

    #[test]
    fn duplicated_source_does_not_change_mean() {
        let a = src(1, 0.0, 0.0, vec![1, 0, 1, 1, 0, 1]);
        let b = src(2, 0.0, 0.0, a.hourly_counts.clone());
        let one = temporal_association(&[a.clone()], 4, LagMode::Exact, Averaging::PerSource);
        let two = temporal_association(&[a, b], 4, LagMode::Exact, Averaging::PerSource);
        assert_eq!(one, two);
    }

    #[test]
    fn clusters_correlate() {
        let mut s = Vec::new();
        for i in 0..5 {
            s.push(src(i, 30.0 + f64::from(i) * 0.1, 100.0, vec![9 + i % 2]));
            s.push(src(10 + i, 45.0 + f64::from(i) * 0.1, 120.0, vec![1 + i % 2]));
        }
        let r = spatial_association(&s, 3).unwrap();
        assert!(r > 0.9, "{r}");
        let flat: Vec<SourceSeries> = (0..5).map(|i| src(i, f64::from(i), 0.0, vec![3])).collect();
        assert_eq!(spatial_association(&flat, 2), Err(AnalyticsError::Undefined));
    }

    proptest! {
        #[test]
        fn affine_images_correlate_perfectly(
            x in proptest::collection::vec(-1e3f64..1e3, 3..40),
            a in prop_oneof![0.1f64..10.0, -10.0f64..-0.1],
            b in -100.0f64..100.0,
        ) {
            let mean = x.iter().sum::<f64>() / x.len() as f64;
            prop_assume!(x.iter().any(|v| (v - mean).abs() > 1e-6));
            let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let r = pearson(&x, &y).unwrap();
            prop_assert!((r - a.signum()).abs() < 1e-12, "{}", r);
        }

        #[test]
        fn temporal_in_unit_interval(counts in proptest::collection::vec(proptest::collection::vec(0u32..3, 1..30), 1..6)) {
            let s: Vec<SourceSeries> = counts.into_iter().enumerate().map(|(i, c)| src(i as u32, 0.0, 0.0, c)).collect();
            for p in temporal_association(&s, 5, LagMode::Exact, Averaging::PerSource) {
                prop_assert!((0.0..=1.0).contains(&p));
            }
        }

        #[test]
        fn spatial_translation_invariant(
            pts in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0, 0u32..20), 5..20),
            dx in -50.0f64..50.0,
            dy in -50.0f64..50.0,
        ) {
            let s: Vec<SourceSeries> = pts.iter().enumerate().map(|(i, (la, lo, c))| src(i as u32, *la, *lo, vec![*c])).collect();
            let t: Vec<SourceSeries> = pts.iter().enumerate().map(|(i, (la, lo, c))| src(i as u32, la + dx, lo + dy, vec![*c])).collect();
            match (spatial_association(&s, 3), spatial_association(&t, 3)) {
                (Ok(a), Ok(b)) => prop_assert!((a - b).abs() < 1e-9),
                (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
            }
        }
    }
}
