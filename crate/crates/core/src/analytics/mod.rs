//! Statistics and result tables computed from stored records.
//!
//! Everything here is a pure function of its inputs. Labels for regions and
//! server types come from record metadata and the prefix table only.

mod grid;
mod stats;
mod tables;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use grid::{grid_sample, GridSpec};
pub use stats::{pearson, source_series, spatial_association, temporal_association, SourceSeries};
pub use tables::{
    case_table, contingency_table, diurnal_series, heatmap, hop_histogram, pair_runs, traceroute_table,
    CaseRow, CaseTable, ContingencyTable, PortKind, RunPair, TracerouteTable,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticsError {
    /// A correlation over a constant vector. Kept apart from 0 on purpose.
    #[error("undefined: zero variance")]
    Undefined,
    #[error("{0}")]
    Input(String),
    #[error("csv: {0}")]
    Csv(String),
}

impl From<csv::Error> for AnalyticsError {
    fn from(e: csv::Error) -> Self {
        AnalyticsError::Csv(e.to_string())
    }
}

/// How an occurrence at hour `t` is matched at lag `L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LagMode {
    /// Another occurrence exactly at `t + L`.
    #[default]
    Exact,
    /// Another occurrence anywhere in `t+1 ..= t+L`.
    Within,
}

/// How per-source probabilities are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Averaging {
    /// Unweighted mean of per-source fractions.
    #[default]
    PerSource,
    /// All occurrences of all sources in one fraction.
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyticsConfig {
    /// Neighbours averaged by the spatial association.
    pub k: usize,
    pub max_lag: usize,
    pub lag_mode: LagMode,
    pub averaging: Averaging,
    pub grid: GridSpec,
    /// Client regions left out of the temporal and spatial analyses.
    pub exclude_regions: Vec<String>,
    pub filtered_port: u16,
    pub target_region: String,
}

impl Default for AnalyticsConfig {
    fn default() -> Self {
        Self {
            k: 5,
            max_lag: 24,
            lag_mode: LagMode::Exact,
            averaging: Averaging::PerSource,
            grid: GridSpec::default(),
            exclude_regions: Vec::new(),
            filtered_port: 9001,
            target_region: "CN".into(),
        }
    }
}

impl AnalyticsConfig {
    pub fn validate(&self) -> Result<(), AnalyticsError> {
        if self.k == 0 {
            return Err(AnalyticsError::Input("k must be at least 1".into()));
        }
        if self.grid.rows == 0 || self.grid.cols == 0 {
            return Err(AnalyticsError::Input("grid dimensions must be positive".into()));
        }
        if !(self.grid.lat_max > self.grid.lat_min && self.grid.lon_max > self.grid.lon_min) {
            return Err(AnalyticsError::Input("grid bounds are empty".into()));
        }
        Ok(())
    }
}
