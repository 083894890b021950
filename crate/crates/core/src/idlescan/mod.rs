//! Hybrid IPID idle scans.
//!
//! A measurement machine (MM) samples a client's IPID by sending it
//! SYN/ACKs and reading the IPID of the RSTs that come back. Halfway
//! through the scan it starts sending SYNs to a server with the client's
//! address as source. Whatever the server sends back to the client, and
//! whatever the client answers, shows up as extra IPID increments.

mod liveliness;
mod qualify;
mod scan;
mod schedule;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{CaseLabel, Diagnostics};
use crate::endpoint::EndpointSpec;
use crate::transport::{Timestamp, TransportError};

pub use liveliness::CheckOutcome;
pub use qualify::{qualify_client, Disqualification, QualifyConfig, Qualification};
pub use scan::{IdleScanner, PortPlan, RoundOutcome};
pub use schedule::{schedule_bipartite, Assignment, ScheduleConfig, Slot};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IdleScanError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("round voided: {0}")]
    Voided(String),
    #[error("bad configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Base,
    Perturb,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IpidSample {
    pub timestamp: Timestamp,
    pub ipid: u16,
    pub phase: Phase,
}

/// IPID samples of one scan round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpidTimeSeries {
    pub samples: Vec<IpidSample>,
    /// Spoofed SYNs per second during the perturbation phase.
    pub spoof_rate: f64,
    /// IPID probes per second.
    pub probe_rate: f64,
    /// When the first spoofed SYN left the MM.
    pub perturb_start: Timestamp,
    pub client: EndpointSpec,
    pub server: EndpointSpec,
}

impl IpidTimeSeries {
    /// Checks the ordering invariants: strictly increasing timestamps and
    /// every Base sample before every Perturb sample.
    pub fn validate(&self) -> Result<(), String> {
        if !(self.spoof_rate > 0.0 && self.probe_rate > 0.0) {
            return Err("rates must be positive".into());
        }
        for w in self.samples.windows(2) {
            if w[1].timestamp <= w[0].timestamp {
                return Err("timestamps not strictly increasing".into());
            }
            if w[0].phase == Phase::Perturb && w[1].phase == Phase::Base {
                return Err("base sample after perturbation began".into());
            }
        }
        Ok(())
    }

    pub fn phase_len(&self, phase: Phase) -> usize {
        self.samples.iter().filter(|s| s.phase == phase).count()
    }

    pub fn ipids(&self) -> Vec<u16> {
        self.samples.iter().map(|s| s.ipid).collect()
    }
}

/// Timing of one scan round. All durations in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanRoundConfig {
    pub scan_duration: f64,
    /// Length of the unperturbed phase at the start of the scan.
    pub base_duration: f64,
    pub rst_flush_duration: f64,
    pub check_duration: f64,
    /// How long the server check keeps listening after its last SYN.
    pub server_check_listen: f64,
    pub hourly_rounds: u32,
    pub probe_rate: f64,
    pub spoof_rate: f64,
    /// SYN/ACKs (client check) or SYNs (server check) per second.
    pub check_rate: f64,
}

impl Default for ScanRoundConfig {
    fn default() -> Self {
        Self {
            scan_duration: 120.0,
            base_duration: 60.0,
            rst_flush_duration: 30.0,
            check_duration: 5.0,
            server_check_listen: 8.0,
            hourly_rounds: 22,
            probe_rate: 1.0,
            spoof_rate: 5.0,
            check_rate: 5.0,
        }
    }
}

impl ScanRoundConfig {
    pub fn validate(&self) -> Result<(), IdleScanError> {
        let positive = [
            self.scan_duration,
            self.base_duration,
            self.rst_flush_duration,
            self.check_duration,
            self.probe_rate,
            self.spoof_rate,
            self.check_rate,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(IdleScanError::Config("durations and rates must be positive".into()));
        }
        if self.base_duration >= self.scan_duration {
            return Err(IdleScanError::Config(
                "base phase must be shorter than the scan".into(),
            ));
        }
        Ok(())
    }

    pub fn perturb_duration(&self) -> f64 {
        self.scan_duration - self.base_duration
    }

    /// Virtual time one full round takes, checks and flush included.
    pub fn round_duration(&self) -> Duration {
        let check = self.check_duration + 1.0;
        let server = self.check_duration + self.server_check_listen + 1.0;
        Duration::from_secs_f64(2.0 * (check + server) + self.scan_duration + 2.0 + self.rst_flush_duration)
    }
}

/// One classified scan round, as stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdleScanRecord {
    pub client: EndpointSpec,
    pub server: EndpointSpec,
    pub round: u32,
    pub slot: usize,
    /// Hour of day the round started in.
    pub hour: u8,
    pub timestamp: Timestamp,
    pub label: CaseLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Diagnostics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voided: Option<String>,
}
