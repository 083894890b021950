//! Labels an IPID time series with one of the idle-scan cases.
//!
//! The deltas of the unperturbed phase give a noise model; the
//! perturbation phase is compared against it as a level shift, and the
//! shift per spoofed SYN decides the case.

mod arma;
mod diff;
mod intervention;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::idlescan::IpidTimeSeries;

pub use arma::{fit_arma, select_order, ArmaModel, MIN_DELTAS};
pub use diff::{diff_series, Delta};
pub use intervention::{
    fit_base_model, intervention_amplitude, phase_deltas, Diagnostics, Intervention, PhaseDeltas,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifyError {
    #[error("need at least {need} samples, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("phases too short (base {base}, perturb {perturb})")]
    PhasesTooShort { base: usize, perturb: usize },
    #[error("model fit failed: {0}")]
    ModelFitFailed(String),
    #[error("invalid series: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorReason {
    AmbiguousAmplitude,
    TooNoisy,
    ModelFitFailed,
    TooShort,
    PhasesTooShort,
    InvalidSeries,
}

impl From<&ClassifyError> for ErrorReason {
    fn from(e: &ClassifyError) -> Self {
        match e {
            ClassifyError::TooShort { .. } => ErrorReason::TooShort,
            ClassifyError::PhasesTooShort { .. } => ErrorReason::PhasesTooShort,
            ClassifyError::ModelFitFailed(_) => ErrorReason::ModelFitFailed,
            ClassifyError::Invalid(_) => ErrorReason::InvalidSeries,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "case", content = "reason", rename_all = "kebab-case")]
pub enum Case {
    /// Server's SYN/ACKs never reach the client: no increase.
    ServerToClientDrop,
    /// One RST per spoofed SYN.
    NoPacketsDropped,
    /// Client's RSTs never reach the server, which keeps retransmitting.
    ClientToServerDrop,
    Error(ErrorReason),
}

impl Case {
    pub fn label(self) -> &'static str {
        match self {
            Case::ServerToClientDrop => "server-to-client-drop",
            Case::NoPacketsDropped => "no-packets-dropped",
            Case::ClientToServerDrop => "client-to-server-drop",
            Case::Error(_) => "error",
        }
    }

    pub fn is_error(self) -> bool {
        matches!(self, Case::Error(_))
    }

    /// Blocked in either direction.
    pub fn is_blocked(self) -> bool {
        matches!(self, Case::ServerToClientDrop | Case::ClientToServerDrop)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseLabel {
    pub case: Case,
    /// IPID increase per spoofed SYN; `None` for errors.
    pub amplitude: Option<f64>,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyConfig {
    pub p: usize,
    pub q: usize,
    /// Pick (p, q) by AIC up to `max_order` instead of the fixed order.
    pub auto_order: bool,
    pub max_order: usize,
    /// Seconds after the first spoofed SYN excluded from the perturbation
    /// phase; must cover the server's retransmission schedule.
    pub settle: f64,
    /// Largest amplitude standard error still labelled.
    pub max_se: f64,
    pub s2c_below: f64,
    pub none_below: f64,
    pub c2s_from: f64,
    pub c2s_to: f64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            p: 1,
            q: 1,
            auto_order: false,
            max_order: 2,
            settle: 33.0,
            max_se: 0.25,
            s2c_below: 0.5,
            none_below: 2.0,
            c2s_from: 2.5,
            c2s_to: 8.0,
        }
    }
}

/// Maps an amplitude to a case. Amplitudes between the bands, or whose
/// standard error exceeds `max_se`, are errors.
pub fn classify_case(amplitude: f64, diagnostics: &Diagnostics, cfg: &ClassifyConfig) -> CaseLabel {
    let se = diagnostics.se_amplitude;
    let confidence = if se.is_finite() { 1.0 / (1.0 + se) } else { 0.0 };
    let error = |reason| CaseLabel {
        case: Case::Error(reason),
        amplitude: None,
        confidence,
    };
    if !amplitude.is_finite() {
        return error(ErrorReason::ModelFitFailed);
    }
    if !(se <= cfg.max_se) {
        return error(ErrorReason::TooNoisy);
    }
    let case = if amplitude < cfg.s2c_below {
        Case::ServerToClientDrop
    } else if amplitude < cfg.none_below {
        Case::NoPacketsDropped
    } else if (cfg.c2s_from..=cfg.c2s_to).contains(&amplitude) {
        Case::ClientToServerDrop
    } else {
        return error(ErrorReason::AmbiguousAmplitude);
    };
    CaseLabel {
        case,
        amplitude: Some(amplitude),
        confidence,
    }
}

/// Full pipeline. Failures become `Case::Error` labels; the intervention
/// fit is returned when one was made.
pub fn classify_series(
    series: &IpidTimeSeries,
    cfg: &ClassifyConfig,
) -> (CaseLabel, Option<Intervention>) {
    let fail = |e: ClassifyError| CaseLabel {
        case: Case::Error(ErrorReason::from(&e)),
        amplitude: None,
        confidence: 0.0,
    };
    let run = || -> Result<Intervention, ClassifyError> {
        let deltas = phase_deltas(series, cfg.settle)?;
        intervention::check_lengths(&deltas)?;
        let model = fit_base_model(&deltas, cfg)?;
        intervention::amplitude_from_deltas(&deltas, &model, series.spoof_rate / series.probe_rate)
    };
    match run() {
        Ok(iv) => (classify_case(iv.amplitude, &iv.diagnostics, cfg), Some(iv)),
        Err(e) => (fail(e), None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(se: f64) -> Diagnostics {
        Diagnostics {
            p: 1,
            q: 1,
            ar: vec![0.0],
            ma: vec![0.0],
            sigma2: 0.0,
            degenerate: false,
            base_len: 60,
            perturb_len: 27,
            artifacts: 0,
            omega: 0.0,
            se_omega: se,
            se_amplitude: se,
            residual_var: 0.0,
        }
    }

    #[test]
    fn thresholds() {
        let cfg = ClassifyConfig::default();
        let d = diag(0.01);
        assert_eq!(classify_case(0.02, &d, &cfg).case, Case::ServerToClientDrop);
        assert_eq!(classify_case(1.0, &d, &cfg).case, Case::NoPacketsDropped);
        assert_eq!(
            classify_case(2.2, &d, &cfg).case,
            Case::Error(ErrorReason::AmbiguousAmplitude)
        );
        assert_eq!(classify_case(6.0, &d, &cfg).case, Case::ClientToServerDrop);
        assert_eq!(classify_case(8.0, &d, &cfg).case, Case::ClientToServerDrop);
        assert_eq!(
            classify_case(8.1, &d, &cfg).case,
            Case::Error(ErrorReason::AmbiguousAmplitude)
        );
        assert_eq!(
            classify_case(1.0, &diag(0.3), &cfg).case,
            Case::Error(ErrorReason::TooNoisy)
        );
    }

    #[test]
    fn label_invariants() {
        let cfg = ClassifyConfig::default();
        for a in [-1.0, 0.0, 0.49, 0.5, 1.9, 2.0, 2.4, 2.5, 5.0, 8.0, 9.0] {
            let l = classify_case(a, &diag(0.05), &cfg);
            assert_eq!(l.amplitude.is_none(), l.case.is_error());
            assert!((0.0..=1.0).contains(&l.confidence));
        }
    }

    #[test]
    fn confidence_falls_with_noise() {
        let cfg = ClassifyConfig::default();
        let a = classify_case(1.0, &diag(0.01), &cfg).confidence;
        let b = classify_case(1.0, &diag(0.2), &cfg).confidence;
        assert!(a > b);
    }
}
