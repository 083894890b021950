use serde::{Deserialize, Serialize};

use super::arma::{fit_arma, select_order, solve, ArmaModel, MIN_DELTAS};
use super::diff::{diff_series, Delta};
use super::{ClassifyConfig, ClassifyError};
use crate::idlescan::{IpidTimeSeries, Phase};

/// Deltas of each phase, scaled to one probe interval.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseDeltas {
    pub base: Vec<f64>,
    /// Perturbation deltas after the settle window.
    pub perturb: Vec<f64>,
    pub artifacts: usize,
}

/// Splits the series into per-phase deltas. A delta belongs to a phase
/// only if both of its samples do; perturbation deltas whose first sample
/// is earlier than `perturb_start + settle` are left out because the
/// server's retransmissions have not reached steady state yet.
pub fn phase_deltas(series: &IpidTimeSeries, settle: f64) -> Result<PhaseDeltas, ClassifyError> {
    series.validate().map_err(ClassifyError::Invalid)?;
    let deltas = diff_series(&series.ipids())?;
    let interval = 1.0 / series.probe_rate;
    let steady = series.perturb_start.as_secs_f64() + settle;
    let mut out = PhaseDeltas::default();
    for (w, d) in series.samples.windows(2).zip(deltas) {
        let Delta::Forward(d) = d else {
            out.artifacts += 1;
            continue;
        };
        let dt = (w[1].timestamp - w[0].timestamp).as_secs_f64();
        let v = f64::from(d) * interval / dt;
        match (w[0].phase, w[1].phase) {
            (Phase::Base, Phase::Base) => out.base.push(v),
            (Phase::Perturb, Phase::Perturb) if w[0].timestamp.as_secs_f64() >= steady => {
                out.perturb.push(v)
            }
            _ => {}
        }
    }
    Ok(out)
}

/// Fit of the level-shift model `x = c + ω·step + noise`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub p: usize,
    pub q: usize,
    pub ar: Vec<f64>,
    pub ma: Vec<f64>,
    pub sigma2: f64,
    pub degenerate: bool,
    pub base_len: usize,
    pub perturb_len: usize,
    pub artifacts: usize,
    /// Level shift in IPID increments per probe interval.
    pub omega: f64,
    pub se_omega: f64,
    /// Standard error of the amplitude (per spoofed SYN).
    pub se_amplitude: f64,
    /// Residual variance of the whitened regression.
    pub residual_var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intervention {
    pub amplitude: f64,
    pub diagnostics: Diagnostics,
}

/// Fits the noise model on the Base phase as configured.
pub fn fit_base_model(deltas: &PhaseDeltas, cfg: &ClassifyConfig) -> Result<ArmaModel, ClassifyError> {
    if cfg.auto_order {
        select_order(&deltas.base, cfg.max_order, cfg.max_order)
    } else {
        fit_arma(&deltas.base, cfg.p, cfg.q)
    }
}

/// Estimates the per-SYN level shift between phases after whitening both
/// with `noise`.
pub fn intervention_amplitude(
    series: &IpidTimeSeries,
    noise: &ArmaModel,
    cfg: &ClassifyConfig,
) -> Result<Intervention, ClassifyError> {
    let deltas = phase_deltas(series, cfg.settle)?;
    amplitude_from_deltas(&deltas, noise, series.spoof_rate / series.probe_rate)
}

pub(crate) fn amplitude_from_deltas(
    deltas: &PhaseDeltas,
    noise: &ArmaModel,
    ratio: f64,
) -> Result<Intervention, ClassifyError> {
    let lag = if noise.degenerate { 0 } else { noise.p };
    let need = lag + 2;
    if deltas.base.len() < need || deltas.perturb.len() < need {
        return Err(ClassifyError::PhasesTooShort {
            base: deltas.base.len(),
            perturb: deltas.perturb.len(),
        });
    }
    let mut y = Vec::new();
    let mut c = Vec::new();
    let mut s = Vec::new();
    for (seg, step) in [(&deltas.base, 0.0), (&deltas.perturb, 1.0)] {
        y.extend(noise.whiten(seg));
        c.extend(noise.whiten(&vec![1.0; seg.len()]));
        s.extend(noise.whiten(&vec![step; seg.len()]));
    }
    if y.iter().chain(&c).chain(&s).any(|v| !v.is_finite()) {
        return Err(ClassifyError::ModelFitFailed("whitening diverged".into()));
    }
    let n = y.len();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let xtx = vec![vec![dot(&c, &c), dot(&c, &s)], vec![dot(&s, &c), dot(&s, &s)]];
    let det = xtx[0][0] * xtx[1][1] - xtx[0][1] * xtx[1][0];
    let beta = solve(xtx.clone(), vec![dot(&c, &y), dot(&s, &y)])
        .ok_or_else(|| ClassifyError::ModelFitFailed("singular regression".into()))?;
    let rss: f64 = (0..n)
        .map(|i| {
            let r = y[i] - beta[0] * c[i] - beta[1] * s[i];
            r * r
        })
        .sum();
    let residual_var = if n > 2 { rss / (n - 2) as f64 } else { 0.0 };
    let se_omega = (residual_var * xtx[0][0] / det).max(0.0).sqrt();
    let omega = beta[1];
    Ok(Intervention {
        amplitude: omega / ratio,
        diagnostics: Diagnostics {
            p: noise.p,
            q: noise.q,
            ar: noise.ar.clone(),
            ma: noise.ma.clone(),
            sigma2: noise.sigma2,
            degenerate: noise.degenerate,
            base_len: deltas.base.len(),
            perturb_len: deltas.perturb.len(),
            artifacts: deltas.artifacts,
            omega,
            se_omega,
            se_amplitude: se_omega / ratio,
            residual_var,
        },
    })
}

/// Base-phase deltas must support a model fit on their own.
pub(crate) fn check_lengths(d: &PhaseDeltas) -> Result<(), ClassifyError> {
    if d.base.len() < MIN_DELTAS {
        return Err(ClassifyError::TooShort {
            need: MIN_DELTAS,
            got: d.base.len(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(base: Vec<f64>, perturb: Vec<f64>) -> PhaseDeltas {
        PhaseDeltas {
            base,
            perturb,
            artifacts: 0,
        }
    }

    #[test]
    fn noiseless_step_is_exact() {
        let d = flat(vec![1.0; 60], vec![6.0; 27]);
        let m = fit_arma(&d.base, 1, 1).unwrap();
        assert!(m.degenerate);
        let iv = amplitude_from_deltas(&d, &m, 5.0).unwrap();
        assert!((iv.amplitude - 1.0).abs() < 1e-12, "{}", iv.amplitude);
        assert_eq!(iv.diagnostics.se_amplitude, 0.0);
    }

    #[test]
    fn step_matches_difference_of_means_without_model() {
        // Independent oracle: with identity whitening OLS on [1, step]
        // reduces to the difference of phase means.
        let base: Vec<f64> = (0..40).map(|i| 1.0 + (i % 3) as f64).collect();
        let perturb: Vec<f64> = (0..30).map(|i| 4.0 + (i % 5) as f64).collect();
        let mb = base.iter().sum::<f64>() / base.len() as f64;
        let mp = perturb.iter().sum::<f64>() / perturb.len() as f64;
        let mut m = fit_arma(&base, 0, 0).unwrap();
        m.degenerate = true;
        let iv = amplitude_from_deltas(&flat(base, perturb), &m, 1.0).unwrap();
        assert!((iv.amplitude - (mp - mb)).abs() < 1e-9);
    }

    #[test]
    fn short_phases_rejected() {
        let d = flat(vec![1.0; 30], vec![2.0]);
        let m = fit_arma(&d.base, 1, 1).unwrap();
        assert!(matches!(
            amplitude_from_deltas(&d, &m, 1.0),
            Err(ClassifyError::PhasesTooShort { .. })
        ));
    }
}
