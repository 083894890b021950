use serde::{Deserialize, Serialize};

use super::ClassifyError;

/// Fewest deltas a model may be fitted to.
pub const MIN_DELTAS: usize = 20;

const MAX_ITER: u32 = 200;

/// ARMA(p, q) model of a delta series, fitted by conditional sum of squares:
///
/// `x[t] - mean = Σ ar[i]·(x[t-1-i] - mean) + e[t] + Σ ma[j]·e[t-1-j]`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmaModel {
    pub p: usize,
    pub q: usize,
    pub mean: f64,
    pub ar: Vec<f64>,
    pub ma: Vec<f64>,
    /// Innovation variance, `css / residuals.len()`.
    pub sigma2: f64,
    /// One residual per usable sample, `n - p` of them.
    pub residuals: Vec<f64>,
    pub css: f64,
    pub aic: f64,
    /// Set for a constant series; coefficients are then zero.
    pub degenerate: bool,
    pub iterations: u32,
}

/// Durbin-Levinson recursion from partial autocorrelations in (-1, 1) to
/// the coefficients of a stationary AR polynomial.
fn pacf_to_coeffs(r: &[f64]) -> Vec<f64> {
    let mut phi: Vec<f64> = Vec::with_capacity(r.len());
    for (k, &rk) in r.iter().enumerate() {
        let prev = phi.clone();
        for j in 0..k {
            phi[j] = prev[j] - rk * prev[k - 1 - j];
        }
        phi.push(rk);
    }
    phi
}

fn ar_from_raw(u: &[f64]) -> Vec<f64> {
    pacf_to_coeffs(&u.iter().map(|x| x.tanh()).collect::<Vec<_>>())
}

/// MA polynomial `1 + Σ θ B^j` is invertible iff `1 - Σ (-θ) B^j` is
/// stationary, so the AR map with a sign flip covers it.
fn ma_from_raw(v: &[f64]) -> Vec<f64> {
    ar_from_raw(v).into_iter().map(|c| -c).collect()
}

fn css_residuals(x: &[f64], mean: f64, ar: &[f64], ma: &[f64]) -> Vec<f64> {
    let p = ar.len();
    let mut e = vec![0.0; x.len()];
    for t in p..x.len() {
        let mut v = x[t] - mean;
        for (i, a) in ar.iter().enumerate() {
            v -= a * (x[t - 1 - i] - mean);
        }
        for (j, m) in ma.iter().enumerate() {
            if t > j {
                v -= m * e[t - 1 - j];
            }
        }
        e[t] = v;
    }
    e.split_off(p)
}

/// Gaussian elimination with partial pivoting. `None` if singular.
pub(crate) fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
    (m, v)
}

struct Problem<'a> {
    x: &'a [f64],
    p: usize,
    ridge: f64,
}

impl Problem<'_> {
    fn split(&self, th: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        (
            th[0],
            ar_from_raw(&th[1..1 + self.p]),
            ma_from_raw(&th[1 + self.p..]),
        )
    }

    /// Residuals plus ridge rows that pull the raw parameters toward zero;
    /// the ridge only matters on flat ridges such as ARMA(1,1) on white
    /// noise, where `ar = -ma` fits equally well.
    fn eval(&self, th: &[f64]) -> Vec<f64> {
        let (m, ar, ma) = self.split(th);
        let mut f = css_residuals(self.x, m, &ar, &ma);
        f.extend(th[1..].iter().map(|u| self.ridge * u));
        f
    }
}

fn sum_sq(f: &[f64]) -> f64 {
    f.iter().map(|v| v * v).sum()
}

/// Fits ARMA(p, q) by minimising the conditional sum of squares with
/// Levenberg-Marquardt over a reparametrisation that keeps the AR part
/// stationary and the MA part invertible.
pub fn fit_arma(x: &[f64], p: usize, q: usize) -> Result<ArmaModel, ClassifyError> {
    if x.len() < MIN_DELTAS {
        return Err(ClassifyError::TooShort {
            need: MIN_DELTAS,
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ClassifyError::ModelFitFailed("non-finite input".into()));
    }
    let (mean, var) = mean_var(x);
    if var < 1e-12 {
        let m = x.len() - p;
        return Ok(ArmaModel {
            p,
            q,
            mean,
            ar: vec![0.0; p],
            ma: vec![0.0; q],
            sigma2: 0.0,
            residuals: vec![0.0; m],
            css: 0.0,
            aic: f64::NEG_INFINITY,
            degenerate: true,
            iterations: 0,
        });
    }
    let prob = Problem {
        x,
        p,
        ridge: (0.01 * var).sqrt(),
    };
    let k = 1 + p + q;
    let mut th = vec![0.0; k];
    th[0] = mean;
    let mut f = prob.eval(&th);
    let mut cost = sum_sq(&f);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    while iterations < MAX_ITER {
        iterations += 1;
        let jac: Vec<Vec<f64>> = (0..k)
            .map(|c| {
                let h = 1e-6 * th[c].abs().max(1.0);
                let mut t2 = th.clone();
                t2[c] += h;
                prob.eval(&t2)
                    .iter()
                    .zip(&f)
                    .map(|(a, b)| (a - b) / h)
                    .collect()
            })
            .collect();
        let jtj: Vec<Vec<f64>> = (0..k)
            .map(|i| (0..k).map(|j| dot(&jac[i], &jac[j])).collect())
            .collect();
        let g: Vec<f64> = (0..k).map(|i| -dot(&jac[i], &f)).collect();
        let mut improved = None;
        while lambda < 1e12 {
            let mut a = jtj.clone();
            for (i, row) in a.iter_mut().enumerate() {
                row[i] += lambda * row[i].max(1e-12);
            }
            if let Some(step) = solve(a, g.clone()) {
                let cand: Vec<f64> = th.iter().zip(&step).map(|(a, b)| a + b).collect();
                let fc = prob.eval(&cand);
                let cc = sum_sq(&fc);
                if cc.is_finite() && cc < cost {
                    improved = Some((cand, fc, cc));
                    lambda = (lambda / 10.0).max(1e-12);
                    break;
                }
            }
            lambda *= 10.0;
        }
        let Some((cand, fc, cc)) = improved else {
            break;
        };
        let gain = cost - cc;
        th = cand;
        f = fc;
        cost = cc;
        if gain <= 1e-12 * (1.0 + cost) {
            break;
        }
    }
    let (mean, ar, ma) = prob.split(&th);
    let residuals = css_residuals(x, mean, &ar, &ma);
    let css = sum_sq(&residuals);
    if !css.is_finite() {
        return Err(ClassifyError::ModelFitFailed("sum of squares diverged".into()));
    }
    let m = residuals.len() as f64;
    let sigma2 = css / m;
    Ok(ArmaModel {
        p,
        q,
        mean,
        ar,
        ma,
        sigma2,
        residuals,
        css,
        aic: m * sigma2.max(1e-300).ln() + 2.0 * k as f64,
        degenerate: false,
        iterations,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Tries every order up to (max_p, max_q) and keeps the lowest AIC.
pub fn select_order(x: &[f64], max_p: usize, max_q: usize) -> Result<ArmaModel, ClassifyError> {
    let mut best: Option<ArmaModel> = None;
    let mut last_err = None;
    for p in 0..=max_p {
        for q in 0..=max_q {
            match fit_arma(x, p, q) {
                Ok(m) if m.degenerate => return Ok(m),
                Ok(m) => {
                    if best.as_ref().is_none_or(|b| m.aic < b.aic) {
                        best = Some(m);
                    }
                }
                Err(e) => last_err = Some(e),
            }
        }
    }
    best.ok_or_else(|| last_err.unwrap_or(ClassifyError::ModelFitFailed("no order fitted".into())))
}

impl ArmaModel {
    /// Applies the inverse filter `ar(B) / ma(B)` to `x` (no mean removal),
    /// dropping the first `p` values whose lags are unavailable. A
    /// degenerate model whitens as the identity.
    pub fn whiten(&self, x: &[f64]) -> Vec<f64> {
        if self.degenerate {
            return x.to_vec();
        }
        css_residuals(x, 0.0, &self.ar, &self.ma)
    }

    /// AR polynomial `1 - Σ ar[i] z^i` has all roots outside the unit circle.
    pub fn is_stationary(&self) -> bool {
        poly_roots_outside(&self.ar.iter().map(|c| -c).collect::<Vec<_>>())
    }

    pub fn is_invertible(&self) -> bool {
        poly_roots_outside(&self.ma)
    }
}

/// Whether `1 + Σ c[i] z^(i+1)` has no roots in the closed unit disc,
/// checked through the step-down recursion (the inverse of the map above).
fn poly_roots_outside(c: &[f64]) -> bool {
    let mut a: Vec<f64> = c.iter().map(|v| -v).collect();
    while let Some(&k) = a.last() {
        if k.abs() >= 1.0 {
            return false;
        }
        let n = a.len();
        let prev: Vec<f64> = (0..n - 1)
            .map(|j| (a[j] + k * a[n - 2 - j]) / (1.0 - k * k))
            .collect();
        a = prev;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal, Poisson};

    #[test]
    fn white_noise_fits_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pois = Poisson::new(3.0).unwrap();
        let x: Vec<f64> = (0..400).map(|_| 1.0 + pois.sample(&mut rng)).collect();
        let m = fit_arma(&x, 1, 1).unwrap();
        let (_, var) = mean_var(&x);
        assert!(m.ar[0].abs() < 0.25 && m.ma[0].abs() < 0.25, "{m:?}");
        assert!((m.sigma2 / var - 1.0).abs() < 0.1, "{} vs {var}", m.sigma2);
        assert_eq!(m.residuals.len(), 399);
    }

    #[test]
    fn recovers_ar1() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = Normal::new(0.0, 1.0).unwrap();
        let mut x = vec![0.0];
        for _ in 0..999 {
            let prev = *x.last().unwrap();
            x.push(0.6 * prev + n.sample(&mut rng));
        }
        let m = fit_arma(&x, 1, 0).unwrap();
        assert!((m.ar[0] - 0.6).abs() < 0.06, "{}", m.ar[0]);
    }

    #[test]
    fn constant_series_is_degenerate() {
        let m = fit_arma(&[1.0; 30], 1, 1).unwrap();
        assert!(m.degenerate);
        assert_eq!(m.sigma2, 0.0);
    }

    #[test]
    fn too_short() {
        assert!(matches!(
            fit_arma(&[1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 1.0], 1, 1),
            Err(ClassifyError::TooShort { .. })
        ));
    }

    #[test]
    fn order_search_prefers_ar2_for_ar2_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = Normal::new(0.0, 1.0).unwrap();
        let mut x = vec![0.0, 0.0];
        for t in 2..800 {
            let v = 0.5 * x[t - 1] - 0.4 * x[t - 2] + n.sample(&mut rng);
            x.push(v);
        }
        let m = select_order(&x, 2, 2).unwrap();
        assert!(m.p >= 2, "picked ({}, {})", m.p, m.q);
    }

    #[test]
    fn solve_small_system() {
        let x = solve(vec![vec![2.0, 1.0], vec![1.0, 3.0]], vec![3.0, 5.0]).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-12 && (x[1] - 1.4).abs() < 1e-12);
        assert!(solve(vec![vec![1.0, 1.0], vec![1.0, 1.0]], vec![1.0, 1.0]).is_none());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn fitted_models_are_stationary_and_invertible(
            x in proptest::collection::vec(0.0f64..50.0, 20..80),
            p in 0usize..=2,
            q in 0usize..=2,
        ) {
            let m = fit_arma(&x, p, q).unwrap();
            prop_assert!(m.is_stationary());
            prop_assert!(m.is_invertible());
            prop_assert_eq!(m.residuals.len(), x.len() - p);
        }
    }
}
