//! Vector autoregression with exogenous regressors.
//!
//! `y_t = a + sum_i A_i y_{t-i} + b X_{t-e} + eps_t`, where `e` is the
//! exogenous lag (1 by default). Each equation is fit by ordinary least
//! squares on the rows whose every input is valid.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::lstsq;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VarxSpec {
    pub p: usize,
    pub exog_lag: usize,
}

impl Default for VarxSpec {
    fn default() -> Self {
        VarxSpec { p: 1, exog_lag: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarxModel {
    pub n: usize,
    pub p: usize,
    pub l: usize,
    pub exog_lag: usize,
    /// Bias, length `n`.
    pub a: Vec<f64>,
    /// `lags[i][r][c]` is row `r`, column `c` of `A_{i+1}`.
    pub lags: Vec<Vec<Vec<f64>>>,
    /// `b[r][c]`, `n x l`.
    pub b: Vec<Vec<f64>>,
    /// Root-mean-square in-sample residual per equation.
    pub residual_scale: Vec<f64>,
    pub rows_used: usize,
}

impl VarxModel {
    /// A model with every coefficient zero.
    pub fn zeros(n: usize, p: usize, l: usize, exog_lag: usize) -> Self {
        VarxModel {
            n,
            p,
            l,
            exog_lag,
            a: vec![0.0; n],
            lags: vec![vec![vec![0.0; n]; n]; p],
            b: vec![vec![0.0; l]; n],
            residual_scale: vec![0.0; n],
            rows_used: 0,
        }
    }

    pub fn n_regressors(&self) -> usize {
        1 + self.n * self.p + self.l
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }
}

fn check_lengths(series: &[&[f64]], len: usize, what: &str) -> Result<()> {
    if let Some(s) = series.iter().find(|s| s.len() != len) {
        return Err(Error::InvalidArgument(format!(
            "{what} series has length {} but {len} expected",
            s.len()
        )));
    }
    Ok(())
}

/// Regressor row for target index `t`: `[1, y_{t-1}.., y_{t-p}.., X_{t-e}..]`.
fn regressors(y: &[&[f64]], x: &[&[f64]], spec: VarxSpec, t: usize) -> Vec<f64> {
    let mut row = Vec::with_capacity(1 + y.len() * spec.p + x.len());
    row.push(1.0);
    for i in 1..=spec.p {
        row.extend(y.iter().map(|s| s[t - i]));
    }
    row.extend(x.iter().map(|s| s[t - spec.exog_lag]));
    row
}

/// Target indices whose response and regressors are all valid.
fn usable_rows(len: usize, valid: Option<&[bool]>, spec: VarxSpec) -> Vec<usize> {
    let first = spec.p.max(spec.exog_lag);
    let ok = |t: usize| valid.is_none_or(|v| v[t]);
    (first..len)
        .filter(|&t| ok(t) && (1..=spec.p).all(|i| ok(t - i)) && ok(t - spec.exog_lag))
        .collect()
}

/// Fit a VARX model. `y` holds `n` response series and `x` holds `l`
/// exogenous series, all of the same length; `valid` marks usable weeks.
pub fn fit(y: &[&[f64]], x: &[&[f64]], valid: Option<&[bool]>, spec: VarxSpec) -> Result<VarxModel> {
    let n = y.len();
    if n == 0 {
        return Err(Error::InvalidArgument("no response series".into()));
    }
    if spec.p == 0 {
        return Err(Error::InvalidArgument("lag order must be at least 1".into()));
    }
    let len = y[0].len();
    check_lengths(y, len, "response")?;
    check_lengths(x, len, "exogenous")?;
    if let Some(v) = valid {
        if v.len() != len {
            return Err(Error::InvalidArgument("validity mask length mismatch".into()));
        }
    }
    let l = x.len();
    let k = 1 + n * spec.p + l;
    let rows = usable_rows(len, valid, spec);
    if rows.len() < k + 1 {
        return Err(Error::InsufficientData(format!(
            "VARX with {k} regressors needs at least {} usable rows, got {}",
            k + 1,
            rows.len()
        )));
    }

    let mut design = DMatrix::<f64>::zeros(rows.len(), k);
    for (r, &t) in rows.iter().enumerate() {
        for (c, v) in regressors(y, x, spec, t).into_iter().enumerate() {
            design[(r, c)] = v;
        }
    }

    let mut model = VarxModel::zeros(n, spec.p, l, spec.exog_lag);
    model.rows_used = rows.len();
    for eq in 0..n {
        let response = DVector::from_iterator(rows.len(), rows.iter().map(|&t| y[eq][t]));
        let beta = lstsq(&design, &response)?;
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite VARX coefficient".into()));
        }
        let resid = &response - &design * &beta;
        model.residual_scale[eq] = (resid.norm_squared() / rows.len() as f64).sqrt();
        model.a[eq] = beta[0];
        for i in 0..spec.p {
            for c in 0..n {
                model.lags[i][eq][c] = beta[1 + i * n + c];
            }
        }
        for c in 0..l {
            model.b[eq][c] = beta[1 + n * spec.p + c];
        }
    }
    Ok(model)
}

/// One-step prediction `y_{t+1}` from responses observed through `t`.
///
/// `x` must reach index `t + 1 - exog_lag`; extra trailing values are ignored.
pub fn predict_one(model: &VarxModel, y: &[&[f64]], x: &[&[f64]]) -> Result<Vec<f64>> {
    if y.len() != model.n || x.len() != model.l {
        return Err(Error::InvalidArgument(format!(
            "model expects {} responses and {} exogenous series, got {} and {}",
            model.n,
            model.l,
            y.len(),
            x.len()
        )));
    }
    let len = y.first().map_or(0, |s| s.len());
    check_lengths(y, len, "response")?;
    if len < model.p {
        return Err(Error::InvalidArgument(format!(
            "history of {len} weeks is shorter than lag order {}",
            model.p
        )));
    }
    let xi = len.checked_sub(model.exog_lag);
    if model.l > 0 && xi.is_none_or(|i| x.iter().any(|s| s.len() <= i)) {
        return Err(Error::InvalidArgument("exogenous history too short".into()));
    }
    let t = len - 1;
    Ok((0..model.n)
        .map(|eq| {
            let mut v = model.a[eq];
            for i in 0..model.p {
                for (c, s) in y.iter().enumerate() {
                    v += model.lags[i][eq][c] * s[t - i];
                }
            }
            if let Some(xi) = xi {
                for (c, s) in x.iter().enumerate() {
                    v += model.b[eq][c] * s[xi];
                }
            }
            v
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn simulate(a: f64, phi: f64, b: f64, sigma: f64, len: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let noise = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).unwrap();
        let mut y = vec![0.0; len];
        for t in 1..len {
            let e = if sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            y[t] = a + phi * y[t - 1] + b * x[t - 1] + e;
        }
        (y, x)
    }

    #[test]
    fn recovers_noisy_model() {
        for seed in 0..20 {
            let (y, x) = simulate(0.3, 0.5, 0.2, 0.01, 200, seed);
            let m = fit(&[&y], &[&x], None, VarxSpec::default()).unwrap();
            assert!((m.a[0] - 0.3).abs() < 0.05);
            assert!((m.lags[0][0][0] - 0.5).abs() < 0.05);
            assert!((m.b[0][0] - 0.2).abs() < 0.05);
        }
    }

    #[test]
    fn exact_ar1() {
        let mut y = vec![1.0];
        for t in 1..30 {
            y.push(0.1 + 0.7 * y[t - 1]);
        }
        let m = fit(&[&y], &[], None, VarxSpec::default()).unwrap();
        assert!((m.a[0] - 0.1).abs() < 1e-9);
        assert!((m.lags[0][0][0] - 0.7).abs() < 1e-9);
        let pred = predict_one(&m, &[&y[..10]], &[]).unwrap();
        assert!((pred[0] - y[10]).abs() < 1e-8);
    }

    #[test]
    fn constant_series_gets_constant_fit() {
        let y = vec![2.5; 12];
        let m = fit(&[&y], &[], None, VarxSpec::default()).unwrap();
        let pred = predict_one(&m, &[&y], &[]).unwrap();
        assert!((pred[0] - 2.5).abs() < 1e-9);
    }

    #[test]
    fn too_few_rows() {
        let y = vec![1.0, 2.0, 3.0];
        assert!(matches!(
            fit(&[&y], &[], None, VarxSpec::default()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn masked_rows_are_dropped() {
        let (mut y, x) = simulate(0.3, 0.5, 0.2, 0.0, 40, 3);
        let mut valid = vec![true; 40];
        for t in [5, 17, 18] {
            y[t] = 1e6;
            valid[t] = false;
        }
        let m = fit(&[&y], &[&x], Some(&valid), VarxSpec::default()).unwrap();
        assert!((m.lags[0][0][0] - 0.5).abs() < 1e-9);
        assert_eq!(m.rows_used, 39 - 5);
    }

    #[test]
    fn trivial_predictions() {
        let zero = VarxModel::zeros(1, 1, 0, 1);
        assert_eq!(predict_one(&zero, &[&[4.0]], &[]).unwrap(), vec![0.0]);
        let mut walk = VarxModel::zeros(1, 1, 0, 1);
        walk.lags[0][0][0] = 1.0;
        assert_eq!(predict_one(&walk, &[&[1.0, 4.0]], &[]).unwrap(), vec![4.0]);
        assert!(predict_one(&VarxModel::zeros(1, 2, 0, 1), &[&[1.0]], &[]).is_err());
    }

    #[test]
    fn two_dim_noise_free_recovery() {
        let len = 60;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..1.0)).collect();
        let (mut y1, mut y2) = (vec![0.1], vec![0.2]);
        for t in 1..len {
            let (p1, p2) = (y1[t - 1], y2[t - 1]);
            y1.push(0.05 + 0.4 * p1 - 0.1 * p2 + 0.3 * x[t - 1]);
            y2.push(-0.02 + 0.2 * p1 + 0.5 * p2 - 0.1 * x[t - 1]);
        }
        let m = fit(&[&y1, &y2], &[&x], None, VarxSpec::default()).unwrap();
        let want = [[0.05, 0.4, -0.1, 0.3], [-0.02, 0.2, 0.5, -0.1]];
        for eq in 0..2 {
            let got = [m.a[eq], m.lags[0][eq][0], m.lags[0][eq][1], m.b[eq][0]];
            for (g, w) in got.iter().zip(want[eq]) {
                assert!((g - w).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn residuals_orthogonal_to_regressors() {
        let (y, x) = simulate(0.1, 0.3, -0.4, 0.2, 80, 11);
        let spec = VarxSpec::default();
        let m = fit(&[&y], &[&x], None, spec).unwrap();
        let rows = usable_rows(y.len(), None, spec);
        let mut normal = [0.0; 3];
        for &t in &rows {
            let reg = regressors(&[&y], &[&x], spec, t);
            let pred = m.a[0] + m.lags[0][0][0] * reg[1] + m.b[0][0] * reg[2];
            for (acc, r) in normal.iter_mut().zip(&reg) {
                *acc += r * (y[t] - pred);
            }
        }
        assert!(normal.iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn contemporaneous_exogenous() {
        let len = 30;
        let x: Vec<f64> = (0..len).map(|t| (t as f64 * 0.7).sin()).collect();
        let mut y = vec![0.0];
        for t in 1..len {
            y.push(0.5 * y[t - 1] + 2.0 * x[t]);
        }
        let spec = VarxSpec { p: 1, exog_lag: 0 };
        let m = fit(&[&y], &[&x], None, spec).unwrap();
        assert!((m.b[0][0] - 2.0).abs() < 1e-9);
        let pred = predict_one(&m, &[&y[..20]], &[&x[..21]]).unwrap();
        assert!((pred[0] - y[20]).abs() < 1e-9);
    }

    #[test]
    fn json_round_trip() {
        let (y, x) = simulate(0.3, 0.5, 0.2, 0.01, 50, 1);
        let m = fit(&[&y], &[&x], None, VarxSpec::default()).unwrap();
        let back: VarxModel = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(back, m);
    }

    proptest! {
        #[test]
        fn prediction_is_linear_without_bias(
            phi in -1.0f64..1.0, b in -1.0f64..1.0,
            h1 in proptest::collection::vec(-5.0f64..5.0, 4),
            h2 in proptest::collection::vec(-5.0f64..5.0, 4),
            s in -3.0f64..3.0, u in -3.0f64..3.0,
        ) {
            let mut m = VarxModel::zeros(1, 1, 1, 1);
            m.lags[0][0][0] = phi;
            m.b[0][0] = b;
            let mix: Vec<f64> = h1.iter().zip(&h2).map(|(p, q)| s * p + u * q).collect();
            let p1 = predict_one(&m, &[&h1], &[&h1]).unwrap()[0];
            let p2 = predict_one(&m, &[&h2], &[&h2]).unwrap()[0];
            let pm = predict_one(&m, &[&mix], &[&mix]).unwrap()[0];
            prop_assert!((pm - (s * p1 + u * p2)).abs() < 1e-9);
        }

        #[test]
        fn noise_free_recovery(a in -0.5f64..0.5, phi in -0.9f64..0.9, b in -1.0f64..1.0, seed in 0u64..100) {
            let (y, x) = simulate(a, phi, b, 0.0, 60, seed);
            let m = fit(&[&y], &[&x], None, VarxSpec::default()).unwrap();
            prop_assert!((m.a[0] - a).abs() < 1e-8);
            prop_assert!((m.lags[0][0][0] - phi).abs() < 1e-8);
            prop_assert!((m.b[0][0] - b).abs() < 1e-8);
        }
    }
}
