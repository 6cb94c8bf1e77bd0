//! Single-product sales-density forecasting.
//!
//! LVC-Sale advances the density with the logistic difference equation
//! `SD(t+1) = SD(t) [1 + r(t) (1 - SD(t)/K)]`, where the growth rate `r` is
//! predicted one week ahead by a VARX model on the six allied series. All
//! models share a rolling-window protocol: train on `window` weeks, forecast
//! the next one, slide by a week.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{lstsq, mean};
use crate::series::{carry_forward, ProductLifecycle};
use crate::varx::{self, VarxSpec};

/// Growth rate assumed at the first week.
pub const GROWTH_EPSILON: f64 = 1e-4;
/// Densities or brackets below this are treated as zero when inverting.
pub const INVERSION_FLOOR: f64 = 1e-8;

/// One logistic step, clamped to `[0, K]`.
pub fn lvc_step(sd: f64, r: f64, capacity: f64) -> f64 {
    (sd * (1.0 + r * (1.0 - sd / capacity))).clamp(0.0, capacity)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthSeries {
    /// `r(t)`; 0 where masked.
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl GrowthSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Recover `r(t)` from a density path. The final week and weeks where the
/// density or the logistic bracket vanish are masked; `r(0)` is epsilon.
pub fn invert_growth(sd: &[f64], capacity: f64) -> GrowthSeries {
    invert_growth_with(sd, &vec![0.0; sd.len()], capacity)
}

/// Growth inversion with extra crowding `pressure(t)` added to `SD(t)` in
/// the bracket (`a_ij(t) SD_j(t)` for a competing pair).
pub fn invert_growth_with(sd: &[f64], pressure: &[f64], capacity: f64) -> GrowthSeries {
    let n = sd.len();
    let mut values = vec![0.0; n];
    let mut mask = vec![false; n];
    for t in 0..n.saturating_sub(1) {
        if t == 0 {
            values[0] = GROWTH_EPSILON;
            mask[0] = true;
            continue;
        }
        let bracket = 1.0 - (sd[t] + pressure[t]) / capacity;
        if sd[t] >= INVERSION_FLOOR && bracket >= INVERSION_FLOOR {
            values[t] = (sd[t + 1] / sd[t] - 1.0) / bracket;
            mask[t] = true;
        }
    }
    GrowthSeries { values, mask }
}

/// Mean absolute error.
pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "prediction and truth lengths differ: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InsufficientData("mae of zero points".into()));
    }
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForecastEvaluation {
    pub model: String,
    /// Week index of each forecast target.
    pub targets: Vec<usize>,
    pub predictions: Vec<f64>,
    pub truths: Vec<f64>,
    pub mae: f64,
    /// Targets for which the model could not be fitted.
    pub skipped: Vec<usize>,
    /// Windows where a fallback predictor replaced the fitted model.
    pub fallbacks: usize,
}

impl ForecastEvaluation {
    pub(crate) fn new(model: &str) -> Self {
        ForecastEvaluation {
            model: model.to_string(),
            targets: Vec::new(),
            predictions: Vec::new(),
            truths: Vec::new(),
            mae: f64::NAN,
            skipped: Vec::new(),
            fallbacks: 0,
        }
    }

    pub(crate) fn push(&mut self, target: usize, pred: f64, truth: f64) {
        self.targets.push(target);
        self.predictions.push(pred);
        self.truths.push(truth);
    }

    pub(crate) fn finish(mut self) -> Result<Self> {
        self.mae = mae(&self.predictions, &self.truths)?;
        Ok(self)
    }

    pub fn n_units(&self) -> usize {
        self.predictions.len()
    }

    pub fn residuals(&self) -> Vec<f64> {
        self.predictions.iter().zip(&self.truths).map(|(p, t)| p - t).collect()
    }

    /// The same evaluation with predictions clamped to `[lo, hi]`.
    pub fn clamped(mut self, lo: f64, hi: f64) -> Result<Self> {
        self.predictions.iter_mut().for_each(|p| *p = p.clamp(lo, hi));
        self.finish()
    }
}

/// Unweighted mean of per-product MAEs.
pub fn mean_mae(evals: &[&ForecastEvaluation]) -> f64 {
    mean(&evals.iter().map(|e| e.mae).collect::<Vec<_>>())
}

pub(crate) fn check_window(len: usize, window: usize, start: usize) -> Result<()> {
    if window < 2 || len < start + window + 1 {
        return Err(Error::InsufficientData(format!(
            "series of {len} weeks is too short for a {window}-week window starting at week {start}"
        )));
    }
    Ok(())
}

/// Rolling one-step evaluation: for each target `u` in `start+window..len`,
/// `fit_predict` sees `series[u-window..u]`.
fn rolling<F>(series: &[f64], window: usize, start: usize, model: &str, mut fit_predict: F) -> Result<ForecastEvaluation>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    check_window(series.len(), window, start)?;
    let mut eval = ForecastEvaluation::new(model);
    for u in start + window..series.len() {
        match fit_predict(&series[u - window..u]) {
            Ok(p) if p.is_finite() => eval.push(u, p, series[u]),
            Ok(_) | Err(_) => {
                log::debug!("{model}: window ending at week {u} skipped");
                eval.skipped.push(u);
            }
        }
    }
    eval.finish()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BacktestConfig {
    pub window: usize,
    pub lag: usize,
    pub exog_lag: usize,
    pub capacity: f64,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        BacktestConfig {
            window: 20,
            lag: 1,
            exog_lag: 1,
            capacity: 1.0,
        }
    }
}

/// First week whose density is usable for growth inversion.
pub fn first_valid(sd: &[f64]) -> usize {
    sd.iter().position(|&v| v >= INVERSION_FLOOR).unwrap_or(sd.len())
}

/// Rolling LVC-Sale backtest on a density path with aligned exogenous series.
///
/// For target week `u`, the VARX is trained on the growth rates observable
/// from weeks `u-window..u` and predicts `r(u-1)`, which advances `SD(u-1)`.
pub fn lvc_sale_backtest(sd: &[f64], exog: &[Vec<f64>], cfg: &BacktestConfig) -> Result<ForecastEvaluation> {
    if let Some(x) = exog.iter().find(|x| x.len() != sd.len()) {
        return Err(Error::InvalidArgument(format!(
            "exogenous series has {} weeks, density has {}",
            x.len(),
            sd.len()
        )));
    }
    let start = first_valid(sd);
    check_window(sd.len(), cfg.window, start)?;
    let growth = invert_growth(sd, cfg.capacity);
    let spec = VarxSpec {
        p: cfg.lag,
        exog_lag: cfg.exog_lag,
    };
    let mut eval = ForecastEvaluation::new("LVC-Sale");
    for u in start + cfg.window..sd.len() {
        let (r, fell_back) = predict_growth(&[&growth], exog, u - cfg.window, u - 1, spec);
        eval.fallbacks += usize::from(fell_back);
        eval.push(u, lvc_step(sd[u - 1], r[0], cfg.capacity), sd[u]);
    }
    eval.finish()
}

/// Predict `r(end)` for each growth series from weeks `begin..end`. Returns
/// the predictions and whether the fallback (window mean growth) was used.
pub(crate) fn predict_growth(
    growth: &[&GrowthSeries],
    exog: &[Vec<f64>],
    begin: usize,
    end: usize,
    spec: VarxSpec,
) -> (Vec<f64>, bool) {
    let r: Vec<&[f64]> = growth.iter().map(|g| &g.values[begin..end]).collect();
    let valid: Vec<bool> = (begin..end).map(|t| growth.iter().all(|g| g.mask[t])).collect();
    let x: Vec<&[f64]> = exog.iter().map(|s| &s[begin..end]).collect();
    let xs: Vec<&[f64]> = exog.iter().map(|s| &s[begin..=end]).collect();
    let fitted = varx::fit(&r, &x, Some(&valid), spec).and_then(|m| varx::predict_one(&m, &r, &xs));
    match fitted {
        Ok(p) if p.iter().all(|v| v.is_finite()) => (p, false),
        _ => {
            let means = growth
                .iter()
                .map(|g| {
                    let ok: Vec<f64> = (begin..end).filter(|&t| g.mask[t]).map(|t| g.values[t]).collect();
                    mean(&ok)
                })
                .collect();
            (means, true)
        }
    }
}

/// The six allied series of a lifecycle with gaps carried forward.
pub fn allied_exogenous(lc: &ProductLifecycle) -> Vec<Vec<f64>> {
    lc.allied().iter().map(|s| carry_forward(s, 0.0)).collect()
}

/// LVC-Sale backtest on a product lifecycle.
pub fn lvc_sale_backtest_lifecycle(lc: &ProductLifecycle, cfg: &BacktestConfig) -> Result<ForecastEvaluation> {
    lvc_sale_backtest(&lc.sales_density.values, &allied_exogenous(lc), cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ArimaOrder {
    pub p: usize,
    pub d: usize,
    pub q: usize,
}

impl Default for ArimaOrder {
    fn default() -> Self {
        ArimaOrder { p: 1, d: 1, q: 1 }
    }
}

/// One-step ARIMA forecast from a training window (Hannan-Rissanen fit).
/// The flag reports a fallback to the pure AR model.
pub fn arima_one_step(train: &[f64], order: ArimaOrder) -> Result<(f64, bool)> {
    let mut z = train.to_vec();
    let mut lasts = Vec::with_capacity(order.d);
    for _ in 0..order.d {
        lasts.push(*z.last().ok_or_else(|| Error::InsufficientData("empty window".into()))?);
        z = z.windows(2).map(|w| w[1] - w[0]).collect();
    }
    if z.len() < order.p.max(order.q) + 2 {
        return Err(Error::InsufficientData("window too short for ARIMA order".into()));
    }
    let (zhat, fell_back) = if order.p == 0 && order.q == 0 {
        (mean(&z), false)
    } else if order.q == 0 {
        (ar_forecast(&z, order.p)?, false)
    } else {
        match arma_forecast(&z, order.p, order.q) {
            Ok(Some(v)) => (v, false),
            Ok(None) | Err(_) => (ar_forecast(&z, order.p)?, true),
        }
    };
    Ok((zhat + lasts.iter().sum::<f64>(), fell_back))
}

/// Ordinary least squares of `z_t` on `[1, z_{t-1}, .., z_{t-p}]`; returns
/// coefficients and residuals (NaN before index `p`).
fn fit_ar(z: &[f64], p: usize) -> Result<(DVector<f64>, Vec<f64>)> {
    let rows = z.len().saturating_sub(p);
    if rows < p + 2 {
        return Err(Error::InsufficientData("too few rows for AR fit".into()));
    }
    let design = DMatrix::from_fn(rows, p + 1, |r, c| if c == 0 { 1.0 } else { z[p + r - c] });
    let response = DVector::from_iterator(rows, z[p..].iter().copied());
    let beta = lstsq(&design, &response)?;
    let fitted = &design * &beta;
    let mut resid = vec![f64::NAN; z.len()];
    for r in 0..rows {
        resid[p + r] = response[r] - fitted[r];
    }
    Ok((beta, resid))
}

fn ar_forecast(z: &[f64], p: usize) -> Result<f64> {
    let (beta, _) = fit_ar(z, p)?;
    let n = z.len();
    Ok(beta[0] + (1..=p).map(|i| beta[i] * z[n - i]).sum::<f64>())
}

/// Hannan-Rissanen ARMA(p, q) forecast, `None` when the MA part is not
/// invertible.
fn arma_forecast(z: &[f64], p: usize, q: usize) -> Result<Option<f64>> {
    let n = z.len();
    let long = (p + q + 2).min(n.saturating_sub(2) / 2).max(1);
    let (_, e) = fit_ar(z, long)?;
    let first = p.max(long + q);
    let rows = n.saturating_sub(first);
    let k = 1 + p + q;
    if rows < k + 1 {
        return Err(Error::InsufficientData("too few rows for ARMA stage two".into()));
    }
    let design = DMatrix::from_fn(rows, k, |r, c| {
        let t = first + r;
        match c {
            0 => 1.0,
            c if c <= p => z[t - c],
            c => e[t - (c - p)],
        }
    });
    let response = DVector::from_iterator(rows, z[first..].iter().copied());
    let beta = lstsq(&design, &response)?;
    let theta: Vec<f64> = (0..q).map(|j| beta[1 + p + j]).collect();
    if !ma_invertible(&theta) {
        return Ok(None);
    }
    let ar: f64 = (1..=p).map(|i| beta[i] * z[n - i]).sum();
    let ma: f64 = (1..=q).map(|j| theta[j - 1] * e[n - j]).sum();
    Ok(Some(beta[0] + ar + ma))
}

/// `1 + theta_1 B + .. + theta_q B^q` has all roots outside the unit circle.
pub fn ma_invertible(theta: &[f64]) -> bool {
    let q = theta.len();
    if q == 0 {
        return true;
    }
    // eigenvalues of the companion of x^q + theta_1 x^{q-1} + .. + theta_q
    let companion = DMatrix::from_fn(q, q, |r, c| {
        if r == 0 {
            -theta[c]
        } else if r == c + 1 {
            1.0
        } else {
            0.0
        }
    });
    companion.complex_eigenvalues().iter().all(|l| l.norm() < 1.0)
}

/// Rolling ARIMA evaluation on targets `start+window..len`.
pub fn arima_forecast(series: &[f64], order: ArimaOrder, window: usize, start: usize) -> Result<ForecastEvaluation> {
    let mut fallbacks = 0;
    let mut eval = rolling(series, window, start, "ARIMA", |w| {
        let (v, fb) = arima_one_step(w, order)?;
        fallbacks += usize::from(fb);
        Ok(v)
    })?;
    eval.fallbacks = fallbacks;
    Ok(eval)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CurveFamily {
    Fourier,
    Power,
    Gaussian,
}

impl CurveFamily {
    pub const ALL: [CurveFamily; 3] = [CurveFamily::Fourier, CurveFamily::Power, CurveFamily::Gaussian];

    pub fn name(self) -> &'static str {
        match self {
            CurveFamily::Fourier => "Fourier",
            CurveFamily::Power => "Power",
            CurveFamily::Gaussian => "Gaussian",
        }
    }
}

pub const FOURIER_ORDER: usize = 2;

fn fourier_row(t: f64, period: f64) -> Vec<f64> {
    let mut row = vec![1.0];
    for k in 1..=FOURIER_ORDER {
        let w = 2.0 * PI * k as f64 * t / period;
        row.push(w.cos());
        row.push(w.sin());
    }
    row
}

/// Order-2 Fourier fit at `t = 1..=n` with period `2n`; coefficients
/// `[a0, a1, b1, a2, b2]` for `a0 + sum a_k cos(2 pi k t / P) + b_k sin(..)`.
pub fn fit_fourier(y: &[f64], period: f64) -> Result<Vec<f64>> {
    let k = 1 + 2 * FOURIER_ORDER;
    if y.len() < k {
        return Err(Error::InsufficientData("Fourier fit needs at least 5 points".into()));
    }
    let design = DMatrix::from_fn(y.len(), k, |r, c| fourier_row((r + 1) as f64, period)[c]);
    Ok(lstsq(&design, &DVector::from_column_slice(y))?.iter().copied().collect())
}

pub fn eval_fourier(coeffs: &[f64], t: f64, period: f64) -> f64 {
    fourier_row(t, period).iter().zip(coeffs).map(|(a, b)| a * b).sum()
}

/// `a t^b` fitted by least squares on `ln y = ln a + b ln t`, `t = 1..=n`.
pub fn fit_power(y: &[f64]) -> Result<(f64, f64)> {
    if y.len() < 2 {
        return Err(Error::InsufficientData("power fit needs two points".into()));
    }
    if y.iter().any(|&v| v <= 0.0) {
        return Err(Error::Domain("power fit needs strictly positive values".into()));
    }
    let design = DMatrix::from_fn(y.len(), 2, |r, c| if c == 0 { 1.0 } else { ((r + 1) as f64).ln() });
    let response = DVector::from_iterator(y.len(), y.iter().map(|v| v.ln()));
    let beta = lstsq(&design, &response)?;
    Ok((beta[0].exp(), beta[1]))
}

const GN_MAX_ITER: usize = 100;
const GN_TOL: f64 = 1e-9;

fn gaussian(theta: &[f64; 3], t: f64) -> f64 {
    theta[0] * (-((t - theta[1]) / theta[2]).powi(2)).exp()
}

fn sse(y: &[f64], theta: &[f64; 3]) -> f64 {
    y.iter()
        .enumerate()
        .map(|(i, v)| (v - gaussian(theta, (i + 1) as f64)).powi(2))
        .sum()
}

fn gauss_newton(y: &[f64], init: [f64; 3]) -> Result<[f64; 3]> {
    let mut theta = init;
    let mut cost = sse(y, &theta);
    for _ in 0..GN_MAX_ITER {
        let n = y.len();
        let mut jac = DMatrix::<f64>::zeros(n, 3);
        let mut resid = DVector::<f64>::zeros(n);
        for i in 0..n {
            let t = (i + 1) as f64;
            let u = (t - theta[1]) / theta[2];
            let e = (-u * u).exp();
            jac[(i, 0)] = e;
            jac[(i, 1)] = theta[0] * e * 2.0 * u / theta[2];
            jac[(i, 2)] = theta[0] * e * 2.0 * u * u / theta[2];
            resid[i] = y[i] - theta[0] * e;
        }
        let step = lstsq(&jac, &resid)?;
        let mut scale = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let cand = [
                theta[0] + scale * step[0],
                theta[1] + scale * step[1],
                theta[2] + scale * step[2],
            ];
            let c = sse(y, &cand);
            if cand[2] != 0.0 && c.is_finite() && c <= cost {
                let rel = step.norm() * scale / (theta.iter().map(|v| v * v).sum::<f64>().sqrt() + GN_TOL);
                let done = cost - c <= GN_TOL * (cost + GN_TOL) || rel < GN_TOL;
                theta = cand;
                cost = c;
                improved = true;
                if done {
                    return Ok(theta);
                }
                break;
            }
            scale *= 0.5;
        }
        if !improved {
            // no descent direction left: a stationary point
            return Ok(theta);
        }
    }
    if theta.iter().all(|v| v.is_finite()) {
        Ok(theta)
    } else {
        Err(Error::Domain("Gauss-Newton diverged".into()))
    }
}

/// `a exp(-((t - b)/c)^2)` at `t = 1..=n` by Gauss-Newton; a peak-based start
/// is tried first, then a moment-based one.
pub fn fit_gaussian(y: &[f64]) -> Result<[f64; 3]> {
    if y.len() < 3 {
        return Err(Error::InsufficientData("Gaussian fit needs three points".into()));
    }
    let (imax, &ymax) = y
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let above = y.iter().filter(|&&v| v >= 0.5 * ymax).count().max(1) as f64;
    let peak_init = [ymax, (imax + 1) as f64, (above / 1.665).max(1.0)];

    let w: f64 = y.iter().map(|v| v.max(0.0)).sum();
    let moment_init = if w > 0.0 {
        let m = y.iter().enumerate().map(|(i, v)| (i + 1) as f64 * v.max(0.0)).sum::<f64>() / w;
        let var = y
            .iter()
            .enumerate()
            .map(|(i, v)| ((i + 1) as f64 - m).powi(2) * v.max(0.0))
            .sum::<f64>()
            / w;
        [ymax, m, (2.0 * var).sqrt().max(1.0)]
    } else {
        [ymax, (y.len() as f64 + 1.0) / 2.0, y.len() as f64 / 2.0]
    };

    let mut best: Option<[f64; 3]> = None;
    for init in [peak_init, moment_init] {
        if let Ok(theta) = gauss_newton(y, init) {
            if best.is_none_or(|b| sse(y, &theta) < sse(y, &b)) {
                best = Some(theta);
            }
        }
    }
    best.ok_or_else(|| Error::Domain("Gaussian fit failed from every start".into()))
}

/// Rolling curve-fit evaluation; `t` runs 1..=window within each window.
pub fn curve_fit_forecast(series: &[f64], family: CurveFamily, window: usize, start: usize) -> Result<ForecastEvaluation> {
    let next = (window + 1) as f64;
    rolling(series, window, start, family.name(), |w| match family {
        CurveFamily::Fourier => {
            let period = 2.0 * window as f64;
            Ok(eval_fourier(&fit_fourier(w, period)?, next, period))
        }
        CurveFamily::Power => {
            let (a, b) = fit_power(w)?;
            Ok(a * next.powf(b))
        }
        CurveFamily::Gaussian => Ok(gaussian(&fit_gaussian(w)?, next)),
    })
}

/// Every model on one lifecycle's density, sharing targets; predictions are
/// clamped to `[0, K]`.
pub fn evaluate_lifecycle(lc: &ProductLifecycle, cfg: &BacktestConfig, order: ArimaOrder) -> Result<Vec<ForecastEvaluation>> {
    let sd = &lc.sales_density.values;
    let start = first_valid(sd);
    let mut out = vec![lvc_sale_backtest_lifecycle(lc, cfg)?];
    out.push(arima_forecast(sd, order, cfg.window, start)?.clamped(0.0, cfg.capacity)?);
    for family in CurveFamily::ALL {
        match curve_fit_forecast(sd, family, cfg.window, start) {
            Ok(e) => out.push(e.clamped(0.0, cfg.capacity)?),
            Err(e) => log::warn!("{}: {} skipped: {e}", lc.product_id, family.name()),
        }
    }
    Ok(out)
}

/// `product_id,model,n_units,mae` rows.
pub fn write_evaluation_csv<W: std::io::Write>(out: W, rows: &[(String, ForecastEvaluation)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["product_id", "model", "n_units", "mae"])
        .map_err(|e| Error::Parse(e.to_string()))?;
    for (id, e) in rows {
        w.write_record([id.as_str(), e.model.as_str(), &e.n_units().to_string(), &format!("{:.9}", e.mae)])
            .map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(())
}
