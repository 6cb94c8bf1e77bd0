//! Lasso and elastic net by cyclic coordinate descent, with cross-validated
//! penalty selection.
//!
//! The objective is `||y - X b||^2 / (2n) + lambda * sum_j w_j (alpha |b_j| +
//! (1 - alpha) w_j b_j^2 / 2)`, with per-feature weights `w_j` defaulting to 1.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::features::Standardizer;
use crate::error::{Error, Result};
use crate::linalg::{mean, pop_sd};

#[derive(Debug, Clone, PartialEq)]
pub struct CdOptions {
    /// Stop when no coordinate moves the fitted values by more than this
    /// fraction of the response's root mean square in a sweep.
    pub tol: f64,
    pub max_sweeps: usize,
    pub penalty_weights: Option<Vec<f64>>,
}

impl Default for CdOptions {
    fn default() -> Self {
        CdOptions {
            tol: 1e-7,
            max_sweeps: 100_000,
            penalty_weights: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CdFit {
    pub coef: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

fn soft_threshold(z: f64, g: f64) -> f64 {
    if z > g {
        z - g
    } else if z < -g {
        z + g
    } else {
        0.0
    }
}

fn weights(opts: &CdOptions, p: usize) -> Result<Vec<f64>> {
    match &opts.penalty_weights {
        Some(w) if w.len() != p => Err(Error::InvalidArgument(format!(
            "{} penalty weights for {p} features",
            w.len()
        ))),
        Some(w) if w.iter().any(|v| *v < 0.0 || !v.is_finite()) => {
            Err(Error::InvalidArgument("penalty weights must be finite and >= 0".into()))
        }
        Some(w) => Ok(w.clone()),
        None => Ok(vec![1.0; p]),
    }
}

/// Penalized objective value.
pub fn objective(x: &DMatrix<f64>, y: &[f64], beta: &[f64], lambda: f64, alpha: f64, w: &[f64]) -> f64 {
    let n = x.nrows() as f64;
    let rss: f64 = (0..x.nrows())
        .map(|i| {
            let fit: f64 = (0..x.ncols()).map(|j| x[(i, j)] * beta[j]).sum();
            (y[i] - fit).powi(2)
        })
        .sum();
    let pen: f64 = beta
        .iter()
        .zip(w)
        .map(|(b, w)| w * (alpha * b.abs() + (1.0 - alpha) * w * b * b / 2.0))
        .sum();
    rss / (2.0 * n) + lambda * pen
}

struct Problem<'a> {
    x: &'a DMatrix<f64>,
    z: Vec<f64>,
    w: Vec<f64>,
    lambda: f64,
    alpha: f64,
}

impl Problem<'_> {
    /// Minimise over coordinate `j`, keeping `resid = y - X beta` current.
    /// Returns the absolute change.
    fn update(&self, j: usize, beta: &mut [f64], resid: &mut [f64]) -> f64 {
        let n = self.x.nrows() as f64;
        let col = self.x.column(j);
        if self.z[j] == 0.0 && self.w[j] == 0.0 {
            return 0.0;
        }
        let rho = col.iter().zip(resid.iter()).map(|(a, r)| a * r).sum::<f64>() / n + self.z[j] * beta[j];
        let denom = self.z[j] + self.lambda * (1.0 - self.alpha) * self.w[j] * self.w[j];
        let new = if denom > 0.0 {
            soft_threshold(rho, self.lambda * self.alpha * self.w[j]) / denom
        } else {
            0.0
        };
        let delta = new - beta[j];
        if delta != 0.0 {
            for (r, a) in resid.iter_mut().zip(col.iter()) {
                *r -= a * delta;
            }
            beta[j] = new;
        }
        delta.abs() * self.z[j].sqrt()
    }
}

fn check(x: &DMatrix<f64>, y: &[f64], lambda: f64, alpha: f64) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::InvalidArgument("design rows and response length differ".into()));
    }
    if x.nrows() == 0 {
        return Err(Error::InsufficientData("no rows to fit".into()));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha must be in [0, 1], got {alpha}")));
    }
    Ok(())
}

fn fit_from(x: &DMatrix<f64>, y: &[f64], lambda: f64, alpha: f64, opts: &CdOptions, init: &[f64]) -> Result<CdFit> {
    check(x, y, lambda, alpha)?;
    let n = x.nrows() as f64;
    let p = x.ncols();
    let prob = Problem {
        x,
        z: (0..p).map(|j| x.column(j).norm_squared() / n).collect(),
        w: weights(opts, p)?,
        lambda,
        alpha,
    };
    let mut beta = init.to_vec();
    let mut resid: Vec<f64> = (0..x.nrows())
        .map(|i| y[i] - (0..p).map(|j| x[(i, j)] * beta[j]).sum::<f64>())
        .collect();
    let scale = (y.iter().map(|v| v * v).sum::<f64>() / n).sqrt().max(f64::MIN_POSITIVE);
    for sweep in 1..=opts.max_sweeps {
        let mut max_change: f64 = 0.0;
        for j in 0..p {
            max_change = max_change.max(prob.update(j, &mut beta, &mut resid));
        }
        if max_change < opts.tol * scale {
            return Ok(CdFit {
                coef: beta,
                sweeps: sweep,
                converged: true,
            });
        }
    }
    log::warn!("coordinate descent did not converge in {} sweeps", opts.max_sweeps);
    Ok(CdFit {
        coef: beta,
        sweeps: opts.max_sweeps,
        converged: false,
    })
}

/// Elastic net with mixing `alpha` (1 is lasso, 0 is ridge); no intercept.
pub fn elastic_net_fit(x: &DMatrix<f64>, y: &[f64], lambda: f64, alpha: f64, opts: &CdOptions) -> Result<CdFit> {
    fit_from(x, y, lambda, alpha, opts, &vec![0.0; x.ncols()])
}

pub fn lasso_fit(x: &DMatrix<f64>, y: &[f64], lambda: f64, opts: &CdOptions) -> Result<CdFit> {
    elastic_net_fit(x, y, lambda, 1.0, opts)
}

/// Smallest penalty at which every coefficient is zero (for `alpha > 0`).
pub fn lambda_max(x: &DMatrix<f64>, y: &[f64], alpha: f64) -> f64 {
    let n = x.nrows() as f64;
    (0..x.ncols())
        .map(|j| x.column(j).iter().zip(y).map(|(a, b)| a * b).sum::<f64>().abs() / n)
        .fold(0.0, f64::max)
        / alpha.max(1e-3)
}

/// Geometric grid from `lmax` down to `lmax * ratio`.
pub fn lambda_grid(lmax: f64, n: usize, ratio: f64) -> Vec<f64> {
    if n == 1 {
        return vec![lmax];
    }
    (0..n)
        .map(|i| lmax * ratio.powf(i as f64 / (n - 1) as f64))
        .collect()
}

const GRID_SIZE: usize = 60;

/// Smallest lambda on the path relative to `lambda_max`.
fn grid_ratio(n: usize, p: usize) -> f64 {
    if n < p {
        1e-2
    } else {
        1e-4
    }
}
pub const EN_ALPHAS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LambdaRule {
    /// Minimum mean CV error.
    Min,
    /// Largest lambda within one standard error of the minimum.
    OneStandardError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RegressionMethod {
    Lasso,
    ElasticNet,
}

impl RegressionMethod {
    pub fn name(self) -> &'static str {
        match self {
            RegressionMethod::Lasso => "lasso",
            RegressionMethod::ElasticNet => "elastic_net",
        }
    }

    fn alphas(self) -> Vec<f64> {
        match self {
            RegressionMethod::Lasso => vec![1.0],
            RegressionMethod::ElasticNet => EN_ALPHAS.to_vec(),
        }
    }
}

/// Standardized design and centred response of a training set.
struct Prepared {
    scaler: Standardizer,
    x: DMatrix<f64>,
    y_mean: f64,
    y: Vec<f64>,
}

fn prepare(rows: &[Vec<f64>], y: &[f64]) -> Result<Prepared> {
    let scaler = Standardizer::fit(rows)?;
    let p = scaler.means.len();
    let z: Vec<Vec<f64>> = rows.iter().map(|r| scaler.transform(r)).collect();
    let x = DMatrix::from_fn(rows.len(), p, |i, j| z[i][j]);
    let y_mean = mean(y);
    Ok(Prepared {
        scaler,
        x,
        y_mean,
        y: y.iter().map(|v| v - y_mean).collect(),
    })
}

/// A fitted linear predictor on raw feature rows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearModel {
    pub scaler: Standardizer,
    pub intercept: f64,
    /// Coefficients on the standardized scale.
    pub coef: Vec<f64>,
    pub lambda: f64,
    pub alpha: f64,
}

impl LinearModel {
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.intercept + self.scaler.transform(row).iter().zip(&self.coef).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn support(&self) -> Vec<usize> {
        self.coef
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(j, _)| j)
            .collect()
    }
}

pub fn fit_model(rows: &[Vec<f64>], y: &[f64], lambda: f64, alpha: f64, opts: &CdOptions) -> Result<LinearModel> {
    let prep = prepare(rows, y)?;
    let fit = elastic_net_fit(&prep.x, &prep.y, lambda, alpha, opts)?;
    Ok(LinearModel {
        scaler: prep.scaler,
        intercept: prep.y_mean,
        coef: fit.coef,
        lambda,
        alpha,
    })
}

/// Seeded assignment of `n` rows to `k` folds of near-equal size.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (pos, &i) in idx.iter().enumerate() {
        fold[i] = pos % k;
    }
    fold
}

fn split(rows: &[Vec<f64>], y: &[f64], fold: &[usize], f: usize, train: bool) -> (Vec<Vec<f64>>, Vec<f64>) {
    let pick: Vec<usize> = (0..rows.len()).filter(|&i| (fold[i] == f) != train).collect();
    (pick.iter().map(|&i| rows[i].clone()).collect(), pick.iter().map(|&i| y[i]).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvSelection {
    pub lambda: f64,
    pub alpha: f64,
    /// Mean CV squared error at the chosen penalty.
    pub cv_error: f64,
}

/// Choose `(lambda, alpha)` by `k`-fold CV of squared error over a shared
/// lambda grid, warm-starting along the grid.
pub fn cv_select(
    rows: &[Vec<f64>],
    y: &[f64],
    alphas: &[f64],
    k: usize,
    seed: u64,
    rule: LambdaRule,
    opts: &CdOptions,
) -> Result<CvSelection> {
    if rows.len() < k || k < 2 {
        return Err(Error::InsufficientData(format!(
            "{} rows cannot be split into {k} folds",
            rows.len()
        )));
    }
    let full = prepare(rows, y)?;
    let fold = fold_assignment(rows.len(), k, seed);
    let mut best: Option<CvSelection> = None;
    for &alpha in alphas {
        let grid = lambda_grid(lambda_max(&full.x, &full.y, alpha).max(1e-12), GRID_SIZE, grid_ratio(rows.len(), full.x.ncols()));
        // errors[f][g]
        let mut errors = vec![vec![0.0; grid.len()]; k];
        for (f, fold_err) in errors.iter_mut().enumerate() {
            let (tr, ytr) = split(rows, y, &fold, f, true);
            let (te, yte) = split(rows, y, &fold, f, false);
            let prep = prepare(&tr, &ytr)?;
            let mut beta = vec![0.0; prep.x.ncols()];
            for (g, &lambda) in grid.iter().enumerate() {
                beta = fit_from(&prep.x, &prep.y, lambda, alpha, opts, &beta)?.coef;
                let sq: f64 = te
                    .iter()
                    .zip(&yte)
                    .map(|(r, t)| {
                        let pred = prep.y_mean
                            + prep.scaler.transform(r).iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>();
                        (pred - t).powi(2)
                    })
                    .sum();
                fold_err[g] = sq / te.len() as f64;
            }
        }
        let means: Vec<f64> = (0..grid.len())
            .map(|g| mean(&errors.iter().map(|e| e[g]).collect::<Vec<_>>()))
            .collect();
        let gmin = (0..grid.len()).min_by(|&a, &b| means[a].total_cmp(&means[b])).expect("grid");
        let chosen = match rule {
            LambdaRule::Min => gmin,
            LambdaRule::OneStandardError => {
                let se = pop_sd(&errors.iter().map(|e| e[gmin]).collect::<Vec<_>>()) / ((k - 1) as f64).sqrt();
                (0..=gmin).find(|&g| means[g] <= means[gmin] + se).unwrap_or(gmin)
            }
        };
        let cand = CvSelection {
            lambda: grid[chosen],
            alpha,
            cv_error: means[chosen],
        };
        if best.as_ref().is_none_or(|b| cand.cv_error < b.cv_error) {
            best = Some(cand);
        }
    }
    best.ok_or_else(|| Error::InvalidArgument("no alpha values given".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvReport {
    pub method: RegressionMethod,
    pub k: usize,
    /// Mean absolute error over all held-out predictions.
    pub mae: f64,
    pub fold_maes: Vec<f64>,
    pub selections: Vec<CvSelection>,
}

/// Outer `k`-fold evaluation; each training fold picks its penalty by an
/// inner 3-fold CV with the one-standard-error rule.
pub fn kfold_regress(
    rows: &[Vec<f64>],
    y: &[f64],
    method: RegressionMethod,
    k: usize,
    seed: u64,
) -> Result<CvReport> {
    if rows.len() != y.len() {
        return Err(Error::InvalidArgument("one response per feature row required".into()));
    }
    if k < 2 || rows.len() < k {
        return Err(Error::InsufficientData(format!(
            "{} usable rows for {k}-fold regression",
            rows.len()
        )));
    }
    let opts = CdOptions::default();
    let fold = fold_assignment(rows.len(), k, seed);
    let mut abs_err = Vec::with_capacity(rows.len());
    let mut fold_maes = Vec::with_capacity(k);
    let mut selections = Vec::with_capacity(k);
    for f in 0..k {
        let (tr, ytr) = split(rows, y, &fold, f, true);
        let (te, yte) = split(rows, y, &fold, f, false);
        let inner_k = 3.min(tr.len());
        let sel = if inner_k >= 2 {
            cv_select(&tr, &ytr, &method.alphas(), inner_k, seed.wrapping_add(f as u64 + 1), LambdaRule::OneStandardError, &opts)?
        } else {
            CvSelection {
                lambda: f64::INFINITY,
                alpha: 1.0,
                cv_error: f64::NAN,
            }
        };
        let errs: Vec<f64> = if sel.lambda.is_finite() {
            let model = fit_model(&tr, &ytr, sel.lambda, sel.alpha, &opts)?;
            te.iter().zip(&yte).map(|(r, t)| (model.predict(r) - t).abs()).collect()
        } else {
            let m = mean(&ytr);
            yte.iter().map(|t| (m - t).abs()).collect()
        };
        fold_maes.push(mean(&errs));
        abs_err.extend(errs);
        selections.push(sel);
    }
    Ok(CvReport {
        method,
        k,
        mae: mean(&abs_err),
        fold_maes,
        selections,
    })
}

/// `response,method,cv_mae` rows.
pub fn write_regression_csv<W: std::io::Write>(out: W, rows: &[(String, CvReport)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Parse(e.to_string());
    w.write_record(["response", "method", "cv_mae"]).map_err(err)?;
    for (response, r) in rows {
        w.write_record([response.as_str(), r.method.name(), &format!("{:.6}", r.mae)])
            .map_err(err)?;
    }
    w.flush().map_err(|e| Error::Parse(e.to_string()))
}
