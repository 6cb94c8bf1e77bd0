//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Minimum-norm least-squares solution of `design * beta ~= response`.
///
/// Singular values below `max(m, n) * eps * sigma_max` are treated as zero, so
/// rank-deficient designs get the pseudo-inverse solution.
pub fn lstsq(design: &DMatrix<f64>, response: &DVector<f64>) -> Result<DVector<f64>> {
    if design.nrows() != response.len() {
        return Err(Error::InvalidArgument(format!(
            "design has {} rows but response has {}",
            design.nrows(),
            response.len()
        )));
    }
    if design.ncols() == 0 {
        return Ok(DVector::zeros(0));
    }
    let svd = design.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    let tol = sigma_max * (design.nrows().max(design.ncols()) as f64) * f64::EPSILON;
    svd.solve(response, tol.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Domain(format!("least squares failed: {e}")))
}

/// Rank of a matrix using the same tolerance as [`lstsq`].
pub fn rank(design: &DMatrix<f64>) -> usize {
    if design.is_empty() {
        return 0;
    }
    let sv = design.clone().singular_values();
    let tol = sv.max() * (design.nrows().max(design.ncols()) as f64) * f64::EPSILON;
    sv.iter().filter(|&&s| s > tol).count()
}

/// Least-squares polynomial fit; returns coefficients from constant term upward.
pub fn polyfit(x: &[f64], y: &[f64], degree: usize) -> Result<Vec<f64>> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument("polyfit: x and y lengths differ".into()));
    }
    if x.len() <= degree {
        return Err(Error::InsufficientData(format!(
            "polyfit of degree {degree} needs more than {degree} points, got {}",
            x.len()
        )));
    }
    // Centre and scale the abscissa for conditioning, then expand back.
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let scale = x
        .iter()
        .map(|v| (v - mean).abs())
        .fold(0.0_f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let design = DMatrix::from_fn(x.len(), degree + 1, |i, j| ((x[i] - mean) / scale).powi(j as i32));
    let scaled = lstsq(&design, &DVector::from_column_slice(y))?;

    // p(x) = sum_j c_j ((x - m)/s)^j ; expand binomially into powers of x.
    let mut coeffs = vec![0.0; degree + 1];
    for (j, c) in scaled.iter().enumerate() {
        let cj = c / scale.powi(j as i32);
        for k in 0..=j {
            coeffs[k] += cj * binomial(j, k) * (-mean).powi((j - k) as i32);
        }
    }
    Ok(coeffs)
}

/// Evaluate a polynomial with coefficients in ascending order.
pub fn polyval(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Population standard deviation (divides by n); 0 for fewer than two values.
pub fn pop_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}
