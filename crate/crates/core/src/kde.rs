//! Diffusion kernel density estimation on a weekly histogram.
//!
//! The histogram is zero-padded to a power-of-two grid, mapped onto the unit
//! interval and expanded in the cosine basis (reflecting boundaries). Diffusing
//! for time `t` damps coefficient `k` by `exp(-k^2 pi^2 t / 2)`, which is a
//! Gaussian smoothing with standard deviation `sqrt(t)` in unit-interval
//! coordinates. The diffusion time is chosen by the improved Sheather-Jones
//! fixed point.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A smoothed density over the weekly grid; values are per-week probability
/// masses summing to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityProfile {
    pub values: Vec<f64>,
    /// Diffusion time in unit-interval coordinates of the padded grid.
    pub diffusion_time: f64,
    /// Length of the padded transform grid.
    pub grid_len: usize,
    pub method: BandwidthMethod,
}

impl DensityProfile {
    /// Kernel standard deviation in weeks.
    pub fn bandwidth_weeks(&self) -> f64 {
        self.diffusion_time.sqrt() * self.grid_len as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BandwidthMethod {
    FixedPoint,
    RuleOfThumb,
    Given,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bandwidth {
    pub t: f64,
    pub method: BandwidthMethod,
}

pub fn grid_len(len: usize) -> usize {
    len.next_power_of_two().max(4)
}

/// Type-II cosine transform in the scaling used by the diffusion estimator:
/// `a_0 = sum x_j`, `a_k = 2 sum x_j cos(pi k (2j+1) / 2n)`.
pub fn dct(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let table = cos_table(n);
    (0..n)
        .map(|k| {
            let s: f64 = x
                .iter()
                .enumerate()
                .map(|(j, v)| v * table[(k * (2 * j + 1)) % (4 * n)])
                .sum();
            if k == 0 {
                s
            } else {
                2.0 * s
            }
        })
        .collect()
}

/// Inverse of [`dct`].
pub fn idct(a: &[f64]) -> Vec<f64> {
    let n = a.len();
    let table = cos_table(n);
    (0..n)
        .map(|j| {
            let s: f64 = a
                .iter()
                .enumerate()
                .map(|(k, c)| c * table[(k * (2 * j + 1)) % (4 * n)])
                .sum();
            s / n as f64
        })
        .collect()
}

// cos(pi m / 2n) for m in 0..4n
fn cos_table(n: usize) -> Vec<f64> {
    (0..4 * n).map(|m| (PI * m as f64 / (2.0 * n as f64)).cos()).collect()
}

fn padded_normalized(histogram: &[f64]) -> Result<Vec<f64>> {
    if let Some(v) = histogram.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::Domain(format!("histogram entries must be finite and >= 0, got {v}")));
    }
    let total: f64 = histogram.iter().sum();
    if total <= 0.0 {
        return Err(Error::InsufficientData("histogram has no mass".into()));
    }
    let mut data = vec![0.0; grid_len(histogram.len())];
    for (d, h) in data.iter_mut().zip(histogram) {
        *d = h / total;
    }
    Ok(data)
}

/// Improved Sheather-Jones fixed-point function `t - xi * gamma(t)`.
fn fixed_point(t: f64, n: f64, k2: &[f64], a2: &[f64]) -> f64 {
    let l = 7;
    let functional = |s: i32, time: f64| -> f64 {
        2.0 * PI.powi(2 * s)
            * k2.iter()
                .zip(a2)
                .map(|(i, a)| i.powi(s) * a * (-i * PI * PI * time).exp())
                .sum::<f64>()
    };
    let mut f = functional(l, t);
    for s in (2..l).rev() {
        let k0: f64 = (1..2 * s).step_by(2).map(f64::from).product::<f64>() / (2.0 * PI).sqrt();
        let c = (1.0 + 0.5_f64.powf(f64::from(s) + 0.5)) / 3.0;
        let time = (2.0 * c * k0 / n / f).powf(2.0 / (3.0 + 2.0 * f64::from(s)));
        f = functional(s, time);
    }
    t - (2.0 * n * PI.sqrt() * f).powf(-0.4)
}

fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    let mut f_lo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return mid;
        }
        if (f_mid < 0.0) == (f_lo < 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.abs().max(1e-300) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Choose the diffusion time for a histogram with `n` underlying counts.
///
/// Solves the improved Sheather-Jones fixed point on an expanding search
/// interval; if no sign change is found up to `t = 0.1`, falls back to the
/// Gaussian rule of thumb.
pub fn select_bandwidth(histogram: &[f64], n: f64) -> Result<Bandwidth> {
    if n < 2.0 {
        return Err(Error::InsufficientData(format!("bandwidth selection needs n >= 2, got {n}")));
    }
    if histogram.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "bandwidth selection needs at least 4 bins, got {}",
            histogram.len()
        )));
    }
    let data = padded_normalized(histogram)?;
    let a = dct(&data);
    let k2: Vec<f64> = (1..data.len()).map(|k| (k * k) as f64).collect();
    let a2: Vec<f64> = a[1..].iter().map(|c| (c / 2.0).powi(2)).collect();
    let g = |t: f64| fixed_point(t, n, &k2, &a2);

    let n_clamped = n.clamp(50.0, 1050.0);
    let mut tol = 1e-12 + 0.01 * (n_clamped - 50.0) / 1000.0;
    loop {
        let (g0, g1) = (g(0.0), g(tol));
        if g0.is_finite() && g1.is_finite() && g0 < 0.0 && g1 > 0.0 {
            let t = bisect(g, 0.0, tol);
            if t > 0.0 {
                return Ok(Bandwidth {
                    t,
                    method: BandwidthMethod::FixedPoint,
                });
            }
        }
        if tol >= 0.1 {
            break;
        }
        tol = (2.0 * tol).min(0.1);
    }
    Ok(Bandwidth {
        t: rule_of_thumb(&data, n),
        method: BandwidthMethod::RuleOfThumb,
    })
}

// Gaussian reference rule on bin centres, floored at one bin width.
fn rule_of_thumb(data: &[f64], n: f64) -> f64 {
    let len = data.len() as f64;
    let centre = |j: usize| (j as f64 + 0.5) / len;
    let mean: f64 = data.iter().enumerate().map(|(j, w)| w * centre(j)).sum();
    let var: f64 = data.iter().enumerate().map(|(j, w)| w * (centre(j) - mean).powi(2)).sum();
    let h = (4.0 / (3.0 * n)).powf(0.2) * var.sqrt();
    h.max(1.0 / len).powi(2)
}

/// Diffuse a histogram for time `t` and return weekly probability masses.
///
/// The result is cropped back to the histogram length, clipped at zero and
/// renormalized.
pub fn diffuse(histogram: &[f64], t: f64) -> Result<DensityProfile> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(format!("diffusion time must be > 0, got {t}")));
    }
    let data = padded_normalized(histogram)?;
    let grid = data.len();
    let mut a = dct(&data);
    for (k, c) in a.iter_mut().enumerate() {
        *c *= (-((k * k) as f64) * PI * PI * t / 2.0).exp();
    }
    let mut values: Vec<f64> = idct(&a).into_iter().take(histogram.len()).map(|v| v.max(0.0)).collect();
    let total: f64 = values.iter().sum();
    if total <= 0.0 {
        return Err(Error::Domain("diffused density vanished on the histogram support".into()));
    }
    values.iter_mut().for_each(|v| *v /= total);
    Ok(DensityProfile {
        values,
        diffusion_time: t,
        grid_len: grid,
        method: BandwidthMethod::Given,
    })
}

/// Select a bandwidth and diffuse.
pub fn estimate(histogram: &[f64], n: f64) -> Result<DensityProfile> {
    let bw = select_bandwidth(histogram, n)?;
    let mut profile = diffuse(histogram, bw.t)?;
    profile.method = bw.method;
    Ok(profile)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dct_roundtrip() {
        let x = [0.1, 0.5, 0.0, 2.0, 1.5, 0.25, 0.0, 3.0];
        let back = idct(&dct(&x));
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn tiny_diffusion_is_identity() {
        let h = [3.0, 0.0, 1.0, 5.0, 2.0, 0.0, 0.0, 1.0, 4.0, 2.0];
        let total: f64 = h.iter().sum();
        let d = diffuse(&h, 1e-12).unwrap();
        for (v, raw) in d.values.iter().zip(&h) {
            assert!((v - raw / total).abs() < 1e-5);
        }
    }

    #[test]
    fn long_diffusion_is_uniform() {
        let h = [0.0, 0.0, 9.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        let d = diffuse(&h, 50.0).unwrap();
        for v in &d.values {
            assert!((v - 1.0 / 8.0).abs() < 1e-12);
        }
    }

    #[test]
    fn delta_spreads_symmetrically() {
        let mut h = vec![0.0; 64];
        h[32] = 1.0;
        let d = diffuse(&h, (3.0_f64 / 64.0).powi(2)).unwrap();
        let peak = (0..64).max_by(|&a, &b| d.values[a].total_cmp(&d.values[b])).unwrap();
        assert_eq!(peak, 32);
        // symmetric about bin 32 on the bin-centre grid
        for k in 1..20 {
            assert!((d.values[32 - k] - d.values[32 + k]).abs() < 1e-12);
        }
        for w in d.values[32..].windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
    }

    #[test]
    fn single_bin_falls_back() {
        let mut h = vec![0.0; 16];
        h[5] = 2.0;
        let bw = select_bandwidth(&h, 2.0).unwrap();
        assert_eq!(bw.method, BandwidthMethod::RuleOfThumb);
        assert!(bw.t > 0.0);
    }

    #[test]
    fn insufficient_data() {
        assert!(select_bandwidth(&[1.0, 0.0, 0.0, 0.0], 1.0).is_err());
        assert!(select_bandwidth(&[1.0, 1.0, 0.0], 2.0).is_err());
    }

    proptest! {
        #[test]
        fn density_is_a_distribution(h in proptest::collection::vec(0.0f64..20.0, 4..80), t in 1e-6f64..0.5) {
            prop_assume!(h.iter().sum::<f64>() > 0.0);
            let d = diffuse(&h, t).unwrap();
            prop_assert!(d.values.iter().all(|v| *v >= 0.0));
            prop_assert!((d.values.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn scale_invariant(h in proptest::collection::vec(0.0f64..20.0, 4..40), c in 0.1f64..100.0, t in 1e-5f64..0.1) {
            prop_assume!(h.iter().sum::<f64>() > 0.0);
            let scaled: Vec<f64> = h.iter().map(|v| v * c).collect();
            let a = diffuse(&h, t).unwrap();
            let b = diffuse(&scaled, t).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn mass_preserving_before_clip(h in proptest::collection::vec(0.0f64..20.0, 4..40), t in 1e-5f64..0.1) {
            prop_assume!(h.iter().sum::<f64>() > 0.0);
            let data = padded_normalized(&h).unwrap();
            let a = dct(&data);
            prop_assert!((a[0] - 1.0).abs() < 1e-12);
            let damped0 = a[0] * (-(0.0) * PI * PI * t / 2.0).exp();
            prop_assert_eq!(damped0, a[0]);
        }
    }
}
