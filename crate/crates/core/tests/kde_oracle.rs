//! Diffusion KDE against values produced by an independent scipy script
//! (tests/oracles/diffusion_bandwidth.py) and against closed-form kernels.

use lifecycle_core::kde::{diffuse, estimate, select_bandwidth};
use statrs::distribution::{ContinuousCDF, Normal};

const HIST: [f64; 64] = [
    0., 0., 0., 0., 0., 0., 0., 0., 0., 0., 0., 0., 0., 0., 0., 1., 2., 3., 2., 3., 4., 6., 8., 22., 18., 16., 26., 35.,
    38., 44., 44., 42., 35., 34., 31., 22., 19., 13., 7., 10., 5., 3., 3., 1., 0., 1., 2., 0., 0., 0., 0., 0., 0., 0.,
    0., 0., 0., 0., 0., 0., 0., 0., 0., 0.,
];

const REFERENCE_T: [(f64, f64); 3] = [
    (1.0, 0.0006198226796390605),
    (2.0, 0.0004038503977021219),
    (4.0, 0.00021075398213373116),
];

fn scaled(m: f64) -> Vec<f64> {
    HIST.iter().map(|v| v * m).collect()
}

#[test]
fn bandwidth_matches_reference_solver() {
    for (mult, want) in REFERENCE_T {
        let bw = select_bandwidth(&scaled(mult), 500.0 * mult).unwrap();
        assert!((bw.t - want).abs() <= 1e-6 * want, "x{mult}: {} vs {want}", bw.t);
    }
}

#[test]
fn bandwidth_shrinks_with_sample_size() {
    let t: Vec<f64> = REFERENCE_T
        .iter()
        .map(|(m, _)| select_bandwidth(&scaled(*m), 500.0 * m).unwrap().t)
        .collect();
    assert!(t[0] > t[1] && t[1] > t[2]);
    assert!((t[0] - 6.198e-4).abs() <= 0.5 * 6.198e-4);
}

#[test]
fn density_close_to_sampling_distribution() {
    let d = estimate(&HIST, 500.0).unwrap();
    let total: f64 = d.values.iter().sum();
    assert!((total - 1.0).abs() <= 0.01);
    // draws were round(N(30, 5)), so bin j holds [j - 0.5, j + 0.5)
    let g = Normal::new(30.0, 5.0).unwrap();
    let l1: f64 = d
        .values
        .iter()
        .enumerate()
        .map(|(j, v)| (v - (g.cdf(j as f64 + 0.5) - g.cdf(j as f64 - 0.5))).abs())
        .sum();
    assert!(l1 <= 0.10, "L1 = {l1}");
}

#[test]
fn delta_diffusion_is_reflected_gaussian() {
    let m = 64;
    for (j, sigma_bins) in [(20usize, 4.0), (3, 3.0), (60, 5.0)] {
        let mut h = vec![0.0; m];
        h[j] = 1.0;
        let sigma = sigma_bins / m as f64;
        let d = diffuse(&h, sigma * sigma).unwrap();
        let g = Normal::new(0.0, sigma).unwrap();
        let x0 = (j as f64 + 0.5) / m as f64;
        let mut oracle: Vec<f64> = (0..m)
            .map(|i| {
                let (a, b) = (i as f64 / m as f64, (i + 1) as f64 / m as f64);
                (-3..=3)
                    .map(|k| {
                        let c1 = x0 + 2.0 * k as f64;
                        let c2 = -x0 + 2.0 * k as f64;
                        (g.cdf(b - c1) - g.cdf(a - c1)) + (g.cdf(b - c2) - g.cdf(a - c2))
                    })
                    .sum()
            })
            .collect();
        let s: f64 = oracle.iter().sum();
        oracle.iter_mut().for_each(|v| *v /= s);
        let sup = d.values.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(sup <= 1e-3, "delta at {j}: sup {sup}");
    }
}
